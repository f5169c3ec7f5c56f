"""
depotopt: optimal placement of on-orbit servicing depots.

Pipeline: generate candidate slots, price round-trip low-thrust transfers
to every client with a Lyapunov feedback controller, price depot delivery
with a Hohmann launch model, solve the resulting facility location binary
program exactly, then refine each open facility's orbit in continuous space.
"""

from .elements import (G0, MU_EARTH, KeplerianElements, MeeAState, UnitSystem,
                       auxiliaries, kep_to_mee, load_constellation, mee_to_kep)
from .qlaw import (QlawParams, QlawStateError, Spacecraft, TransferResult,
                   control_angles, lyapunov_q, max_rates, propagate_transfer,
                   q_partials, vop_matrices)
from .launch import (InadmissibleSlotError, LaunchParams, MassRatios, emleo,
                     hohmann_dvs, mass_ratio, ratio_table)
from .slots import GridSpec, generate_slots
from .cost import (CostMatrix, RoundTripCost, ServicerParams,
                   build_cost_matrix, round_trip_cost)
from .oflp import (InfeasibleModelError, OflpModel, OflpSolution, brute_force,
                   build_model, solve)
from .refine import (DeParams, RefineContext, RefineProblem, RefineResult,
                     de_minimize, refine, refine_objective)
from .scenario import Scenario, load_scenario

__version__ = "0.1.0"
