"""
Continuous refinement of a facility's orbit by differential evolution.

After the discrete problem fixes which clients a facility serves, its
location x = [a, e, i, raan] is re-optimized in continuous space. Every
candidate is priced online: launch ratios from the transfer geometry and
fresh guided-transfer runs for each allocated client, so the objective is
expensive and gradient-free. DE/rand/1/bin with the incumbent injected into
the initial population guarantees the result never falls behind the seed.

The RNG lives only in the single-threaded driver; population members are
evaluated in parallel without consuming randomness, so results depend only
on the seed value, not the worker count.
"""

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .cost import ServicerParams, round_trip_cost
from .elements import KeplerianElements, UnitSystem
from .launch import InadmissibleSlotError, LaunchParams, mass_ratio
from .qlaw import QlawParams

PENALTY_FACTOR = 10.0   # infeasible fitness = seed objective x this
_STAGNATION_RTOL = 1e-9


@dataclass(frozen=True)
class DeParams:
    """Differential evolution settings (rand/1/bin)."""
    population: int = 50
    mutation: float = 0.9
    crossover: float = 0.9
    generations: int = 60
    patience: int = 15
    seed: int = 0

    def __post_init__(self):
        if self.population < 4:
            raise ValueError("population must be at least 4 for rand/1")
        if not 0.0 < self.mutation <= 2.0 or not 0.0 <= self.crossover <= 1.0:
            raise ValueError("bad mutation/crossover settings")
        if self.generations < 1 or self.patience < 1:
            raise ValueError("generations and patience must be positive")


@dataclass
class DeOutcome:
    best_x: np.ndarray
    best_fitness: float
    best_payload: object
    history: list            # (gen, best_fitness, best_x copy, best_payload)
    generations_run: int
    evaluations: int


def de_minimize(func, bounds, x0, de: DeParams, workers: int = 1) -> DeOutcome:
    """DE/rand/1/bin with a deterministic, injected starting point.

    Args:
        func: x -> (fitness, payload); payload rides along with the best.
        bounds: (dim, 2) box; trial vectors are clipped into it.
        x0: individual injected into generation 0 (the returned best is
            never worse than it).
        workers: parallel evaluations per generation; has no effect on the
            result because randomness is consumed only by this driver.
    """
    bounds = np.asarray(bounds, dtype=np.float64)
    dim = bounds.shape[0]
    lo, hi = bounds[:, 0], bounds[:, 1]
    x0 = np.asarray(x0, dtype=np.float64)
    if np.any(x0 < lo - 1e-12) or np.any(x0 > hi + 1e-12):
        raise ValueError("x0 outside bounds")
    rng = np.random.default_rng(de.seed)

    def evaluate_all(xs):
        if workers <= 1:
            return [func(x) for x in xs]
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(func, xs))

    pop = lo + rng.random((de.population, dim)) * (hi - lo)
    pop[0] = np.clip(x0, lo, hi)
    results = evaluate_all(pop)
    fitness = np.array([r[0] for r in results])
    n_evals = de.population

    best_idx = int(np.argmin(fitness))
    best_x = pop[best_idx].copy()
    best_f = float(fitness[best_idx])
    best_payload = results[best_idx][1]

    history = [(0, best_f, best_x.copy(), best_payload)]
    stagnant = 0
    gen = 0
    for gen in range(1, de.generations + 1):
        trials = np.empty_like(pop)
        for i in range(de.population):
            choices = np.array([r for r in range(de.population) if r != i])
            r1, r2, r3 = rng.choice(choices, size=3, replace=False)
            mutant = pop[r1] + de.mutation * (pop[r2] - pop[r3])
            np.clip(mutant, lo, hi, out=mutant)
            cross = rng.random(dim) < de.crossover
            cross[rng.integers(dim)] = True
            trials[i] = np.where(cross, mutant, pop[i])
        trial_results = evaluate_all(trials)
        n_evals += de.population

        prev_best = best_f
        for i in range(de.population):
            tf = float(trial_results[i][0])
            if tf <= fitness[i]:
                pop[i] = trials[i]
                fitness[i] = tf
                if tf < best_f:
                    best_f = tf
                    best_x = trials[i].copy()
                    best_payload = trial_results[i][1]
        history.append((gen, best_f, best_x.copy(), best_payload))
        if prev_best - best_f > _STAGNATION_RTOL * max(1.0, abs(prev_best)):
            stagnant = 0
        else:
            stagnant += 1
        if stagnant >= de.patience:
            break

    return DeOutcome(best_x=best_x, best_fitness=best_f,
                     best_payload=best_payload, history=history,
                     generations_run=gen, evaluations=n_evals)


# ---------------------------------------------------------------------------
# facility refinement on top of the generic driver
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RefineContext:
    """Physics and architecture context shared by all evaluations."""
    servicer: ServicerParams
    qlaw_params: QlawParams
    launch: LaunchParams
    units: UnitSystem
    m_d_dry_kg: float
    m_s_l_kg: float
    lam: float = 1.0
    rho: float = 1.0


@dataclass
class RefineProblem:
    """One facility's refinement: fixed client set, box bounds, DE settings."""
    clients: list                # allocated clients (KeplerianElements)
    demand: np.ndarray           # trips per allocated client
    seed_slot: KeplerianElements
    bounds: np.ndarray           # (4, 2) box on [a_du, e, i_rad, raan_rad]
    de: DeParams = field(default_factory=DeParams)

    def __post_init__(self):
        self.demand = np.asarray(self.demand, dtype=np.float64)
        self.bounds = np.asarray(self.bounds, dtype=np.float64)
        if self.bounds.shape != (4, 2):
            raise ValueError("bounds must be (4, 2)")
        if np.any(self.bounds[:, 0] > self.bounds[:, 1]):
            raise ValueError("lower bounds exceed upper bounds")
        x0 = slot_to_vector(self.seed_slot)
        if (np.any(x0 < self.bounds[:, 0] - 1e-12)
                or np.any(x0 > self.bounds[:, 1] + 1e-12)):
            raise ValueError("seed slot outside bounds")


@dataclass
class Evaluation:
    emleo_kg: float
    wet_kg: float
    feasible: bool


@dataclass
class RefineResult:
    best_x: np.ndarray
    best_slot: KeplerianElements
    best: Evaluation
    seed: Evaluation
    history: np.ndarray     # rows: gen, best_emleo_kg, a, e, i_deg, raan_deg, wet_kg
    generations_run: int
    evaluations: int


def slot_to_vector(slot: KeplerianElements) -> np.ndarray:
    return np.array([slot.a, slot.e, slot.i, slot.raan])


def vector_to_slot(x, argp: float = 0.0) -> KeplerianElements:
    return KeplerianElements(a=float(x[0]), e=float(x[1]), i=float(x[2]),
                             raan=float(x[3]), argp=argp, ta=0.0)


def refine_objective(x, prob: RefineProblem, ctx: RefineContext) -> Evaluation:
    """Price a candidate location: launch ratios plus fresh transfer runs.

    Returns the facility's total launch-equivalent mass, its wet mass, and
    a feasibility flag (admissible orbit, all transfers converged, wet mass
    within the launch vehicle limit). Pure and deterministic.
    """
    try:
        slot = vector_to_slot(x, argp=prob.seed_slot.argp)
    except ValueError:
        return Evaluation(math.inf, math.inf, False)
    try:
        ratios = mass_ratio(ctx.units.du_to_km(slot.a), slot.e, ctx.launch,
                            ctx.units.mu_km3_s2)
    except InadmissibleSlotError:
        return Evaluation(math.inf, math.inf, False)

    emleo = ctx.lam * ctx.m_d_dry_kg * ratios.z
    wet = ctx.m_d_dry_kg * ratios.z_d
    for client, dem in zip(prob.clients, prob.demand):
        rt = round_trip_cost(client, slot, ctx.servicer, ctx.qlaw_params,
                             ctx.units)
        if not rt.feasible:
            return Evaluation(math.inf, math.inf, False)
        emleo += ctx.rho * (dem * (rt.dm_total_kg + ctx.m_s_l_kg)) * ratios.z
        wet += dem * (rt.dm_total_kg + ctx.m_s_l_kg) * ratios.z_d
    return Evaluation(emleo, wet, wet <= ctx.launch.m_l_max_kg)


def refine(prob: RefineProblem, ctx: RefineContext,
           workers: int = 1) -> RefineResult:
    """Run DE on one facility, seeded with (and never worse than) the
    incumbent location.

    Raises:
        ValueError: the seed location itself is infeasible.
    """
    seed_x = slot_to_vector(prob.seed_slot)
    seed_eval = refine_objective(seed_x, prob, ctx)
    if not seed_eval.feasible:
        raise ValueError("seed location is infeasible; nothing to refine")
    penalty = PENALTY_FACTOR * seed_eval.emleo_kg

    def func(x):
        ev = refine_objective(x, prob, ctx)
        return (ev.emleo_kg if ev.feasible else penalty), ev

    out = de_minimize(func, prob.bounds, seed_x, prob.de, workers=workers)

    history = np.array([
        [float(gen), ev.emleo_kg, x[0], x[1],
         math.degrees(x[2]), math.degrees(x[3]), ev.wet_kg]
        for gen, _, x, ev in out.history
    ])
    return RefineResult(
        best_x=out.best_x,
        best_slot=vector_to_slot(out.best_x, argp=prob.seed_slot.argp),
        best=out.best_payload,
        seed=seed_eval,
        history=history,
        generations_run=out.generations_run,
        evaluations=out.evaluations,
    )


def write_refine_csv(path, history: np.ndarray):
    """Per-generation report: gen,best_emleo_kg,best_a,best_e,best_i,best_raan,wet_kg."""
    header = "gen,best_emleo_kg,best_a,best_e,best_i,best_raan,wet_kg"
    np.savetxt(path, history, delimiter=",", header=header, comments="",
               fmt=["%d"] + ["%.17g"] * 6)
