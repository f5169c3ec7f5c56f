"""
Allocation cost matrix: round-trip servicer propellant between slots and clients.

Entry (i, j) is the propellant for a sortie from slot j that delivers a
payload to client i and returns dry. Because the vehicle's mass sets its
acceleration, each leg's propellant is solved self-consistently: the inbound
(return) leg first, establishing the mass the vehicle must still carry home,
then the outbound leg on top of it. The self-consistency is a fixed point on
leg propellant, solved by forward propagation; it contracts quickly because
the flow rate is constant.

Pair evaluations are independent and pure, so the builder can fan them out
across worker threads without affecting the result. Finished matrices are
cached on disk keyed by a hash of every input that can change them.
"""

import csv
import hashlib
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .elements import G0, KeplerianElements, UnitSystem
from .qlaw import QlawParams, QlawStateError, Spacecraft, propagate_transfer

log = logging.getLogger(__name__)

FIXED_POINT_TOL_KG = 0.1
FIXED_POINT_MAX_ITERS = 10

CSV_HEADER = ["client_idx", "slot_idx", "ctilde_kg", "tof_out_days",
              "tof_in_days", "feasible"]


@dataclass(frozen=True)
class ServicerParams:
    """Servicer vehicle constants shared by every sortie."""
    thrust_n: float
    isp_s: float
    dry_mass_kg: float
    payload_kg: float

    def __post_init__(self):
        if min(self.thrust_n, self.isp_s, self.dry_mass_kg) <= 0.0:
            raise ValueError("thrust, isp, and dry mass must be positive")
        if self.payload_kg < 0.0:
            raise ValueError("payload mass must be nonnegative")


@dataclass(frozen=True)
class RoundTripCost:
    """One sortie: total propellant plus per-leg transfer times."""
    dm_total_kg: float
    tof_out_days: float
    tof_in_days: float
    feasible: bool


@dataclass
class CostMatrix:
    """clients x slots table of round-trip costs."""
    dm: np.ndarray        # (k, n) propellant, nan where infeasible
    tof_out: np.ndarray   # (k, n) days
    tof_in: np.ndarray    # (k, n) days
    feasible: np.ndarray  # (k, n) bool
    scenario_hash: str

    @property
    def n_clients(self) -> int:
        return self.dm.shape[0]

    @property
    def n_slots(self) -> int:
        return self.dm.shape[1]

    def entry(self, i: int, j: int) -> RoundTripCost:
        return RoundTripCost(float(self.dm[i, j]), float(self.tof_out[i, j]),
                             float(self.tof_in[i, j]), bool(self.feasible[i, j]))


def _solve_leg(start, end, base_mass_kg, servicer, qlaw_params, units):
    """Fixed point on leg propellant: find dm such that flying start -> end
    at initial mass base + dm consumes dm (within FIXED_POINT_TOL_KG).

    Only a residual-verified iterate is ever returned, so re-simulating a
    recorded leg at its recorded start mass reproduces the recorded
    propellant within the tolerance. The transfer time is recorded through
    the constant flow rate (dm = mdot * dt holds exactly). Returns
    (dm_kg, tof_days) or None.
    """
    mdot = servicer.thrust_n / (G0 * servicer.isp_s)
    tol = FIXED_POINT_TOL_KG
    v = 0.0
    v_prev = None
    g_prev = None
    f_max = 0.0
    for _ in range(FIXED_POINT_MAX_ITERS):
        sc = Spacecraft(servicer.thrust_n, servicer.isp_s, base_mass_kg + v)
        try:
            res = propagate_transfer(start, end, sc, qlaw_params, units)
        except QlawStateError:
            return None
        if not res.converged:
            return None
        g = res.dm_kg - v
        if abs(g) <= tol:
            return v, v / (mdot * 86400.0)
        f_max = max(f_max, res.dm_kg)
        # secant step on the residual: handles both the monotone-contractive
        # regime (short legs) and the oscillatory near-marginal regime of
        # long legs, where plain iteration rings for dozens of rounds
        v_next = res.dm_kg
        if g_prev is not None and abs(g - g_prev) > 1e-9:
            cand = v - g * (v - v_prev) / (g - g_prev)
            if 0.0 <= cand <= 2.0 * f_max + 10.0:
                v_next = cand
        v_prev, g_prev = v, g
        v = v_next
    return None


def round_trip_cost(client: KeplerianElements, slot: KeplerianElements,
                    servicer: ServicerParams, qlaw_params: QlawParams,
                    units: UnitSystem) -> RoundTripCost:
    """Round-trip propellant from slot to client, solved backward in time.

    The inbound leg (client -> slot, arriving dry) is solved first; the
    outbound leg (slot -> client) then carries the payload plus everything
    the return leg needs. Infeasibility (either leg unconverged within the
    transfer-time cap, or a non-contracting mass loop) is flagged, not raised.
    """
    inbound = _solve_leg(client, slot, servicer.dry_mass_kg,
                         servicer, qlaw_params, units)
    if inbound is None:
        return RoundTripCost(math.nan, math.nan, math.nan, False)
    dm_in, tof_in = inbound

    base_out = servicer.dry_mass_kg + dm_in + servicer.payload_kg
    outbound = _solve_leg(slot, client, base_out, servicer, qlaw_params, units)
    if outbound is None:
        return RoundTripCost(math.nan, math.nan, math.nan, False)
    dm_out, tof_out = outbound

    return RoundTripCost(dm_out + dm_in, tof_out, tof_in, True)


def _scenario_payload(clients, slots, servicer: ServicerParams,
                      qlaw_params: QlawParams, units: UnitSystem,
                      skip_slots=()) -> dict:
    return {
        "clients": [list(c.as_array()) for c in clients],
        "slots": [list(s.as_array()) for s in slots],
        "servicer": [servicer.thrust_n, servicer.isp_s,
                     servicer.dry_mass_kg, servicer.payload_kg],
        "qlaw": list(qlaw_params.packed()) + list(qlaw_params.tol_array())
                + [qlaw_params.max_tof_days, qlaw_params.dt_frac],
        "units": [units.du_km, units.mu_km3_s2],
        "skip_slots": sorted(int(j) for j in skip_slots),
    }


def cost_scenario_hash(clients, slots, servicer: ServicerParams,
                       qlaw_params: QlawParams, units: UnitSystem,
                       skip_slots=()) -> str:
    """Hash of everything the matrix depends on: client and slot elements,
    vehicle constants, guidance parameters, integrator settings, units."""
    payload = _scenario_payload(clients, slots, servicer, qlaw_params, units,
                                skip_slots)
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def build_cost_matrix(clients, slots, servicer: ServicerParams,
                      qlaw_params: QlawParams, units: UnitSystem,
                      workers: int = 1, skip_slots=(), cache_dir=None):
    """Evaluate every (client, slot) pair, or load a cached result.

    Args:
        workers: worker threads for pair evaluation; the result is
            identical for any worker count.
        skip_slots: slot indices to skip (e.g. launch-inadmissible slots);
            their entries are present but flagged infeasible.
        cache_dir: directory for the per-hash cache file; None disables.

    Returns:
        (CostMatrix, cache_hit)
    """
    scenario_hash = cost_scenario_hash(clients, slots, servicer, qlaw_params,
                                       units, skip_slots)
    if cache_dir is not None:
        cached = _load_cache(Path(cache_dir), scenario_hash,
                             len(clients), len(slots))
        if cached is not None:
            return cached, True

    k, n = len(clients), len(slots)
    if k == 0 or n == 0:
        raise ValueError("clients and slots must be nonempty")
    skip = frozenset(int(j) for j in skip_slots)

    dm = np.full((k, n), np.nan)
    tof_out = np.full((k, n), np.nan)
    tof_in = np.full((k, n), np.nan)
    feas = np.zeros((k, n), dtype=bool)

    def evaluate(pair):
        i, j = pair
        return i, j, round_trip_cost(clients[i], slots[j], servicer,
                                     qlaw_params, units)

    pairs = [(i, j) for i in range(k) for j in range(n) if j not in skip]
    if workers <= 1:
        results = map(evaluate, pairs)
    else:
        pool = ThreadPoolExecutor(max_workers=workers)
        results = pool.map(evaluate, pairs)
    for i, j, rt in results:
        dm[i, j] = rt.dm_total_kg
        tof_out[i, j] = rt.tof_out_days
        tof_in[i, j] = rt.tof_in_days
        feas[i, j] = rt.feasible
    if workers > 1:
        pool.shutdown()

    matrix = CostMatrix(dm, tof_out, tof_in, feas, scenario_hash)
    if cache_dir is not None:
        echo = {
            "servicer": {"thrust_n": servicer.thrust_n,
                         "isp_s": servicer.isp_s,
                         "dry_mass_kg": servicer.dry_mass_kg,
                         "payload_kg": servicer.payload_kg},
            "qlaw": {"w_oe": list(qlaw_params.w_oe), "w_p": qlaw_params.w_p,
                     "sigma": qlaw_params.sigma, "nu": qlaw_params.nu,
                     "zeta": qlaw_params.zeta, "k_rp": qlaw_params.k_rp,
                     "r_p_min": qlaw_params.r_p_min,
                     "tol": list(qlaw_params.tol),
                     "max_tof_days": qlaw_params.max_tof_days,
                     "dt_frac": qlaw_params.dt_frac},
            "units": {"du_km": units.du_km, "mu_km3_s2": units.mu_km3_s2},
            "n_skipped_slots": len(skip),
        }
        save_cost_matrix(matrix, _cache_paths(Path(cache_dir), scenario_hash)[0],
                         sidecar=True, parameter_echo=echo)
    return matrix, False


def _cache_paths(cache_dir: Path, scenario_hash: str):
    stem = cache_dir / f"cost_{scenario_hash[:16]}"
    return stem.with_suffix(".csv"), stem.with_suffix(".meta.json")


def _load_cache(cache_dir: Path, scenario_hash: str, k: int, n: int):
    csv_path, meta_path = _cache_paths(cache_dir, scenario_hash)
    if not (csv_path.exists() and meta_path.exists()):
        return None
    try:
        meta = json.loads(meta_path.read_text())
        if meta["scenario_hash"] != scenario_hash:
            raise ValueError("hash mismatch")
        matrix = load_cost_matrix(csv_path, scenario_hash)
        if matrix.dm.shape != (k, n):
            raise ValueError(f"shape mismatch {matrix.dm.shape} != {(k, n)}")
        return matrix
    except Exception as exc:  # corrupt cache: recompute
        log.warning("cost cache %s unusable (%s); recomputing", csv_path, exc)
        return None


def save_cost_matrix(matrix: CostMatrix, path, sidecar: bool = False,
                     parameter_echo: dict = None):
    """Write the matrix CSV (and optionally its metadata sidecar).

    Row order and float formatting are fixed, so identical matrices produce
    byte-identical files.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_HEADER)
        k, n = matrix.dm.shape
        for i in range(k):
            for j in range(n):
                writer.writerow([
                    i, j, f"{matrix.dm[i, j]:.17g}",
                    f"{matrix.tof_out[i, j]:.17g}",
                    f"{matrix.tof_in[i, j]:.17g}",
                    "true" if matrix.feasible[i, j] else "false",
                ])
    if sidecar:
        meta = {
            "scenario_hash": matrix.scenario_hash,
            "n_clients": int(matrix.dm.shape[0]),
            "n_slots": int(matrix.dm.shape[1]),
            "n_feasible": int(matrix.feasible.sum()),
            "parameters": parameter_echo or {},
        }
        path.with_suffix(".meta.json").write_text(
            json.dumps(meta, indent=2, sort_keys=True) + "\n")


def load_cost_matrix(path, scenario_hash: str = "") -> CostMatrix:
    """Read a matrix CSV written by :func:`save_cost_matrix`."""
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != CSV_HEADER:
            raise ValueError(f"unexpected cost CSV header {header}")
        rows = list(reader)
    if not rows:
        raise ValueError("empty cost matrix file")
    k = max(int(r[0]) for r in rows) + 1
    n = max(int(r[1]) for r in rows) + 1
    if len(rows) != k * n:
        raise ValueError(f"expected {k * n} rows, found {len(rows)}")
    dm = np.full((k, n), np.nan)
    tof_out = np.full((k, n), np.nan)
    tof_in = np.full((k, n), np.nan)
    feas = np.zeros((k, n), dtype=bool)
    for r in rows:
        i, j = int(r[0]), int(r[1])
        dm[i, j] = float(r[2])
        tof_out[i, j] = float(r[3])
        tof_in[i, j] = float(r[4])
        feas[i, j] = r[5] == "true"
    return CostMatrix(dm, tof_out, tof_in, feas, scenario_hash)
