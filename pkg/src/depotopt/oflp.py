"""
Orbital facility location problem: model construction and exact solution.

The decision model is a binary linear program. Opening slot j costs its
dry-mass launch ratio; serving client i from slot j costs the demanded
round trips' propellant-plus-payload, also scaled by the slot's launch
ratio. Each client is served by exactly one open slot, and every open
slot's wet mass (depot-burn ratio applied) must fit on the launch vehicle.

solve() is a best-first branch-and-bound over the usage variables (then the
allocation variables if any remain fractional), bounded by the continuous
LP relaxation, with incumbents produced by a cheapest-open-slot repair that
respects the launch-mass side constraint. brute_force() is the size-guarded
exhaustive oracle used to certify the solver.
"""

import heapq
import time
from dataclasses import dataclass

import numpy as np
from numba import njit
from scipy.optimize import linprog
from scipy.sparse import csr_matrix

from .launch import LaunchParams

_EPS_INT = 1e-6       # integrality detection on LP solutions
_CAP_SLACK = 1e-9     # absolute feasibility slack on the wet-mass constraint


class InfeasibleModelError(Exception):
    """The model cannot serve every client."""

    def __init__(self, message, client=None):
        super().__init__(message)
        self.client = client


class InvariantViolation(AssertionError):
    """An internal consistency check failed; indicates a bug."""


@dataclass
class OflpModel:
    """Binary program data. Frozen (client, slot) pairs carry no variable."""
    f: np.ndarray          # (n,) facility opening cost, kg EMLEO
    c: np.ndarray          # (k, n) allocation cost, kg EMLEO; inf if frozen
    wet_alloc: np.ndarray  # (k, n) allocation wet-mass term, kg; inf if frozen
    wet_fac: np.ndarray    # (n,) facility wet-mass term, kg
    m_l_max: float
    frozen: np.ndarray     # (k, n) bool
    lam: float
    rho: float
    slot_ids: np.ndarray   # (n,) original slot indices behind each column

    @property
    def n_slots(self) -> int:
        return self.f.shape[0]

    @property
    def n_clients(self) -> int:
        return self.c.shape[0]


@dataclass
class OflpSolution:
    """Optimal (or best-found) facility selection and client allocation.

    Slot references are original slot indices (model columns translated
    back through slot_ids).
    """
    status: str            # "optimal" | "feasible" | "infeasible"
    objective: float
    gap: float
    open_slots: tuple
    assignment: dict       # client index -> slot index
    wet_mass: dict         # slot index -> kg
    nodes: int
    lp_solves: int
    time_s: float
    bound: float


def build_model(cost_matrix, z: np.ndarray, z_d: np.ndarray,
                slot_admissible: np.ndarray, m_d_dry_kg: float,
                m_s_l_kg: float, demand, lp: LaunchParams,
                lam: float = 1.0, rho: float = 1.0) -> OflpModel:
    """Assemble the binary program from the cost matrix and launch ratios.

    Inadmissible slots are dropped (their original indices are kept in
    slot_ids); infeasible cost entries freeze the corresponding allocation
    variable, as do pairs that could not fit on the launch vehicle even as
    a facility's only client.

    Args:
        demand: trips per client, scalar or length-k sequence.
        lam, rho: scalar multipliers on facility and allocation objective
            coefficients (the wet-mass terms are never scaled).

    Raises:
        InfeasibleModelError: some client has no feasible slot at all.
    """
    k = cost_matrix.n_clients
    dem = np.broadcast_to(np.asarray(demand, dtype=np.float64), (k,))
    if np.any(dem <= 0.0):
        raise ValueError("demand must be positive")
    if m_d_dry_kg <= 0.0 or m_s_l_kg < 0.0:
        raise ValueError("bad architecture masses")
    if lam <= 0.0 or rho <= 0.0:
        raise ValueError("multipliers must be positive")

    keep = np.flatnonzero(np.asarray(slot_admissible, dtype=bool))
    if keep.size == 0:
        raise InfeasibleModelError("no admissible slots")
    zs = z[keep]
    zds = z_d[keep]
    ctilde = cost_matrix.dm[:, keep]
    feas = cost_matrix.feasible[:, keep]

    f = lam * m_d_dry_kg * zs
    trip = dem[:, None] * (ctilde + m_s_l_kg)   # kg brought per allocation
    c = rho * trip * zs[None, :]
    wet_alloc = trip * zds[None, :]
    wet_fac = m_d_dry_kg * zds

    frozen = ~feas
    # a pair that cannot fit even alone can never be selected
    frozen |= wet_fac[None, :] + wet_alloc > lp.m_l_max_kg + _CAP_SLACK
    c = np.where(frozen, np.inf, c)
    wet_alloc = np.where(frozen, np.inf, wet_alloc)

    for i in range(k):
        if frozen[i].all():
            raise InfeasibleModelError(
                f"client {i} has no feasible slot", client=i)
    if np.any(f < 0.0) or np.any(c[~frozen] < 0.0):
        raise InvariantViolation("negative cost coefficient")

    return OflpModel(f=f, c=c, wet_alloc=wet_alloc, wet_fac=wet_fac,
                     m_l_max=lp.m_l_max_kg, frozen=frozen, lam=lam, rho=rho,
                     slot_ids=keep)


def objective_value(model: OflpModel, open_slots, assignment) -> float:
    """Canonical objective evaluation (fixed summation order), in model-local
    slot indices. Both the solver and the oracle report through this."""
    total = 0.0
    for j in sorted(open_slots):
        total += model.f[j]
    for i in range(model.n_clients):
        total += model.c[i, assignment[i]]
    return total


def _wet_loads(model: OflpModel, open_slots, assignment):
    loads = {j: model.wet_fac[j] for j in open_slots}
    for i in range(model.n_clients):
        loads[assignment[i]] += model.wet_alloc[i, assignment[i]]
    return loads


def _check_solution(model: OflpModel, open_slots, assignment):
    """Feasibility of a candidate (used slots opened, capacities respected)."""
    for i in range(model.n_clients):
        j = assignment[i]
        if j not in open_slots or model.frozen[i, j]:
            return False
    loads = _wet_loads(model, open_slots, assignment)
    return all(load <= model.m_l_max + _CAP_SLACK for load in loads.values())


def _repair(model: OflpModel, y_hint):
    """Assign each client to its cheapest open slot with remaining capacity,
    opening the cheapest extra slot when none of the hinted ones fits.

    Returns (open_slots, assignment) or None. Deterministic.
    """
    open_set = set(int(j) for j in np.flatnonzero(y_hint >= 0.5))
    cap = {j: model.m_l_max - model.wet_fac[j] for j in open_set}
    assignment = {}
    for i in range(model.n_clients):
        best_j, best_c = -1, np.inf
        for j in sorted(open_set):
            if model.frozen[i, j]:
                continue
            if model.wet_alloc[i, j] <= cap[j] + _CAP_SLACK and model.c[i, j] < best_c:
                best_j, best_c = j, model.c[i, j]
        if best_j < 0:
            # open the cheapest additional slot able to take this client
            for j in range(model.n_slots):
                if j in open_set or model.frozen[i, j]:
                    continue
                if model.wet_alloc[i, j] > model.m_l_max - model.wet_fac[j] + _CAP_SLACK:
                    continue
                if model.f[j] + model.c[i, j] < best_c:
                    best_j, best_c = j, model.f[j] + model.c[i, j]
            if best_j < 0:
                return None
            open_set.add(best_j)
            cap[best_j] = model.m_l_max - model.wet_fac[best_j]
        assignment[i] = best_j
        cap[best_j] -= model.wet_alloc[i, best_j]
    used = set(assignment.values())
    return used, assignment


class _LpRelaxation:
    """LP relaxation of the model with per-node variable fixing."""

    def __init__(self, model: OflpModel):
        self.model = model
        k, n = model.n_clients, model.n_slots
        self.xcols = {}
        for i in range(k):
            for j in range(n):
                if not model.frozen[i, j]:
                    self.xcols[(i, j)] = n + len(self.xcols)
        nvar = n + len(self.xcols)
        self.nvar = nvar

        obj = np.zeros(nvar)
        obj[:n] = model.f
        for (i, j), col in self.xcols.items():
            obj[col] = model.c[i, j]
        self.obj = obj

        rows, cols, vals = [], [], []
        beq = np.ones(k)
        for (i, j), col in self.xcols.items():
            rows.append(i)
            cols.append(col)
            vals.append(1.0)
        self.a_eq = csr_matrix((vals, (rows, cols)), shape=(k, nvar))

        rows, cols, vals, bub = [], [], [], []
        r = 0
        for (i, j), col in self.xcols.items():  # X_ij - Y_j <= 0
            rows += [r, r]
            cols += [col, j]
            vals += [1.0, -1.0]
            bub.append(0.0)
            r += 1
        for j in range(n):                      # wet mass <= m_l_max
            rows.append(r)
            cols.append(j)
            vals.append(model.wet_fac[j])
            for i in range(k):
                if not model.frozen[i, j]:
                    rows.append(r)
                    cols.append(self.xcols[(i, j)])
                    vals.append(model.wet_alloc[i, j])
            bub.append(model.m_l_max)
            r += 1
        self.a_ub = csr_matrix((vals, (rows, cols)), shape=(r, nvar))
        self.b_ub = np.array(bub)
        self.b_eq = beq

    def solve(self, fix_y, fix_x):
        """Solve the relaxation with the given 0/1 fixings.

        Returns (bound, y, x_dict) or None when infeasible.
        """
        bounds = [(0.0, 1.0)] * self.nvar
        for j, v in fix_y.items():
            bounds[j] = (float(v), float(v))
        for (i, j), v in fix_x.items():
            bounds[self.xcols[(i, j)]] = (float(v), float(v))
        res = linprog(self.obj, A_ub=self.a_ub, b_ub=self.b_ub,
                      A_eq=self.a_eq, b_eq=self.b_eq, bounds=bounds,
                      method="highs")
        if res.status == 2:
            return None
        if res.status != 0:
            raise InvariantViolation(f"LP relaxation failed: {res.message}")
        y = res.x[:self.model.n_slots]
        x = {key: res.x[col] for key, col in self.xcols.items()}
        return res.fun, y, x


def solve(model: OflpModel, max_nodes: int = 200_000,
          time_limit_s: float = None, node_log: list = None) -> OflpSolution:
    """Solve the binary program to proven optimality by branch-and-bound.

    Branches on the most fractional usage variable first (ties to the larger
    opening cost), falling back to allocation variables once usage is
    integral. Exhausting the node or time budget returns the best incumbent
    with its honest gap instead of a proof.

    Args:
        node_log: optional list collecting (bound, incumbent) per node.
    """
    t0 = time.perf_counter()
    lp = _LpRelaxation(model)
    inc_obj = np.inf
    inc_sol = None
    lp_solves = 0
    nodes = 0

    def consider(open_slots, assignment):
        nonlocal inc_obj, inc_sol
        if not _check_solution(model, open_slots, assignment):
            return
        val = objective_value(model, open_slots, assignment)
        if val < inc_obj:
            inc_obj = val
            inc_sol = (tuple(sorted(open_slots)), dict(assignment))

    counter = 0
    heap = [(-np.inf, counter, {}, {})]
    budget_exhausted = False
    while heap:
        if inc_sol is not None and heap[0][0] >= inc_obj - _prune_eps(inc_obj):
            break  # proven: no outstanding node can improve the incumbent
        if nodes >= max_nodes or (
                time_limit_s is not None
                and time.perf_counter() - t0 > time_limit_s):
            budget_exhausted = True
            break
        parent_bound, _, fix_y, fix_x = heapq.heappop(heap)
        nodes += 1

        sol = lp.solve(fix_y, fix_x)
        lp_solves += 1
        if sol is None:
            continue
        bound, y, x = sol
        if node_log is not None:
            node_log.append((parent_bound, bound, inc_obj))
        if inc_sol is not None and bound >= inc_obj - _prune_eps(inc_obj):
            continue

        repaired = _repair(model, y)
        if repaired is not None:
            consider(*repaired)

        jy = _most_fractional_y(model, y, fix_y)
        if jy is None:
            key = _most_fractional_x(model, x, fix_x)
            if key is None:
                # fully integral relaxation: candidate solution
                open_slots = set(int(j) for j in np.flatnonzero(y > 0.5))
                assignment = {}
                for (i, j), v in x.items():
                    if v > 0.5:
                        assignment[i] = j
                used = set(assignment.values())
                consider(used, assignment)
                continue
            for v in (1, 0):
                counter += 1
                child_x = dict(fix_x)
                child_x[key] = v
                heapq.heappush(heap, (bound, counter, fix_y, child_x))
        else:
            for v in (1, 0):
                counter += 1
                child_y = dict(fix_y)
                child_y[jy] = v
                heapq.heappush(heap, (bound, counter, child_y, fix_x))

    elapsed = time.perf_counter() - t0
    best_outstanding = heap[0][0] if heap else np.inf
    if inc_sol is None:
        status = "unknown" if budget_exhausted else "infeasible"
        return OflpSolution(status=status, objective=np.inf, gap=np.inf,
                            open_slots=(), assignment={}, wet_mass={},
                            nodes=nodes, lp_solves=lp_solves, time_s=elapsed,
                            bound=best_outstanding)

    open_local, assign_local = inc_sol
    proven = not budget_exhausted and (
        not heap or best_outstanding >= inc_obj - _prune_eps(inc_obj))
    gap = 0.0 if proven else max(
        0.0, (inc_obj - best_outstanding) / max(abs(inc_obj), 1e-12))
    loads = _wet_loads(model, open_local, assign_local)
    _validate_solution(model, open_local, assign_local, loads)
    ids = model.slot_ids
    return OflpSolution(
        status="optimal" if proven else "feasible",
        objective=inc_obj,
        gap=gap,
        open_slots=tuple(int(ids[j]) for j in open_local),
        assignment={i: int(ids[j]) for i, j in sorted(assign_local.items())},
        wet_mass={int(ids[j]): float(w) for j, w in sorted(loads.items())},
        nodes=nodes,
        lp_solves=lp_solves,
        time_s=elapsed,
        bound=best_outstanding if not proven else inc_obj,
    )


def _prune_eps(incumbent: float) -> float:
    return 1e-9 * max(1.0, abs(incumbent))


def _most_fractional_y(model, y, fix_y):
    best, score = None, (_EPS_INT, -np.inf, 0)
    for j in range(model.n_slots):
        if j in fix_y:
            continue
        frac = min(y[j], 1.0 - y[j])
        cand = (frac, model.f[j], -j)
        if frac > _EPS_INT and cand > score:
            best, score = j, cand
    return best


def _most_fractional_x(model, x, fix_x):
    best, score = None, (_EPS_INT, -np.inf, 0, 0)
    for (i, j), v in x.items():
        if (i, j) in fix_x:
            continue
        frac = min(v, 1.0 - v)
        cand = (frac, model.c[i, j], -i, -j)
        if frac > _EPS_INT and cand > score:
            best, score = (i, j), cand
    return best


def _validate_solution(model, open_slots, assignment, loads):
    if set(assignment.keys()) != set(range(model.n_clients)):
        raise InvariantViolation("not every client is assigned")
    for i, j in assignment.items():
        if j not in open_slots:
            raise InvariantViolation(f"client {i} assigned to closed slot {j}")
        if model.frozen[i, j]:
            raise InvariantViolation(f"client {i} assigned to frozen pair")
    for j, load in loads.items():
        if load > model.m_l_max + _CAP_SLACK:
            raise InvariantViolation(f"slot {j} exceeds launch mass: {load}")


# ---------------------------------------------------------------------------
# exhaustive oracle
# ---------------------------------------------------------------------------

BRUTE_MAX_SLOTS = 12
BRUTE_MAX_CLIENTS = 8


@njit(cache=True)
def _best_assignment(c_sub, wet_sub, caps):
    """Exhaustive best assignment of all clients to the given open slots,
    filtered by remaining wet-mass capacity. Returns (cost, assignment)."""
    k, s = c_sub.shape
    best_cost = np.inf
    best = np.full(k, -1, np.int64)
    assign = np.zeros(k, np.int64)
    used = np.zeros(s)
    n_codes = 1
    for _ in range(k):
        n_codes *= s
    for code in range(n_codes):
        rem = code
        cost = 0.0
        for j in range(s):
            used[j] = 0.0
        ok = True
        for i in range(k):
            t = rem % s
            rem //= s
            if not np.isfinite(c_sub[i, t]):
                ok = False
                break
            used[t] += wet_sub[i, t]
            if used[t] > caps[t] + _CAP_SLACK:
                ok = False
                break
            cost += c_sub[i, t]
            if cost >= best_cost:
                ok = False
                break
            assign[i] = t
        if ok:
            best_cost = cost
            for i in range(k):
                best[i] = assign[i]
    return best_cost, best


def brute_force(model: OflpModel) -> OflpSolution:
    """Exhaustive enumeration over every slot subset and every client
    assignment. Size-guarded test oracle; agrees with solve() exactly."""
    n, k = model.n_slots, model.n_clients
    if n > BRUTE_MAX_SLOTS or k > BRUTE_MAX_CLIENTS:
        raise ValueError(
            f"brute_force limited to {BRUTE_MAX_SLOTS} slots and "
            f"{BRUTE_MAX_CLIENTS} clients, got n={n}, k={k}")
    t0 = time.perf_counter()
    caps_full = model.m_l_max - model.wet_fac

    best_obj = np.inf
    best = None
    for mask in range(1, 1 << n):
        subset = [j for j in range(n) if mask >> j & 1]
        fsum = 0.0
        for j in subset:
            fsum += model.f[j]
        if fsum >= best_obj:
            continue
        cols = np.array(subset)
        cost, assign = _best_assignment(
            np.ascontiguousarray(model.c[:, cols]),
            np.ascontiguousarray(model.wet_alloc[:, cols]),
            np.ascontiguousarray(caps_full[cols]))
        if not np.isfinite(cost):
            continue
        total = fsum + cost
        if total < best_obj:
            best_obj = total
            best = (subset, {i: subset[assign[i]] for i in range(k)})

    elapsed = time.perf_counter() - t0
    if best is None:
        return OflpSolution(status="infeasible", objective=np.inf, gap=np.inf,
                            open_slots=(), assignment={}, wet_mass={},
                            nodes=0, lp_solves=0, time_s=elapsed, bound=np.inf)
    open_slots, assignment = best
    used = sorted(set(assignment.values()))
    obj = objective_value(model, used, assignment)
    loads = _wet_loads(model, used, assignment)
    ids = model.slot_ids
    return OflpSolution(
        status="optimal", objective=obj, gap=0.0,
        open_slots=tuple(int(ids[j]) for j in used),
        assignment={i: int(ids[j]) for i, j in assignment.items()},
        wet_mass={int(ids[j]): float(w) for j, w in sorted(loads.items())},
        nodes=1 << n, lp_solves=0, time_s=elapsed, bound=obj)


def write_lp(model: OflpModel, path):
    """Dump the model in LP text format for cross-checking with other solvers."""
    lines = ["Minimize", " obj:"]
    terms = []
    for j in range(model.n_slots):
        terms.append(f" + {model.f[j]:.17g} Y{j}")
    for i in range(model.n_clients):
        for j in range(model.n_slots):
            if not model.frozen[i, j]:
                terms.append(f" + {model.c[i, j]:.17g} X{i}_{j}")
    lines[-1] += "".join(terms)
    lines.append("Subject To")
    for i in range(model.n_clients):
        cols = [f"X{i}_{j}" for j in range(model.n_slots)
                if not model.frozen[i, j]]
        lines.append(f" assign{i}: " + " + ".join(cols) + " = 1")
    for i in range(model.n_clients):
        for j in range(model.n_slots):
            if not model.frozen[i, j]:
                lines.append(f" link{i}_{j}: X{i}_{j} - Y{j} <= 0")
    for j in range(model.n_slots):
        terms = [f"{model.wet_fac[j]:.17g} Y{j}"]
        for i in range(model.n_clients):
            if not model.frozen[i, j]:
                terms.append(f"{model.wet_alloc[i, j]:.17g} X{i}_{j}")
        lines.append(f" wet{j}: " + " + ".join(terms)
                     + f" <= {model.m_l_max:.17g}")
    lines.append("Binaries")
    names = [f"Y{j}" for j in range(model.n_slots)]
    names += [f"X{i}_{j}" for i in range(model.n_clients)
              for j in range(model.n_slots) if not model.frozen[i, j]]
    lines.append(" " + " ".join(names))
    lines.append("End")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
