"""
Scenario-driven command-line pipeline.

Subcommands:
    transfer    fly one guided transfer between element sets
    costmatrix  build (or load from cache) the client x slot cost matrix
    solve       assemble and exactly solve the facility location program
    sweep       re-solve over architecture-parameter combinations
    refine      continuously re-optimize each open facility's orbit

Exit codes: 0 success (including unconverged-but-reported transfers),
1 usage/configuration error, 2 infeasible model, 3 internal invariant
violation.
"""

import argparse
import dataclasses
import itertools
import json
import logging
import math
import sys
import time
from pathlib import Path

import numpy as np
import yaml

from .cost import build_cost_matrix, cost_scenario_hash
from .elements import KeplerianElements
from .launch import ratio_table, write_z_contour_csv
from .oflp import (InfeasibleModelError, InvariantViolation, OflpSolution,
                   build_model, solve, write_lp)
from .qlaw import QlawStateError, Spacecraft, propagate_transfer, write_trace_csv
from .refine import RefineContext, RefineProblem, refine, write_refine_csv
from .scenario import SWEEP_AXES, Scenario, load_scenario, refine_bounds
from .slots import generate_slots, write_grid_csv

log = logging.getLogger("depotopt")

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_INFEASIBLE = 2
EXIT_INTERNAL = 3


class _Parser(argparse.ArgumentParser):
    """argparse that reports usage problems with exit code 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        sys.exit(EXIT_USAGE)


# ---------------------------------------------------------------------------
# shared pipeline pieces
# ---------------------------------------------------------------------------

def _parse_elements(text: str) -> KeplerianElements:
    """Parse 'a_du,e,i_deg,raan_deg,argp_deg[,ta_deg]'."""
    parts = [float(v) for v in text.split(",")]
    if len(parts) not in (5, 6):
        raise ValueError(
            f"expected a_du,e,i_deg,raan_deg,argp_deg[,ta_deg], got {text!r}")
    return KeplerianElements.from_degrees(*parts)


def _prepare_matrix(scn: Scenario, servicer, workers, force=False):
    """Slots, launch ratios, and the cost matrix (cached on disk)."""
    slots = generate_slots(scn.grid)
    z, z_d, admissible = ratio_table(slots, scn.launch, scn.units)
    skip = [int(j) for j in np.flatnonzero(~admissible)]
    cache_dir = scn.output_dir / "cache"
    cache_dir.mkdir(parents=True, exist_ok=True)
    if force:
        chash = cost_scenario_hash(scn.client_elements(), slots, servicer,
                                   scn.qlaw, scn.units, skip)
        for stale in cache_dir.glob(f"cost_{chash[:16]}.*"):
            stale.unlink()
    matrix, hit = build_cost_matrix(
        scn.client_elements(), slots, servicer, scn.qlaw, scn.units,
        workers=workers, skip_slots=skip, cache_dir=cache_dir)
    return slots, z, z_d, admissible, matrix, hit


def _solve_model(scn: Scenario, matrix, z, z_d, admissible, *,
                 demand, m_d_dry, lam, rho, servicer):
    model = build_model(matrix, z, z_d, admissible, m_d_dry,
                        servicer.payload_kg, demand, scn.launch,
                        lam=lam, rho=rho)
    return model, solve(model, max_nodes=scn.max_nodes)


def _solution_dict(scn: Scenario, slots, sol: OflpSolution, matrix, *,
                   demand, m_s_dry, m_d_dry, lam, rho) -> dict:
    ids = scn.client_ids()
    facilities = []
    for fac_no, j in enumerate(sorted(sol.open_slots), start=1):
        slot = slots[j]
        clients = [ids[i] for i, jj in sol.assignment.items() if jj == j]
        facilities.append({
            "facility": fac_no,
            "slot_idx": int(j),
            "a_du": slot.a,
            "e": slot.e,
            "i_deg": math.degrees(slot.i),
            "raan_deg": math.degrees(slot.raan),
            "argp_deg": math.degrees(slot.argp),
            "wet_mass_kg": sol.wet_mass[j],
            "n_clients": len(clients),
            "clients": clients,
        })
    return {
        "scenario": scn.name,
        "scenario_hash": scn.scenario_hash,
        "cost_hash": matrix.scenario_hash,
        "status": sol.status,
        "objective_kg": sol.objective,
        "gap": sol.gap,
        "n_facilities": len(sol.open_slots),
        "parameters": {
            "demand": demand,
            "m_s_dry_kg": m_s_dry,
            "m_d_dry_kg": m_d_dry,
            "lambda": lam,
            "rho": rho,
            # rho has no physical reading beyond a scalar on allocation cost;
            # recorded so downstream consumers know how the objective scaled
            "multiplier_semantics": "lambda scales facility opening cost, "
                                    "rho scales allocation cost; "
                                    "objective only, never wet mass",
        },
        "facilities": facilities,
        "assignment": {ids[i]: int(j) for i, j in sol.assignment.items()},
        "solve_stats": {"nodes": sol.nodes, "lp_solves": sol.lp_solves,
                        "time_s": sol.time_s, "bound": sol.bound},
    }


def _print_solution(doc: dict):
    print(f"status={doc['status']} objective_kg={doc['objective_kg']:.3f} "
          f"gap={doc['gap']:.2e} facilities={doc['n_facilities']} "
          f"nodes={doc['solve_stats']['nodes']} "
          f"time_s={doc['solve_stats']['time_s']:.2f}")
    header = f"{'fac':>3} {'slot':>6} {'a_du':>7} {'e':>5} {'i_deg':>6} " \
             f"{'raan_deg':>8} {'wet_kg':>9} {'clients':>7}"
    print(header)
    for fac in doc["facilities"]:
        print(f"{fac['facility']:>3} {fac['slot_idx']:>6} {fac['a_du']:>7.3f} "
              f"{fac['e']:>5.2f} {fac['i_deg']:>6.2f} {fac['raan_deg']:>8.2f} "
              f"{fac['wet_mass_kg']:>9.1f} {fac['n_clients']:>7}")


def _write_json(path: Path, doc: dict):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_transfer(args) -> int:
    scn = load_scenario(args.scenario)
    start = _parse_elements(getattr(args, "from"))
    target = _parse_elements(args.to)
    mass = args.mass if args.mass is not None else (
        scn.servicer.dry_mass_kg + scn.servicer.payload_kg)
    sc = Spacecraft(scn.servicer.thrust_n, scn.servicer.isp_s, mass)
    res = propagate_transfer(start, target, sc, scn.qlaw, scn.units,
                             record=args.trace is not None)
    print(f"tof_days={res.tof_days:.6f} dm_kg={res.dm_kg:.6f} "
          f"converged={'true' if res.converged else 'false'}")
    if args.trace is not None:
        trace_path = Path(args.trace)
        trace_path.parent.mkdir(parents=True, exist_ok=True)
        write_trace_csv(trace_path, res.trace)
        _write_json(trace_path.with_suffix(".meta.json"),
                    {"scenario_hash": scn.scenario_hash,
                     "from": getattr(args, "from"), "to": args.to,
                     "mass_kg": mass})
        print(f"trace written to {trace_path}")
    return EXIT_OK


def cmd_costmatrix(args) -> int:
    scn = load_scenario(args.scenario)
    workers = args.workers if args.workers is not None else scn.workers
    t0 = time.perf_counter()
    slots, z, z_d, admissible, matrix, hit = _prepare_matrix(
        scn, scn.servicer, workers, force=args.force)
    elapsed = time.perf_counter() - t0
    if hit:
        print(f"cache hit {matrix.scenario_hash}")
    else:
        print(f"built cost matrix {matrix.scenario_hash} "
              f"({workers} workers, {elapsed:.1f} s)")
    out = scn.output_dir
    out.mkdir(parents=True, exist_ok=True)
    write_grid_csv(out / "grid.csv", slots)
    write_z_contour_csv(out / "z_contour.csv", slots, z, z_d, admissible)
    for name in ("grid.csv", "z_contour.csv"):
        _write_json((out / name).with_suffix(".meta.json"),
                    {"scenario_hash": scn.scenario_hash, "source": name})
    n_feas = int(matrix.feasible.sum())
    print(f"clients={matrix.n_clients} slots={matrix.n_slots} "
          f"feasible_entries={n_feas}/{matrix.dm.size}")
    print(f"cache file {scn.output_dir / 'cache'}/"
          f"cost_{matrix.scenario_hash[:16]}.csv")
    return EXIT_OK


def cmd_solve(args) -> int:
    scn = load_scenario(args.scenario)
    workers = args.workers if args.workers is not None else scn.workers
    slots, z, z_d, admissible, matrix, hit = _prepare_matrix(
        scn, scn.servicer, workers)
    if hit:
        print(f"cache hit {matrix.scenario_hash}")
    try:
        model, sol = _solve_model(
            scn, matrix, z, z_d, admissible, demand=scn.demand,
            m_d_dry=scn.m_d_dry_kg, lam=scn.lam, rho=scn.rho,
            servicer=scn.servicer)
    except InfeasibleModelError as exc:
        if exc.client is not None:
            raise InfeasibleModelError(
                f"client {scn.client_ids()[exc.client]} has no feasible slot",
                client=exc.client) from None
        raise
    if sol.status in ("infeasible", "unknown"):
        print(f"model {sol.status}: no facility placement can serve every "
              f"client under the launch-mass cap")
        return EXIT_INFEASIBLE
    doc = _solution_dict(scn, slots, sol, matrix, demand=scn.demand,
                         m_s_dry=scn.servicer.dry_mass_kg,
                         m_d_dry=scn.m_d_dry_kg, lam=scn.lam, rho=scn.rho)
    out = Path(args.out) if args.out else (
        scn.output_dir / f"solution_{scn.scenario_hash[:16]}.json")
    _write_json(out, doc)
    if args.lp is not None:
        write_lp(model, args.lp)
        print(f"LP model written to {args.lp}")
    _print_solution(doc)
    print(f"solution written to {out}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    scn = load_scenario(args.scenario)
    axes = [axis.strip() for axis in args.over.split(",") if axis.strip()]
    for axis in axes:
        if axis not in SWEEP_AXES:
            raise ValueError(f"unknown sweep axis {axis!r}; "
                             f"choose from {', '.join(SWEEP_AXES)}")
        if axis not in scn.sweep:
            raise ValueError(f"scenario defines no sweep values for {axis!r}")
    if not axes:
        raise ValueError("no sweep axes given")
    workers = args.workers if args.workers is not None else scn.workers

    grids = [scn.sweep[axis] for axis in axes]
    rows = []
    for combo in itertools.product(*grids):
        point = dict(zip(axes, combo))
        servicer = scn.servicer
        if "m_s_dry_kg" in point:
            servicer = dataclasses.replace(
                servicer, dry_mass_kg=float(point["m_s_dry_kg"]))
        slots, z, z_d, admissible, matrix, _ = _prepare_matrix(
            scn, servicer, workers)
        demand = point.get("demand", scn.demand)
        m_d_dry = float(point.get("m_d_dry_kg", scn.m_d_dry_kg))
        lam = float(point.get("lambda", scn.lam))
        rho = float(point.get("rho", scn.rho))
        try:
            _, sol = _solve_model(scn, matrix, z, z_d, admissible,
                                  demand=demand, m_d_dry=m_d_dry, lam=lam,
                                  rho=rho, servicer=servicer)
            status, objective, n_fac = sol.status, sol.objective, len(sol.open_slots)
        except InfeasibleModelError:
            status, objective, n_fac = "infeasible", math.inf, 0
        rows.append([*combo, objective, n_fac, status])
        print(f"sweep {point} -> {status} objective={objective:.1f} "
              f"facilities={n_fac}")

    out = Path(args.out) if args.out else (
        scn.output_dir / f"sweep_{'_'.join(axes)}.csv")
    out.parent.mkdir(parents=True, exist_ok=True)
    with out.open("w", newline="") as fh:
        fh.write(",".join(axes + ["objective_kg", "n_facilities", "status"]) + "\n")
        for row in rows:
            fh.write(",".join(
                f"{v:.17g}" if isinstance(v, float) else str(v)
                for v in row) + "\n")
    _write_json(out.with_suffix(".meta.json"),
                {"scenario_hash": scn.scenario_hash, "axes": axes,
                 "n_points": len(rows)})
    print(f"sweep written to {out}")
    return EXIT_OK


def cmd_refine(args) -> int:
    scn = load_scenario(args.scenario)
    doc = json.loads(Path(args.solution).read_text())
    if doc.get("scenario_hash") != scn.scenario_hash:
        raise ValueError(
            "solution was produced from a different scenario "
            f"(hash {doc.get('scenario_hash', '?')[:16]} != "
            f"{scn.scenario_hash[:16]})")
    workers = args.workers if args.workers is not None else scn.workers
    params = doc["parameters"]
    servicer = dataclasses.replace(
        scn.servicer, dry_mass_kg=float(params["m_s_dry_kg"]))
    de = scn.de if args.seed is None else dataclasses.replace(
        scn.de, seed=args.seed)
    ctx = RefineContext(
        servicer=servicer, qlaw_params=scn.qlaw, launch=scn.launch,
        units=scn.units, m_d_dry_kg=float(params["m_d_dry_kg"]),
        m_s_l_kg=scn.servicer.payload_kg, lam=float(params["lambda"]),
        rho=float(params["rho"]))
    bounds = refine_bounds(scn)
    slots = generate_slots(scn.grid)
    by_id = {sid: kep for sid, kep in scn.clients}

    out_dir = Path(args.out) if args.out else scn.output_dir
    out_dir.mkdir(parents=True, exist_ok=True)
    report = []
    total_seed = 0.0
    total_best = 0.0
    for fac in doc["facilities"]:
        seed_slot = slots[fac["slot_idx"]]
        clients = [by_id[cid] for cid in fac["clients"]]
        demand = np.full(len(clients), float(params["demand"]))
        prob = RefineProblem(clients=clients, demand=demand,
                             seed_slot=seed_slot, bounds=bounds, de=de)
        result = refine(prob, ctx, workers=workers)
        if result.best.emleo_kg > result.seed.emleo_kg * (1 + 1e-12):
            raise InvariantViolation("refinement degraded the objective")
        csv_path = out_dir / f"refine_facility{fac['facility']}.csv"
        write_refine_csv(csv_path, result.history)
        reduction = 100.0 * (result.seed.wet_kg - result.best.wet_kg) \
            / result.seed.wet_kg
        slot = result.best_slot
        report.append({
            "facility": fac["facility"],
            "seed": {"a_du": seed_slot.a, "e": seed_slot.e,
                     "i_deg": math.degrees(seed_slot.i),
                     "raan_deg": math.degrees(seed_slot.raan),
                     "emleo_kg": result.seed.emleo_kg,
                     "wet_kg": result.seed.wet_kg},
            "refined": {"a_du": slot.a, "e": slot.e,
                        "i_deg": math.degrees(slot.i),
                        "raan_deg": math.degrees(slot.raan),
                        "emleo_kg": result.best.emleo_kg,
                        "wet_kg": result.best.wet_kg},
            "wet_reduction_pct": reduction,
            "generations_run": result.generations_run,
            "evaluations": result.evaluations,
            "report_csv": csv_path.name,
        })
        total_seed += result.seed.emleo_kg
        total_best += result.best.emleo_kg
        print(f"facility {fac['facility']}: emleo {result.seed.emleo_kg:.1f}"
              f" -> {result.best.emleo_kg:.1f} kg, wet {result.seed.wet_kg:.1f}"
              f" -> {result.best.wet_kg:.1f} kg ({reduction:+.2f}% reduction)")

    summary = {
        "scenario_hash": scn.scenario_hash,
        "solution": str(args.solution),
        "seed_objective_kg": total_seed,
        "refined_objective_kg": total_best,
        "de": {"population": de.population, "mutation": de.mutation,
               "crossover": de.crossover, "generations": de.generations,
               "patience": de.patience, "seed": de.seed},
        "facilities": report,
    }
    out = out_dir / "refined.json"
    _write_json(out, summary)
    print(f"refined total emleo {total_seed:.1f} -> {total_best:.1f} kg; "
          f"report written to {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="depotopt",
                     description="On-orbit servicing depot placement toolkit")
    parser.add_argument("-v", "--verbose", action="store_true",
                        help="log library internals")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("transfer", parents=[], help="fly one guided transfer")
    p.add_argument("--scenario", required=True)
    p.add_argument("--from", required=True, metavar="ELEMENTS",
                   help="a_du,e,i_deg,raan_deg,argp_deg[,ta_deg]")
    p.add_argument("--to", required=True, metavar="ELEMENTS")
    p.add_argument("--mass", type=float, default=None,
                   help="start mass kg (default: servicer dry + payload)")
    p.add_argument("--trace", default=None, help="write trace CSV here")
    p.set_defaults(func=cmd_transfer)

    p = sub.add_parser("costmatrix", help="build or load the cost matrix")
    p.add_argument("--scenario", required=True)
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--force", action="store_true",
                   help="ignore and overwrite any cached matrix")
    p.set_defaults(func=cmd_costmatrix)

    p = sub.add_parser("solve", help="solve the facility location program")
    p.add_argument("--scenario", required=True)
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--out", default=None, help="solution JSON path")
    p.add_argument("--lp", default=None, help="also dump the model in LP format")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("sweep", help="re-solve over parameter combinations")
    p.add_argument("--scenario", required=True)
    p.add_argument("--over", required=True,
                   help=f"comma-separated axes from {', '.join(SWEEP_AXES)}")
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--out", default=None, help="sweep CSV path")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("refine", help="refine facility locations continuously")
    p.add_argument("--scenario", required=True)
    p.add_argument("--solution", required=True, help="solution JSON from solve")
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--seed", type=int, default=None,
                   help="override the scenario's refinement RNG seed")
    p.add_argument("--out", default=None, help="report directory")
    p.set_defaults(func=cmd_refine)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except InfeasibleModelError as exc:
        client = f" (client {exc.client})" if exc.client is not None else ""
        print(f"infeasible model{client}: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (InvariantViolation, QlawStateError) as exc:
        print(f"internal invariant violation: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    except (FileNotFoundError, ValueError, KeyError, TypeError,
            yaml.YAMLError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
