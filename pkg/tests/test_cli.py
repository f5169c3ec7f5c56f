import csv
import json

import pytest

from conftest import write_mini_scenario
from depotopt.cli import main
from depotopt.cost import load_cost_matrix
from depotopt.launch import ratio_table
from depotopt.oflp import brute_force, build_model
from depotopt.scenario import load_scenario
from depotopt.slots import generate_slots


def run(args, capsys):
    rc = main(args)
    captured = capsys.readouterr()
    return rc, captured.out, captured.err


class TestTransferCmd:
    def test_identical_endpoints(self, mini_env, capsys):
        rc, out, _ = run(["transfer", "--scenario", str(mini_env),
                          "--from", "1.0,0.0,55,0,0", "--to", "1.0,0.0,55,0,0"],
                         capsys)
        assert rc == 0
        assert "tof_days=0.000000" in out
        assert "dm_kg=0.000000" in out
        assert "converged=true" in out

    def test_matches_library_call(self, mini_env, capsys):
        from depotopt.qlaw import Spacecraft, propagate_transfer
        scn = load_scenario(mini_env)
        rc, out, _ = run(["transfer", "--scenario", str(mini_env),
                          "--from", "0.95,0.0,55,0,0", "--to", "1.0,0.0,55,0,0",
                          "--mass", "600"], capsys)
        assert rc == 0
        sc = Spacecraft(scn.servicer.thrust_n, scn.servicer.isp_s, 600.0)
        from depotopt.elements import KeplerianElements
        res = propagate_transfer(
            KeplerianElements.from_degrees(0.95, 0.0, 55.0, 0.0, 0.0),
            KeplerianElements.from_degrees(1.0, 0.0, 55.0, 0.0, 0.0),
            sc, scn.qlaw, scn.units)
        assert f"tof_days={res.tof_days:.6f}" in out
        assert f"dm_kg={res.dm_kg:.6f}" in out

    def test_unconverged_exits_zero(self, tmp_path, capsys):
        path = write_mini_scenario(tmp_path, max_tof=0.02, name="short.yaml")
        rc, out, _ = run(["transfer", "--scenario", str(path),
                          "--from", "0.9,0.0,55,0,0", "--to", "1.1,0.0,55,0,0"],
                         capsys)
        assert rc == 0
        assert "converged=false" in out

    def test_trace_file(self, mini_env, tmp_path, capsys):
        trace = tmp_path / "trace.csv"
        rc, out, _ = run(["transfer", "--scenario", str(mini_env),
                          "--from", "0.98,0.0,55,0,0", "--to", "1.0,0.0,55,0,0",
                          "--trace", str(trace)], capsys)
        assert rc == 0
        lines = trace.read_text().splitlines()
        assert lines[0] == "t_days,a,f,g,h,k,L,mass_kg,Q"
        assert len(lines) > 2

    def test_bad_elements_usage_error(self, mini_env, capsys):
        rc, _, err = run(["transfer", "--scenario", str(mini_env),
                          "--from", "1.0,0.0", "--to", "1.0,0.0,55,0,0"],
                         capsys)
        assert rc == 1
        assert "error" in err


class TestCostmatrixCmd:
    def test_cache_hit_logged(self, mini_env, capsys):
        # the session fixture already built the matrix once
        rc, out, _ = run(["costmatrix", "--scenario", str(mini_env)], capsys)
        assert rc == 0
        assert "cache hit" in out

    def test_worker_counts_byte_identical(self, tmp_path, capsys):
        p1 = write_mini_scenario(tmp_path / "w1")
        p2 = write_mini_scenario(tmp_path / "w2")
        rc1, _, _ = run(["costmatrix", "--scenario", str(p1), "--workers", "1"],
                        capsys)
        rc2, _, _ = run(["costmatrix", "--scenario", str(p2), "--workers", "3"],
                        capsys)
        assert rc1 == rc2 == 0
        f1 = next((tmp_path / "w1" / "out" / "cache").glob("cost_*.csv"))
        f2 = next((tmp_path / "w2" / "out" / "cache").glob("cost_*.csv"))
        assert f1.name == f2.name
        assert f1.read_bytes() == f2.read_bytes()

    def test_exports_grid_and_contour(self, mini_env):
        scn = load_scenario(mini_env)
        assert (scn.output_dir / "grid.csv").exists()
        assert (scn.output_dir / "z_contour.csv").exists()
        grid = (scn.output_dir / "grid.csv").read_text().splitlines()
        assert len(grid) == 1 + 6


class TestSolveCmd:
    def test_matches_brute_force(self, mini_env, tmp_path, capsys):
        out_json = tmp_path / "sol.json"
        rc, out, _ = run(["solve", "--scenario", str(mini_env),
                          "--out", str(out_json)], capsys)
        assert rc == 0
        doc = json.loads(out_json.read_text())
        assert doc["status"] == "optimal"
        assert doc["gap"] == 0.0

        scn = load_scenario(mini_env)
        slots = generate_slots(scn.grid)
        z, z_d, ok = ratio_table(slots, scn.launch, scn.units)
        cache = next((scn.output_dir / "cache").glob("cost_*.csv"))
        matrix = load_cost_matrix(cache)
        model = build_model(matrix, z, z_d, ok, scn.m_d_dry_kg,
                            scn.servicer.payload_kg, scn.demand, scn.launch,
                            lam=scn.lam, rho=scn.rho)
        oracle = brute_force(model)
        assert doc["objective_kg"] == pytest.approx(oracle.objective,
                                                    rel=1e-9)
        assert doc["n_facilities"] == len(doc["facilities"])
        # every client assigned exactly once, to an open slot
        open_slots = {f["slot_idx"] for f in doc["facilities"]}
        assert set(doc["assignment"].keys()) == {"SAT-A", "SAT-B"}
        assert set(doc["assignment"].values()) <= open_slots
        assert "scenario_hash" in doc and "cost_hash" in doc

    def test_lp_export(self, mini_env, tmp_path, capsys):
        lp_path = tmp_path / "model.lp"
        rc, _, _ = run(["solve", "--scenario", str(mini_env),
                        "--out", str(tmp_path / "s.json"),
                        "--lp", str(lp_path)], capsys)
        assert rc == 0
        assert lp_path.read_text().startswith("Minimize")

    def test_infeasible_client_named(self, tmp_path, capsys):
        # client B sits on a plane 120 deg away; the transfer-time cap makes
        # every slot infeasible for it
        clients = ("sat_id,a_km,e,i_deg,raan_deg,argp_deg\n"
                   "NEAR,26560.0,0.001,55.0,0.0,0.0\n"
                   "FAR,26560.0,0.001,55.0,120.0,0.0\n")
        path = write_mini_scenario(tmp_path, clients_csv=clients, max_tof=3.0,
                                   name="infeasible.yaml")
        rc, out, err = run(["solve", "--scenario", str(path)], capsys)
        assert rc == 2
        assert "FAR" in err

    def test_solution_idempotent_modulo_timing(self, mini_env, tmp_path,
                                               capsys):
        a, b = tmp_path / "a.json", tmp_path / "b.json"
        run(["solve", "--scenario", str(mini_env), "--out", str(a)], capsys)
        run(["solve", "--scenario", str(mini_env), "--out", str(b)], capsys)
        da, db = json.loads(a.read_text()), json.loads(b.read_text())
        da.pop("solve_stats")
        db.pop("solve_stats")
        assert da == db


class TestSweepCmd:
    def test_grid_shape_and_oracle(self, mini_env, tmp_path, capsys):
        out_csv = tmp_path / "sweep.csv"
        rc, out, _ = run(["sweep", "--scenario", str(mini_env),
                          "--over", "lambda,rho", "--out", str(out_csv)],
                         capsys)
        assert rc == 0
        rows = list(csv.DictReader(out_csv.open()))
        assert len(rows) == 4  # 2 lambda x 2 rho
        assert set(rows[0].keys()) == {"lambda", "rho", "objective_kg",
                                       "n_facilities", "status"}
        # verify each point against the exhaustive oracle
        scn = load_scenario(mini_env)
        slots = generate_slots(scn.grid)
        z, z_d, ok = ratio_table(slots, scn.launch, scn.units)
        cache = next((scn.output_dir / "cache").glob("cost_*.csv"))
        matrix = load_cost_matrix(cache)
        for row in rows:
            model = build_model(matrix, z, z_d, ok, scn.m_d_dry_kg,
                                scn.servicer.payload_kg, scn.demand,
                                scn.launch, lam=float(row["lambda"]),
                                rho=float(row["rho"]))
            oracle = brute_force(model)
            assert float(row["objective_kg"]) == pytest.approx(
                oracle.objective, rel=1e-9)
            assert int(row["n_facilities"]) == len(oracle.open_slots)
        meta = json.loads(out_csv.with_suffix(".meta.json").read_text())
        assert meta["scenario_hash"] == scn.scenario_hash

    def test_servicer_mass_axis_rebuilds_matrix(self, mini_env, tmp_path,
                                                capsys):
        # sweeping the servicer dry mass changes the cost matrix itself;
        # each value gets its own cached matrix and the objectives differ
        out_csv = tmp_path / "sweep_mass.csv"
        rc, _, _ = run(["sweep", "--scenario", str(mini_env),
                        "--over", "m_s_dry_kg", "--out", str(out_csv)],
                       capsys)
        assert rc == 0
        rows = list(csv.DictReader(out_csv.open()))
        assert len(rows) == 2
        objs = [float(r["objective_kg"]) for r in rows]
        assert objs[0] != objs[1]
        assert objs[1] > objs[0]  # heavier servicer burns more per sortie
        scn = load_scenario(mini_env)
        assert len(list((scn.output_dir / "cache").glob("cost_*.csv"))) >= 2

    def test_unknown_axis_usage_error(self, mini_env, capsys):
        rc, _, err = run(["sweep", "--scenario", str(mini_env),
                          "--over", "bogus"], capsys)
        assert rc == 1
        assert "bogus" in err


@pytest.fixture(scope="module")
def solved(mini_env, tmp_path_factory):
    out = tmp_path_factory.mktemp("refine") / "sol.json"
    assert main(["solve", "--scenario", str(mini_env), "--out", str(out)]) == 0
    return out


class TestRefineCmd:

    def test_improves_and_reports(self, mini_env, solved, tmp_path, capsys):
        rc, out, _ = run(["refine", "--scenario", str(mini_env),
                          "--solution", str(solved), "--out", str(tmp_path)],
                         capsys)
        assert rc == 0
        doc = json.loads((tmp_path / "refined.json").read_text())
        assert doc["refined_objective_kg"] <= doc["seed_objective_kg"] + 1e-9
        for fac in doc["facilities"]:
            assert fac["refined"]["emleo_kg"] <= fac["seed"]["emleo_kg"] + 1e-9
            report = tmp_path / fac["report_csv"]
            lines = report.read_text().splitlines()
            assert lines[0] == ("gen,best_emleo_kg,best_a,best_e,best_i,"
                                "best_raan,wet_kg")

    def test_deterministic_at_seed(self, mini_env, solved, tmp_path, capsys):
        d1, d2 = tmp_path / "r1", tmp_path / "r2"
        for d in (d1, d2):
            rc, _, _ = run(["refine", "--scenario", str(mini_env),
                            "--solution", str(solved), "--seed", "777",
                            "--out", str(d)], capsys)
            assert rc == 0
        csvs1 = sorted(p.name for p in d1.glob("refine_facility*.csv"))
        csvs2 = sorted(p.name for p in d2.glob("refine_facility*.csv"))
        assert csvs1 == csvs2 and csvs1
        for name in csvs1:
            assert (d1 / name).read_bytes() == (d2 / name).read_bytes()

    def test_hash_mismatch_rejected(self, tmp_path, solved, capsys):
        other = write_mini_scenario(tmp_path, demand=2, name="other.yaml")
        rc, _, err = run(["refine", "--scenario", str(other),
                          "--solution", str(solved)], capsys)
        assert rc == 1
        assert "different scenario" in err
