"""Shared fixtures: canonical unit systems, controller defaults, and a
small fast scenario used by the pipeline-level tests."""

import math
from pathlib import Path

import numpy as np
import pytest

from depotopt.elements import UnitSystem
from depotopt.qlaw import QlawParams

GPS_DU_KM = 26560.0


@pytest.fixture(scope="session")
def meo_units():
    return UnitSystem(du_km=GPS_DU_KM)


@pytest.fixture(scope="session")
def meo_qlaw():
    return QlawParams(r_p_min=6878.0 / GPS_DU_KM)


def edelbaum_dv(v0: float, v1: float, di_rad: float = 0.0) -> float:
    """Analytic many-revolution low-thrust delta-V between circular orbits."""
    return math.sqrt(v0**2 - 2.0 * v0 * v1 * math.cos(math.pi / 2.0 * di_rad)
                     + v1**2)


def random_elliptic_state(rng, e_max=0.6, i_max_deg=60.0):
    """Random valid equinoctial-with-a state for property tests."""
    a = rng.uniform(0.5, 2.0)
    e = rng.uniform(0.0, e_max)
    ang = rng.uniform(0.0, 2.0 * math.pi)
    f, g = e * math.cos(ang), e * math.sin(ang)
    t2 = math.tan(math.radians(rng.uniform(0.0, i_max_deg)) / 2.0)
    ang2 = rng.uniform(0.0, 2.0 * math.pi)
    h, k = t2 * math.cos(ang2), t2 * math.sin(ang2)
    L = rng.uniform(0.0, 2.0 * math.pi)
    return np.array([a, f, g, h, k, L])


MINI_SCENARIO = """\
name: mini
units:
  du_km: 26560.0
  mu_km3_s2: 398600.4418
constellation: {constellation}
grid:
  a_du: "0.95:0.05:1.05"
  e: "0:0.05:0.05"
  i_deg: "55"
  raan_deg: "0"
  argp_deg: "0"
  ta_deg: "0"
launch:
  r0_km: 6578.0
  isp_l_s: 457.0
  isp_d_s: 320.0
  m_l_max_kg: {m_l_max}
servicer:
  thrust_n: 1.74
  isp_s_s: 1790.0
  dry_mass_kg: 500.0
  payload_kg: 100.0
depot:
  dry_mass_kg: 1500.0
architecture:
  demand: {demand}
  lambda: {lam}
  rho: {rho}
qlaw:
  r_p_min_km: 6878.0
  max_tof_days: {max_tof}
  dt_frac: 0.01
refine:
  population: 8
  mutation: 0.9
  crossover: 0.9
  generations: 4
  patience: 3
  seed: 1234
sweep:
  demand: [1, 2]
  m_s_dry_kg: [500.0, 600.0]
  m_d_dry_kg: [1500.0, 2000.0]
  lambda: [1.0, 2.0]
  rho: [1.0, 2.0]
workers: 2
output_dir: {output_dir}
"""

MINI_CLIENTS = """\
sat_id,a_km,e,i_deg,raan_deg,argp_deg
SAT-A,26560.0,0.001,55.0,0.0,0.0
SAT-B,27092.0,0.010,55.0,0.0,40.0
"""


def write_mini_scenario(root: Path, *, clients_csv=MINI_CLIENTS, demand=1,
                        lam=1.0, rho=1.0, m_l_max=12950.0, max_tof=300.0,
                        name="mini.yaml") -> Path:
    """Drop a 2-client x 6-slot MEO scenario into `root` and return its path.

    All transfers are same-plane and only days long, so the full pipeline
    runs in seconds. output_dir is absolute so cached artifacts are shared
    no matter the working directory.
    """
    root.mkdir(parents=True, exist_ok=True)
    (root / "clients.csv").write_text(clients_csv)
    path = root / name
    path.write_text(MINI_SCENARIO.format(
        constellation="clients.csv", demand=demand, lam=lam, rho=rho,
        m_l_max=m_l_max, max_tof=max_tof,
        output_dir=str(root / "out")))
    return path


@pytest.fixture(scope="session")
def mini_env(tmp_path_factory):
    """Session-wide mini scenario with a warm cost-matrix cache."""
    root = tmp_path_factory.mktemp("mini")
    path = write_mini_scenario(root)
    from depotopt.cli import main
    assert main(["costmatrix", "--scenario", str(path)]) == 0
    return path
