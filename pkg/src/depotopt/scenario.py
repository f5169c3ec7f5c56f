"""
Scenario files: one YAML document drives the whole pipeline.

A scenario fixes the unit system, the client constellation, the candidate
slot grid, every vehicle and guidance parameter, solver/refinement settings,
and sweep axes. Its hash covers the resolved content (client element values,
not file paths), so any change that could alter a result changes the hash.
"""

import hashlib
import json
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
import yaml

from .cost import ServicerParams
from .elements import KeplerianElements, UnitSystem, load_constellation
from .launch import LaunchParams
from .qlaw import QlawParams
from .refine import DeParams
from .slots import GridSpec

SWEEP_AXES = ("demand", "m_s_dry_kg", "m_d_dry_kg", "lambda", "rho")


def data_dir() -> Path:
    """Directory holding bundled constellations and scenarios."""
    return Path(resources.files("depotopt") / "data")


@dataclass
class Scenario:
    name: str
    units: UnitSystem
    constellation_path: Path
    clients: list                    # (sat_id, KeplerianElements) pairs
    grid: GridSpec
    launch: LaunchParams
    servicer: ServicerParams
    m_d_dry_kg: float
    demand: float
    lam: float
    rho: float
    qlaw: QlawParams
    de: DeParams
    sweep: dict = field(default_factory=dict)
    max_nodes: int = 200_000
    workers: int = 4
    output_dir: Path = Path("out")

    def echo(self) -> dict:
        """Resolved, serializable form of everything that affects results."""
        return {
            "name": self.name,
            "units": [self.units.du_km, self.units.mu_km3_s2],
            "clients": [[sid, *kep.as_array().tolist()]
                        for sid, kep in self.clients],
            "grid": self.grid.echo(),
            "launch": [self.launch.r0_km, self.launch.isp_l_s,
                       self.launch.isp_d_s, self.launch.m_l_max_kg],
            "servicer": [self.servicer.thrust_n, self.servicer.isp_s,
                         self.servicer.dry_mass_kg, self.servicer.payload_kg],
            "m_d_dry_kg": self.m_d_dry_kg,
            "demand": self.demand,
            "lambda": self.lam,
            "rho": self.rho,
            "qlaw": list(self.qlaw.packed()) + list(self.qlaw.tol_array())
                    + [self.qlaw.max_tof_days, self.qlaw.dt_frac],
            "de": [self.de.population, self.de.mutation, self.de.crossover,
                   self.de.generations, self.de.patience, self.de.seed],
            "solver": {"max_nodes": self.max_nodes},
        }

    @property
    def scenario_hash(self) -> str:
        blob = json.dumps(self.echo(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    def client_elements(self):
        return [kep for _, kep in self.clients]

    def client_ids(self):
        return [sid for sid, _ in self.clients]


def _resolve_path(name, base: Path) -> Path:
    cand = Path(name)
    if cand.is_absolute() and cand.exists():
        return cand
    local = base / cand
    if local.exists():
        return local
    bundled = data_dir() / cand
    if bundled.exists():
        return bundled
    raise FileNotFoundError(f"cannot resolve {name!r} relative to {base} "
                            f"or the bundled data directory")


def load_scenario(path) -> Scenario:
    """Parse and validate a scenario YAML file."""
    path = Path(path)
    if not path.exists():
        bundled = data_dir() / path.name
        if bundled.exists():
            path = bundled
        else:
            raise FileNotFoundError(f"scenario file not found: {path}")
    raw = yaml.safe_load(path.read_text())
    if not isinstance(raw, dict):
        raise ValueError(f"{path}: scenario must be a mapping")

    try:
        units = UnitSystem(du_km=float(raw["units"]["du_km"]),
                           mu_km3_s2=float(raw["units"].get("mu_km3_s2",
                                                            398600.4418)))
        grid = GridSpec(**{key: raw["grid"][key] for key in raw["grid"]})
        launch = LaunchParams(
            r0_km=float(raw["launch"]["r0_km"]),
            isp_l_s=float(raw["launch"]["isp_l_s"]),
            isp_d_s=float(raw["launch"]["isp_d_s"]),
            m_l_max_kg=float(raw["launch"]["m_l_max_kg"]),
        )
        servicer = ServicerParams(
            thrust_n=float(raw["servicer"]["thrust_n"]),
            isp_s=float(raw["servicer"]["isp_s_s"]),
            dry_mass_kg=float(raw["servicer"]["dry_mass_kg"]),
            payload_kg=float(raw["servicer"]["payload_kg"]),
        )
        qraw = raw.get("qlaw", {})
        qlaw = QlawParams(
            r_p_min=units.km_to_du(float(qraw["r_p_min_km"])),
            w_oe=tuple(qraw.get("w_oe", (1.0, 1.0, 1.0, 1.0, 1.0))),
            w_p=float(qraw.get("w_p", 1.0)),
            sigma=float(qraw.get("sigma", 3.0)),
            nu=float(qraw.get("nu", 4.0)),
            zeta=float(qraw.get("zeta", 2.0)),
            k_rp=float(qraw.get("k_rp", 1.0)),
            tol=tuple(qraw.get("tol", (1e-3, 1e-3, 1e-3, 1e-3, 1e-3))),
            max_tof_days=float(qraw.get("max_tof_days", 300.0)),
            dt_frac=float(qraw.get("dt_frac", 0.01)),
        )
        arch = raw.get("architecture", {})
        demand = arch.get("demand", 1)
        if not isinstance(demand, (int, float)) or demand <= 0:
            raise ValueError(f"architecture.demand must be a positive "
                             f"number, got {demand!r}")
        lam = float(arch.get("lambda", 1.0))
        rho = float(arch.get("rho", 1.0))
        m_d_dry = float(raw["depot"]["dry_mass_kg"])
        deraw = raw.get("refine", {})
        de = DeParams(
            population=int(deraw.get("population", 50)),
            mutation=float(deraw.get("mutation", 0.9)),
            crossover=float(deraw.get("crossover", 0.9)),
            generations=int(deraw.get("generations", 60)),
            patience=int(deraw.get("patience", 15)),
            seed=int(deraw.get("seed", 0)),
        )
        sweep = raw.get("sweep", {}) or {}
        for axis in sweep:
            if axis not in SWEEP_AXES:
                raise ValueError(f"unknown sweep axis {axis!r}; "
                                 f"expected one of {SWEEP_AXES}")
        constellation = _resolve_path(raw["constellation"], path.parent)
    except KeyError as exc:
        raise ValueError(f"{path}: missing scenario key {exc}") from exc

    clients = load_constellation(constellation, units)
    return Scenario(
        name=str(raw.get("name", path.stem)),
        units=units,
        constellation_path=constellation,
        clients=clients,
        grid=grid,
        launch=launch,
        servicer=servicer,
        m_d_dry_kg=m_d_dry,
        demand=demand,
        lam=lam,
        rho=rho,
        qlaw=qlaw,
        de=de,
        sweep=sweep,
        max_nodes=int(raw.get("solver", {}).get("max_nodes", 200_000)),
        workers=int(raw.get("workers", 4)),
        output_dir=Path(raw.get("output_dir", "out")),
    )


def refine_bounds(scenario: Scenario) -> np.ndarray:
    """Box bounds for refinement: grid extent widened by one increment per
    element, clamped to physically valid ranges."""
    vals = scenario.grid.values()

    def span(values, lo_clamp, hi_clamp):
        values = sorted(values)
        inc = values[1] - values[0] if len(values) > 1 else 0.0
        return (max(values[0] - inc, lo_clamp),
                min(values[-1] + inc, hi_clamp))

    a_lo, a_hi = span(vals["a_du"], 1e-3, math.inf)
    e_lo, e_hi = span(vals["e"], 0.0, 0.99)
    i_lo, i_hi = span(vals["i_deg"], 0.0, 179.0)
    r_lo, r_hi = span(vals["raan_deg"], -math.inf, math.inf)
    return np.array([
        [a_lo, a_hi],
        [e_lo, e_hi],
        [math.radians(i_lo), math.radians(i_hi)],
        [math.radians(r_lo), math.radians(r_hi)],
    ])
