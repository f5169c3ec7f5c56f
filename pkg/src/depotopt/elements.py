"""
Orbital element representations, conversions, and canonical-unit handling.

States are kept in canonical units (distance in DU, time in TU, mu = 1)
everywhere inside the toolkit; masses stay in kg. The equinoctial set used
for propagation replaces the semi-latus rectum with the semimajor axis.
"""

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

G0 = 9.80665            # standard gravity, m/s^2
MU_EARTH = 398600.4418  # km^3/s^2
SEC_PER_DAY = 86400.0
TWO_PI = 2.0 * math.pi

CONSTELLATION_HEADER = ["sat_id", "a_km", "e", "i_deg", "raan_deg", "argp_deg"]


def wrap_angle(x: float) -> float:
    """Normalize an angle to [0, 2*pi)."""
    x = math.fmod(x, TWO_PI)
    if x < 0.0:
        x += TWO_PI
    return 0.0 if x == TWO_PI else x


@dataclass(frozen=True)
class UnitSystem:
    """Canonical distance/time units with mu = 1 DU^3/TU^2.

    Args:
        du_km: distance unit in km (e.g. 26560.0 for a MEO scenario)
        mu_km3_s2: physical gravitational parameter
    """
    du_km: float
    mu_km3_s2: float = MU_EARTH

    def __post_init__(self):
        if self.du_km <= 0.0 or self.mu_km3_s2 <= 0.0:
            raise ValueError("du_km and mu_km3_s2 must be positive")

    @property
    def tu_s(self) -> float:
        """Time unit in seconds, tu = sqrt(du^3 / mu)."""
        return math.sqrt(self.du_km**3 / self.mu_km3_s2)

    def km_to_du(self, x_km: float) -> float:
        return x_km / self.du_km

    def du_to_km(self, x_du: float) -> float:
        return x_du * self.du_km

    def days_to_tu(self, t_days: float) -> float:
        return t_days * SEC_PER_DAY / self.tu_s

    def tu_to_days(self, t_tu: float) -> float:
        return t_tu * self.tu_s / SEC_PER_DAY

    def accel_to_canonical(self, a_m_s2: float) -> float:
        """Convert an acceleration in m/s^2 to DU/TU^2."""
        return a_m_s2 * 1e-3 * self.tu_s**2 / self.du_km


@dataclass(frozen=True)
class KeplerianElements:
    """Classical elements: a (DU), e, and angles in rad, normalized [0, 2pi)."""
    a: float
    e: float
    i: float
    raan: float
    argp: float
    ta: float = 0.0

    def __post_init__(self):
        if not self.a > 0.0:
            raise ValueError(f"semimajor axis must be positive, got {self.a}")
        if not 0.0 <= self.e < 1.0:
            raise ValueError(f"eccentricity must be in [0, 1), got {self.e}")
        object.__setattr__(self, "i", wrap_angle(self.i))
        if self.i > math.pi:
            raise ValueError(f"inclination must be in [0, pi], got {self.i}")
        for name in ("raan", "argp", "ta"):
            object.__setattr__(self, name, wrap_angle(getattr(self, name)))

    @classmethod
    def from_degrees(cls, a, e, i_deg, raan_deg, argp_deg, ta_deg=0.0):
        return cls(a, e, math.radians(i_deg), math.radians(raan_deg),
                   math.radians(argp_deg), math.radians(ta_deg))

    def as_array(self) -> np.ndarray:
        return np.array([self.a, self.e, self.i, self.raan, self.argp, self.ta])

    @property
    def r_periapsis(self) -> float:
        return self.a * (1.0 - self.e)

    @property
    def r_apoapsis(self) -> float:
        return self.a * (1.0 + self.e)


@dataclass(frozen=True)
class MeeAState:
    """Equinoctial state with semimajor axis: [a, f, g, h, k, L].

    Nonsingular at e = 0 and i = 0; the tangent half-angle pair (h, k)
    is singular at i = pi, which is rejected on conversion.
    """
    a: float
    f: float
    g: float
    h: float
    k: float
    L: float

    def __post_init__(self):
        if not self.a > 0.0:
            raise ValueError(f"semimajor axis must be positive, got {self.a}")
        if self.f**2 + self.g**2 >= 1.0:
            raise ValueError("f^2 + g^2 must be < 1 (elliptic)")
        object.__setattr__(self, "L", wrap_angle(self.L))

    def as_array(self) -> np.ndarray:
        return np.array([self.a, self.f, self.g, self.h, self.k, self.L])

    @classmethod
    def from_array(cls, x) -> "MeeAState":
        return cls(float(x[0]), float(x[1]), float(x[2]),
                   float(x[3]), float(x[4]), float(x[5]))


def kep_to_mee(kep: KeplerianElements) -> MeeAState:
    """Convert classical elements to the equinoctial-with-a set.

    f = e cos(raan+argp), g = e sin(raan+argp),
    h = tan(i/2) cos(raan), k = tan(i/2) sin(raan), L = raan+argp+ta.
    Rejects i = pi (tangent singularity).
    """
    if abs(kep.i - math.pi) < 1e-12:
        raise ValueError("i = pi is singular for the (h, k) pair")
    lon_peri = kep.raan + kep.argp
    t2 = math.tan(kep.i / 2.0)
    return MeeAState(
        a=kep.a,
        f=kep.e * math.cos(lon_peri),
        g=kep.e * math.sin(lon_peri),
        h=t2 * math.cos(kep.raan),
        k=t2 * math.sin(kep.raan),
        L=lon_peri + kep.ta,
    )


def mee_to_kep(mee: MeeAState) -> KeplerianElements:
    """Inverse of :func:`kep_to_mee` (angles wrapped to [0, 2pi))."""
    e = math.hypot(mee.f, mee.g)
    i = 2.0 * math.atan(math.hypot(mee.h, mee.k))
    raan = math.atan2(mee.k, mee.h) if (mee.h != 0.0 or mee.k != 0.0) else 0.0
    lon_peri = math.atan2(mee.g, mee.f) if e > 0.0 else 0.0
    return KeplerianElements(
        a=mee.a,
        e=e,
        i=i,
        raan=raan,
        argp=lon_peri - raan,
        ta=mee.L - lon_peri,
    )


def auxiliaries(mee: MeeAState, mu: float = 1.0):
    """Two-body auxiliary quantities for an equinoctial state.

    Returns:
        (p, w, r, s2, h_am): semi-latus rectum, 1 + f cosL + g sinL,
        orbit radius p/w, 1 + h^2 + k^2, angular momentum sqrt(mu p).
    """
    p = mee.a * (1.0 - mee.f**2 - mee.g**2)
    w = 1.0 + mee.f * math.cos(mee.L) + mee.g * math.sin(mee.L)
    assert w > 0.0, "w <= 0 is impossible for an elliptic state"
    r = p / w
    s2 = 1.0 + mee.h**2 + mee.k**2
    h_am = math.sqrt(mu * p)
    return p, w, r, s2, h_am


def load_constellation(path, units: UnitSystem):
    """Read a constellation CSV into (sat_id, KeplerianElements in DU) pairs.

    Expected header: sat_id,a_km,e,i_deg,raan_deg,argp_deg. True anomaly is
    not part of the file format (transfers are element-targeting, not
    rendez-vous) and is set to zero.
    """
    path = Path(path)
    out = []
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or [c.strip() for c in reader.fieldnames] != CONSTELLATION_HEADER:
            raise ValueError(
                f"{path}: expected header {','.join(CONSTELLATION_HEADER)}, "
                f"got {reader.fieldnames}")
        for row in reader:
            kep = KeplerianElements.from_degrees(
                a=units.km_to_du(float(row["a_km"])),
                e=float(row["e"]),
                i_deg=float(row["i_deg"]),
                raan_deg=float(row["raan_deg"]),
                argp_deg=float(row["argp_deg"]),
            )
            out.append((row["sat_id"], kep))
    if not out:
        raise ValueError(f"{path}: no satellites found")
    return out
