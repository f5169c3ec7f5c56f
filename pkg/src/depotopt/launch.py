"""
Launch and insertion cost model for candidate depot orbits.

A depot is delivered by a coplanar Hohmann transfer from a circular parking
orbit of radius r0: the launch vehicle performs the first burn (transfer
orbit insertion), the depot itself performs the second. The transfer ellipse
may aim at either the target's perigee or apogee; both are priced with the
rocket equation and the cheaper combined mass ratio wins. Ratios depend only
on the slot geometry, never on mass, so they are precomputed per slot.

Everything here works in physical units (km, km/s, kg).
"""

import csv
import math
from dataclasses import dataclass

import numpy as np

from .elements import G0, MU_EARTH, KeplerianElements, UnitSystem

R_EARTH_KM = 6378.137


class InadmissibleSlotError(ValueError):
    """Slot periapsis below the parking orbit; the transfer model has no
    branch for targets under r0."""


@dataclass(frozen=True)
class LaunchParams:
    """Launch vehicle and depot insertion constants."""
    r0_km: float
    isp_l_s: float
    isp_d_s: float
    m_l_max_kg: float

    def __post_init__(self):
        if self.r0_km <= R_EARTH_KM:
            raise ValueError(f"parking orbit radius {self.r0_km} km is below "
                             f"the Earth surface")
        if self.isp_l_s <= 0.0 or self.isp_d_s <= 0.0:
            raise ValueError("specific impulses must be positive")
        if self.m_l_max_kg <= 0.0:
            raise ValueError("maximum launch mass must be positive")


@dataclass(frozen=True)
class MassRatios:
    """Initial-to-final mass ratios for delivering a depot to one slot."""
    z: float
    z_d: float
    z_l: float
    branch: str  # "perigee" or "apogee" (second burn location)


def hohmann_dvs(r0_km: float, a_km: float, e: float, mu: float = MU_EARTH):
    """Impulse magnitudes (km/s) for both second-burn choices.

    Returns:
        (dv_p1, dv_p2, dv_a1, dv_a2): burn pairs for the transfer ellipse
        reaching the target perigee and the target apogee respectively.

    Raises:
        InadmissibleSlotError: target periapsis below r0.
    """
    if not 0.0 <= e < 1.0:
        raise ValueError(f"eccentricity must be in [0, 1), got {e}")
    rp = a_km * (1.0 - e)
    ra = a_km * (1.0 + e)
    if rp < r0_km * (1.0 - 1e-12):
        raise InadmissibleSlotError(
            f"slot periapsis {rp:.1f} km below parking orbit {r0_km:.1f} km")

    v0 = math.sqrt(mu / r0_km)

    def visviva(r, sma):
        return math.sqrt(max(0.0, mu * (2.0 / r - 1.0 / sma)))

    # second burn at target perigee
    at_p = 0.5 * (r0_km + rp)
    dv_p1 = visviva(r0_km, at_p) - v0
    dv_p2 = visviva(rp, a_km) - visviva(rp, at_p)
    # second burn at target apogee
    at_a = 0.5 * (r0_km + ra)
    dv_a1 = visviva(r0_km, at_a) - v0
    dv_a2 = visviva(ra, a_km) - visviva(ra, at_a)
    return dv_p1, dv_p2, dv_a1, dv_a2


def mass_ratio(a_km: float, e: float, lp: LaunchParams,
               mu: float = MU_EARTH) -> MassRatios:
    """Combined launch+insertion mass ratio Z = min(Z_p, Z_a) for one slot.

    The launch vehicle Isp prices the first burn, the depot Isp the second.
    """
    dv_p1, dv_p2, dv_a1, dv_a2 = hohmann_dvs(lp.r0_km, a_km, e, mu)
    vel = G0 * 1e-3  # km/s per second of Isp
    zl_p = math.exp(dv_p1 / (vel * lp.isp_l_s))
    zd_p = math.exp(dv_p2 / (vel * lp.isp_d_s))
    zl_a = math.exp(dv_a1 / (vel * lp.isp_l_s))
    zd_a = math.exp(dv_a2 / (vel * lp.isp_d_s))
    if zd_p * zl_p <= zd_a * zl_a:
        return MassRatios(z=zd_p * zl_p, z_d=zd_p, z_l=zl_p, branch="perigee")
    return MassRatios(z=zd_a * zl_a, z_d=zd_a, z_l=zl_a, branch="apogee")


def emleo(post_insertion_mass_kg: float, ratios: MassRatios) -> float:
    """Equivalent mass to LEO: the mass the depot would weigh on the parking
    orbit, post-insertion mass times the combined ratio."""
    if post_insertion_mass_kg <= 0.0:
        raise ValueError("mass must be positive")
    return post_insertion_mass_kg * ratios.z


def ratio_table(slots, lp: LaunchParams, units: UnitSystem):
    """Mass ratios for a list of slots (KeplerianElements in DU).

    Returns:
        (z, z_d, feasible): float arrays plus an admissibility mask;
        inadmissible slots carry z = z_d = nan.
    """
    n = len(slots)
    z = np.full(n, np.nan)
    z_d = np.full(n, np.nan)
    feasible = np.zeros(n, dtype=bool)
    for j, slot in enumerate(slots):
        try:
            r = mass_ratio(units.du_to_km(slot.a), slot.e, lp, units.mu_km3_s2)
        except InadmissibleSlotError:
            continue
        z[j] = r.z
        z_d[j] = r.z_d
        feasible[j] = True
    return z, z_d, feasible


def write_z_contour_csv(path, slots, z, z_d, feasible):
    """Export per-slot ratios as a_du,e,z,z_d,feasible."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["a_du", "e", "z", "z_d", "feasible"])
        for slot, zj, zdj, ok in zip(slots, z, z_d, feasible):
            writer.writerow([f"{slot.a:.17g}", f"{slot.e:.17g}",
                             f"{zj:.17g}", f"{zdj:.17g}", str(bool(ok)).lower()])
