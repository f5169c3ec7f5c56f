"""
Discretized candidate facility locations.

A grid is the Cartesian product of per-element value lists over
(a, e, i, raan, argp, ta). Ranges are written "min:increment:max" and are
stepped with exact rationals so inclusive endpoints never drop off to
floating-point drift; enumeration is row-major in that fixed element order,
which keeps the slot index <-> element tuple bijection stable across runs.
"""

import csv
import itertools
import math
from dataclasses import dataclass
from fractions import Fraction

from .elements import KeplerianElements

_FIELDS = ("a_du", "e", "i_deg", "raan_deg", "argp_deg", "ta_deg")


def parse_range(spec) -> tuple:
    """Expand a range spec into an inclusive tuple of floats.

    Accepts "min:increment:max" strings, a bare number (or numeric string),
    or an explicit sequence of numbers.
    """
    if isinstance(spec, str):
        parts = [s.strip() for s in spec.split(":")]
        if len(parts) == 1:
            return (float(Fraction(parts[0])),)
        if len(parts) != 3:
            raise ValueError(f"range spec must be 'min:increment:max', got {spec!r}")
        lo, inc, hi = (Fraction(p) for p in parts)
        if inc <= 0:
            raise ValueError(f"increment must be positive in {spec!r}")
        if hi < lo:
            raise ValueError(f"empty range {spec!r}")
        n = (hi - lo) / inc
        if n.denominator != 1:
            raise ValueError(f"increment does not divide the span in {spec!r}")
        return tuple(float(lo + j * inc) for j in range(int(n) + 1))
    if isinstance(spec, (int, float)):
        return (float(spec),)
    values = tuple(float(v) for v in spec)
    if not values:
        raise ValueError("empty value list")
    if len(set(values)) != len(values):
        raise ValueError(f"duplicate values in {spec!r}")
    return values


@dataclass(frozen=True)
class GridSpec:
    """Per-element ranges of a candidate grid (a in DU, angles in deg)."""
    a_du: object
    e: object
    i_deg: object
    raan_deg: object = 0.0
    argp_deg: object = 0.0
    ta_deg: object = 0.0

    def values(self) -> dict:
        return {name: parse_range(getattr(self, name)) for name in _FIELDS}

    @property
    def count(self) -> int:
        return math.prod(len(v) for v in self.values().values())

    def echo(self) -> dict:
        """Plain-dict form of the expanded grid (for hashing/sidecars)."""
        return {name: list(vals) for name, vals in self.values().items()}


def generate_slots(spec: GridSpec):
    """Enumerate the grid as KeplerianElements (row-major, a outermost)."""
    vals = spec.values()
    slots = [
        KeplerianElements.from_degrees(a, e, i, raan, argp, ta)
        for a, e, i, raan, argp, ta in itertools.product(
            vals["a_du"], vals["e"], vals["i_deg"], vals["raan_deg"],
            vals["argp_deg"], vals["ta_deg"])
    ]
    assert len(slots) == spec.count
    return slots


def write_grid_csv(path, slots):
    """Echo the enumerated grid as slot_idx,a_du,e,i_deg,raan_deg,argp_deg."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["slot_idx", "a_du", "e", "i_deg", "raan_deg", "argp_deg"])
        for idx, s in enumerate(slots):
            writer.writerow([
                idx, f"{s.a:.17g}", f"{s.e:.17g}",
                f"{math.degrees(s.i):.17g}", f"{math.degrees(s.raan):.17g}",
                f"{math.degrees(s.argp):.17g}",
            ])
