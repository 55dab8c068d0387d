"""Distance-bin and azimuth-sector stratification."""
from __future__ import annotations

import math
from dataclasses import dataclass

DISTANCE_BINS = (("0-10m", 0.0, 10.0), ("10-20m", 10.0, 20.0), ("20-30m", 20.0, 30.0),
                 ("30-40m", 30.0, 40.0), ("40-50m", 40.0, 50.0))
# half-open degree intervals, azimuth 0 = ego forward, counter-clockwise
ANGULAR_SECTORS = (
    ("front", ((-60.0, 60.0),)),
    ("back", ((120.0, 240.0),)),
    ("sides", ((60.0, 120.0), (240.0, 300.0))),
)


class StrataError(ValueError):
    """Strata overlap or are malformed."""


@dataclass(frozen=True)
class Strata:
    kind: str  # "distance" or "angular"
    names: tuple
    intervals: tuple  # per stratum: tuple of (lo, hi) half-open

    def assign(self, value: float):
        """Name of the stratum holding ``value`` (metres or degrees), or None."""
        if self.kind == "angular":
            value = value % 360.0
        for name, ivs in zip(self.names, self.intervals):
            for lo, hi in ivs:
                if lo <= value < hi:
                    return name
        return None


def _normalize_sector(lo: float, hi: float):
    if not hi > lo:
        raise StrataError(f"sector ({lo}, {hi}) is empty")
    if hi - lo > 360.0:
        raise StrataError(f"sector ({lo}, {hi}) wraps more than once")
    lo_n = lo % 360.0
    hi_n = lo_n + (hi - lo)
    if hi_n <= 360.0:
        return [(lo_n, hi_n)]
    return [(lo_n, 360.0), (0.0, hi_n - 360.0)]


def _check_disjoint(named):
    flat = sorted((lo, hi, name) for name, ivs in named for lo, hi in ivs)
    for (lo0, hi0, n0), (lo1, hi1, n1) in zip(flat, flat[1:]):
        if lo1 < hi0:
            raise StrataError(f"strata {n0!r} and {n1!r} overlap on [{lo1}, {min(hi0, hi1)})")


def distance_strata(bins=DISTANCE_BINS) -> Strata:
    named = []
    for name, lo, hi in bins:
        if not (hi > lo >= 0):
            raise StrataError(f"distance bin {name!r} must satisfy 0 <= lo < hi")
        named.append((name, ((float(lo), float(hi)),)))
    _check_disjoint(named)
    return Strata("distance", tuple(n for n, _ in named), tuple(iv for _, iv in named))


def angular_strata(sectors=ANGULAR_SECTORS) -> Strata:
    named = []
    for name, ivs in sectors:
        pieces = []
        for lo, hi in ivs:
            pieces.extend(_normalize_sector(float(lo), float(hi)))
        named.append((name, tuple(pieces)))
    _check_disjoint(named)
    return Strata("angular", tuple(n for n, _ in named), tuple(iv for _, iv in named))


FORWARD_AXES = {"x": 0.0, "y": 90.0, "-x": 180.0, "-y": 270.0}


def azimuth_deg(ego_xy, forward: str = "x") -> float:
    """Counter-clockwise azimuth of an ego-frame point relative to the forward axis."""
    a = math.degrees(math.atan2(ego_xy[1], ego_xy[0])) - FORWARD_AXES[forward]
    return a % 360.0


def stratum_value(box, strata: Strata, forward: str = "x") -> float:
    if strata.kind == "distance":
        return box.ego_dist
    return azimuth_deg(box.ego_translation, forward)


def split_by_stratum(boxes, strata: Strata, forward: str = "x") -> dict:
    out = {name: [] for name in strata.names}
    for b in boxes:
        name = strata.assign(stratum_value(b, strata, forward))
        if name is not None:
            out[name].append(b)
    return out
