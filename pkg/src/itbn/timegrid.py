"""Irregular observation timelines and their discrete-time expansion.

Times are held as integer multiples ("ticks") of a declared resolution so that
the gcd of the gaps is exact. Floating-point gcd is never attempted.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from decimal import Decimal
from fractions import Fraction
from typing import Iterable, Sequence

import numpy as np

DEFAULT_RESOLUTION = Fraction(1, 10**6)


class TimelineError(ValueError):
    """Raised for malformed timelines or unsupported timeline queries."""


def to_fraction(value) -> Fraction:
    """Exact rational for a decimal string, int, Decimal, Fraction or float.

    Floats go through their shortest round-trip repr, so ``0.1`` becomes 1/10.
    """
    if isinstance(value, Fraction):
        return value
    if isinstance(value, bool):
        raise TypeError("booleans are not time values")
    if isinstance(value, (int, np.integer)):
        return Fraction(int(value))
    if isinstance(value, Decimal):
        return Fraction(value)
    if isinstance(value, (float, np.floating)):
        if not math.isfinite(value):
            raise TimelineError(f"non-finite time value {value!r}")
        return Fraction(repr(float(value)))
    if isinstance(value, str):
        try:
            return Fraction(Decimal(value.strip()))
        except Exception as exc:  # decimal.InvalidOperation and friends
            raise TimelineError(f"cannot parse time value {value!r}") from exc
    raise TypeError(f"unsupported time value type {type(value).__name__}")


def to_ticks(value, resolution: Fraction) -> int:
    """Convert a time value to an integer number of resolution units."""
    q = to_fraction(value) / resolution
    if q.denominator != 1:
        raise TimelineError(f"time {value!r} is not a multiple of resolution {resolution}")
    return q.numerator


@dataclass(frozen=True)
class Timeline:
    """Strictly increasing observation times of one entity, in resolution ticks."""

    ticks: tuple[int, ...]
    resolution: Fraction = DEFAULT_RESOLUTION
    entity_id: object = None

    def __post_init__(self):
        ticks = tuple(int(t) for t in self.ticks)
        object.__setattr__(self, "ticks", ticks)
        object.__setattr__(self, "resolution", to_fraction(self.resolution))
        if self.resolution <= 0:
            raise TimelineError("resolution must be positive")
        if len(ticks) < 1:
            raise TimelineError("a timeline needs at least one time-point")
        if any(b <= a for a, b in zip(ticks, ticks[1:])):
            raise TimelineError("times must be strictly increasing")

    @classmethod
    def from_times(cls, times: Iterable, resolution=DEFAULT_RESOLUTION, entity_id=None) -> "Timeline":
        res = to_fraction(resolution)
        return cls(tuple(to_ticks(t, res) for t in times), res, entity_id)

    def __len__(self) -> int:
        return len(self.ticks)

    @property
    def exact_times(self) -> tuple[Fraction, ...]:
        return tuple(t * self.resolution for t in self.ticks)

    @property
    def times(self) -> np.ndarray:
        return np.array([float(t) for t in self.exact_times])

    def extend(self, value) -> "Timeline":
        return Timeline(self.ticks + (to_ticks(value, self.resolution),), self.resolution, self.entity_id)

    def prefix(self, n: int) -> "Timeline":
        return Timeline(self.ticks[:n], self.resolution, self.entity_id)


@dataclass(frozen=True)
class GapSet:
    """Consecutive differences of a timeline and their exact gcd (in ticks)."""

    gap_ticks: tuple[int, ...]
    granularity_ticks: int
    resolution: Fraction = field(default=DEFAULT_RESOLUTION)

    @property
    def gaps(self) -> tuple[Fraction, ...]:
        return tuple(g * self.resolution for g in self.gap_ticks)

    @property
    def granularity(self) -> Fraction:
        return self.granularity_ticks * self.resolution


def merge_timelines(timelines: Sequence[Timeline]) -> Timeline:
    """Sorted union of timelines of one entity; shared instants collapse to one slice."""
    if not timelines:
        raise TimelineError("nothing to merge")
    res = timelines[0].resolution
    if any(t.resolution != res for t in timelines):
        raise TimelineError("cannot merge timelines with different resolutions")
    ticks = sorted(set().union(*(t.ticks for t in timelines)))
    return Timeline(tuple(ticks), res, timelines[0].entity_id)


def gaps(timeline: Timeline) -> GapSet:
    if len(timeline) < 2:
        raise TimelineError("no gaps: timeline has a single time-point")
    g = tuple(b - a for a, b in zip(timeline.ticks, timeline.ticks[1:]))
    return GapSet(g, math.gcd(*g), timeline.resolution)


def discrete_expansion_size(timeline: Timeline) -> int:
    """Slices a discrete-time model at gcd granularity needs over [min, max], both ends included."""
    gs = gaps(timeline)
    span = timeline.ticks[-1] - timeline.ticks[0]
    return span // gs.granularity_ticks + 1


def compression_ratio(timeline: Timeline) -> float:
    return discrete_expansion_size(timeline) / len(timeline)


def prefix_granularities(timeline: Timeline) -> np.ndarray:
    """Granularity (in ticks) of every prefix with at least two points.

    Entry ``k`` is the granularity of the first ``k + 2`` points.
    """
    g = np.diff(np.asarray(timeline.ticks, dtype=np.int64))
    if g.size == 0:
        raise TimelineError("no gaps: timeline has a single time-point")
    return np.gcd.accumulate(g)


def simulate_geometric_timeline(n: int, p: float, rng: np.random.Generator, entity_id=None) -> Timeline:
    """Timeline starting at 0 whose gaps are i.i.d. geometric on {1, 2, ...}."""
    if n < 1:
        raise ValueError("n must be at least 1")
    if not (0.0 < p <= 1.0):
        raise ValueError(f"geometric success probability must lie in (0, 1], got {p}")
    steps = rng.geometric(p, size=n - 1).astype(np.int64)
    ticks = np.concatenate([[0], np.cumsum(steps)])
    return Timeline(tuple(int(t) for t in ticks), Fraction(1), entity_id)


@dataclass
class CompactnessSummary:
    n: int
    p: float
    reps: int
    mean_ratio: float
    expected_ratio: float
    pr_unit_granularity: float
    ratios: np.ndarray


def compactness_study(n: int, p: float, reps: int, seed: int) -> CompactnessSummary:
    """Monte Carlo of the discrete-vs-irregular size ratio for geometric gaps."""
    rng = np.random.default_rng(seed)
    ratios = np.empty(reps)
    unit = 0
    for r in range(reps):
        tl = simulate_geometric_timeline(n, p, rng)
        if n >= 2:
            ratios[r] = compression_ratio(tl)
            unit += gaps(tl).granularity_ticks == 1
        else:
            ratios[r] = 1.0
    return CompactnessSummary(n, p, reps, float(ratios.mean()), 1.0 / p, unit / reps, ratios)
