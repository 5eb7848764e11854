"""Finding the time of a hidden slice by root finding on its conditional mean.

Given neighbouring slices at ``t-`` and ``t+`` and a target value ``x`` for a
process in the hidden slice between them, solve ``m(t) = x`` where
``m(t) = E[X_i(T_j) | T_j = t, evidence]``. The mean curve is continuous in
``t`` for spline CPDs, so a sign change of ``m - x`` brackets a root.

The exact estimator evaluates ``m`` by Gaussian conditioning and solves with a
Brent iteration. The Monte Carlo estimator uses retrospective approximation:
a sequence of sample-average problems with fixed common random numbers per
stage, sample sizes growing 4x per stage and each stage warm-started at the
previous root.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy.stats import norm

from .infer import exact_joint, likelihood_weighting
from .model import GAUSSIAN, ItbnStructure, Params, unroll
from .timegrid import Timeline, to_fraction


class TimeFindError(ValueError):
    pass


class NoBracketedRoot(TimeFindError):
    pass


class IterationLimit(TimeFindError):
    pass


@dataclass(frozen=True)
class Exact:
    pass


@dataclass(frozen=True)
class MonteCarlo:
    count: int = 16384  # final-stage sample size
    seed: int = 0
    initial_count: int = 256
    growth: int = 4


@dataclass(frozen=True)
class TimeQuery:
    process: str
    slice: int
    bracket: tuple[float, float]
    target: float
    tol: float = 1e-8
    time_tol: float = 1e-12
    estimator: Exact | MonteCarlo = field(default_factory=Exact)

    def __post_init__(self):
        lo, hi = self.bracket
        if not lo < hi:
            raise ValueError(f"empty bracket ({lo}, {hi})")
        if self.tol <= 0 or self.time_tol <= 0:
            raise ValueError("tolerances must be positive")


@dataclass
class FreeSlice:
    """An entity's grounding with one extra slice whose time is left free.

    ``times`` are the existing slice times; the free slice is inserted at
    position ``query.slice`` so that its neighbours are ``times[j-1]`` and
    ``times[j]``. ``evidence`` is keyed by ``(process, slice)`` in the
    existing indexing; ``slice_evidence`` holds values observed in the free
    slice itself (process -> value).
    """

    structure: ItbnStructure
    params: Params
    times: Sequence
    evidence: Mapping = field(default_factory=dict)
    slice_evidence: Mapping = field(default_factory=dict)

    def __post_init__(self):
        if isinstance(self.times, Timeline):
            self.times = self.times.exact_times
        self.times = [to_fraction(t) for t in self.times]

    def neighbours(self, j: int) -> tuple[float | None, float | None]:
        lo = float(self.times[j - 1]) if j > 0 else None
        hi = float(self.times[j]) if j < len(self.times) else None
        return lo, hi

    def ground(self, j: int, t: float):
        exact_t = Fraction(t)
        times = list(self.times[:j]) + [exact_t] + list(self.times[j:])
        net = unroll(self.structure, times, self.params)
        ev = {}
        for (p, s), v in self.evidence.items():
            ev[(p, s + 1 if s >= j else s)] = v
        for p, v in self.slice_evidence.items():
            ev[(p, j)] = v
        return net, ev


def _check_bracket(free: FreeSlice, query: TimeQuery) -> tuple[float, float]:
    lo, hi = query.bracket
    n_lo, n_hi = free.neighbours(query.slice)
    if (n_lo is not None and lo < n_lo) or (n_hi is not None and hi > n_hi):
        raise ValueError(f"bracket ({lo}, {hi}) leaves the neighbouring slices ({n_lo}, {n_hi})")
    return lo, hi


def conditional_moments(free: FreeSlice, query: TimeQuery, t: float, *, rng_seed=None, count=None):
    """Posterior (mean, variance, standard error) of the queried node with the free slice at ``t``."""
    lo, hi = _check_bracket(free, query)
    if not lo < t < hi:
        raise ValueError(f"t={t} outside the open bracket ({lo}, {hi})")
    net, ev = free.ground(query.slice, t)
    key = (query.process, query.slice)
    if isinstance(query.estimator, Exact) and net.all_gaussian():
        b = exact_joint(net, ev, [key])
        return float(b.mean[0]), float(b.variance[0]), 0.0
    est = query.estimator if isinstance(query.estimator, MonteCarlo) else MonteCarlo()
    rng = np.random.default_rng(est.seed if rng_seed is None else rng_seed)
    w = likelihood_weighting(net, ev, [key], count or est.count, rng)
    return float(w.mean[0]), float(w.variance[0]), float(w.std_error[0])


def conditional_mean(free: FreeSlice, query: TimeQuery, t: float) -> float:
    return conditional_moments(free, query, t)[0]


# --------------------------------------------------------------------------- bracketed solver


@dataclass
class _Solve:
    root: float
    value: float
    iterations: int
    trace: list


def brent(f: Callable[[float], float], a: float, b: float, fa: float, fb: float,
          ftol: float, xtol: float, max_iter: int = 100) -> _Solve:
    """Brent's bisection / secant / inverse-quadratic hybrid on a sign-changing bracket.

    Stops when ``|f| <= ftol`` or the bracket half-width drops below ``xtol``.
    Every iterate stays inside ``[a, b]``.
    """
    trace = [(a, fa), (b, fb)]
    if fa == 0 or abs(fa) <= ftol:
        return _Solve(a, fa, 0, trace)
    if fb == 0 or abs(fb) <= ftol:
        return _Solve(b, fb, 0, trace)
    if (fa > 0) == (fb > 0):
        raise NoBracketedRoot(f"f({a})={fa} and f({b})={fb} have the same sign")
    if abs(fa) < abs(fb):
        a, b, fa, fb = b, a, fb, fa
    c, fc = a, fa
    d = e = b - a
    for it in range(1, max_iter + 1):
        if (fb > 0) == (fc > 0):
            c, fc = a, fa
            d = e = b - a
        if abs(fc) < abs(fb):
            a, b, c = b, c, b
            fa, fb, fc = fb, fc, fb
        tol = 2.0 * np.finfo(float).eps * abs(b) + 0.5 * xtol
        m = 0.5 * (c - b)
        if abs(m) <= tol or abs(fb) <= ftol:
            return _Solve(b, fb, it - 1, trace)
        if abs(e) >= tol and abs(fa) > abs(fb):
            s = fb / fa
            if a == c:
                p, q = 2.0 * m * s, 1.0 - s
            else:
                q, r = fa / fc, fb / fc
                p = s * (2.0 * m * q * (q - r) - (b - a) * (r - 1.0))
                q = (q - 1.0) * (r - 1.0) * (s - 1.0)
            if p > 0:
                q = -q
            else:
                p = -p
            if 2.0 * p < min(3.0 * m * q - abs(tol * q), abs(e * q)):
                e, d = d, p / q
            else:
                d = e = m
        else:
            d = e = m
        a, fa = b, fb
        b += d if abs(d) > tol else math.copysign(tol, m)
        fb = f(b)
        trace.append((b, fb))
    raise IterationLimit(f"no convergence in {max_iter} iterations; last iterates {trace[-3:]}")


def _bracket(f, lo, hi, scan_points):
    """Endpoint values, or the first sign-changing cell of a uniform scan."""
    flo, fhi = f(lo), f(hi)
    if flo == 0 or fhi == 0 or (flo > 0) != (fhi > 0):
        return lo, hi, flo, fhi, None
    grid = np.linspace(lo, hi, scan_points)
    vals = [flo] + [f(t) for t in grid[1:-1]] + [fhi]
    changes = [i for i in range(len(grid) - 1) if vals[i] == 0 or (vals[i] > 0) != (vals[i + 1] > 0)]
    if not changes:
        raise NoBracketedRoot(
            f"no bracketed root: m(t) - x keeps one sign on {scan_points} points in ({lo:g}, {hi:g}); "
            "the target may lie outside the range of the mean curve"
        )
    i = changes[0]
    return grid[i], grid[i + 1], vals[i], vals[i + 1], len(changes)


@dataclass
class TimeResult:
    t: float
    value: float
    residual: float
    iterations: int
    trace: list
    sign_changes: int | None = None
    std_error: float = 0.0
    stages: list = field(default_factory=list)


def _margin(lo, hi):
    eps = 1e-9 * (hi - lo)
    return lo + eps, hi - eps


def _solve_curve(curve, query: TimeQuery, scan_points: int, max_iter: int, lo=None, hi=None) -> TimeResult:
    lo0, hi0 = _margin(*query.bracket)
    lo = lo0 if lo is None else lo
    hi = hi0 if hi is None else hi
    f = lambda t: curve(t) - query.target
    a, b, fa, fb, changes = _bracket(f, lo, hi, scan_points)
    sol = brent(f, a, b, fa, fb, query.tol, query.time_tol, max_iter)
    return TimeResult(sol.root, sol.value + query.target, sol.value, sol.iterations, sol.trace, changes)


def find_time(free: FreeSlice, query: TimeQuery, *, scan_points: int = 32, max_iter: int = 100) -> TimeResult:
    _check_bracket(free, query)
    if isinstance(query.estimator, MonteCarlo):
        return _retrospective(free, query, scan_points, max_iter)
    return _solve_curve(lambda t: conditional_moments(free, query, t)[0], query, scan_points, max_iter)


def find_time_quantile(free: FreeSlice, query: TimeQuery, q: float, *, scan_points: int = 32,
                       max_iter: int = 100) -> TimeResult:
    """Root of the ``q``-quantile curve ``m(t) + z_q sd(t)`` minus the target (Gaussian node)."""
    if not 0.0 < q < 1.0:
        raise ValueError("quantile level must lie in (0, 1)")
    if free.structure.family(query.process) != GAUSSIAN:
        raise ValueError("quantile curves need a Gaussian node")
    if not isinstance(query.estimator, Exact):
        raise ValueError("quantile curves use the exact estimator")
    _check_bracket(free, query)
    z = float(norm.ppf(q))

    def curve(t):
        m, v, _ = conditional_moments(free, query, t)
        return m + z * math.sqrt(max(v, 0.0))

    return _solve_curve(curve, query, scan_points, max_iter)


def _retrospective(free: FreeSlice, query: TimeQuery, scan_points: int, max_iter: int) -> TimeResult:
    est: MonteCarlo = query.estimator
    lo0, hi0 = _margin(*query.bracket)
    seeds = np.random.SeedSequence(est.seed)
    n = min(est.initial_count, est.count)
    sizes = []
    while n < est.count:
        sizes.append(n)
        n *= est.growth
    sizes.append(max(n, est.count))

    stages = []
    root = None
    total_iter = 0
    changes = None
    trace: list = []
    for k, size in enumerate(sizes):
        stage_seed = int(seeds.spawn(1)[0].generate_state(1)[0])
        curve = lambda t, s=stage_seed, c=size: conditional_moments(free, query, t, rng_seed=s, count=c)[0]
        last = k == len(sizes) - 1
        if last:
            stage_tol = query.tol
        else:
            se = conditional_moments(free, query, root if root is not None else 0.5 * (lo0 + hi0),
                                     rng_seed=stage_seed, count=size)[2]
            stage_tol = max(query.tol, 0.1 * se)
        stage_query = TimeQuery(query.process, query.slice, query.bracket, query.target, stage_tol,
                                query.time_tol, query.estimator)
        res = None
        if root is not None:
            # warm start: grow a window around the previous root until it brackets
            width = (hi0 - lo0) * 0.5 ** (k + 2)
            while width < (hi0 - lo0):
                a, b = max(lo0, root - width), min(hi0, root + width)
                fa, fb = curve(a) - query.target, curve(b) - query.target
                if fa == 0 or fb == 0 or (fa > 0) != (fb > 0):
                    sol = brent(lambda t: curve(t) - query.target, a, b, fa, fb, stage_tol, query.time_tol, max_iter)
                    res = TimeResult(sol.root, sol.value + query.target, sol.value, sol.iterations, sol.trace)
                    break
                width *= 2.0
        if res is None:
            res = _solve_curve(curve, stage_query, scan_points, max_iter)
            changes = res.sign_changes if changes is None else changes
        root = res.t
        total_iter += res.iterations
        trace.extend(res.trace)
        _, _, se = conditional_moments(free, query, root, rng_seed=stage_seed, count=size)
        stages.append({"samples": size, "root": root, "residual": res.residual, "tol": stage_tol,
                       "std_error": se, "iterations": res.iterations})
    final = stages[-1]
    return TimeResult(root, final["residual"] + query.target, final["residual"], total_iter, trace,
                      changes, final["std_error"], stages)
