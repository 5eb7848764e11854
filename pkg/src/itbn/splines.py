"""Truncated-power penalized splines for varying coefficients.

A coefficient beta(u) of degree ``d`` with knots ``u_1 < ... < u_K`` is

    beta(u) = sum_{j=0..d} c_j u^j + sum_{k=1..K} c_{d+k} (u - u_k)_+^d

where ``(u - u_k)_+^d`` is exactly zero for ``u <= u_k``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class KnotError(ValueError):
    pass


def truncated_power(u: float, knot: float, degree: int) -> float:
    if degree < 0:
        raise ValueError("degree must be nonnegative")
    if u <= knot:
        return 0.0
    if degree == 0:
        return 1.0
    return float(_ipow(np.float64(u - knot), degree))


def _ipow(x, degree: int):
    """``x ** degree`` by repeated products; identical rounding for scalars and arrays."""
    out = x
    for _ in range(degree - 1):
        out = out * x
    return out


def design_row(degree: int, knots, u: float) -> np.ndarray:
    """Basis vector [1, u, ..., u^d, b_1(u), ..., b_K(u)]."""
    knots = np.asarray(knots, dtype=float)
    row = np.empty(degree + 1 + knots.size)
    row[0] = 1.0
    for j in range(1, degree + 1):
        row[j] = row[j - 1] * u
    for k, knot in enumerate(knots):
        row[degree + 1 + k] = truncated_power(u, knot, degree)
    return row


def design_matrix(degree: int, knots, u) -> np.ndarray:
    """Stack of :func:`design_row` over a vector of effect-modifier values."""
    u = np.asarray(u, dtype=float)
    knots = np.asarray(knots, dtype=float)
    out = np.empty((u.size, degree + 1 + knots.size))
    out[:, 0] = 1.0
    for j in range(1, degree + 1):
        out[:, j] = out[:, j - 1] * u
    for k, knot in enumerate(knots):
        above = u > knot
        col = np.zeros(u.size)
        col[above] = 1.0 if degree == 0 else _ipow(u[above] - knot, degree)
        out[:, degree + 1 + k] = col
    return out


@dataclass(frozen=True)
class SplineSpec:
    """Degree, knots and coefficients of one varying coefficient."""

    degree: int
    knots: tuple[float, ...] = ()
    coefficients: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.degree < 0:
            raise ValueError("degree must be nonnegative")
        knots = tuple(float(k) for k in self.knots)
        if any(b <= a for a, b in zip(knots, knots[1:])):
            raise KnotError("knots must be strictly increasing")
        object.__setattr__(self, "knots", knots)
        coef = np.zeros(self.size) if self.coefficients is None else np.asarray(self.coefficients, dtype=float)
        if coef.shape != (self.size,):
            raise ValueError(f"expected {self.size} coefficients, got shape {coef.shape}")
        coef.setflags(write=False)
        object.__setattr__(self, "coefficients", coef)

    @property
    def size(self) -> int:
        return self.degree + len(self.knots) + 1

    @classmethod
    def constant(cls, value: float) -> "SplineSpec":
        return cls(0, (), np.array([value]))

    def with_coefficients(self, coefficients) -> "SplineSpec":
        return SplineSpec(self.degree, self.knots, np.asarray(coefficients, dtype=float))

    def __call__(self, u: float) -> float:
        return eval_coefficient(self, u)

    def __eq__(self, other):
        if not isinstance(other, SplineSpec):
            return NotImplemented
        return (
            self.degree == other.degree
            and self.knots == other.knots
            and np.array_equal(self.coefficients, other.coefficients)
        )

    __hash__ = None


def eval_coefficient(spec: SplineSpec, u: float) -> float:
    return float(design_row(spec.degree, spec.knots, u) @ spec.coefficients)


def choose_knots(samples, count: int) -> np.ndarray:
    """Knots at the k/(count+1) quantiles, linear interpolation between order statistics."""
    x = np.sort(np.asarray(samples, dtype=float))
    if count < 0:
        raise ValueError("knot count must be nonnegative")
    if count == 0:
        return np.empty(0)
    if x.size < 2:
        raise KnotError("need at least two samples to place knots")
    probs = np.arange(1, count + 1) / (count + 1)
    # numpy's "linear" method places quantile q at position 1 + q (N - 1).
    knots = np.quantile(x, probs, method="linear")
    if np.any(np.diff(knots) <= 0):
        raise KnotError(
            f"degenerate knots {knots.tolist()} from {np.unique(x).size} distinct values; "
            "use fewer knots"
        )
    return knots


def penalty_matrix(degree: int, count: int, lam: float) -> np.ndarray:
    """Ridge penalty on the knot coefficients only."""
    if lam < 0:
        raise ValueError(f"penalty weight must be nonnegative, got {lam}")
    diag = np.concatenate([np.zeros(degree + 1), np.full(count, float(lam))])
    return np.diag(diag)
