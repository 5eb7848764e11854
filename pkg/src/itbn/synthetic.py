"""Synthetic models and corpora for experiments and tests."""

from __future__ import annotations

from fractions import Fraction

import numpy as np

from .infer import sample_paths
from .model import (
    BernoulliInitial,
    BernoulliLogitCpd,
    EdgeDecl,
    GaussianInitial,
    GaussianLinearCpd,
    ItbnStructure,
    ProcessDecl,
    ProcessParams,
    ProcessSpec,
    SplineConfig,
)
from .observations import ObservationSet
from .splines import SplineSpec
from .timegrid import Timeline, simulate_geometric_timeline

# quarter-hour clock, times in hours
GLUCOSE_RESOLUTION = Fraction(1, 4)


def glucose_like_model() -> tuple[ItbnStructure, dict[str, ProcessParams]]:
    """One hidden Gaussian glucose process with gap-dependent mean reversion."""
    spec = ProcessSpec(SplineConfig(1, "auto", 1), SplineConfig(1, "auto", 1))
    structure = ItbnStructure(
        [ProcessDecl("glucose", "gaussian")],
        [EdgeDecl("glucose", "glucose", "previous", 0, "autoregressive")],
        {"glucose": spec},
        GLUCOSE_RESOLUTION,
    )
    # beta decays from ~0.9 at short gaps towards ~0.3 for gaps beyond 3 h; the
    # intercept compensates so the stationary level stays near 6 mmol/l
    alpha = SplineSpec(1, (3.0,), np.array([0.3, 0.6, -0.6]))
    beta = SplineSpec(1, (3.0,), np.array([0.95, -0.2, 0.2]))
    params = {"glucose": ProcessParams(GaussianLinearCpd(alpha, beta, np.zeros(0), 1.0 / 0.25), GaussianInitial(6.0, 1.0))}
    return structure, params


def glucose_like_timeline(n: int, rng: np.random.Generator, entity_id=None, p: float = 0.23) -> Timeline:
    """``n`` observation times on the quarter-hour clock with geometric gaps."""
    tl = simulate_geometric_timeline(n, p, rng, entity_id)
    return Timeline(tl.ticks, GLUCOSE_RESOLUTION, entity_id)


def glucose_like_corpus(seed: int = 0, entities: int = 6, observations: int = 63) -> ObservationSet:
    """Irregular glucose-like series: ``entities`` subjects, ``observations`` readings each."""
    structure, params = glucose_like_model()
    rng = np.random.default_rng(seed)
    out = ObservationSet()
    for e in range(entities):
        tl = glucose_like_timeline(observations, rng, f"s{e + 1}")
        path = sample_paths(structure, params, tl, 1, rng).entities[0]
        path.timeline = tl
        out.entities[tl.entity_id] = path
    return out


def random_gaussian_itbn(
    rng: np.random.Generator, n_processes: int, *, delays: bool = False, degree_max: int = 2
) -> tuple[ItbnStructure, dict[str, ProcessParams]]:
    """Random all-Gaussian structure with an intra-slice DAG, AR edges and spline CPDs."""
    names = [f"X{i}" for i in range(n_processes)]
    edges, n_gamma = [], {n: 0 for n in names}
    for i, child in enumerate(names):
        if rng.random() < 0.8:
            edges.append(EdgeDecl(child, child, "previous", 0, "autoregressive"))
        for parent in names[:i]:
            if rng.random() < 0.5:
                d = Fraction(int(rng.integers(1, 4)), 2) if delays and rng.random() < 0.3 else 0
                edges.append(EdgeDecl(parent, child, "intra", d))
                n_gamma[child] += 1
        for parent in names:
            if parent != child and rng.random() < 0.2:
                edges.append(EdgeDecl(parent, child, "previous", 0))
                n_gamma[child] += 1
    structure = ItbnStructure([ProcessDecl(n, "gaussian") for n in names], edges, {}, Fraction(1, 1000))
    params = {}
    for n in names:
        alpha = _random_spline(rng, degree_max, scale=1.0)
        beta = _random_spline(rng, degree_max, scale=0.4) if structure.ar_edge(n) is not None else None
        gamma = rng.normal(0.0, 0.5, n_gamma[n])
        cpd = GaussianLinearCpd(alpha, beta, gamma, float(rng.uniform(0.5, 4.0)))
        params[n] = ProcessParams(cpd, GaussianInitial(float(rng.normal()), float(rng.uniform(0.5, 2.0))))
    return structure, params


def _random_spline(rng, degree_max, scale) -> SplineSpec:
    d = int(rng.integers(0, degree_max + 1))
    k = int(rng.integers(0, 3))
    knots = tuple(sorted(float(x) for x in rng.uniform(0.2, 2.0, k)))
    coef = rng.normal(0.0, scale, d + 1 + k)
    coef[1 : d + 1 + k] *= 0.3
    return SplineSpec(d, knots, coef)


def mixed_three_process(seed: int) -> tuple[ItbnStructure, dict[str, ProcessParams]]:
    """Gaussian driver, logit event and Gaussian response with spline CPDs."""
    rng = np.random.default_rng(seed)
    spec_g = ProcessSpec(SplineConfig(1, "auto", 2), SplineConfig(1, "auto", 1), lam=0.5)
    spec_b = ProcessSpec(SplineConfig(1, "auto", 1), SplineConfig(0, "auto", 0), lam=0.5)
    structure = ItbnStructure(
        [ProcessDecl("A", "gaussian"), ProcessDecl("E", "bernoulli"), ProcessDecl("R", "gaussian")],
        [
            EdgeDecl("A", "A", "previous", 0, "autoregressive"),
            EdgeDecl("E", "E", "previous", 0, "autoregressive"),
            EdgeDecl("R", "R", "previous", 0, "autoregressive"),
            EdgeDecl("A", "E", "intra", 0),
            EdgeDecl("A", "R", "intra", 0),
            EdgeDecl("E", "R", "intra", 0),
        ],
        {"A": spec_g, "E": spec_b, "R": spec_g},
        Fraction(1, 100),
    )
    u = rng.uniform(0.8, 1.2)
    params = {
        "A": ProcessParams(
            GaussianLinearCpd(SplineSpec(1, (1.0,), np.array([0.2 * u, 0.1, -0.1])), SplineSpec(0, (), np.array([0.7])),
                              np.zeros(0), 4.0),
            GaussianInitial(0.5, 1.0),
        ),
        "E": ProcessParams(
            BernoulliLogitCpd(SplineSpec(1, (), np.array([-0.5, 0.3])), SplineSpec(0, (), np.array([1.0 * u])),
                              np.array([0.8])),
            BernoulliInitial(0.4),
        ),
        "R": ProcessParams(
            GaussianLinearCpd(SplineSpec(1, (), np.array([0.5, -0.2])), SplineSpec(0, (), np.array([0.5])),
                              np.array([0.6, -1.0 * u]), 2.0),
            GaussianInitial(0.0, 1.0),
        ),
    }
    return structure, params
