"""Discrete-time restricted baseline for a single autoregressive Gaussian process.

The restricted model is an ordinary first-order DBN on the granularity grid:
``y[k+1] = a + b y[k] + e``, ``e ~ N(0, s2)``. It is fitted with the same
learning code as the ITBN, on data expanded to every grid step (missing grid
values linearly interpolated) and with gap-invariant coefficients. It is then
scored on the observed irregular transitions through its implied m-step
marginal, so both models are evaluated on identical observations.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from functools import reduce

import numpy as np

from .learn import FitResult, fit_fully_observed, _initial_rows, initial_loglik
from .model import GAUSSIAN, GaussianInitial, ItbnStructure, ProcessSpec, SplineConfig
from .observations import EntityData, ObservationSet
from .timegrid import Timeline

LOG_2PI = math.log(2.0 * math.pi)


@dataclass
class DiscreteAR:
    process: str
    step: Fraction
    a: float
    b: float
    var: float
    initial: GaussianInitial
    fit: FitResult

    def step_moments(self, m: int, y: float) -> tuple[float, float]:
        """Mean and variance of ``y`` advanced ``m`` grid steps."""
        b = self.b
        if abs(b - 1.0) < 1e-12:
            geo, geo2 = float(m), float(m)
        else:
            geo = (1.0 - b**m) / (1.0 - b)
            geo2 = (1.0 - b ** (2 * m)) / (1.0 - b * b) if abs(b) != 1.0 else float(m)
        return self.a * geo + b**m * y, self.var * geo2


def _single_ar_process(structure: ItbnStructure) -> str:
    if len(structure.processes) != 1:
        raise ValueError("the restricted baseline handles a single process")
    name = structure.names[0]
    if structure.family(name) != GAUSSIAN or structure.ar_edge(name) is None:
        raise ValueError("the restricted baseline needs a Gaussian process with an autoregressive edge")
    return name


def common_granularity(data: ObservationSet) -> int:
    """gcd of every gap in every entity, in ticks."""
    g = 0
    for _, ed in data:
        ticks = np.asarray(ed.timeline.ticks, dtype=np.int64)
        if ticks.size > 1:
            g = reduce(math.gcd, np.diff(ticks).tolist(), g)
    if g == 0:
        raise ValueError("no gaps in the data")
    return g


def expand_to_grid(data: ObservationSet, process: str, step_ticks: int) -> ObservationSet:
    """Every entity on its granularity grid, missing grid values linearly interpolated."""
    out = ObservationSet()
    for entity, ed in data:
        ticks = np.asarray(ed.timeline.ticks, dtype=np.int64)
        vals = np.array([ed.values[(process, j)] for j in range(ticks.size)])
        grid = np.arange(ticks[0], ticks[-1] + 1, step_ticks, dtype=np.int64)
        y = np.interp(grid.astype(float), ticks.astype(float), vals)
        tl = Timeline(tuple(int(t) for t in grid), ed.timeline.resolution, entity)
        out.entities[entity] = EntityData(tl, {(process, k): float(v) for k, v in enumerate(y)})
    return out


def fit_discrete_restricted(structure: ItbnStructure, data: ObservationSet) -> DiscreteAR:
    process = _single_ar_process(structure)
    step = common_granularity(data)
    grid_data = expand_to_grid(data, process, step)
    spec = structure.specs[process]
    flat = ProcessSpec(SplineConfig(0, (), 0), SplineConfig(0, (), 0), 0.0, spec.initial)
    fit = fit_fully_observed(structure.with_spec(process, flat), grid_data)
    cpd = fit.params[process].cpd
    # slice 0 is identical in both data sets, so the root CPDs coincide
    init = fit.params[process].initial
    return DiscreteAR(
        process, step * structure.resolution, float(cpd.alpha.coefficients[0]), float(cpd.beta.coefficients[0]),
        1.0 / cpd.tau, init, fit,
    )


def discrete_loglik(model: DiscreteAR, structure: ItbnStructure, data: ObservationSet) -> float:
    """Log-likelihood of the observed irregular data under the restricted model."""
    p = model.process
    y0, off0 = _initial_rows(structure, data, p, np.zeros(0))
    total = initial_loglik(model.initial, y0, off0)
    step_ticks = int(model.step / structure.resolution)
    for _, ed in data:
        ticks = ed.timeline.ticks
        for j in range(1, len(ticks)):
            m = (ticks[j] - ticks[j - 1]) // step_ticks
            mean, var = model.step_moments(m, ed.values[(p, j - 1)])
            r = ed.values[(p, j)] - mean
            total += -0.5 * (LOG_2PI + math.log(var)) - 0.5 * r * r / var
    return float(total)
