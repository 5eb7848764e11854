"""Parameter learning for fully observed ITBNs.

The fully observed likelihood factorizes over processes, so each process is
fitted by its own penalized regression of child values on
``[alpha-basis(gap) | beta-basis(gap) * y_prev | gamma parents]``. Each such
problem is strictly convex when the design has full rank, so the joint
maximizer is the collection of per-process maximizers.
"""

from __future__ import annotations

import logging
import math
from collections import Counter
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
from scipy import linalg, optimize
from scipy.special import expit

from .model import (
    BERNOULLI,
    GAUSSIAN,
    INTRA,
    BernoulliInitial,
    BernoulliLogitCpd,
    DelayOutOfRange,
    EdgeDecl,
    GaussianInitial,
    GaussianLinearCpd,
    GroundedNetwork,
    ItbnStructure,
    ModelError,
    ProcessParams,
    ProcessSpec,
    SplineConfig,
    check,
    unroll,
)
from .observations import ObservationSet
from .splines import SplineSpec, choose_knots, design_matrix, penalty_matrix

log = logging.getLogger(__name__)

LOG_2PI = math.log(2.0 * math.pi)


class LearnError(ValueError):
    pass


class NotFullyObserved(LearnError):
    pass


class SingularDesign(LearnError):
    pass


class ZeroResidual(LearnError):
    pass


class SeparationError(LearnError):
    pass


class ConvergenceError(LearnError):
    pass


# --------------------------------------------------------------------------- regression assembly


@dataclass
class Regression:
    process: str
    family: str
    X: np.ndarray
    y: np.ndarray
    penalty: np.ndarray
    alpha: SplineSpec
    beta: SplineSpec | None
    n_gamma: int
    rows: list = field(default_factory=list)
    interpolated: int = 0
    invented: int = 0

    @property
    def n(self) -> int:
        return self.y.size

    def blocks(self) -> dict[str, slice]:
        a = self.alpha.size
        b = 0 if self.beta is None else self.beta.size
        return {"alpha": slice(0, a), "beta": slice(a, a + b), "gamma": slice(a + b, a + b + self.n_gamma)}

    def unpack(self, theta: np.ndarray) -> tuple[SplineSpec, SplineSpec | None, np.ndarray]:
        blk = self.blocks()
        alpha = self.alpha.with_coefficients(theta[blk["alpha"]])
        beta = None if self.beta is None else self.beta.with_coefficients(theta[blk["beta"]])
        return alpha, beta, np.array(theta[blk["gamma"]])


def pack(cpd) -> np.ndarray:
    parts = [cpd.alpha.coefficients]
    if cpd.beta is not None:
        parts.append(cpd.beta.coefficients)
    parts.append(cpd.gamma)
    return np.concatenate(parts)


class _ParentValues:
    """Looks up observed node values, optionally interpolating missing ones."""

    def __init__(self, structure: ItbnStructure, entity, data, interpolate: bool):
        self.entity = entity
        self.data = data
        self.interpolate = interpolate
        self.offsets = {p.name: p.offset for p in structure.processes}
        self._series: dict[str, tuple[np.ndarray, np.ndarray]] = {}
        self.count = 0
        self.seen: set[int] = set()

    def __call__(self, net: GroundedNetwork, idx: int) -> float:
        node = net.nodes[idx]
        if not node.invented:
            v = self.data.values.get((node.process, node.slice))
            if v is not None:
                return v
        if not self.interpolate:
            kind = "invented node" if node.invented else "node"
            raise NotFullyObserved(
                f"entity {self.entity!r}: {kind} {node.process} at time {float(node.time):g} "
                f"(slice {node.slice}) is a required parent but is not observed; "
                "the data are not fully observed (consider interpolate_parents)"
            )
        if node.process not in self._series:
            self._series[node.process] = self.data.observed_series(node.process, self.offsets[node.process])
        t, v = self._series[node.process]
        s = float(node.time)
        if t.size == 0 or s < t[0] or s > t[-1]:
            raise NotFullyObserved(
                f"entity {self.entity!r}: cannot interpolate {node.process} at time {s:g}; "
                "outside the observed range of that process"
            )
        if idx not in self.seen:
            self.seen.add(idx)
            self.count += 1
        return float(np.interp(s, t, v))


def _resolve_knots(cfg: SplineConfig, gaps: np.ndarray, given) -> np.ndarray:
    if given is not None:
        return np.asarray(given, dtype=float)
    if cfg.auto:
        return choose_knots(gaps, cfg.count)
    return np.asarray(cfg.knots, dtype=float)


def assemble_regression(
    structure: ItbnStructure,
    data: ObservationSet,
    process: str,
    *,
    knots: dict | None = None,
    interpolate_parents: bool = False,
    exclude: set | None = None,
) -> Regression:
    """Design matrix, response and penalty for one process's transition CPD.

    One row per observed child instance at slices ``j >= 1`` across entities.
    ``knots`` may override the configured knots per block (``"alpha"``,
    ``"beta"``). ``exclude`` is a set of ``(entity, slice)`` rows to drop; when
    given, delayed parents falling before the first slice are tolerated on
    excluded rows.
    """
    check(structure)
    spec: ProcessSpec = structure.specs[process]
    family = structure.family(process)
    has_ar = structure.ar_edge(process) is not None
    n_gamma = len(structure.gamma_edges(process))
    knots = knots or {}

    gaps, yprev, gam, ys, rows = [], [], [], [], []
    interpolated = 0
    invented: set = set()
    for entity, ed in data:
        net = unroll(structure, ed.timeline, out_of_range="skip" if exclude is not None else "error")
        lookup = _ParentValues(structure, entity, ed, interpolate_parents)
        for j in range(1, len(ed.timeline)):
            y = ed.values.get((process, j))
            if y is None or (exclude is not None and (entity, j) in exclude):
                continue
            node = net.nodes[net.index(process, j)]
            gvals = np.zeros(n_gamma)
            for pos, parent in node.gamma_parents:
                if parent is None:
                    raise DelayOutOfRange(f"entity {entity!r}, slice {j}: delayed parent precedes the first slice")
                gvals[pos] = lookup(net, parent)
                if net.nodes[parent].invented:
                    invented.add((entity, parent))
            gaps.append(node.gap)
            yprev.append(lookup(net, node.ar_parent) if has_ar else 0.0)
            gam.append(gvals)
            ys.append(y)
            rows.append((entity, j))
        interpolated += lookup.count

    gaps = np.asarray(gaps, dtype=float)
    yprev = np.asarray(yprev, dtype=float)
    a_knots = _resolve_knots(spec.alpha, gaps, knots.get("alpha"))
    blocks = [design_matrix(spec.alpha.degree, a_knots, gaps)]
    pens = [penalty_matrix(spec.alpha.degree, a_knots.size, spec.lam)]
    alpha = SplineSpec(spec.alpha.degree, tuple(a_knots))
    beta = None
    if has_ar:
        b_knots = _resolve_knots(spec.beta, gaps, knots.get("beta"))
        blocks.append(design_matrix(spec.beta.degree, b_knots, gaps) * yprev[:, None])
        pens.append(penalty_matrix(spec.beta.degree, b_knots.size, spec.lam))
        beta = SplineSpec(spec.beta.degree, tuple(b_knots))
    blocks.append(np.asarray(gam, dtype=float).reshape(len(ys), n_gamma))
    pens.append(np.zeros((n_gamma, n_gamma)))
    return Regression(
        process, family, np.hstack(blocks), np.asarray(ys, dtype=float), linalg.block_diag(*pens),
        alpha, beta, n_gamma, rows, interpolated, len(invented),
    )


# --------------------------------------------------------------------------- solvers


@dataclass
class GaussianFit:
    coefficients: np.ndarray
    tau: float
    rss: float
    edf: float
    covariance: np.ndarray  # inverse of the penalized information matrix
    objective: float
    loglik: float

    @property
    def standard_errors(self) -> np.ndarray:
        return np.sqrt(np.diag(self.covariance))


@dataclass
class LogitFit:
    coefficients: np.ndarray
    edf: float
    covariance: np.ndarray
    objective: float
    loglik: float
    iterations: int
    gradient_norm: float

    @property
    def standard_errors(self) -> np.ndarray:
        return np.sqrt(np.diag(self.covariance))


def _psd_sqrt(P: np.ndarray) -> np.ndarray:
    if np.count_nonzero(P - np.diag(np.diag(P))) == 0:
        return np.diag(np.sqrt(np.diag(P)))
    w, V = np.linalg.eigh(P)
    return (V * np.sqrt(np.clip(w, 0.0, None))) @ V.T


def gaussian_objective(X, y, P, theta) -> float:
    r = y - X @ theta
    return float(r @ r + theta @ P @ theta)


def fit_gaussian(X: np.ndarray, y: np.ndarray, penalty: np.ndarray, rank_tol: float = 1e-10) -> GaussianFit:
    """Minimize ``||y - X theta||^2 + theta' P theta`` by pivoted QR of the augmented design."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n, k = X.shape
    if n == 0:
        raise SingularDesign("no rows to fit")
    A = np.vstack([X, _psd_sqrt(penalty)])
    b = np.concatenate([y, np.zeros(k)])
    Q, R, piv = linalg.qr(A, mode="economic", pivoting=True)
    d = np.abs(np.diag(R))
    if k and d[-1] <= rank_tol * d[0]:
        raise SingularDesign(
            f"design is singular (rank < {k} columns); use a positive penalty or fewer knots"
        )
    theta = np.empty(k)
    theta[piv] = linalg.solve_triangular(R, Q.T @ b)
    resid = y - X @ theta
    rss = float(resid @ resid)
    if rss <= 1e-24 * max(1.0, float(y @ y)):
        raise ZeroResidual("zero residual: the design interpolates the response, precision is unbounded")
    Rinv = linalg.solve_triangular(R, np.eye(k))
    inv = np.empty((k, k))
    inv[np.ix_(piv, piv)] = Rinv @ Rinv.T  # (X'X + P)^-1
    edf = float(np.sum((X[:, piv] @ Rinv) ** 2))
    tau = n / rss
    loglik = 0.5 * n * (math.log(tau) - LOG_2PI) - 0.5 * tau * rss
    return GaussianFit(theta, tau, rss, edf, inv / tau, gaussian_objective(X, y, penalty, theta), loglik)


def logit_loglik(X, y, theta) -> float:
    eta = X @ theta
    return float(y @ eta - np.sum(np.logaddexp(0.0, eta)))


def logit_objective(X, y, P, theta) -> float:
    """Penalized deviance ``-2 loglik + theta' P theta``."""
    return -2.0 * logit_loglik(X, y, theta) + float(theta @ P @ theta)


def _separating_direction(X, y, P, tol=1e-7) -> np.ndarray | None:
    """A direction in the penalty's null space along which the likelihood never decreases."""
    w, V = np.linalg.eigh(P)
    null = V[:, w <= 1e-12 * max(1.0, np.abs(w).max(initial=0.0))]
    if null.shape[1] == 0:
        return None
    s = np.where(y > 0.5, 1.0, -1.0)
    M = (s[:, None] * X) @ null
    res = optimize.linprog(
        -M.sum(axis=0), A_ub=-M, b_ub=np.zeros(len(y)), bounds=[(-1, 1)] * null.shape[1], method="highs"
    )
    if res.status == 0 and -res.fun > tol * max(1.0, np.abs(M).max()):
        return null @ res.x
    return None


def fit_logit(
    X: np.ndarray, y: np.ndarray, penalty: np.ndarray, tol: float = 1e-8, max_iter: int = 100
) -> LogitFit:
    """Penalized Bernoulli-logit maximum likelihood by damped Newton iterations.

    Raises :class:`SeparationError` when the unpenalized part of the problem
    admits a (quasi-)separating direction, since no finite maximizer exists.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if np.any((y != 0) & (y != 1)):
        raise LearnError("logit responses must be 0 or 1")
    n, k = X.shape
    if n == 0:
        raise SingularDesign("no rows to fit")
    if _separating_direction(X, y, penalty) is not None:
        raise SeparationError("complete or quasi-complete separation: no finite maximizer")
    theta = np.zeros(k)
    obj = logit_objective(X, y, penalty, theta)
    trace = []
    for it in range(1, max_iter + 1):
        p = expit(X @ theta)
        grad = X.T @ (y - p) - penalty @ theta
        gnorm = float(np.linalg.norm(grad))
        trace.append((it, obj, gnorm))
        if gnorm <= tol:
            break
        H = (X * (p * (1 - p))[:, None]).T @ X + penalty
        try:
            step = linalg.solve(H, grad, assume_a="pos")
        except linalg.LinAlgError as exc:
            raise SingularDesign("logit information matrix is singular") from exc
        # near the optimum a full step may "increase" the objective by rounding alone
        slack = 64 * np.finfo(float).eps * max(1.0, abs(obj))
        t = 1.0
        while True:
            cand = theta + t * step
            cobj = logit_objective(X, y, penalty, cand)
            if cobj <= obj + slack or t < 1e-10:
                break
            t *= 0.5
        if t < 1e-10 and cobj > obj + slack:
            break
        theta, obj = cand, cobj
    else:
        raise ConvergenceError(f"logit fit did not converge in {max_iter} iterations; trace tail {trace[-3:]}")
    p = expit(X @ theta)
    grad = X.T @ (y - p) - penalty @ theta
    gnorm = float(np.linalg.norm(grad))
    if gnorm > tol:
        raise ConvergenceError(f"logit fit stalled with gradient norm {gnorm:.3g}; trace tail {trace[-3:]}")
    info = (X * (p * (1 - p))[:, None]).T @ X
    cov = linalg.inv(info + penalty)
    edf = float(np.trace(cov @ info))
    return LogitFit(theta, edf, cov, obj, logit_loglik(X, y, theta), it, gnorm)


# --------------------------------------------------------------------------- per-process fitting


@dataclass
class ProcessFit:
    process: str
    family: str
    params: ProcessParams
    n_rows: int
    edf: float
    loglik: float  # transition terms
    initial_loglik: float
    objective: float
    penalized_loglik: float
    standard_errors: np.ndarray
    covariance: np.ndarray
    regression: Regression | None = None
    diagnostics: dict = field(default_factory=dict)

    @property
    def total_loglik(self) -> float:
        return self.loglik + self.initial_loglik


@dataclass
class FitResult:
    processes: dict[str, ProcessFit]
    options: dict = field(default_factory=dict)
    diagnostics: dict = field(default_factory=dict)

    @property
    def params(self) -> dict[str, ProcessParams]:
        return {k: v.params for k, v in self.processes.items()}

    @property
    def loglik(self) -> float:
        return float(sum(p.total_loglik for p in self.processes.values()))

    @property
    def objective(self) -> float:
        return float(sum(p.objective for p in self.processes.values()))


def _initial_rows(structure: ItbnStructure, data: ObservationSet, process: str, gamma: np.ndarray):
    """Slice-0 values and the linear contribution of undelayed intra-slice parents."""
    edges = [(pos, e) for pos, e in enumerate(structure.gamma_edges(process)) if e.lag == INTRA and e.delay == 0]
    ys, offs = [], []
    for _, ed in data:
        y = ed.values.get((process, 0))
        if y is None:
            continue
        vals = [ed.values.get((e.parent, 0)) for _, e in edges]
        if any(v is None for v in vals):
            continue
        ys.append(y)
        offs.append(sum(float(gamma[pos]) * v for (pos, _), v in zip(edges, vals)))
    return np.asarray(ys, dtype=float), np.asarray(offs, dtype=float)


def initial_loglik(init, y: np.ndarray, offset: np.ndarray) -> float:
    if y.size == 0:
        return 0.0
    if isinstance(init, GaussianInitial):
        r = y - init.mu0 - offset
        return float(0.5 * y.size * (math.log(init.tau0) - LOG_2PI) - 0.5 * init.tau0 * (r @ r))
    eta = math.log(init.p0) - math.log1p(-init.p0) + offset
    return float(y @ eta - np.sum(np.logaddexp(0.0, eta)))


def _fit_initial(family: str, y: np.ndarray, offset: np.ndarray, fallback_var: float):
    """Root-slice parameters by sample moments of the offset-adjusted slice-0 values."""
    notes = {}
    if family == GAUSSIAN:
        if y.size == 0:
            notes["initial"] = "no slice-0 data; mean 0, transition variance"
            return GaussianInitial(0.0, 1.0 / fallback_var), notes
        r = y - offset
        mu0 = float(r.mean())
        var = float(np.mean((r - mu0) ** 2))
        if y.size < 2 or var <= 1e-12 * max(1.0, mu0 * mu0):
            notes["initial"] = "slice-0 variance not estimable; using transition variance"
            var = fallback_var
        return GaussianInitial(mu0, 1.0 / var), notes
    n = y.size
    lo, hi = 0.5 / (n + 1), 1 - 0.5 / (n + 1)
    if n == 0:
        return BernoulliInitial(0.5), {"initial": "no slice-0 data; p0 = 0.5"}
    s = float(y.sum())
    if 0 < s < n and np.any(offset != 0):
        a = optimize.brentq(lambda a: float(np.sum(y - expit(a + offset))), -50.0, 50.0, xtol=1e-14)
        p0 = float(expit(a))
    else:
        p0 = float(np.clip(s / n, lo, hi))
    return BernoulliInitial(min(max(p0, 1e-12), 1 - 1e-12)), notes


def fit_process(
    structure: ItbnStructure,
    data: ObservationSet,
    process: str,
    *,
    interpolate_parents: bool = False,
    knots: dict | None = None,
    exclude: set | None = None,
) -> ProcessFit:
    reg = assemble_regression(
        structure, data, process, knots=knots, interpolate_parents=interpolate_parents, exclude=exclude
    )
    try:
        if reg.family == GAUSSIAN:
            sol = fit_gaussian(reg.X, reg.y, reg.penalty)
        else:
            sol = fit_logit(reg.X, reg.y, reg.penalty)
    except LearnError as exc:
        raise type(exc)(f"process {process!r}: {exc}") from exc
    alpha, beta, gamma = reg.unpack(sol.coefficients)
    quad = float(sol.coefficients @ reg.penalty @ sol.coefficients)
    if reg.family == GAUSSIAN:
        cpd = GaussianLinearCpd(alpha, beta, gamma, sol.tau)
        fallback = 1.0 / sol.tau
        pll = sol.loglik - 0.5 * sol.tau * quad
    else:
        cpd = BernoulliLogitCpd(alpha, beta, gamma)
        fallback = 1.0
        pll = sol.loglik - 0.5 * quad
    y0, off0 = _initial_rows(structure, data, process, gamma)
    fixed = structure.specs[process].initial
    diagnostics = {"interpolated_parents": reg.interpolated, "invented_parents": reg.invented}
    if fixed is not None:
        init = fixed
        diagnostics["initial"] = "fixed by model spec"
    else:
        init, notes = _fit_initial(reg.family, y0, off0, fallback)
        diagnostics.update(notes)
    diagnostics["condition"] = float(np.linalg.cond(reg.X)) if reg.n else float("nan")
    return ProcessFit(
        process=process,
        family=reg.family,
        params=ProcessParams(cpd, init),
        n_rows=reg.n,
        edf=sol.edf,
        loglik=sol.loglik,
        initial_loglik=initial_loglik(init, y0, off0),
        objective=sol.objective,
        penalized_loglik=pll,
        standard_errors=sol.standard_errors,
        covariance=sol.covariance,
        regression=reg,
        diagnostics=diagnostics,
    )


def fit_fully_observed(
    structure: ItbnStructure,
    data: ObservationSet,
    *,
    interpolate_parents: bool = False,
    knots: dict | None = None,
) -> FitResult:
    """Fit every process's CPD independently.

    ``knots`` optionally maps process name to a per-block knot override as
    accepted by :func:`assemble_regression`.
    """
    check(structure)
    if not interpolate_parents and not data.is_irregularly_complete(structure.names):
        bad = [e for e, d in data if not d.is_irregularly_complete(structure.names)]
        raise NotFullyObserved(
            f"data are not irregularly complete for entities {[str(b) for b in bad[:5]]}"
            f"{' ...' if len(bad) > 5 else ''}; enable interpolate_parents to fit anyway"
        )
    knots = knots or {}
    fits = {
        name: fit_process(
            structure, data, name, interpolate_parents=interpolate_parents, knots=knots.get(name)
        )
        for name in structure.names
    }
    options = {
        "interpolate_parents": interpolate_parents,
        "precision": "maximum likelihood (N / RSS)",
        "penalty": "ridge on knot coefficients",
        "quantiles": "linear interpolation, position 1 + q (N - 1)",
        "initial": "slice-0 sample moments",
    }
    diagnostics = {
        "interpolated_parents": int(sum(f.diagnostics["interpolated_parents"] for f in fits.values())),
        "entities": len(data),
    }
    return FitResult(fits, options, diagnostics)


# --------------------------------------------------------------------------- likelihood


def transition_loglik(reg: Regression, cpd) -> float:
    if reg.n == 0:
        return 0.0
    eta = reg.X @ pack(cpd)
    if isinstance(cpd, GaussianLinearCpd):
        r = reg.y - eta
        return float(0.5 * reg.n * (math.log(cpd.tau) - LOG_2PI) - 0.5 * cpd.tau * (r @ r))
    return float(reg.y @ eta - np.sum(np.logaddexp(0.0, eta)))


def process_loglik(structure, params, data, process, *, interpolate_parents=False) -> tuple[float, float]:
    pp = params[process]
    knots = {"alpha": pp.cpd.alpha.knots}
    if pp.cpd.beta is not None:
        knots["beta"] = pp.cpd.beta.knots
    reg = assemble_regression(structure, data, process, knots=knots, interpolate_parents=interpolate_parents)
    y0, off0 = _initial_rows(structure, data, process, pp.cpd.gamma)
    return transition_loglik(reg, pp.cpd), initial_loglik(pp.initial, y0, off0)


def log_likelihood(structure: ItbnStructure, params, data: ObservationSet, *, interpolate_parents=False) -> float:
    """Fully observed log-likelihood: root-slice terms plus every transition term."""
    check(structure, params)
    total = 0.0
    for name in structure.names:
        a, b = process_loglik(structure, params, data, name, interpolate_parents=interpolate_parents)
        total += a + b
    return total


# --------------------------------------------------------------------------- structure search


def aicc(loglik: float, edf: float, n: int) -> float:
    if n - edf - 1 <= 0:
        return math.inf
    return -2.0 * loglik + 2.0 * edf * n / (n - edf - 1)


def select_knot_count(
    structure: ItbnStructure,
    data: ObservationSet,
    process: str,
    candidates,
    *,
    splines=("alpha",),
    interpolate_parents: bool = False,
) -> tuple[int, dict]:
    """Pick the knot count minimizing AICc with hat-matrix degrees of freedom.

    ``splines`` names the coefficient blocks whose knot count is varied; knots
    are placed at gap quantiles. Candidates that fail to fit are recorded and
    skipped.
    """
    candidates = sorted(set(int(c) for c in candidates))
    if not candidates:
        raise ValueError("no knot-count candidates")
    spec = structure.specs[process]
    scores: dict[int, float | str] = {}
    best = None
    for kappa in candidates:
        new = {
            part: SplineConfig(getattr(spec, part).degree, "auto", kappa) if part in splines else getattr(spec, part)
            for part in ("alpha", "beta")
        }
        trial = structure.with_spec(process, ProcessSpec(new["alpha"], new["beta"], spec.lam, spec.initial))
        try:
            f = fit_process(trial, data, process, interpolate_parents=interpolate_parents)
        except (LearnError, ValueError) as exc:
            scores[kappa] = f"failed: {exc}"
            continue
        score = aicc(f.loglik, f.edf, f.n_rows)
        scores[kappa] = score
        if best is None or score < scores[best]:
            best = kappa
    if best is None:
        raise LearnError(f"every knot-count candidate failed: {scores}")
    return best, scores


@dataclass
class OffsetCandidate:
    delay: Fraction
    frequency: int
    score: float
    penalized_loglik: float
    invented: int
    error: str | None = None


def offset_candidates(structure: ItbnStructure, data: ObservationSet, edge: EdgeDecl) -> Counter:
    """Delays realized in the data: reference time of an observed child minus a parent observation time."""
    off = {p.name: p.offset for p in structure.processes}
    counts: Counter = Counter()
    for _, ed in data:
        times = ed.timeline.exact_times
        parent_times = [times[j] + off[edge.parent] for (p, j) in ed.values if p == edge.parent]
        for (p, j) in ed.values:
            if p != edge.child or j < max(1, edge.lag):
                continue
            ref = times[j - edge.lag] + off[edge.parent]
            for tx in parent_times:
                if tx <= ref:
                    counts[ref - tx] += 1
    return counts


def search_offsets(
    structure: ItbnStructure,
    data: ObservationSet,
    edge: EdgeDecl,
    max_candidates: int = 10,
    *,
    compactness: float | None = None,
    interpolate_parents: bool = True,
) -> tuple[Fraction, list[OffsetCandidate]]:
    """Score candidate delays for one gamma edge and return the best.

    Score = penalized log-likelihood of the child's regression minus
    ``compactness`` per invented parent node (default ``log(rows) / 2``). All
    candidates are scored on the same rows: child slices whose delayed parent
    would precede the first slice under any candidate are dropped for all.
    """
    if edge not in structure.edges or edge.role != "gamma":
        raise ValueError("offset search needs one of the structure's gamma edges")
    counts = offset_candidates(structure, data, edge)
    if not counts:
        raise LearnError("no offset candidates: the data contain no child/parent time pairs")
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))[:max_candidates]

    off = {p.name: p.offset for p in structure.processes}
    exclude = set()
    for entity, ed in data:
        times = ed.timeline.exact_times
        first = times[0] + off[edge.parent]
        for j in range(1, len(times)):
            ref = times[j - edge.lag] + off[edge.parent] if j >= edge.lag else None
            if ref is None or any(ref - d < first for d, _ in ranked):
                exclude.add((entity, j))

    out = []
    for delay, freq in ranked:
        trial = structure.with_edge_delay(edge, delay)
        try:
            f = fit_process(trial, data, edge.child, interpolate_parents=interpolate_parents, exclude=exclude)
        except (LearnError, ModelError, ValueError) as exc:
            out.append(OffsetCandidate(delay, freq, -math.inf, -math.inf, 0, str(exc)))
            continue
        c = compactness if compactness is not None else 0.5 * math.log(max(f.n_rows, 2))
        inv = f.regression.invented
        out.append(OffsetCandidate(delay, freq, f.penalized_loglik - c * inv, f.penalized_loglik, inv))
    scored = [c for c in out if c.error is None]
    if not scored:
        raise LearnError(f"every offset candidate failed: {[c.error for c in out]}")
    best = max(scored, key=lambda c: (c.score, -c.invented, -c.delay))
    return best.delay, out
