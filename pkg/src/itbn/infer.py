"""State estimation on grounded ITBNs.

All-Gaussian networks are linear-Gaussian: ``x = c + B x + e`` with ``B``
strictly lower triangular in node order. Two exact engines are provided:
``exact_joint`` conditions the dense joint in information form, and
``smooth`` runs a forward filter and Rauch-Tung-Striebel backward pass over
slices, which only needs per-slice blocks. Networks with logit nodes fall back
to likelihood weighting.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Mapping

import numpy as np
from scipy import linalg
from scipy.special import expit, log_expit

from .model import (
    GAUSSIAN,
    Grounder,
    GroundedNetwork,
    ItbnStructure,
    ModelError,
    Params,
    unroll,
)
from .observations import EntityData, ObservationSet
from .timegrid import Timeline, to_fraction

VAR_FLOOR = 1e-12
LOG_2PI = math.log(2.0 * math.pi)


class InferenceError(ValueError):
    pass


class NotGaussian(InferenceError):
    pass


class NotChainStructured(InferenceError):
    pass


class EvidenceIncompatible(InferenceError):
    pass


@dataclass
class GaussianBelief:
    keys: list
    mean: np.ndarray
    variance: np.ndarray
    covariance: np.ndarray | None = None
    time: Fraction | None = None

    def __getitem__(self, key) -> tuple[float, float]:
        i = self.keys.index(tuple(key))
        return float(self.mean[i]), float(self.variance[i])

    def __len__(self):
        return len(self.keys)


def _evidence_index(grounded: GroundedNetwork, evidence: Mapping | None) -> dict[int, float]:
    out = {}
    for key, value in (evidence or {}).items():
        try:
            out[grounded.key_index(tuple(key))] = float(value)
        except KeyError:
            raise InferenceError(f"evidence key {key!r} is not a node of the grounded network") from None
    return out


def _require_gaussian(grounded: GroundedNetwork) -> None:
    if grounded.params is None:
        raise InferenceError("network was grounded without parameters")
    if not grounded.all_gaussian():
        bad = sorted({n.process for n in grounded.nodes if n.family != GAUSSIAN})
        raise NotGaussian(f"not all-Gaussian: logit processes {bad}; use likelihood_weighting")


# --------------------------------------------------------------------------- dense oracle


def exact_joint(
    grounded: GroundedNetwork,
    evidence: Mapping | None = None,
    queries=None,
    *,
    size_cap: int = 2000,
    covariance: bool = False,
) -> GaussianBelief:
    """Posterior of the queried nodes by conditioning the dense joint Gaussian."""
    _require_gaussian(grounded)
    n = len(grounded)
    if n > size_cap:
        raise InferenceError(f"grounded network has {n} nodes, above the dense cap of {size_cap}")
    c, B, var = grounded.linear_form()
    if np.any(var <= 0) or not np.all(np.isfinite(var)):
        raise InferenceError("singular conditional: zero or infinite noise variance")
    dinv = 1.0 / np.maximum(var, VAR_FLOOR)
    L = np.eye(n) - B
    Lam = L.T @ (dinv[:, None] * L)
    h = L.T @ (dinv * c)

    ev = _evidence_index(grounded, evidence)
    e_idx = np.array(sorted(ev), dtype=int)
    u_idx = np.array([i for i in range(n) if i not in ev], dtype=int)
    mean = np.empty(n)
    cov = np.zeros((n, n))
    if e_idx.size:
        mean[e_idx] = [ev[i] for i in e_idx]
    if u_idx.size:
        Luu = Lam[np.ix_(u_idx, u_idx)]
        rhs = h[u_idx] - Lam[np.ix_(u_idx, e_idx)] @ mean[e_idx] if e_idx.size else h[u_idx]
        try:
            cf = linalg.cho_factor(Luu, lower=True)
        except linalg.LinAlgError as exc:
            raise InferenceError("posterior precision is not positive definite") from exc
        mean[u_idx] = linalg.cho_solve(cf, rhs)
        cov[np.ix_(u_idx, u_idx)] = linalg.cho_solve(cf, np.eye(u_idx.size))

    q = list(range(n)) if queries is None else [grounded.key_index(tuple(k)) for k in queries]
    keys = [grounded.nodes[i].key for i in q]
    sub = cov[np.ix_(q, q)]
    return GaussianBelief(keys, mean[q], np.diag(sub).copy(), sub if covariance else None)


# --------------------------------------------------------------------------- slice recursions


def _slice_system(nodes, idx: list[int], prev: list[int]):
    """Transition ``s_j = F s_{j-1} + b + noise(Q)`` for the nodes of one slice."""
    pos = {k: i for i, k in enumerate(idx)}
    ppos = {k: i for i, k in enumerate(prev)}
    m = len(idx)
    Bj = np.zeros((m, m))
    A = np.zeros((m, len(prev)))
    c = np.empty(m)
    d = np.empty(m)
    for i, k in enumerate(idx):
        node = nodes[k]
        c[i] = node.intercept
        d[i] = max(1.0 / node.precision, VAR_FLOOR)
        for p, w in node.weights.items():
            if p in pos:
                Bj[i, pos[p]] += w
            elif p in ppos:
                A[i, ppos[p]] += w
            else:
                raise NotChainStructured(
                    f"node {node.key} has parent {nodes[p].key} outside its own and the previous slice; "
                    "use exact_joint"
                )
    Linv = linalg.solve_triangular(np.eye(m) - Bj, np.eye(m), lower=True, unit_diagonal=True)
    return Linv @ A, Linv @ c, (Linv * d) @ Linv.T


def _condition(m: np.ndarray, P: np.ndarray, obs: dict[int, float]):
    """Condition a Gaussian on exact values of some coordinates."""
    if not obs:
        return m, P
    o = np.array(sorted(obs), dtype=int)
    v = np.array([obs[i] for i in o])
    Poo = P[np.ix_(o, o)]
    K = linalg.solve(Poo, P[o, :], assume_a="pos").T
    m = m + K @ (v - m[o])
    P = P - K @ P[o, :]
    m[o] = v
    P[o, :] = 0.0
    P[:, o] = 0.0
    return m, 0.5 * (P + P.T)


@dataclass
class _FilterStep:
    idx: list[int]
    F: np.ndarray
    m_pred: np.ndarray
    P_pred: np.ndarray
    m: np.ndarray
    P: np.ndarray


def _filter_step(nodes, idx, prev, m_prev, P_prev, obs) -> _FilterStep:
    F, b, Q = _slice_system(nodes, idx, prev)
    if prev:
        m_pred = F @ m_prev + b
        P_pred = F @ P_prev @ F.T + Q
    else:
        m_pred, P_pred = b, Q
    P_pred = 0.5 * (P_pred + P_pred.T)
    local = {idx.index(k): v for k, v in obs.items()}
    m, P = _condition(m_pred.copy(), P_pred.copy(), local)
    return _FilterStep(idx, F, m_pred, P_pred, m, P)


def forward_filter(grounded: GroundedNetwork, evidence: Mapping | None = None) -> list[_FilterStep]:
    _require_gaussian(grounded)
    ev = _evidence_index(grounded, evidence)
    steps: list[_FilterStep] = []
    prev: list[int] = []
    m_prev = P_prev = None
    for idx in grounded.slices():
        obs = {k: ev[k] for k in idx if k in ev}
        st = _filter_step(grounded.nodes, idx, prev, m_prev, P_prev, obs)
        steps.append(st)
        prev, m_prev, P_prev = idx, st.m, st.P
    return steps


def smooth(grounded: GroundedNetwork, evidence: Mapping | None = None, *, hidden_only: bool = False) -> GaussianBelief:
    """Marginal posteriors of every node given all evidence, slice by slice."""
    steps = forward_filter(grounded, evidence)
    n = len(grounded)
    mean = np.empty(n)
    var = np.empty(n)
    ms, Ps = steps[-1].m, steps[-1].P
    mean[steps[-1].idx] = ms
    var[steps[-1].idx] = np.diag(Ps)
    for j in range(len(steps) - 2, -1, -1):
        cur, nxt = steps[j], steps[j + 1]
        # J = P_f F' P_pred^{-1}
        J = linalg.solve(nxt.P_pred, nxt.F @ cur.P, assume_a="pos").T
        ms = cur.m + J @ (ms - nxt.m_pred)
        Ps = cur.P + J @ (Ps - nxt.P_pred) @ J.T
        Ps = 0.5 * (Ps + Ps.T)
        mean[cur.idx] = ms
        var[cur.idx] = np.diag(Ps)
    var = np.maximum(var, 0.0)
    keep = range(n)
    if hidden_only:
        ev = _evidence_index(grounded, evidence)
        keep = [i for i in range(n) if i not in ev]
    keep = list(keep)
    return GaussianBelief([grounded.nodes[i].key for i in keep], mean[keep], var[keep])


def filtered_beliefs(grounded: GroundedNetwork, evidence: Mapping | None = None) -> list[GaussianBelief]:
    out = []
    for j, st in enumerate(forward_filter(grounded, evidence)):
        out.append(GaussianBelief(
            [grounded.nodes[k].key for k in st.idx], st.m, np.diag(st.P).copy(), st.P, grounded.slice_times[j]
        ))
    return out


class FilterSession:
    """Forward filtering that grounds one slice per call as evidence arrives.

    Not shareable across threads mid-stream.
    """

    def __init__(self, structure: ItbnStructure, params: Params):
        if any(p.family != GAUSSIAN for p in structure.processes):
            raise NotGaussian("filter sessions need an all-Gaussian structure")
        self.structure = structure
        self.params = params
        self._g = Grounder(structure, params)
        self._last: _FilterStep | None = None

    @property
    def n_slices(self) -> int:
        return len(self._g.slice_times)

    def step(self, time, evidence: Mapping[str, float] | None = None) -> GaussianBelief:
        t = to_fraction(time)
        if self._g.slice_times and t <= self._g.slice_times[-1]:
            raise InferenceError(f"slice at {t} arrives out of order (last slice at {self._g.slice_times[-1]})")
        idx = self._g.add_slice(t)
        j = self.n_slices - 1
        obs = {}
        for process, value in (evidence or {}).items():
            key = (process, j)
            if key not in self._g.grid:
                raise InferenceError(f"unknown process {process!r}")
            obs[self._g.grid[key]] = float(value)
        prev = self._last.idx if self._last else []
        m_prev = self._last.m if self._last else None
        P_prev = self._last.P if self._last else None
        self._last = _filter_step(self._g.nodes, idx, prev, m_prev, P_prev, obs)
        return self.belief

    @property
    def belief(self) -> GaussianBelief:
        if self._last is None:
            g = Grounder(self.structure, self.params)
            idx = g.add_slice(0)
            st = _filter_step(g.nodes, idx, [], None, None, {})
            return GaussianBelief([g.nodes[k].key for k in idx], st.m, np.diag(st.P).copy(), st.P, None)
        nodes = self._g.nodes
        st = self._last
        return GaussianBelief(
            [nodes[k].key for k in st.idx], st.m.copy(), np.diag(st.P).copy(), st.P.copy(), self._g.slice_times[-1]
        )

    def predict(self, time) -> GaussianBelief:
        return predict(self.structure, self.params, self.belief, time)


def predict(structure: ItbnStructure, params: Params, belief: GaussianBelief, target_time) -> GaussianBelief:
    """One transition from the slice belief at ``T_n`` straight to ``target_time``.

    Only undelayed edges are supported here: a delayed parent would need slices
    older than the belief.
    """
    if belief.time is None:
        raise InferenceError("belief carries no slice time")
    t_n = to_fraction(belief.time)
    t = to_fraction(target_time)
    if t <= t_n:
        raise ValueError(f"prediction time {float(t):g} must be after the belief time {float(t_n):g}")
    g = Grounder(structure, params)
    prev = g.add_slice(t_n)
    idx = g.add_slice(t)
    if g.invented:
        raise InferenceError("predict does not support delayed edges")
    if any(g.nodes[k].family != GAUSSIAN for k in prev + idx):
        raise NotGaussian("predict needs an all-Gaussian structure")
    F, b, Q = _slice_system(g.nodes, idx, prev)
    cov = belief.covariance if belief.covariance is not None else np.diag(belief.variance)
    grid_keys = [(i, k) for i, k in enumerate(belief.keys) if len(k) == 2]
    by_process = {k[0]: i for i, k in grid_keys}
    try:
        order = [by_process[g.nodes[k].process] for k in prev]
    except KeyError as exc:
        raise InferenceError(f"belief has no entry for process {exc.args[0]!r}") from None
    m = F @ belief.mean[order] + b
    P = F @ cov[np.ix_(order, order)] @ F.T + Q
    P = 0.5 * (P + P.T)
    nxt = grid_keys[0][1][1] + 1
    keys = [(g.nodes[k].process, nxt) for k in idx]
    return GaussianBelief(keys, m, np.diag(P).copy(), P, t)


# --------------------------------------------------------------------------- sampling


def _draws(grounded: GroundedNetwork, count: int, rng: np.random.Generator) -> np.ndarray:
    """One standard-normal or uniform column per node, in node order."""
    out = np.empty((count, len(grounded)))
    for i, node in enumerate(grounded.nodes):
        out[:, i] = rng.standard_normal(count) if node.family == GAUSSIAN else rng.random(count)
    return out


def sample_nodes(grounded: GroundedNetwork, count: int, rng: np.random.Generator) -> np.ndarray:
    """Ancestral samples of every node, shape ``(count, n_nodes)``."""
    if grounded.params is None:
        raise InferenceError("network was grounded without parameters")
    noise = _draws(grounded, count, rng)
    X = np.empty_like(noise)
    for i, node in enumerate(grounded.nodes):
        eta = np.full(count, float(node.intercept))
        for p, w in node.weights.items():
            eta += w * X[:, p]
        if node.family == GAUSSIAN:
            X[:, i] = eta + noise[:, i] / math.sqrt(node.precision)
        else:
            X[:, i] = (noise[:, i] < expit(eta)).astype(float)
    return X


def sample_paths(
    structure: ItbnStructure, params: Params, timeline: Timeline, count: int, rng: np.random.Generator
) -> ObservationSet:
    """``count`` independent fully observed paths on one timeline (entities 0..count-1)."""
    net = unroll(structure, timeline, params)
    X = sample_nodes(net, count, rng)
    out = ObservationSet()
    grid = list(net.grid.items())
    for r in range(count):
        tl = Timeline(timeline.ticks, timeline.resolution, r)
        out.entities[r] = EntityData(tl, {key: float(X[r, i]) for key, i in grid})
    return out


@dataclass
class WeightedBelief:
    keys: list
    mean: np.ndarray
    variance: np.ndarray
    std_error: np.ndarray
    ess: float

    def __getitem__(self, key) -> tuple[float, float]:
        i = self.keys.index(tuple(key))
        return float(self.mean[i]), float(self.variance[i])


def likelihood_weighting(
    grounded: GroundedNetwork,
    evidence: Mapping | None,
    queries,
    count: int,
    rng: np.random.Generator,
) -> WeightedBelief:
    """Self-normalized importance estimates with evidence nodes clamped.

    Every node consumes one draw whether or not it is clamped, so two calls
    with equally seeded generators use common random numbers.
    """
    if grounded.params is None:
        raise InferenceError("network was grounded without parameters")
    ev = _evidence_index(grounded, evidence)
    noise = _draws(grounded, count, rng)
    X = np.empty_like(noise)
    logw = np.zeros(count)
    for i, node in enumerate(grounded.nodes):
        eta = np.full(count, float(node.intercept))
        for p, w in node.weights.items():
            eta += w * X[:, p]
        if i in ev:
            x = ev[i]
            X[:, i] = x
            if node.family == GAUSSIAN:
                logw += 0.5 * (math.log(node.precision) - LOG_2PI) - 0.5 * node.precision * (x - eta) ** 2
            else:
                logw += log_expit(eta) if x > 0.5 else log_expit(-eta)
        elif node.family == GAUSSIAN:
            X[:, i] = eta + noise[:, i] / math.sqrt(node.precision)
        else:
            X[:, i] = (noise[:, i] < expit(eta)).astype(float)
    top = np.max(logw)
    if not np.isfinite(top):
        raise EvidenceIncompatible("evidence incompatible: every sample has zero weight")
    w = np.exp(logw - top)
    w /= w.sum()
    ess = float(1.0 / np.sum(w * w))
    q = list(range(len(grounded))) if queries is None else [grounded.key_index(tuple(k)) for k in queries]
    Xq = X[:, q]
    mean = w @ Xq
    dev = Xq - mean
    var = w @ dev**2
    se = np.sqrt((w * w) @ dev**2)
    return WeightedBelief([grounded.nodes[i].key for i in q], mean, var, se, ess)
