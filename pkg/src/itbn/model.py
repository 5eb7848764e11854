"""ITBN templates and their grounding onto concrete timelines.

A template declares processes, edges and a conditional distribution per
process. Grounding places one node per (process, slice) at time
``T_j + offset``, resolves every edge to a concrete parent node, and, once
parameters are supplied, evaluates the varying coefficients at the realized
gap ``T_j - T_{j-1}``.

Edge delays are nonnegative. The parent of an edge into slice ``j`` is read at
``T_{j-lag} + offset_parent - delay``; with zero offsets that is the child time
minus the delay. When that instant is not already a node of the parent
process, an *invented* node is created for it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Mapping, Sequence

import numpy as np

from .splines import SplineSpec, design_row
from .timegrid import DEFAULT_RESOLUTION, Timeline, discrete_expansion_size, to_fraction

GAUSSIAN = "gaussian"
BERNOULLI = "bernoulli"
FAMILIES = (GAUSSIAN, BERNOULLI)

GAMMA = "gamma"
AUTOREGRESSIVE = "autoregressive"
ROLES = (GAMMA, AUTOREGRESSIVE)

INTRA = 0
PREVIOUS = 1

_FAMILY_ALIASES = {
    "gaussian": GAUSSIAN,
    "gaussian-identity": GAUSSIAN,
    "bernoulli": BERNOULLI,
    "bernoulli-logit": BERNOULLI,
}
_LAG_ALIASES = {"intra": INTRA, "intra-slice": INTRA, "previous": PREVIOUS, "previous-slice": PREVIOUS}


class ModelError(ValueError):
    pass


class DelayOutOfRange(ModelError):
    pass


def parse_family(value: str) -> str:
    try:
        return _FAMILY_ALIASES[value.lower()]
    except (KeyError, AttributeError):
        raise ModelError(f"unknown CPD family {value!r}; expected one of {sorted(_FAMILY_ALIASES)}") from None


def parse_lag(value) -> int:
    if isinstance(value, str):
        if value.lower() in _LAG_ALIASES:
            return _LAG_ALIASES[value.lower()]
        raise ModelError(f"unknown lag {value!r}")
    if isinstance(value, bool) or int(value) != value:
        raise ModelError(f"lag must be a slice count, got {value!r}")
    return int(value)


@dataclass(frozen=True)
class ProcessDecl:
    name: str
    family: str = GAUSSIAN
    offset: Fraction = Fraction(0)

    def __post_init__(self):
        object.__setattr__(self, "family", parse_family(self.family))
        object.__setattr__(self, "offset", to_fraction(self.offset))


@dataclass(frozen=True)
class EdgeDecl:
    parent: str
    child: str
    lag: int = INTRA
    delay: Fraction = Fraction(0)
    role: str = GAMMA

    def __post_init__(self):
        object.__setattr__(self, "lag", parse_lag(self.lag))
        object.__setattr__(self, "delay", to_fraction(self.delay))


@dataclass(frozen=True)
class SplineConfig:
    """How a varying coefficient is represented before fitting.

    ``knots`` is either ``"auto"`` (``count`` knots at gap quantiles) or an
    explicit increasing sequence.
    """

    degree: int = 0
    knots: object = "auto"
    count: int = 0

    def __post_init__(self):
        if self.knots != "auto":
            object.__setattr__(self, "knots", tuple(float(k) for k in self.knots))
            object.__setattr__(self, "count", len(self.knots))

    @property
    def auto(self) -> bool:
        return self.knots == "auto"


@dataclass(frozen=True)
class GaussianInitial:
    mu0: float
    tau0: float


@dataclass(frozen=True)
class BernoulliInitial:
    p0: float


@dataclass(frozen=True)
class ProcessSpec:
    alpha: SplineConfig = field(default_factory=SplineConfig)
    beta: SplineConfig = field(default_factory=SplineConfig)
    lam: float = 0.0
    initial: GaussianInitial | BernoulliInitial | None = None


@dataclass(frozen=True, eq=False)
class GaussianLinearCpd:
    alpha: SplineSpec
    beta: SplineSpec | None
    gamma: np.ndarray
    tau: float

    def __post_init__(self):
        g = np.asarray(self.gamma, dtype=float).reshape(-1)
        g.setflags(write=False)
        object.__setattr__(self, "gamma", g)


@dataclass(frozen=True, eq=False)
class BernoulliLogitCpd:
    alpha: SplineSpec
    beta: SplineSpec | None
    gamma: np.ndarray

    def __post_init__(self):
        g = np.asarray(self.gamma, dtype=float).reshape(-1)
        g.setflags(write=False)
        object.__setattr__(self, "gamma", g)


@dataclass(frozen=True, eq=False)
class ProcessParams:
    cpd: GaussianLinearCpd | BernoulliLogitCpd
    initial: GaussianInitial | BernoulliInitial


Params = Mapping[str, ProcessParams]


def predictor_eta(cpd, gap: float, y_prev: float, parent_values) -> float:
    parent_values = np.asarray(parent_values, dtype=float).reshape(-1)
    if parent_values.shape != cpd.gamma.shape:
        raise ValueError(f"expected {cpd.gamma.size} parent values, got {parent_values.size}")
    eta = cpd.alpha(gap)
    if cpd.beta is not None:
        eta += cpd.beta(gap) * y_prev
    return eta + float(cpd.gamma @ parent_values)


@dataclass
class ItbnStructure:
    processes: tuple[ProcessDecl, ...]
    edges: tuple[EdgeDecl, ...] = ()
    specs: dict[str, ProcessSpec] = field(default_factory=dict)
    resolution: Fraction = DEFAULT_RESOLUTION

    def __post_init__(self):
        self.processes = tuple(self.processes)
        self.edges = tuple(self.edges)
        self.resolution = to_fraction(self.resolution)
        self.specs = {p.name: self.specs.get(p.name, ProcessSpec()) for p in self.processes}

    @property
    def names(self) -> list[str]:
        return [p.name for p in self.processes]

    def process(self, name: str) -> ProcessDecl:
        for p in self.processes:
            if p.name == name:
                return p
        raise KeyError(name)

    def family(self, name: str) -> str:
        return self.process(name).family

    def gamma_edges(self, child: str) -> list[EdgeDecl]:
        return [e for e in self.edges if e.child == child and e.role == GAMMA]

    def ar_edge(self, child: str) -> EdgeDecl | None:
        for e in self.edges:
            if e.child == child and e.role == AUTOREGRESSIVE:
                return e
        return None

    def intra_order(self) -> list[str]:
        """Processes sorted so that intra-slice parents precede their children."""
        names = self.names
        indeg = {n: 0 for n in names}
        kids: dict[str, list[str]] = {n: [] for n in names}
        for e in self.edges:
            if e.lag == INTRA and e.parent in indeg and e.child in indeg:
                indeg[e.child] += 1
                kids[e.parent].append(e.child)
        ready = [n for n in names if indeg[n] == 0]
        order = []
        while ready:
            n = ready.pop(0)
            order.append(n)
            for k in kids[n]:
                indeg[k] -= 1
                if indeg[k] == 0:
                    ready.append(k)
        if len(order) != len(names):
            raise ModelError("intra-slice cycle")
        return order

    def with_edge_delay(self, edge: EdgeDecl, delay) -> "ItbnStructure":
        edges = tuple(replace(e, delay=to_fraction(delay)) if e == edge else e for e in self.edges)
        return ItbnStructure(self.processes, edges, dict(self.specs), self.resolution)

    def with_spec(self, name: str, spec: ProcessSpec) -> "ItbnStructure":
        specs = dict(self.specs)
        specs[name] = spec
        return ItbnStructure(self.processes, self.edges, specs, self.resolution)


@dataclass(frozen=True)
class Violation:
    kind: str
    subject: str
    message: str

    def __str__(self):
        return f"{self.kind}: {self.subject}: {self.message}"


def validate(structure: ItbnStructure, params: Params | None = None) -> list[Violation]:
    """Every violated structural (and, if given, parameter) invariant; empty means ok."""
    out: list[Violation] = []
    names = [p.name for p in structure.processes]
    seen = set()
    for n in names:
        if n in seen:
            out.append(Violation("duplicate process", n, "process names must be unique"))
        seen.add(n)
    known = set(names)

    ar_count: dict[str, int] = {}
    for e in structure.edges:
        subject = f"{e.parent}->{e.child}"
        if e.parent not in known or e.child not in known:
            out.append(Violation("unknown process", subject, "edge references an undeclared process"))
            continue
        if e.lag not in (INTRA, PREVIOUS):
            out.append(Violation(
                "parent outside V_{j-1} ∪ V_j", subject,
                f"lag {e.lag} reaches beyond the previous slice",
            ))
        if e.role not in ROLES:
            out.append(Violation("unknown role", subject, f"role {e.role!r}"))
        if e.delay < 0:
            out.append(Violation("negative delay", subject, "delays must be nonnegative"))
        if e.role == AUTOREGRESSIVE:
            if e.parent != e.child or e.lag != PREVIOUS:
                out.append(Violation(
                    "misplaced autoregressive edge", subject,
                    "autoregressive role is only allowed on previous-slice self-edges",
                ))
            if e.delay != 0:
                out.append(Violation("delayed autoregressive edge", subject, "autoregressive edges carry no delay"))
            ar_count[e.child] = ar_count.get(e.child, 0) + 1
        if e.lag == INTRA and e.parent == e.child:
            out.append(Violation("intra-slice cycle", subject, "intra-slice self-edge"))
    for child, n in ar_count.items():
        if n > 1:
            out.append(Violation("multiple autoregressive edges", child, f"{n} autoregressive edges"))

    try:
        structure.intra_order()
    except ModelError:
        cyc = [f"{e.parent}->{e.child}" for e in structure.edges if e.lag == INTRA and e.parent != e.child]
        out.append(Violation("intra-slice cycle", ", ".join(cyc), "intra-slice edges must form a DAG"))

    for name, spec in structure.specs.items():
        for part in ("alpha", "beta"):
            cfg = getattr(spec, part)
            if cfg.degree < 0 or cfg.count < 0:
                out.append(Violation("bad spline config", f"{name}.{part}", "degree and count must be nonnegative"))
        if spec.lam < 0:
            out.append(Violation("bad penalty", name, "lambda must be nonnegative"))

    if params is not None:
        out.extend(_validate_params(structure, params))
    return out


def _validate_params(structure: ItbnStructure, params: Params) -> list[Violation]:
    out = []
    for p in structure.processes:
        if p.name not in params:
            out.append(Violation("missing parameters", p.name, "no CPD for process"))
            continue
        pp = params[p.name]
        cpd, init = pp.cpd, pp.initial
        want = GaussianLinearCpd if p.family == GAUSSIAN else BernoulliLogitCpd
        if not isinstance(cpd, want):
            out.append(Violation("family mismatch", p.name, f"expected {want.__name__}"))
            continue
        n_gamma = len(structure.gamma_edges(p.name))
        if cpd.gamma.size != n_gamma:
            out.append(Violation("gamma length", p.name, f"{cpd.gamma.size} effects for {n_gamma} gamma edges"))
        has_ar = structure.ar_edge(p.name) is not None
        if has_ar != (cpd.beta is not None):
            out.append(Violation("beta mismatch", p.name, "beta spline present iff an autoregressive edge exists"))
        if isinstance(cpd, GaussianLinearCpd) and not (cpd.tau > 0 and math.isfinite(cpd.tau)):
            out.append(Violation("bad precision", p.name, f"tau={cpd.tau}"))
        if isinstance(init, GaussianInitial):
            if p.family != GAUSSIAN or not (init.tau0 > 0 and math.isfinite(init.tau0)):
                out.append(Violation("bad initial", p.name, f"tau0={init.tau0}"))
        elif isinstance(init, BernoulliInitial):
            if p.family != BERNOULLI or not (0.0 < init.p0 < 1.0):
                out.append(Violation("bad initial", p.name, f"p0={init.p0}"))
        else:
            out.append(Violation("bad initial", p.name, "missing initial distribution"))
    return out


def check(structure: ItbnStructure, params: Params | None = None) -> None:
    problems = validate(structure, params)
    if problems:
        raise ModelError("; ".join(str(v) for v in problems))


# --------------------------------------------------------------------------- grounding


@dataclass
class Node:
    process: str
    slice: int
    time: Fraction
    family: str
    invented: bool = False
    gap: float | None = None  # None for root-slice nodes
    ar_parent: int | None = None
    # (position in structure.gamma_edges(process), parent node index or None when out of range)
    gamma_parents: list[tuple[int, int | None]] = field(default_factory=list)
    intercept: float | None = None
    weights: dict[int, float] = field(default_factory=dict)
    precision: float | None = None

    @property
    def key(self):
        return (self.process, self.slice, self.time) if self.invented else (self.process, self.slice)

    @property
    def parents(self) -> list[int]:
        out = [] if self.ar_parent is None else [self.ar_parent]
        out.extend(n for _, n in self.gamma_parents if n is not None)
        return out


@dataclass
class GroundedNetwork:
    structure: ItbnStructure
    params: Params | None
    nodes: list[Node]
    slice_times: list[Fraction]
    grid: dict[tuple[str, int], int]
    invented: list[int]
    out_of_range: set[int]  # slices with at least one unresolved delayed parent

    def __len__(self):
        return len(self.nodes)

    def index(self, process: str, slice_: int) -> int:
        return self.grid[(process, slice_)]

    def key_index(self, key) -> int:
        if len(key) == 2:
            return self.grid[tuple(key)]
        for i in self.invented:
            if self.nodes[i].key == tuple(key):
                return i
        raise KeyError(key)

    @property
    def n_slices(self) -> int:
        return len(self.slice_times)

    def slices(self) -> list[list[int]]:
        out: list[list[int]] = [[] for _ in self.slice_times]
        for i, node in enumerate(self.nodes):
            out[node.slice].append(i)
        return out

    def all_gaussian(self) -> bool:
        return all(n.family == GAUSSIAN for n in self.nodes)

    def topological_order(self) -> list[int]:
        """Kahn's algorithm over the grounded graph; raises on a cycle."""
        indeg = [0] * len(self.nodes)
        kids: list[list[int]] = [[] for _ in self.nodes]
        for i, node in enumerate(self.nodes):
            for p in node.parents:
                indeg[i] += 1
                kids[p].append(i)
        ready = [i for i, d in enumerate(indeg) if d == 0]
        order = []
        while ready:
            i = ready.pop()
            order.append(i)
            for k in kids[i]:
                indeg[k] -= 1
                if indeg[k] == 0:
                    ready.append(k)
        if len(order) != len(self.nodes):
            raise ModelError("grounded network has a cycle")
        return order

    def is_chain(self) -> bool:
        """Every parent sits in the node's own slice or the one before."""
        return all(
            self.nodes[p].slice in (node.slice, node.slice - 1)
            for node in self.nodes
            for p in node.parents
        )

    def linear_form(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Intercepts c, weight matrix B and noise variances of x = c + B x + e."""
        if self.params is None:
            raise ModelError("network was grounded without parameters")
        if not self.all_gaussian():
            raise ModelError("not all-Gaussian")
        n = len(self.nodes)
        c = np.empty(n)
        B = np.zeros((n, n))
        var = np.empty(n)
        for i, node in enumerate(self.nodes):
            c[i] = node.intercept
            for p, w in node.weights.items():
                B[i, p] += w
            var[i] = 1.0 / node.precision
        return c, B, var


class Grounder:
    """Incremental grounding, one slice at a time.

    ``unroll`` drives it over a whole timeline; filter sessions add slices as
    data arrive.
    """

    def __init__(self, structure: ItbnStructure, params: Params | None = None, out_of_range: str = "error"):
        check(structure, params)
        if out_of_range not in ("error", "skip"):
            raise ValueError("out_of_range must be 'error' or 'skip'")
        self.structure = structure
        self.params = params
        self.out_of_range_mode = out_of_range
        self.order = structure.intra_order()
        self.offsets = {p.name: p.offset for p in structure.processes}
        self.families = {p.name: p.family for p in structure.processes}
        self.gamma_edges = {n: structure.gamma_edges(n) for n in structure.names}
        self.has_ar = {n: structure.ar_edge(n) is not None for n in structure.names}
        self.nodes: list[Node] = []
        self.slice_times: list[Fraction] = []
        self.grid: dict[tuple[str, int], int] = {}
        self.by_time: dict[tuple[str, Fraction], int] = {}
        self.grid_times: dict[str, list[Fraction]] = {n: [] for n in structure.names}
        self.invented: list[int] = []
        self.out_of_range: set[int] = set()

    def network(self) -> GroundedNetwork:
        return GroundedNetwork(
            self.structure, self.params, self.nodes, self.slice_times, self.grid, self.invented, self.out_of_range
        )

    def add_slice(self, time) -> list[int]:
        t = to_fraction(time)
        if self.slice_times and t <= self.slice_times[-1]:
            raise ModelError(f"slice time {t} does not follow {self.slice_times[-1]}")
        j = len(self.slice_times)
        self.slice_times.append(t)
        start = len(self.nodes)
        for name in self.order:
            node = Node(name, j, t + self.offsets[name], self.families[name])
            if j > 0:
                node.gap = float(t - self.slice_times[j - 1])
                if self.has_ar[name]:
                    node.ar_parent = self.grid[(name, j - 1)]
            for pos, edge in enumerate(self.gamma_edges[name]):
                if j == 0 and (edge.lag != INTRA or edge.delay != 0):
                    continue  # the root slice has no history to read from
                ref = self.slice_times[j - edge.lag] + self.offsets[edge.parent]
                node.gamma_parents.append((pos, self._resolve(edge.parent, ref - edge.delay, j)))
            idx = self._append(node)
            self.grid[(name, j)] = idx
            self.grid_times[name].append(node.time)
        return list(range(start, len(self.nodes)))

    def _append(self, node: Node) -> int:
        idx = len(self.nodes)
        self.nodes.append(node)
        self.by_time[(node.process, node.time)] = idx
        if self.params is not None:
            self._resolve_coefficients(node)
        return idx

    def _resolve(self, process: str, when: Fraction, j: int) -> int | None:
        hit = self.by_time.get((process, when))
        if hit is not None:
            return hit
        times = self.grid_times[process]
        # latest grid node of the process strictly before `when`
        lo, hi = 0, len(times)
        while lo < hi:
            mid = (lo + hi) // 2
            if times[mid] < when:
                lo = mid + 1
            else:
                hi = mid
        if lo == 0:
            if self.out_of_range_mode == "skip":
                self.out_of_range.add(j)
                return None
            raise DelayOutOfRange(
                f"delayed parent {process} at time {float(when):g} precedes its first slice "
                f"(slice {j}); delay out of range"
            )
        pred_slice = lo - 1
        pred = self.grid[(process, pred_slice)]
        node = Node(process, j, when, self.families[process], invented=True)
        node.gap = float(when - times[pred_slice])
        if self.has_ar[process]:
            node.ar_parent = pred
        virtual = when - self.offsets[process]
        for pos, edge in enumerate(self.gamma_edges[process]):
            ref = (virtual if edge.lag == INTRA else self.slice_times[pred_slice]) + self.offsets[edge.parent]
            node.gamma_parents.append((pos, self._resolve(edge.parent, ref - edge.delay, j)))
        idx = self._append(node)
        self.invented.append(idx)
        return idx

    def _resolve_coefficients(self, node: Node) -> None:
        pp = self.params[node.process]
        node.weights = {}
        if node.gap is None:
            init = pp.initial
            if isinstance(init, GaussianInitial):
                node.intercept = init.mu0
                node.precision = init.tau0
            else:
                node.intercept = math.log(init.p0) - math.log1p(-init.p0)
        else:
            cpd = pp.cpd
            node.intercept = cpd.alpha(node.gap)
            if node.ar_parent is not None:
                node.weights[node.ar_parent] = cpd.beta(node.gap)
            if isinstance(cpd, GaussianLinearCpd):
                node.precision = cpd.tau
        for pos, parent in node.gamma_parents:
            if parent is not None:
                node.weights[parent] = node.weights.get(parent, 0.0) + float(pp.cpd.gamma[pos])


def unroll(structure: ItbnStructure, timeline, params: Params | None = None, out_of_range: str = "error") -> GroundedNetwork:
    """Ground the template on a timeline (``Timeline`` or a sequence of exact times)."""
    times = timeline.exact_times if isinstance(timeline, Timeline) else [to_fraction(t) for t in timeline]
    if len(times) == 0:
        raise ModelError("cannot ground on an empty timeline")
    g = Grounder(structure, params, out_of_range)
    for t in times:
        g.add_slice(t)
    return g.network()


def node_count_comparison(
    structure: ItbnStructure, timelines: Sequence[Timeline], hidden: Sequence[str] | None = None
) -> tuple[int, int]:
    """Hidden-node counts of the grounded ITBN and of the gcd-granularity DBN."""
    hidden = list(structure.names if hidden is None else hidden)
    itbn = dbn = 0
    for tl in timelines:
        net = unroll(structure, tl)
        itbn += sum(1 for n in net.nodes if n.process in hidden)
        dbn += len(hidden) * discrete_expansion_size(tl)
    return itbn, dbn
