"""Transport flows on metric graphs, solved exactly along characteristics.

State space: X = prod_j L1([0, l_j] x [v_min, v_max]), discretized by a
positive velocity quadrature and per-edge spatial sample grids.  Flow runs
from x = l_j toward x = 0 with speed v > 0 and pointwise absorption q_j(x, v);
at the vertices the outflow is scattered in velocity and redistributed into
the outgoing edges by the boundary weights.

All operators in this module are closed-form evaluations along
characteristics: the only discretization lives in the velocity quadrature
and, for sampled fields, in piecewise-linear interpolation between spatial
samples.  Fields produced by closed-form operators carry an exact evaluator,
so compositions such as T(t)T(s)f incur no re-gridding error.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .graph import MetricGraph, check_assumptions
from .lattice import (
    CONE_TOL,
    Quadrature,
    dense_spectral_radius,
    is_nonneg,
    state_norm,
    trapezoid_weights,
)
from .signals import BoundarySignal, StepSignal


class CharacteristicGateError(RuntimeError):
    """Raised when 1 is not in the resolvent set of the boundary-transfer
    operator, i.e. r(Gamma D_mu) >= 1 blocks the closed-loop inversion."""

    def __init__(self, mu: float, radius: float):
        super().__init__(
            f"characteristic gate failed at mu={mu}: r(Gamma D_mu) = {radius:.6g} >= 1"
        )
        self.mu = mu
        self.radius = radius


@dataclass(frozen=True)
class Absorption:
    """Per-edge absorption rates q_j(x, v), piecewise constant in x.

    ``breaks[j]`` partitions [0, l_j]; ``values[j]`` has shape (pieces, K)
    holding the rate per piece and velocity node.  Piecewise constancy keeps
    every path integral of q in closed form.
    """

    breaks: tuple[np.ndarray, ...]
    values: tuple[np.ndarray, ...]

    def __post_init__(self):
        breaks = tuple(np.asarray(b, dtype=float) for b in self.breaks)
        values = tuple(np.atleast_2d(np.asarray(v, dtype=float)) for v in self.values)
        if len(breaks) != len(values):
            raise ValueError("one break table and one value table per edge")
        cums = []
        for b, v in zip(breaks, values):
            if b.size < 2 or b[0] != 0.0 or np.any(np.diff(b) <= 0):
                raise ValueError("absorption breaks must increase strictly from 0")
            if v.shape[0] != b.size - 1:
                raise ValueError("one value row per absorption piece")
            # cumulative integral of q from 0 to each break, per velocity node
            cums.append(np.vstack([np.zeros(v.shape[1]), np.cumsum(v * np.diff(b)[:, None], axis=0)]))
        object.__setattr__(self, "breaks", breaks)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "_cums", tuple(cums))

    @classmethod
    def constant(cls, rates, lengths, n_nodes: int) -> "Absorption":
        """One constant rate per edge: a scalar for all edges, one scalar per
        edge, or one per-velocity-node array per edge."""
        if np.isscalar(rates):
            rates = [rates] * len(lengths)
        breaks, values = [], []
        for q, l in zip(rates, lengths):
            breaks.append(np.array([0.0, float(l)]))
            values.append(np.broadcast_to(np.asarray(q, dtype=float), (1, n_nodes)).copy())
        return cls(tuple(breaks), tuple(values))

    @classmethod
    def zero(cls, lengths, n_nodes: int) -> "Absorption":
        return cls.constant([0.0] * len(lengths), lengths, n_nodes)

    def primitive(self, j: int, k: int, x: np.ndarray) -> np.ndarray:
        """int_0^x q_j(s, v_k) ds, piecewise linear in x (flat beyond [0, l])."""
        return np.interp(x, self.breaks[j], self._cums[j][:, k])

    def path_integral(self, j: int, k: int, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        """int_a^b q_j(s, v_k) ds for arrays of endpoints."""
        return self.primitive(j, k, b) - self.primitive(j, k, a)

    @property
    def q_sup(self) -> float:
        """sup_j ||q_j||_inf, the upper edge of the positivity regime in mu."""
        return max(float(np.max(np.abs(v))) for v in self.values)

    @property
    def q_min(self) -> float:
        """Recorded lower bound of the rates (kappa)."""
        return min(float(np.min(v)) for v in self.values)


@dataclass(frozen=True)
class ScatteringKernel:
    """Velocity scattering at the vertices.

    ``matrices`` is None in identity mode (no velocity mixing); otherwise one
    nonnegative (K, K) table per edge sampling ell_j(0, v, v'), applied with
    the velocity quadrature weights folded in:
    (J_j f)(v_k) = sum_k' ell_j(0, v_k, v_k') w_k' f(v_k').
    """

    matrices: tuple[np.ndarray, ...] | None

    def __post_init__(self):
        if self.matrices is not None:
            mats = tuple(np.asarray(m, dtype=float) for m in self.matrices)
            for m in mats:
                if m.ndim != 2 or m.shape[0] != m.shape[1]:
                    raise ValueError("kernel tables must be square")
                if np.any(m < 0):
                    raise ValueError("kernel samples must be nonnegative")
            object.__setattr__(self, "matrices", mats)

    @property
    def is_identity(self) -> bool:
        return self.matrices is None

    @classmethod
    def identity(cls) -> "ScatteringKernel":
        return cls(None)

    @classmethod
    def constant(cls, c: float, n_edges: int, n_nodes: int) -> "ScatteringKernel":
        if c < 0:
            raise ValueError("kernel constant must be nonnegative")
        return cls(tuple(np.full((n_nodes, n_nodes), float(c)) for _ in range(n_edges)))

    def scatter(self, j: int, trace: np.ndarray, vweights: np.ndarray) -> np.ndarray:
        """Apply J_j to velocity samples (trailing axis is the node axis)."""
        if self.matrices is None:
            return trace
        return (trace * vweights) @ self.matrices[j].T


@dataclass(frozen=True)
class TransportSystem:
    """A transport network: graph, velocity grid, absorption and scattering."""

    graph: MetricGraph
    vgrid: Quadrature
    absorption: Absorption
    kernel: ScatteringKernel
    space_samples: int = 129

    def __post_init__(self):
        if self.vgrid.lo <= 0:
            raise ValueError("velocities must satisfy 0 < v_min")
        if len(self.absorption.breaks) != self.graph.n_edges:
            raise ValueError("absorption tables must cover every edge")
        for j, b in enumerate(self.absorption.breaks):
            if abs(b[-1] - self.graph.lengths[j]) > 1e-12:
                raise ValueError(f"absorption table of edge {j} does not span [0, l_j]")
            if self.absorption.values[j].shape[1] != self.vgrid.n:
                raise ValueError("absorption tables must have one column per velocity node")
        if not self.kernel.is_identity:
            if len(self.kernel.matrices) != self.graph.n_edges:
                raise ValueError("kernel tables must cover every edge")
            for m in self.kernel.matrices:
                if m.shape[0] != self.vgrid.n:
                    raise ValueError("kernel tables must match the velocity grid")
        if self.space_samples < 2:
            raise ValueError("need at least two spatial samples per edge")

    @property
    def n_edges(self) -> int:
        return self.graph.n_edges

    @property
    def n_vertices(self) -> int:
        return self.graph.n_vertices

    @property
    def n_nodes(self) -> int:
        return self.vgrid.n

    @property
    def q_sup(self) -> float:
        return self.absorption.q_sup

    @property
    def min_delay(self) -> float:
        """Shortest boundary-to-boundary transit time min_j l_j / v_max."""
        return float(np.min(self.graph.lengths)) / float(self.vgrid.nodes[-1])

    def xgrid(self, j: int, n: int | None = None) -> np.ndarray:
        return np.linspace(0.0, float(self.graph.lengths[j]), n or self.space_samples)

    def boundary_weights(self) -> np.ndarray:
        """Quadrature weights of the flattened boundary space (N * K)."""
        return np.tile(self.vgrid.weights, self.n_vertices)

    def assumptions(self):
        return check_assumptions(self.graph)


class StateField:
    """Per-edge samples of f_j(x, v_k), optionally with an exact evaluator.

    Samples live on per-edge grids including both endpoints and are read as
    piecewise-linear functions of x.  Operators that have closed forms attach
    an ``evaluator(j, k, x)`` so that downstream evaluations (compositions,
    traces, refinements) bypass interpolation entirely.
    """

    __slots__ = ("system", "xs", "values", "evaluator")

    def __init__(self, system: TransportSystem, xs, values, evaluator=None):
        self.system = system
        self.xs = tuple(np.asarray(x, dtype=float) for x in xs)
        self.values = tuple(np.asarray(v, dtype=float) for v in values)
        if len(self.xs) != system.n_edges or len(self.values) != system.n_edges:
            raise ValueError("need one grid and one sample block per edge")
        for j, (x, v) in enumerate(zip(self.xs, self.values)):
            if x.size < 2 or x[0] != 0.0 or abs(x[-1] - system.graph.lengths[j]) > 1e-12:
                raise ValueError(f"grid of edge {j} must span [0, l_j] with >= 2 samples")
            if v.shape != (system.n_nodes, x.size):
                raise ValueError(f"samples of edge {j} must be (nodes, len(grid))")
        self.evaluator = evaluator

    # -- constructors ------------------------------------------------------

    @classmethod
    def from_function(cls, system: TransportSystem, fn, n_x: int | None = None) -> "StateField":
        """Exact field defined by ``fn(j, x_array, k) -> values``."""
        xs = [system.xgrid(j, n_x) for j in range(system.n_edges)]
        values = [
            np.stack([np.asarray(fn(j, xs[j], k), dtype=float) for k in range(system.n_nodes)])
            for j in range(system.n_edges)
        ]
        return cls(system, xs, values, evaluator=fn)

    @classmethod
    def from_samples(cls, system: TransportSystem, values, n_x: int | None = None) -> "StateField":
        xs = [system.xgrid(j, n_x) for j in range(system.n_edges)]
        return cls(system, xs, values)

    @classmethod
    def constant(cls, system: TransportSystem, c: float, n_x: int | None = None) -> "StateField":
        return cls.from_function(system, lambda j, x, k: np.full_like(x, float(c)), n_x)

    @classmethod
    def zeros(cls, system: TransportSystem, n_x: int | None = None) -> "StateField":
        return cls.constant(system, 0.0, n_x)

    # -- evaluation and reductions -----------------------------------------

    def eval(self, j: int, k: int, x: np.ndarray) -> np.ndarray:
        """f_j(x, v_k) for x in [0, l_j] (clipped), exact when an evaluator
        is attached, else piecewise linear in the samples."""
        x = np.clip(np.asarray(x, dtype=float), 0.0, self.system.graph.lengths[j])
        if self.evaluator is not None:
            return np.asarray(self.evaluator(j, x, k), dtype=float)
        return np.interp(x, self.xs[j], self.values[j][k])

    def sampled(self) -> "StateField":
        """The same samples with the exact evaluator dropped."""
        return StateField(self.system, self.xs, self.values)

    def resampled(self, n_x: int) -> "StateField":
        xs = [self.system.xgrid(j, n_x) for j in range(self.system.n_edges)]
        values = [
            np.stack([self.eval(j, k, xs[j]) for k in range(self.system.n_nodes)])
            for j in range(self.system.n_edges)
        ]
        return StateField(self.system, xs, values, evaluator=self.evaluator)

    def norm(self) -> float:
        """Discretized X-norm: sum over edges of the L1(x, v) norm."""
        wv = self.system.vgrid.weights
        parts = []
        for x, v in zip(self.xs, self.values):
            parts.append((v, np.outer(wv, trapezoid_weights(x))))
        return state_norm(parts)

    def min_value(self) -> float:
        return min(float(v.min()) for v in self.values)

    def max_abs(self) -> float:
        return max(float(np.max(np.abs(v))) for v in self.values)

    def is_nonneg(self, tol: float = CONE_TOL) -> bool:
        return all(is_nonneg(v, tol) for v in self.values)

    # -- sample-level arithmetic (evaluators are dropped) --------------------

    def _zip(self, other: "StateField", op) -> "StateField":
        if self.system is not other.system:
            raise ValueError("fields belong to different systems")
        values = []
        for j, (a, b) in enumerate(zip(self.values, other.values)):
            if a.shape != b.shape or not np.array_equal(self.xs[j], other.xs[j]):
                raise ValueError("fields are sampled on different grids")
            values.append(op(a, b))
        return StateField(self.system, self.xs, values)

    def __add__(self, other: "StateField") -> "StateField":
        return self._zip(other, np.add)

    def __sub__(self, other: "StateField") -> "StateField":
        return self._zip(other, np.subtract)

    def scaled(self, c: float) -> "StateField":
        return StateField(self.system, self.xs, [c * v for v in self.values])


@dataclass
class BoundaryVector:
    """Element of the boundary space: one velocity profile per vertex."""

    values: np.ndarray  # (N, K)

    def __post_init__(self):
        self.values = np.atleast_2d(np.asarray(self.values, dtype=float))

    @classmethod
    def zeros(cls, system: TransportSystem) -> "BoundaryVector":
        return cls(np.zeros((system.n_vertices, system.n_nodes)))

    @classmethod
    def constant(cls, system: TransportSystem, c: float) -> "BoundaryVector":
        return cls(np.full((system.n_vertices, system.n_nodes), float(c)))

    def norm(self, system: TransportSystem) -> float:
        return float((np.abs(self.values) @ system.vgrid.weights).sum())

    def min_value(self) -> float:
        return float(self.values.min())

    def is_nonneg(self, tol: float = CONE_TOL) -> bool:
        return is_nonneg(self.values, tol)

    def flat(self) -> np.ndarray:
        return self.values.ravel()


@dataclass(frozen=True)
class DiscretizedOperator:
    """Dense matrix acting on flattened boundary vectors (vertex-major)."""

    matrix: np.ndarray
    n_vertices: int
    n_nodes: int
    mu: float | None = None

    def apply(self, g: BoundaryVector) -> BoundaryVector:
        out = self.matrix @ g.flat()
        return BoundaryVector(out.reshape(self.n_vertices, self.n_nodes))

    def spectral_radius(self) -> float:
        return dense_spectral_radius(self.matrix)


# ---------------------------------------------------------------------------
# closed-form exponential-times-linear segment integrals


def _exp_linear_integral(beta: np.ndarray, h: np.ndarray, c0: np.ndarray, c1: np.ndarray) -> np.ndarray:
    """int_0^h e^{beta s} (c0 + c1 s) ds, stable as beta -> 0."""
    z = beta * h
    small = np.abs(z) < 1e-6
    with np.errstate(divide="ignore", invalid="ignore"):
        phi1 = np.where(small, 1.0 + z / 2.0 + z * z / 6.0, np.expm1(z) / np.where(small, 1.0, z))
        phi2 = np.where(
            small,
            0.5 + z / 3.0 + z * z / 8.0,
            (np.exp(z) * (z - 1.0) + 1.0) / np.where(small, 1.0, z * z),
        )
    return h * c0 * phi1 + h * h * c1 * phi2


# ---------------------------------------------------------------------------
# the explicit operators


def semigroup_apply(system: TransportSystem, f: StateField, t: float) -> StateField:
    """Flow semigroup T(t): transport toward x = 0 with zero inflow.

    (T(t) f)_j(x, v) = exp(int_x^{x+vt} q_j(s, v)/v ds) * f_j(x + vt, v)
    when x + vt <= l_j, and 0 once the foot of the characteristic has left
    the edge.  The returned field carries an exact evaluator, so composing
    applications does not re-grid.
    """
    if t < 0:
        raise ValueError("t must be nonnegative")
    q = system.absorption
    nodes = system.vgrid.nodes
    lengths = system.graph.lengths

    def ev(j, x, k):
        l = lengths[j]
        xe = x + nodes[k] * t
        inside = xe <= l
        xe_c = np.minimum(xe, l)
        growth = np.exp(q.path_integral(j, k, x, xe_c) / nodes[k])
        return np.where(inside, growth * f.eval(j, k, xe_c), 0.0)

    xs = [x.copy() for x in f.xs]
    values = [
        np.stack([ev(j, xs[j], k) for k in range(system.n_nodes)])
        for j in range(system.n_edges)
    ]
    return StateField(system, xs, values, evaluator=ev)


def resolvent_apply(system: TransportSystem, f: StateField, mu: float) -> StateField:
    """Resolvent of the zero-inflow generator, evaluated in closed form:

    (R(mu) f)_j(x, v) = int_x^{l_j} exp(int_x^y (q_j - mu)/v ds) f_j(y, v)/v dy.

    The y-integral is composite over the union of the sample grid and the
    absorption breakpoints; on each panel the exponent is linear and f is
    taken linear between its panel endpoints, so the panel integral is the
    closed form of e^{linear} * linear.  Exact for sampled (piecewise-linear)
    fields.  Enforces mu > sup|q| (the positivity regime).
    """
    if mu <= system.q_sup:
        raise ValueError(f"mu must exceed sup|q| = {system.q_sup:.6g}")
    q = system.absorption
    nodes = system.vgrid.nodes
    out_values = []
    for j in range(system.n_edges):
        grid = np.union1d(f.xs[j], q.breaks[j])
        rows = np.empty((system.n_nodes, f.xs[j].size))
        for k in range(system.n_nodes):
            v = nodes[k]
            fy = f.eval(j, k, grid)
            # W(y) = (int_0^y q - mu y)/v, linear on each panel
            W = (q.primitive(j, k, grid) - mu * grid) / v
            h = np.diff(grid)
            beta = np.diff(W) / h
            c0 = fy[:-1]
            c1 = (fy[1:] - fy[:-1]) / h
            panel = _exp_linear_integral(beta, h, c0, c1)
            # suffix recursion: S_r = int_{y_r}^{l} e^{W(y)-W(y_r)} f dy
            S = np.zeros(grid.size)
            decay = np.exp(np.diff(W))
            for r in range(grid.size - 2, -1, -1):
                S[r] = panel[r] + decay[r] * S[r + 1]
            rows[k] = S[np.searchsorted(grid, f.xs[j])] / v
        out_values.append(rows)
    return StateField(system, [x.copy() for x in f.xs], out_values)


def dirichlet_apply(
    system: TransportSystem, g: BoundaryVector, mu: float, n_x: int | None = None
) -> StateField:
    """Dirichlet lift D_mu: the boundary data g spread along characteristics,

    (D_mu g)_j(x, v) = exp(int_x^{l_j} (q_j(s,v) - mu)/v ds) * w_j * g_{tail(j)}(v),

    an exact exponential profile per edge and velocity node.  The lift
    satisfies G(D_mu g) = g under the Kirchhoff weight normalization and is
    positive for g >= 0 at every real mu.
    """
    q = system.absorption
    nodes = system.vgrid.nodes
    lengths = system.graph.lengths
    tails = system.graph.tails
    w = system.graph.weights
    gvals = g.values

    def ev(j, x, k):
        l = lengths[j]
        v = nodes[k]
        expo = (q.path_integral(j, k, x, np.full_like(x, l)) - mu * (l - x)) / v
        return np.exp(expo) * w[j] * gvals[tails[j], k]

    xs = [system.xgrid(j, n_x) for j in range(system.n_edges)]
    values = [
        np.stack([ev(j, xs[j], k) for k in range(system.n_nodes)])
        for j in range(system.n_edges)
    ]
    return StateField(system, xs, values, evaluator=ev)


def boundary_traces(system: TransportSystem, f: StateField) -> dict[str, BoundaryVector]:
    """The two boundary operators of the network.

    G collects the inflow-end traces per vertex, (G f)_i = sum over edges j
    leaving i of f_j(l_j, .); Gamma applies the scattering kernels to the
    outflow traces at x = 0 and routes them along incoming edges,
    (Gamma f)_i = sum over edges j entering i of (J_j f_j)(0, .).
    """
    N, K = system.n_vertices, system.n_nodes
    G = np.zeros((N, K))
    Gam = np.zeros((N, K))
    wv = system.vgrid.weights
    for j in range(system.n_edges):
        l = system.graph.lengths[j]
        trace_l = np.array([f.eval(j, k, np.array([l]))[0] for k in range(K)])
        trace_0 = np.array([f.eval(j, k, np.array([0.0]))[0] for k in range(K)])
        G[system.graph.tails[j]] += trace_l
        Gam[system.graph.heads[j]] += system.kernel.scatter(j, trace_0, wv)
    return {"G": BoundaryVector(G), "Gamma": BoundaryVector(Gam)}


def input_map(
    system: TransportSystem, u: StepSignal, t: float, n_x: int | None = None
) -> StateField:
    """Input map Phi_t: the state reached from zero by boundary data u.

    (Phi_t u)_j(x, v) = exp(int_x^{l_j} q_j(s,v)/v ds)
                        * w_j * u_{tail(j)}((tv - l_j + x)/v)
    where the characteristic has reached x before time t, i.e. for
    t >= (l_j - x)/v, and exactly 0 otherwise.  ``u`` is a boundary-space
    history (N channels) defined on [0, t].
    """
    if t < 0:
        raise ValueError("t must be nonnegative")
    if u.horizon < t - 1e-12:
        raise ValueError(f"input history covers [0, {u.horizon}] but t = {t}")
    q = system.absorption
    nodes = system.vgrid.nodes
    lengths = system.graph.lengths
    tails = system.graph.tails
    w = system.graph.weights

    def ev(j, x, k):
        l = lengths[j]
        v = nodes[k]
        s = t - (l - x) / v
        filled = s >= 0.0
        s_c = np.clip(s, 0.0, u.horizon)
        growth = np.exp(q.path_integral(j, k, x, np.full_like(x, l)) / v)
        return np.where(filled, growth * w[j] * u.eval_channel(tails[j], k, s_c), 0.0)

    xs = [system.xgrid(j, n_x) for j in range(system.n_edges)]
    values = [
        np.stack([ev(j, xs[j], k) for k in range(system.n_nodes)])
        for j in range(system.n_edges)
    ]
    return StateField(system, xs, values, evaluator=ev)


def io_map(system: TransportSystem, u: StepSignal, times: np.ndarray) -> BoundarySignal:
    """Input-output map F: scattered, absorption-weighted, delayed boundary
    inputs read at the outflow ends,

    (F u)_i(t, v) = sum over edges j entering i of
        J_j[ exp(int_0^{l_j} q_j(s, .)/. ds) * w_j * u_{tail(j)}(t - l_j/.) ](v),

    with each velocity node contributing only after its transit time l_j/v'.
    Output values are exactly zero before min_j l_j / v_max.
    """
    times = np.atleast_1d(np.asarray(times, dtype=float))
    if times.size and u.horizon < times.max() - 1e-12:
        raise ValueError("input history shorter than the requested time grid")
    K = system.n_nodes
    nodes = system.vgrid.nodes
    wv = system.vgrid.weights
    out = np.zeros((times.size, system.n_vertices, K))
    for j in range(system.n_edges):
        l = system.graph.lengths[j]
        w = system.graph.weights[j]
        tail, head = system.graph.tails[j], system.graph.heads[j]
        growth = np.exp(
            np.array([system.absorption.path_integral(j, k, 0.0, l) / nodes[k] for k in range(K)])
        )
        trace = np.zeros((times.size, K))
        for k in range(K):
            delay = l / nodes[k]
            arrived = times >= delay
            if not np.any(arrived):
                continue
            s = np.clip(times[arrived] - delay, 0.0, u.horizon)
            trace[arrived, k] = growth[k] * w * u.eval_channel(tail, k, s)
        out[:, head, :] += system.kernel.scatter(j, trace, wv)
    return BoundarySignal(times, out)


def transfer_operator(system: TransportSystem, mu: float) -> DiscretizedOperator:
    """The boundary transfer operator H(mu) = Gamma D_mu as a dense matrix on
    flattened boundary vectors.

    Entry ((i,k), (i',k')): sum over edges j from i' to i of the kernel
    coupling at (k, k') times the full-edge decay
    E_j(mu, k') = exp((int_0^{l_j} q_j - mu l_j)/v_{k'}) times w_j; identity
    kernels couple nodes diagonally with no quadrature weight.
    """
    N, K = system.n_vertices, system.n_nodes
    nodes = system.vgrid.nodes
    wv = system.vgrid.weights
    H = np.zeros((N * K, N * K))
    for j in range(system.n_edges):
        l = system.graph.lengths[j]
        w = system.graph.weights[j]
        tail, head = system.graph.tails[j], system.graph.heads[j]
        decay = np.array(
            [np.exp((system.absorption.path_integral(j, k, 0.0, l) - mu * l) / nodes[k]) for k in range(K)]
        )
        if system.kernel.is_identity:
            block = np.diag(decay * w)
        else:
            block = system.kernel.matrices[j] * (wv * decay * w)[np.newaxis, :]
        H[head * K : (head + 1) * K, tail * K : (tail + 1) * K] += block
    return DiscretizedOperator(H, N, K, mu=mu)


def closed_loop_resolvent(system: TransportSystem, f: StateField, mu: float) -> StateField:
    """Resolvent of the scattering-coupled generator via the boundary lift:

    R(mu, A_coupled) f = (I + D_mu (I - Gamma D_mu)^{-1} Gamma) R(mu, A) f.

    Requires the characteristic gate r(Gamma D_mu) < 1; otherwise the
    inversion is refused with the offending radius attached.
    """
    H = transfer_operator(system, mu)
    radius = H.spectral_radius()
    if radius >= 1.0:
        raise CharacteristicGateError(mu, radius)
    base = resolvent_apply(system, f, mu)
    gamma = boundary_traces(system, base)["Gamma"]
    rhs = gamma.flat()
    sol = np.linalg.solve(np.eye(H.matrix.shape[0]) - H.matrix, rhs)
    lift = dirichlet_apply(
        system, BoundaryVector(sol.reshape(system.n_vertices, system.n_nodes)), mu
    )
    # evaluate the lift on the base grid and add sample-wise
    lift_on_grid = [
        np.stack([lift.eval(j, k, base.xs[j]) for k in range(system.n_nodes)])
        for j in range(system.n_edges)
    ]
    values = [b + l for b, l in zip(base.values, lift_on_grid)]
    return StateField(system, base.xs, values)
