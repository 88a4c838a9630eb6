"""Random hypergraphs with given degree/weight frequencies and their k-cores.

A hypergraph is a set of incidences between vertices and edges. Vertex
degrees follow a frequency vector p and edge weights (sizes) a frequency
vector q, both scaled by N. The k-core is found by repeatedly deleting every
edge that contains a vertex of degree between 1 and k-1; its limiting
frequencies are predicted by a branching-process fixed point g*.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np

from . import rng as _rng
from .errors import InvalidModelError
from .fluid import Box, FluidModel

DEFAULT_RETRY_CAP = 10_000


# --- frequency data ---------------------------------------------------------------


def _clean(freq: Mapping) -> dict:
    out = {}
    for k, v in freq.items():
        k, v = int(k), float(v)
        if v < 0:
            raise InvalidModelError(f"negative frequency at {k}")
        if v > 0:
            out[k] = v
    return out


@dataclass(frozen=True)
class FrequencyVectors:
    """Degree frequencies p_d and weight frequencies q_w (counts per unit N)."""

    p: dict
    q: dict

    def __post_init__(self):
        p, q = _clean(self.p), _clean(self.q)
        if not p or not q:
            raise InvalidModelError("frequency vectors must be non-zero")
        if 0 in p or 0 in q:
            raise InvalidModelError("degree 0 and weight 0 frequencies must vanish")
        m_p = sum(d * v for d, v in p.items())
        m_q = sum(w * v for w, v in q.items())
        if abs(m_p - m_q) > 1e-12 * max(m_p, m_q):
            raise InvalidModelError(f"total degree {m_p} differs from total weight {m_q}")
        object.__setattr__(self, "p", dict(sorted(p.items())))
        object.__setattr__(self, "q", dict(sorted(q.items())))

    @property
    def m(self) -> float:
        return sum(d * v for d, v in self.p.items())

    @property
    def L(self) -> int:
        return max(max(self.p), max(self.q))

    def p_vec(self) -> np.ndarray:
        out = np.zeros(self.L + 1)
        for d, v in self.p.items():
            out[d] = v
        return out

    def q_vec(self) -> np.ndarray:
        out = np.zeros(self.L + 1)
        for w, v in self.q.items():
            out[w] = v
        return out

    def counts(self, N: int):
        """Integer vertex and edge counts n_d = N p_d, n_w = N q_w."""
        def conv(freq, what):
            out = {}
            for k, v in freq.items():
                c = N * v
                r = round(c)
                if abs(c - r) > 1e-9:
                    raise InvalidModelError(f"N*{what}_{k} = {c} is not an integer")
                if r:
                    out[k] = int(r)
            return out

        return conv(self.p, "p"), conv(self.q, "q")

    @classmethod
    def from_size_biased(cls, lam: Mapping, sigma: Mapping, m: float = 1.0) -> "FrequencyVectors":
        """Invert lambda_d = (d+1) p_{d+1}/m and sigma_w = (w+1) q_{w+1}/m."""
        p = {d + 1: m * v / (d + 1) for d, v in _clean(lam).items()}
        q = {w + 1: m * v / (w + 1) for w, v in _clean(sigma).items()}
        return cls(p, q)


def size_biased(freq: FrequencyVectors):
    """Offspring laws lambda_d = (d+1)p_{d+1}/m and sigma_w = (w+1)q_{w+1}/m as arrays."""
    m = freq.m
    L = freq.L
    p, q = freq.p_vec(), freq.q_vec()
    lam = np.zeros(L)
    sig = np.zeros(L)
    for d in range(L):
        lam[d] = (d + 1) * p[d + 1] / m
        sig[d] = (d + 1) * q[d + 1] / m
    return lam, sig


def pgf(coeffs, z):
    """sum_k coeffs[k] z^k, vectorised over z."""
    z = np.asarray(z, dtype=np.float64)
    return np.polynomial.polynomial.polyval(z, np.asarray(coeffs, dtype=np.float64))


def pgf_derivative(coeffs, z):
    return np.polynomial.polynomial.polyval(np.asarray(z, dtype=np.float64), np.polynomial.polynomial.polyder(coeffs))


def _binomial_upper_tail(d: int, j0: int, s):
    """P(Bin(d, s) >= j0) by direct summation."""
    s = np.asarray(s, dtype=np.float64)
    total = np.zeros_like(s)
    for j in range(max(j0, 0), d + 1):
        total = total + math.comb(d, j) * s**j * (1 - s) ** (d - j)
    return total


def phi_from_laws(g, lam, sig, k: int):
    """phi(g) = sum_{j>=k-1} sum_d C(d,j) lam_d s^j (1-s)^{d-j} with s = sigma(g)."""
    s = pgf(sig, g)
    out = np.zeros_like(s)
    for d, ld in enumerate(lam):
        if ld:
            out = out + ld * _binomial_upper_tail(d, k - 1, s)
    return out


def phi_map(g, freq, k: int):
    """Branching-process survival map; accepts FrequencyVectors or a (lam, sigma) pair."""
    if k < 2:
        raise ValueError("k must be at least 2")
    lam, sig = size_biased(freq) if isinstance(freq, FrequencyVectors) else freq
    out = phi_from_laws(g, lam, sig, k)
    return float(out) if np.ndim(g) == 0 else out


@dataclass(frozen=True)
class FixedPoint:
    g_star: float
    crossing_holds: bool
    residual: float


def g_star(freq, k: int, grid: int = 10_000, bisections: int = 200, mesh: int = 100, window: float = 1e-3) -> FixedPoint:
    """Largest root of phi(g) = g in [0, 1] and whether phi crosses the diagonal there.

    g = 1 counts as a root when phi(1) = 1 (every vertex in the core). A
    descending grid scan locates the last sign change, then bisection refines
    it. The crossing check asks for phi(g) > g on a mesh just below g*.
    """
    f = lambda g: phi_map(g, freq, k) - g
    if abs(f(1.0)) <= 1e-14:
        root = 1.0
    else:
        gs = np.linspace(1.0, 0.0, grid + 1)
        vals = f(gs)
        hits = np.nonzero(vals >= 0)[0]
        if hits.size == 0:  # cannot happen since phi(0) >= 0
            root = 0.0
        else:
            i = int(hits[0])
            if vals[i] == 0 or i == 0:
                root = float(gs[i])
            else:
                lo, hi = float(gs[i]), float(gs[i - 1])  # f(lo) >= 0 > f(hi)
                for _ in range(bisections):
                    mid = 0.5 * (lo + hi)
                    if f(mid) >= 0:
                        lo = mid
                    else:
                        hi = mid
                    if hi - lo <= 1e-15:
                        break
                root = lo
    if root == 0.0:
        crossing = True
    else:
        below = np.linspace(max(0.0, root - window), root, mesh + 2)[1:-1]
        crossing = bool((f(below) > 0).all())
    return FixedPoint(root, crossing, abs(f(root)))


def iterate_phi(freq, k: int, tol: float = 1e-13, max_iter: int = 10**7) -> float:
    """g_{n+1} = phi(g_n) from g_0 = 1 until successive values agree to ``tol``."""
    g = 1.0
    for _ in range(max_iter):
        nxt = phi_map(g, freq, k)
        if abs(nxt - g) <= tol:
            return nxt
        g = nxt
    return g


@dataclass(frozen=True)
class CoreFrequencies:
    """Frequencies keyed by (d, d') for vertices and by w for edges."""

    vertex: dict
    edge: dict
    vertex_zero: dict = field(default_factory=dict)
    edge_zero: float = 0.0

    def max_difference(self, other: "CoreFrequencies") -> float:
        keys_v = set(self.vertex) | set(other.vertex)
        keys_e = set(self.edge) | set(other.edge)
        dv = max((abs(self.vertex.get(k, 0.0) - other.vertex.get(k, 0.0)) for k in keys_v), default=0.0)
        de = max((abs(self.edge.get(k, 0.0) - other.edge.get(k, 0.0)) for k in keys_e), default=0.0)
        return max(dv, de)


def limiting_frequencies(freq: FrequencyVectors, k: int, gs: float) -> CoreFrequencies:
    """Predicted core frequencies: binomial thinning of degrees and gs^w q_w."""
    _, sig = size_biased(freq)
    s = min(1.0, max(0.0, float(pgf(sig, gs))))  # a pgf on [0, 1]; rounding can push it past 1
    L = freq.L
    vertex = {}
    for d2, pd in freq.p.items():
        for d in range(k, d2 + 1):
            vertex[(d, d2)] = math.comb(d2, d) * s**d * (1 - s) ** (d2 - d) * pd
    edge = {w: gs**w * qw for w, qw in freq.q.items()}
    vertex_zero = {d2: pd - sum(vertex.get((d, d2), 0.0) for d in range(k, d2 + 1)) for d2, pd in freq.p.items()}
    edge_zero = sum(freq.q.values()) - sum(edge.values())
    return CoreFrequencies(vertex, edge, vertex_zero, edge_zero)


# --- the fluid limit of the peeling chain -----------------------------------------------


def coordinate_keys(freq: FrequencyVectors, k: int) -> list:
    L = freq.L
    keys = [("v", d, d2) for d2 in range(k, L + 1) for d in range(k, d2 + 1)]
    keys += [("e", w) for w in range(1, L + 1)]
    return keys


@dataclass(frozen=True)
class ClosedForm:
    t: float
    vertex: dict
    edge: dict
    m: float
    p: float
    h: float
    tau: float

    def vector(self, keys) -> np.ndarray:
        return np.array([self.vertex[(key[1], key[2])] if key[0] == "v" else self.edge[key[1]] for key in keys])


def fluid_closed_form(freq: FrequencyVectors, k: int, t: float) -> ClosedForm:
    """Explicit solution of the peeling limit equation at time t."""
    lam, sig = size_biased(freq)
    m = freq.m
    z = math.exp(-t)
    s = min(1.0, max(0.0, float(pgf(sig, z))))
    vertex = {}
    for d2 in range(k, freq.L + 1):
        pd = freq.p.get(d2, 0.0)
        for d in range(k, d2 + 1):
            vertex[(d, d2)] = math.comb(d2, d) * s**d * (1 - s) ** (d2 - d) * pd
    edge = {w: math.exp(-t * w) * freq.q.get(w, 0.0) for w in range(1, freq.L + 1)}
    m_t = m * z * s
    p_t = m * z * z * float(pgf_derivative(sig, z))
    h_t = m * float(phi_from_laws(z, lam, sig, k)) * s
    tau = -math.log(s) if s > 0 else math.inf
    return ClosedForm(t, vertex, edge, m_t, p_t, h_t, tau)


def hypergraph_fluid_model(freq: FrequencyVectors, k: int) -> FluidModel:
    """Limit equation of the peeling chain in the coordinates of ``coordinate_keys``."""
    keys = coordinate_keys(freq, k)
    index = {key: i for i, key in enumerate(keys)}
    L = freq.L
    w_idx = np.array([index[("e", w)] for w in range(1, L + 1)])
    ws = np.arange(1, L + 1, dtype=np.float64)
    v_pairs = [(index[key], key[1], key[2]) for key in keys if key[0] == "v"]
    up = np.array([index.get(("v", d + 1, d2), -1) for _, d, d2 in v_pairs])
    v_idx = np.array([i for i, _, _ in v_pairs])
    v_d = np.array([d for _, d, _ in v_pairs], dtype=np.float64)

    def field(x):
        x = np.asarray(x, dtype=np.float64)
        xw = x[..., w_idx]
        m_x = (ws * xw).sum(axis=-1)
        p_x = (ws * (ws - 1) * xw).sum(axis=-1)
        ratio = np.where(m_x > 0, p_x / np.where(m_x > 0, m_x, 1.0), 0.0)
        out = np.zeros_like(x)
        out[..., w_idx] = -ws * xw
        upper = np.where(up >= 0, x[..., np.maximum(up, 0)], 0.0)
        out[..., v_idx] = ratio[..., None] * ((v_d + 1) * upper - v_d * x[..., v_idx])
        return out

    x0 = np.zeros(len(keys))
    for key, i in index.items():
        if key[0] == "e":
            x0[i] = freq.q.get(key[1], 0.0)
        elif key[1] == key[2]:
            x0[i] = freq.p.get(key[1], 0.0)
    m = freq.m
    predicate = lambda x: (np.asarray(x)[..., w_idx] * ws).sum(axis=-1) > 0
    return FluidModel(
        dim=len(keys),
        field=field,
        x0=x0,
        box=Box(np.zeros(len(keys)), np.full(len(keys), m)),
        predicate=predicate,
        name="peeling",
    )


# --- instances ----------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class HypergraphInstance:
    """Vertices 0..n-1, edges as vertex tuples, and a mask of surviving edges.

    ``degree``/``weight`` refer to the surviving edges; ``orig_degree`` and
    ``orig_weight`` to the full incidence set.
    """

    N: int
    n_vertices: int
    edges: tuple
    alive: np.ndarray

    def __post_init__(self):
        edges = tuple(tuple(int(v) for v in e) for e in self.edges)
        for i, e in enumerate(edges):
            if len(set(e)) != len(e):
                raise InvalidModelError(f"edge {i} repeats a vertex")
            if e and (min(e) < 0 or max(e) >= self.n_vertices):
                raise InvalidModelError(f"edge {i} has a vertex outside 0..{self.n_vertices - 1}")
        alive = np.ones(len(edges), dtype=bool) if self.alive is None else np.asarray(self.alive, dtype=bool).copy()
        if alive.shape != (len(edges),):
            raise InvalidModelError("alive mask has the wrong length")
        alive.setflags(write=False)
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "alive", alive)
        orig_w = np.array([len(e) for e in edges], dtype=np.int64)
        orig_d = np.zeros(self.n_vertices, dtype=np.int64)
        deg = np.zeros(self.n_vertices, dtype=np.int64)
        incident = [[] for _ in range(self.n_vertices)]
        for i, e in enumerate(edges):
            for v in e:
                orig_d[v] += 1
                incident[v].append(i)
                if alive[i]:
                    deg[v] += 1
        for a in (orig_w, orig_d, deg):
            a.setflags(write=False)
        object.__setattr__(self, "orig_weight", orig_w)
        object.__setattr__(self, "orig_degree", orig_d)
        object.__setattr__(self, "degree", deg)
        object.__setattr__(self, "incident", tuple(tuple(x) for x in incident))

    @classmethod
    def from_edges(cls, n_vertices: int, edges: Sequence, N: Optional[int] = None, alive=None):
        return cls(N=N if N is not None else n_vertices, n_vertices=n_vertices, edges=tuple(edges), alive=alive)

    @property
    def weight(self) -> np.ndarray:
        return np.where(self.alive, self.orig_weight, 0)

    @property
    def n_incidences(self) -> int:
        return int(self.weight.sum())

    def with_alive(self, alive) -> "HypergraphInstance":
        return HypergraphInstance(self.N, self.n_vertices, self.edges, alive)

    def incidence_set(self) -> frozenset:
        return frozenset((v, i) for i, e in enumerate(self.edges) if self.alive[i] for v in e)

    def to_edge_list(self) -> str:
        """One line per surviving edge: edge id followed by its vertex ids."""
        return "".join(
            f"{i} {' '.join(map(str, e))}\n" for i, e in enumerate(self.edges) if self.alive[i]
        )


def generate(freq: FrequencyVectors, N: int, seed: int, retry_cap: int = DEFAULT_RETRY_CAP):
    """Uniform sample from the hypergraphs with degree counts N p and weight counts N q.

    Vertex half-incidences are matched to edge slots by a uniform random
    permutation; any matching that puts a vertex twice into one edge is
    discarded whole. Each simple hypergraph arises from the same number of
    matchings, so an accepted sample is exactly uniform. Returns the instance
    and the number of rejected matchings.
    """
    n_d, n_w = freq.counts(N)
    vdeg = np.concatenate([np.full(c, d, dtype=np.int64) for d, c in n_d.items()])
    ewt = np.concatenate([np.full(c, w, dtype=np.int64) for w, c in n_w.items()])
    if vdeg.sum() != ewt.sum():
        raise InvalidModelError("degree total and weight total differ")
    stubs = np.repeat(np.arange(vdeg.size), vdeg)
    slots = np.repeat(np.arange(ewt.size), ewt)
    bounds = np.concatenate([[0], np.cumsum(ewt)])
    g = _rng.generator(seed)
    nv = vdeg.size
    for attempt in range(retry_cap + 1):
        perm = g.permutation(stubs)
        keys = slots * nv + perm
        if np.unique(keys).size == keys.size:
            edges = tuple(tuple(perm[bounds[i] : bounds[i + 1]].tolist()) for i in range(ewt.size))
            return HypergraphInstance(N=N, n_vertices=nv, edges=edges, alive=None), attempt
    raise InvalidModelError(f"no simple hypergraph after {retry_cap} rejected matchings")


def k_core(h: HypergraphInstance, k: int) -> HypergraphInstance:
    """Largest sub-hypergraph whose vertices of positive degree all have degree >= k.

    Edges are deleted whole: any surviving edge with a vertex of degree
    1..k-1 goes, repeatedly, until none is left.
    """
    if k < 2:
        raise ValueError("k must be at least 2")
    alive = h.alive.copy()
    deg = h.degree.copy()
    stack = [v for v in range(h.n_vertices) if 1 <= deg[v] < k]
    while stack:
        v = stack.pop()
        if not 1 <= deg[v] < k:
            continue
        for e in h.incident[v]:
            if alive[e]:
                alive[e] = False
                for u in h.edges[e]:
                    deg[u] -= 1
                    if 1 <= deg[u] < k:
                        stack.append(u)
    return h.with_alive(alive)


# --- the peeling chain ---------------------------------------------------------------


@dataclass(frozen=True)
class PeelState:
    """Counts xi^{d,d'} (current degree d, original d') and xi^w (surviving edges of weight w)."""

    vertex: np.ndarray
    edge: np.ndarray
    k: int

    @property
    def by_degree(self) -> np.ndarray:
        return self.vertex.sum(axis=1)

    @property
    def n(self) -> int:
        return int(self.by_degree[1 : self.k].sum())

    @property
    def l(self) -> int:
        xd = self.by_degree
        return int((np.arange(xd.size)[1 : self.k] * xd[1 : self.k]).sum())

    @property
    def h(self) -> int:
        xd = self.by_degree
        return int((np.arange(xd.size)[self.k :] * xd[self.k :]).sum())

    @property
    def m(self) -> int:
        w = np.arange(self.edge.size)
        return int((w * self.edge).sum())

    @property
    def p(self) -> int:
        w = np.arange(self.edge.size)
        return int((w * (w - 1) * self.edge).sum())

    @property
    def q(self) -> float:
        return self.m * self.n / self.l if self.l else 0.0

    def incidence_conserved(self) -> bool:
        d = np.arange(self.vertex.shape[0])
        return int((d * self.by_degree).sum()) == self.m


def peel_counts(h: HypergraphInstance, k: int) -> PeelState:
    L = max(int(h.orig_degree.max(initial=0)), int(h.orig_weight.max(initial=0)), 1)
    vertex = np.zeros((L + 1, L + 1), dtype=np.int64)
    np.add.at(vertex, (h.degree, h.orig_degree), 1)
    edge = np.zeros(L + 1, dtype=np.int64)
    np.add.at(edge, h.weight[h.alive], 1)
    return PeelState(vertex, edge, k)


@dataclass(frozen=True, eq=False)
class PeelResult:
    states: list
    times: np.ndarray
    removed: list
    core: HypergraphInstance

    @property
    def steps(self) -> int:
        return len(self.states) - 1

    @property
    def final(self) -> PeelState:
        return self.states[-1]


class _IndexedSet:
    """Set of small integers with O(1) insert, delete and uniform choice."""

    def __init__(self, size):
        self.items = []
        self.pos = np.full(size, -1, dtype=np.int64)

    def __len__(self):
        return len(self.items)

    def add(self, v):
        if self.pos[v] < 0:
            self.pos[v] = len(self.items)
            self.items.append(v)

    def discard(self, v):
        i = self.pos[v]
        if i >= 0:
            last = self.items.pop()
            if last != v:
                self.items[i] = last
                self.pos[last] = i
            self.pos[v] = -1


def peel_chain(h: HypergraphInstance, k: int, seed: int, record: bool = True) -> PeelResult:
    """Delete all edges at a uniformly chosen light vertex until none is left.

    A vertex is light when its degree lies in 1..k-1. The continuous-time
    version holds each state for an Exponential(q) time with
    q = m n / l (total weight times light count over light degree).
    """
    if k < 2:
        raise ValueError("k must be at least 2")
    g = _rng.generator(seed)
    alive = h.alive.copy()
    deg = h.degree.copy()
    odeg = h.orig_degree
    state = peel_counts(h, k)
    vertex, edge = state.vertex.copy(), state.edge.copy()
    light = _IndexedSet(h.n_vertices)
    for v in range(h.n_vertices):
        if 1 <= deg[v] < k:
            light.add(v)
    states = [PeelState(vertex.copy(), edge.copy(), k)]
    times = [0.0]
    removed = []
    t = 0.0
    while len(light):
        q = states[-1].q
        t += g.exponential(1.0 / q)
        v = light.items[int(g.integers(len(light)))]
        removed.append(v)
        for e in h.incident[v]:
            if not alive[e]:
                continue
            alive[e] = False
            edge[h.orig_weight[e]] -= 1
            for u in h.edges[e]:
                vertex[deg[u], odeg[u]] -= 1
                deg[u] -= 1
                vertex[deg[u], odeg[u]] += 1
                if 1 <= deg[u] < k:
                    light.add(u)
                else:
                    light.discard(u)
        snap = PeelState(vertex.copy(), edge.copy(), k)
        if record:
            states.append(snap)
            times.append(t)
        else:
            states[-1:] = [snap]
    if not record and len(states) == 1 and removed:
        times = [t]
    return PeelResult(states, np.asarray(times), removed, h.with_alive(alive))


def empirical_core_frequencies(core: HypergraphInstance, original: HypergraphInstance, k: int) -> CoreFrequencies:
    """Normalised counts of (core degree, original degree) pairs and core weights.

    Only entries with core degree >= k and weight >= 1 are reported in the
    main maps; the zero classes are returned separately.
    """
    if core.edges != original.edges:
        raise InvalidModelError("core and original must share vertex and edge sets")
    N = original.N
    vertex, vertex_zero = {}, {}
    for d, d2 in zip(core.degree.tolist(), original.orig_degree.tolist()):
        if d >= k:
            vertex[(d, d2)] = vertex.get((d, d2), 0) + 1
        elif d == 0:
            vertex_zero[d2] = vertex_zero.get(d2, 0) + 1
    edge = {}
    for w in core.weight.tolist():
        if w >= 1:
            edge[w] = edge.get(w, 0) + 1
    n_zero = int((core.weight == 0).sum())
    return CoreFrequencies(
        {key: c / N for key, c in vertex.items()},
        {w: c / N for w, c in edge.items()},
        {d2: c / N for d2, c in vertex_zero.items()},
        n_zero / N,
    )


def peel_state_frequencies(state: PeelState, N: int) -> CoreFrequencies:
    """Terminal peeling counts in the same form as ``empirical_core_frequencies``."""
    vertex = {}
    L = state.vertex.shape[0] - 1
    for d in range(state.k, L + 1):
        for d2 in range(d, L + 1):
            if state.vertex[d, d2]:
                vertex[(d, d2)] = state.vertex[d, d2] / N
    edge = {w: state.edge[w] / N for w in range(1, state.edge.size) if state.edge[w]}
    return CoreFrequencies(vertex, edge)
