"""Builtin chains paired with their limit equations, plus closed-form helpers.

Every ``make_*`` constructor returns a :class:`Model` holding the chain, the
fluid model and the canonical initial state.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, NamedTuple, Optional, Union

import numpy as np
from scipy import integrate as sp_integrate
from scipy import stats

from .ctmc import Channel, ChainSpec
from .errors import InvalidModelError, PreconditionError
from .fluid import Box, FluidModel


class Model(NamedTuple):
    spec: ChainSpec
    fluid: FluidModel
    init: np.ndarray


def _require(cond, msg):
    if not cond:
        raise InvalidModelError(msg)


def _as_int_count(value, what):
    r = round(value)
    if abs(value - r) > 1e-9:
        raise InvalidModelError(f"{what}={value!r} must be an integer")
    return int(r)


def _scaled(N):
    return lambda s: np.asarray(s, dtype=np.float64) / N


# --- simple population models -------------------------------------------------------


def make_poisson(lam: float = 1.0, N: float = 100, x0: float = 0.0) -> Model:
    """Poisson process of rate lam*N observed as X/N."""
    _require(lam > 0 and N > 0, "lam and N must be positive")
    init = np.array([_as_int_count(N * x0, "N*x0")])
    spec = ChainSpec(
        dim=1,
        channels=[Channel([1], lambda s: np.full(s.shape[0], lam * N), "arrival")],
        coord=_scaled(N),
        scale_hint=N,
        name="poisson",
    )
    fluid = FluidModel(dim=1, field=lambda x: np.full_like(x, lam), x0=[init[0] / N], lipschitz_K=0.0, name="poisson")
    return Model(spec, fluid, init)


def make_mm_inf(N: float = 100, x0: float = 0.0) -> Model:
    """Infinite-server queue with arrivals at rate N and unit service, observed as X/N."""
    _require(N > 0 and x0 >= 0, "N must be positive and x0 nonnegative")
    init = np.array([_as_int_count(N * x0, "N*x0")])
    spec = ChainSpec(
        dim=1,
        channels=[
            Channel([1], lambda s: np.full(s.shape[0], float(N)), "arrival"),
            Channel([-1], lambda s: s[..., 0].astype(np.float64), "service"),
        ],
        coord=_scaled(N),
        scale_hint=N,
        name="mm_inf",
    )
    fluid = FluidModel(
        dim=1,
        field=lambda x: 1.0 - x,
        x0=[init[0] / N],
        lipschitz_K=1.0,
        box=Box([0.0], [np.inf]),
        name="mm_inf",
    )
    return Model(spec, fluid, init)


def mm_inf_exact(x0, t):
    """Solution of x' = 1 - x started at x0 (1 + x0 e^{-t} starts at 1 + x0 instead)."""
    return 1.0 + (x0 - 1.0) * np.exp(-np.asarray(t, dtype=np.float64))


def make_queue(lam: float = 1.0, mu: float = 1.0, x0: int = 0) -> Model:
    """Unscaled M/M/infinity queue: arrivals at rate lam, each customer served at rate mu."""
    _require(lam >= 0 and mu > 0 and x0 >= 0, "need lam >= 0, mu > 0, x0 >= 0")
    spec = ChainSpec(
        dim=1,
        channels=[
            Channel([1], lambda s: np.full(s.shape[0], float(lam)), "arrival"),
            Channel([-1], lambda s: mu * s[..., 0].astype(np.float64), "service"),
        ],
        name="queue",
    )
    fluid = FluidModel(dim=1, field=lambda x: lam - mu * x, x0=[x0], lipschitz_K=mu, box=Box([0.0], [np.inf]), name="queue")
    return Model(spec, fluid, np.array([int(x0)]))


def make_reaction(lam: float = 1.0, mu: float = 1.0, N: float = 100, x0=(0.5, 0.5, 0.0)) -> Model:
    """Reversible reaction A + B <-> C with counts scaled by N."""
    _require(lam > 0 and mu > 0 and N > 0, "lam, mu and N must be positive")
    x0 = np.asarray(x0, dtype=np.float64)
    _require(x0.shape == (3,) and (x0 >= 0).all(), "x0 must be three nonnegative fractions")
    init = np.array([_as_int_count(N * v, "N*x0") for v in x0])
    spec = ChainSpec(
        dim=3,
        channels=[
            Channel([-1, -1, 1], lambda s: (lam / N) * s[..., 0] * s[..., 1], "bind"),
            Channel([1, 1, -1], lambda s: mu * s[..., 2].astype(np.float64), "unbind"),
        ],
        coord=_scaled(N),
        scale_hint=N,
        name="reaction",
    )

    def b(x):
        r = mu * x[..., 2] - lam * x[..., 0] * x[..., 1]
        return np.stack([r, r, -r], axis=-1)

    xi = init / N
    top = max(xi[0] + xi[2], xi[1] + xi[2])
    fluid = FluidModel(
        dim=3,
        field=b,
        x0=xi,
        lipschitz_K=2 * lam * top + mu,
        box=Box(np.zeros(3), np.full(3, top)),
        name="reaction",
    )
    return Model(spec, fluid, init)


def make_gunfight(alpha: float = 1.0, beta: float = 1.0, N: float = 100, x0=(1.0, 1.0)) -> Model:
    """Two gangs: A loses one member at rate beta*B, B loses one at rate alpha*A.

    A side with nobody left cannot lose members, so rates are switched off at
    zero counts (the limit field is matched away from the axes).
    """
    _require(alpha > 0 and beta > 0 and N > 0, "alpha, beta and N must be positive")
    x0 = np.asarray(x0, dtype=np.float64)
    init = np.array([_as_int_count(N * v, "N*x0") for v in x0])
    spec = ChainSpec(
        dim=2,
        channels=[
            Channel([0, -1], lambda s: alpha * s[..., 0] * (s[..., 1] > 0), "A hits B"),
            Channel([-1, 0], lambda s: beta * s[..., 1] * (s[..., 0] > 0), "B hits A"),
        ],
        coord=_scaled(N),
        scale_hint=N,
        name="gunfight",
    )
    fluid = FluidModel(
        dim=2,
        field=lambda x: np.stack([-beta * x[..., 1], -alpha * x[..., 0]], axis=-1),
        x0=init / N,
        lipschitz_K=max(alpha, beta),
        box=Box(np.zeros(2), init / N),
        name="gunfight",
    )
    return Model(spec, fluid, init)


def make_branching(offspring: Mapping[int, float], N: float = 100, x0: float = 1.0) -> Model:
    """Branching process with unit-rate lifetimes and finite-support offspring law.

    Each individual is replaced by k offspring at rate P(Z = k); the count
    changes by k - 1 (k = 1 is a null event and is dropped).
    """
    law = {int(k): float(v) for k, v in offspring.items() if float(v) > 0}
    _require(law and all(k >= 0 for k in law), "offspring law needs nonnegative support")
    total = sum(law.values())
    _require(abs(total - 1.0) < 1e-9, f"offspring probabilities sum to {total}, not 1")
    mean = sum(k * v for k, v in law.items())
    init = np.array([_as_int_count(N * x0, "N*x0")])
    channels = [
        Channel([k - 1], (lambda pk: lambda s: pk * s[..., 0].astype(np.float64))(pk), f"offspring={k}")
        for k, pk in sorted(law.items())
        if k != 1
    ]
    spec = ChainSpec(dim=1, channels=channels, coord=_scaled(N), scale_hint=N, name="branching")
    fluid = FluidModel(
        dim=1,
        field=lambda x: (mean - 1.0) * x,
        x0=[init[0] / N],
        lipschitz_K=abs(mean - 1.0),
        box=Box([0.0], [np.inf]),
        name="branching",
    )
    return Model(spec, fluid, init)


# --- epidemic ------------------------------------------------------------------


@dataclass(frozen=True)
class EpidemicParams:
    N: int = 1000
    lam: float = 5.0
    p: float = 0.1

    def __post_init__(self):
        _require(self.N >= 1, "N must be at least 1")
        _require(self.lam > 0, "lambda must be positive")
        _require(0 < self.p < 1, "p must lie in (0, 1)")
        _as_int_count(self.N * self.p, "N*p")

    @property
    def init(self) -> np.ndarray:
        infected = _as_int_count(self.N * self.p, "N*p")
        return np.array([self.N - infected, infected])

    @property
    def K(self) -> float:
        return self.lam + max(self.lam, 1.0)


def epidemic_field(lam):
    def b(x):
        inf = lam * x[..., 0] * x[..., 1]
        return np.stack([-inf, inf - x[..., 1]], axis=-1)

    return b


def make_epidemic(params: EpidemicParams) -> Model:
    """SIR epidemic with removal rate 1; coordinates are (susceptible, infective)/N."""
    N, lam = params.N, params.lam
    spec = ChainSpec(
        dim=2,
        channels=[
            Channel([-1, 1], lambda s: (lam / N) * s[..., 0] * s[..., 1], "infection"),
            Channel([0, -1], lambda s: s[..., 1].astype(np.float64), "removal"),
        ],
        coord=_scaled(N),
        scale_hint=N,
        name="epidemic",
    )
    fluid = FluidModel(
        dim=2,
        field=epidemic_field(lam),
        x0=[1 - params.p, params.p],
        lipschitz_K=params.K,
        box=Box([0.0, 0.0], [1.0, 1.0]),
        name="epidemic",
    )
    return Model(spec, fluid, params.init)


def make_epidemic_timechanged(params: EpidemicParams) -> Model:
    """The epidemic with every rate divided by the infective fraction.

    Rates are q N / xi^2 (infection lam xi^1, removal N), which is what the
    limit field (-lam x1, lam x1 - 1) requires. Terminal values are
    unchanged; the chain is absorbed once no infective is left, and the limit
    path leaves U = (0,1]^2 exactly at the final size.
    """
    N, lam = params.N, params.lam
    spec = ChainSpec(
        dim=2,
        channels=[
            Channel([-1, 1], lambda s: lam * s[..., 0] * (s[..., 1] > 0), "infection"),
            Channel([0, -1], lambda s: float(N) * (s[..., 1] > 0), "removal"),
        ],
        coord=_scaled(N),
        scale_hint=N,
        name="epidemic_timechanged",
    )
    fluid = FluidModel(
        dim=2,
        field=lambda x: np.stack([-lam * x[..., 0], lam * x[..., 0] - 1.0 + 0.0 * x[..., 1]], axis=-1),
        x0=[1 - params.p, params.p],
        lipschitz_K=params.K,
        box=Box([0.0, 0.0], [1.0, 1.0], lower_open=True),
        name="epidemic_timechanged",
    )
    return Model(spec, fluid, params.init)


def timechanged_closed_form(lam, p, t):
    """(x1, x2, x3) of the time-changed limit: x3_t = t."""
    t = np.asarray(t, dtype=np.float64)
    x1 = (1 - p) * np.exp(-lam * t)
    x2 = 1 - t - x1
    return np.stack([x1, x2, t], axis=-1)


def sir_final_size(lam: float, p: float, tol: float = 1e-12) -> float:
    """Root of tau + (1-p) e^{-lam tau} = 1 on [p, 1] by bisection."""
    if not (lam > 0 and 0 < p < 1):
        raise ValueError("need lam > 0 and p in (0, 1)")
    g = lambda tau: tau + (1 - p) * math.exp(-lam * tau) - 1.0
    lo, hi = p, 1.0
    for _ in range(400):
        mid = 0.5 * (lo + hi)
        if g(mid) < 0:
            lo = mid
        else:
            hi = mid
        if hi - lo < tol * 1e-3:
            break
    return 0.5 * (lo + hi)


def epidemic_A(lam: float, N: float) -> float:
    """Noise level (1+lam)e/N under which the exponential-noise event always holds."""
    return (1 + lam) * math.e / N


def epidemic_C(lam: float, t0: float) -> float:
    """Constant C = 18(lam+1) t0 e^{2 K t0 + 1} of the epidemic tube bound."""
    K = lam + max(lam, 1.0)
    return 18 * (lam + 1) * t0 * math.exp(2 * K * t0 + 1)


def epidemic_bound(N: float, lam: float, eps: float, t0: float) -> float:
    """4 exp(-N eps^2 / C), unclamped."""
    return 4 * math.exp(-N * eps * eps / epidemic_C(lam, t0))


# --- viral replication --------------------------------------------------------------


@dataclass(frozen=True)
class ViralParams:
    """Genomes (slow, scale R), templates (fast, O(1)) and proteins (fast, scale N)."""

    alpha: float = 2.0
    R: int = 200
    N: int = 200
    lam: float = 1.0
    mu: float = 1.0
    nu: float = 1.0
    x0: Optional[float] = None

    def __post_init__(self):
        _require(self.alpha > 1, "alpha must exceed 1")
        _require(self.R >= 1 and self.N >= self.R, "need R >= 1 and N >= R")
        _require(self.lam > 0 and self.mu > 0 and self.nu > 0, "lam, mu, nu must be positive")
        x0 = self.x_inf / 2 if self.x0 is None else self.x0
        _require(0 <= x0 <= self.x_inf, "x0 must lie in [0, x_inf]")
        object.__setattr__(self, "x0", float(x0))
        _as_int_count(self.R * x0, "R*x0")

    @property
    def x_inf(self) -> float:
        return (self.alpha - 1) / (self.alpha * self.mu * self.nu)

    @property
    def init(self) -> np.ndarray:
        return np.array([_as_int_count(self.R * self.x0, "R*x0"), 0, 0])

    @property
    def K(self) -> float:
        """sup |b'| on [0, x_inf + 1]."""
        a = self.lam * (self.alpha - 1)
        c = 2 * self.lam * self.alpha * self.mu * self.nu
        return max(abs(a), abs(a - c * (self.x_inf + 1)))


def viral_chi(pr: ViralParams, s) -> np.ndarray:
    s = np.asarray(s, dtype=np.float64)
    g, t, p = s[..., 0], s[..., 1], s[..., 2]
    R, N = pr.R, pr.N
    mn = pr.mu * pr.nu
    return (pr.alpha * t - mn * g * p / (R * N) - pr.alpha * mn * (g / R) * t) / R


def viral_coord(pr: ViralParams, s) -> np.ndarray:
    s = np.asarray(s, dtype=np.float64)
    return s[..., 0] / pr.R + viral_chi(pr, s)


def viral_increment(pr: ViralParams, s, jump) -> np.ndarray:
    """Exact change of the corrected coordinate under an integer jump."""
    s = np.asarray(s, dtype=np.float64)
    g, t, p = s[..., 0], s[..., 1], s[..., 2]
    dg, dt, dp = (float(v) for v in jump)
    R, N = pr.R, pr.N
    mn = pr.mu * pr.nu
    d_gp = dg * p + g * dp + dg * dp
    d_gt = dg * t + g * dt + dg * dt
    d_chi = (pr.alpha * dt - mn * d_gp / (R * N) - pr.alpha * mn * d_gt / R) / R
    return (dg / R + d_chi)[..., None]


def viral_field(pr: ViralParams):
    a = pr.lam * (pr.alpha - 1)
    c = pr.lam * pr.alpha * pr.mu * pr.nu
    return lambda x: a * x - c * x * x


def make_viral(pr: ViralParams) -> Model:
    """Viral replication with the fast-variable corrected genome coordinate.

    Reactions: genome -> template (rate lam per genome), template decay
    (R/alpha each), template makes a genome (R each), template makes a
    protein (R N each), protein decay (R/mu each), genome + protein bind and
    leave (total rate nu g p / N).
    """
    R, N = pr.R, pr.N
    lam, alpha, mu, nu = pr.lam, pr.alpha, pr.mu, pr.nu
    f = lambda s: s.astype(np.float64)
    channels = [
        Channel([-1, 1, 0], lambda s: lam * f(s[..., 0]), "genome->template"),
        Channel([0, -1, 0], lambda s: (R / alpha) * f(s[..., 1]), "template decay"),
        Channel([1, 0, 0], lambda s: R * f(s[..., 1]), "genome production"),
        Channel([0, 0, 1], lambda s: (R * N) * f(s[..., 1]), "protein production"),
        Channel([0, 0, -1], lambda s: (R / mu) * f(s[..., 2]), "protein decay"),
        Channel([-1, 0, -1], lambda s: (nu / N) * f(s[..., 0]) * f(s[..., 2]), "genome+protein"),
    ]
    spec = ChainSpec(
        dim=3,
        channels=channels,
        coord=lambda s: viral_coord(pr, s)[..., None],
        coord_dim=1,
        increment=lambda s, jump: viral_increment(pr, s, jump),
        scale_hint=R,
        name="viral",
    )
    fluid = FluidModel(
        dim=1,
        field=viral_field(pr),
        x0=[pr.init[0] / R],
        lipschitz_K=pr.K,
        box=Box([0.0], [pr.x_inf + 1.0]),
        name="viral",
    )
    return Model(spec, fluid, pr.init)


def viral_delta(pr: ViralParams, state) -> np.ndarray:
    """Drift mismatch R (beta - b(x)) evaluated term by term."""
    s = np.asarray(state, dtype=np.float64)
    g, t, p = s[..., 0], s[..., 1], s[..., 2]
    R, N = pr.R, pr.N
    lam, alpha, mu, nu = pr.lam, pr.alpha, pr.mu, pr.nu
    mn = mu * nu
    chi = viral_chi(pr, s)
    return (
        lam * mn * g * p / (R * N)
        + alpha * lam * mn * (t + 1) * g / R
        - mn * t * p / N
        - alpha * mn * t * t
        + alpha * mu * nu * nu * (g / R) * t * (p / N)
        + mu * nu * nu * (g * p / (R * N)) * (g + p - 1) / N
        - lam * (alpha - 1) * R * chi
        + lam * alpha * mn * (2 * R * chi * g / R + R * chi * chi)
    )


# --- generic mass-action networks ---------------------------------------------------


def make_mass_action(channels, N: float = 100, x0=None, box=None) -> Model:
    """Chain from a channel table under density-dependent mass action.

    Each channel is a mapping with ``jump`` (integer vector), ``rate``
    (constant c) and optional ``order`` (exponents a). It fires at rate
    c N prod_i (xi_i/N)^{a_i}, so the limit field is sum jump * c prod x^a.
    ``box`` is a pair (lower, upper) for U; the Lipschitz constant is then
    estimated by sampling.
    """
    from .fluid import estimate_lipschitz

    _require(N > 0, "N must be positive")
    _require(len(channels) > 0, "channel table is empty")
    jumps = [np.asarray(ch["jump"], dtype=np.int64) for ch in channels]
    dim = jumps[0].size
    consts, orders = [], []
    for i, ch in enumerate(channels):
        unknown = set(ch) - {"jump", "rate", "order", "name"}
        _require(not unknown, f"channel {i} has unknown field(s) {sorted(unknown)}")
        _require(jumps[i].size == dim, f"channel {i} jump has the wrong length")
        c = float(ch["rate"])
        _require(c >= 0, f"channel {i} rate must be nonnegative")
        a = np.asarray(ch.get("order", [0] * dim), dtype=np.int64)
        _require(a.size == dim and (a >= 0).all(), f"channel {i} order must be {dim} nonnegative integers")
        consts.append(c)
        orders.append(a)
    x0 = np.zeros(dim) if x0 is None else np.asarray(x0, dtype=np.float64)
    init = np.array([_as_int_count(N * v, "N*x0") for v in x0], dtype=np.int64)

    def rate_fn(c, a):
        def rate(s):
            x = np.asarray(s, dtype=np.float64) / N
            return c * N * np.prod(np.maximum(x, 0.0) ** a, axis=1)
        return rate

    spec = ChainSpec(
        dim=dim,
        channels=[
            Channel(j, rate_fn(c, a), ch.get("name", f"r{i}"))
            for i, (j, c, a, ch) in enumerate(zip(jumps, consts, orders, channels))
        ],
        coord=_scaled(N),
        scale_hint=N,
        name="mass_action",
    )
    J = np.stack(jumps).astype(np.float64)
    C = np.asarray(consts)
    A = np.stack(orders)

    def field_fn(x):
        x = np.asarray(x, dtype=np.float64)
        mono = np.prod(np.maximum(x[..., None, :], 0.0) ** A, axis=-1) * C
        return mono @ J

    fbox = None if box is None else Box(np.asarray(box[0], dtype=np.float64), np.asarray(box[1], dtype=np.float64))
    fluid = FluidModel(dim=dim, field=field_fn, x0=init / N, box=fbox, name="mass_action")
    if fbox is not None and fbox.bounded:
        fluid = fluid.with_K(estimate_lipschitz(fluid), approximate=True)
    return Model(spec, fluid, init)


# --- infinite-server queue estimates -----------------------------------------------


def poisson_tail(lam: float, x: float) -> float:
    """Chernoff bound exp(-x log(x/(lam e))) on P(Poisson(lam) >= x); 1 when x <= lam e."""
    if x < 0:
        raise ValueError("x must be nonnegative")
    if lam <= 0:
        return 0.0 if x > 0 else 1.0
    if x <= lam * math.e:
        return 1.0
    return math.exp(-x * math.log(x / (lam * math.e)))


def poisson_tail_exact(lam: float, x: float) -> float:
    """P(Poisson(lam) >= x) by direct summation."""
    k = math.ceil(x)
    if k <= 0:
        return 1.0
    return float(stats.poisson.sf(k - 1, lam))


def mminf_sup_tail(x0, lam, mu, t, a) -> float:
    """Bound on P(sup_{s<=t} X_s >= x0 + log(mu t) + a) for an infinite-server queue."""
    if t < 1 / mu:
        raise PreconditionError(f"need t >= 1/mu = {1 / mu:g}, got t={t:g}")
    a_min = 3 * lam * math.e**2 / mu
    if a < a_min:
        raise PreconditionError(f"need a >= 3 lam e^2/mu = {a_min:g}, got a={a:g}")
    return math.exp(-a * math.log(mu * a / (3 * lam * math.e)))


def mminf_exp_moment(x0, lambda_path: Union[float, Callable], mu, theta, t) -> float:
    """Bound (mu/(mu-theta))^x0 exp(theta/(mu-theta) int_0^t lam_s ds) on E exp(theta int X)."""
    if not 0 <= theta < mu:
        raise PreconditionError(f"need 0 <= theta < mu = {mu:g}, got theta={theta:g}")
    if callable(lambda_path):
        mass = sp_integrate.quad(lambda_path, 0.0, t, limit=200)[0]
    else:
        mass = float(lambda_path) * t
    return (mu / (mu - theta)) ** x0 * math.exp(theta / (mu - theta) * mass)


# --- registry used by the command line -----------------------------------------------


@dataclass(frozen=True)
class ModelEntry:
    build: Callable
    params: dict
    description: str


def _build_epidemic(**kw):
    return make_epidemic(EpidemicParams(**kw))


def _build_epidemic_tc(**kw):
    return make_epidemic_timechanged(EpidemicParams(**kw))


def _build_viral(**kw):
    return make_viral(ViralParams(**kw))


def _build_branching(offspring, **kw):
    return make_branching({int(k): v for k, v in offspring.items()}, **kw)


REGISTRY = {
    "poisson": ModelEntry(make_poisson, {"lam": 1.0, "N": 100, "x0": 0.0}, "Poisson process scaled by N"),
    "mm_inf": ModelEntry(make_mm_inf, {"N": 100, "x0": 0.0}, "infinite-server queue, arrivals at rate N"),
    "queue": ModelEntry(make_queue, {"lam": 1.0, "mu": 1.0, "x0": 0}, "unscaled infinite-server queue"),
    "reaction": ModelEntry(
        make_reaction, {"lam": 1.0, "mu": 1.0, "N": 100, "x0": [0.5, 0.5, 0.0]}, "A + B <-> C"
    ),
    "gunfight": ModelEntry(
        make_gunfight, {"alpha": 1.0, "beta": 1.0, "N": 100, "x0": [1.0, 1.0]}, "two-gang attrition"
    ),
    "branching": ModelEntry(
        _build_branching, {"offspring": {0: 0.5, 2: 0.5}, "N": 100, "x0": 1.0}, "finite-support branching"
    ),
    "epidemic": ModelEntry(_build_epidemic, {"N": 1000, "lam": 5.0, "p": 0.1}, "SIR epidemic"),
    "epidemic_timechanged": ModelEntry(
        _build_epidemic_tc, {"N": 1000, "lam": 5.0, "p": 0.1}, "SIR epidemic run at rate / infectives"
    ),
    "viral": ModelEntry(
        _build_viral,
        {"alpha": 2.0, "R": 200, "N": 200, "lam": 1.0, "mu": 1.0, "nu": 1.0, "x0": None},
        "viral replication, corrected genome coordinate",
    ),
}


def build(name: str, params: Optional[Mapping] = None) -> Model:
    """Construct a registered model; unknown parameter names are rejected."""
    if name not in REGISTRY:
        raise InvalidModelError(f"unknown model {name!r}; choose from {sorted(REGISTRY)}")
    entry = REGISTRY[name]
    params = dict(params or {})
    unknown = set(params) - set(entry.params)
    if unknown:
        raise InvalidModelError(f"model {name!r} has no parameter(s) {sorted(unknown)}")
    kw = {**entry.params, **params}
    return entry.build(**kw)
