"""Coupling a derived label process to a fluid-modulated Markov chain.

Given a chain X, a label map y and target rates g(x, y, y'), the joint chain
(X_t, y_t) below moves X with its own rates and moves y_t with rates
g_t(y, y') = g(x_t, y, y') evaluated on the fluid path, while keeping y_t equal
to y(X_t) for as long as the two sets of rates allow.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Hashable, Iterable, Optional

import numpy as np

from . import rng as _rng
from .bounds import exp_term
from .ctmc import DEFAULT_MAX_EVENTS, Channel, ChainSpec
from .errors import InvalidModelError, TruncationError
from .fluid import FluidPath

ENVELOPE_SLACK = 1.01


@dataclass(frozen=True, eq=False)
class ModulationSpec:
    """Label map, target label rates and the constants of the decoupling bound.

    ``label(state)`` returns a hashable label for one state vector.
    ``rates(x, y)`` returns ``{y': g(x, y, y')}`` for labels ``y' != y``.
    ``in_I0(y)`` restricts the label set (default: every label).
    """

    label: Callable
    rates: Callable
    G: float = 0.0
    kappa: float = 0.0
    kappa_estimated: bool = False
    in_I0: Optional[Callable] = None

    def g(self, x, y, y2) -> float:
        return float(self.rates(x, y).get(y2, 0.0))

    def allowed(self, y) -> bool:
        return True if self.in_I0 is None else bool(self.in_I0(y))


def _jump_labels(spec: ChainSpec, mod: ModulationSpec, state):
    state = np.asarray(state, dtype=np.int64)
    return [mod.label(state + j) for j in spec.jumps]


def gamma(spec: ChainSpec, mod: ModulationSpec, state, y2) -> float:
    """Total rate of jumps of the chain that land in label class ``y2``."""
    state = np.asarray(state, dtype=np.int64)
    if y2 == mod.label(state):
        raise ValueError("gamma is defined only for labels different from the current one")
    rates = spec.rate_matrix(state[None, :])[0]
    return float(sum(r for r, lab in zip(rates, _jump_labels(spec, mod, state)) if lab == y2))


def gamma_all(spec, mod, state, rates=None, labels=None) -> dict:
    state = np.asarray(state, dtype=np.int64)
    rates = spec.rate_matrix(state[None, :])[0] if rates is None else rates
    labels = _jump_labels(spec, mod, state) if labels is None else labels
    here = mod.label(state)
    out = {}
    for r, lab in zip(rates, labels):
        if lab != here:
            out[lab] = out.get(lab, 0.0) + float(r)
    return out


def _follow_probability(g, gam):
    if gam <= 0.0:
        # a jump into this class cannot happen when its total rate is zero
        return 0.0
    return min(1.0, g / gam)


def coupled_kernel(spec: ChainSpec, mod: ModulationSpec, state, label, t: float, fluid: FluidPath) -> dict:
    """Jump rates of the joint chain out of ``(state, label)`` at time ``t``.

    Returns ``{(state', label'): rate}`` with ``state'`` as a tuple. Entries
    with zero rate are omitted.
    """
    state = np.asarray(state, dtype=np.int64)
    x = fluid.at(t)
    rates = spec.rate_matrix(state[None, :])[0]
    labels = _jump_labels(spec, mod, state)
    g_t = mod.rates(x, label)
    out = {}

    def add(key, r):
        if r > 0.0:
            out[key] = out.get(key, 0.0) + r

    here = mod.label(state)
    if label == here:
        gam = gamma_all(spec, mod, state, rates, labels)
        for c, jump in enumerate(spec.jumps):
            nxt = tuple((state + jump).tolist())
            lab = labels[c]
            q = float(rates[c])
            if lab == here:
                add((nxt, lab), q)
            else:
                gy, gm = g_t.get(lab, 0.0), gam[lab]
                f = _follow_probability(gy, gm)
                add((nxt, lab), q * f)
                add((nxt, label), q * max(0.0, 1.0 - gy / gm) if gm > 0 else 0.0)
        for y2, gy in g_t.items():
            if y2 != label:
                add((tuple(state.tolist()), y2), max(0.0, gy - gam.get(y2, 0.0)))
    else:
        for c, jump in enumerate(spec.jumps):
            add((tuple((state + jump).tolist()), label), float(rates[c]))
        for y2, gy in g_t.items():
            if y2 != label:
                add((tuple(state.tolist()), y2), gy)
    return out


def hazard(spec, mod, state, t, fluid) -> float:
    """Desynchronisation hazard sum_{y'} |gamma(state, y') - g_t(y, y')|."""
    here = mod.label(np.asarray(state, dtype=np.int64))
    gam = gamma_all(spec, mod, state)
    g_t = mod.rates(fluid.at(t), here)
    keys = (set(gam) | set(g_t)) - {here}
    return float(sum(abs(gam.get(k, 0.0) - g_t.get(k, 0.0)) for k in keys))


@dataclass(frozen=True, eq=False)
class CoupledTrajectory:
    seed: int
    times: np.ndarray
    states: np.ndarray
    labels: list
    decouple_time: float
    tau: float
    t0: float

    @property
    def decoupled(self) -> bool:
        return self.decouple_time < self.t0

    def label_at(self, t):
        return self.labels[int(np.searchsorted(self.times, t, side="right") - 1)]

    def state_at(self, t):
        return self.states[int(np.searchsorted(self.times, t, side="right") - 1)]


class _Envelope:
    """Upper bound on the total label-rate out of each label along the fluid path."""

    def __init__(self, mod, fluid, t0):
        self.mod = mod
        mask = fluid.times <= t0
        self.grid = fluid.values[mask]
        if fluid.times[mask][-1] < t0:
            self.grid = np.vstack([self.grid, fluid.at(t0)])
        self.cache = {}

    def __call__(self, y):
        v = self.cache.get(y)
        if v is None:
            top = max(sum(self.mod.rates(x, y).values()) for x in self.grid)
            v = self.cache[y] = ENVELOPE_SLACK * top
        return v


def _pick(rng, weights):
    total = sum(weights)
    u = rng.random() * total
    acc = 0.0
    for i, w in enumerate(weights):
        acc += w
        if u < acc:
            return i
    return len(weights) - 1


def simulate_coupled(
    spec: ChainSpec,
    mod: ModulationSpec,
    init,
    fluid: FluidPath,
    t0: float,
    seed: int,
    max_events: int = DEFAULT_MAX_EVENTS,
    stop_at_decoupling: bool = False,
    envelope: Optional[_Envelope] = None,
) -> CoupledTrajectory:
    """Exact simulation of the joint chain on [0, t0].

    X jumps at its own (time-homogeneous) total rate; label-only moves have
    time-dependent rates and are generated by thinning a Poisson clock whose
    rate is the envelope sup_t sum_{y'} g_t(y, y') (times a 1% margin).
    """
    if t0 > fluid.horizon + 1e-12:
        raise ValueError("fluid path does not cover [0, t0]")
    rng = _rng.generator(seed)
    env = envelope or _Envelope(mod, fluid, t0)
    state = np.asarray(init, dtype=np.int64).copy()
    label = mod.label(state)
    times, states, labels = [0.0], [state.copy()], [label]
    t = 0.0
    decouple = math.inf
    tau = t0 if mod.allowed(label) else 0.0
    events = 0

    while True:
        rates = spec.rate_matrix(state[None, :])[0]
        q = float(rates.sum())
        lam_env = env(label)
        total = q + lam_env
        if total <= 0.0:
            break
        t = t + rng.exponential(1.0 / total)
        if t > t0:
            break
        events += 1
        if events > max_events:
            raise TruncationError(f"coupled simulation exceeded {max_events} events at t={t:.6g}")
        here = mod.label(state)
        synced = label == here
        if rng.random() * total < q:
            c = _pick(rng, rates)
            nxt = state + spec.jumps[c]
            lab = mod.label(nxt)
            new_label = label
            if synced:
                if lab == here:
                    new_label = lab
                else:
                    labels_c = _jump_labels(spec, mod, state)
                    gam = gamma_all(spec, mod, state, rates, labels_c)
                    gy = mod.rates(fluid.at(t), label).get(lab, 0.0)
                    if rng.random() < _follow_probability(gy, gam[lab]):
                        new_label = lab
            state = nxt
        else:
            g_t = mod.rates(fluid.at(t), label)
            if synced:
                gam = gamma_all(spec, mod, state, rates)
                moves = {y2: max(0.0, gy - gam.get(y2, 0.0)) for y2, gy in g_t.items() if y2 != label}
            else:
                moves = {y2: gy for y2, gy in g_t.items() if y2 != label}
            h = sum(moves.values())
            if h > lam_env * (1 + 1e-12):
                raise InvalidModelError(
                    f"label rate {h:g} exceeds its envelope {lam_env:g} at t={t:.6g}"
                )
            if rng.random() * lam_env >= h:
                continue
            keys = list(moves)
            new_label = keys[_pick(rng, [moves[k] for k in keys])]
        label = new_label
        times.append(t)
        states.append(state.copy())
        labels.append(label)
        if not math.isfinite(decouple) and label != mod.label(state):
            decouple = t
            if stop_at_decoupling:
                break
        if tau == t0 and not mod.allowed(label):
            tau = t

    return CoupledTrajectory(
        seed=int(seed),
        times=np.asarray(times),
        states=np.asarray(states),
        labels=labels,
        decouple_time=decouple,
        tau=tau,
        t0=float(t0),
    )


def simulate_coupled_replicas(spec, mod, init, fluid, t0, master_seed, count, **kw) -> list:
    env = _Envelope(mod, fluid, t0)
    return [
        simulate_coupled(spec, mod, init, fluid, t0, s, envelope=env, **kw)
        for s in _rng.replica_seeds(master_seed, count)
    ]


def decoupling_bound(G: float, kappa: float, t0: float, d: int, delta: float, A: float) -> float:
    """min(1, (G + kappa) t0 + 2d exp(-delta^2/(2 A t0)))."""
    for name, v in (("G", G), ("kappa", kappa), ("t0", t0)):
        if v < 0:
            raise ValueError(f"{name} must be nonnegative")
    return min(1.0, max(0.0, (G + kappa) * t0 + exp_term(d, delta, A, t0)))


def estimate_kappa(mod: ModulationSpec, fluid: FluidPath, eps: float, t0: float, labels: Iterable[Hashable], times: int = 200) -> float:
    """Grid maximisation of sup_t sup_{|x-x_t|<=eps, y in I0} sum_{y'} |g(x,y,y') - g(x_t,y,y')|.

    The eps-ball is probed at its 3^d corner/face/centre points.
    """
    import itertools

    labels = [y for y in labels if mod.allowed(y)]
    ts = np.linspace(0.0, t0, times + 1)
    xs = fluid.at(ts)
    offsets = np.array(list(itertools.product((-eps, 0.0, eps), repeat=xs.shape[1])))
    best = 0.0
    for x in xs:
        for y in labels:
            base = mod.rates(x, y)
            for off in offsets:
                other = mod.rates(x + off, y)
                keys = (set(base) | set(other)) - {y}
                best = max(best, sum(abs(other.get(k, 0.0) - base.get(k, 0.0)) for k in keys))
    return best


# --- individuals in the SIR epidemic --------------------------------------------


def epidemic_individual_rates(x, n: int, n2: int, lam: float) -> float:
    """Rate for one individual to move from status n to n2 (1 S, 2 I, 3 R)."""
    if n == 1 and n2 == 2:
        return lam * float(x[1])
    if n == 2 and n2 == 3:
        return 1.0
    return 0.0


def epidemic_label_rates(lam: float):
    """g(x, y, .) for a vector of individual statuses: one component moves at a time."""

    def rates(x, y):
        out = {}
        for j, n in enumerate(y):
            if n < 3:
                r = epidemic_individual_rates(x, n, n + 1, lam)
                if r > 0:
                    out[y[:j] + (n + 1,) + y[j + 1 :]] = r
        return out

    return rates


def make_epidemic_individuals(N: int, lam: float, p: float, k: int, eps: float = 0.0, tagged_status=None):
    """Epidemic with k tracked individuals, lumped over the untracked rest.

    State is (status_1..status_k, susceptible_rest, infective_rest); the
    coordinate is (all susceptibles, all infectives)/N, so the lumped chain has
    the same coordinate law as the plain epidemic. The modulation carries
    kappa = k lam eps. Returns (spec, modulation, init).
    """
    tagged = tuple(tagged_status or (1,) * k)
    if len(tagged) != k or any(s not in (1, 2, 3) for s in tagged):
        raise InvalidModelError("tagged statuses must be k values in {1, 2, 3}")
    infected = round(N * p)
    s_rest = N - infected - sum(1 for s in tagged if s == 1)
    i_rest = infected - sum(1 for s in tagged if s == 2)
    if s_rest < 0 or i_rest < 0 or sum(1 for s in tagged if s == 3):
        raise InvalidModelError("tagged statuses are inconsistent with the initial epidemic")
    dim = k + 2

    def infectives(s):
        return s[..., k + 1] + (s[..., :k] == 2).sum(axis=-1)

    channels = []
    for j in range(k):
        e = np.zeros(dim, dtype=np.int64)
        e[j] = 1
        channels.append(
            Channel(e, (lambda j: lambda s: (lam / N) * infectives(s) * (s[..., j] == 1))(j), f"tagged {j + 1} infected")
        )
        channels.append(Channel(e, (lambda j: lambda s: (s[..., j] == 2).astype(np.float64))(j), f"tagged {j + 1} removed"))
    inf = np.zeros(dim, dtype=np.int64)
    inf[k], inf[k + 1] = -1, 1
    rem = np.zeros(dim, dtype=np.int64)
    rem[k + 1] = -1
    channels.append(Channel(inf, lambda s: (lam / N) * s[..., k] * infectives(s), "infection"))
    channels.append(Channel(rem, lambda s: s[..., k + 1].astype(np.float64), "removal"))

    def coord(s):
        sus = s[..., k] + (s[..., :k] == 1).sum(axis=-1)
        return np.stack([sus, infectives(s)], axis=-1) / N

    spec = ChainSpec(dim=dim, channels=channels, coord=coord, coord_dim=2, scale_hint=N, name="epidemic_individuals")
    mod = ModulationSpec(
        label=lambda s: tuple(int(v) for v in np.asarray(s)[:k]),
        rates=epidemic_label_rates(lam),
        G=0.0,
        kappa=epidemic_kappa(k, lam, eps),
    )
    init = np.array(list(tagged) + [s_rest, i_rest], dtype=np.int64)
    return spec, mod, init


def epidemic_kappa(k: int, lam: float, eps: float) -> float:
    return k * lam * eps
