"""Continuous-time Markov chains on integer lattices.

A chain is a finite list of reaction channels, each a fixed integer jump with a
state-dependent rate, together with a coordinate map into R^d. Rate and
coordinate functions are vectorised: they receive an integer array of shape
``(k, n)`` (one state per row) and return ``(k,)`` rates or ``(k, d)``
coordinates. Writing them with ``s[..., i]`` indexing makes them work for a
single state as well.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from . import rng
from .errors import InvalidModelError, TruncationError

DEFAULT_MAX_EVENTS = 10**8

_SERIES_CUTOFF = 1e-3


@dataclass(frozen=True, eq=False)
class Channel:
    jump: np.ndarray
    rate: Callable
    name: str = ""

    def __post_init__(self):
        jump = np.asarray(self.jump, dtype=np.int64).reshape(-1)
        if not jump.any():
            raise InvalidModelError(f"channel {self.name or '?'} has a zero jump")
        jump.setflags(write=False)
        object.__setattr__(self, "jump", jump)


def _identity_coord(states):
    return np.asarray(states, dtype=np.float64)


@dataclass(frozen=True, eq=False)
class ChainSpec:
    """A CTMC given by reaction channels and a coordinate map.

    ``coord`` maps a ``(k, n)`` state array to ``(k, d)`` coordinates; the
    default is the identity. ``increment(states, jump)``, if given, returns
    the exact coordinate change for a jump and replaces the subtraction
    ``coord(state + jump) - coord(state)``, which loses digits when the
    coordinate is large compared with its increments. ``scale_hint`` records
    the size parameter N of builtin models.
    """

    dim: int
    channels: tuple
    coord: Callable = _identity_coord
    coord_dim: Optional[int] = None
    increment: Optional[Callable] = None
    scale_hint: Optional[float] = None
    name: str = ""

    def __post_init__(self):
        if int(self.dim) < 1:
            raise InvalidModelError("state dimension must be positive")
        channels = tuple(self.channels)
        for i, ch in enumerate(channels):
            if ch.jump.shape != (self.dim,):
                raise InvalidModelError(
                    f"channel {ch.name or i} jump has length {ch.jump.size}, expected {self.dim}"
                )
        object.__setattr__(self, "channels", channels)
        jumps = (
            np.stack([ch.jump for ch in channels])
            if channels
            else np.zeros((0, self.dim), dtype=np.int64)
        )
        jumps.setflags(write=False)
        object.__setattr__(self, "jumps", jumps)
        if self.coord_dim is None:
            probe = self.coordinates(np.zeros((1, self.dim), dtype=np.int64))
            object.__setattr__(self, "coord_dim", probe.shape[1])

    def channel_name(self, c: int) -> str:
        return self.channels[c].name or f"#{c}"

    def rate_matrix(self, states) -> np.ndarray:
        """Rates of every channel at every state, shape ``(k, C)``."""
        states = np.atleast_2d(np.asarray(states, dtype=np.int64))
        return self._checked_rates(states)

    def _checked_rates(self, states):
        out = np.empty((states.shape[0], len(self.channels)))
        for c, ch in enumerate(self.channels):
            out[:, c] = ch.rate(states)
        if out.size and not (out.min() >= 0 and np.isfinite(out).all()):
            bad = np.nonzero(~(np.isfinite(out) & (out >= 0)))
            r, c = int(bad[0][0]), int(bad[1][0])
            raise InvalidModelError(
                f"channel {self.channel_name(c)} has invalid rate {out[r, c]!r} "
                f"at state {states[r].tolist()}"
            )
        return out

    def coordinates(self, states) -> np.ndarray:
        states = np.atleast_2d(np.asarray(states, dtype=np.int64))
        x = np.asarray(self.coord(states), dtype=np.float64)
        if x.ndim == 1:
            x = x.reshape(states.shape[0], -1)
        return x

    def coord_of(self, state) -> np.ndarray:
        return self.coordinates(np.asarray(state)[None, :])[0]


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Piecewise-constant, right-continuous sample path on ``[0, horizon]``.

    ``states[k]`` holds on ``[times[k], times[k+1])``; ``channels[k]`` is the
    channel that fired at ``times[k+1]``.
    """

    seed: int
    times: np.ndarray
    states: np.ndarray
    horizon: float
    terminated_absorbing: bool
    channels: np.ndarray = field(default=None)

    @property
    def n_jumps(self) -> int:
        return len(self.times) - 1

    @property
    def final_state(self) -> np.ndarray:
        return self.states[-1]

    def index_at(self, t):
        return np.searchsorted(self.times, t, side="right") - 1

    def state_at(self, t) -> np.ndarray:
        return self.states[self.index_at(t)]

    def segment_lengths(self, t0: Optional[float] = None) -> np.ndarray:
        """Time spent in each state during ``[0, t0]``."""
        t0 = self.horizon if t0 is None else t0
        ends = np.append(self.times[1:], self.horizon)
        return np.clip(np.minimum(ends, t0) - np.minimum(self.times, t0), 0.0, None)


@dataclass(frozen=True, eq=False)
class CoordinatePath:
    times: np.ndarray
    values: np.ndarray
    horizon: float

    def value_at(self, t):
        return self.values[np.searchsorted(self.times, t, side="right") - 1]


# --- per-state functionals ----------------------------------------------------


def _as_batch(state):
    state = np.asarray(state, dtype=np.int64)
    return state[None, :] if state.ndim == 1 else state


def total_rate(spec: ChainSpec, state) -> float:
    """Total jump rate q(state)."""
    return float(spec.rate_matrix(_as_batch(state)).sum())


def total_rates(spec: ChainSpec, states) -> np.ndarray:
    return spec.rate_matrix(states).sum(axis=1)


def coordinate_increments(spec: ChainSpec, states):
    """Per-channel coordinate increments ``(C, k, d)`` and rates ``(k, C)``."""
    states = np.atleast_2d(np.asarray(states, dtype=np.int64))
    x = spec.coordinates(states)
    rates = spec.rate_matrix(states)
    incs = np.empty((len(spec.channels),) + x.shape)
    for c, jump in enumerate(spec.jumps):
        if spec.increment is not None:
            incs[c] = np.asarray(spec.increment(states, jump), dtype=np.float64).reshape(x.shape)
        else:
            incs[c] = spec.coordinates(states + jump) - x
    return incs, rates


def drifts(spec: ChainSpec, states) -> np.ndarray:
    incs, rates = coordinate_increments(spec, states)
    return np.einsum("ckd,kc->kd", incs, rates) if len(spec.channels) else np.zeros(
        (np.atleast_2d(states).shape[0], spec.coord_dim)
    )


def drift(spec: ChainSpec, state) -> np.ndarray:
    """Drift vector: sum over channels of coordinate increment times rate."""
    return drifts(spec, _as_batch(state))[0]


def alphas(spec: ChainSpec, states) -> np.ndarray:
    incs, rates = coordinate_increments(spec, states)
    if not len(spec.channels):
        return np.zeros(np.atleast_2d(states).shape[0])
    return np.einsum("ck,kc->k", (incs**2).sum(axis=2), rates)


def alpha(spec: ChainSpec, state) -> float:
    """Rate of quadratic variation, Euclidean norm."""
    return float(alphas(spec, _as_batch(state))[0])


def sigma_theta(theta, x):
    """e^{theta|x|} - 1 - theta|x|, accurate for small arguments."""
    a = theta * np.abs(np.asarray(x, dtype=np.float64))
    with np.errstate(over="ignore"):
        big = np.expm1(a) - a
    small = a * a * (0.5 + a * (1 / 6 + a * (1 / 24 + a * (1 / 120 + a / 720))))
    return np.where(a < _SERIES_CUTOFF, small, big)


def phi_exps(spec: ChainSpec, states, theta: float, per_coordinate: bool = False):
    """Exponential noise functional for every row of ``states``.

    Returns ``(values, overflowed)``. Overflowed entries saturate at ``inf``.
    """
    states = np.atleast_2d(np.asarray(states, dtype=np.int64))
    k = states.shape[0]
    if theta == 0 or not len(spec.channels):
        zeros = np.zeros((k, spec.coord_dim)) if per_coordinate else np.zeros(k)
        return zeros, np.zeros(k, dtype=bool)
    incs, rates = coordinate_increments(spec, states)
    per = np.einsum("ckd,kc->kd", sigma_theta(theta, incs), rates)
    overflowed = ~np.isfinite(per).all(axis=1)
    per = np.where(np.isfinite(per), per, np.inf)
    if per_coordinate:
        return per, overflowed
    return per.max(axis=1), overflowed


def phi_exp(spec: ChainSpec, state, theta: float, return_flag: bool = False):
    """Max over coordinates of sum over channels of sigma_theta(increment) * rate."""
    if theta < 0:
        raise ValueError("theta must be nonnegative")
    values, flags = phi_exps(spec, _as_batch(state), theta)
    if return_flag:
        return float(values[0]), bool(flags[0])
    return float(values[0])


# --- simulation ------------------------------------------------------------------


def _assemble(spec, init, seeds, t_max, buf_t, buf_c, counts, absorbed):
    horizons = np.broadcast_to(np.asarray(t_max, dtype=np.float64), (len(seeds),))
    trajectories = []
    for r, seed in enumerate(seeds):
        n = int(counts[r])
        ch = buf_c[:n, r].astype(np.int64)
        times = np.empty(n + 1)
        times[0] = 0.0
        times[1:] = buf_t[:n, r]
        states = np.empty((n + 1, spec.dim), dtype=np.int64)
        states[0] = init
        if n:
            states[1:] = init + np.cumsum(spec.jumps[ch], axis=0)
        trajectories.append(
            Trajectory(
                seed=int(seed),
                times=times,
                states=states,
                horizon=float(horizons[r]),
                terminated_absorbing=bool(absorbed[r]),
                channels=ch,
            )
        )
    return trajectories


def simulate_batch(
    spec: ChainSpec,
    init,
    t_max: float,
    seeds: Sequence[int],
    max_events: int = DEFAULT_MAX_EVENTS,
) -> list:
    """Exact simulation of one replica per seed, advanced in lock-step.

    Each replica draws only from its own counter-based stream, so its
    trajectory does not depend on which other replicas share the batch.
    """
    if t_max < 0:
        raise ValueError("t_max must be nonnegative")
    init = np.asarray(init, dtype=np.int64).reshape(-1)
    if init.shape != (spec.dim,):
        raise InvalidModelError(f"initial state has length {init.size}, expected {spec.dim}")
    seeds = [int(s) & rng.MASK64 for s in seeds]
    R = len(seeds)
    keys_all = np.array([rng.stream_key(s) for s in seeds], dtype=np.uint64)
    C = len(spec.channels)
    jumps = spec.jumps

    counts = np.zeros(R, dtype=np.int64)
    absorbed = np.zeros(R, dtype=bool)
    cap = 256
    buf_t = np.empty((cap, R))
    buf_c = np.empty((cap, R), dtype=np.int32)
    # compact arrays for the replicas still running
    idx = np.arange(R)
    state = np.repeat(init[None, :], R, axis=0)
    t = np.zeros(R)
    keys = keys_all
    pos = np.arange(2, dtype=np.uint64)
    step = 0

    while idx.size:
        if step >= max_events:
            horizons = np.full(R, float(t_max))
            horizons[idx] = t
            partial = _assemble(spec, init, seeds, horizons, buf_t, buf_c, counts, absorbed)
            r = int(idx[0])
            err = TruncationError(
                f"event budget {max_events} exceeded by replica {r} at t={t[0]:.6g}",
                partial=partial[r],
            )
            err.partials = partial
            raise err
        if C:
            cum = np.cumsum(spec._checked_rates(state), axis=1)
            total = cum[:, -1]
        else:
            total = np.zeros(idx.size)
        u = rng.uniforms(keys[:, None], pos + np.uint64(2 * step))
        with np.errstate(divide="ignore"):
            t_next = t - np.log(u[:, 0]) / total
        dead = total <= 0.0
        go = (t_next <= t_max) & ~dead
        if not go.all():
            absorbed[idx[dead]] = True
            if not go.any():
                break
            idx, state, t_next, keys = idx[go], state[go], t_next[go], keys[go]
            cum, total, u = cum[go], total[go], u[go]
        ch = np.minimum((cum < (u[:, 1] * total)[:, None]).sum(axis=1), C - 1)
        state += jumps[ch]
        t = t_next
        if step >= cap:
            cap *= 2
            buf_t = np.resize(buf_t, (cap, R))
            buf_c = np.resize(buf_c, (cap, R))
        buf_t[step, idx] = t
        buf_c[step, idx] = ch
        counts[idx] += 1
        step += 1

    return _assemble(spec, init, seeds, t_max, buf_t, buf_c, counts, absorbed)


def simulate(spec: ChainSpec, init, t_max: float, seed: int, max_events: int = DEFAULT_MAX_EVENTS) -> Trajectory:
    """Exact jump-chain/holding-time simulation up to ``t_max`` or absorption."""
    return simulate_batch(spec, init, t_max, [seed], max_events=max_events)[0]


def iter_replicas(spec, init, t_max, master_seed, count, chunk=256, jobs=1, max_events=DEFAULT_MAX_EVENTS):
    """Yield replica trajectories in index order, ``chunk`` replicas at a time."""
    seeds = rng.replica_seeds(master_seed, count)
    blocks = [seeds[i : i + chunk] for i in range(0, count, chunk)]
    run = lambda block: simulate_batch(spec, init, t_max, block, max_events=max_events)
    if jobs > 1 and len(blocks) > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            for result in pool.map(run, blocks):
                yield from result
    else:
        for block in blocks:
            yield from run(block)


def simulate_replicas(spec, init, t_max, master_seed, count, chunk=256, jobs=1, max_events=DEFAULT_MAX_EVENTS):
    return list(iter_replicas(spec, init, t_max, master_seed, count, chunk, jobs, max_events))


# --- path functionals ------------------------------------------------------------


def project(traj: Trajectory, spec: ChainSpec) -> CoordinatePath:
    """Coordinate path X_t = x(X_t) of a trajectory."""
    if traj.states.shape[1] != spec.dim:
        raise InvalidModelError(
            f"trajectory states have dimension {traj.states.shape[1]}, chain has {spec.dim}"
        )
    return CoordinatePath(traj.times, spec.coordinates(traj.states), traj.horizon)


def _evaluate_on_states(f, states):
    vals = np.asarray(f(states), dtype=np.float64)
    if vals.shape != (states.shape[0],):
        vals = np.array([float(f(s)) for s in states])
    return vals


def path_integral(traj: Trajectory, f, t0: float) -> float:
    """Exact integral of f(X_s) over ``[0, t0]`` for a piecewise-constant path."""
    if t0 > traj.horizon + 1e-12:
        raise ValueError(f"t0={t0} exceeds trajectory horizon {traj.horizon}")
    lengths = traj.segment_lengths(t0)
    keep = lengths > 0
    if not keep.any():
        return 0.0
    vals = _evaluate_on_states(f, traj.states[keep])
    return float(np.dot(vals, lengths[keep]))
