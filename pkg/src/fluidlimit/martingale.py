"""Compensated processes along simulated paths and Monte Carlo checks of the
martingale inequalities behind the tube bounds.

For an observable g = theta * f of the state,

    M_t = g(X_t) - g(X_0) - int_0^t beta_g(X_s) ds

is a martingale, M^2 - int alpha_g is a martingale, and
Z_t = exp(M_t - int_0^t phi_g(X_s) ds) is a supermartingale, where beta_g,
alpha_g and phi_g sum the increment, its square and e^u - 1 - u over the
jump channels weighted by their rates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from . import ctmc
from .errors import PreconditionError

MIN_DOOB_REPLICAS = 1000


def _channel_increments(spec: ctmc.ChainSpec, f: Callable, states: np.ndarray):
    """f-increments per channel ``(k, C)``, rates ``(k, C)`` and f at the states."""
    fx = ctmc._evaluate_on_states(f, states)
    rates = spec.rate_matrix(states)
    inc = np.empty_like(rates)
    for c, jump in enumerate(spec.jumps):
        nxt = states + jump
        live = rates[:, c] > 0  # dead channels may point outside the state space
        col = np.zeros(states.shape[0])
        if live.any():
            col[live] = ctmc._evaluate_on_states(f, nxt[live]) - fx[live]
        inc[:, c] = col
    return inc, rates, fx


def _exp_excess(u):
    """e^u - 1 - u, accurate near zero."""
    u = np.asarray(u, dtype=np.float64)
    with np.errstate(over="ignore"):
        big = np.expm1(u) - u
    small = u * u * (0.5 + u * (1 / 6 + u * (1 / 24 + u * (1 / 120 + u / 720))))
    return np.where(np.abs(u) < 1e-3, small, big)


@dataclass(frozen=True, eq=False)
class CompensatedPath:
    """M, int alpha and int phi for one trajectory, stored at its jump times.

    ``g`` holds theta * f at each visited state; ``beta``, ``alpha``, ``phi``
    and ``tau`` the per-state rates. ``I_beta[i]`` etc. are integrals up to
    ``times[i]``. Between jumps M is linear with slope ``-beta``.
    """

    theta: float
    times: np.ndarray
    horizon: float
    g: np.ndarray
    beta: np.ndarray
    alpha: np.ndarray
    phi: np.ndarray
    tau: np.ndarray
    I_beta: np.ndarray
    I_alpha: np.ndarray
    I_phi: np.ndarray

    def _locate(self, t):
        if t < 0 or t > self.horizon + 1e-12:
            raise ValueError(f"t={t} outside [0, {self.horizon}]")
        return int(np.searchsorted(self.times, t, side="right") - 1)

    def _linear(self, cum, rate, t):
        i = self._locate(t)
        dt = t - self.times[i]
        return (cum[i] + rate[i] * dt if dt else cum[i]), i

    def M(self, t: float) -> float:
        ib, i = self._linear(self.I_beta, self.beta, t)
        return float(self.g[i] - self.g[0] - ib)

    def int_alpha(self, t: float) -> float:
        return float(self._linear(self.I_alpha, self.alpha, t)[0])

    def int_phi(self, t: float) -> float:
        return float(self._linear(self.I_phi, self.phi, t)[0])

    def N(self, t: float) -> float:
        """Quadratic compensation M_t^2 - int_0^t alpha."""
        return self.M(t) ** 2 - self.int_alpha(t)

    def log_Z(self, t: float) -> float:
        return self.M(t) - self.int_phi(t)

    def reconstruct(self, t: float) -> float:
        """M_t + g(X_0) + int beta, which must equal g(X_t)."""
        ib, _ = self._linear(self.I_beta, self.beta, t)
        return self.M(t) + self.g[0] + ib

    def _candidates(self, t0: float):
        """M just after each jump in [0, t0], just before each such jump, and at t0."""
        i = self._locate(t0)
        right = self.g[: i + 1] - self.g[0] - self.I_beta[: i + 1]
        left = self.g[:i] - self.g[0] - self.I_beta[1 : i + 1]
        return np.concatenate([right, left, [self.M(t0)]])

    def sup(self, t0: float) -> float:
        return float(self._candidates(t0).max())

    def sup_abs(self, t0: float) -> float:
        return float(np.abs(self._candidates(t0)).max())


def compensate(traj: ctmc.Trajectory, spec: ctmc.ChainSpec, f: Callable, theta: float = 1.0) -> CompensatedPath:
    """Compensate theta * f(X) along ``traj`` with exact piecewise-constant integrals.

    ``f`` takes a ``(k, n)`` state array and returns ``k`` reals (a per-state
    callable also works). Raises ValueError if f or its first-moment rate is
    not finite on a visited state.
    """
    states = traj.states
    inc, rates, fx = _channel_increments(spec, f, states)
    inc = theta * inc
    g = theta * fx
    if not (np.isfinite(g).all() and np.isfinite(inc).all()):
        raise ValueError("observable is not finite on the visited states")
    tau = (np.abs(inc) * rates).sum(axis=1)
    if not np.isfinite(tau).all():
        raise ValueError("first-moment rate is infinite on a visited state")
    beta = (inc * rates).sum(axis=1)
    alpha = (inc * inc * rates).sum(axis=1)
    with np.errstate(invalid="ignore"):
        phi = (_exp_excess(inc) * rates).sum(axis=1)
    lengths = traj.segment_lengths()

    def cumulative(rate):
        out = np.zeros(len(states))
        if len(states) > 1:
            out[1:] = np.cumsum(rate[:-1] * lengths[:-1])
        return out

    return CompensatedPath(
        theta=float(theta),
        times=traj.times,
        horizon=float(traj.horizon),
        g=g,
        beta=beta,
        alpha=alpha,
        phi=phi,
        tau=tau,
        I_beta=cumulative(beta),
        I_alpha=cumulative(alpha),
        I_phi=cumulative(phi),
    )


def _mean_se(x):
    x = np.asarray(x, dtype=np.float64)
    n = x.size
    if n == 0:
        return math.nan, math.nan
    se = float(x.std(ddof=1) / math.sqrt(n)) if n > 1 else math.inf
    return float(x.mean()), se


@dataclass(frozen=True)
class MeanZeroReport:
    n: int
    mean: float
    se: float
    holds: bool


def mean_zero_check(paths: Sequence[CompensatedPath], t0: float, k: float = 4.0) -> MeanZeroReport:
    """E M_{t0} = 0 within ``k`` standard errors."""
    vals = np.array([p.M(t0) for p in paths])
    mean, se = _mean_se(vals)
    return MeanZeroReport(len(vals), mean, se, abs(mean) <= k * se + 1e-12)


@dataclass(frozen=True)
class DoobReport:
    n: int
    sup_m2: float
    sup_m2_se: float
    four_alpha: float
    four_alpha_se: float
    holds: bool


def doob_check(paths: Sequence[CompensatedPath], t0: float, k: float = 3.0, min_replicas: int = MIN_DOOB_REPLICAS) -> DoobReport:
    """E sup_{t<=t0} M_t^2 <= 4 E int_0^t0 alpha, within ``k`` combined standard errors."""
    if len(paths) < min_replicas:
        raise PreconditionError(f"Doob check needs at least {min_replicas} replicas, got {len(paths)}")
    lhs = np.array([p.sup_abs(t0) ** 2 for p in paths])
    rhs = 4.0 * np.array([p.int_alpha(t0) for p in paths])
    m1, s1 = _mean_se(lhs)
    m2, s2 = _mean_se(rhs)
    slack = k * math.sqrt(s1 * s1 + s2 * s2)
    return DoobReport(len(paths), m1, s1, m2, s2, m1 <= m2 + slack + 1e-12)


@dataclass(frozen=True)
class ExpReport:
    n: int
    excluded: int
    mean_Z: float
    se_Z: float
    z_holds: bool
    A: float
    B: float
    exceed_fraction: float
    exceed_bound: float
    exceed_sigma: float
    exceed_holds: bool
    time_grid: tuple
    z_means: tuple
    z_ses: tuple
    monotone_holds: bool

    @property
    def holds(self) -> bool:
        return self.z_holds and self.exceed_holds and self.monotone_holds


def exp_check(paths: Sequence[CompensatedPath], t0: float, B: float, A: float, k: float = 3.0, grid_points: int = 5) -> ExpReport:
    """Supermartingale and exponential-inequality checks for Z = exp(M - int phi).

    The paths must be built with the desired theta. Replicas whose Z
    overflows are excluded and counted. Checks: E Z_{t0} <= 1 + k SE;
    P(sup M > B, int phi <= A) <= e^{A-B} + k sigma with sigma the binomial
    standard deviation at the bound; E Z_t nonincreasing on a time grid
    within k combined standard errors.
    """
    grid = tuple(float(t) for t in np.linspace(0.0, t0, grid_points))
    logz = np.array([[p.log_Z(t) for t in grid] for p in paths]).reshape(len(paths), len(grid))
    with np.errstate(over="ignore"):
        z = np.exp(logz)
    ok = np.isfinite(z).all(axis=1)
    z = z[ok]
    kept = [p for p, o in zip(paths, ok) if o]
    n = len(kept)
    means, ses = zip(*(_mean_se(z[:, j]) for j in range(len(grid)))) if n else ((math.nan,) * len(grid), (math.nan,) * len(grid))
    mean_z, se_z = means[-1], ses[-1]
    z_holds = bool(n) and mean_z <= 1.0 + k * se_z + 1e-12
    monotone = bool(n) and all(
        means[j + 1] <= means[j] + k * math.sqrt(ses[j] ** 2 + ses[j + 1] ** 2) + 1e-12 for j in range(len(grid) - 1)
    )
    hits = sum(1 for p in kept if p.sup(t0) > B and p.int_phi(t0) <= A)
    frac = hits / n if n else math.nan
    bound = math.exp(A - B)
    b = min(bound, 1.0)
    sigma = math.sqrt(b * (1 - b) / n) if n else math.inf
    return ExpReport(
        n=n,
        excluded=len(paths) - n,
        mean_Z=mean_z,
        se_Z=se_z,
        z_holds=z_holds,
        A=float(A),
        B=float(B),
        exceed_fraction=frac,
        exceed_bound=bound,
        exceed_sigma=sigma,
        exceed_holds=bool(n) and frac <= bound + k * sigma,
        time_grid=grid,
        z_means=tuple(means),
        z_ses=tuple(ses),
        monotone_holds=monotone,
    )


def linear_observable(weights, coord: Optional[Callable] = None) -> Callable:
    """f(states) = coordinates(states) @ weights (raw states if ``coord`` is None)."""
    w = np.asarray(weights, dtype=np.float64)

    def f(states):
        x = np.atleast_2d(np.asarray(states)) if coord is None else coord(np.atleast_2d(states))
        return np.asarray(x, dtype=np.float64) @ w

    return f
