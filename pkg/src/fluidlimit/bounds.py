"""Explicit tube-exit probability bounds and their empirical counterparts."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import ctmc
from .errors import NoAdmissibleAError
from .fluid import FluidModel, FluidPath

TAGS = ("L2", "EXP", "TERMINAL", "COUPLING")
NORMS = {"L2": "euclidean", "EXP": "sup", "TERMINAL": "sup", "COUPLING": "sup"}


def tube_delta(eps: float, K: float, t0: float) -> float:
    return eps * math.exp(-K * t0) / 3.0


@dataclass(frozen=True)
class ErrorBudget:
    """Inputs and result of one of the tube bounds.

    ``raw_bound`` is the formula value before clamping to [0, 1];
    ``radius`` is the deviation the bound refers to (eps, or eps + rho for the
    terminal-value bound).
    """

    eps: float
    t0: float
    K: float
    d: int
    A: float
    delta: float
    theta: float
    bound: float
    raw_bound: float
    theorem_tag: str
    radius: float

    @property
    def norm(self) -> str:
        return NORMS[self.theorem_tag]

    @property
    def vacuous(self) -> bool:
        return self.raw_bound >= 1.0

    def consistent(self) -> bool:
        """Stored delta and theta equal a fresh recomputation bit for bit."""
        delta = tube_delta(self.eps, self.K, self.t0)
        return delta == self.delta and delta / (self.A * self.t0) == self.theta

    def as_dict(self) -> dict:
        return {
            "theorem": self.theorem_tag,
            "norm": self.norm,
            "eps": self.eps,
            "t0": self.t0,
            "K": self.K,
            "d": self.d,
            "A": self.A,
            "delta": self.delta,
            "theta": self.theta,
            "radius": self.radius,
            "bound": self.bound,
            "raw_bound": self.raw_bound,
            "vacuous": self.vacuous,
        }


def _check_positive(**kw):
    for k, v in kw.items():
        if not v > 0:
            raise ValueError(f"{k} must be positive, got {v!r}")


def _budget(eps, t0, K, A, d, raw, tag, radius=None):
    delta = tube_delta(eps, K, t0)
    return ErrorBudget(
        eps=float(eps),
        t0=float(t0),
        K=float(K),
        d=int(d),
        A=float(A),
        delta=delta,
        theta=delta / (A * t0),
        bound=float(min(1.0, max(0.0, raw))),
        raw_bound=float(raw),
        theorem_tag=tag,
        radius=float(eps if radius is None else radius),
    )


def exp_term(d: int, delta: float, A: float, t0: float) -> float:
    """2d exp(-delta^2 / (2 A t0)), unclamped."""
    return 2.0 * d * math.exp(-(delta * delta) / (2.0 * A * t0))


def budget_l2(eps, t0, K, A, d) -> ErrorBudget:
    """Chebyshev/Doob bound 4 A t0 / delta^2 (Euclidean norm)."""
    _check_positive(eps=eps, t0=t0, A=A, d=d)
    if K < 0:
        raise ValueError("K must be nonnegative")
    delta = tube_delta(eps, K, t0)
    return _budget(eps, t0, K, A, d, 4.0 * A * t0 / (delta * delta), "L2")


def budget_exp(eps, t0, K, A, d) -> ErrorBudget:
    """Exponential-martingale bound 2d exp(-delta^2/(2 A t0)) (sup norm)."""
    _check_positive(eps=eps, t0=t0, A=A, d=d)
    if K < 0:
        raise ValueError("K must be nonnegative")
    delta = tube_delta(eps, K, t0)
    return _budget(eps, t0, K, A, d, exp_term(d, delta, A, t0), "EXP")


def budget_terminal(eps, t0, K, A, d, rho_eps):
    """Same exponential bound, stated for the terminal radius eps + rho(eps)."""
    if rho_eps < 0:
        raise ValueError("rho must be nonnegative")
    base = budget_exp(eps, t0, K, A, d)
    radius = eps + rho_eps
    return radius, _budget(eps, t0, K, A, d, base.raw_bound, "TERMINAL", radius=radius)


@dataclass(frozen=True)
class AdmissibleA:
    A: float
    residual: float
    delta: float


def admissible_A(Q, J, eps, t0, K, lo=1e-12, hi=1e6, iterations=200) -> AdmissibleA:
    """Smallest A (to bisection resolution) with A >= Q J^2 exp(delta J/(A t0)).

    With such an A the noise integral condition holds on every path, since
    phi(xi, theta) <= Q J^2 theta^2 exp(theta J)/2 for jumps bounded by J.
    """
    _check_positive(Q=Q, J=J, eps=eps, t0=t0)
    delta = tube_delta(eps, K, t0)
    log_qj2 = math.log(Q) + 2 * math.log(J)

    def ok(log_a):
        return log_a >= log_qj2 + delta * J / (math.exp(log_a) * t0)

    a, b = math.log(lo), math.log(hi)
    if not ok(b):
        raise NoAdmissibleAError(
            f"no A <= {hi:g} satisfies the jump condition; try a larger eps or smaller t0"
        )
    if ok(a):
        b = a
    else:
        for _ in range(iterations):
            mid = 0.5 * (a + b)
            if ok(mid):
                b = mid
            else:
                a = mid
    A = math.exp(b)

    def residual_at(A):
        return A - Q * J * J * math.exp(delta * J / (A * t0))

    while residual_at(A) < 0:  # log-space rounding can leave A a few ulps short
        A = math.nextafter(A, math.inf)
    residual = residual_at(A)
    return AdmissibleA(A=A, residual=residual, delta=delta)


# --- Omega events along simulated paths -------------------------------------------


@dataclass(frozen=True)
class OmegaReport:
    variant: str
    exit_time: float
    t_end: float
    initial_gap: float
    drift_mismatch: float
    noise_integral: float
    noise_threshold: float
    delta: float
    omega0: bool
    omega1: bool
    omega2: bool

    @property
    def all_hold(self) -> bool:
        return self.omega0 and self.omega1 and self.omega2


def _norm(v, kind):
    v = np.asarray(v, dtype=np.float64)
    if kind == "sup":
        return np.abs(v).max(axis=-1)
    return np.sqrt((v * v).sum(axis=-1))


def coordinate_exit_time(traj: ctmc.Trajectory, spec: ctmc.ChainSpec, model: FluidModel) -> float:
    """First time the coordinate path is outside U (inf if never)."""
    inside = model.in_domain(spec.coordinates(traj.states))
    out = np.nonzero(~inside)[0]
    return float(traj.times[out[0]]) if out.size else math.inf


def omega_report(traj, spec, model: FluidModel, budget: ErrorBudget, variant: str = "EXP") -> OmegaReport:
    """Evaluate the three sufficient events on one trajectory up to T ^ t0."""
    if variant not in ("L2", "EXP"):
        raise ValueError("variant must be L2 or EXP")
    t0 = budget.t0
    if traj.horizon < t0 - 1e-12:
        raise ValueError("trajectory does not cover [0, t0]")
    norm = "sup" if variant == "EXP" else "euclidean"
    T = coordinate_exit_time(traj, spec, model)
    t_end = min(T, t0)
    gap = float(_norm(spec.coord_of(traj.states[0]) - model.x0, norm))

    def mismatch(states):
        x = spec.coordinates(states)
        return _norm(ctmc.drifts(spec, states) - model.b_many(x), norm)

    drift_int = ctmc.path_integral(traj, mismatch, t_end)
    if variant == "EXP":
        noise = ctmc.path_integral(traj, lambda s: ctmc.phi_exps(spec, s, budget.theta)[0], t_end)
        threshold = budget.theta**2 * budget.A * t0 / 2.0
    else:
        noise = ctmc.path_integral(traj, lambda s: ctmc.alphas(spec, s), t_end)
        threshold = budget.A * t0
    return OmegaReport(
        variant=variant,
        exit_time=T,
        t_end=t_end,
        initial_gap=gap,
        drift_mismatch=drift_int,
        noise_integral=noise,
        noise_threshold=threshold,
        delta=budget.delta,
        omega0=gap <= budget.delta,
        omega1=drift_int <= budget.delta,
        omega2=noise <= threshold,
    )


# --- empirical deviation ------------------------------------------------------------


def sup_deviation(path: ctmc.CoordinatePath, fluid: FluidPath, t0: float, norm: str = "sup") -> float:
    """sup over [0, t0] of |X_t - x_t|, checked at jump times (both sides) and grid times."""
    if path.horizon < t0 - 1e-12 or fluid.horizon < t0 - 1e-12:
        raise ValueError("paths must cover [0, t0]")
    jumps = path.times[path.times <= t0]
    grid = fluid.times[fluid.times <= t0]
    ts = np.unique(np.concatenate([jumps, grid, [t0]]))
    idx = np.searchsorted(path.times, ts, side="right") - 1
    xs = fluid.at(ts)
    dev = _norm(path.values[idx] - xs, norm)
    # left limits at jump times
    k = np.arange(1, len(jumps))
    if k.size:
        left = _norm(path.values[k - 1] - fluid.at(jumps[1:]), norm)
        dev = np.concatenate([dev, left])
    return float(dev.max())


def wilson_interval(successes: int, n: int, z: float = 3.0):
    if n == 0:
        return 0.0, 1.0
    p = successes / n
    denom = 1 + z * z / n
    centre = (p + z * z / (2 * n)) / denom
    half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / denom
    return max(0.0, centre - half), min(1.0, centre + half)


@dataclass(frozen=True)
class Exceedance:
    fraction: float
    count: int
    n: int
    radius: float
    upper: float
    deviations: np.ndarray = field(repr=False)


def empirical_exceedance(replicas: Sequence, fluid: FluidPath, eps: float, t0: float, norm: str = "sup") -> Exceedance:
    """Fraction of paths leaving the eps-tube before t0.

    ``radius`` is three binomial standard deviations; ``upper`` is the
    Wilson score upper limit at z = 3.
    """
    devs = np.array([sup_deviation(p, fluid, t0, norm) for p in replicas])
    n = devs.size
    count = int((devs > eps).sum())
    frac = count / n if n else 0.0
    radius = 3.0 * math.sqrt(frac * (1 - frac) / n) if n else 1.0
    return Exceedance(frac, count, n, radius, wilson_interval(count, n)[1], devs)
