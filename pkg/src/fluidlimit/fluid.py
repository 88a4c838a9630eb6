"""Deterministic limit equations: fixed-step RK4, domain exit and exit windows."""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import IntegrationError, InvalidModelError, WindowNotBracketedError

EXIT_RESOLUTION = 1e-10


@dataclass(frozen=True, eq=False)
class Box:
    """Axis-aligned box; each side may be open or closed and may be infinite."""

    lower: np.ndarray
    upper: np.ndarray
    lower_open: np.ndarray = None
    upper_open: np.ndarray = None

    def __post_init__(self):
        lo = np.asarray(self.lower, dtype=np.float64).reshape(-1)
        hi = np.asarray(self.upper, dtype=np.float64).reshape(-1)
        if lo.shape != hi.shape or (lo > hi).any():
            raise InvalidModelError("box bounds must have equal length with lower <= upper")
        flags = []
        for f in (self.lower_open, self.upper_open):
            f = np.zeros(lo.shape, bool) if f is None else np.broadcast_to(np.asarray(f, bool), lo.shape).copy()
            flags.append(f)
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)
        object.__setattr__(self, "lower_open", flags[0])
        object.__setattr__(self, "upper_open", flags[1])

    @property
    def dim(self) -> int:
        return self.lower.size

    @property
    def bounded(self) -> bool:
        return bool(np.isfinite(self.lower).all() and np.isfinite(self.upper).all())

    def contains(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        above = np.where(self.lower_open, x > self.lower, x >= self.lower)
        below = np.where(self.upper_open, x < self.upper, x <= self.upper)
        return (above & below).all(axis=-1)

    def ball_meets_complement(self, x, eps) -> np.ndarray:
        """Closed sup-norm ball of radius eps around x has a point outside the box."""
        x = np.asarray(x, dtype=np.float64)
        lo, hi = x - eps, x + eps
        low_out = np.where(self.lower_open, lo <= self.lower, lo < self.lower)
        high_out = np.where(self.upper_open, hi >= self.upper, hi > self.upper)
        return (low_out | high_out).any(axis=-1)

    def ball_outside(self, x, eps) -> np.ndarray:
        """Closed sup-norm ball of radius eps around x misses the box entirely."""
        x = np.asarray(x, dtype=np.float64)
        lo, hi = x - eps, x + eps
        below = np.where(self.lower_open, hi <= self.lower, hi < self.lower)
        above = np.where(self.upper_open, lo >= self.upper, lo > self.upper)
        return (below | above).any(axis=-1)

    def clamp(self, x):
        return np.clip(x, self.lower, self.upper)

    def sample(self, rng: np.random.Generator, count: int) -> np.ndarray:
        return rng.uniform(self.lower, self.upper, size=(count, self.dim))


@dataclass(frozen=True, eq=False)
class FluidModel:
    """Vector field b on a domain U with Lipschitz constant K and start x0.

    ``field`` maps a length-d vector to a length-d vector. When ``vectorized``
    it must also accept a ``(k, d)`` array row-wise. ``predicate``, if given,
    takes a ``(k, d)`` array and returns a boolean per row; U is the
    intersection of the box and the predicate region.
    """

    dim: int
    field: Callable
    x0: np.ndarray
    lipschitz_K: Optional[float] = None
    box: Optional[Box] = None
    predicate: Optional[Callable] = None
    approximate_K: bool = False
    clamp_to_box: bool = False
    vectorized: bool = True
    name: str = ""

    def __post_init__(self):
        x0 = np.asarray(self.x0, dtype=np.float64).reshape(-1)
        object.__setattr__(self, "x0", x0)
        if x0.size != self.dim:
            raise InvalidModelError(f"x0 has length {x0.size}, expected {self.dim}")
        if self.box is not None and self.box.dim != self.dim:
            raise InvalidModelError("box dimension does not match the model")
        if not self.in_domain(x0[None, :])[0]:
            raise InvalidModelError(f"x0={x0.tolist()} is not in the domain U")
        if self.lipschitz_K is not None and self.lipschitz_K < 0:
            raise InvalidModelError("Lipschitz constant must be nonnegative")

    def in_domain(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        ok = np.ones(x.shape[0], dtype=bool)
        if self.box is not None:
            ok &= self.box.contains(x)
        if self.predicate is not None:
            ok &= np.asarray(self.predicate(x), dtype=bool).reshape(-1)
        return ok

    def b(self, x) -> np.ndarray:
        """Field at one point (clamped to the box for generic models)."""
        x = np.asarray(x, dtype=np.float64)
        if self.clamp_to_box and self.box is not None:
            x = self.box.clamp(x)
        return np.asarray(self.field(x), dtype=np.float64).reshape(self.dim)

    def b_many(self, xs) -> np.ndarray:
        xs = np.atleast_2d(np.asarray(xs, dtype=np.float64))
        if self.clamp_to_box and self.box is not None:
            xs = self.box.clamp(xs)
        if self.vectorized:
            out = np.asarray(self.field(xs), dtype=np.float64)
            if out.shape == xs.shape:
                return out
        return np.array([self.field(x) for x in xs], dtype=np.float64).reshape(xs.shape)

    def with_K(self, K: float, approximate: bool = False) -> "FluidModel":
        from dataclasses import replace

        return replace(self, lipschitz_K=float(K), approximate_K=approximate)


@dataclass(frozen=True, eq=False)
class FluidPath:
    """RK4 grid solution with a cubic Hermite dense accessor.

    ``exit_time`` is the first time the path leaves U (``inf`` if it stays
    inside up to the horizon).
    """

    h: float
    times: np.ndarray
    values: np.ndarray
    slopes: np.ndarray
    exit_time: float = np.inf

    @property
    def horizon(self) -> float:
        return float(self.times[-1])

    def at(self, t):
        """Dense evaluation; exact at grid times."""
        scalar = np.ndim(t) == 0
        t = np.atleast_1d(np.asarray(t, dtype=np.float64))
        if (t < 0).any() or (t > self.horizon * (1 + 1e-12) + 1e-15).any():
            raise ValueError("time outside the computed horizon")
        n = len(self.times) - 1
        if n == 0:
            out = np.repeat(self.values[:1], t.size, axis=0)
            return out[0] if scalar else out
        i = np.clip(np.searchsorted(self.times, t, side="right") - 1, 0, n - 1)
        t0, t1 = self.times[i], self.times[i + 1]
        dt = t1 - t0
        s = np.clip((t - t0) / dt, 0.0, 1.0)[:, None]
        s2, s3 = s * s, s * s * s
        h00 = 2 * s3 - 3 * s2 + 1
        h10 = s3 - 2 * s2 + s
        h01 = -2 * s3 + 3 * s2
        h11 = s3 - s2
        y0, y1 = self.values[i], self.values[i + 1]
        f0, f1 = self.slopes[i], self.slopes[i + 1]
        out = h00 * y0 + h01 * y1 + dt[:, None] * (h10 * f0 + h11 * f1)
        # exact grid reproduction
        out = np.where(s == 0.0, y0, np.where(s == 1.0, y1, out))
        return out[0] if scalar else out


def _rk4_step(model: FluidModel, t: float, x: np.ndarray, h: float):
    k1 = model.b(x)
    k2 = model.b(x + 0.5 * h * k1)
    k3 = model.b(x + 0.5 * h * k2)
    k4 = model.b(x + h * k3)
    for k in (k1, k2, k3, k4):
        if not np.isfinite(k).all():
            raise IntegrationError(f"non-finite field value near t={t:.6g}", time=t)
    return x + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4), k1


def _first_true(times, flags, test, resolution=EXIT_RESOLUTION):
    """First time a predicate along a path becomes true, refined by bisection."""
    hits = np.nonzero(flags)[0]
    if hits.size == 0:
        return np.inf
    j = int(hits[0])
    if j == 0:
        return float(times[0])
    lo, hi = float(times[j - 1]), float(times[j])
    while hi - lo > resolution:
        mid = 0.5 * (lo + hi)
        if test(mid):
            hi = mid
        else:
            lo = mid
    return hi


def integrate(model: FluidModel, t_max: float, h: float) -> FluidPath:
    """Fixed-step classical RK4 on ``[0, t_max]``.

    The path is integrated through the exit from U (using the field's
    extension) so that exit windows can be evaluated afterwards.
    """
    if h <= 0:
        raise ValueError("step h must be positive")
    if t_max < 0:
        raise ValueError("t_max must be nonnegative")
    n = int(np.ceil(t_max / h - 1e-9)) if t_max > 0 else 0
    times = np.minimum(np.arange(n + 1) * h, t_max)
    if n:
        times[-1] = t_max
    values = np.empty((n + 1, model.dim))
    slopes = np.empty((n + 1, model.dim))
    values[0] = model.x0
    x = model.x0
    for i in range(n):
        x, slopes[i] = _rk4_step(model, times[i], x, times[i + 1] - times[i])
        if not np.isfinite(x).all():
            raise IntegrationError(f"non-finite state at t={times[i + 1]:.6g}", time=times[i + 1])
        values[i + 1] = x
    slopes[n] = model.b(x)
    if not np.isfinite(slopes[n]).all():
        raise IntegrationError(f"non-finite field value at t={times[n]:.6g}", time=times[n])
    path = FluidPath(h=float(h), times=times, values=values, slopes=slopes)
    outside = ~model.in_domain(values)
    exit_time = _first_true(times, outside, lambda t: not model.in_domain(path.at(t)[None, :])[0])
    return FluidPath(h=float(h), times=times, values=values, slopes=slopes, exit_time=exit_time)


def check_refinement(model: FluidModel, t_max: float, h: float) -> float:
    """Largest change of grid values when the step is halved."""
    coarse = integrate(model, t_max, h)
    fine = integrate(model, t_max, h / 2)
    return float(np.abs(fine.at(coarse.times) - coarse.values).max())


# --- exit windows ----------------------------------------------------------------


def _ball_points(x, eps, lattice):
    """Sample points of the sup-norm ball used for predicate tests."""
    x = np.asarray(x, dtype=np.float64)
    if lattice is None:
        offsets = np.array(list(itertools.product((-eps, 0.0, eps), repeat=x.size)))
        return x + offsets
    s = np.broadcast_to(np.asarray(lattice, dtype=np.float64), x.shape)
    lo = np.ceil((x - eps) / s - 1e-12) * s
    hi = np.floor((x + eps) / s + 1e-12) * s
    if (lo > hi + 1e-15).any():
        return np.empty((0, x.size))
    mid = np.clip(np.round(x / s) * s, lo, hi)
    axes = [np.unique([lo[i], mid[i], hi[i]]) for i in range(x.size)]
    return np.array(list(itertools.product(*axes)))


def _lattice_range(x, eps, lattice):
    s = np.broadcast_to(np.asarray(lattice, dtype=np.float64), np.shape(x))
    lo = np.ceil((x - eps) / s - 1e-12) * s
    hi = np.floor((x + eps) / s + 1e-12) * s
    return lo, hi


def _box_range_outside(box: Box, lo, hi):
    """Per-coordinate tests for the coordinate range [lo, hi] against the box."""
    some_out = np.where(box.lower_open, lo <= box.lower, lo < box.lower) | np.where(
        box.upper_open, hi >= box.upper, hi > box.upper
    )
    all_out = np.where(box.lower_open, hi <= box.lower, hi < box.lower) | np.where(
        box.upper_open, lo >= box.upper, lo > box.upper
    )
    return bool(some_out.any()), bool(all_out.any())


def ball_meets_complement(model: FluidModel, x, eps, lattice=None) -> bool:
    """Some point of the eps-ball (or of its lattice points) lies outside U."""
    x = np.asarray(x, dtype=np.float64)
    if lattice is None:
        lo, hi = x - eps, x + eps
    else:
        lo, hi = _lattice_range(x, eps, lattice)
        if (lo > hi + 1e-15).any():
            return False
    if model.box is not None and _box_range_outside(model.box, lo, hi)[0]:
        return True
    if model.predicate is None:
        return False
    pts = _ball_points(x, eps, lattice)
    return bool(pts.size and (~model.in_domain(pts)).any())


def ball_outside(model: FluidModel, x, eps, lattice=None) -> bool:
    """Every point of the eps-ball (or of its lattice points) lies outside U."""
    x = np.asarray(x, dtype=np.float64)
    if lattice is None:
        lo, hi = x - eps, x + eps
    else:
        lo, hi = _lattice_range(x, eps, lattice)
        if (lo > hi + 1e-15).any():
            return True
    if model.box is not None and _box_range_outside(model.box, lo, hi)[1]:
        return True
    if model.predicate is None:
        return False
    pts = _ball_points(x, eps, lattice)
    return bool((~model.in_domain(pts)).all())


@dataclass(frozen=True)
class ExitWindow:
    zeta: float
    zeta_minus: float
    zeta_plus: float
    rho: float
    eps: float
    lattice: bool = False


def exit_window(model: FluidModel, path: FluidPath, eps: float, lattice=None, samples_per_step: int = 8) -> ExitWindow:
    """Exit time and the window around it where the eps-tube straddles the boundary.

    ``lattice`` (a spacing, scalar or per coordinate) restricts the ball to
    lattice points, the refinement used when the chain's coordinates live on
    a grid.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    zeta = path.exit_time
    if not np.isfinite(zeta):
        raise WindowNotBracketedError("the fluid path does not leave U within its horizon")
    meets = lambda t: ball_meets_complement(model, path.at(t), eps, lattice)
    outside = lambda t: ball_outside(model, path.at(t), eps, lattice)
    flags_minus = np.array([ball_meets_complement(model, v, eps, lattice) for v in path.values])
    flags_plus = np.array([ball_outside(model, v, eps, lattice) for v in path.values])
    z_minus = _first_true(path.times, flags_minus, meets)
    z_plus = _first_true(path.times, flags_plus, outside)
    if not np.isfinite(z_plus) or z_plus >= path.horizon:
        raise WindowNotBracketedError(
            f"horizon {path.horizon:.6g} does not cover the exit window for eps={eps:g}"
        )
    z_minus = min(z_minus, zeta)
    z_plus = max(z_plus, zeta)
    inner = path.times[(path.times > z_minus) & (path.times < z_plus)]
    steps = max(1, int(np.ceil((z_plus - z_minus) / path.h)) * samples_per_step)
    ts = np.concatenate([[z_minus, z_plus], inner, np.linspace(z_minus, z_plus, steps + 1)])
    x_zeta = path.at(zeta)
    rho = float(np.abs(path.at(ts) - x_zeta).max())
    return ExitWindow(float(zeta), float(z_minus), float(z_plus), rho, float(eps), lattice is not None)


def estimate_lipschitz(model: FluidModel, sample_count: int = 10_000, seed: int = 0, safety: float = 1.2) -> float:
    """Sampled sup-norm Lipschitz constant of b on the box, inflated by ``safety``.

    Pairs are drawn both uniformly over the box and as small perturbations
    along sign patterns, which finds the row-sum direction of near-linear
    fields quickly.
    """
    from . import rng as _rng

    if model.box is None or not model.box.bounded:
        raise InvalidModelError("estimating K needs a bounded box; supply lipschitz_K explicitly")
    g = _rng.generator(seed)
    box = model.box
    half = sample_count // 2
    x = box.sample(g, sample_count)
    y = np.concatenate([box.sample(g, half), np.empty((sample_count - half, box.dim))])
    width = box.upper - box.lower
    signs = g.choice([-1.0, 1.0], size=(sample_count - half, box.dim))
    scale = 10.0 ** g.uniform(-6, -2, size=(sample_count - half, 1))
    y[half:] = box.clamp(x[half:] + signs * scale * width)
    dx = np.abs(x - y).max(axis=1)
    keep = dx > 0
    db = np.abs(model.b_many(x[keep]) - model.b_many(y[keep])).max(axis=1)
    raw = float((db / dx[keep]).max()) if keep.any() else 0.0
    return safety * raw
