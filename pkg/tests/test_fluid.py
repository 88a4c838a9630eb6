import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fluidlimit import fluid, hypergraph, models
from fluidlimit.errors import IntegrationError, InvalidModelError, WindowNotBracketedError
from fluidlimit.fluid import Box, FluidModel


def linear_crossing(h=1e-3, t_max=2.0):
    m = FluidModel(dim=1, field=lambda x: np.ones_like(x), x0=[0.0], lipschitz_K=0.0,
                   box=Box([-np.inf], [1.0], upper_open=True))
    return m, fluid.integrate(m, t_max, h)


def test_poisson_exact_on_grid():
    m = models.make_poisson(lam=2.0, N=10)
    path = fluid.integrate(m.fluid, 3.0, 0.01)
    assert np.allclose(path.values[:, 0], 2 * path.times, rtol=1e-14, atol=1e-14)


def test_critical_branching_constant():
    m = models.make_branching({0: 0.5, 2: 0.5}, N=10, x0=0.7)
    path = fluid.integrate(m.fluid, 2.0, 0.01)
    assert (path.values == 0.7).all()


def test_hypergraph_edge_coordinates_closed_form():
    freq = hypergraph.FrequencyVectors({1: 0.2, 3: 0.6}, {2: 0.4, 3: 0.4})
    model = hypergraph.hypergraph_fluid_model(freq, 2)
    keys = hypergraph.coordinate_keys(freq, 2)
    path = fluid.integrate(model, 2.0, 1e-3)
    for w in range(1, freq.L + 1):
        j = keys.index(("e", w))
        assert np.abs(path.values[:, j] - np.exp(-path.times * w) * freq.q.get(w, 0.0)).max() <= 1e-8


def test_mm_inf_solution_is_the_corrected_formula():
    x0 = 0.3
    m = models.make_mm_inf(N=10, x0=x0)
    path = fluid.integrate(m.fluid, 4.0, 1e-3)
    assert np.abs(path.values[:, 0] - models.mm_inf_exact(x0, path.times)).max() < 1e-12
    # substitute both candidate solutions into x' = 1 - x
    t = np.linspace(0, 3, 7)
    corrected = models.mm_inf_exact(x0, t)
    assert np.allclose(-(x0 - 1) * np.exp(-t), 1 - corrected, atol=1e-15)
    assert corrected[0] == pytest.approx(x0, abs=1e-15)
    # 1 + x0 e^{-t} also solves the equation but starts at 1 + x0
    shifted = 1 + x0 * np.exp(-t)
    assert np.allclose(-x0 * np.exp(-t), 1 - shifted, atol=1e-15)
    assert shifted[0] == 1 + x0 != x0


def test_dense_accessor_exact_at_grid():
    m = models.make_epidemic(models.EpidemicParams())
    path = fluid.integrate(m.fluid, 1.0, 0.01)
    assert np.array_equal(path.at(path.times), path.values)
    with pytest.raises(ValueError):
        path.at(1.5)


def test_refinement_order_four():
    freq = hypergraph.FrequencyVectors({1: 0.2, 3: 0.6}, {2: 0.4, 3: 0.4})
    model = hypergraph.hypergraph_fluid_model(freq, 2)
    keys = hypergraph.coordinate_keys(freq, 2)
    exact = hypergraph.fluid_closed_form(freq, 2, 2.0).vector(keys)
    hs = [0.1, 0.05, 0.025]
    errs = [np.abs(fluid.integrate(model, 2.0, h).values[-1] - exact).max() for h in hs]
    slopes = np.diff(np.log(errs)) / np.diff(np.log(hs))
    assert ((slopes >= 3.5) & (slopes <= 4.5)).all(), slopes
    assert fluid.check_refinement(model, 2.0, 1e-3) < 1e-10


def test_integration_error_on_nonfinite_field():
    m = FluidModel(dim=1, field=lambda x: np.where(x > 1.0, np.nan, 1.0), x0=[0.0])
    with pytest.raises(IntegrationError) as info:
        fluid.integrate(m, 2.0, 0.01)
    assert info.value.time is not None


def test_x0_outside_domain_rejected():
    with pytest.raises(InvalidModelError):
        FluidModel(dim=1, field=lambda x: x, x0=[2.0], box=Box([0.0], [1.0]))


# --- exit windows ---------------------------------------------------------------


def test_linear_crossing_window():
    m, path = linear_crossing()
    w = fluid.exit_window(m, path, 0.1)
    assert w.zeta == pytest.approx(1.0, abs=1e-9)
    assert w.zeta_minus == pytest.approx(0.9, abs=1e-9)
    assert w.zeta_plus == pytest.approx(1.1, abs=1e-9)
    assert w.rho == pytest.approx(0.1, abs=1e-9)


def test_window_not_bracketed():
    m, path = linear_crossing(t_max=1.05)
    with pytest.raises(WindowNotBracketedError):
        fluid.exit_window(m, path, 0.1)
    m2 = models.make_epidemic(models.EpidemicParams())
    with pytest.raises(WindowNotBracketedError):
        fluid.exit_window(m2.fluid, fluid.integrate(m2.fluid, 1.0, 0.01), 0.1)


def test_timechanged_exit_equals_final_size():
    lam, p = 5.0, 0.1
    m = models.make_epidemic_timechanged(models.EpidemicParams(N=1000, lam=lam, p=p))
    path = fluid.integrate(m.fluid, 1.5, 1e-3)
    assert path.exit_time == pytest.approx(models.sir_final_size(lam, p), abs=1e-6)


def test_rho_shrinks_with_eps_for_transversal_crossing():
    m, path = linear_crossing()
    rhos = [fluid.exit_window(m, path, e).rho for e in (0.1, 0.01, 0.001)]
    assert rhos[0] > rhos[1] > rhos[2]
    assert max(r / e for r, e in zip(rhos, (0.1, 0.01, 0.001))) <= 1.0 + 1e-6


@given(st.floats(0.001, 0.3), st.floats(0.001, 0.3))
def test_windows_order_and_nest(e1, e2):
    e1, e2 = min(e1, e2), max(e1, e2)
    m = models.make_epidemic_timechanged(models.EpidemicParams(N=1000, lam=5.0, p=0.1))
    path = _TC_PATH
    w1 = fluid.exit_window(m.fluid, path, e1)
    w2 = fluid.exit_window(m.fluid, path, e2)
    for w in (w1, w2):
        assert w.zeta_minus <= w.zeta <= w.zeta_plus
    assert w2.zeta_minus <= w1.zeta_minus + 1e-9 and w1.zeta_plus <= w2.zeta_plus + 1e-9


_TC_PATH = fluid.integrate(
    models.make_epidemic_timechanged(models.EpidemicParams(N=1000, lam=5.0, p=0.1)).fluid, 1.8, 2e-3
)


def test_lattice_window_is_inside_continuous_window():
    m, path = linear_crossing()
    cont = fluid.exit_window(m, path, 0.1)
    lat = fluid.exit_window(m, path, 0.1, lattice=0.05)
    assert lat.lattice
    assert cont.zeta_minus <= lat.zeta_minus + 1e-9 and lat.zeta_plus <= cont.zeta_plus + 1e-9


# --- Lipschitz estimation --------------------------------------------------------


def test_lipschitz_affine_field():
    M = np.array([[1.0, -2.0], [0.5, 3.0]])
    c = np.array([0.3, -0.1])
    m = FluidModel(dim=2, field=lambda x: x @ M.T + c, x0=[0.0, 0.0], box=Box([-1, -1], [1, 1]))
    est = fluid.estimate_lipschitz(m, sample_count=100_000)
    exact = np.abs(M).sum(axis=1).max()
    assert abs(est / 1.2 - exact) <= 0.05 * exact


def test_lipschitz_constant_field():
    m = FluidModel(dim=2, field=lambda x: np.ones_like(x), x0=[0.0, 0.0], box=Box([0, 0], [1, 1]))
    assert fluid.estimate_lipschitz(m) == 0.0


def test_lipschitz_epidemic_within_stated_constant():
    m = models.make_epidemic(models.EpidemicParams(lam=5.0))
    assert fluid.estimate_lipschitz(m.fluid) <= 1.2 * 10.0


def test_lipschitz_needs_bounded_box():
    m = models.make_mm_inf(N=10)
    with pytest.raises(InvalidModelError):
        fluid.estimate_lipschitz(m.fluid)
