import math

import numpy as np
import pytest
from scipy import stats

from fluidlimit import bounds, coupling, fluid, models
from fluidlimit.ctmc import Channel, ChainSpec


def epidemic_setup(N=200, lam=2.0, p=0.1, k=2, eps=0.05, t0=1.0, tagged=None):
    m = models.make_epidemic(models.EpidemicParams(N=N, lam=lam, p=p))
    fp = fluid.integrate(m.fluid, t0, 1e-3)
    spec, mod, init = coupling.make_epidemic_individuals(N, lam, p, k, eps=eps, tagged_status=tagged)
    return spec, mod, init, fp


def frozen_fluid(x, t0=1.0):
    fm = fluid.FluidModel(dim=len(x), field=lambda y: np.zeros_like(y), x0=list(x))
    return fluid.integrate(fm, t0, 1e-2)


def random_spec(rng, dim=2, n_channels=4):
    channels = []
    for c in range(n_channels):
        jump = rng.integers(-1, 2, size=dim)
        if not jump.any():
            jump[0] = 1
        a, b = rng.uniform(0.1, 2.0, size=2)
        # rates vanish when a jump would leave the nonnegative orthant
        channels.append(
            Channel(jump, (lambda a, b, j: lambda s: (a + b * s[..., 0] / 10) * np.all(s + j >= 0, axis=-1))(a, b, jump))
        )
    return ChainSpec(dim=dim, channels=channels)


def random_modulation(rng, n_labels=3):
    coef = rng.uniform(0.0, 2.0, size=(n_labels, n_labels))
    # some target rates are zero so both sides of the min/positive-part branches are exercised
    coef[rng.random(coef.shape) < 0.25] = 0.0

    def rates(x, y):
        return {y2: float(coef[y, y2] * (1 + x[0] ** 2)) for y2 in range(n_labels) if y2 != y}

    return coupling.ModulationSpec(label=lambda s: int(np.asarray(s).sum()) % n_labels, rates=rates)


def check_marginals(spec, mod, state, label, t, fp):
    kern = coupling.coupled_kernel(spec, mod, state, label, t, fp)
    assert all(r >= 0 for r in kern.values())
    here = tuple(np.asarray(state).tolist())
    # state marginal: chain rates, aggregated by destination
    want = {}
    for ch, r in zip(spec.jumps, spec.rate_matrix(np.asarray(state)[None, :])[0]):
        if r > 0:
            key = tuple((np.asarray(state) + ch).tolist())
            want[key] = want.get(key, 0.0) + float(r)
    got = {}
    for (s2, _), r in kern.items():
        if s2 != here:
            got[s2] = got.get(s2, 0.0) + r
    assert set(got) <= set(want)
    for key, r in want.items():
        assert got.get(key, 0.0) == pytest.approx(r, rel=1e-12, abs=1e-12)
    # label marginal: target rates g_t
    g_t = mod.rates(fp.at(t), label)
    got = {}
    for (_, y2), r in kern.items():
        if y2 != label:
            got[y2] = got.get(y2, 0.0) + r
    for y2, r in g_t.items():
        assert got.get(y2, 0.0) == pytest.approx(r, rel=1e-12, abs=1e-12)
    assert set(got) <= {y for y, r in g_t.items() if r > 0}


# --- gamma ----------------------------------------------------------------------


def test_gamma_constant_label_is_zero():
    rng = np.random.default_rng(0)
    spec = random_spec(rng)
    mod = coupling.ModulationSpec(label=lambda s: 0, rates=lambda x, y: {})
    assert coupling.gamma(spec, mod, [3, 3], 1) == 0.0
    assert coupling.gamma(spec, mod, [3, 3], "other") == 0.0


def test_gamma_identity_label_single_channel():
    spec = ChainSpec(dim=1, channels=[Channel([1], lambda s: 0.7 + 0 * s[..., 0]), Channel([-1], lambda s: 0.2 * s[..., 0])])
    mod = coupling.ModulationSpec(label=lambda s: int(s[0]), rates=lambda x, y: {})
    assert coupling.gamma(spec, mod, [5], 6) == pytest.approx(0.7)
    assert coupling.gamma(spec, mod, [5], 4) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        coupling.gamma(spec, mod, [5], 5)


def test_gamma_epidemic_single_individual():
    N, lam = 1000, 5.0
    spec, mod, init = coupling.make_epidemic_individuals(N, lam, 0.1, 1)
    infectives = init[2]  # the tagged individual is susceptible
    assert coupling.gamma(spec, mod, init, (2,)) == pytest.approx(lam * infectives / N, rel=1e-15)


# --- kernel -----------------------------------------------------------------------


def test_kernel_marginals_random_specs():
    rng = np.random.default_rng(1)
    fp = fluid.integrate(fluid.FluidModel(dim=1, field=lambda x: -x, x0=[1.0]), 1.0, 1e-2)
    for _ in range(1000):
        spec = random_spec(rng)
        mod = random_modulation(rng)
        state = rng.integers(0, 6, size=2)
        here = mod.label(state)
        label = here if rng.random() < 0.6 else int(rng.integers(0, 3))
        check_marginals(spec, mod, state, label, float(rng.uniform(0, 1)), fp)


def test_kernel_marginals_epidemic_individuals():
    rng = np.random.default_rng(2)
    spec, mod, init, fp = epidemic_setup(N=100, k=2)
    for _ in range(1000):
        status = tuple(int(v) for v in rng.integers(1, 4, size=2))
        state = np.array(list(status) + [int(rng.integers(0, 80)), int(rng.integers(0, 20))])
        label = status if rng.random() < 0.6 else tuple(int(v) for v in rng.integers(1, 4, size=2))
        check_marginals(spec, mod, state, label, float(rng.uniform(0, 1)), fp)


def matched_chain(c=1.5):
    spec = ChainSpec(dim=1, channels=[Channel([1], lambda s: c + 0 * s[..., 0])])
    mod = coupling.ModulationSpec(label=lambda s: int(s[0]), rates=lambda x, y: {y + 1: c})
    return spec, mod


def test_kernel_matched_rates_no_desync_mass():
    spec, mod = matched_chain()
    fp = frozen_fluid([0.3])
    kern = coupling.coupled_kernel(spec, mod, [4], 4, 0.5, fp)
    assert kern == {((5,), 5): 1.5}
    assert coupling.hazard(spec, mod, [4], 0.5, fp) == 0.0


def test_simulate_matched_never_decouples():
    spec, mod = matched_chain()
    fp = frozen_fluid([0.3], t0=2.0)
    runs = coupling.simulate_coupled_replicas(spec, mod, np.array([0]), fp, 2.0, 5, 200)
    assert all(not r.decoupled and r.decouple_time == math.inf for r in runs)
    assert np.mean([r.states[-1][0] for r in runs]) == pytest.approx(3.0, abs=0.5)


def test_label_equals_state_label_before_decoupling():
    spec, mod, init, fp = epidemic_setup(N=50, k=2, lam=3.0)
    for r in coupling.simulate_coupled_replicas(spec, mod, init, fp, 1.0, 7, 100):
        for t, s, y in zip(r.times, r.states, r.labels):
            if t < r.decouple_time:
                assert y == mod.label(s)
        assert r.tau == r.t0
        assert np.all(np.diff(r.times) > 0)


def test_simulate_deterministic():
    spec, mod, init, fp = epidemic_setup(N=50, k=1)
    a = coupling.simulate_coupled(spec, mod, init, fp, 1.0, 99)
    b = coupling.simulate_coupled(spec, mod, init, fp, 1.0, 99)
    assert np.array_equal(a.times, b.times) and a.labels == b.labels


def test_simulate_rejects_short_fluid():
    spec, mod = matched_chain()
    with pytest.raises(ValueError):
        coupling.simulate_coupled(spec, mod, [0], frozen_fluid([0.3], t0=0.5), 1.0, 1)


# --- individual epidemic rates ----------------------------------------------------


def test_epidemic_individual_rates():
    x = (0.5, 0.1)
    assert coupling.epidemic_individual_rates(x, 1, 2, 5.0) == pytest.approx(0.5)
    assert coupling.epidemic_individual_rates(x, 2, 3, 5.0) == 1.0
    assert all(coupling.epidemic_individual_rates(x, 3, n, 5.0) == 0.0 for n in (1, 2, 3))
    assert coupling.epidemic_individual_rates(x, 1, 3, 5.0) == 0.0
    g = coupling.epidemic_label_rates(5.0)(x, (1, 2))
    assert sum(g.values()) == pytest.approx(5.0 * 0.1 + 1.0)
    assert g == {(2, 2): pytest.approx(0.5), (1, 3): 1.0}


# --- decoupling bound --------------------------------------------------------------


def test_decoupling_bound_reduces_to_exp_bound():
    for N in (100, 1000, 10_000):
        b = bounds.budget_exp(0.1, 1.0, 10.0, models.epidemic_A(5.0, N), 2)
        assert coupling.decoupling_bound(0.0, 0.0, 1.0, 2, b.delta, b.A) == b.bound


def test_decoupling_bound_linear_in_k():
    lam, eps, t0 = 2.0, 0.01, 0.5
    b = bounds.budget_exp(eps, t0, 4.0, 1e-9, 2)
    assert b.raw_bound < 1e-6
    vals = [coupling.decoupling_bound(0.0, coupling.epidemic_kappa(k, lam, eps), t0, 2, b.delta, b.A) for k in (1, 2, 3)]
    assert vals[1] - vals[0] == pytest.approx(lam * eps * t0, rel=1e-9)
    assert vals[2] - vals[1] == pytest.approx(lam * eps * t0, rel=1e-9)


def test_decoupling_bound_decreasing_in_N():
    lam, t0, k, C = 0.5, 0.2, 2, 50.0
    K = lam + max(lam, 1.0)
    vals = []
    for N in (10**3, 10**4, 10**5):
        eps = math.sqrt(C * math.log(N) / N)
        b = bounds.budget_exp(eps, t0, K, models.epidemic_A(lam, N), 2)
        vals.append(coupling.decoupling_bound(0.0, coupling.epidemic_kappa(k, lam, eps), t0, 2, b.delta, b.A))
    assert vals[0] > vals[1] > vals[2]


def test_decoupling_bound_rejects_negative():
    with pytest.raises(ValueError):
        coupling.decoupling_bound(-1.0, 0.0, 1.0, 1, 0.1, 0.1)


def test_estimate_kappa_epidemic_matches_analytic():
    spec, mod, init, fp = epidemic_setup(N=100, k=1, lam=3.0)
    kap = coupling.estimate_kappa(mod, fp, 0.05, 1.0, [(1,), (2,), (3,)], times=20)
    assert kap == pytest.approx(coupling.epidemic_kappa(1, 3.0, 0.05), rel=1e-9)


# --- distributional checks -----------------------------------------------------------


def test_label_components_independent():
    spec, mod, init, fp = epidemic_setup(N=20, k=2, lam=2.0, p=0.2)
    runs = coupling.simulate_coupled_replicas(spec, mod, init, fp, 1.0, 11, 10_000)
    table = np.zeros((3, 3))
    for r in runs:
        a, b = r.label_at(1.0)
        table[a - 1, b - 1] += 1
    table = table[table.sum(axis=1) > 0][:, table.sum(axis=0) > 0]
    assert stats.chi2_contingency(table).pvalue > 1e-3


def test_label_marginal_matches_direct_chain():
    lam, x = 2.0, (0.7, 0.3)
    spec, mod, init = coupling.make_epidemic_individuals(50, lam, 0.1, 1)
    fp = frozen_fluid(x)
    runs = coupling.simulate_coupled_replicas(spec, mod, init, fp, 1.0, 3, 10_000)
    coupled = np.bincount([r.label_at(1.0)[0] for r in runs], minlength=4)[1:]
    rng = np.random.default_rng(4)
    t1 = rng.exponential(1 / (lam * x[1]), 10_000)
    t2 = t1 + rng.exponential(1.0, 10_000)
    direct = np.array([(t1 > 1).sum(), ((t1 <= 1) & (t2 > 1)).sum(), (t2 <= 1).sum()])
    assert stats.chi2_contingency(np.vstack([coupled, direct])).pvalue > 1e-3


def test_decoupling_probability_within_bound():
    lam, eps, t0, N = 2.0, 0.05, 1.0, 1000
    spec, mod, init, fp = epidemic_setup(N=N, k=1, lam=lam, eps=eps, t0=t0)
    runs = coupling.simulate_coupled_replicas(spec, mod, init, fp, t0, 13, 500, stop_at_decoupling=True)
    frac = np.mean([r.decoupled for r in runs])
    K = lam + max(lam, 1.0)
    b = bounds.budget_exp(eps, t0, K, models.epidemic_A(lam, N), 2)
    bound = coupling.decoupling_bound(0.0, mod.kappa, t0, 2, b.delta, b.A)
    assert frac <= bound + 3 * math.sqrt(bound * (1 - bound) / 500)
    assert frac <= mod.kappa * t0 + 3 * math.sqrt(mod.kappa * t0 / 500)
