import itertools
import math
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import optimize, stats

from fluidlimit import fluid
from fluidlimit import hypergraph as hg
from fluidlimit.errors import InvalidModelError

MIXED = hg.FrequencyVectors({1: 0.2, 3: 0.6}, {2: 0.4, 3: 0.4})
REGULAR3 = hg.FrequencyVectors({3: 1.0}, {3: 1.0})

# Three-crossing inputs: lambda a Poisson(2.75) law truncated at 10, sigma a quartic
TRI_LAM = stats.poisson.pmf(np.arange(11), 2.75) / stats.poisson.pmf(np.arange(11), 2.75).sum()
TRI_SIG = np.array([0.02, 0.08, 0.6, 0.2, 0.1])


def tri_phi(g):
    return 1 - np.polynomial.polynomial.polyval(1 - np.polynomial.polynomial.polyval(g, TRI_SIG), TRI_LAM)


@st.composite
def freqs(draw, max_support=5):
    """Frequency vectors with matching totals: p arbitrary, q rescaled to the same m."""
    pd = draw(st.dictionaries(st.integers(1, max_support), st.floats(0.05, 1.0), min_size=1, max_size=4))
    qw = draw(st.dictionaries(st.integers(1, max_support), st.floats(0.05, 1.0), min_size=1, max_size=4))
    m = sum(d * v for d, v in pd.items())
    mq = sum(w * v for w, v in qw.items())
    return hg.FrequencyVectors(pd, {w: v * m / mq for w, v in qw.items()})


# --- frequency vectors and generation -------------------------------------------------


def test_frequency_validation():
    with pytest.raises(InvalidModelError, match="differs"):
        hg.FrequencyVectors({1: 1.0}, {2: 1.0})
    with pytest.raises(InvalidModelError, match="vanish"):
        hg.FrequencyVectors({0: 1.0, 2: 1.0}, {2: 1.0})
    with pytest.raises(InvalidModelError, match="integer"):
        MIXED.counts(7)
    assert MIXED.m == pytest.approx(2.0) and MIXED.L == 3


def test_generate_unique_instance():
    freq = hg.FrequencyVectors({1: 2.0}, {2: 1.0})
    h, retries = hg.generate(freq, 1, seed=3)
    assert retries == 0
    assert h.incidence_set() == frozenset({(0, 0), (1, 0)})


def test_generate_respects_counts():
    h, _ = hg.generate(REGULAR3, 100, seed=1)
    assert (h.orig_degree == 3).all() and (h.orig_weight == 3).all()
    assert all(len(set(e)) == len(e) for e in h.edges)
    assert h.n_incidences == 300
    h2, _ = hg.generate(MIXED, 50, seed=2)
    assert Counter(h2.orig_degree.tolist()) == {1: 10, 3: 30}
    assert Counter(h2.orig_weight.tolist()) == {2: 20, 3: 20}


def test_generate_acceptance_rate_regular():
    retries = [hg.generate(REGULAR3, 100, seed=s)[1] for s in range(40)]
    # whole-sample acceptance for 3-regular 3-uniform is about e^{-2}; be generous
    assert 40 / (40 + sum(retries)) > 0.02


def test_generate_retry_cap():
    freq = hg.FrequencyVectors({2: 1.0}, {2: 1.0})
    with pytest.raises(InvalidModelError, match="rejected"):
        hg.generate(freq, 1, seed=0, retry_cap=5)  # one vertex of degree 2 in one edge of weight 2


def enumerate_configurations(vdeg, ewt):
    """All incidence sets with the given vertex degrees and edge weights."""
    n_e = len(ewt)
    out = []
    for choice in itertools.product(*[itertools.combinations(range(n_e), d) for d in vdeg]):
        col = Counter(e for edges in choice for e in edges)
        if all(col[e] == ewt[e] for e in range(n_e)):
            out.append(frozenset((v, e) for v, edges in enumerate(choice) for e in edges))
    return out


def test_generate_uniform_over_enumeration():
    freq = hg.FrequencyVectors({1: 2.0, 2: 1.0}, {2: 2.0})
    N = 2
    h, _ = hg.generate(freq, N, seed=0)
    support = enumerate_configurations(h.orig_degree.tolist(), h.orig_weight.tolist())
    index = {c: i for i, c in enumerate(support)}
    counts = np.zeros(len(support))
    for s in range(100_000):
        counts[index[hg.generate(freq, N, seed=s + 1)[0].incidence_set()]] += 1
    assert counts.min() > 0
    assert stats.chisquare(counts).pvalue > 1e-3


def test_edge_list_export():
    h = hg.HypergraphInstance.from_edges(3, [(0, 1), (1, 2)], alive=[True, False])
    assert h.to_edge_list() == "0 0 1\n"


def test_instance_rejects_repeated_vertex():
    with pytest.raises(InvalidModelError):
        hg.HypergraphInstance.from_edges(2, [(0, 0)])


# --- k-core ------------------------------------------------------------------------


def brute_core(h, k):
    """Every deletion order of light vertices; returns the set of distinct cores."""
    finals = set()

    def rec(alive):
        deg = np.zeros(h.n_vertices, dtype=int)
        for i, e in enumerate(h.edges):
            if alive[i]:
                for v in e:
                    deg[v] += 1
        light = [v for v in range(h.n_vertices) if 1 <= deg[v] < k]
        if not light:
            finals.add(tuple(alive))
            return
        for v in light:
            nxt = list(alive)
            for i in h.incident[v]:
                nxt[i] = False
            rec(tuple(nxt))

    rec(tuple(h.alive.tolist()))
    return finals


def test_k_core_cycle_and_path():
    cycle = hg.HypergraphInstance.from_edges(3, [(0, 1), (1, 2), (2, 0)])
    assert hg.k_core(cycle, 2).alive.all()
    path = hg.HypergraphInstance.from_edges(3, [(0, 1), (1, 2)])
    core = hg.k_core(path, 2)
    assert not core.alive.any()
    assert brute_core(path, 2) == {tuple(core.alive.tolist())}


def random_small_instance(rng, max_incidences=12):
    n_v = int(rng.integers(2, 7))
    edges = []
    total = 0
    while True:
        w = int(rng.integers(1, min(4, n_v) + 1))
        if total + w > max_incidences:
            break
        edges.append(tuple(rng.choice(n_v, size=w, replace=False).tolist()))
        total += w
    return hg.HypergraphInstance.from_edges(n_v, edges)


def test_core_order_independent_exhaustive():
    rng = np.random.default_rng(5)
    for _ in range(150):
        h = random_small_instance(rng)
        k = int(rng.integers(2, 4))
        cores = brute_core(h, k)
        assert len(cores) == 1
        assert cores == {tuple(hg.k_core(h, k).alive.tolist())}


def test_k_core_idempotent_and_valid():
    rng = np.random.default_rng(6)
    for _ in range(100):
        h = random_small_instance(rng, 30)
        for k in (2, 3):
            c = hg.k_core(h, k)
            assert np.array_equal(hg.k_core(c, k).alive, c.alive)
            assert all(d == 0 or d >= k for d in c.degree)
            assert set(np.nonzero(c.alive)[0]) <= set(np.nonzero(h.alive)[0])


# --- peeling chain -------------------------------------------------------------------


def test_peel_core_instance_zero_steps():
    h = hg.HypergraphInstance.from_edges(3, [(0, 1), (1, 2), (2, 0)])
    res = hg.peel_chain(h, 2, seed=1)
    assert res.steps == 0 and res.core.alive.all()


def test_peel_chain_properties():
    h, _ = hg.generate(MIXED, 500, seed=4)
    res = hg.peel_chain(h, 2, seed=5)
    assert np.array_equal(res.core.alive, hg.k_core(h, 2).alive)
    assert all(s.incidence_conserved() for s in res.states)
    assert all((s.vertex >= 0).all() and (s.edge >= 0).all() for s in res.states)
    assert all(s.q <= h.N * MIXED.m + 1e-9 for s in res.states)
    assert np.all(np.diff(res.times) > 0)
    final = res.final
    assert final.h == final.m and final.n == 0
    recount = hg.peel_counts(res.core, 2)
    assert np.array_equal(recount.vertex, final.vertex) and np.array_equal(recount.edge, final.edge)
    assert hg.peel_state_frequencies(final, h.N).max_difference(
        hg.empirical_core_frequencies(res.core, h, 2)
    ) == 0.0


def test_peel_chain_deterministic():
    h, _ = hg.generate(MIXED, 100, seed=4)
    a, b = hg.peel_chain(h, 2, seed=9), hg.peel_chain(h, 2, seed=9)
    assert a.removed == b.removed and np.array_equal(a.times, b.times)


# --- size-biased laws and phi ------------------------------------------------------------


def test_size_biased_examples():
    lam, sig = hg.size_biased(hg.FrequencyVectors({3: 0.5}, {2: 0.75}))
    assert lam[2] == 1.0 and lam.sum() == 1.0
    assert sig[1] == 1.0 and sig.sum() == 1.0


@given(freqs())
def test_size_biased_normalised(freq):
    lam, sig = hg.size_biased(freq)
    assert lam.sum() == pytest.approx(1.0, abs=1e-12)
    assert sig.sum() == pytest.approx(1.0, abs=1e-12)
    back = hg.FrequencyVectors.from_size_biased(dict(enumerate(lam)), dict(enumerate(sig)), freq.m)
    for d, v in freq.p.items():
        assert back.p[d] == pytest.approx(v, rel=1e-12)


@given(freqs())
def test_phi_k2_specialisation(freq):
    lam, sig = hg.size_biased(freq)
    g = np.linspace(0, 1, 101)
    want = 1 - hg.pgf(lam, 1 - hg.pgf(sig, g))
    assert np.abs(hg.phi_map(g, freq, 2) - want).max() <= 1e-12


@given(freqs(), st.integers(2, 4))
def test_phi_nondecreasing(freq, k):
    vals = hg.phi_map(np.linspace(0, 1, 1001), freq, k)
    assert np.all(np.diff(vals) >= -1e-14)
    assert np.all((vals >= -1e-15) & (vals <= 1 + 1e-15))


def test_phi_endpoints():
    freq = MIXED  # no weight-1 edges, so sigma(0) = 0
    assert hg.phi_map(0.0, freq, 2) == 0.0
    lam, _ = hg.size_biased(freq)
    for k in (2, 3, 4):
        assert hg.phi_map(1.0, freq, k) == pytest.approx(lam[k - 1 :].sum(), abs=1e-15)


def test_phi_three_crossing_curve():
    g = np.linspace(0, 1, 201)
    got = hg.phi_map(g, (TRI_LAM, TRI_SIG), 2)
    assert np.abs(got - tri_phi(g)).max() <= 1e-12


# --- fixed point ----------------------------------------------------------------------------


def test_g_star_three_crossings():
    # oracle: sign changes on a fine grid, refined by Brent's method
    gs = np.linspace(0, 1, 100_001)
    f = tri_phi(gs) - gs
    idx = np.nonzero(np.diff(np.sign(f)))[0]
    roots = [optimize.brentq(lambda g: tri_phi(g) - g, gs[i], gs[i + 1], xtol=1e-15) for i in idx]
    assert len(roots) == 3
    fp = hg.g_star((TRI_LAM, TRI_SIG), 2)
    assert fp.g_star == pytest.approx(max(roots), abs=1e-12)
    assert fp.g_star == pytest.approx(0.8593233003, abs=1e-9)
    assert fp.crossing_holds and fp.residual <= 1e-10
    assert hg.iterate_phi((TRI_LAM, TRI_SIG), 2) == pytest.approx(fp.g_star, abs=1e-10)


def test_g_star_subcritical():
    # all vertices of degree 1: phi(g) = 1 - lam(1 - sigma(g)) = 0 for k = 2
    freq = hg.FrequencyVectors({1: 1.0}, {2: 0.5})
    fp = hg.g_star(freq, 2)
    assert fp.g_star == 0.0 and fp.crossing_holds


def test_g_star_full_core():
    fp = hg.g_star(REGULAR3, 2)
    assert fp.g_star == 1.0


@given(freqs(), st.integers(2, 3))
@settings(max_examples=30)
def test_g_star_is_fixed_point(freq, k):
    fp = hg.g_star(freq, k)
    assert fp.residual <= 1e-10
    assert abs(hg.phi_map(fp.g_star, freq, k) - fp.g_star) <= 1e-10
    assert hg.iterate_phi(freq, k) == pytest.approx(fp.g_star, abs=1e-6)


# --- limiting frequencies and the fluid limit ---------------------------------------------------


def test_limiting_frequencies_degenerate():
    full = hg.limiting_frequencies(REGULAR3, 2, 1.0)
    assert full.vertex[(3, 3)] == 1.0 and full.edge == {3: 1.0}
    assert full.vertex[(2, 3)] == 0.0
    empty = hg.limiting_frequencies(MIXED, 2, 0.0)
    assert all(v == 0.0 for v in empty.edge.values())


def test_limiting_frequencies_incidence_consistency():
    fp = hg.g_star(MIXED, 2)
    assert fp.crossing_holds and fp.g_star > 0
    lf = hg.limiting_frequencies(MIXED, 2, fp.g_star)
    lhs = sum(d * v for (d, _), v in lf.vertex.items())
    rhs = sum(w * v for w, v in lf.edge.items())
    assert lhs == pytest.approx(rhs, abs=1e-10)
    total = {d2: lf.vertex_zero[d2] + sum(v for (d, e), v in lf.vertex.items() if e == d2) for d2 in MIXED.p}
    assert all(total[d2] == pytest.approx(MIXED.p[d2], abs=1e-15) for d2 in MIXED.p)


def test_closed_form_initial_condition():
    cf = hg.fluid_closed_form(MIXED, 2, 0.0)
    assert cf.edge == {1: 0.0, 2: 0.4, 3: 0.4}
    for (d, d2), v in cf.vertex.items():
        assert v == (MIXED.p.get(d2, 0.0) if d == d2 else 0.0)
    assert cf.m == pytest.approx(MIXED.m) and cf.tau == 0.0


def test_closed_form_gap_identity():
    lam, sig = hg.size_biased(MIXED)
    fp = hg.g_star(MIXED, 2)
    for t in np.linspace(0, 3, 13):
        cf = hg.fluid_closed_form(MIXED, 2, t)
        z = math.exp(-t)
        s = hg.pgf(sig, z)
        want = MIXED.m * s * (z - hg.phi_map(z, MIXED, 2))
        assert cf.m - cf.h == pytest.approx(want, abs=1e-14)
        # the same quantities recomputed from the coordinate vector
        assert cf.m == pytest.approx(sum(w * v for w, v in cf.edge.items()), abs=1e-14)
        assert cf.h == pytest.approx(sum(d * v for (d, _), v in cf.vertex.items()), abs=1e-14)
    t_star = -math.log(fp.g_star)
    cf = hg.fluid_closed_form(MIXED, 2, t_star)
    assert abs(cf.m - cf.h) <= 1e-10


def test_closed_form_matches_rk4():
    model = hg.hypergraph_fluid_model(MIXED, 2)
    keys = hg.coordinate_keys(MIXED, 2)
    t_end = -math.log(hg.g_star(MIXED, 2).g_star) * 0.95
    path = fluid.integrate(model, t_end, 1e-3)
    for t in np.linspace(0, t_end, 7):
        assert np.abs(path.at(t) - hg.fluid_closed_form(MIXED, 2, t).vector(keys)).max() <= 1e-8


# --- empirical frequencies ------------------------------------------------------------------------


def test_empirical_frequencies_trivial():
    h, _ = hg.generate(REGULAR3, 50, seed=1)
    full = hg.empirical_core_frequencies(h, h, 2)
    assert full.vertex == {(3, 3): 1.0} and full.edge == {3: 1.0}
    empty = hg.empirical_core_frequencies(h.with_alive(np.zeros(len(h.edges), bool)), h, 2)
    assert empty.vertex == {} and empty.edge == {} and empty.edge_zero == 1.0


def test_empirical_close_to_limit():
    h, _ = hg.generate(MIXED, 20_000, seed=7)
    res = hg.peel_chain(h, 2, seed=8, record=False)
    emp = hg.empirical_core_frequencies(res.core, h, 2)
    pred = hg.limiting_frequencies(MIXED, 2, hg.g_star(MIXED, 2).g_star)
    assert emp.max_difference(pred) < 0.01
