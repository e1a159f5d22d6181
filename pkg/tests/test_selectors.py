import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from ldbart.data import GroupingMeta
from ldbart.selectors import (
    ConcentrationGrid,
    DirichletSelector,
    LDirichletSelector,
    UniformSelector,
    c_schedule,
    counts_from_columns,
    log_dirichlet,
    make_selector,
    symmetric_dirichlet_loglik,
    tally_splits,
)
from ldbart.trees import Tree, TreePrior


def meta_of(t, sizes_past, P_current):
    time = [k for k, s in enumerate(sizes_past, 1) for _ in range(s)] + [t] * P_current
    return GroupingMeta(t, np.array(time))


# ---------------------------------------------------------- split_prob

def test_uniform_split_prob():
    sel = UniformSelector(7)
    assert all(sel.split_prob(j) == pytest.approx(1 / 7) for j in range(7))


def test_current_column_probability():
    sel = LDirichletSelector(meta_of(2, [3], 4))
    assert sel.w == 0.5
    assert sel.split_prob(3) == pytest.approx(0.125)


def test_past_column_probability():
    sel = LDirichletSelector(meta_of(3, [2, 2], 3))
    np.testing.assert_allclose(sel.u, [0.5, 0.5])
    assert sel.split_prob(0) == pytest.approx(0.125)
    assert sel.split_prob(1) == pytest.approx(0.125)


def test_unknown_column():
    sel = LDirichletSelector(meta_of(2, [1], 1))
    with pytest.raises(IndexError, match="no group label"):
        sel.split_prob(2)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10**6), st.integers(1, 6), st.lists(st.integers(0, 4), max_size=5),
       st.integers(0, 5))
def test_ldirichlet_normalized_random_state(seed, t, sizes, P_current):
    sizes = (sizes + [0] * t)[: t - 1]
    if P_current + sum(sizes) == 0:
        P_current = 1
    sel = LDirichletSelector(meta_of(t, sizes, P_current))
    rng = np.random.default_rng(seed)
    sel.sample_prior(rng)
    assert math.fsum(sel.probs) == pytest.approx(1.0, abs=1e-12)
    # the decomposition w sum v_t + (1-w) sum_k u_k sum v_k
    total = sel.w * sel.v_t.sum() + (1 - sel.w) * sum(
        uk * vk.sum() for uk, vk in zip(sel.u, sel.v_k))
    assert total == pytest.approx(1.0, abs=1e-12)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10**6), st.integers(1, 60))
def test_dart_normalized_random_state(seed, P):
    sel = DirichletSelector(P)
    sel.sample_prior(np.random.default_rng(seed))
    assert math.fsum(sel.probs) == pytest.approx(1.0, abs=1e-12)


def test_log_dirichlet_tiny_concentration():
    rng = np.random.default_rng(0)
    lq = log_dirichlet(rng, np.full(50, 1e-4))
    assert np.all(np.isfinite(lq))
    assert math.fsum(np.exp(lq)) == pytest.approx(1.0, abs=1e-12)


# -------------------------------------------------------------- tallies

def test_tally_empty():
    meta = meta_of(3, [2, 2], 2)
    c = tally_splits([Tree.stump() for _ in range(4)], meta)
    assert c.per_column.tolist() == [0] * 6 and c.n_current == c.n_past == 0
    assert c.per_group.tolist() == [0, 0]


def test_tally_single_past_split():
    meta = meta_of(3, [1, 1], 1)  # columns: past(1), past(2), current
    c = tally_splits([Tree.stump().grow(0, 1, 0.5)], meta)
    assert c.n_past == 1 and c.n_current == 0
    assert c.per_group.tolist() == [0, 1]


def test_tally_random_ensembles():
    rng = np.random.default_rng(1)
    meta = meta_of(4, [2, 0, 3], 3)
    grid = [np.linspace(0.1, 0.9, 5)] * meta.P
    prior = TreePrior(0.95, 1.0, max_depth=5)
    for _ in range(100):
        trees = [prior.sample(UniformSelector(meta.P), grid, rng, 1.0) for _ in range(5)]
        c = tally_splits(trees, meta)
        recount = np.zeros(meta.P, dtype=int)
        for tree in trees:
            for v in tree.internal():
                recount[tree.split_var[v]] += 1
        np.testing.assert_array_equal(c.per_column, recount)
        assert c.n_current + c.n_past == recount.sum()
        assert c.per_group.sum() == c.n_past
        assert c.n_current == recount[meta.time == 4].sum()


# ---------------------------------------------------------- DART updates

def test_update_q_zero_counts_is_prior():
    sel = DirichletSelector(3)
    sel.alpha = 1.5
    rng = np.random.default_rng(0)
    draws = np.array([sel.update_q(np.zeros(3), rng) for _ in range(50000)])
    a = np.full(3, 0.5)
    mean = a / a.sum()
    var = mean * (1 - mean) / (a.sum() + 1)
    assert np.all(np.abs(draws.mean(axis=0) - mean) < 3 * np.sqrt(var / len(draws)))


def test_update_q_posterior_mean():
    sel = DirichletSelector(2)
    sel.alpha = 2.0
    rng = np.random.default_rng(1)
    draws = np.array([sel.update_q(np.array([3, 1]), rng) for _ in range(50000)])
    mean = np.array([4 / 6, 2 / 6])
    sd = np.sqrt(mean * (1 - mean) / 7)
    assert np.all(np.abs(draws.mean(axis=0) - mean) < 3 * sd / math.sqrt(len(draws)))


def test_grid_weights_normalized():
    g = ConcentrationGrid(0.5, 1.0, 10)
    assert g.weights().sum() == pytest.approx(1.0, abs=1e-12)
    assert math.exp(np.logaddexp.reduce(g.log_prior)) == pytest.approx(1.0, abs=1e-12)
    lq = np.log(np.full(10, 0.1))
    assert g.weights(symmetric_dirichlet_loglik(g.alpha, lq)).sum() == pytest.approx(1.0, abs=1e-12)


def test_grid_rejects_non_finite():
    g = ConcentrationGrid(0.5, 1.0, 10, size=10)
    with pytest.raises(FloatingPointError):
        g.weights(np.full(10, np.nan))


def test_uniform_q_pushes_lambda_up():
    sel = DirichletSelector(10)
    sel.set_state({"alpha": 1.0, "log_q": np.log(np.full(10, 0.1)).tolist()})
    w = sel.grid.weights(sel.alpha_loglik())
    assert w @ sel.grid.lam > 0.5 / 1.5


def test_sparse_q_pulls_lambda_down():
    sel = DirichletSelector(10)
    q = np.array([0.9] + [0.1 / 9] * 9)
    sel.set_state({"alpha": 1.0, "log_q": np.log(q).tolist()})
    w = sel.grid.weights(sel.alpha_loglik())
    assert w @ sel.grid.lam < sel.grid.weights() @ sel.grid.lam


def test_symmetric_dirichlet_loglik_matches_scipy():
    q = np.array([0.2, 0.5, 0.3])
    for a in (0.3, 1.0, 7.0):
        expected = stats.dirichlet(np.full(3, a / 3)).logpdf(q)
        ref = stats.dirichlet(np.full(3, 1.0 / 3)).logpdf(q)
        got = symmetric_dirichlet_loglik([a, 1.0], np.log(q))
        assert got[0] - got[1] == pytest.approx(expected - ref, rel=1e-10)


@pytest.mark.parametrize("seed", range(3))
def test_grid_refinement(seed):
    rng = np.random.default_rng(seed)
    q = rng.dirichlet(np.full(8, 0.4))
    means = []
    for size in (1000, 4000):
        sel = DirichletSelector(8, grid_size=size)
        sel.set_state({"alpha": 1.0, "log_q": np.log(q).tolist()})
        w = sel.grid.weights(sel.alpha_loglik())
        means.append((w @ sel.grid.lam, w @ sel.grid.alpha))
    (l1, a1), (l4, a4) = means
    assert abs(l1 - l4) / l4 < 0.01
    assert abs(a1 - a4) / a4 < 0.01


def test_grid_sample_frequencies():
    g = ConcentrationGrid(2.0, 3.0, 1.0, size=5)
    rng = np.random.default_rng(0)
    draws = np.array([g.sample(rng) for _ in range(40000)])
    freq = np.array([(draws == a).mean() for a in g.alpha])
    p = g.weights()
    assert np.all(np.abs(freq - p) < 3 * np.sqrt(p * (1 - p) / len(draws)))


# ---------------------------------------------------- L-Dirichlet updates

def test_update_w_zero_counts_is_prior():
    sel = LDirichletSelector(meta_of(2, [2], 2), w_a=2.0, w_b=5.0)
    rng = np.random.default_rng(0)
    draws = np.array([sel.update_w(0, 0, rng) for _ in range(20000)])
    assert stats.kstest(draws, stats.beta(2, 5).cdf).statistic < 0.015


def test_update_w_posterior():
    sel = LDirichletSelector(meta_of(2, [2], 2))
    rng = np.random.default_rng(1)
    draws = np.array([sel.update_w(7, 3, rng) for _ in range(100000)])
    assert draws.mean() == pytest.approx(8 / 12, abs=3 * stats.beta(8, 4).std() / math.sqrt(1e5))
    assert stats.kstest(draws, stats.beta(8, 4).cdf).statistic < 0.01


def test_w_fixed_without_past():
    sel = LDirichletSelector(GroupingMeta.all_current(4))
    assert sel.update_w(3, 0, np.random.default_rng(0)) == 1.0
    np.testing.assert_allclose(sel.probs, 0.25)


def test_update_u_zero_counts_is_prior():
    sel = LDirichletSelector(meta_of(4, [1, 1, 1], 1))
    sel.alpha = np.array([1.0, 2.0, 6.0])
    rng = np.random.default_rng(3)
    draws = np.array([sel.update_u([0, 0, 0], rng) for _ in range(50000)])
    a = sel.alpha / 3
    mean = a / a.sum()
    sd = np.sqrt(mean * (1 - mean) / (a.sum() + 1))
    assert np.all(np.abs(draws.mean(axis=0) - mean) < 3 * sd / math.sqrt(len(draws)))


def test_update_u_posterior_mean():
    # concentrations alpha_k / (t - 1) + m^k = (0.5 + 4, 0.5 + 0)
    sel = LDirichletSelector(meta_of(3, [1, 1], 1))
    sel.alpha = np.array([1.0, 1.0])
    rng = np.random.default_rng(4)
    draws = np.array([sel.update_u([4, 0], rng)[0] for _ in range(50000)])
    dist = stats.beta(4.5, 0.5)
    assert abs(draws.mean() - 0.9) < 3 * dist.std() / math.sqrt(len(draws))
    assert abs(draws.var() - dist.var()) < 0.05 * dist.var()


def test_update_u_requires_past():
    sel = LDirichletSelector(GroupingMeta.all_current(2))
    with pytest.raises(ValueError):
        sel.update_u([], np.random.default_rng(0))


@pytest.mark.parametrize("which", ["current", 1])
def test_update_v(which):
    sel = LDirichletSelector(meta_of(2, [3], 3))
    sel.eta, sel.phi = 1.5, np.array([1.5])
    rng = np.random.default_rng(5)
    zero = np.array([sel.update_v(which, np.zeros(3), rng) for _ in range(40000)])
    np.testing.assert_allclose(zero.mean(axis=0), 1 / 3, atol=3 * math.sqrt(2 / 9 / 2.5 / 4e4))
    counts = np.array([5, 0, 1])
    conc = 0.5 + counts
    mean = conc / conc.sum()
    sd = np.sqrt(mean * (1 - mean) / (conc.sum() + 1))
    draws = np.array([sel.update_v(which, counts, rng) for _ in range(40000)])
    assert np.all(np.abs(draws.mean(axis=0) - mean) < 3 * sd / math.sqrt(len(draws)))
    assert math.fsum(sel.probs) == pytest.approx(1.0, abs=1e-12)


def test_alpha_single_group_recovers_hyperprior():
    sel = LDirichletSelector(meta_of(2, [2], 2))
    rng = np.random.default_rng(6)
    lam = []
    for _ in range(40000):
        sel.update_concentrations(rng)
        lam.append(sel.alpha[0] / (sel.alpha[0] + 2))
    assert stats.kstest(lam, stats.beta(c_schedule(2, 1), 1).cdf).statistic < 0.02


def test_alpha_conditional_matches_dense_grid():
    t = 3
    sel = LDirichletSelector(meta_of(t, [2, 2], 2))
    sel.log_u = np.log([0.15, 0.85])
    sel.alpha = np.array([1.0, 4.0])
    sel._refresh()
    grid = sel.alpha_grids[0]
    got = grid.weights(sel.alpha_loglik(0))

    # heterogeneous Dirichlet density of u, evaluated independently
    a1 = grid.alpha
    dens = np.array([stats.dirichlet([a / 2, 2.0]).logpdf([0.15, 0.85]) for a in a1])
    # grid points are equal-mass prior quantiles; Beta(c, 1) has quantile p^(1/c)
    c1 = c_schedule(t, 1)
    lam = ((np.arange(grid.size) + 0.5) / grid.size) ** (1 / c1)
    np.testing.assert_allclose(grid.lam, lam, rtol=1e-12)
    w = np.exp(dens - dens.max())
    np.testing.assert_allclose(got, w / w.sum(), rtol=1e-9, atol=1e-15)


def test_c_schedule_examples():
    assert c_schedule(2, 1) == 0.5
    assert c_schedule(5, 4) == pytest.approx(0.875)
    assert c_schedule(3, 2) == pytest.approx(0.75)
    for bad in [(1, 1), (3, 0), (3, 3)]:
        with pytest.raises(ValueError):
            c_schedule(*bad)


@pytest.mark.parametrize("t", range(2, 31))
def test_c_schedule_ordering(t):
    c = [c_schedule(t, j) for j in range(1, t)]
    assert c[0] == 0.5
    assert all(0.5 < b for b in c[1:])
    assert all(a < b for a, b in zip(c, c[1:]))
    assert all(x < 1 for x in c)
    # prior mean of lambda_k = c_k / (c_k + 1) increases with k; the grid reproduces it
    sel = LDirichletSelector(meta_of(t, [1] * (t - 1), 1))
    grid_means = [g.weights() @ g.lam for g in sel.alpha_grids]
    np.testing.assert_allclose(grid_means, [x / (x + 1) for x in c], atol=1e-4)
    assert all(a < b for a, b in zip(grid_means, grid_means[1:]))


def test_draw_split_var_uniform_chi2():
    rng = np.random.default_rng(0)
    sel = UniformSelector(4)
    draws = np.array([sel.draw_split_var(rng) for _ in range(100000)])
    counts = np.bincount(draws, minlength=4)
    assert stats.chisquare(counts).pvalue > 1e-3


def test_draw_split_var_degenerate():
    sel = DirichletSelector(5)
    sel.set_state({"alpha": 1.0, "log_q": [-np.inf, -np.inf, -np.inf, 0.0, -np.inf]})
    rng = np.random.default_rng(1)
    assert {sel.draw_split_var(rng) for _ in range(1000)} == {3}


def test_draw_split_var_ldirichlet_frequencies():
    sel = LDirichletSelector(meta_of(3, [2, 1], 3))
    rng = np.random.default_rng(2)
    sel.sample_prior(rng)
    sel.log_w = (math.log(0.6), math.log(0.4))
    sel._refresh()
    p = sel.probs
    N = 100000
    freq = np.bincount([sel.draw_split_var(rng) for _ in range(N)], minlength=6) / N
    assert np.all(np.abs(freq - p) <= 3 * np.sqrt(p * (1 - p) / N) + 1e-12)


def test_empty_past_group_dropped():
    meta = GroupingMeta(4, np.array([1, 1, 3, 4, 4]))  # no past(2) columns
    sel = LDirichletSelector(meta)
    assert sel.groups == [1, 3]
    assert len(sel.u) == 2 and len(sel.alpha) == 2
    assert sel.divisor == 3
    assert [g.a for g in sel.alpha_grids] == [c_schedule(4, 1), c_schedule(4, 3)]
    rng = np.random.default_rng(0)
    sel.update(counts_from_columns([2, 0, 1, 3, 0], meta), rng)
    assert math.fsum(sel.probs) == pytest.approx(1.0, abs=1e-12)
    u = sel.update_u([0, 5, 0], rng)  # the count of the empty time is ignored
    assert len(u) == 2


def test_t1_degenerates_to_dart():
    meta = GroupingMeta.all_current(4)
    sel = LDirichletSelector(meta)
    assert sel.w == 1.0 and len(sel.u) == 0
    rng = np.random.default_rng(0)
    sel.update(counts_from_columns([3, 0, 0, 1], meta), rng)
    np.testing.assert_allclose(sel.probs, sel.v_t, rtol=1e-14)
    assert sel.w == 1.0


def test_state_round_trip():
    meta = meta_of(3, [2, 1], 2)
    sel = LDirichletSelector(meta)
    sel.sample_prior(np.random.default_rng(9))
    other = LDirichletSelector(meta)
    other.set_state(sel.get_state())
    np.testing.assert_array_equal(other.log_probs, sel.log_probs)
    assert other.w == sel.w


def test_make_selector():
    meta = GroupingMeta.all_current(3)
    assert make_selector("uniform", meta).kind == "uniform"
    assert make_selector("dart", meta).grid.rho == 3
    assert make_selector("ldirichlet", meta).kind == "ldirichlet"
    with pytest.raises(ValueError):
        make_selector("lasso", meta)
