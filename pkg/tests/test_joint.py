import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.stats import norm, ortho_group

from conftest import random_spd, random_view
from oracle import position_update_loop, sigma_update_loop
from lsjm.joint import (
    FusedPosterior,
    LsjmFit,
    align,
    expected_log_prior,
    fit_lsjm,
    fuse,
    initial_fit,
    lsjm_estep,
    lsjm_mstep,
    lsjm_objective,
    rotate_state,
)
from lsjm.lsm import FitConfig, PriorConfig, ViewVariationalState, fit_lsm, substream, surrogate_objective
from lsjm.network import AdjacencyView, NodeSet, build_multiplex
from lsjm.synthetic import girls_surrogate


def grid_fusion_1d(means, variances, sigma2):
    """Moments of prod_k N(m_k, v_k) / N(0, sigma2)^(K-1) by brute-force quadrature."""
    z = np.linspace(-12, 12, 400_001)
    logd = sum(norm.logpdf(z, m, np.sqrt(v)) for m, v in zip(means, variances))
    logd -= (len(means) - 1) * norm.logpdf(z, 0, np.sqrt(sigma2))
    w = np.exp(logd - logd.max())
    w /= w.sum()
    mu = float((w * z).sum())
    return mu, float((w * (z - mu) ** 2).sum())


def fusion_grid_errors(cases=20, seed=0):
    g = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(cases):
        k = int(g.integers(2, 4))
        sigma2 = float(g.uniform(0.8, 2.0))
        variances = g.uniform(0.1, 0.6, size=k)
        means = g.normal(size=k)
        states = [ViewVariationalState(0.0, 1.0, np.array([[m]]), np.array([[v]])) for m, v in zip(means, variances)]
        f = fuse(states, sigma2)
        mu, var = grid_fusion_1d(means, variances, sigma2)
        worst = max(worst, abs(f.positions_bar[0, 0] - mu), abs(f.cov_bar[0, 0] - var))
    return worst


def test_fusion_matches_grid_integration():
    assert fusion_grid_errors() < 1e-4


def test_fusion_half_identity_example():
    s = ViewVariationalState(0.0, 1.0, np.zeros((3, 2)), 0.5 * np.eye(2))
    f = fuse([s, s.copy()], 1.0)
    np.testing.assert_allclose(f.cov_bar, np.eye(2) / 3, atol=1e-14)


def test_fusion_equal_means_identity():
    v = np.array([[0.4, -1.1]])
    cov = np.array([[0.3, 0.05], [0.05, 0.2]])
    s = ViewVariationalState(0.0, 1.0, v, cov)
    f = fuse([s, s.copy()], 1.3)
    want = (np.eye(2) + f.cov_bar / 1.3) @ v[0]
    np.testing.assert_allclose(f.positions_bar[0], want, atol=1e-12)


def test_fusion_k1_is_exact_identity(rng):
    s = ViewVariationalState(0.1, 0.2, rng.normal(size=(5, 2)), random_spd(rng, 2))
    f = fuse([s], 0.7)
    assert np.abs(f.positions_bar - s.positions).max() <= 1e-12
    assert np.abs(f.cov_bar - s.cov).max() <= 1e-12


def test_fusion_repairs_wide_views():
    wide = ViewVariationalState(0.0, 1.0, np.ones((2, 2)), 3.0 * np.eye(2))
    notes = []
    f = fuse([wide, wide.copy()], 1.0, notes)
    assert np.linalg.eigvalsh(f.cov_bar).min() > 0
    assert notes and notes[0].startswith("fusion")


def test_fusion_invariant_to_view_order(rng):
    states = [ViewVariationalState(0.0, 1.0, rng.normal(size=(6, 2)), random_spd(rng, 2, 0.2)) for _ in range(3)]
    a = fuse(states, 1.0)
    b = fuse(states[::-1], 1.0)
    np.testing.assert_allclose(a.positions_bar, b.positions_bar, atol=1e-10)


# ---------------------------------------------------------------- alignment


def test_align_recovers_planted_rotation():
    g = np.random.default_rng(1)
    ref = g.normal(size=(20, 2))
    for theta in (np.pi / 2, 0.3, -2.0):
        rot = np.array([[np.cos(theta), -np.sin(theta)], [np.sin(theta), np.cos(theta)]])
        r = align(ref, ref @ rot)
        assert np.linalg.norm(ref - ref @ rot @ r) < 1e-10
        np.testing.assert_allclose(r.T @ r, np.eye(2), atol=1e-10)


def test_align_identity_for_equal_clouds(rng):
    ref = rng.normal(size=(10, 2))
    np.testing.assert_allclose(align(ref, ref), np.eye(2), atol=1e-12)


def test_align_rank_deficient_returns_identity():
    target = np.zeros((5, 2))
    target[:, 0] = np.arange(5)
    np.testing.assert_array_equal(align(np.ones((5, 2)), target), np.eye(2))
    with pytest.raises(ValueError):
        align(np.ones((5, 2)), np.ones((4, 2)))


def rotation_grid_margin(clouds=10, seed=0):
    """Smallest (grid misfit - Procrustes misfit) over random clouds; >= 0 means Procrustes wins."""
    g = np.random.default_rng(seed)
    angles = np.deg2rad(np.arange(360))
    margin = np.inf
    for _ in range(clouds):
        ref, tgt = g.normal(size=(20, 2)), g.normal(size=(20, 2))
        best = np.linalg.norm(ref - tgt @ align(ref, tgt))
        grid = np.inf
        for a in angles:
            c, s = np.cos(a), np.sin(a)
            for refl in (np.eye(2), np.diag([1.0, -1.0])):
                grid = min(grid, np.linalg.norm(ref - tgt @ refl @ np.array([[c, -s], [s, c]])))
        margin = min(margin, grid - best)
    return margin


def test_align_beats_rotation_grid():
    assert rotation_grid_margin() >= -1e-12


@given(st.integers(0, 2**31))
def test_align_never_increases_misfit_and_is_orthogonal(seed):
    g = np.random.default_rng(seed)
    ref, tgt = g.normal(size=(8, 3)), g.normal(size=(8, 3))
    r = align(ref, tgt)
    np.testing.assert_allclose(r.T @ r, np.eye(3), atol=1e-10)
    assert np.linalg.norm(ref - tgt @ r) <= np.linalg.norm(ref - tgt) + 1e-12


def test_rotation_preserves_view_surrogate(rng):
    view = random_view(rng, 9, 0.3)
    s = ViewVariationalState(-0.5, 0.3, rng.normal(size=(9, 2)), random_spd(rng, 2))
    r = ortho_group.rvs(2, random_state=3)
    assert abs(surrogate_objective(view, s) - surrogate_objective(view, rotate_state(s, r))) < 1e-8


# ---------------------------------------------------------------- E and M steps


def estep_oracle(multiplex, fit, align_views):
    """Loop transcription of one joint E-step, sharing nothing with the package but the inputs."""
    sigma2 = fit.priors[0].sigma2
    zbar, cbar = fit.fused.positions_bar, fit.fused.cov_bar
    k = multiplex.k
    covs = [
        sigma_update_loop(v.entries, v.observed, zbar, cbar, s.xi_tilde, s.psi2_tilde, sigma2)
        for v, s in zip(multiplex.views, fit.view_states)
    ]
    prec = sum(np.linalg.inv(c) for c in covs) - (k - 1) / sigma2 * np.eye(2)
    cnew = np.linalg.inv(prec)
    zs = [
        position_update_loop(v.entries, v.observed, zbar, cnew, s.xi_tilde, s.psi2_tilde, sigma2,
                             floor=0.5 * np.linalg.inv(c))
        for v, s, c in zip(multiplex.views, fit.view_states, covs)
    ]
    if align_views:
        for j in range(1, k):
            u, _, vt = np.linalg.svd(zs[j].T @ zs[0])
            r = u @ vt
            zs[j] = zs[j] @ r
            covs[j] = r.T @ covs[j] @ r
    prec = sum(np.linalg.inv(c) for c in covs) - (k - 1) / sigma2 * np.eye(2)
    cbar = np.linalg.inv(prec)
    zbar = sum(z @ np.linalg.inv(c) for z, c in zip(zs, covs)) @ cbar
    return zs, covs, zbar, cbar


@pytest.mark.parametrize("align_views", [False, True])
def test_lsjm_estep_matches_loop_oracle(align_views):
    m = girls_surrogate()
    fit = initial_fit(m.n, [PriorConfig()] * 3, substream(11, 0))
    for it in range(3):  # move away from the symmetric start
        fit = lsjm_mstep(m, lsjm_estep(m, fit, align_views=True))
    new = lsjm_estep(m, fit, align_views=align_views)
    zs, covs, zbar, cbar = estep_oracle(m, fit, align_views)
    for s, z, c in zip(new.view_states, zs, covs):
        assert np.abs(s.positions - z).max() < 1e-10
        assert np.abs(s.cov - c).max() < 1e-10
    assert np.abs(new.fused.positions_bar - zbar).max() < 1e-10
    assert np.abs(new.fused.cov_bar - cbar).max() < 1e-10


def test_identical_views_keep_identical_positions():
    v = girls_surrogate().views[0]
    m = build_multiplex(NodeSet([f"n{i}" for i in range(v.n)]), [v, v])
    fit = initial_fit(m.n, [PriorConfig()] * 2, substream(0, 0))
    for it in range(8):
        fit = lsjm_mstep(m, lsjm_estep(m, fit, align_views=it < 4))
        # alignment rotates view 2 by an R equal to I up to roundoff
        np.testing.assert_allclose(fit.view_states[0].positions, fit.view_states[1].positions, atol=1e-10)
        assert fit.view_states[0].xi_tilde == pytest.approx(fit.view_states[1].xi_tilde, abs=1e-10)


def test_mstep_empty_views_return_prior_means():
    n = 6
    empty = AdjacencyView(np.zeros((n, n), int))
    m = build_multiplex(NodeSet([f"n{i}" for i in range(n)]), [empty, empty])
    z = np.arange(2 * n, dtype=float).reshape(n, 2) * 25
    states = [ViewVariationalState(1.0, 1.0, z, 0.1 * np.eye(2)) for _ in range(2)]
    fit = LsjmFit(FusedPosterior(z, 0.1 * np.eye(2)), states, [PriorConfig(xi=-0.5), PriorConfig(xi=0.25)])
    new = lsjm_mstep(m, fit)
    np.testing.assert_allclose(new.xi_tilde, [-0.5, 0.25], atol=1e-12)


def test_mstep_denser_view_gets_larger_xi():
    g = np.random.default_rng(2)
    n = 12
    z = g.normal(size=(n, 2)) * 0.6
    sparse, dense = random_view(g, n, 0.1), random_view(g, n, 0.6)
    m = build_multiplex(NodeSet([f"n{i}" for i in range(n)]), [sparse, dense])
    states = [ViewVariationalState(0.0, 2.0, z, 0.2 * np.eye(2)) for _ in range(2)]
    fit = lsjm_mstep(m, LsjmFit(FusedPosterior(z, 0.2 * np.eye(2)), states, [PriorConfig()] * 2))
    assert fit.xi_tilde[1] > fit.xi_tilde[0]


def test_expected_log_prior_closed_form():
    f = FusedPosterior(np.array([[1.0, 0.0], [0.0, 2.0]]), 0.5 * np.eye(2))
    want = -2 * np.log(2 * np.pi) - (5 + 2) / 2
    assert expected_log_prior(f, 1.0) == pytest.approx(want, abs=1e-12)


def test_lsjm_objective_k1_equals_surrogate(rng):
    view = random_view(rng, 7, 0.3)
    s = ViewVariationalState(-0.2, 0.5, rng.normal(size=(7, 2)), random_spd(rng, 2))
    m = build_multiplex(NodeSet([f"n{i}" for i in range(7)]), [view])
    fit = LsjmFit(fuse([s], 1.0), [s], [PriorConfig()])
    assert lsjm_objective(m, fit) == surrogate_objective(view, s)


# ---------------------------------------------------------------- driver


def test_k1_fit_reduces_to_single_lsm():
    v = girls_surrogate().views[0]
    m = build_multiplex(NodeSet([f"n{i}" for i in range(v.n)]), [v])
    cfg = FitConfig(seed=5, restarts=3)
    state, report = fit_lsm(v, PriorConfig(), cfg)
    fit = fit_lsjm(m, [PriorConfig()], cfg)
    assert abs(fit.xi_tilde[0] - state.xi_tilde) < 1e-6
    np.testing.assert_allclose(fit.fused.positions_bar, state.positions, atol=1e-6)
    assert fit.report.objective_trace == pytest.approx(report.objective_trace, abs=1e-6)


def test_prior_validation():
    m = girls_surrogate()
    with pytest.raises(ValueError):
        fit_lsjm(m, [PriorConfig(), PriorConfig()], FitConfig(restarts=1, max_iters=1, min_iters=1))
    with pytest.raises(ValueError):
        fit_lsjm(m, [PriorConfig(), PriorConfig(), PriorConfig(sigma2=2)], FitConfig(restarts=1))


@pytest.fixture(scope="module")
def girls_joint():
    return fit_lsjm(girls_surrogate(), [PriorConfig()], FitConfig(seed=0, restarts=3))


def test_joint_fit_converges_and_improves(girls_joint):
    r = girls_joint.report
    assert r.converged
    assert all(r.objective_trace[-1] > x["initial_objective"] for x in r.restarts)
    assert np.linalg.eigvalsh(girls_joint.fused.cov_bar).min() > 0


def test_joint_fit_regression(girls_joint):
    want = [-0.22491069227060193, -0.18777129613474372, -0.1152399606917675]
    np.testing.assert_allclose(girls_joint.xi_tilde, want, rtol=1e-9)
