"""Latent space joint model: one latent position per node shared by K views.

Each view keeps its own variational posterior ``N(z_ik, S_k)``; the joint
posterior of ``z_i`` is the Gaussian proportional to
``prod_k q_k(z_i) / p(z_i)^(K-1)``, with covariance ``cov_bar`` and mean
``positions_bar[i]``.  Per-view updates are Taylor-expanded around the
fused values, then the views are fused again.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace
from functools import partial
from typing import Sequence

import numpy as np

from .lsm import (
    PD_FLOOR,
    FitConfig,
    FitReport,
    PriorConfig,
    ViewVariationalState,
    _Run,
    has_converged,
    initial_state,
    make_report,
    positions_update,
    psi2_update,
    sigma_update,
    substream,
    surrogate_at,
    xi_update,
)
from .network import MultiplexNetwork
from .parallel import pmap

log = logging.getLogger(__name__)


@dataclass
class FusedPosterior:
    positions_bar: np.ndarray
    cov_bar: np.ndarray


@dataclass
class LsjmFit:
    fused: FusedPosterior
    view_states: list[ViewVariationalState]
    priors: list[PriorConfig]
    report: FitReport | None = None

    @property
    def xi_tilde(self) -> np.ndarray:
        return np.array([s.xi_tilde for s in self.view_states])

    @property
    def psi2_tilde(self) -> np.ndarray:
        return np.array([s.psi2_tilde for s in self.view_states])


def _check_priors(priors: Sequence[PriorConfig], k: int) -> list[PriorConfig]:
    priors = list(priors)
    if len(priors) == 1 and k > 1:
        priors = priors * k
    if len(priors) != k:
        raise ValueError(f"got {len(priors)} priors for {k} views")
    if len({(p.sigma2, p.dim) for p in priors}) != 1:
        raise ValueError("all views must share sigma2 and the latent dimension")
    return priors


def fuse_covariance(covs: Sequence[np.ndarray], sigma2: float, notes=None) -> np.ndarray:
    """``[sum_k S_k^-1 - (K-1)/sigma2 I]^-1``.

    Eigenvalues of the fused precision at or below ``PD_FLOOR`` are raised
    to the prior precision ``1/sigma2`` before inverting.
    """
    d = covs[0].shape[0]
    prec = sum(np.linalg.inv(c) for c in covs) - (len(covs) - 1) / sigma2 * np.eye(d)
    prec = 0.5 * (prec + prec.T)
    w, v = np.linalg.eigh(prec)
    if w.min() <= PD_FLOOR:
        msg = f"fusion: fused precision not positive definite (min eigenvalue {w.min():.3g}), clamped"
        log.debug(msg)
        if notes is not None:
            notes.append(msg)
        w = np.where(w <= PD_FLOOR, 1.0 / sigma2, w)
    cov = (v / w) @ v.T
    return 0.5 * (cov + cov.T)


def fuse(view_states: Sequence[ViewVariationalState], sigma2: float, notes=None) -> FusedPosterior:
    """Gaussian fusion of per-view posteriors, dividing out K - 1 copies of the prior."""
    if len(view_states) == 1:
        s = view_states[0]
        return FusedPosterior(np.array(s.positions, dtype=float), np.array(s.cov, dtype=float))
    cov_bar = fuse_covariance([s.cov for s in view_states], sigma2, notes)
    weighted = sum(np.asarray(s.positions) @ np.linalg.inv(s.cov) for s in view_states)
    # rows are positions, and cov_bar is symmetric
    return FusedPosterior(weighted @ cov_bar, cov_bar)


def align(reference, target) -> np.ndarray:
    """Orthogonal ``R`` minimising ``||reference - target @ R||_F`` (reflections allowed).

    Returns the identity when ``target`` is rank deficient.
    """
    reference = np.asarray(reference, dtype=float)
    target = np.asarray(target, dtype=float)
    if reference.shape != target.shape:
        raise ValueError(f"shape mismatch {reference.shape} vs {target.shape}")
    d = target.shape[1]
    sv = np.linalg.svd(target, compute_uv=False)
    if sv.size < d or sv[-1] <= 1e-12 * max(sv[0], 1e-300):
        return np.eye(d)
    u, _, vt = np.linalg.svd(target.T @ reference)
    return u @ vt


def rotate_state(state: ViewVariationalState, r: np.ndarray) -> ViewVariationalState:
    """Apply ``z -> z R`` to every row and ``S -> R^T S R`` to the covariance."""
    cov = r.T @ state.cov @ r
    return replace(state, positions=np.asarray(state.positions) @ r, cov=0.5 * (cov + cov.T))


def expected_log_prior(fused: FusedPosterior, sigma2: float) -> float:
    """``E[log p(Z)]`` under the fused posterior."""
    n, d = fused.positions_bar.shape
    z = fused.positions_bar
    return float(
        -0.5 * n * d * math.log(2 * math.pi * sigma2)
        - ((z * z).sum() + n * np.trace(fused.cov_bar)) / (2 * sigma2)
    )


def lsjm_objective(multiplex: MultiplexNetwork, fit: LsjmFit) -> float:
    """Sum of per-view surrogates at the fused parameters, minus K - 1 expected log priors."""
    z, cov = fit.fused.positions_bar, fit.fused.cov_bar
    total = sum(
        surrogate_at(v, z, cov, s.xi_tilde, s.psi2_tilde)
        for v, s in zip(multiplex.views, fit.view_states)
    )
    k = len(fit.view_states)
    if k > 1:
        total -= (k - 1) * expected_log_prior(fit.fused, fit.priors[0].sigma2)
    return float(total)


def lsjm_estep(multiplex: MultiplexNetwork, fit: LsjmFit, align_views: bool = False, notes=None) -> LsjmFit:
    sigma2 = fit.priors[0].sigma2
    zbar, cbar = fit.fused.positions_bar, fit.fused.cov_bar
    covs = [
        sigma_update(v, zbar, cbar, s.xi_tilde, s.psi2_tilde, sigma2, notes)
        for v, s in zip(multiplex.views, fit.view_states)
    ]
    # the fused covariance depends on the view covariances only, so the
    # position updates can already expand around its new value
    cbar_new = covs[0] if len(covs) == 1 else fuse_covariance(covs, sigma2, notes)
    states = []
    for v, s, c in zip(multiplex.views, fit.view_states, covs):
        # fusion weighs every node of view k by the shared precision inv(S_k);
        # nodes whose own curvature is lower would overshoot, so their update
        # matrix is floored at that precision (half of it, in update units)
        floor = 0.5 * np.linalg.inv(c) if len(covs) > 1 else None
        z = positions_update(v, zbar, cbar_new, s.xi_tilde, s.psi2_tilde, sigma2, notes, precision_floor=floor)
        states.append(replace(s, positions=z, cov=c))
    if align_views and len(states) > 1:
        ref = states[0].positions
        states = [states[0]] + [rotate_state(s, align(ref, s.positions)) for s in states[1:]]
    return replace(fit, view_states=states, fused=fuse(states, sigma2, notes))


def lsjm_mstep(multiplex: MultiplexNetwork, fit: LsjmFit) -> LsjmFit:
    zbar, cbar = fit.fused.positions_bar, fit.fused.cov_bar
    states = []
    for v, s, prior in zip(multiplex.views, fit.view_states, fit.priors):
        xi = xi_update(v, zbar, cbar, s.xi_tilde, s.psi2_tilde, prior)
        psi2 = psi2_update(v, zbar, cbar, xi, s.psi2_tilde, prior)
        assert psi2 > 0
        states.append(replace(s, xi_tilde=xi, psi2_tilde=psi2))
    return replace(fit, view_states=states)


def initial_fit(n: int, priors: list[PriorConfig], rng: np.random.Generator) -> LsjmFit:
    base = initial_state(n, priors[0], rng)
    states = [
        ViewVariationalState(float(p.xi), float(p.psi2), base.positions.copy(), base.cov.copy())
        for p in priors
    ]
    return LsjmFit(FusedPosterior(base.positions.copy(), base.cov.copy()), states, priors)


def _run_lsjm(multiplex: MultiplexNetwork, priors, config: FitConfig, restart: int) -> _Run:
    fit = initial_fit(multiplex.n, priors, substream(config.seed, restart))
    notes: list[str] = []
    initial = lsjm_objective(multiplex, fit)
    trace: list[float] = []
    converged = False
    for it in range(config.max_iters):
        fit = lsjm_estep(multiplex, fit, align_views=it < config.align_iters, notes=notes)
        fit = lsjm_mstep(multiplex, fit)
        trace.append(lsjm_objective(multiplex, fit))
        if has_converged(trace, initial, config):
            converged = True
            break
    return _Run(fit, trace, initial, converged, notes)


def fit_lsjm(multiplex: MultiplexNetwork, priors: Sequence[PriorConfig] = (PriorConfig(),),
             config: FitConfig = FitConfig(), workers: int = 1) -> LsjmFit:
    """Joint fit of all views; the best of ``config.restarts`` starts is returned.

    A single prior is broadcast to every view.
    """
    priors = _check_priors(priors, multiplex.k)
    runs = pmap(partial(_run_lsjm, multiplex, priors, config), range(config.restarts), workers)
    best, report = make_report(runs)
    return replace(runs[best].state, report=report)
