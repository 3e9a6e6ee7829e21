"""Variational EM for the single-view latent space model.

The model has link probability ``expit(alpha - |z_i - z_j|^2)`` with priors
``alpha ~ N(xi, psi2)`` and ``z_i ~ N(0, sigma2 I)``.  The variational
posterior is ``q(alpha) = N(xi_tilde, psi2_tilde)`` and
``q(z_i) = N(positions[i], cov)`` with one covariance shared by all nodes.

Every E/M update is a closed-form solve obtained from first- or second-order
Taylor expansions of the pairwise log-partition term
``f_ij = log(1 + E_q[exp(alpha - |z_i - z_j|^2)])`` around the previous
iterate.  All dyad sums skip unobserved entries of the view's mask.
"""

from __future__ import annotations

import logging
import math
from collections import Counter
from dataclasses import dataclass, field, replace
from functools import partial
from typing import NamedTuple

import numpy as np
from scipy.special import expit

from .errors import SingularMatrix
from .network import AdjacencyView
from .parallel import pmap

log = logging.getLogger(__name__)

# eigenvalue floor below which an update matrix counts as not positive definite
PD_FLOOR = 1e-8


@dataclass(frozen=True)
class PriorConfig:
    xi: float = 0.0
    psi2: float = 2.0
    sigma2: float = 1.0
    dim: int = 2

    def __post_init__(self):
        if not self.psi2 > 0:
            raise ValueError(f"psi2 must be positive, got {self.psi2}")
        if not self.sigma2 > 0:
            raise ValueError(f"sigma2 must be positive, got {self.sigma2}")
        if int(self.dim) != self.dim or self.dim < 1:
            raise ValueError(f"dim must be a positive integer, got {self.dim}")


@dataclass(frozen=True)
class FitConfig:
    tol: float = 1e-2
    min_iters: int = 10
    max_iters: int = 500
    restarts: int = 10
    seed: int = 0
    align_iters: int = 10

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.min_iters > self.max_iters:
            raise ValueError("min_iters must not exceed max_iters")
        if self.max_iters < 0:
            raise ValueError("max_iters must be non-negative")
        if self.restarts < 1:
            raise ValueError("restarts must be at least 1")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")


@dataclass
class ViewVariationalState:
    xi_tilde: float
    psi2_tilde: float
    positions: np.ndarray
    cov: np.ndarray

    def copy(self) -> "ViewVariationalState":
        return ViewVariationalState(
            float(self.xi_tilde), float(self.psi2_tilde),
            np.array(self.positions, dtype=float), np.array(self.cov, dtype=float),
        )

    def check(self, n: int | None = None) -> None:
        """Raise ``ValueError`` if an invariant of the state is violated."""
        z, s = np.asarray(self.positions), np.asarray(self.cov)
        if not self.psi2_tilde > 0:
            raise ValueError(f"psi2_tilde must be positive, got {self.psi2_tilde}")
        if z.ndim != 2 or (n is not None and z.shape[0] != n):
            raise ValueError(f"positions have shape {z.shape}")
        if s.shape != (z.shape[1], z.shape[1]):
            raise ValueError(f"cov has shape {s.shape}, positions dim {z.shape[1]}")
        if not np.all(np.isfinite(z)):
            raise ValueError("positions contain non-finite values")
        if not np.allclose(s, s.T) or np.linalg.eigvalsh(s).min() <= 0:
            raise ValueError("cov is not symmetric positive definite")


@dataclass
class FitReport:
    """Trajectory and restart bookkeeping of a variational EM fit.

    ``objective_trace[t]`` is the surrogate after iteration ``t + 1``;
    ``initial_objective`` is its value at the initial state.
    """

    objective_trace: list[float]
    iterations: int
    converged: bool
    best_restart: int
    initial_objective: float = float("nan")
    restarts: list[dict] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)


def substream(seed: int, *keys: int) -> np.random.Generator:
    """Independent generator for the named sub-stream ``keys`` of ``seed``."""
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in keys)))


def derive_seed(seed: int, *keys: int) -> int:
    return int(np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in keys)).generate_state(1)[0])


# ---------------------------------------------------------------------------
# pairwise terms


class PairTerms(NamedTuple):
    minv: np.ndarray      # (I + 4 cov)^-1
    logdet: float         # log det(I + 4 cov)
    positions: np.ndarray
    sqdist: np.ndarray    # (N, N), |z_i - z_j|^2
    log_mgf: np.ndarray   # (N, N), log E_q[exp(alpha - |z_i - z_j|^2)]
    p: np.ndarray         # (N, N), mgf / (1 + mgf)


def _gram_distance(z, m):
    """``(z_i - z_j)^T m (z_i - z_j)`` for all pairs, with an exact zero diagonal."""
    zm = z @ m
    a = np.einsum("id,id->i", zm, z)
    out = a[:, None] + a[None, :] - 2.0 * (zm @ z.T)
    np.fill_diagonal(out, 0.0)
    return np.maximum(out, 0.0)


def _weighted_diff_sum(w, z):
    """``sum_j w_ij (z_i - z_j)`` for every ``i``."""
    return w.sum(axis=1)[:, None] * z - w @ z


def _weighted_outer_sum(w, z):
    """``sum_j w_ij (z_i - z_j)(z_i - z_j)^T`` for every ``i``, shape (N, D, D)."""
    r = w.sum(axis=1)
    wz = w @ z
    n, d = z.shape
    zz = (z[:, :, None] * z[:, None, :]).reshape(n, d * d)
    cross = z[:, :, None] * wz[:, None, :]
    return (
        r[:, None, None] * (z[:, :, None] * z[:, None, :])
        - cross - np.swapaxes(cross, 1, 2)
        + (w @ zz).reshape(n, d, d)
    )


def _shifted_factor(cov):
    cov = np.asarray(cov, dtype=float)
    m = np.eye(cov.shape[0]) + 4.0 * cov
    try:
        chol = np.linalg.cholesky(m)
    except np.linalg.LinAlgError:
        raise SingularMatrix("I + 4*cov is not positive definite") from None
    d = np.diag(chol)
    if d.min() <= 1e-150 or not np.all(np.isfinite(d)):
        raise SingularMatrix("I + 4*cov is numerically singular")
    minv = np.linalg.inv(m)
    return 0.5 * (minv + minv.T), 2.0 * float(np.log(d).sum())


def pair_terms(positions, cov, xi_tilde, psi2_tilde) -> PairTerms:
    z = np.asarray(positions, dtype=float)
    minv, logdet = _shifted_factor(cov)
    sqdist = _gram_distance(z, np.eye(z.shape[1]))
    quad = _gram_distance(z, minv)
    log_mgf = xi_tilde + 0.5 * psi2_tilde - 0.5 * logdet - quad
    return PairTerms(minv, logdet, z, sqdist, log_mgf, expit(log_mgf))


def mgf_term(zi, zj, cov, xi_tilde, psi2_tilde) -> float:
    """``E_q[exp(alpha - |z_i - z_j|^2)]`` under the Gaussian variational posterior."""
    minv, logdet = _shifted_factor(cov)
    d = np.asarray(zi, dtype=float) - np.asarray(zj, dtype=float)
    return math.exp(xi_tilde + 0.5 * psi2_tilde - 0.5 * logdet - float(d @ minv @ d))


# ---------------------------------------------------------------------------
# objectives


def surrogate_at(view: AdjacencyView, positions, cov, xi_tilde, psi2_tilde) -> float:
    t = pair_terms(positions, cov, xi_tilde, psi2_tilde)
    obs = view.observed
    y = view.entries
    tr = float(np.trace(cov))
    link = y * (xi_tilde - 2.0 * tr - t.sqdist)
    total = link - np.logaddexp(0.0, t.log_mgf)
    return float(total[obs].sum())


def surrogate_objective(view: AdjacencyView, state: ViewVariationalState) -> float:
    """Jensen-bounded expected log-likelihood used for stopping and restart choice."""
    return surrogate_at(view, state.positions, state.cov, state.xi_tilde, state.psi2_tilde)


def gaussian_kl_terms(state: ViewVariationalState, prior: PriorConfig) -> float:
    """KL[q(alpha)||p(alpha)] + sum_i KL[q(z_i)||p(z_i)] in closed form."""
    n, d = np.shape(state.positions)
    r = state.psi2_tilde / prior.psi2
    kl_alpha = 0.5 * (r - math.log(r) + (state.xi_tilde - prior.xi) ** 2 / prior.psi2 - 1.0)
    _, logdet = np.linalg.slogdet(state.cov)
    z = np.asarray(state.positions)
    kl_z = (
        0.5 * (n * d * math.log(prior.sigma2) - n * logdet)
        + n * float(np.trace(state.cov)) / (2 * prior.sigma2)
        + float((z * z).sum()) / (2 * prior.sigma2)
        - 0.5 * n * d
    )
    return kl_alpha + kl_z


def kl_objective(view: AdjacencyView, state: ViewVariationalState, prior: PriorConfig) -> float:
    return gaussian_kl_terms(state, prior) - surrogate_objective(view, state)


# ---------------------------------------------------------------------------
# Taylor derivatives of the log-partition term


def _pair_weights(view: AdjacencyView):
    obs = view.observed.astype(float)
    # each unordered pair enters the node-i objective once per observed direction
    return obs, 0.5 * (obs + obs.T)


def position_grad_hess(view: AdjacencyView, positions, cov, xi_tilde, psi2_tilde, terms=None):
    """Gradient ``G`` (N, D) and Hessian ``H`` (N, D, D) of
    ``f(z_i) = sum_{j != i} log(1 + mgf_ij)`` for every node at once."""
    t = terms if terms is not None else pair_terms(positions, cov, xi_tilde, psi2_tilde)
    _, w = _pair_weights(view)
    wp = w * t.p
    g = -2.0 * _weighted_diff_sum(wp, t.positions) @ t.minv
    s = _weighted_outer_sum(wp * (1.0 - t.p), t.positions)
    h = -2.0 * wp.sum(axis=1)[:, None, None] * t.minv + 4.0 * t.minv @ s @ t.minv
    return g, 0.5 * (h + np.swapaxes(h, 1, 2))


def sigma_jacobian(view: AdjacencyView, positions, cov, xi_tilde, psi2_tilde, terms=None):
    """Jacobian of ``sum_{i != j} log(1 + mgf_ij)`` with respect to the shared covariance."""
    t = terms if terms is not None else pair_terms(positions, cov, xi_tilde, psi2_tilde)
    obs, _ = _pair_weights(view)
    op = obs * t.p
    s = _weighted_outer_sum(op, t.positions).sum(axis=0)
    j = 4.0 * t.minv @ s @ t.minv - 2.0 * op.sum() * t.minv
    return 0.5 * (j + j.T)


def xi_derivatives(view: AdjacencyView, positions, cov, xi_tilde, psi2_tilde, terms=None):
    """First and second derivative of ``sum log(1 + exp(xi) A_ij)`` in ``xi``."""
    t = terms if terms is not None else pair_terms(positions, cov, xi_tilde, psi2_tilde)
    p = t.p[view.observed]
    return float(p.sum()), float((p * (1.0 - p)).sum())


def psi2_derivative(view: AdjacencyView, positions, cov, xi_tilde, psi2_tilde, terms=None):
    t = terms if terms is not None else pair_terms(positions, cov, xi_tilde, psi2_tilde)
    return 0.5 * float(t.p[view.observed].sum())


def f_derivatives(view: AdjacencyView, state: ViewVariationalState, target: str, node: int | None = None):
    """Dispatch to the Taylor derivative named by ``target``.

    ``"position"`` returns ``(G, H)`` for ``node`` (all nodes if ``None``),
    ``"sigma"`` the Jacobian ``J``, ``"xi"`` the pair ``(f', f'')`` and
    ``"psi2"`` the scalar ``f'``.
    """
    args = (view, state.positions, state.cov, state.xi_tilde, state.psi2_tilde)
    if target == "position":
        g, h = position_grad_hess(*args)
        return (g, h) if node is None else (g[node], h[node])
    if target == "sigma":
        return sigma_jacobian(*args)
    if target == "xi":
        return xi_derivatives(*args)
    if target == "psi2":
        return psi2_derivative(*args)
    raise ValueError(f"unknown derivative target {target!r}")


# ---------------------------------------------------------------------------
# updates


def _clamp_spectrum(a, floor, what, notes):
    """Raise every eigenvalue of the symmetric matrix ``a`` below ``PD_FLOOR`` to ``floor``."""
    w, v = np.linalg.eigh(a)
    if w.min() > PD_FLOOR:
        return a
    msg = f"{what}: update matrix not positive definite (min eigenvalue {w.min():.3g}), clamped to {floor:.3g}"
    log.debug(msg)
    if notes is not None:
        notes.append(msg)
    w = np.where(w <= PD_FLOOR, floor, w)
    return (v * w) @ v.T


def sigma_update(view: AdjacencyView, positions, cov, xi_tilde, psi2_tilde, sigma2, notes=None):
    """New shared covariance from a first-order expansion around ``cov``.

    A non-positive-definite system matrix has its offending eigenvalues
    replaced by the prior-only value ``N / (2 sigma2)``, which caps that
    direction of the covariance at the prior variance.
    """
    n, d = np.shape(positions)
    jac = sigma_jacobian(view, positions, cov, xi_tilde, psi2_tilde)
    links = float(view.entries[view.observed].sum())
    a = (n / (2.0 * sigma2) + 2.0 * links) * np.eye(d) + jac
    a = _clamp_spectrum(0.5 * (a + a.T), n / (2.0 * sigma2), "covariance", notes)
    new = 0.5 * n * np.linalg.inv(a)
    return 0.5 * (new + new.T)


def _psd_part(m):
    w, v = np.linalg.eigh(m)
    return np.einsum("...ij,...j,...kj->...ik", v, np.maximum(w, 0.0), v)


def positions_update(view: AdjacencyView, anchor, cov, xi_tilde, psi2_tilde, sigma2, notes=None,
                     precision_floor=None):
    """Jacobi sweep of the second-order position update.

    All right-hand-side quantities (neighbour positions and the Taylor
    expansion point) are taken from ``anchor``.  Each node's system
    ``A_i z_i = rhs_i`` is damped as ``(A_i + B_i) z_i = rhs_i + B_i anchor_i``
    with a positive semidefinite ``B_i``; in a single-view fit this keeps
    every fixed point.

    Without ``precision_floor``, ``B_i = lam_i I`` with
    ``lam_i = max(0, -min eig(H_i))``.  With a floor ``F`` (a D x D matrix in
    the units of ``A_i``), ``B_i`` is the positive part of ``F - A_i``, so
    ``A_i + B_i >= F``.
    """
    anchor = np.asarray(anchor, dtype=float)
    n, d = anchor.shape
    g, h = position_grad_hess(view, anchor, cov, xi_tilde, psi2_tilde)
    y = view.entries.astype(float)
    ysym = y + y.T
    deg = ysym.sum(axis=1)
    a = (1.0 / (2.0 * sigma2) + deg)[:, None, None] * np.eye(d) + h
    rhs = ysym @ anchor - g + np.einsum("ide,ie->id", h, anchor)
    if precision_floor is not None:
        b = _psd_part(np.asarray(precision_floor, dtype=float)[None] - a)
        return np.linalg.solve(a + b, (rhs + np.einsum("nij,nj->ni", b, anchor))[..., None])[..., 0]
    lam = np.maximum(-np.linalg.eigvalsh(h).min(axis=1), 0.0)
    damped = lam > 0
    if np.any(damped):
        a = a + lam[:, None, None] * np.eye(d)
        rhs = rhs + lam[:, None] * anchor
        if notes is not None and np.any(lam > PD_FLOOR):
            low = np.linalg.eigvalsh(a - lam[:, None, None] * np.eye(d)).min(axis=1)
            if np.any(low <= PD_FLOOR):
                notes.append(
                    f"positions: {int(np.count_nonzero(low <= PD_FLOOR))} update matrix(es) "
                    f"not positive definite, damped by up to {float(lam.max()):.3g}"
                )
    return np.linalg.solve(a, rhs[..., None])[..., 0]


def xi_update(view: AdjacencyView, positions, cov, xi_tilde, psi2_tilde, prior: PriorConfig) -> float:
    f1, f2 = xi_derivatives(view, positions, cov, xi_tilde, psi2_tilde)
    links = float(view.entries[view.observed].sum())
    return (prior.xi + prior.psi2 * (links - f1 + xi_tilde * f2)) / (1.0 + prior.psi2 * f2)


def psi2_update(view: AdjacencyView, positions, cov, xi_tilde, psi2_tilde, prior: PriorConfig) -> float:
    f1 = psi2_derivative(view, positions, cov, xi_tilde, psi2_tilde)
    return 1.0 / (1.0 / prior.psi2 + 2.0 * f1)


def estep_update(view: AdjacencyView, state: ViewVariationalState, prior: PriorConfig, notes=None) -> ViewVariationalState:
    """Covariance update (expanded at the old state) followed by the position
    update (expanded at the old positions with the new covariance)."""
    cov = sigma_update(view, state.positions, state.cov, state.xi_tilde, state.psi2_tilde, prior.sigma2, notes)
    z = positions_update(view, state.positions, cov, state.xi_tilde, state.psi2_tilde, prior.sigma2, notes)
    return replace(state, positions=z, cov=cov)


def mstep_update(view: AdjacencyView, state: ViewVariationalState, prior: PriorConfig) -> ViewVariationalState:
    xi = xi_update(view, state.positions, state.cov, state.xi_tilde, state.psi2_tilde, prior)
    psi2 = psi2_update(view, state.positions, state.cov, xi, state.psi2_tilde, prior)
    assert psi2 > 0
    return replace(state, xi_tilde=xi, psi2_tilde=psi2)


# ---------------------------------------------------------------------------
# driver


def initial_state(n: int, prior: PriorConfig, rng: np.random.Generator) -> ViewVariationalState:
    d = prior.dim
    return ViewVariationalState(
        xi_tilde=float(prior.xi),
        psi2_tilde=float(prior.psi2),
        positions=rng.standard_normal((n, d)),
        cov=np.eye(d),
    )


def has_converged(trace: list[float], previous: float, config: FitConfig) -> bool:
    if len(trace) < max(config.min_iters, 1):
        return False
    before = trace[-2] if len(trace) > 1 else previous
    return abs(trace[-1] - before) < config.tol


@dataclass
class _Run:
    state: object
    trace: list
    initial: float
    converged: bool
    notes: list


def pick_best(runs: list) -> int:
    """Index of the restart with the largest final objective (first on ties)."""
    finals = [r.trace[-1] if r.trace else r.initial for r in runs]
    return int(np.argmax(finals))


def summarise_notes(notes: list[str]) -> list[str]:
    """Collapse repeated repair messages to one line per kind, keeping the first."""
    first: dict[str, str] = {}
    counts: Counter = Counter()
    for msg in notes:
        kind = msg.split(":", 1)[0]
        first.setdefault(kind, msg)
        counts[kind] += 1
    return [f"{first[k]} [{counts[k]} time(s)]" for k in first]


def make_report(runs: list) -> tuple[int, FitReport]:
    best = pick_best(runs)
    run = runs[best]
    summaries = [
        {
            "restart": r,
            "initial_objective": run_r.initial,
            "final_objective": run_r.trace[-1] if run_r.trace else run_r.initial,
            "iterations": len(run_r.trace),
            "converged": run_r.converged,
        }
        for r, run_r in enumerate(runs)
    ]
    report = FitReport(
        objective_trace=list(run.trace),
        iterations=len(run.trace),
        converged=run.converged,
        best_restart=best,
        initial_objective=run.initial,
        restarts=summaries,
        warnings=summarise_notes(run.notes),
    )
    return best, report


def _run_lsm(view: AdjacencyView, prior: PriorConfig, config: FitConfig, restart: int) -> _Run:
    state = initial_state(view.n, prior, substream(config.seed, restart))
    notes: list[str] = []
    initial = surrogate_objective(view, state)
    trace: list[float] = []
    converged = False
    for _ in range(config.max_iters):
        state = estep_update(view, state, prior, notes)
        state = mstep_update(view, state, prior)
        trace.append(surrogate_objective(view, state))
        if has_converged(trace, initial, config):
            converged = True
            break
    return _Run(state, trace, initial, converged, notes)


def fit_lsm(view: AdjacencyView, prior: PriorConfig = PriorConfig(), config: FitConfig = FitConfig(),
            workers: int = 1):
    """Fit one view with ``config.restarts`` random starts.

    Returns ``(state, report)`` for the restart with the highest final
    surrogate objective.  Hitting ``max_iters`` sets
    ``report.converged = False`` rather than raising.
    """
    runs = pmap(partial(_run_lsm, view, prior, config), range(config.restarts), workers)
    best, report = make_report(runs)
    return runs[best].state, report


def link_probabilities(positions, xi_tilde) -> np.ndarray:
    """Posterior-mean link probabilities ``expit(xi - |z_i - z_j|^2)``; diagonal is NaN."""
    z = np.asarray(positions, dtype=float)
    diff = z[:, None, :] - z[None, :, :]
    p = expit(xi_tilde - np.einsum("ijd,ijd->ij", diff, diff))
    np.fill_diagonal(p, np.nan)
    return p
