"""Link prediction, ROC/AUC scoring and cross-validation of fitted models."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from enum import Enum
from functools import partial
from typing import Sequence

import numpy as np
from scipy.special import expit

from .errors import DegenerateLabels, InvalidPlan, LsjmError, NoObservedLinks
from .joint import LsjmFit, fit_lsjm
from .lsm import FitConfig, PriorConfig, derive_seed, fit_lsm, link_probabilities
from .network import AdjacencyView, MultiplexNetwork, build_multiplex
from .parallel import pmap

log = logging.getLogger(__name__)

# spawn key of the fold-assignment stream; restarts use small integers
PLAN_STREAM = 1_000_003


class Source(str, Enum):
    PER_VIEW = "per_view"
    FUSED = "fused"


class Mode(str, Enum):
    DYADS = "dyads"
    NODES = "nodes"


class Estimator(str, Enum):
    LSM = "lsm"
    LSJM = "lsjm"


def link_probability(zi, zj, xi_tilde: float) -> float:
    """``expit(xi - |zi - zj|^2)``."""
    d = np.asarray(zi, dtype=float) - np.asarray(zj, dtype=float)
    return float(expit(xi_tilde - d @ d))


@dataclass
class LinkProbabilityMatrix:
    view: int
    probs: np.ndarray
    source: Source


def probability_matrix(fit: LsjmFit, k: int, source: Source | str = Source.FUSED) -> LinkProbabilityMatrix:
    source = Source(source)
    state = fit.view_states[k]
    z = fit.fused.positions_bar if source is Source.FUSED else state.positions
    return LinkProbabilityMatrix(k, link_probabilities(z, state.xi_tilde), source)


def dyad_mask(view: AdjacencyView) -> np.ndarray:
    """Observed dyads, counting each pair once for undirected views."""
    m = view.observed.copy()
    if not view.directed:
        m &= np.triu(np.ones_like(m, dtype=bool), 1)
    return m


def threshold_tau(probs, view: AdjacencyView) -> float:
    """Median predicted probability over the view's observed links."""
    probs = np.asarray(probs)
    links = view.observed & (view.entries == 1)
    if not links.any():
        raise NoObservedLinks(f"view {view.view_label or ''} has no observed links".replace("  ", " "))
    return float(np.median(probs[links]))


def classify(probs, tau: float) -> np.ndarray:
    """Predict a link only when the probability is strictly above ``tau``."""
    return np.asarray(probs) > tau


@dataclass
class RocResult:
    points: list[tuple[float, float]]
    auc: float


def roc_auc(scores, labels) -> RocResult:
    """ROC over all distinct thresholds, AUC by the trapezoid rule.

    Tied scores move both rates at once, which gives tied pairs half
    credit, the same as the Mann-Whitney statistic.
    """
    s = np.asarray(scores, dtype=float)
    y = np.asarray(labels).astype(bool)
    if s.shape != y.shape or s.ndim != 1:
        raise ValueError("scores and labels must be 1-D and of equal length")
    pos, neg = int(y.sum()), int((~y).sum())
    if pos == 0 or neg == 0:
        raise DegenerateLabels(f"need both classes, got {pos} positive and {neg} negative")
    order = np.argsort(-s, kind="stable")
    s, y = s[order], y[order]
    last = np.r_[np.nonzero(np.diff(s))[0], s.size - 1]
    tpr = np.r_[0.0, np.cumsum(y)[last] / pos]
    fpr = np.r_[0.0, np.cumsum(~y)[last] / neg]
    auc = float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2))
    return RocResult([(float(a), float(b)) for a, b in zip(fpr, tpr)], auc)


def view_scores(probs, view: AdjacencyView, mask=None):
    """(probabilities, labels) over observed dyads, optionally restricted by ``mask``."""
    m = dyad_mask(view)
    if mask is not None:
        m &= mask
    return np.asarray(probs)[m], view.entries[m].astype(int)


def in_sample_roc(fit: LsjmFit, views: Sequence[AdjacencyView], source=Source.PER_VIEW) -> list[RocResult]:
    out = []
    for k, v in enumerate(views):
        p = probability_matrix(fit, k, source).probs
        out.append(roc_auc(*view_scores(p, v)))
    return out


# ---------------------------------------------------------------------------
# cross-validation


@dataclass
class CvPlan:
    """Assignment of dyads or nodes to folds.

    ``assignments`` maps an ordered dyad ``(i, j)`` (``i < j`` when every
    view is undirected) or a node index to its fold.
    """

    mode: Mode
    folds: int
    seed: int
    assignments: dict

    def fold_items(self, fold: int) -> list:
        return [item for item, f in self.assignments.items() if f == fold]


def make_plan(multiplex: MultiplexNetwork, mode: Mode | str = Mode.DYADS, folds: int = 10, seed: int = 0) -> CvPlan:
    mode = Mode(mode)
    n = multiplex.n
    if mode is Mode.DYADS:
        directed = any(v.directed for v in multiplex.views)
        if directed:
            items = [(i, j) for i in range(n) for j in range(n) if i != j]
        else:
            items = [(i, j) for i in range(n) for j in range(i + 1, n)]
    else:
        items = list(range(n))
    if not 2 <= folds <= len(items):
        raise InvalidPlan(f"folds must be between 2 and {len(items)}, got {folds}")
    rng = np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(PLAN_STREAM,)))
    order = rng.permutation(len(items))
    fold_of = np.empty(len(items), dtype=int)
    fold_of[order] = np.arange(len(items)) % folds
    return CvPlan(mode, folds, int(seed), {item: int(f) for item, f in zip(items, fold_of)})


def check_plan(plan: CvPlan, multiplex: MultiplexNetwork, estimator: Estimator) -> None:
    n = multiplex.n
    if plan.mode is Mode.NODES:
        if estimator is not Estimator.LSJM:
            raise InvalidPlan("node-mode cross-validation needs the joint estimator")
        if sorted(plan.assignments) != list(range(n)):
            raise InvalidPlan("node plan must assign every node exactly once")
    else:
        directed = any(v.directed for v in multiplex.views)
        expected = n * (n - 1) if directed else n * (n - 1) // 2
        if len(plan.assignments) != expected:
            raise InvalidPlan(f"dyad plan has {len(plan.assignments)} items, expected {expected}")
    if set(plan.assignments.values()) - set(range(plan.folds)):
        raise InvalidPlan("fold index out of range")


def heldout_masks(plan: CvPlan, fold: int, n: int) -> np.ndarray:
    """Boolean N x N matrix of held-out ordered dyads for one fold."""
    held = np.zeros((n, n), dtype=bool)
    items = plan.fold_items(fold)
    if plan.mode is Mode.DYADS:
        if items:
            i, j = np.array(items).T
            held[i, j] = True
    else:
        held[items, :] = True
        held[:, items] = True
    np.fill_diagonal(held, False)
    return held


def _view_held(held: np.ndarray, view: AdjacencyView, ordered_plan: bool) -> np.ndarray:
    """Held-out dyads of one view; undirected views are held out symmetrically."""
    if view.directed:
        return held
    if ordered_plan:
        # an unordered pair follows the fold of its (low, high) ordering
        h = np.triu(held, 1)
    else:
        h = held
    return h | h.T


@dataclass
class Confusion:
    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    @property
    def misclassification(self) -> float:
        return (self.fp + self.fn) / self.total if self.total else float("nan")

    def __add__(self, other: "Confusion") -> "Confusion":
        return Confusion(self.tp + other.tp, self.fp + other.fp, self.tn + other.tn, self.fn + other.fn)

    @classmethod
    def from_predictions(cls, pred, truth) -> "Confusion":
        pred = np.asarray(pred, dtype=bool)
        truth = np.asarray(truth, dtype=bool)
        return cls(int(np.sum(pred & truth)), int(np.sum(pred & ~truth)),
                   int(np.sum(~pred & ~truth)), int(np.sum(~pred & truth)))


@dataclass
class FoldViewResult:
    view: int
    tau: float
    confusion: Confusion
    scores: np.ndarray
    labels: np.ndarray


@dataclass
class FoldResult:
    fold: int
    ok: bool
    views: list[FoldViewResult] = field(default_factory=list)
    error: str = ""


@dataclass
class CvResult:
    plan: CvPlan
    estimator: Estimator
    folds: list[FoldResult]
    pooled_roc: list[RocResult | None]
    pooled_confusion: list[Confusion]
    fold_auc: list[list[float | None]]

    @property
    def misclassification(self) -> list[float]:
        return [c.misclassification for c in self.pooled_confusion]

    @property
    def auc(self) -> list[float]:
        return [r.auc if r is not None else float("nan") for r in self.pooled_roc]


def _predict_view(view_full: AdjacencyView, view_train: AdjacencyView, z, xi, held) -> FoldViewResult | None:
    probs = link_probabilities(z, xi)
    tau = threshold_tau(probs, view_train)
    scores, labels = view_scores(probs, view_full, held)
    if scores.size == 0:
        return None
    conf = Confusion.from_predictions(classify(scores, tau), labels)
    return FoldViewResult(-1, tau, conf, scores, labels)


def _masked(multiplex: MultiplexNetwork, held_per_view) -> MultiplexNetwork:
    views = [v if h is None else v.with_mask(~h) for v, h in zip(multiplex.views, held_per_view)]
    return build_multiplex(multiplex.nodes, views)


def _run_fold(fold: int, multiplex: MultiplexNetwork, priors, config: FitConfig, plan: CvPlan,
              estimator: Estimator) -> FoldResult:
    n, k = multiplex.n, multiplex.k
    cfg = replace(config, seed=derive_seed(config.seed, fold))
    held = heldout_masks(plan, fold, n)
    ordered = plan.mode is Mode.DYADS and any(v.directed for v in multiplex.views)
    result = FoldResult(fold, True)
    try:
        if plan.mode is Mode.DYADS:
            vheld = [_view_held(held, v, ordered) for v in multiplex.views]
            train = _masked(multiplex, vheld)
            if estimator is Estimator.LSJM:
                fit = fit_lsjm(train, priors, cfg)
                fits = [(fit.fused.positions_bar, s.xi_tilde) for s in fit.view_states]
            else:
                fits = []
                for kk, v in enumerate(train.views):
                    state, _ = fit_lsm(v, priors[kk], cfg)
                    fits.append((state.positions, state.xi_tilde))
            for kk in range(k):
                r = _predict_view(multiplex.views[kk], train.views[kk], *fits[kk], vheld[kk])
                if r is not None:
                    result.views.append(replace(r, view=kk))
        else:
            for kk in range(k):
                vheld = [None] * k
                vheld[kk] = _view_held(held, multiplex.views[kk], False)
                train = _masked(multiplex, vheld)
                fit = fit_lsjm(train, priors, cfg)
                r = _predict_view(multiplex.views[kk], train.views[kk], fit.fused.positions_bar,
                                  fit.view_states[kk].xi_tilde, vheld[kk])
                if r is not None:
                    result.views.append(replace(r, view=kk))
    except (LsjmError, np.linalg.LinAlgError, FloatingPointError) as exc:
        log.warning("fold %d failed: %s", fold, exc)
        return FoldResult(fold, False, [], f"{type(exc).__name__}: {exc}")
    return result


def run_cv(multiplex: MultiplexNetwork, priors: Sequence[PriorConfig], config: FitConfig, plan: CvPlan,
           estimator: Estimator | str = Estimator.LSJM, workers: int = 1) -> CvResult:
    """Refit with each fold held out and score the held-out dyads.

    Dyad mode hides the fold's dyads in every view at once.  Node mode
    hides all dyads touching the fold's nodes in one view at a time, the
    other views staying observed.  Joint fits predict from the fused
    positions; single-view fits from their own positions.  Fold ``f``
    fits with seed ``derive_seed(config.seed, f)``.
    """
    estimator = Estimator(estimator)
    priors = list(priors)
    if len(priors) == 1:
        priors = priors * multiplex.k
    check_plan(plan, multiplex, estimator)
    task = partial(_run_fold, multiplex=multiplex, priors=priors, config=config, plan=plan, estimator=estimator)
    folds = pmap(task, range(plan.folds), workers)

    pooled_conf, pooled_roc, fold_auc = [], [], []
    for kk in range(multiplex.k):
        conf = Confusion()
        scores, labels, aucs = [], [], []
        for fr in folds:
            match = [r for r in fr.views if r.view == kk]
            if not match:
                aucs.append(None)
                continue
            r = match[0]
            conf = conf + r.confusion
            scores.append(r.scores)
            labels.append(r.labels)
            try:
                aucs.append(roc_auc(r.scores, r.labels).auc)
            except DegenerateLabels:
                aucs.append(None)
        pooled_conf.append(conf)
        fold_auc.append(aucs)
        try:
            pooled_roc.append(roc_auc(np.concatenate(scores), np.concatenate(labels)) if scores else None)
        except DegenerateLabels:
            pooled_roc.append(None)
    return CvResult(plan, estimator, folds, pooled_roc, pooled_conf, fold_auc)
