"""Binary single- and multi-view networks with missing-dyad masks."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import (
    AsymmetricView,
    DimensionMismatch,
    DuplicateNodeLabel,
    NonBinaryEntry,
    NonzeroDiagonal,
)


@dataclass(frozen=True)
class NodeSet:
    labels: tuple[str, ...]
    _index: dict = field(init=False, repr=False, compare=False)

    def __init__(self, labels: Sequence[str]):
        labels = tuple(str(lab) for lab in labels)
        dupes = [lab for lab, c in Counter(labels).items() if c > 1]
        if dupes:
            raise DuplicateNodeLabel(f"duplicate node labels: {sorted(dupes)[:5]}")
        if len(labels) < 2:
            raise DimensionMismatch(f"need at least 2 nodes, got {len(labels)}")
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "_index", {lab: i for i, lab in enumerate(labels)})

    @property
    def size(self) -> int:
        return len(self.labels)

    def __len__(self):
        return len(self.labels)

    def index(self, label: str) -> int:
        return self._index[label]

    def __contains__(self, label):
        return label in self._index


def _frozen(a):
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class AdjacencyView:
    """One binary adjacency matrix plus its observed-dyad mask.

    Unobserved dyads are stored as 0 with ``observed == False``; the
    diagonal is never observed. Undirected views are stored symmetrically.
    """

    entries: np.ndarray
    observed: np.ndarray
    directed: bool = True
    view_label: str = ""

    def __init__(self, entries, observed=None, directed=True, view_label=""):
        y = np.asarray(entries)
        if y.ndim != 2 or y.shape[0] != y.shape[1]:
            raise DimensionMismatch(f"adjacency must be square, got shape {y.shape}")
        n = y.shape[0]
        if not np.all((y == 0) | (y == 1)):
            raise NonBinaryEntry("adjacency entries must be 0 or 1")
        if np.any(np.diag(y) != 0):
            raise NonzeroDiagonal("self-loops are not allowed")
        if observed is None:
            obs = np.ones((n, n), dtype=bool)
        else:
            obs = np.asarray(observed, dtype=bool).copy()
            if obs.shape != y.shape:
                raise DimensionMismatch(f"mask shape {obs.shape} != adjacency shape {y.shape}")
        np.fill_diagonal(obs, False)
        y = np.where(obs, y, 0).astype(np.int8)
        if not directed:
            if not np.array_equal(y, y.T):
                raise AsymmetricView("undirected view has asymmetric entries")
            if not np.array_equal(obs, obs.T):
                raise AsymmetricView("undirected view has asymmetric mask")
        object.__setattr__(self, "entries", _frozen(y))
        object.__setattr__(self, "observed", _frozen(obs))
        object.__setattr__(self, "directed", bool(directed))
        object.__setattr__(self, "view_label", str(view_label))

    @property
    def n(self) -> int:
        return self.entries.shape[0]

    def with_mask(self, observed) -> "AdjacencyView":
        """Copy of this view whose mask is ``self.observed & observed``."""
        return AdjacencyView(
            self.entries, self.observed & np.asarray(observed, dtype=bool),
            directed=self.directed, view_label=self.view_label,
        )

    def edges(self) -> list[tuple[int, int]]:
        """Observed links as index pairs (``i < j`` for undirected views)."""
        y = self.entries
        if not self.directed:
            y = np.triu(y)
        return [(int(i), int(j)) for i, j in zip(*np.nonzero(y))]


@dataclass(frozen=True, eq=False)
class MultiplexNetwork:
    nodes: NodeSet
    views: tuple[AdjacencyView, ...]

    @property
    def n(self) -> int:
        return self.nodes.size

    @property
    def k(self) -> int:
        return len(self.views)


def build_multiplex(nodes: NodeSet, views: Sequence[AdjacencyView]) -> MultiplexNetwork:
    views = tuple(views)
    if not views:
        raise DimensionMismatch("a multiplex network needs at least one view")
    for k, v in enumerate(views):
        if v.n != nodes.size:
            raise DimensionMismatch(
                f"view {k} ({v.view_label or 'unnamed'}) has {v.n} nodes, expected {nodes.size}"
            )
    return MultiplexNetwork(nodes=nodes, views=views)


def link_counts(view: AdjacencyView) -> dict:
    """Observed link counts under both counting conventions.

    ``entries`` counts ordered pairs with y_ij = 1 (each undirected link
    twice); ``links`` counts arcs for directed views and unordered pairs
    for undirected ones.
    """
    entries = int(view.entries.sum())
    links = entries if view.directed else entries // 2
    return {"links": links, "entries": entries}


def observed_dyads(view: AdjacencyView) -> int:
    """Observed off-diagonal dyads (unordered pairs for undirected views)."""
    m = int(view.observed.sum())
    return m if view.directed else m // 2


def density(view: AdjacencyView) -> float:
    """Fraction of observed off-diagonal dyads that carry a link.

    For a fully observed directed view this is links / N(N-1); for an
    undirected one it is pairs / (N(N-1)/2), which equals the ordered-entry
    ratio because undirected views are stored symmetrically.
    """
    denom = int(view.observed.sum())
    if denom == 0:
        return 0.0
    return float(view.entries.sum()) / denom


def density_report(view: AdjacencyView) -> dict:
    """Both density conventions, labelled, alongside the raw counts.

    ``density_entries`` divides the ordered-entry count by the ordered
    observed dyads; ``density_links`` divides the link count (pairs for
    undirected) by N(N-1), the reading under which an undirected link
    count is compared against ordered dyads.
    """
    counts = link_counts(view)
    n = view.n
    return {
        **counts,
        "n": n,
        "directed": view.directed,
        "density_entries": density(view),
        "density_links": counts["links"] / (n * (n - 1)),
    }


def degree_distribution(view: AdjacencyView, kind: str = "total") -> dict[int, int]:
    """Histogram ``{degree: node count}``; counts sum to N.

    ``kind`` is ``"total"`` (in + out for directed views), ``"in"`` or ``"out"``.
    Undirected views always use the plain degree.
    """
    y = view.entries.astype(np.int64)
    if not view.directed:
        deg = y.sum(axis=1)
    elif kind == "out":
        deg = y.sum(axis=1)
    elif kind == "in":
        deg = y.sum(axis=0)
    elif kind == "total":
        deg = y.sum(axis=1) + y.sum(axis=0)
    else:
        raise ValueError(f"unknown degree kind {kind!r}")
    return dict(sorted(Counter(int(d) for d in deg).items()))
