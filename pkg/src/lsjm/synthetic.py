"""Seeded synthetic multiplex networks with exact link counts.

Used as stand-ins when the public datasets are not on disk: the generators
plant clustered latent positions and then keep the ``m`` dyads with the
largest perturbed log-odds, which is a draw from the model conditioned on
having exactly ``m`` links.
"""

from __future__ import annotations

import numpy as np
from scipy.special import logit

from .network import AdjacencyView, MultiplexNetwork, NodeSet, build_multiplex


def clustered_positions(rng, n: int, clusters: int, spread: float = 2.5, within: float = 0.45, dim: int = 2):
    centres = rng.normal(scale=spread, size=(clusters, dim))
    labels = np.arange(n) % clusters
    return centres[labels] + rng.normal(scale=within, size=(n, dim))


def exact_count_view(rng, positions, alpha: float, links: int, directed: bool, label: str = "") -> AdjacencyView:
    """Top-``links`` dyads by ``alpha - d2 + logistic noise``."""
    z = np.asarray(positions)
    n = z.shape[0]
    d2 = ((z[:, None, :] - z[None, :, :]) ** 2).sum(-1)
    score = alpha - d2 + logit(rng.uniform(size=(n, n)))
    if directed:
        rows, cols = np.nonzero(~np.eye(n, dtype=bool))
    else:
        rows, cols = np.triu_indices(n, 1)
    flat = score[rows, cols]
    if not 0 <= links <= flat.size:
        raise ValueError(f"cannot place {links} links among {flat.size} dyads")
    keep = np.argsort(-flat, kind="stable")[:links]
    y = np.zeros((n, n), dtype=np.int8)
    y[rows[keep], cols[keep]] = 1
    if not directed:
        y = y | y.T
    return AdjacencyView(y, directed=directed, view_label=label)


def girls_surrogate(seed: int = 2024) -> MultiplexNetwork:
    """50 nodes, three directed waves with 113, 116 and 122 links and drifting positions."""
    rng = np.random.default_rng(seed)
    z = clustered_positions(rng, 50, clusters=10)
    views = []
    for wave, (alpha, m) in enumerate([(-0.6, 113), (-0.6, 116), (-0.5, 122)], start=1):
        if wave > 1:
            z = z + rng.normal(scale=0.3, size=z.shape)
        views.append(exact_count_view(rng, z, alpha, m, True, f"wave{wave}"))
    nodes = NodeSet([f"s{i + 1:03d}" for i in range(50)])
    return build_multiplex(nodes, views)


def protein_surrogate(seed: int = 2025) -> MultiplexNetwork:
    """67 nodes, two undirected views with 147 and 95 links over shared positions."""
    rng = np.random.default_rng(seed)
    z = clustered_positions(rng, 67, clusters=8, spread=2.0, within=0.6)
    views = [
        exact_count_view(rng, z, -0.4, 147, False, "genetic"),
        exact_count_view(rng, z, -0.9, 95, False, "physical"),
    ]
    nodes = NodeSet([f"p{i + 1:03d}" for i in range(67)])
    return build_multiplex(nodes, views)
