"""Edge-list parsing, model artifacts and tabular outputs.

Edge-list format::

    # directed            (or "# undirected"; directed when absent)
    # nodes: a b c d      (optional; pins node order and isolated nodes)
    a b
    b,c

Artifacts are JSON documents whose floats are stored as ``float.hex``
strings, so a write/read round trip is bit exact.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import re
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DimensionMismatch, IoFailure, MalformedLine, SelfLoop, UnknownNode
from .joint import FusedPosterior, LsjmFit
from .lsm import FitReport, PriorConfig, ViewVariationalState
from .network import AdjacencyView, MultiplexNetwork, NodeSet, build_multiplex

SCHEMA_VERSION = 1
# 0.95 quantile of chi-square with 2 degrees of freedom, -2 log(0.05)
CHI2_95_2D = -2.0 * math.log(0.05)

_SPLIT = re.compile(r"[\s,]+")


@dataclass
class ParsedEdgeList:
    nodes: NodeSet
    view: AdjacencyView
    declared: bool
    edges: list[tuple[str, str]] = field(default_factory=list)


def _scan(text: str):
    directed, declared, edges = None, None, []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            body = line[1:].strip()
            low = body.lower()
            if low in ("directed", "undirected"):
                directed = low == "directed"
            elif low.startswith("nodes:"):
                declared = [t for t in _SPLIT.split(body[6:].strip()) if t]
            continue
        parts = [t for t in _SPLIT.split(line) if t]
        if len(parts) != 2:
            raise MalformedLine(f"expected 'source target', got {line!r}", lineno)
        if parts[0] == parts[1]:
            raise SelfLoop(f"self-loop on node {parts[0]!r}", lineno)
        edges.append((parts[0], parts[1], lineno))
    return directed, declared, edges


def parse_edge_list(text: str, directed: bool | None = None, view_label: str = "",
                    nodes: NodeSet | None = None) -> ParsedEdgeList:
    """Parse one view.

    Node order is the declared ``# nodes:`` list, else ``nodes`` when given,
    else the sorted union of endpoints.  Duplicate edges collapse to one.
    """
    hdr_directed, declared, edges = _scan(text)
    if directed is None:
        directed = True if hdr_directed is None else hdr_directed
    if declared is not None:
        node_set = NodeSet(declared)
    elif nodes is not None:
        node_set = nodes
    else:
        node_set = NodeSet(sorted({u for e in edges for u in e[:2]}))
    pinned = declared is not None or nodes is not None
    y = np.zeros((node_set.size, node_set.size), dtype=np.int8)
    kept = []
    for u, v, lineno in edges:
        if pinned:
            for lab in (u, v):
                if lab not in node_set:
                    raise UnknownNode(f"node {lab!r} is not in the declared node list", lineno)
        i, j = node_set.index(u), node_set.index(v)
        if not y[i, j]:
            kept.append((u, v))
        y[i, j] = 1
        if not directed:
            y[j, i] = 1
    view = AdjacencyView(y, directed=directed, view_label=view_label)
    return ParsedEdgeList(node_set, view, declared is not None, kept)


def serialize_edge_list(nodes: NodeSet, view: AdjacencyView) -> str:
    """Text form that parses back to the same nodes and view."""
    lines = ["# directed" if view.directed else "# undirected", "# nodes: " + " ".join(nodes.labels)]
    lines += [f"{nodes.labels[i]} {nodes.labels[j]}" for i, j in view.edges()]
    return "\n".join(lines) + "\n"


def _read_text(path) -> str:
    try:
        return Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc.strerror or exc}") from None


def read_multiplex(paths: Sequence, labels: Sequence[str] | None = None) -> MultiplexNetwork:
    """Read one edge-list file per view over a common node set.

    Declared node lists must agree as sets; files without one use the
    declared order if any file has it, else the sorted union of endpoints.
    """
    texts = [_read_text(p) for p in paths]
    labels = list(labels) if labels else [Path(p).stem for p in paths]
    scans = []
    for p, t in zip(paths, texts):
        try:
            scans.append(_scan(t))
        except MalformedLine as exc:
            raise type(exc)(f"{p}: {exc}") from None
    declared = [s[1] for s in scans if s[1] is not None]
    if declared:
        first = declared[0]
        for d in declared[1:]:
            if set(d) != set(first):
                raise DimensionMismatch("views declare different node sets")
        nodes = NodeSet(first)
    else:
        nodes = NodeSet(sorted({u for s in scans for e in s[2] for u in e[:2]}))
    views = []
    for p, t, lab in zip(paths, texts, labels):
        try:
            views.append(parse_edge_list(t, view_label=lab, nodes=nodes).view)
        except (MalformedLine, SelfLoop, UnknownNode) as exc:
            raise type(exc)(f"{p}: {exc}") from None
    return build_multiplex(nodes, views)


def fingerprint(paths: Sequence) -> dict[str, str]:
    """sha256 of each input file, keyed by file name."""
    out = {}
    for p in paths:
        try:
            out[Path(p).name] = hashlib.sha256(Path(p).read_bytes()).hexdigest()
        except OSError as exc:
            raise IoFailure(f"cannot read {p}: {exc.strerror or exc}") from None
    return out


# ---------------------------------------------------------------------------
# artifacts


def _enc(x):
    if isinstance(x, (float, np.floating)):
        return {"f": float(x).hex()}
    if isinstance(x, np.ndarray):
        return {"shape": list(x.shape), "data": [float(v).hex() for v in x.ravel()]}
    if isinstance(x, (bool, np.bool_)):
        return bool(x)
    if isinstance(x, (int, np.integer)):
        return int(x)
    if isinstance(x, dict):
        return {str(k): _enc(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_enc(v) for v in x]
    return x


def _dec(x):
    if isinstance(x, dict):
        if set(x) == {"f"}:
            return float.fromhex(x["f"])
        if set(x) == {"shape", "data"}:
            return np.array([float.fromhex(v) for v in x["data"]], dtype=float).reshape(x["shape"])
        return {k: _dec(v) for k, v in x.items()}
    if isinstance(x, list):
        return [_dec(v) for v in x]
    return x


@dataclass
class ModelArtifact:
    kind: str                                  # "lsm" or "lsjm"
    nodes: list[str]
    view_labels: list[str]
    priors: list[PriorConfig]
    view_states: list[ViewVariationalState]
    fused: FusedPosterior
    report: FitReport
    fingerprint: dict[str, str]
    schema_version: int = SCHEMA_VERSION

    @classmethod
    def from_fit(cls, kind: str, nodes: NodeSet, view_labels, fit: LsjmFit, fingerprint: dict) -> "ModelArtifact":
        return cls(kind, list(nodes.labels), list(view_labels), list(fit.priors), list(fit.view_states),
                   fit.fused, fit.report, dict(fingerprint))

    def to_fit(self) -> LsjmFit:
        return LsjmFit(self.fused, list(self.view_states), list(self.priors), self.report)

    def to_dict(self) -> dict:
        return {
            "schema_version": self.schema_version,
            "kind": self.kind,
            "nodes": self.nodes,
            "view_labels": self.view_labels,
            "priors": [_enc(asdict(p)) for p in self.priors],
            "views": [
                _enc({"xi_tilde": s.xi_tilde, "psi2_tilde": s.psi2_tilde, "cov": np.asarray(s.cov),
                      "positions": np.asarray(s.positions)})
                for s in self.view_states
            ],
            "fused": _enc({"positions_bar": self.fused.positions_bar, "cov_bar": self.fused.cov_bar}),
            "report": _enc(asdict(self.report)),
            "fingerprint": dict(sorted(self.fingerprint.items())),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelArtifact":
        version = d.get("schema_version")
        if version != SCHEMA_VERSION:
            raise IoFailure(f"unsupported artifact schema_version {version!r}")
        priors = []
        for p in d["priors"]:
            p = _dec(p)
            priors.append(PriorConfig(xi=p["xi"], psi2=p["psi2"], sigma2=p["sigma2"], dim=int(p["dim"])))
        states = []
        for v in d["views"]:
            v = _dec(v)
            states.append(ViewVariationalState(v["xi_tilde"], v["psi2_tilde"], v["positions"], v["cov"]))
        f = _dec(d["fused"])
        r = _dec(d["report"])
        return cls(d["kind"], list(d["nodes"]), list(d["view_labels"]), priors, states,
                   FusedPosterior(f["positions_bar"], f["cov_bar"]), FitReport(**r),
                   dict(d["fingerprint"]), version)


def dumps_artifact(artifact: ModelArtifact) -> str:
    return json.dumps(artifact.to_dict(), indent=1, sort_keys=True) + "\n"


def loads_artifact(text: str) -> ModelArtifact:
    return ModelArtifact.from_dict(json.loads(text))


def write_text(path, text: str) -> None:
    try:
        Path(path).write_text(text, encoding="utf-8")
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc.strerror or exc}") from None


def write_artifact(artifact: ModelArtifact, path) -> None:
    write_text(path, dumps_artifact(artifact))


def read_artifact(path) -> ModelArtifact:
    return loads_artifact(_read_text(path))


# ---------------------------------------------------------------------------
# tables


def _rows_to_csv(header, rows) -> str:
    import io as _io

    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _fmt(x: float) -> str:
    return repr(float(x))


def position_rows(fit: LsjmFit, nodes: Sequence[str], view_labels: Sequence[str]):
    """(node, view, x, y, source) rows for per-view and fused positions (first two coordinates)."""
    rows = []
    for k, s in enumerate(fit.view_states):
        z = np.asarray(s.positions)
        for lab, row in zip(nodes, z):
            rows.append((lab, view_labels[k], _fmt(row[0]), _fmt(row[1] if row.size > 1 else 0.0), "per_view"))
    if len(fit.view_states) > 1:
        for lab, row in zip(nodes, fit.fused.positions_bar):
            rows.append((lab, "fused", _fmt(row[0]), _fmt(row[1] if row.size > 1 else 0.0), "fused"))
    return rows


def write_positions_csv(fit: LsjmFit, path, nodes, view_labels) -> None:
    write_text(path, _rows_to_csv(["node", "view", "x", "y", "source"], position_rows(fit, nodes, view_labels)))


def ellipse_params(cov) -> tuple[float, float, float]:
    """Semi-axes (major, minor) and orientation in radians of the 95% region of ``N(., cov)``."""
    w, v = np.linalg.eigh(np.asarray(cov, dtype=float))
    major, minor = math.sqrt(CHI2_95_2D * w[1]), math.sqrt(CHI2_95_2D * w[0])
    angle = math.atan2(v[1, 1], v[0, 1])
    # the major axis direction is defined up to sign
    if angle < 0:
        angle += math.pi
    if angle >= math.pi:
        angle -= math.pi
    return major, minor, angle


def ellipse_rows(fit: LsjmFit, nodes, view_labels):
    """Per-node ellipse rows, or ``None`` when the latent space is not 2-D."""
    if fit.fused.cov_bar.shape != (2, 2):
        return None
    sets = [(view_labels[k], s.positions, s.cov) for k, s in enumerate(fit.view_states)]
    if len(fit.view_states) > 1:
        sets.append(("fused", fit.fused.positions_bar, fit.fused.cov_bar))
    rows = []
    for vlab, z, cov in sets:
        a, b, ang = ellipse_params(cov)
        for lab, row in zip(nodes, np.asarray(z)):
            rows.append((lab, vlab, _fmt(row[0]), _fmt(row[1]), _fmt(a), _fmt(b), _fmt(ang)))
    return rows


def write_ellipses(fit: LsjmFit, path, nodes, view_labels) -> bool:
    """Write the ellipse CSV; returns False (and writes nothing) when D != 2."""
    rows = ellipse_rows(fit, nodes, view_labels)
    if rows is None:
        return False
    write_text(path, _rows_to_csv(["node", "view", "x", "y", "semi_major", "semi_minor", "angle"], rows))
    return True


def arrow_rows(fit: LsjmFit, nodes):
    """Per-node segment from the first view's position to the last view's."""
    a = np.asarray(fit.view_states[0].positions)
    b = np.asarray(fit.view_states[-1].positions)
    return [(lab, _fmt(p[0]), _fmt(p[1]), _fmt(q[0]), _fmt(q[1])) for lab, p, q in zip(nodes, a, b)]


def write_arrows(fit: LsjmFit, path, nodes) -> None:
    write_text(path, _rows_to_csv(["node", "x0", "y0", "x1", "y1"], arrow_rows(fit, nodes)))


def write_trace(report: FitReport, path) -> None:
    rows = [(0, _fmt(report.initial_objective))]
    rows += [(t + 1, _fmt(v)) for t, v in enumerate(report.objective_trace)]
    write_text(path, _rows_to_csv(["iteration", "objective"], rows))


def write_roc(points, path) -> None:
    write_text(path, _rows_to_csv(["fpr", "tpr"], [(_fmt(a), _fmt(b)) for a, b in points]))


def write_json(obj, path) -> None:
    write_text(path, json.dumps(obj, indent=1, sort_keys=True) + "\n")
