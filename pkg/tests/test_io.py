import math
import xml.etree.ElementTree as ET
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import DATA, real_paths
from lsjm.errors import DimensionMismatch, IoFailure, MalformedLine, SelfLoop, UnknownNode
from lsjm.io import (
    CHI2_95_2D,
    ModelArtifact,
    dumps_artifact,
    ellipse_params,
    ellipse_rows,
    fingerprint,
    loads_artifact,
    parse_edge_list,
    read_artifact,
    read_multiplex,
    serialize_edge_list,
    write_artifact,
    write_ellipses,
    write_positions_csv,
)
from lsjm.joint import FusedPosterior, LsjmFit, fit_lsjm
from lsjm.lsm import FitConfig, FitReport, PriorConfig, ViewVariationalState
from lsjm.network import AdjacencyView, NodeSet, link_counts
from lsjm.svg import emit_svg_scatter, scatter_svg

GOLDEN = Path(__file__).parent / "golden"


# ---------------------------------------------------------------- edge lists


def test_parse_undirected_example():
    p = parse_edge_list("a b\nb c", directed=False)
    assert list(p.nodes.labels) == ["a", "b", "c"]
    assert p.view.entries.sum() == 4
    assert np.array_equal(p.view.entries, p.view.entries.T)
    assert link_counts(p.view)["links"] == 2


def test_parse_headers_comments_and_duplicates():
    text = "# undirected\n# nodes: z y x w\n\n# a comment\nz,y\ny z\nx  y\n"
    p = parse_edge_list(text)
    assert list(p.nodes.labels) == ["z", "y", "x", "w"]
    assert not p.view.directed and p.declared
    assert link_counts(p.view)["links"] == 2
    assert p.view.entries[3].sum() == 0  # pinned isolated node


def test_parse_errors_carry_line_numbers():
    with pytest.raises(SelfLoop) as e:
        parse_edge_list("a b\na a")
    assert e.value.lineno == 2 and "line 2" in str(e.value)
    with pytest.raises(MalformedLine) as e:
        parse_edge_list("a b c")
    assert e.value.lineno == 1
    with pytest.raises(UnknownNode) as e:
        parse_edge_list("# nodes: a b\n\na q")
    assert e.value.lineno == 3


labels = st.sampled_from([f"n{i}" for i in range(8)])


@given(st.lists(st.tuples(labels, labels), min_size=1, max_size=30), st.booleans())
def test_parse_serialize_fixed_point(pairs, directed):
    text = "\n".join(f"{a} {b}" for a, b in pairs if a != b) or "n0 n1"
    first = parse_edge_list(text, directed=directed)
    again = parse_edge_list(serialize_edge_list(first.nodes, first.view))
    assert list(again.nodes.labels) == list(first.nodes.labels)
    assert again.view.directed == directed
    np.testing.assert_array_equal(again.view.entries, first.view.entries)
    assert serialize_edge_list(again.nodes, again.view) == serialize_edge_list(first.nodes, first.view)


def test_read_multiplex_and_mismatch(tmp_path):
    a = tmp_path / "a.edges"
    b = tmp_path / "b.edges"
    c = tmp_path / "c.edges"
    a.write_text("# nodes: p q r\np q\n")
    b.write_text("# nodes: r q p\nq r\n")
    c.write_text("# nodes: p q s\np s\n")
    m = read_multiplex([a, b])
    assert m.k == 2 and list(m.nodes.labels) == ["p", "q", "r"]
    assert [v.view_label for v in m.views] == ["a", "b"]
    with pytest.raises(DimensionMismatch):
        read_multiplex([a, c])
    with pytest.raises(IoFailure):
        read_multiplex([a, tmp_path / "missing.edges"])
    fp = fingerprint([a])
    assert len(fp["a.edges"]) == 64


def test_surrogate_files_reproduce_counts():
    m = read_multiplex(sorted((DATA / "girls_surrogate").glob("wave*.edges")))
    assert m.n == 50
    assert [link_counts(v)["links"] for v in m.views] == [113, 116, 122]
    p = read_multiplex([DATA / "protein_surrogate" / f for f in ("genetic.edges", "physical.edges")])
    assert p.n == 67 and [link_counts(v)["links"] for v in p.views] == [147, 95]


@pytest.mark.skipif(real_paths("girls", ["wave1.edges"]) is None, reason="girls data not fetched")
def test_real_girls_wave1():
    m = read_multiplex(real_paths("girls", ["wave1.edges", "wave2.edges", "wave3.edges"]))
    assert m.n == 50
    assert [link_counts(v)["links"] for v in m.views] == [113, 116, 122]


# ---------------------------------------------------------------- artifacts


def _awkward_fit(dim=2):
    g = np.random.default_rng(0)
    states = [
        ViewVariationalState(float(g.normal()) / 3, 0.1 + 1e-17, g.normal(size=(4, dim)) * math.pi,
                             np.eye(dim) * (1 / 3))
        for _ in range(2)
    ]
    report = FitReport([-10.123456789012345, -9.5], 2, True, 1, -20.0 / 3,
                       [{"restart": 0, "final_objective": 0.1}], ["x"])
    fused = FusedPosterior(g.normal(size=(4, dim)) / 7, np.eye(dim) / 7)
    return LsjmFit(fused, states, [PriorConfig(), PriorConfig(xi=0.1)], report)


def test_artifact_round_trip_is_bit_exact(tmp_path):
    art = ModelArtifact.from_fit("lsjm", NodeSet(list("abcd")), ["u", "v"], _awkward_fit(), {"f": "00"})
    path = tmp_path / "m.json"
    write_artifact(art, path)
    back = read_artifact(path)
    for s, t in zip(art.view_states, back.view_states):
        assert s.xi_tilde == t.xi_tilde and s.psi2_tilde == t.psi2_tilde
        assert np.array_equal(s.positions, t.positions) and np.array_equal(s.cov, t.cov)
    assert np.array_equal(art.fused.positions_bar, back.fused.positions_bar)
    assert back.report == art.report and back.priors == art.priors
    assert dumps_artifact(back) == path.read_text()


def test_artifact_rejects_unknown_schema():
    art = ModelArtifact.from_fit("lsm", NodeSet(list("abcd")), ["u", "v"], _awkward_fit(), {})
    text = dumps_artifact(art).replace('"schema_version": 1', '"schema_version": 99')
    with pytest.raises(IoFailure):
        loads_artifact(text)


# ---------------------------------------------------------------- plot data


def test_isotropic_ellipse_radius():
    a, b, ang = ellipse_params(np.eye(2))
    assert a == pytest.approx(2.448, abs=1e-3) and b == pytest.approx(a, rel=1e-14)
    assert CHI2_95_2D == pytest.approx(5.991, abs=1e-3)


def test_ellipse_orientation():
    r = np.array([[math.cos(0.4), -math.sin(0.4)], [math.sin(0.4), math.cos(0.4)]])
    a, b, ang = ellipse_params(r @ np.diag([4.0, 1.0]) @ r.T)
    assert ang == pytest.approx(0.4, abs=1e-12)
    assert a == pytest.approx(math.sqrt(CHI2_95_2D * 4)) and b == pytest.approx(math.sqrt(CHI2_95_2D))


def test_ellipses_need_two_dimensions(tmp_path):
    fit = _awkward_fit(dim=3)
    assert ellipse_rows(fit, list("abcd"), ["u", "v"]) is None
    assert not write_ellipses(fit, tmp_path / "e.csv", list("abcd"), ["u", "v"])
    assert not (tmp_path / "e.csv").exists()
    write_positions_csv(fit, tmp_path / "p.csv", list("abcd"), ["u", "v"])
    lines = (tmp_path / "p.csv").read_text().splitlines()
    assert lines[0] == "node,view,x,y,source" and len(lines) == 1 + 12


def test_svg_golden_file():
    text = scatter_svg([[0, 0], [1, 0.5], [-1, 2]], ["a", "b", "c"], ellipses=[(0.3, 0.2, 0.0)] * 3,
                       title="three nodes")
    assert text == (GOLDEN / "three_nodes.svg").read_text()


def test_svg_is_deterministic_and_well_formed(tmp_path):
    g = np.random.default_rng(3)
    z = g.normal(size=(12, 2))
    arrows = np.hstack([z, z + 0.1])
    emit_svg_scatter(tmp_path / "a.svg", z, [f"n{i}" for i in range(12)], [(0.2, 0.1, 1.0)] * 12, arrows, "t<&>")
    emit_svg_scatter(tmp_path / "b.svg", z, [f"n{i}" for i in range(12)], [(0.2, 0.1, 1.0)] * 12, arrows, "t<&>")
    assert (tmp_path / "a.svg").read_bytes() == (tmp_path / "b.svg").read_bytes()
    root = ET.parse(tmp_path / "a.svg").getroot()
    assert len(root.findall("{http://www.w3.org/2000/svg}circle")) == 12


def test_svg_empty_positions_has_axes_only():
    root = ET.fromstring(scatter_svg([]))
    tags = [el.tag.split("}")[1] for el in root]
    assert tags.count("line") == 2 and "circle" not in tags


def test_svg_write_failure(tmp_path):
    with pytest.raises(IoFailure):
        emit_svg_scatter(tmp_path / "nope" / "x.svg", [[0, 0]])


def test_fitted_model_round_trip(tmp_path):
    m = read_multiplex(sorted((DATA / "protein_surrogate").glob("*.edges")))
    fit = fit_lsjm(m, [PriorConfig()], FitConfig(restarts=1, max_iters=5, min_iters=1))
    art = ModelArtifact.from_fit("lsjm", m.nodes, ["genetic", "physical"], fit, fingerprint([]))
    back = loads_artifact(dumps_artifact(art)).to_fit()
    assert np.array_equal(back.xi_tilde, fit.xi_tilde)
    assert np.array_equal(back.fused.cov_bar, fit.fused.cov_bar)
