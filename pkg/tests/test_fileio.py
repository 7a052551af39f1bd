import numpy as np
import pytest
from conftest import population_anchor_moments

from anchorfa.errors import ValidationError
from anchorfa.fileio import (config_fingerprint, load_model, load_moment_set,
                             load_structure, parse_anchors, parse_dataset,
                             save_model, save_moment_set, save_structure,
                             sniff_columns, write_sparse_rows)
from anchorfa.model import exact_marginal, random_model
from anchorfa.structure import ScoredStructure


def write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_parse_sparse_row_example(tmp_path):
    p = write(tmp_path, "d.txt", "3 17 250\n")
    data = parse_dataset(p, 300)
    row = data.observed_rows[0]
    assert row.sum() == 3
    assert row[3] == row[17] == row[250] == 1


def test_parse_empty_line_is_all_zeros(tmp_path):
    p = write(tmp_path, "d.txt", "1\n\n0 2\n")
    data = parse_dataset(p, 3)
    np.testing.assert_array_equal(data.observed_rows,
                                  [[0, 1, 0], [0, 0, 0], [1, 0, 1]])


def test_parse_malformed_token_reports_line(tmp_path):
    p = write(tmp_path, "d.txt", "0 1\n2 x\n")
    with pytest.raises(ValidationError, match=r"d\.txt:2"):
        parse_dataset(p, 3)


def test_parse_out_of_range_reports_line(tmp_path):
    p = write(tmp_path, "d.txt", "0\n5\n")
    with pytest.raises(ValidationError, match=r"d\.txt:2.*out of range"):
        parse_dataset(p, 3)


def test_parse_empty_file_rejected(tmp_path):
    p = write(tmp_path, "d.txt", "")
    with pytest.raises(ValidationError, match="empty dataset"):
        parse_dataset(p, 3)


def test_parse_latent_labels_row_mismatch(tmp_path):
    d = write(tmp_path, "d.txt", "0\n1\n")
    l = write(tmp_path, "l.txt", "0\n")
    with pytest.raises(ValidationError, match="1 rows, expected 2"):
        parse_dataset(d, 2, latent_path=l, m_latent=1)


def test_write_read_roundtrip(tmp_path):
    rows = np.array([[1, 0, 1], [0, 0, 0], [0, 1, 0]], dtype=np.uint8)
    p = tmp_path / "d.txt"
    write_sparse_rows(p, rows)
    back = parse_dataset(p, 3)
    np.testing.assert_array_equal(back.observed_rows, rows)


def test_sniff_columns(tmp_path):
    p = write(tmp_path, "d.txt", "3 17\n\n250\n")
    assert sniff_columns(p) == 251


def test_parse_anchors_example(tmp_path):
    p = write(tmp_path, "a.txt",
              "# disease anchors\nasthma 12 0.7 0.02\nflu 4\n")
    spec = parse_anchors(p)
    assert spec.names == ("asthma", "flu")
    assert spec.anchor_of == (12, 4)
    cond = spec.conditionals[0]
    # cond[a, y]: columns y=0, y=1
    assert cond[1, 1] == pytest.approx(0.7)
    assert cond[1, 0] == pytest.approx(0.02)
    assert cond[0, 1] == pytest.approx(0.3)
    assert spec.conditionals[1] is None
    assert not spec.is_complete()
    with pytest.raises(ValidationError, match="flu"):
        spec.to_anchor_map()


def test_parse_anchors_duplicates(tmp_path):
    p = write(tmp_path, "a.txt", "a 0 0.9 0.1\nb 0 0.8 0.1\n")
    with pytest.raises(ValidationError, match="duplicate anchor index"):
        parse_anchors(p)
    p2 = write(tmp_path, "b.txt", "a 0 0.9 0.1\na 1 0.8 0.1\n")
    with pytest.raises(ValidationError, match="duplicate latent name"):
        parse_anchors(p2)


def test_parse_anchors_malformed(tmp_path):
    p = write(tmp_path, "a.txt", "a 0 0.9\n")
    with pytest.raises(ValidationError, match="expected 2 or 4 fields"):
        parse_anchors(p)
    p2 = write(tmp_path, "b.txt", "a 0 0.9 1.5\n")
    with pytest.raises(ValidationError, match="outside"):
        parse_anchors(p2)


def test_model_roundtrip_value_exact(tmp_path):
    model = random_model(4, 6, "tree", seed=11)
    p = tmp_path / "m.json"
    save_model(p, model, fingerprint="abc")
    back = load_model(p)
    np.testing.assert_array_equal(back.loadings.failures,
                                  model.loadings.failures)
    np.testing.assert_array_equal(back.loadings.leaks, model.loadings.leaks)
    np.testing.assert_array_equal(back.loadings.edge_mask,
                                  model.loadings.edge_mask)
    assert back.latent.parents == model.latent.parents
    for a, b in zip(back.latent.cpts, model.latent.cpts):
        np.testing.assert_array_equal(a, b)
    assert back.anchors.anchor_of == model.anchors.anchor_of
    np.testing.assert_array_equal(back.anchors.conditionals,
                                  model.anchors.conditionals)
    # the round trip preserves the distribution exactly
    assert exact_marginal(back, (0, 1)).table == pytest.approx(
        exact_marginal(model, (0, 1)).table, abs=0)


def test_moment_set_roundtrip(tmp_path):
    model = random_model(3, 4, "tree", seed=2)
    ms = population_anchor_moments(model, 2)
    p = tmp_path / "ms.json"
    save_moment_set(p, ms, fingerprint="f")
    back = load_moment_set(p)
    assert back.order == ms.order
    assert back.latent_ids == ms.latent_ids
    for ids in ms.subsets():
        np.testing.assert_array_equal(back.get(ids).table, ms.get(ids).table)


def test_structure_roundtrip(tmp_path):
    s = ScoredStructure(parents=((), (0,), (0, 1)), score=-12.5,
                        family_scores=(-4.0, -4.0, -4.5))
    p = tmp_path / "s.json"
    save_structure(p, s)
    assert load_structure(p) == s


def test_kind_mismatch(tmp_path):
    s = ScoredStructure(parents=((),), score=0.0, family_scores=(0.0,))
    p = tmp_path / "s.json"
    save_structure(p, s)
    with pytest.raises(ValidationError, match="expected a 'adfa-model'"):
        load_model(p)


def test_deterministic_bytes(tmp_path):
    model = random_model(3, 5, "independent", seed=4)
    p1, p2 = tmp_path / "a.json", tmp_path / "b.json"
    save_model(p1, model, fingerprint="x")
    save_model(p2, model, fingerprint="x")
    assert p1.read_bytes() == p2.read_bytes()
    assert p1.read_bytes().endswith(b"\n")


def test_config_fingerprint():
    a = config_fingerprint({"b": 1, "a": [1, 2]})
    b = config_fingerprint({"a": [1, 2], "b": 1})
    assert a == b
    assert len(a) == 64
    assert a != config_fingerprint({"a": [1, 2], "b": 2})
