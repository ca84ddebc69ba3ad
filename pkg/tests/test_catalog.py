import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from transnest import simgen
from transnest.catalog import (
    CooccurrenceTable,
    SiteMatrix,
    dump_catalog,
    load_catalog,
    load_site_matrix,
    read_cooccurrence_csv,
    read_matrix_csv,
    site_matrix,
    sppmi_from_cooccurrence,
    validate_catalog,
    write_matrix_csv,
)
from transnest.embeddings import EmbeddingSet, read_embeddings_csv, write_embeddings_csv
from transnest.errors import ConfigError


def doc(*entries):
    return {"features": list(entries)}


def test_three_feature_partition():
    cat = validate_catalog(doc(
        {"id": "a", "group": None, "sites": [1, 2]},
        {"id": "b", "group": None, "sites": [1]},
        {"id": "c", "group": None, "sites": [2]},
    ))
    assert cat.counts() == {"n": 3, "n1": 2, "n2": 2, "n_o": 1, "G": 0}
    assert {cat.ids[i] for i in cat.nonoverlap_index} == {"b", "c"}
    assert [cat.ids[i] for i in cat.overlap_index] == ["a"]


def test_duplicate_id_named():
    with pytest.raises(ConfigError, match="duplicate feature id: x"):
        validate_catalog(doc({"id": "x", "sites": [1]}, {"id": "x", "sites": [2]}))


@pytest.mark.parametrize("entry, message", [
    ({"id": "q", "sites": []}, "q is present in no site"),
    ({"id": "q", "sites": [3]}, "unknown site"),
    ({"id": "q", "sites": [1], "weights": {"1": 0}}, "q: weight at site 1 must be positive"),
    ({"id": "q", "sites": [1], "weights": {"1": -2}}, "must be positive"),
    ({"id": "q", "sites": [1], "weights": {"2": 1}}, "absent site 2"),
])
def test_invalid_entries_rejected(entry, message):
    with pytest.raises(ConfigError, match=message):
        validate_catalog(doc(entry))


def test_weights_default_to_one_and_groups_derived():
    cat = validate_catalog(doc(
        {"id": "b", "group": "g", "sites": [1, 2], "weights": {"1": 2.5}},
        {"id": "a", "group": "g", "sites": [2]},
        {"id": "c", "sites": [1]},
    ))
    assert cat.ids == ("a", "b", "c")
    assert cat.weights[1, 0] == 2.5 and cat.weights[1, 1] == 1.0
    assert math.isnan(cat.weights[0, 0])
    assert cat.groups == {"g": ("a", "b")}
    assert list(cat.group_codes) == [0, 0, -1]


def test_full_size_counts():
    cfg = simgen.preset("C1")
    truth = simgen.generate_ground_truth(cfg)
    cat = simgen.simulation_catalog(truth)
    assert cat.counts() == {"n": 3000, "n1": 2000, "n2": 2000, "n_o": 1000, "G": 400}


def test_catalog_round_trip(tmp_path):
    cat = validate_catalog(doc(
        {"id": "a", "group": "g1", "sites": [1, 2], "weights": {"1": 0.2, "2": 0.05}},
        {"id": "b", "group": None, "sites": [1]},
        {"id": "c", "group": "g1", "sites": [2], "weights": {"2": 1 / 3}},
    ))
    path = tmp_path / "catalog.json"
    dump_catalog(cat, path)
    again = load_catalog(path)
    assert again == cat
    assert again.to_document() == json.loads(path.read_text())


@settings(max_examples=50, deadline=None)
@given(st.lists(
    st.tuples(st.sampled_from([(1,), (2,), (1, 2)]), st.one_of(st.none(), st.sampled_from("ghk")),
              st.floats(1e-3, 1e3)),
    min_size=1, max_size=12,
))
def test_catalog_round_trip_property(entries):
    raw = doc(*[
        {"id": f"f{i:02d}", "group": g, "sites": list(s), "weights": {str(s[0]): w}}
        for i, (s, g, w) in enumerate(entries)
    ])
    cat = validate_catalog(raw)
    assert validate_catalog(json.loads(json.dumps(cat.to_document()))) == cat


def test_bad_json_is_config_error(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text("{not json")
    with pytest.raises(ConfigError):
        load_catalog(p)


# --- matrices ---------------------------------------------------------------


def small_catalog():
    return validate_catalog(doc(
        {"id": "a", "sites": [1, 2]}, {"id": "b", "sites": [1]}, {"id": "c", "sites": [1, 2]},
    ))


def test_site_matrix_reorders_to_canonical():
    cat = small_catalog()
    M = np.array([[3.0, 1.0, 0.5], [1.0, 2.0, 0.2], [0.5, 0.2, 1.0]])  # order c, a, b
    sm = site_matrix(cat, 1, M, ["c", "a", "b"])
    assert sm.feature_order == ("a", "b", "c")
    np.testing.assert_array_equal(sm.matrix, [[2.0, 0.2, 1.0], [0.2, 1.0, 0.5], [1.0, 0.5, 3.0]])


def test_site_matrix_rejects_wrong_features():
    cat = small_catalog()
    with pytest.raises(ConfigError, match="missing"):
        site_matrix(cat, 2, np.eye(2), ["a", "b"])
    with pytest.raises(ConfigError, match="duplicate"):
        site_matrix(cat, 2, np.eye(2), ["a", "a"])
    with pytest.raises(ConfigError):
        SiteMatrix(1, ("a", "b"), np.array([[1.0, 2.0], [0.0, 1.0]]))


def test_matrix_csv_round_trip_is_bit_exact(tmp_path):
    cat = small_catalog()
    rng = np.random.default_rng(0)
    A = rng.standard_normal((3, 3))
    S = A + A.T
    path = tmp_path / "S1.csv"
    write_matrix_csv(path, cat.site_ids(1), S)
    assert path.read_text().splitlines()[0] == "id,a,b,c"
    sm = load_site_matrix(path, cat, 1)
    np.testing.assert_array_equal(sm.matrix, S)
    ids, values = read_matrix_csv(path)
    assert ids == ["a", "b", "c"]


def test_matrix_csv_malformed(tmp_path):
    p = tmp_path / "m.csv"
    p.write_text("id,a,b\na,1,2\nb,2\n")
    with pytest.raises(ConfigError):
        read_matrix_csv(p)
    p.write_text("x,a\na,1\n")
    with pytest.raises(ConfigError):
        read_matrix_csv(p)


def test_embeddings_csv_round_trip(tmp_path):
    rng = np.random.default_rng(1)
    emb = EmbeddingSet(2, {1: ("a", "b"), 2: ("a", "c")}, {1: rng.standard_normal((2, 2)), 2: rng.standard_normal((2, 2))})
    path = tmp_path / "e.csv"
    write_embeddings_csv(path, emb)
    lines = path.read_text().splitlines()
    assert lines[0] == "id,site,d1,d2"
    assert [ln.split(",")[:2] for ln in lines[1:]] == [["a", "1"], ["a", "2"], ["b", "1"], ["c", "2"]]
    back = read_embeddings_csv(path)
    for k in (1, 2):
        np.testing.assert_array_equal(back.vectors[k], emb.vectors[k])


# --- SPPMI -------------------------------------------------------------------


def test_sppmi_hand_value():
    # count(i,j)=8, marginals 8 and 8, total 16 -> log(16*8/64) = log 2
    table = CooccurrenceTable(("i", "j"), np.array([[0.0, 8.0], [8.0, 0.0]]))
    assert table.total == 16 and list(table.marginals) == [8, 8]
    S = sppmi_from_cooccurrence(table, shift=1)
    assert S[0, 1] == pytest.approx(math.log(2), abs=1e-15)
    assert S[0, 0] == 0.0


def test_sppmi_zero_count_and_huge_shift():
    counts = np.array([[2.0, 0.0, 3.0], [0.0, 1.0, 4.0], [3.0, 4.0, 0.0]])
    table = CooccurrenceTable(("a", "b", "c"), counts)
    S = sppmi_from_cooccurrence(table, 1)
    assert S[0, 1] == 0.0
    np.testing.assert_array_equal(sppmi_from_cooccurrence(table, 1e12), 0.0)


def test_sppmi_zero_marginal_rejected():
    table = CooccurrenceTable(("a", "b", "c"), np.array([[0.0, 1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 0.0]]))
    with pytest.raises(ConfigError, match="c has zero marginal"):
        sppmi_from_cooccurrence(table)


def test_cooccurrence_csv(tmp_path):
    p = tmp_path / "co.csv"
    p.write_text("id_a,id_b,count\na,b,8\nb,a,8\n")
    with pytest.raises(ConfigError, match="more than once"):
        read_cooccurrence_csv(p)
    p.write_text("a,b,8\nb,b,2\n")
    t = read_cooccurrence_csv(p)
    assert t.ids == ("a", "b")
    np.testing.assert_array_equal(t.counts, [[0, 8], [8, 2]])


@settings(max_examples=100, deadline=None)
@given(st.integers(2, 7), st.integers(0, 2**32 - 1), st.floats(0.1, 50), st.floats(1.0, 5.0))
def test_sppmi_nonnegative_symmetric_monotone_in_shift(n, seed, shift, factor):
    rng = np.random.default_rng(seed)
    C = rng.poisson(3.0, (n, n)).astype(float)
    C = np.triu(C) + np.triu(C, 1).T
    C[np.arange(n), np.arange(n)] += 1  # positive marginals
    table = CooccurrenceTable(tuple(f"x{i}" for i in range(n)), C)
    S = sppmi_from_cooccurrence(table, shift)
    S2 = sppmi_from_cooccurrence(table, shift * factor)
    assert np.all(S >= 0)
    np.testing.assert_array_equal(S, S.T)
    assert np.all(S2 <= S + 1e-15)
