from itertools import combinations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import alternating_groups, binary_matrices, make_network
from exceptions import UnknownCodeError
from motif_counter import (
    count_motifs,
    motif_decompose,
    motif_frame,
    motif_node,
    motif_node_decompose,
    motif_total,
)
from taxonomy import CEE, EU15, CountryGroups


def brute_force_total(matrix):
    matrix = np.asarray(matrix)
    C, S = matrix.shape
    return sum(1 for s in range(S) for a, b in combinations(range(C), 2) if matrix[a, s] and matrix[b, s])


def test_total_from_ubiquities():
    # ubiquities 3, 2, 1
    matrix = [[1, 1, 1], [1, 1, 0], [1, 0, 0]]
    assert motif_total(make_network(matrix)) == 4


def test_empty_network_has_no_motifs():
    assert motif_total(make_network(np.zeros((3, 4)))) == 0


def test_total_matches_pair_enumeration(rng):
    matrix = rng.integers(0, 2, size=(6, 8))
    assert motif_total(make_network(matrix)) == brute_force_total(matrix)


def test_decomposition_hand_count():
    net = make_network([[1], [1], [1]], countries=["AUT", "DEU", "POL"])
    assert motif_decompose(net, CountryGroups.default()).as_tuple() == (1, 0, 2)


def test_single_group_has_no_external_motifs(rng):
    matrix = rng.integers(0, 2, size=(5, 6))
    countries = ["AUT", "BEL", "DEU", "FRA", "ITA"]
    decomposition = motif_decompose(make_network(matrix, countries), CountryGroups.default())
    assert decomposition.external == 0
    assert decomposition.internal[EU15] == motif_total(make_network(matrix))
    assert decomposition.internal[CEE] == 0


def test_unlabeled_country_raises():
    net = make_network([[1], [1]], countries=["AUT", "USA"])
    with pytest.raises(UnknownCodeError):
        motif_decompose(net, CountryGroups.default())
    with pytest.raises(UnknownCodeError):
        motif_node_decompose(net, CountryGroups.default())


def test_node_counts():
    net = make_network([[1, 0], [1, 1], [1, 0]])
    node = motif_node(net)
    assert node[:, 0].tolist() == [2, 2, 2]
    assert node[:, 1].tolist() == [0, 0, 0]


def test_node_decomposition_hand_count():
    net = make_network([[1, 1], [1, 0], [1, 0]], countries=["AUT", "DEU", "POL"])
    internal, external = motif_node_decompose(net, CountryGroups.default())
    assert (internal[0, 0], external[0, 0]) == (1, 1)
    assert (internal[2, 0], external[2, 0]) == (0, 2)
    # lone specialist
    assert (internal[0, 1], external[0, 1]) == (0, 0)


@settings(max_examples=1000, deadline=None)
@given(binary_matrices())
def test_motif_identities(matrix):
    net = make_network(matrix)
    groups = alternating_groups(net.countries)
    counts = count_motifs(net, groups)
    labels = np.array(groups.label_countries(net.countries))

    assert counts.external + sum(counts.internal.values()) == counts.total
    assert counts.node.sum() == 2 * counts.total
    assert (counts.node[net.matrix == 0] == 0).all()
    assert (counts.node >= 0).all()
    np.testing.assert_array_equal(counts.node_internal + counts.node_external, counts.node)
    for group in (EU15, CEE):
        assert counts.node_internal[labels == group].sum() == 2 * counts.internal[group]
    assert counts.node_external.sum() == 2 * counts.external


@settings(max_examples=50, deadline=None)
@given(binary_matrices(min_rows=2, min_cols=1), st.data())
def test_adding_a_link_never_decreases_counts(matrix, data):
    zeros = np.argwhere(matrix == 0)
    if len(zeros) == 0:
        return
    c, s = zeros[data.draw(st.integers(0, len(zeros) - 1))]
    grown = matrix.copy()
    grown[c, s] = 1
    before = count_motifs(make_network(matrix), alternating_groups(make_network(matrix).countries))
    after = count_motifs(make_network(grown), alternating_groups(make_network(grown).countries))
    assert after.total >= before.total
    assert after.external >= before.external
    for group in before.internal:
        assert after.internal[group] >= before.internal[group]
    assert (after.node >= before.node).all()


@settings(max_examples=50, deadline=None)
@given(binary_matrices(min_rows=2), st.randoms(use_true_random=False))
def test_relabeling_within_group_keeps_counts(matrix, random):
    net = make_network(matrix)
    groups = alternating_groups(net.countries)
    eu15_rows = [i for i in range(len(net.countries)) if i % 2 == 0]
    shuffled = eu15_rows[:]
    random.shuffle(shuffled)
    order = list(range(len(net.countries)))
    for src, dst in zip(eu15_rows, shuffled):
        order[dst] = src
    permuted = make_network(matrix[order], net.countries)
    assert motif_decompose(permuted, groups) == motif_decompose(net, groups)
    assert motif_total(permuted) == motif_total(net)


def test_motif_frame_layout(rng):
    matrix = rng.integers(0, 2, size=(4, 3))
    net = make_network(matrix, countries=["AUT", "CZE", "DEU", "POL"], year=2005)
    counts = count_motifs(net, CountryGroups.default())
    frame = motif_frame(counts)
    assert list(frame.columns) == ["year", "level", "group", "country", "sector", "scope", "count"]
    head = frame[frame["level"] != "node"]
    assert head["scope"].tolist() == ["overall", "internal", "internal", "external"]
    assert head["group"].tolist()[1:3] == [CEE, EU15]
    assert len(frame[frame["level"] == "node"]) == 3 * 12
    assert frame.loc[0, "count"] == counts.total
    assert len(motif_frame(counts, include_nodes=False)) == 4
