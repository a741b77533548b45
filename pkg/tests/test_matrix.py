import random

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sdde.core import Topology, ValidationError
from sdde.matrix import (
    MatrixMarketError, RowPartition, SparseMatrixCsr, derive_instance, generate_synthetic,
    instance_from_matrix, iter_entries, parse_matrix_market,
)

from conftest import DATA, direct_scan, fig_instance, recount

CORPUS = sorted(DATA.glob("*.mtx"))


def test_parse_pattern_general():
    m = parse_matrix_market("%%MatrixMarket matrix coordinate pattern general\n4 4 3\n1 1\n3 1\n3 4\n")
    assert m.row_ptr.tolist() == [0, 1, 1, 3, 3]
    assert m.col_idx.tolist() == [0, 0, 3]
    assert m.values is None


def test_parse_symmetric_expansion():
    m = parse_matrix_market("%%MatrixMarket matrix coordinate real symmetric\n2 2 2\n1 1 5\n2 1 3\n")
    assert sorted(iter_entries(m)) == [(0, 0), (0, 1), (1, 0)]
    assert m.values.tolist() == [5.0, 3.0, 3.0]


def test_parse_duplicates_summed():
    m = parse_matrix_market(DATA / "duplicates.mtx")
    dense = np.zeros((5, 5), dtype=int)
    for i in range(5):
        for k in range(m.row_ptr[i], m.row_ptr[i + 1]):
            dense[i, m.col_idx[k]] = m.values[k]
    assert dense[0, 3] == 5 and dense[2, 4] == 5 and dense[4, 2] == 8


@pytest.mark.parametrize("path", CORPUS, ids=lambda p: p.name)
def test_corpus_nnz_recount(path):
    m = parse_matrix_market(path)
    expected, _ = recount(path)
    assert m.nnz == expected


@pytest.mark.parametrize("path", CORPUS, ids=lambda p: p.name)
@pytest.mark.parametrize("procs", [1, 3, 4, 7])
def test_corpus_derive_matches_direct_scan(path, procs):
    m = parse_matrix_market(path)
    procs = min(procs, m.n_rows + 2)
    inst = derive_instance(m, RowPartition(m.n_rows, procs), Topology(procs))
    assert inst.recvs == direct_scan(m, procs)


@pytest.mark.parametrize("path", CORPUS, ids=lambda p: p.name)
def test_corpus_round_trip(path):
    m = parse_matrix_market(path)
    assert parse_matrix_market(m.to_matrix_market()) == m


@pytest.mark.parametrize("text, line", [
    ("%%MatrixMarket matrix array real general\n2 2\n1\n2\n3\n4\n", 1),
    ("%%NotMatrixMarket\n", 1),
    ("%%MatrixMarket matrix coordinate real general\n2 2 1\n3 1 1.0\n", 3),
    ("%%MatrixMarket matrix coordinate real general\n2 2 3\n1 1 1.0\n2 2 1.0\n", 4),
    ("%%MatrixMarket matrix coordinate real general\n% c\n2 x 1\n", 3),
    ("%%MatrixMarket matrix coordinate real general\n2 2 1\n1 1\n", 3),
])
def test_parse_errors_carry_line(text, line):
    with pytest.raises(MatrixMarketError) as err:
        parse_matrix_market(text)
    assert err.value.line == line


def test_fig_matrix_dependency():
    m = parse_matrix_market(DATA / "fig_partition.mtx")
    inst = instance_from_matrix(m, Topology(4))
    assert inst.recvs[2] == ((0, (0,)), (3, (3,)))
    assert inst.recvs == fig_instance().recvs


def test_diagonal_gives_empty_instance():
    m = parse_matrix_market(DATA / "diag.mtx")
    for p in (1, 2, 4, 6, 9):
        assert instance_from_matrix(m, Topology(p)).n_messages() == 0


def test_non_square_rejected():
    m = parse_matrix_market("%%MatrixMarket matrix coordinate pattern general\n2 3 1\n1 3\n")
    with pytest.raises(ValidationError, match="square"):
        instance_from_matrix(m, Topology(2))


@given(st.integers(0, 200), st.integers(1, 40))
def test_partition_covers_rows(n, p):
    part = RowPartition(n, p)
    rows = [r for q in range(p) for r in part.rows(q)]
    assert rows == list(range(n))
    for q in range(p):
        assert len(part.rows(q)) in (n // p, -(-n // p))
        for r in part.rows(q):
            assert part.owner(r) == q


def _random_matrix(rng, n, density):
    rows, cols = [], []
    for i in range(n):
        for j in range(n):
            if rng.random() < density:
                rows.append(i)
                cols.append(j)
    return SparseMatrixCsr.from_coo(n, n, rows, cols)


def test_random_matrix_derive_matches_scan():
    rng = random.Random(3)
    m = _random_matrix(rng, 60, 0.05)
    inst = instance_from_matrix(m, Topology(8))
    assert inst.recvs == direct_scan(m, 8)
    for p, spec in enumerate(inst.recvs):
        assert all(q != p for q, _ in spec)


@given(st.integers(1, 25), st.integers(1, 9), st.integers(0, 2**16))
@settings(max_examples=40, deadline=None)
def test_derive_property(n, p, seed):
    m = _random_matrix(random.Random(seed), n, 0.2)
    assert instance_from_matrix(m, Topology(p)).recvs == direct_scan(m, p)
    assert parse_matrix_market(m.to_matrix_market()) == m


def test_synthetic_ring():
    inst = generate_synthetic("ring", Topology(4))
    for p in range(4):
        assert len(inst.recvs[p]) == 1
        src, idx = inst.recvs[p][0]
        assert src == (p - 1) % 4 and len(idx) == 1


def test_synthetic_region_dense_next():
    topo = Topology(32, 8)
    inst = generate_synthetic("region-dense", topo)
    for p in range(32):
        srcs = [q for q, _ in inst.recvs[p]]
        assert srcs == list(topo.region_members((topo.region(p) + 1) % 4))


def test_synthetic_random_deterministic():
    topo = Topology(16, 4)
    a = generate_synthetic("random", topo, seed=7, avg_degree=3)
    b = generate_synthetic("random", topo, seed=7, avg_degree=3)
    assert a == b
    assert all(len(spec) == 3 for spec in a.recvs)


def test_synthetic_unknown_kind():
    with pytest.raises(ValidationError):
        generate_synthetic("mesh", Topology(4))
