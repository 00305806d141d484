import itertools
import json

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from ranet.candidate_map import (
    InitKind,
    build_candidate_map,
    candidate_spans,
    candidate_to_span,
    init_choice_features,
)
from ranet.errors import InvalidArgument


def brute_sparse_valid(T):
    cells = set()
    for i in range(T):
        for j in range(i, T):
            d = j - i + 1
            sigma = 2 ** max(0, int(np.ceil(np.log2(d / 16))))
            if i % sigma == 0 and (j + 1) % sigma == 0:
                cells.add((i, j))
    return cells


def test_dense_T3_enumeration():
    cmap = build_candidate_map(3, "dense")
    assert cmap.N == 6
    assert set(cmap.pairs()) == {(0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2)}


def test_dense_T16_count():
    assert build_candidate_map(16).N == 136


@pytest.mark.parametrize("T", [33, 40, 64, 128])
def test_sparse_matches_brute_force(T):
    cmap = build_candidate_map(T, "sparse")
    assert set(cmap.pairs()) == brute_sparse_valid(T)
    assert cmap.N == len(brute_sparse_valid(T))


def test_sparse_T64_count_is_smaller_than_dense():
    cmap = build_candidate_map(64, "sparse")
    assert cmap.N == len(brute_sparse_valid(64))
    assert cmap.N < 64 * 65 // 2


@pytest.mark.parametrize("T", [0, -3])
def test_invalid_T(T):
    with pytest.raises(InvalidArgument):
        build_candidate_map(T)


def test_unknown_strategy():
    with pytest.raises(InvalidArgument):
        build_candidate_map(4, "banded")


@pytest.mark.parametrize("T,strategy", [(1, "dense"), (7, "dense"), (16, "dense"), (40, "sparse")])
def test_invariants(T, strategy):
    cmap = build_candidate_map(T, strategy)
    i, j = np.nonzero(cmap.valid)
    assert np.all(i <= j)
    assert not np.any(np.tril(cmap.valid, k=-1))
    for k in range(cmap.N):
        assert cmap.pair_to_flat(*cmap.flat_to_pair(k)) == k
    for a, b in cmap.pairs():
        assert cmap.flat_to_pair(cmap.pair_to_flat(a, b)) == (a, b)


def test_invalid_cell_lookup():
    cmap = build_candidate_map(4)
    with pytest.raises(InvalidArgument):
        cmap.pair_to_flat(2, 1)
    with pytest.raises(InvalidArgument):
        cmap.flat_to_pair(cmap.N)


def test_json_roundtrip():
    cmap = build_candidate_map(5)
    d = json.loads(cmap.to_json())
    assert d["T"] == 5 and d["strategy"] == "dense"
    assert [tuple(c) for c in d["valid_cells"]] == cmap.pairs()


@pytest.mark.parametrize("T,cell,duration,expected", [
    (4, (0, 3), 8.0, (0.0, 8.0)),
    (4, (1, 1), 8.0, (2.0, 4.0)),
    (16, (2, 5), 32.0, (4.0, 12.0)),
])
def test_candidate_to_span(T, cell, duration, expected):
    span = candidate_to_span(build_candidate_map(T), *cell, duration)
    assert (span.t_s, span.t_e) == pytest.approx(expected)
    i, j = cell
    assert span.length == pytest.approx((j - i + 1) * duration / T)


def test_candidate_to_span_errors():
    cmap = build_candidate_map(4)
    with pytest.raises(InvalidArgument):
        candidate_to_span(cmap, 3, 1, 8.0)
    with pytest.raises(InvalidArgument):
        candidate_to_span(cmap, 0, 1, 0.0)


def test_candidate_spans_vectorised():
    cmap = build_candidate_map(6)
    spans = candidate_spans(cmap, 12.0)
    for k, (i, j) in enumerate(cmap.pairs()):
        s = candidate_to_span(cmap, i, j, 12.0)
        assert tuple(spans[k]) == pytest.approx((s.t_s, s.t_e))


V2 = torch.tensor([[1.0, 0.0], [0.0, 1.0]])


def test_concatenation_example():
    cmap = build_candidate_map(2)
    out = init_choice_features(V2, cmap, "concatenation")
    assert out.shape == (4, 3)
    assert out[:, cmap.pair_to_flat(0, 1)].tolist() == [1.0, 0.0, 0.0, 1.0]


def test_addition_example():
    cmap = build_candidate_map(2)
    out = init_choice_features(V2, cmap, InitKind.ADDITION)
    assert out[:, cmap.pair_to_flat(0, 1)].tolist() == [1.0, 1.0]


def loop_oracle(v, cmap, psi):
    cols = []
    for i, j in cmap.pairs():
        if psi == "pooling":
            cols.append([max(v[c, i:j + 1]) for c in range(v.shape[0])])
        elif psi == "sampling":
            cols.append([sum(v[c, i:j + 1]) / (j - i + 1) for c in range(v.shape[0])])
        elif psi == "addition":
            cols.append([v[c, i] + v[c, j] for c in range(v.shape[0])])
        else:
            cols.append([v[c, i] for c in range(v.shape[0])] + [v[c, j] for c in range(v.shape[0])])
    return np.array(cols).T


def test_pooling_random_4x8_cell_2_5():
    rng = np.random.default_rng(3)
    v = rng.standard_normal((4, 8))
    cmap = build_candidate_map(8)
    out = init_choice_features(torch.as_tensor(v), cmap, "pooling").numpy()
    expected = [max(v[c, k] for k in range(2, 6)) for c in range(4)]
    np.testing.assert_array_equal(out[:, cmap.pair_to_flat(2, 5)], expected)


@pytest.mark.parametrize("psi", [k.value for k in InitKind])
@pytest.mark.parametrize("T,strategy", [(8, "dense"), (34, "sparse")])
def test_all_operators_match_loop_oracle(psi, T, strategy):
    rng = np.random.default_rng(T)
    v = rng.standard_normal((3, T))
    cmap = build_candidate_map(T, strategy)
    out = init_choice_features(torch.as_tensor(v), cmap, psi).numpy()
    np.testing.assert_allclose(out, loop_oracle(v, cmap, psi), rtol=1e-12, atol=1e-12)


def test_batched_input():
    v = torch.randn(2, 3, 5, dtype=torch.float64)
    cmap = build_candidate_map(5)
    for psi in InitKind:
        batched = init_choice_features(v, cmap, psi)
        for b in range(2):
            torch.testing.assert_close(batched[b], init_choice_features(v[b], cmap, psi))


def test_shape_mismatch():
    with pytest.raises(InvalidArgument):
        init_choice_features(torch.zeros(3, 5), build_candidate_map(4), "pooling")


@settings(max_examples=30, deadline=None)
@given(T=st.integers(1, 10), C=st.integers(1, 5), seed=st.integers(0, 1000))
def test_single_snippet_candidates(T, C, seed):
    v = torch.as_tensor(np.random.default_rng(seed).standard_normal((C, T)))
    cmap = build_candidate_map(T)
    diag = [cmap.pair_to_flat(i, i) for i in range(T)]
    pool = init_choice_features(v, cmap, "pooling")[:, diag]
    samp = init_choice_features(v, cmap, "sampling")[:, diag]
    add = init_choice_features(v, cmap, "addition")[:, diag]
    cat = init_choice_features(v, cmap, "concatenation")[:, diag]
    torch.testing.assert_close(pool, v)
    torch.testing.assert_close(samp, v)
    torch.testing.assert_close(add, 2 * v)
    torch.testing.assert_close(cat, torch.cat([v, v]))


@settings(max_examples=30, deadline=None)
@given(T=st.integers(1, 8), C=st.integers(2, 6), seed=st.integers(0, 1000), psi=st.sampled_from(list(InitKind)))
def test_channel_permutation_equivariance(T, C, seed, psi):
    rng = np.random.default_rng(seed)
    v = torch.as_tensor(rng.standard_normal((C, T)))
    perm = torch.as_tensor(rng.permutation(C))
    cmap = build_candidate_map(T)
    out = init_choice_features(v, cmap, psi)
    out_perm = init_choice_features(v[perm], cmap, psi)
    if psi is InitKind.CONCATENATION:
        expected = torch.cat([out[:C][perm], out[C:][perm]])
    else:
        expected = out[perm]
    torch.testing.assert_close(out_perm, expected)


def test_dense_count_formula():
    for T in range(1, 20):
        assert build_candidate_map(T).N == T * (T + 1) // 2
        assert set(build_candidate_map(T).pairs()) == set(
            (i, j) for i, j in itertools.product(range(T), repeat=2) if i <= j
        )
