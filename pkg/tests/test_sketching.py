import math

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

from tnsketch import rng
from tnsketch.errors import InvalidArgumentError
from tnsketch.sketching import (
    Composed, Countsketch, GaussianK, KronWithIdentity, Sign, SketchParams, apply_group, apply_left, apply_mode,
    countsketch_or_identity, identity, ledger_entry, rows_countsketch_affine, rows_left_countsketch,
    rows_sign_regression, rows_subtree_sketch, rows_tt_stage, sketch_from_json, tt_sketch, tt_sketch_apply_dense,
    tt_sketch_apply_tt, tt_sketch_calibrated,
)
from tnsketch.tensor import SparseTensor, matricize_group
from tnsketch.tt import TensorTrain, tt_materialize


def P(**kw):
    base = dict(eps=0.5, delta=0.1, q=4, k=2)
    base.update(kw)
    return SketchParams(**base)


# size formulas

def test_countsketch_rows_examples():
    assert rows_countsketch_affine(P(eps=1, delta=1, c_cs=1), 1) == 1
    assert rows_countsketch_affine(P(eps=0.5, delta=0.5), 2) == math.ceil(4 * 32)
    assert rows_countsketch_affine(P(eps=0.3, delta=0.1), 3) == 4000


def test_sign_rows_examples():
    assert rows_sign_regression(P(q=1, k=1, eps=1, delta=0.37, c_sign=1)) == 1


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 6), st.integers(1, 4), st.floats(0.05, 1), st.floats(0.01, 0.9))
def test_sign_rows_monotone(q, k, eps, delta):
    t = rows_sign_regression(P(q=q, k=k, eps=eps, delta=delta))
    assert rows_sign_regression(P(q=q + 1, k=k, eps=eps, delta=delta)) >= t
    assert rows_sign_regression(P(q=q, k=k + 1, eps=eps, delta=delta)) >= t
    assert rows_sign_regression(P(q=q, k=k, eps=eps / 2, delta=delta)) >= t


def test_sign_rows_grow_logarithmically_in_delta():
    # equal steps in log(1/delta) give equal increments (up to ceiling)
    ts = [rows_sign_regression(P(q=2, k=1, delta=0.5 * math.e**-j, c_sign=10)) for j in range(3)]
    d1, d2 = ts[1] - ts[0], ts[2] - ts[1]
    assert abs(d1 - d2) <= 1
    assert d1 == pytest.approx(10 * 2 / 0.5, abs=1)


def test_other_row_formulas():
    p = P(eps=0.5, delta=0.1, q=3, k=2, c_cs=1, c_sv=1)
    assert rows_left_countsketch(p) == math.ceil(27 * 4 / 0.025)
    assert rows_subtree_sketch(p, t=5, d=2) == math.ceil(81 * 25 * 8 / 0.025)
    assert rows_tt_stage(p) == math.ceil(1 / ((0.5 / math.sqrt(6)) ** 2 * 0.1))


def test_params_validation():
    for bad in [dict(eps=0), dict(delta=1.5), dict(k=0), dict(c_cs=-1)]:
        with pytest.raises(InvalidArgumentError):
            P(**bad)


# sketch ops

def test_countsketch_basis_vectors():
    S = Countsketch(7, 30, seed=5)
    D = S.to_dense()
    for j in range(30):
        e = np.zeros(30)
        e[j] = 1
        y = S.apply(e)
        assert np.count_nonzero(y) == 1 and abs(y).max() == 1
        np.testing.assert_array_equal(y, D[:, j])


def test_sign_and_gaussian_entries():
    D = Sign(9, 40, seed=2).to_dense()
    np.testing.assert_allclose(np.abs(D), 1 / 3)
    G = GaussianK(4, 20000, seed=3).to_dense()
    assert G.var() == pytest.approx(0.25, rel=0.03)
    assert abs(G.mean()) < 0.01


def test_empty_composition_is_identity():
    M = np.random.default_rng(0).standard_normal((6, 3))
    np.testing.assert_array_equal(Composed((), 6).apply(M), M)
    np.testing.assert_array_equal(identity(6).to_dense(), np.eye(6))


def test_composition_chains_and_rejects_mismatch():
    S = Composed((Countsketch(10, 30, 1), Sign(4, 10, 2)))
    np.testing.assert_allclose(S.to_dense(), Sign(4, 10, 2).to_dense() @ Countsketch(10, 30, 1).to_dense())
    with pytest.raises(InvalidArgumentError):
        Composed((Countsketch(10, 30, 1), Sign(4, 11, 2)))


@pytest.mark.parametrize("inner", [Countsketch(3, 5, 1), Sign(2, 5, 4), GaussianK(2, 5, 9)])
def test_kron_with_identity(inner):
    d = 3
    X = np.random.default_rng(1).standard_normal((5, d))
    # left: (S (x) I_d) vec(X) = vec(S X) in row-major vectorization
    L = KronWithIdentity(inner, d, "left")
    np.testing.assert_allclose(L.apply(X.reshape(-1)), (inner.to_dense() @ X).reshape(-1), atol=1e-12)
    np.testing.assert_allclose(L.to_dense(), np.kron(inner.to_dense(), np.eye(d)), atol=1e-12)
    R = KronWithIdentity(inner, d, "right")
    np.testing.assert_allclose(R.to_dense(), np.kron(np.eye(d), inner.to_dense()), atol=1e-12)
    Y = np.random.default_rng(2).standard_normal((d, 5))
    np.testing.assert_allclose(R.apply(Y.reshape(-1)), (Y @ inner.to_dense().T).reshape(-1), atol=1e-12)
    assert L.shape == (inner.rows * d, inner.cols * d)


def test_serialization_round_trip():
    S = Composed((KronWithIdentity(Countsketch(3, 5, 1), 2, "right"), Sign(4, 6, 2), GaussianK(2, 4, 3)))
    T = sketch_from_json(S.to_json())
    assert T == S
    np.testing.assert_array_equal(T.to_dense(), S.to_dense())
    assert "rows" in Countsketch(3, 5, 1).to_json()


def test_determinism():
    x = np.random.default_rng(3).standard_normal(50)
    for make in (lambda: Countsketch(8, 50, 77), lambda: Sign(8, 50, 77), lambda: GaussianK(3, 50, 77)):
        assert np.array_equal(make().apply(x), make().apply(x))
    assert not np.array_equal(Countsketch(8, 50, 77).apply(x), Countsketch(8, 50, 78).apply(x))


def test_identity_substitution():
    assert countsketch_or_identity(10, 10, 1).is_identity
    assert isinstance(countsketch_or_identity(9, 10, 1), Countsketch)
    e = ledger_entry("S", countsketch_or_identity(50, 10, 1), 50)
    assert e == {"name": "S", "kind": "identity", "requested_rows": 50, "applied_rows": 10, "cols": 10}


def test_unbiased_norm():
    x = np.random.default_rng(4).standard_normal(40)
    seeds = range(10000)
    for make in (lambda s: Countsketch(6, 40, s), lambda s: Sign(6, 40, s)):
        mean = np.mean([np.sum(make(s).apply(x) ** 2) for s in seeds])
        assert mean == pytest.approx(np.sum(x * x), rel=0.02)


def test_countsketch_subspace_embedding():
    p = SketchParams(eps=0.3, delta=0.1, q=1, k=1)
    r = rows_countsketch_affine(p, 3)
    n = 200
    U, _ = np.linalg.qr(np.random.default_rng(5).standard_normal((n, 3)))
    ok = 0
    for s in range(200):
        sv = np.linalg.svd(Countsketch(r, n, s).apply(U), compute_uv=False)
        ok += sv.min() >= 0.7 and sv.max() <= 1.3
    assert ok >= 180


def test_composition_distortion_bounded_by_stages():
    gen = np.random.default_rng(6)
    stages = (Countsketch(60, 200, 1), Countsketch(30, 60, 2), Sign(20, 30, 3))
    S = Composed(stages)
    for _ in range(50):
        y = gen.standard_normal(200)
        bound = 1.0
        for st_ in stages:
            z = st_.apply(y)
            bound *= 1 + abs(np.sum(z * z) / np.sum(y * y) - 1)
            y = z
        x = gen.standard_normal(200)
        # re-run on x: the composed distortion is the product of stage ratios
        ratios = []
        w = x
        for st_ in stages:
            z = st_.apply(w)
            ratios.append(np.sum(z * z) / np.sum(w * w))
            w = z
        total = np.sum(S.apply(x) ** 2) / np.sum(x * x)
        assert abs(total - 1) <= math.prod(1 + abs(r - 1) for r in ratios) - 1 + 1e-12


# application to tensors

def test_apply_mode_identity_and_vector():
    A = np.random.default_rng(7).standard_normal((3, 4, 2))
    np.testing.assert_array_equal(apply_mode(identity(4), A, 1), A)
    v = np.random.default_rng(8).standard_normal(9)
    S = Sign(4, 9, 1)
    np.testing.assert_allclose(apply_mode(S, v, 0), apply_left(S, v))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10**6), st.data())
def test_apply_group_matches_matricize_pipeline(seed, data):
    gen = np.random.default_rng(seed)
    dims = data.draw(st.lists(st.integers(1, 4), min_size=2, max_size=4))
    A = gen.standard_normal(dims)
    modes = data.draw(st.permutations(range(len(dims))).map(lambda p: list(p[: max(1, len(p) - 1)])))
    n = math.prod(dims[m] for m in modes)
    for S in (Countsketch(3, n, seed), Sign(2, n, seed)):
        got = apply_group(S, A, modes)
        rest = [m for m in range(len(dims)) if m not in modes]
        Y = (S.to_dense() @ matricize_group(A, modes)).reshape([S.rows] + [dims[m] for m in rest])
        pos = sum(1 for m in rest if m < modes[0])
        np.testing.assert_allclose(got, np.moveaxis(Y, 0, pos), atol=1e-12)
        sparse = apply_group(S, SparseTensor.from_dense(A), modes)
        sparse = sparse.to_dense() if isinstance(sparse, SparseTensor) else sparse
        np.testing.assert_allclose(sparse, got, atol=1e-12)


def test_countsketch_keeps_sparse_input_sparse():
    A = SparseTensor([50, 50, 50], [[1, 2, 3], [4, 5, 6]], [1.0, 2.0])
    out = apply_group(Composed((Countsketch(20, 2500, 1), Countsketch(5, 20, 2))), A, [0, 1])
    assert isinstance(out, SparseTensor) and out.dims == (5, 50)
    M = sp.csr_array(np.eye(50)[:, :3])
    assert sp.issparse(apply_left(Countsketch(7, 50, 3), M))


def test_apply_group_size_mismatch():
    with pytest.raises(InvalidArgumentError):
        apply_group(Countsketch(2, 5, 1), np.ones((2, 3)), [0])


# tensor-train sketch

def _random_tt(dims, r, seed):
    gen = np.random.default_rng(seed)
    ranks = [1] + [r] * (len(dims) - 1) + [1]
    return TensorTrain.from_cores3([gen.standard_normal((ranks[i], n, ranks[i + 1])) for i, n in enumerate(dims)])


def test_tt_sketch_identity_stages_on_matrix():
    tt = _random_tt([3, 4], 2, 0)
    L = tt_sketch([3, 4], [3, 12], seed=1)
    A = tt_materialize(tt)
    # stage-by-stage dense oracle
    S1, S2 = (s.to_dense() for s in L.stages)
    X = S1 @ A  # (3, 4)
    want = S2 @ X.reshape(-1)
    np.testing.assert_allclose(tt_sketch_apply_tt(L, tt), want, atol=1e-12)
    np.testing.assert_allclose(tt_sketch_apply_dense(L, A), want, atol=1e-12)


@pytest.mark.parametrize("dims", [[2, 3, 4], [8, 8, 8, 8], [5, 2, 6, 3, 2]])
def test_tt_sketch_cross_oracle(dims):
    tt = _random_tt(dims, 2, 3)
    L = tt_sketch(dims, 7, seed=4)
    got = tt_sketch_apply_tt(L, tt)
    ref = tt_sketch_apply_dense(L, tt_materialize(tt))
    assert np.linalg.norm(got - ref) <= 1e-10 * max(1.0, np.linalg.norm(ref))
    sparse_ref = tt_sketch_apply_dense(L, SparseTensor.from_dense(tt_materialize(tt)))
    np.testing.assert_allclose(sparse_ref, ref, atol=1e-10)


def test_tt_sketch_zero_and_single_stage():
    tt = TensorTrain.from_cores3([np.zeros((1, 3, 2)), np.zeros((2, 4, 1))])
    assert not tt_sketch_apply_tt(tt_sketch([3, 4], 2, 0), tt).any()
    assert not tt_sketch_apply_dense(tt_sketch([3, 4], 2, 0), np.zeros((3, 4))).any()
    v = np.random.default_rng(9).standard_normal(6)
    L = tt_sketch([6], 3, 5)
    np.testing.assert_allclose(tt_sketch_apply_dense(L, v), apply_left(L.stages[0], v))


def test_tt_sketch_calibrated_rows():
    p = SketchParams(eps=0.3, delta=0.1, q=4, k=2)
    L = tt_sketch_calibrated([8] * 4, p, seed=0)
    assert all(s.rows == rows_tt_stage(p) for s in L.stages)
    assert L.dims == [8] * 4


def test_derived_seeds_are_distinct_and_stable():
    a = rng.derive_seed(1, "tt", "S", 2)
    assert a == rng.derive_seed(1, "tt", "S", 2)
    assert len({rng.derive_seed(1, "tt", "S", i) for i in range(100)}) == 100
    assert a != rng.derive_seed(2, "tt", "S", 2)
    u = rng.uniform01(3, np.arange(100000))
    assert 0 < u.min() and u.max() < 1 and abs(u.mean() - 0.5) < 0.01
    z = rng.normal(3, np.arange(100000))
    assert abs(z.std() - 1) < 0.01
