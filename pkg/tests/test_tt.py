import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tnsketch.errors import InvalidArgumentError
from tnsketch.harness import generate, seed_list, best_tt, tt_svd_oracle
from tnsketch.sketching import Countsketch, KronWithIdentity, SketchParams, rows_sign_regression
from tnsketch.tensor import SparseTensor, outer_product, set_dense_cap
from tnsketch.tt import TensorTrain, extend_embedding, start_embedding, tt_bicriteria, tt_error, tt_materialize

# constants small enough that every sketch genuinely compresses at these sizes
REDUCED = dict(c_cs=0.05, c_sign=0.1, c_sv=1e-4)


def random_tt(dims, r, seed):
    gen = np.random.default_rng(seed)
    ranks = [1] + [r] * (len(dims) - 1) + [1]
    return TensorTrain.from_cores3([gen.standard_normal((ranks[i], n, ranks[i + 1])) for i, n in enumerate(dims)])


def rel_err(tt, A):
    return tt_error(tt, A) / np.linalg.norm(A)


def test_rank_one_recovery():
    gen = np.random.default_rng(0)
    A = outer_product([v / np.linalg.norm(v) for v in gen.standard_normal((3, 6))])
    tt = tt_bicriteria(A, 1, SketchParams(eps=0.5, delta=0.1, q=3, k=1), seed=1)
    assert rel_err(tt, A) <= 1e-8


def test_matrix_case_full_rank():
    A = np.random.default_rng(1).standard_normal((5, 5))
    p = SketchParams(eps=0.5, delta=0.1, q=2, k=5)
    assert rows_sign_regression(p) >= 5
    assert rel_err(tt_bicriteria(A, 5, p, seed=0), A) <= 1e-8


def test_noisy_planted_beats_tt_svd_best_of_five():
    inst = generate("tt", [8] * 4, 2, eta=0.2, seed=11)
    oracle = tt_error(tt_svd_oracle(inst.tensor, 2), inst.tensor)
    for consts in ({}, REDUCED):
        p = SketchParams(eps=0.5, delta=0.1, q=4, k=2, **consts)
        best, runs = best_tt(inst.tensor, 2, p, seed_list(0, 5))
        assert len(runs) == 5
        assert best["error"] <= 1.5 * oracle


def test_sparse_and_dense_inputs_agree():
    A = tt_materialize(random_tt([4, 5, 3], 2, 2))
    p = SketchParams(eps=0.5, delta=0.1, q=3, k=2, **REDUCED)
    a = tt_bicriteria(A, 2, p, seed=3)
    b = tt_bicriteria(SparseTensor.from_dense(A), 2, p, seed=3)
    np.testing.assert_allclose(tt_materialize(a), tt_materialize(b), atol=1e-10)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10**6), st.lists(st.integers(2, 5), min_size=2, max_size=4), st.integers(1, 3),
       st.sampled_from([0.25, 0.5, 1.0]))
def test_rank_contract(seed, dims, k, eps):
    A = np.random.default_rng(seed).standard_normal(dims)
    p = SketchParams(eps=eps, delta=0.1, q=len(dims), k=k, **REDUCED)
    tt = tt_bicriteria(A, k, p, seed=seed)
    t = rows_sign_regression(p)
    assert max(tt.ranks) <= t
    assert tt.info["t"] == t and tt.dims == dims
    assert all(e["applied_rows"] <= max(e["requested_rows"], e["cols"]) for e in tt.info["sketches"])


def test_monotone_eps_on_average():
    errs = {0.25: [], 1.0: []}
    for s in range(20):
        inst = generate("tt", [6] * 4, 2, eta=0.3, seed=100 + s)
        for eps in errs:
            p = SketchParams(eps=eps, delta=0.1, q=4, k=2, c_cs=0.05, c_sign=0.05, c_sv=1e-4)
            errs[eps].append(tt_error(tt_bicriteria(inst.tensor, 2, p, seed=s), inst.tensor))
    lo, hi = np.array(errs[0.25]), np.array(errs[1.0])
    assert lo.mean() <= hi.mean() + 3 * hi.std() / np.sqrt(len(hi))


# embedding

def test_start_embedding_is_direct_sketch():
    U = np.random.default_rng(2).standard_normal((8, 3))
    S = Countsketch(5, 8, 1)
    np.testing.assert_allclose(start_embedding(U, S).W, S.to_dense() @ U)


def test_two_core_chain_matches_explicit_matricization():
    tt = random_tt([6, 7, 5], 2, 4)
    U1, U2 = tt.cores3()[0][0], tt.cores3()[1]
    S1, S2 = Countsketch(4, 6, 1), Countsketch(9, 4 * 7, 2)
    W = extend_embedding(start_embedding(U1, S1), U2, S2).W
    chain = np.tensordot(U1, U2, axes=(1, 0)).reshape(6 * 7, -1)  # M_{1,2}(U1 o U2)
    composed = S2.to_dense() @ KronWithIdentity(S1, 7, "left").to_dense()
    np.testing.assert_allclose(W, composed @ chain, atol=1e-12)


def test_zero_core_gives_zero_embedding():
    E = start_embedding(np.zeros((5, 2)), Countsketch(3, 5, 0))
    assert not E.W.any()
    assert not extend_embedding(E, np.ones((2, 4, 2)), Countsketch(6, 12, 1)).W.any()
    with pytest.raises(InvalidArgumentError):
        extend_embedding(E, np.ones((3, 4, 2)), Countsketch(6, 12, 1))


def test_embedding_soundness():
    eps_step = 0.1
    good = 0
    for seed in range(20):
        dims, r = [8, 8, 8, 8, 8], 3
        cores = random_tt(dims, r, 50 + seed).cores3()
        gen = np.random.default_rng(seed)
        rows = 2000
        E = start_embedding(cores[0][0], Countsketch(rows, 8, seed * 10))
        chain = cores[0][0]
        ok = True
        for i in range(1, 4):
            E = extend_embedding(E, cores[i], Countsketch(rows, rows * 8, seed * 10 + i), eps_step)
            chain = np.tensordot(chain, cores[i], axes=(chain.ndim - 1, 0))
            M = chain.reshape(-1, chain.shape[-1])
            budget = eps_step * (i + 1)
            for x in gen.standard_normal((100, r)):
                ratio = np.linalg.norm(E.W @ x) / np.linalg.norm(M @ x)
                ok &= 1 - budget <= ratio <= 1 + budget
        good += ok
    assert good >= 18


# materialization, error, io

def test_materialize_matrix_case():
    U1, U2 = np.random.default_rng(3).standard_normal((2, 4, 3))
    U2 = U2.T
    np.testing.assert_allclose(tt_materialize(TensorTrain([U1, U2])), U1 @ U2)


def test_error_of_full_rank_tt_svd_and_self():
    A = np.random.default_rng(4).standard_normal((3, 4, 5))
    tt = tt_svd_oracle(A, 100)
    assert tt_error(tt, A) <= 1e-8 * np.linalg.norm(A)
    assert tt_error(tt, tt_materialize(tt)) <= 1e-12


def test_streamed_error_for_sparse_beyond_cap():
    tt = random_tt([6, 6, 6], 2, 5)
    A = SparseTensor([6, 6, 6], [[0, 1, 2], [5, 5, 5], [3, 0, 1]], [1.0, -2.0, 0.5])
    want = tt_error(tt, A)
    set_dense_cap(100)
    try:
        got = tt_error(tt, A)
    finally:
        set_dense_cap(None)
    assert got == pytest.approx(want, rel=1e-10)


def test_invalid_inputs():
    with pytest.raises(InvalidArgumentError):
        TensorTrain([np.ones((2, 3))])
    with pytest.raises(InvalidArgumentError):
        TensorTrain([np.ones((2, 3)), np.ones((2, 2))])
    with pytest.raises(InvalidArgumentError):
        tt_bicriteria(np.ones(4), 1, SketchParams(eps=0.5, delta=0.1, q=1, k=1))


def test_save_load_round_trip(tmp_path):
    tt = random_tt([3, 4, 2], 2, 6)
    tt.save(tmp_path / "m", {"seed": 1})
    back = TensorTrain.load(tmp_path / "m")
    assert back.ranks == tt.ranks
    np.testing.assert_allclose(tt_materialize(back), tt_materialize(tt), rtol=1e-15)


def test_replay_determinism():
    A = np.random.default_rng(7).standard_normal((5, 6, 4, 3))
    p = SketchParams(eps=0.5, delta=0.1, q=4, k=2, **REDUCED)
    a, b = tt_bicriteria(A, 2, p, seed=9), tt_bicriteria(A, 2, p, seed=9)
    assert tt_error(a, A) == tt_error(b, A)
    assert all(np.array_equal(x, y) for x, y in zip(a.cores, b.cores))
