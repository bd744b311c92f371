"""Tensor trains and the sketched right-to-left bicriteria sweep."""

import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from . import rng
from .errors import InvalidArgumentError
from .linalg import pinv, row_basis
from .sketching import (SketchOp, SketchParams, apply_group, countsketch_or_identity, ledger_entry,
                        rows_countsketch_affine, rows_left_countsketch, rows_sign_regression,
                        sign_or_identity)
from .tensor import SparseTensor, as_dense, as_sparse, atomic_write_text, check_dense, read_tns, write_tns


class TensorTrain:
    """Cores U^1 (n1 x r1), U^i (r_{i-1} x n_i x r_i), U^q (r_{q-1} x n_q)."""

    def __init__(self, cores):
        cores = [np.asarray(c, dtype=np.float64) for c in cores]
        if len(cores) < 2:
            raise InvalidArgumentError("a tensor train needs at least two cores")
        if cores[0].ndim != 2 or cores[-1].ndim != 2 or any(c.ndim != 3 for c in cores[1:-1]):
            raise InvalidArgumentError("cores must be 2-D at the ends and 3-D inside")
        c3 = self._as3(cores)
        for a, b in zip(c3, c3[1:]):
            if a.shape[2] != b.shape[0]:
                raise InvalidArgumentError(f"adjacent core ranks disagree: {a.shape} then {b.shape}")
        self.cores = cores
        self.info: dict = {}

    @staticmethod
    def _as3(cores):
        out = [cores[0][None]]
        out += list(cores[1:-1])
        out.append(cores[-1][:, :, None])
        return out

    @classmethod
    def from_cores3(cls, cores3) -> "TensorTrain":
        cores = [np.asarray(cores3[0])[0]] + list(cores3[1:-1]) + [np.asarray(cores3[-1])[:, :, 0]]
        return cls(cores)

    def cores3(self) -> list[np.ndarray]:
        """All cores as (r_prev, n, r_next) arrays with boundary ranks 1."""
        return self._as3(self.cores)

    @property
    def q(self) -> int:
        return len(self.cores)

    @property
    def dims(self) -> list[int]:
        return [c.shape[1] for c in self.cores3()]

    @property
    def ranks(self) -> list[int]:
        return [c.shape[2] for c in self.cores3()[:-1]]

    def __repr__(self):
        return f"TensorTrain(dims={self.dims}, ranks={self.ranks})"

    def norm(self) -> float:
        G = np.ones((1, 1))
        for U in self.cores3():
            G = np.einsum("ab,axc,bxd->cd", G, U, U)
        return float(np.sqrt(max(G[0, 0], 0.0)))

    def values_at(self, coords: np.ndarray) -> np.ndarray:
        coords = np.asarray(coords, dtype=np.int64)
        v = np.ones((coords.shape[0], 1))
        for m, U in enumerate(self.cores3()):
            v = np.einsum("ea,aeb->eb", v, U[:, coords[:, m], :])
        return v[:, 0]

    def save(self, path, extra: dict | None = None) -> None:
        os.makedirs(path, exist_ok=True)
        for i, c in enumerate(self.cores):
            write_tns(os.path.join(path, f"core_{i}.tns"), c)
        manifest = {"q": self.q, "dims": self.dims, "ranks": self.ranks}
        manifest.update(extra or {})
        atomic_write_text(os.path.join(path, "manifest.json"), json.dumps(manifest, indent=2, default=str))

    @classmethod
    def load(cls, path) -> "TensorTrain":
        with open(os.path.join(path, "manifest.json")) as f:
            q = json.load(f)["q"]
        return cls([read_tns(os.path.join(path, f"core_{i}.tns")).to_dense() for i in range(q)])


def tt_materialize(tt: TensorTrain) -> np.ndarray:
    check_dense(tt.dims, "materialized tensor train")
    X = tt.cores[0]
    for U in tt.cores[1:]:
        X = np.tensordot(X, U, axes=(-1, 0))
    return X


def tt_error(tt: TensorTrain, A) -> float:
    """Frobenius distance between the train and A.

    Densifies when allowed; a sparse A beyond the dense cap is handled by
    expanding ||T - A||^2 = ||T||^2 - 2<T, A> + ||A||^2 over A's entries.
    """
    if list(A.dims if isinstance(A, SparseTensor) else np.shape(A)) != tt.dims:
        raise InvalidArgumentError("tensor and train dims differ")
    try:
        check_dense(tt.dims)
        return float(np.linalg.norm(tt_materialize(tt) - as_dense(A)))
    except MemoryError:
        if not isinstance(A, SparseTensor):
            raise
    cross = float(tt.values_at(A.coords) @ A.values)
    sq = tt.norm() ** 2 - 2 * cross + A.norm() ** 2
    return math.sqrt(max(sq, 0.0))


# ---------------------------------------------------------------- embedding


@dataclass
class ContractionEmbedding:
    """Sketch W_i of the row-flattening of a chain of cores contracted left to right.

    ``W`` has shape (s_i, r_i): rows indexed by the sketched fused open index
    of the chain, columns by its dangling bond.
    """

    W: np.ndarray
    sketches: list = field(default_factory=list)
    budget: float = 0.0


def start_embedding(U: np.ndarray, S: SketchOp, eps_step: float = 0.0) -> ContractionEmbedding:
    """W_1 = S U for the first core U (n x r)."""
    U = np.asarray(U, dtype=np.float64)
    if U.ndim == 3:
        if U.shape[0] != 1:
            raise InvalidArgumentError("first core must have boundary rank 1")
        U = U[0]
    if S.cols != U.shape[0]:
        raise InvalidArgumentError("sketch does not match the first core")
    return ContractionEmbedding(S.apply(U), [S], eps_step)


def extend_embedding(E: ContractionEmbedding, U: np.ndarray, S: SketchOp,
                     eps_step: float = 0.0) -> ContractionEmbedding:
    """Absorb the next core U (r_prev x n x r): W' = S fuse(W o U), with fused index (sketch row, n)."""
    U = np.asarray(U, dtype=np.float64)
    if U.ndim != 3 or U.shape[0] != E.W.shape[1]:
        raise InvalidArgumentError(f"core {U.shape} does not chain with embedding {E.W.shape}")
    Z = np.tensordot(E.W, U, axes=(1, 0))  # (s, n, r)
    Z = Z.reshape(-1, Z.shape[2])
    if S.cols != Z.shape[0]:
        raise InvalidArgumentError("sketch does not match the fused index")
    return ContractionEmbedding(S.apply(Z), E.sketches + [S], E.budget + eps_step)


# ---------------------------------------------------------------- sweep


def _left_sketch(A, modes, T, R):
    """R(T(group)) with the sketched group moved to axis 0; returns a dense array."""
    B = apply_group(T, A, modes)
    B = apply_group(R, B, [0])
    return as_dense(B)


def tt_bicriteria(A, k: int, params: SketchParams, seed: int = 0) -> TensorTrain:
    """Bicriteria tensor-train approximation by a sketched right-to-left sweep.

    Step q takes an orthonormal basis of the row space of R T M_{1..q-1}(A).
    Each later step i sketches the modes left of i with T then R, solves
    against the embedding W of the already fixed cores i+1..q, and keeps an
    orthonormal basis of the result as core i. The first core absorbs the
    remaining residue by a sketched least-squares solve. Returned ranks are
    at most t = rows_sign_regression(params). ``tt.info`` holds the ledger of
    requested and applied sketch sizes.
    """
    A = as_sparse(A)
    q = A.ndim
    if q < 2:
        raise InvalidArgumentError("tensor-train decomposition needs q >= 2")
    if k < 1:
        raise InvalidArgumentError("k must be >= 1")
    dims = list(A.dims)
    t = rows_sign_regression(params)
    r_t = rows_left_countsketch(params)
    ledger = []
    cores: list[np.ndarray] = [None] * q

    def left_ops(i, n_left):
        T = countsketch_or_identity(r_t, n_left, rng.derive_seed(seed, "tt", "T", i))
        R = sign_or_identity(t, T.rows, rng.derive_seed(seed, "tt", "R", i))
        ledger.append(ledger_entry(f"T[{i}]", T, r_t))
        ledger.append(ledger_entry(f"R[{i}]", R, t))
        return T, R

    def embed_op(i, ncols, r):
        s = rows_countsketch_affine(params, t)
        S = countsketch_or_identity(s, ncols, rng.derive_seed(seed, "tt", "S", i))
        ledger.append(ledger_entry(f"S[{i}]", S, s))
        return S

    # rightmost core
    n_left = math.prod(dims[:-1])
    T, R = left_ops(q - 1, n_left)
    C = _left_sketch(A, list(range(q - 1)), T, R)  # (t', n_q)
    Uq = row_basis(C, max_rank=t)
    cores[q - 1] = Uq
    S = embed_op(q - 1, dims[-1], Uq.shape[0])
    emb = start_embedding(Uq.T, S)
    cur = apply_group(S, A, [q - 1])  # (n_1..n_{q-1}, s)

    for i in range(q - 2, 0, -1):
        n_i = dims[i]
        T, R = left_ops(i, math.prod(dims[:i]))
        C = _left_sketch(cur, list(range(i)), T, R)  # (t', n_i, s)
        tp, s = C.shape[0], C.shape[2]
        X = C.reshape(tp * n_i, s) @ pinv(emb.W.T)  # (t' n_i, r_i)
        r_i = X.shape[1]
        U = row_basis(X.reshape(tp, n_i * r_i), max_rank=t).reshape(-1, n_i, r_i)
        cores[i] = U
        S = embed_op(i, s * n_i, U.shape[0])
        emb = extend_embedding(emb, U.transpose(2, 1, 0), S)
        cur = apply_group(S, cur, [i + 1, i])  # fuse (sketch row, x_i) like the embedding

    A1 = as_dense(cur).reshape(dims[0], -1)
    cores[0] = A1 @ pinv(emb.W.T)
    tt = TensorTrain(cores)
    tt.info = {"t": t, "ranks": tt.ranks, "sketches": ledger, "seed": seed, "params": params.to_dict()}
    return tt
