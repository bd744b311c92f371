"""Random sketching maps, sketch-size formulas and the tensor-train sketch.

Every map is described by a few integers (shape, seed) and regenerates its
entries on demand from counter-based hashes, so a ``SketchOp`` never stores
a matrix and serializes to a small JSON descriptor.
"""

import json
import math
from collections.abc import Sequence
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import rng
from .errors import InvalidArgumentError
from .tensor import SparseTensor, as_dense, check_dense


def _ceil(x: float) -> int:
    # guards against 1000.0000000001 style round-off in the size formulas
    return max(1, math.ceil(round(x, 9)))


@dataclass(frozen=True)
class SketchParams:
    eps: float
    delta: float
    q: int
    k: int
    c_cs: float = 4.0
    c_sign: float = 4.0
    c_sv: float = 4.0

    def __post_init__(self):
        if not (0 < self.eps <= 1 and 0 < self.delta <= 1):
            raise InvalidArgumentError("eps and delta must lie in (0, 1]")
        if self.q < 1 or self.k < 1:
            raise InvalidArgumentError("q and k must be positive")
        if min(self.c_cs, self.c_sign, self.c_sv) <= 0:
            raise InvalidArgumentError("sketch constants must be positive")

    def with_(self, **kw) -> "SketchParams":
        d = self.to_dict()
        d.update(kw)
        return SketchParams(**d)

    def to_dict(self) -> dict:
        return dict(eps=self.eps, delta=self.delta, q=self.q, k=self.k,
                    c_cs=self.c_cs, c_sign=self.c_sign, c_sv=self.c_sv)


def rows_countsketch_affine(params: SketchParams, d: int) -> int:
    """Countsketch rows for a (1 +- eps) affine embedding of a d-dimensional subspace."""
    return _ceil(params.c_cs * d * d / (params.eps**2 * params.delta))


def rows_sign_regression(params: SketchParams) -> int:
    """Rows of the sign sketch R, which is also the bicriteria output rank t."""
    q = params.q
    return _ceil(params.c_sign * q * params.k * math.log(q / params.delta) / params.eps)


def rows_left_countsketch(params: SketchParams) -> int:
    """Rows of the Countsketch T applied before R over the modes outside a subtree."""
    q, k = params.q, params.k
    return _ceil(params.c_cs * q**3 * k * k / (params.eps**2 * params.delta))


def rows_subtree_sketch(params: SketchParams, t: int, d: int = 1) -> int:
    """Rows of the Countsketch S_v that compresses a processed subtree (d = max degree)."""
    q = params.q
    return _ceil(params.c_sv * q**4 * t * t * d**3 / (params.eps**2 * params.delta))


def rows_tt_stage(params: SketchParams) -> int:
    """Per-stage Countsketch rows giving each stage the (eps/sqrt(2q), delta, 2) JL moment property."""
    stage_eps = params.eps / math.sqrt(2 * params.q)
    return _ceil(params.c_cs / (stage_eps**2 * params.delta))


# ---------------------------------------------------------------- sketch ops


class SketchOp:
    """Common interface: ``rows``, ``cols``, ``apply`` and ``columns``."""

    rows: int
    cols: int

    @property
    def shape(self) -> tuple[int, int]:
        return (self.rows, self.cols)

    def columns(self, idx: np.ndarray) -> np.ndarray:
        """Dense ``rows x len(idx)`` block of the selected columns."""
        raise NotImplementedError

    def to_dense(self) -> np.ndarray:
        check_dense(self.shape, "sketch matrix")
        return self.columns(np.arange(self.cols))

    def apply(self, M: np.ndarray) -> np.ndarray:
        """``S @ M`` for a dense array whose first axis has length ``cols``."""
        M = np.asarray(M, dtype=np.float64)
        lead = M.shape[1:]
        X = M.reshape(self.cols, -1)
        return (self.to_dense() @ X).reshape((self.rows,) + lead)

    def to_dict(self) -> dict:
        raise NotImplementedError

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


@dataclass(frozen=True)
class Countsketch(SketchOp):
    """One +-1 per column, at a hashed row."""

    rows: int
    cols: int
    seed: int

    def hashes(self, idx) -> tuple[np.ndarray, np.ndarray]:
        h = rng.hash_counter(self.seed, idx)
        rows = rng.bucket(h, self.rows)
        signs = np.where((h & np.uint64(1)) == 1, 1.0, -1.0)
        return rows, signs

    def columns(self, idx) -> np.ndarray:
        idx = np.asarray(idx, dtype=np.int64)
        r, s = self.hashes(idx)
        out = np.zeros((self.rows, idx.size))
        out[r, np.arange(idx.size)] = s
        return out

    def apply(self, M: np.ndarray) -> np.ndarray:
        M = np.asarray(M, dtype=np.float64)
        lead = M.shape[1:]
        X = M.reshape(self.cols, -1)
        r, s = self.hashes(np.arange(self.cols))
        S = sp.csr_array((s, (r, np.arange(self.cols))), shape=self.shape)
        return np.asarray(S @ X).reshape((self.rows,) + lead)

    def to_dict(self):
        return {"kind": "countsketch", "rows": self.rows, "cols": self.cols, "seed": self.seed}


@dataclass(frozen=True)
class Sign(SketchOp):
    """Dense i.i.d. +-1/sqrt(rows) entries."""

    rows: int
    cols: int
    seed: int

    def columns(self, idx) -> np.ndarray:
        idx = np.asarray(idx, dtype=np.int64)
        lin = idx[None, :] * self.rows + np.arange(self.rows)[:, None]
        h = rng.hash_counter(self.seed, lin)
        return np.where((h & np.uint64(1)) == 1, 1.0, -1.0) / math.sqrt(self.rows)

    def to_dict(self):
        return {"kind": "sign", "rows": self.rows, "cols": self.cols, "seed": self.seed}


@dataclass(frozen=True)
class GaussianK(SketchOp):
    """Dense i.i.d. N(0, 1/rows) entries."""

    rows: int
    cols: int
    seed: int

    def columns(self, idx) -> np.ndarray:
        idx = np.asarray(idx, dtype=np.int64)
        lin = idx[None, :] * self.rows + np.arange(self.rows)[:, None]
        return rng.normal(self.seed, lin) / math.sqrt(self.rows)

    def to_dict(self):
        return {"kind": "gaussian", "rows": self.rows, "cols": self.cols, "seed": self.seed}


@dataclass(frozen=True)
class Composed(SketchOp):
    """Stages applied in list order (first stage acts first). Empty means identity of size ``dim``."""

    stages: tuple = ()
    dim: int | None = None

    def __post_init__(self):
        st = tuple(self.stages)
        object.__setattr__(self, "stages", st)
        if not st:
            if self.dim is None or self.dim < 1:
                raise InvalidArgumentError("empty composition needs an explicit dimension")
            return
        for a, b in zip(st, st[1:]):
            if b.cols != a.rows:
                raise InvalidArgumentError(f"stage shapes do not chain: {a.shape} then {b.shape}")
        if self.dim is not None and self.dim != st[0].cols:
            raise InvalidArgumentError("dim disagrees with the first stage")
        object.__setattr__(self, "dim", st[0].cols)

    @property
    def rows(self) -> int:
        return self.stages[-1].rows if self.stages else self.dim

    @property
    def cols(self) -> int:
        return self.stages[0].cols if self.stages else self.dim

    @property
    def is_identity(self) -> bool:
        return not self.stages

    def columns(self, idx) -> np.ndarray:
        idx = np.asarray(idx, dtype=np.int64)
        if not self.stages:
            out = np.zeros((self.dim, idx.size))
            out[idx, np.arange(idx.size)] = 1.0
            return out
        X = self.stages[0].columns(idx)
        for s in self.stages[1:]:
            X = s.apply(X)
        return X

    def apply(self, M):
        M = np.asarray(M, dtype=np.float64)
        if M.shape[0] != self.cols:
            raise InvalidArgumentError(f"sketch with {self.cols} columns applied to {M.shape[0]} rows")
        for s in self.stages:
            M = s.apply(M)
        return M

    def to_dict(self):
        return {"kind": "composed", "dim": self.cols, "stages": [s.to_dict() for s in self.stages]}


def identity(n: int) -> Composed:
    return Composed((), n)


@dataclass(frozen=True)
class KronWithIdentity(SketchOp):
    """``inner (x) I_d`` for side 'left' or ``I_d (x) inner`` for side 'right', never materialized."""

    inner: SketchOp
    d: int
    side: str = "left"

    def __post_init__(self):
        if self.side not in ("left", "right"):
            raise InvalidArgumentError("side must be 'left' or 'right'")

    @property
    def rows(self):
        return self.inner.rows * self.d

    @property
    def cols(self):
        return self.inner.cols * self.d

    def columns(self, idx) -> np.ndarray:
        idx = np.asarray(idx, dtype=np.int64)
        if self.side == "left":
            j, l = idx // self.d, idx % self.d
            block = self.inner.columns(j)  # (r, m)
            out = np.zeros((self.inner.rows, self.d, idx.size))
            out[:, l, np.arange(idx.size)] = block
        else:
            l, j = idx // self.inner.cols, idx % self.inner.cols
            block = self.inner.columns(j)
            out = np.zeros((self.d, self.inner.rows, idx.size))
            out[l, :, np.arange(idx.size)] = block.T
        return out.reshape(self.rows, idx.size)

    def apply(self, M):
        M = np.asarray(M, dtype=np.float64)
        lead = M.shape[1:]
        m = math.prod(lead)
        if self.side == "left":
            Y = self.inner.apply(M.reshape(self.inner.cols, self.d * m))
            return Y.reshape((self.rows,) + lead)
        X = M.reshape(self.d, self.inner.cols, m).transpose(1, 0, 2)
        Y = self.inner.apply(X.reshape(self.inner.cols, self.d * m))
        Y = Y.reshape(self.inner.rows, self.d, m).transpose(1, 0, 2)
        return Y.reshape((self.rows,) + lead)

    def to_dict(self):
        return {"kind": "kron_identity", "inner": self.inner.to_dict(), "d": self.d, "side": self.side}


def sketch_from_dict(d: dict) -> SketchOp:
    kind = d.get("kind")
    if kind == "countsketch":
        return Countsketch(int(d["rows"]), int(d["cols"]), int(d["seed"]))
    if kind == "sign":
        return Sign(int(d["rows"]), int(d["cols"]), int(d["seed"]))
    if kind == "gaussian":
        return GaussianK(int(d["rows"]), int(d["cols"]), int(d["seed"]))
    if kind == "composed":
        return Composed(tuple(sketch_from_dict(s) for s in d["stages"]), int(d["dim"]))
    if kind == "kron_identity":
        return KronWithIdentity(sketch_from_dict(d["inner"]), int(d["d"]), d["side"])
    raise InvalidArgumentError(f"unknown sketch kind {kind!r}")


def sketch_from_json(text: str) -> SketchOp:
    return sketch_from_dict(json.loads(text))


def countsketch_or_identity(rows: int, cols: int, seed: int) -> SketchOp:
    """A Countsketch, or the exact identity when it would not compress."""
    if rows >= cols:
        return identity(cols)
    return Countsketch(rows, cols, seed)


def sign_or_identity(rows: int, cols: int, seed: int) -> SketchOp:
    if rows >= cols:
        return identity(cols)
    return Sign(rows, cols, seed)


# ---------------------------------------------------------------- application


def _is_countsketch_chain(S: SketchOp) -> bool:
    if isinstance(S, Countsketch):
        return True
    return isinstance(S, Composed) and all(isinstance(s, Countsketch) for s in S.stages)


def apply_left(S: SketchOp, M):
    """``S @ M`` for a dense matrix/vector or a scipy sparse matrix.

    Countsketch chains keep sparse input sparse; other kinds return dense.
    """
    if sp.issparse(M):
        M = sp.csr_array(M)
        if M.shape[0] != S.cols:
            raise InvalidArgumentError(f"sketch with {S.cols} columns applied to {M.shape[0]} rows")
        if _is_countsketch_chain(S):
            coo = M.tocoo()
            r, v = coo.row.astype(np.int64), coo.data.astype(np.float64)
            for st in (S.stages if isinstance(S, Composed) else (S,)):
                h, s = st.hashes(r)
                r, v = h, v * s
            out = sp.csr_array((v, (r, coo.col)), shape=(S.rows, M.shape[1]))
            out.sum_duplicates()
            return out
        present = np.unique(M.tocoo().row)
        block = S.columns(present)
        return np.asarray((M[present, :].T @ block.T).T)
    M = np.asarray(M, dtype=np.float64)
    if M.shape[0] != S.cols:
        raise InvalidArgumentError(f"sketch with {S.cols} columns applied to {M.shape[0]} rows")
    return S.apply(M)


def _place(rest: list[int], first: int) -> int:
    return sum(1 for m in rest if m < first)


def apply_group(S: SketchOp, A, modes: Sequence[int]):
    """Apply S to the fused index of ``modes`` (row-major in the given order).

    The fused group is replaced by a single mode of size ``S.rows`` placed where
    ``modes[0]`` was, relative to the untouched modes. Sparse input stays
    sparse when every stage is a Countsketch (or S is the identity).
    """
    modes = [int(m) for m in modes]
    q = len(A.dims) if isinstance(A, SparseTensor) else np.ndim(A)
    if not modes or len(set(modes)) != len(modes) or any(not 0 <= m < q for m in modes):
        raise InvalidArgumentError(f"invalid mode group {modes}")
    dims = A.dims if isinstance(A, SparseTensor) else np.shape(A)
    n = math.prod(dims[m] for m in modes)
    if n != S.cols:
        raise InvalidArgumentError(f"sketch with {S.cols} columns applied to a group of size {n}")
    rest = [m for m in range(q) if m not in modes]
    pos = _place(rest, modes[0])
    out_dims = [dims[m] for m in rest]
    out_dims.insert(pos, S.rows)

    if isinstance(A, SparseTensor):
        g = A.group_index(modes)
        if _is_countsketch_chain(S):
            v = A.values
            for st in (S.stages if isinstance(S, Composed) else (S,)):
                g, s = st.hashes(g)
                v = v * s
            coords = np.insert(A.coords[:, rest], pos, g, axis=1) if rest else g[:, None]
            return SparseTensor(out_dims, coords, v)
        rdims = [dims[m] for m in rest]
        ci = A.group_index(rest) if rest else np.zeros(A.nnz, dtype=np.int64)
        X = sp.csr_array((A.values, (g, ci)), shape=(n, math.prod(rdims)))
        check_dense((S.rows, X.shape[1]), "sketched tensor")
        Y = apply_left(S, X).reshape([S.rows] + rdims)
        return np.moveaxis(Y, 0, pos)

    A = as_dense(A)
    X = np.transpose(A, modes + rest).reshape(n, -1)
    check_dense((S.rows, X.shape[1]), "sketched tensor")
    Y = S.apply(X).reshape([S.rows] + [dims[m] for m in rest])
    return np.moveaxis(Y, 0, pos)


def apply_mode(S: SketchOp, A, t: int):
    """Sketch mode ``t``; the result has ``dims[t]`` replaced by ``S.rows``."""
    return apply_group(S, A, [t])


# ---------------------------------------------------------------- TT sketch


@dataclass(frozen=True)
class TTSketch:
    """Chained sketch: S_1 acts on mode 1, S_i on the fused (previous output, mode i) index."""

    stages: tuple = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "stages", tuple(self.stages))
        if not self.stages:
            raise InvalidArgumentError("TT sketch needs at least one stage")

    @property
    def dims(self) -> list[int]:
        out = [self.stages[0].cols]
        for a, b in zip(self.stages, self.stages[1:]):
            if b.cols % a.rows:
                raise InvalidArgumentError("TT sketch stages do not chain")
            out.append(b.cols // a.rows)
        return out

    @property
    def rows(self) -> int:
        return self.stages[-1].rows

    def to_dict(self):
        return {"kind": "tt_sketch", "stages": [s.to_dict() for s in self.stages]}


def tt_sketch(dims: Sequence[int], rows: Sequence[int] | int, seed: int) -> TTSketch:
    """Countsketch stages with the requested per-stage output rows."""
    dims = [int(d) for d in dims]
    if isinstance(rows, (int, np.integer)):
        rows = [int(rows)] * len(dims)
    if len(rows) != len(dims):
        raise InvalidArgumentError("need one row count per stage")
    stages, prev = [], 1
    for i, (n, r) in enumerate(zip(dims, rows)):
        stages.append(Countsketch(int(r), prev * n, rng.derive_seed(seed, "tt_stage", i)))
        prev = int(r)
    return TTSketch(tuple(stages))


def tt_sketch_calibrated(dims: Sequence[int], params: SketchParams, seed: int) -> TTSketch:
    return tt_sketch(dims, rows_tt_stage(params), seed)


def tt_sketch_apply_tt(L: TTSketch, tt) -> np.ndarray:
    """Apply the chained sketch to vec(tt) core by core, never forming the full tensor."""
    cores = tt.cores3()
    if [c.shape[1] for c in cores] != L.dims:
        raise InvalidArgumentError("sketch stage shapes do not match the tensor train")
    M = L.stages[0].apply(cores[0][0])  # (s1, r1)
    for S, U in zip(L.stages[1:], cores[1:]):
        X = np.tensordot(M, U, axes=(1, 0))  # (s, n, r)
        M = S.apply(X.reshape(-1, X.shape[2]))
    return M.reshape(-1)


def tt_sketch_apply_dense(L: TTSketch, A) -> np.ndarray:
    """The same map on an explicit tensor: T_1 = S_1 on mode 1, T_i = S_i on F(T_{i-1})."""
    dims = list(A.dims) if isinstance(A, SparseTensor) else list(np.shape(A))
    if dims != L.dims:
        raise InvalidArgumentError(f"tensor dims {dims} do not match sketch dims {L.dims}")
    T = A
    T = apply_group(L.stages[0], T, [0])
    for S in L.stages[1:]:
        T = apply_group(S, T, [0, 1])
    if isinstance(T, SparseTensor):
        return T.to_dense().reshape(-1)
    return np.asarray(T).reshape(-1)


def ledger_entry(name: str, op: SketchOp, requested: int) -> dict:
    """Row count requested by the size formula next to the one actually applied."""
    ident = isinstance(op, Composed) and op.is_identity
    return {"name": name, "kind": "identity" if ident else op.to_dict()["kind"],
            "requested_rows": int(requested), "applied_rows": int(op.rows), "cols": int(op.cols)}
