"""Dense and sparse tensors with the index algebra used everywhere else.

Dense tensors are plain float64 ``numpy`` arrays in C (row-major) order, so
``A.reshape(-1)`` is the vectorization with the first index most
significant. Sparse tensors are coordinate lists (``SparseTensor``).
"""

import math
import os
import tempfile
from collections.abc import Sequence

import numpy as np
import scipy.sparse as sp

from .errors import InvalidArgumentError, ResourceLimitError

DEFAULT_DENSE_CAP = 10**8
_cap_override: int | None = None


def dense_cap() -> int:
    """Largest number of entries a dense materialization may hold."""
    if _cap_override is not None:
        return _cap_override
    env = os.environ.get("TNSKETCH_DENSE_CAP")
    if env:
        try:
            return int(float(env))
        except ValueError:
            raise InvalidArgumentError(f"bad TNSKETCH_DENSE_CAP value {env!r}") from None
    return DEFAULT_DENSE_CAP


def set_dense_cap(cap: int | None) -> None:
    """Override the dense cap for this process (``None`` restores the default)."""
    global _cap_override
    _cap_override = None if cap is None else int(cap)


def check_dense(shape, what: str = "dense tensor") -> None:
    size = math.prod(int(d) for d in shape)
    cap = dense_cap()
    if size > cap:
        raise ResourceLimitError(f"{what} of shape {tuple(shape)} has {size} entries, cap is {cap}")


def _check_dims(dims) -> tuple[int, ...]:
    dims = tuple(int(d) for d in dims)
    if not dims or any(d < 1 for d in dims):
        raise InvalidArgumentError(f"dims must be a non-empty list of positive integers, got {dims}")
    return dims


def ravel_index(coords: np.ndarray, dims: Sequence[int]) -> np.ndarray:
    """Row-major linear index of each coordinate row (int64)."""
    if math.prod(int(d) for d in dims) >= 2**63:
        raise ResourceLimitError(f"index space {tuple(dims)} does not fit in 64 bits")
    coords = np.asarray(coords, dtype=np.int64)
    idx = np.zeros(coords.shape[0], dtype=np.int64)
    for m, d in enumerate(dims):
        idx *= int(d)
        idx += coords[:, m]
    return idx


def unravel_index(idx: np.ndarray, dims: Sequence[int]) -> np.ndarray:
    idx = np.asarray(idx, dtype=np.int64).copy()
    out = np.empty((idx.shape[0], len(dims)), dtype=np.int64)
    for m in range(len(dims) - 1, -1, -1):
        out[:, m] = idx % int(dims[m])
        idx //= int(dims[m])
    return out


class SparseTensor:
    """Coordinate-list tensor. Duplicates are summed and zeros dropped on construction."""

    __slots__ = ("dims", "coords", "values")

    def __init__(self, dims, coords, values, *, canonical: bool = False):
        dims = _check_dims(dims)
        coords = np.asarray(coords, dtype=np.int64).reshape(-1, len(dims))
        values = np.asarray(values, dtype=np.float64).reshape(-1)
        if coords.shape[0] != values.shape[0]:
            raise InvalidArgumentError("coords and values have different lengths")
        if coords.size and (coords.min() < 0 or np.any(coords >= np.array(dims))):
            raise InvalidArgumentError("sparse coordinate out of bounds")
        if not canonical:
            coords, values = _coalesce(coords, values, dims)
        self.dims = dims
        self.coords = coords
        self.values = values

    @property
    def ndim(self) -> int:
        return len(self.dims)

    @property
    def nnz(self) -> int:
        return int(self.values.shape[0])

    def __repr__(self):
        return f"SparseTensor(dims={self.dims}, nnz={self.nnz})"

    @classmethod
    def from_dense(cls, A: np.ndarray, tol: float = 0.0) -> "SparseTensor":
        A = np.asarray(A, dtype=np.float64)
        if A.ndim == 0:
            A = A.reshape(1)
        mask = np.abs(A) > tol
        coords = np.argwhere(mask)
        return cls(A.shape, coords, A[mask], canonical=True)

    def to_dense(self) -> np.ndarray:
        check_dense(self.dims)
        out = np.zeros(self.dims)
        if self.nnz:
            out[tuple(self.coords.T)] = self.values
        return out

    def group_index(self, modes: Sequence[int]) -> np.ndarray:
        modes = list(modes)
        return ravel_index(self.coords[:, modes], [self.dims[m] for m in modes])

    def matricize_group(self, rows: Sequence[int]) -> sp.csr_array:
        """Sparse analogue of :func:`matricize_group`."""
        rows = _check_group(rows, self.ndim)
        cols = [m for m in range(self.ndim) if m not in rows]
        nr = math.prod(self.dims[m] for m in rows)
        nc = math.prod(self.dims[m] for m in cols)
        ri = self.group_index(rows)
        ci = self.group_index(cols) if cols else np.zeros(self.nnz, dtype=np.int64)
        return sp.csr_array((self.values, (ri, ci)), shape=(nr, nc))

    def norm(self) -> float:
        return float(np.linalg.norm(self.values))


def _coalesce(coords: np.ndarray, values: np.ndarray, dims) -> tuple[np.ndarray, np.ndarray]:
    if values.size == 0:
        return coords, values
    if math.prod(dims) < 2**63:
        lin = ravel_index(coords, dims)
        uniq, inv = np.unique(lin, return_inverse=True)
        vals = np.bincount(inv.reshape(-1), weights=values, minlength=uniq.size)
        keep = vals != 0
        return unravel_index(uniq[keep], dims), vals[keep]
    uniq, inv = np.unique(coords, axis=0, return_inverse=True)
    vals = np.bincount(inv.reshape(-1), weights=values, minlength=uniq.shape[0])
    keep = vals != 0
    return uniq[keep], vals[keep]


def as_dense(A) -> np.ndarray:
    if isinstance(A, SparseTensor):
        return A.to_dense()
    A = np.asarray(A, dtype=np.float64)
    return A.reshape(1) if A.ndim == 0 else A


def as_sparse(A) -> SparseTensor:
    if isinstance(A, SparseTensor):
        return A
    return SparseTensor.from_dense(A)


def outer_product(vectors: Sequence) -> np.ndarray:
    if len(vectors) == 0:
        raise InvalidArgumentError("outer_product needs at least one vector")
    vecs = [np.asarray(v, dtype=np.float64).reshape(-1) for v in vectors]
    if any(v.size == 0 for v in vecs):
        raise InvalidArgumentError("outer_product vectors must be non-empty")
    check_dense([v.size for v in vecs])
    out = vecs[0]
    for v in vecs[1:]:
        out = np.multiply.outer(out, v)
    return out


def contract(A: np.ndarray, i: int, B: np.ndarray, j: int) -> np.ndarray:
    """Sum over mode ``i`` of A and mode ``j`` of B; remaining modes of A come first."""
    A = as_dense(A)
    B = as_dense(B)
    if not (0 <= i < A.ndim and 0 <= j < B.ndim):
        raise InvalidArgumentError("contraction mode out of range")
    if A.shape[i] != B.shape[j]:
        raise InvalidArgumentError(f"cannot contract dims {A.shape[i]} and {B.shape[j]}")
    out_shape = A.shape[:i] + A.shape[i + 1:] + B.shape[:j] + B.shape[j + 1:]
    check_dense(out_shape)
    out = np.tensordot(A, B, axes=(i, j))
    return out.reshape(1) if out.ndim == 0 else out


def matricize(A: np.ndarray, t: int) -> np.ndarray:
    """Mode-t unfolding: row j is the row-major vectorization of slice j."""
    A = as_dense(A)
    if not 0 <= t < A.ndim:
        raise InvalidArgumentError(f"mode {t} out of range for a {A.ndim}-mode tensor")
    return np.moveaxis(A, t, 0).reshape(A.shape[t], -1)


def _check_group(rows, q: int) -> list[int]:
    rows = [int(r) for r in rows]
    if not rows or len(set(rows)) != len(rows) or any(not 0 <= r < q for r in rows):
        raise InvalidArgumentError(f"invalid mode group {rows} for a {q}-mode tensor")
    return rows


def matricize_group(A: np.ndarray, rows: Sequence[int]) -> np.ndarray:
    """Rows indexed by ``rows`` (in the given order), columns by the other modes in original order."""
    A = as_dense(A)
    rows = _check_group(rows, A.ndim)
    cols = [m for m in range(A.ndim) if m not in rows]
    nr = math.prod(A.shape[m] for m in rows)
    return np.transpose(A, rows + cols).reshape(nr, -1)


def kronecker(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    A = np.atleast_2d(np.asarray(A, dtype=np.float64))
    B = np.atleast_2d(np.asarray(B, dtype=np.float64))
    check_dense((A.shape[0] * B.shape[0], A.shape[1] * B.shape[1]))
    return np.kron(A, B)


def fuse_first_two(A: np.ndarray) -> np.ndarray:
    """Merge modes 0 and 1 into one mode; index (i1, i2) maps to i1 * n2 + i2."""
    A = as_dense(A)
    if A.ndim < 2:
        raise InvalidArgumentError("fuse_first_two needs at least two modes")
    return A.reshape((A.shape[0] * A.shape[1],) + A.shape[2:])


def unfuse_first_two(A: np.ndarray, n1: int, n2: int) -> np.ndarray:
    A = as_dense(A)
    if A.shape[0] != n1 * n2:
        raise InvalidArgumentError(f"mode 0 has size {A.shape[0]}, expected {n1}*{n2}")
    return A.reshape((n1, n2) + A.shape[1:])


def frobenius_norm(A) -> float:
    if isinstance(A, SparseTensor):
        return A.norm()
    return float(np.linalg.norm(np.asarray(A, dtype=np.float64).reshape(-1)))


def densify(S: SparseTensor) -> np.ndarray:
    return S.to_dense()


def sparsify(A: np.ndarray, tol: float = 0.0) -> SparseTensor:
    return SparseTensor.from_dense(A, tol)


def atomic_write_text(path, text: str) -> None:
    """Write ``text`` to a temporary file in the target directory, then rename."""
    path = os.fspath(path)
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w") as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def format_tns(A) -> str:
    if isinstance(A, SparseTensor):
        dims, coords, values = A.dims, A.coords, A.values
    else:
        D = as_dense(A)
        dims = D.shape
        coords = np.argwhere(np.ones(D.shape, dtype=bool))
        values = D.reshape(-1)
    lines = ["tns " + " ".join(str(x) for x in (len(dims), *dims))]
    for c, v in zip(coords.tolist(), values.tolist()):
        lines.append(" ".join(map(str, c)) + " " + repr(float(v)))
    return "\n".join(lines) + "\n"


def write_tns(path, A) -> None:
    """Write a tensor in the text format. Dense tensors list every entry."""
    atomic_write_text(path, format_tns(A))


def parse_tns(text: str) -> SparseTensor:
    header = None
    rows = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if header is None:
            if parts[0] != "tns":
                raise InvalidArgumentError(f"line {lineno}: expected 'tns' header")
            try:
                q = int(parts[1])
                dims = [int(x) for x in parts[2:]]
            except (IndexError, ValueError):
                raise InvalidArgumentError(f"line {lineno}: malformed header") from None
            if len(dims) != q:
                raise InvalidArgumentError(f"line {lineno}: header declares {q} modes, lists {len(dims)}")
            header = _check_dims(dims)
            continue
        if len(parts) != len(header) + 1:
            raise InvalidArgumentError(f"line {lineno}: expected {len(header)} indices and a value")
        try:
            rows.append([int(x) for x in parts[:-1]] + [float(parts[-1])])
        except ValueError:
            raise InvalidArgumentError(f"line {lineno}: malformed entry") from None
    if header is None:
        raise InvalidArgumentError("missing 'tns' header")
    if not rows:
        return SparseTensor(header, np.zeros((0, len(header))), np.zeros(0))
    arr = np.array(rows, dtype=object)
    coords = np.array(arr[:, :-1].tolist(), dtype=np.int64)
    values = np.array(arr[:, -1].tolist(), dtype=np.float64)
    return SparseTensor(header, coords, values)


def read_tns(path) -> SparseTensor:
    with open(path) as f:
        return parse_tns(f.read())
