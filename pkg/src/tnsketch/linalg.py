"""Small dense linear-algebra helpers with a fixed numerical policy."""

import numpy as np

RCOND = 1e-10


def pinv(M: np.ndarray, rcond: float = RCOND) -> np.ndarray:
    """Pseudo-inverse dropping singular values below ``rcond * sigma_max``."""
    return np.linalg.pinv(np.asarray(M, dtype=np.float64), rcond=rcond)


def row_basis(M: np.ndarray, rcond: float = RCOND, max_rank: int | None = None) -> np.ndarray:
    """Orthonormal rows spanning the row space of M (at least one row is returned)."""
    M = np.asarray(M, dtype=np.float64)
    _, s, vt = np.linalg.svd(M, full_matrices=False)
    if s.size == 0 or s[0] == 0:
        e = np.zeros((1, M.shape[1]))
        e[0, 0] = 1.0
        return e
    r = int(np.sum(s > rcond * s[0]))
    if max_rank is not None:
        r = min(r, max_rank)
    return vt[:max(r, 1)]


def col_basis(M: np.ndarray, rcond: float = RCOND, max_rank: int | None = None) -> np.ndarray:
    return row_basis(np.asarray(M).T, rcond, max_rank).T


def rank_factor(M: np.ndarray, tol: float = 1e-13) -> tuple[np.ndarray, np.ndarray]:
    """Exact factorization ``M = L @ R`` dropping only numerically zero singular values."""
    u, s, vt = np.linalg.svd(np.asarray(M, dtype=np.float64), full_matrices=False)
    if s.size == 0 or s[0] == 0:
        return np.zeros((M.shape[0], 1)), np.zeros((1, M.shape[1]))
    r = max(int(np.sum(s > tol * s[0])), 1)
    return u[:, :r], s[:r, None] * vt[:r]
