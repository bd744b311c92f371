"""Exactly-k-row Gaussian sketch-and-solve and the guess-and-verify Tucker solver.

Tucker-(p, q) here means: orthonormal rank-k factors on the first p modes,
the remaining q - p modes left uncompressed.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from . import rng
from .errors import InvalidArgumentError, ResourceLimitError, RetrySignal
from .linalg import col_basis
from .sketching import GaussianK, apply_group, countsketch_or_identity, ledger_entry, sign_or_identity
from .tensor import as_dense, as_sparse

DEFAULT_ENUMERATION_CAP = 10**8
COND_LIMIT = 1e12


def gaussian_exact_k_regress(A: np.ndarray, B: np.ndarray, seed: int) -> np.ndarray:
    """One draw of the k x n N(0, 1/k) sketch R; returns argmin ||R A X - R B||.

    With exactly k rows the sketched system is square, so the answer is
    ``solve(R A, R B)``. Raises ``RetrySignal`` when R A is numerically singular.
    """
    A = np.asarray(A, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    if B.ndim == 1:
        B = B[:, None]
    n, k = A.shape
    if B.shape[0] != n:
        raise InvalidArgumentError("A and B need the same number of rows")
    if k >= n:
        raise InvalidArgumentError("need k < n")
    R = GaussianK(k, n, seed).to_dense()
    RA = R @ A
    if np.linalg.cond(RA) > COND_LIMIT:
        raise RetrySignal("sketched system is singular")
    return np.linalg.solve(RA, R @ B)


def kron_gaussian_regress(A1: np.ndarray, A2: np.ndarray, B: np.ndarray, seed: int) -> np.ndarray:
    """One draw of ``I_m (x) R`` applied to ``min ||(A1 (x) A2) X - B||``.

    R is k x n Gaussian with k = A2's column count. Since
    ``(I (x) R)(A1 (x) A2) = A1 (x) (R A2)`` the sketched problem has the
    closed-form solution ``(A1^+ (x) (R A2)^{-1}) (I (x) R) B``.
    """
    A1 = np.atleast_2d(np.asarray(A1, dtype=np.float64))
    A2 = np.asarray(A2, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    if B.ndim == 1:
        B = B[:, None]
    m, k1 = A1.shape
    n, k = A2.shape
    if B.shape[0] != m * n:
        raise InvalidArgumentError("B must have m * n rows")
    if k >= n:
        raise InvalidArgumentError("need k < n")
    R = GaussianK(k, n, seed).to_dense()
    RA2 = R @ A2
    if np.linalg.cond(RA2) > COND_LIMIT or np.linalg.matrix_rank(A1) < k1:
        raise RetrySignal("sketched Kronecker system is singular")
    RB = np.einsum("kn,mns->mks", R, B.reshape(m, n, -1))
    X = np.einsum("im,mks->iks", np.linalg.pinv(A1), RB)
    X = np.einsum("jk,iks->ijs", np.linalg.inv(RA2), X)
    return X.reshape(k1 * k, -1)


@dataclass(frozen=True)
class FptParams:
    p: int
    q: int
    k: int
    eps: float = 0.5
    trials: int = 200
    seed: int = 0
    mode: str = "exact"
    c_cs: float = 4.0
    c_sign: float = 4.0
    enumeration_cap: int = DEFAULT_ENUMERATION_CAP

    def __post_init__(self):
        if not 1 <= self.p <= self.q:
            raise InvalidArgumentError("need 1 <= p <= q")
        if self.k < 1 or self.trials < 1:
            raise InvalidArgumentError("need k >= 1 and trials >= 1")
        if not 0 < self.eps <= 1:
            raise InvalidArgumentError("eps must lie in (0, 1]")
        if self.mode not in ("exact", "pcp"):
            raise InvalidArgumentError("mode must be 'exact' or 'pcp'")


@dataclass
class TuckerCandidate:
    factors: list
    trials: tuple
    cost: float
    exact_cost: float | None = None
    info: dict = field(default_factory=dict)


def _orthonormal(U: np.ndarray) -> np.ndarray:
    return col_basis(U)


def projection_residual(A: np.ndarray, bases: list) -> float:
    """||A||^2 - ||A x_1 Q_1^T ... x_p Q_p^T||^2 for orthonormal bases on the leading modes."""
    A = as_dense(A)
    X = A
    for m, Q in enumerate(bases):
        X = np.moveaxis(np.tensordot(Q.T, X, axes=(1, m)), 0, m)
    return max(float(np.sum(A * A) - np.sum(X * X)), 0.0)


def evaluate_candidate(factors: list, A, mode: str = "exact", pcp: np.ndarray | None = None) -> float:
    """Cost min_G ||(U^1 x ... x U^p x I) vec(G) - vec(A)||^2 of a factor tuple.

    In pcp mode ``pcp`` is the compressed tensor (modes 1..p uncompressed,
    one trailing sketched mode) and the same closed form is evaluated on it.
    """
    bases = [_orthonormal(U) for U in factors]
    if mode == "exact":
        return projection_residual(A, bases)
    if mode == "pcp":
        if pcp is None:
            raise InvalidArgumentError("pcp mode needs the compressed tensor")
        return projection_residual(pcp, bases)
    raise InvalidArgumentError("mode must be 'exact' or 'pcp'")


def pcp_rows(params: FptParams) -> int:
    return max(1, math.ceil(round(params.c_cs * params.k ** (2 * params.p) / params.eps**2, 9)))


def pcp_compress(A, params: FptParams, seed: int) -> tuple[np.ndarray, dict]:
    """Countsketch the trailing q - p modes into one mode (identity when p = q)."""
    A = as_sparse(A)
    q, p = A.ndim, params.p
    if p == q:
        return as_dense(A)[..., None], {"name": "S_PROJ", "kind": "identity", "requested_rows": 1,
                                         "applied_rows": 1, "cols": 1}
    n_rest = math.prod(A.dims[p:])
    r = pcp_rows(params)
    S = countsketch_or_identity(r, n_rest, rng.derive_seed(seed, "fpt", "pcp"))
    return as_dense(apply_group(S, A, list(range(p, q)))), ledger_entry("S_PROJ", S, r)


def _candidate_costs(T: np.ndarray, Q_lists: list, best: list, block_cap: int = 10**7) -> None:
    """Enumerate tuples in lexicographic order, keeping the first cheapest in ``best[0]``.

    The last one or two factor modes are vectorized; enumeration stops early
    once a cost at round-off level (zero residual) is found.
    """
    p = len(Q_lists)
    total = float(np.sum(T * T))
    zero = 1e-14 * total

    def offer(costs, prefix):
        flat = np.maximum(costs, 0.0).reshape(-1)
        j = int(np.argmin(flat))
        if best[0] is None or flat[j] < best[0][0]:
            best[0] = (float(flat[j]), prefix + tuple(int(x) for x in np.unravel_index(j, costs.shape)))

    def done():
        return best[0] is not None and best[0][0] <= zero

    def rec(X, m, prefix):
        if m == p - 1:
            Y = np.tensordot(np.stack(Q_lists[m]), X, axes=(1, m))  # (T, k, rest...)
            offer(total - np.sum(Y.reshape(Y.shape[0], -1) ** 2, axis=1), prefix)
            return
        if m == p - 2:
            S2, S3 = np.stack(Q_lists[m]), np.stack(Q_lists[m + 1])
            size = S2.shape[0] * S3.shape[0] * S2.shape[2] * S3.shape[2] * X.size // (X.shape[m] * X.shape[m + 1])
            if size <= block_cap:
                Z = np.tensordot(S2, X, axes=(1, m))  # (T2, k, x_0..x_{m-1}, x_{m+1}, ...)
                Y = np.tensordot(S3, Z, axes=(1, 2 + m))  # (T3, k, T2, k, ...)
                Y = np.moveaxis(Y, 2, 0)  # (T2, T3, ...)
                norms = np.sum(Y.reshape(Y.shape[0], Y.shape[1], -1) ** 2, axis=2)
                offer(total - norms, prefix)
                return
        for j, Q in enumerate(Q_lists[m]):
            rec(np.moveaxis(np.tensordot(Q.T, X, axes=(1, m)), 0, m), m + 1, prefix + (j,))
            if done():
                return

    rec(T, 0, ())


def fpt_tucker(A, params: FptParams) -> TuckerCandidate:
    """Guess-and-verify Tucker solver with exactly k columns per factor.

    For each mode m <= p the unfolding is sketched once, A_m = M_m(A) S_m^T
    T_m^T (Countsketch then sign); every trial draws a k x s Gaussian R and
    guesses U = A_m R^T. All trial tuples are scored by the closed-form
    projection cost (on A, or on a Countsketch PCP of the trailing modes)
    and the cheapest is returned; ties go to the lexicographically first tuple.
    """
    A = as_sparse(A)
    q, p, k = A.ndim, params.p, params.k
    if q != params.q:
        raise InvalidArgumentError(f"tensor has {q} modes, params say {params.q}")
    n_tuples = params.trials ** p
    if n_tuples > params.enumeration_cap:
        raise ResourceLimitError(f"{n_tuples} candidate tuples exceed the enumeration cap {params.enumeration_cap}")
    seed = params.seed
    eps = params.eps
    s = max(1, math.ceil(round(params.c_sign * p * k * max(math.log(p), 1.0) / eps, 9)))
    r_cs = max(1, math.ceil(round(params.c_cs * p**3 * k * k / eps**2, 9)))
    ledger = []
    guesses = []
    for m in range(p):
        others = [j for j in range(q) if j != m]
        S = countsketch_or_identity(r_cs, math.prod(A.dims[j] for j in others), rng.derive_seed(seed, "fpt", "S", m))
        Tm = sign_or_identity(s, S.rows, rng.derive_seed(seed, "fpt", "T", m))
        ledger += [ledger_entry(f"S[{m}]", S, r_cs), ledger_entry(f"T[{m}]", Tm, s)]
        # the fused group lands after mode 0 when m = 0 and in front of mode m otherwise
        ax = 1 if m == 0 else 0
        B = as_dense(apply_group(Tm, apply_group(S, A, others), [ax]))
        Ahat = B if m == 0 else B.T
        us = []
        for t in range(params.trials):
            R = GaussianK(k, Ahat.shape[1], rng.derive_seed(seed, "fpt", "R", m, t)).to_dense()
            us.append(Ahat @ R.T)
        guesses.append(us)

    if params.mode == "pcp":
        target, entry = pcp_compress(A, params, seed)
        ledger.append(entry)
    else:
        target = as_dense(A)
    bases = [[_orthonormal(U) for U in us] for us in guesses]
    best = [None]
    _candidate_costs(target, bases, best)
    cost, idx = best[0]
    factors = [guesses[m][j] for m, j in enumerate(idx)]
    exact = cost if params.mode == "exact" else None
    return TuckerCandidate(factors, tuple(idx), cost, exact,
                           {"sketches": ledger, "trials": params.trials, "s": s, "seed": seed})

