"""Dense symmetric linear algebra: jittered Cholesky, triangular solves,
and the reverse-mode rule for the Cholesky factorization.

Everything here works on plain float64 numpy arrays. Lower-triangular
factors are stored as full (n, n) arrays with zeros above the diagonal.
"""

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import DimensionMismatch, NonFinite, NotPositiveDefinite, SingularDiagonal


@dataclass(frozen=True)
class JitterPolicy:
    """Escalating diagonal regularization for near-singular matrices.

    The ladder tried is 0, initial, initial*growth, ... (max_tries nonzero
    rungs). When scale_by_mean_diag is set, the jitter is multiplied by the
    mean diagonal of the input so it is scale-free.
    """

    initial: float = 1e-8
    growth: float = 10.0
    max_tries: int = 8
    scale_by_mean_diag: bool = True

    def __post_init__(self):
        if self.initial <= 0:
            raise ValueError("initial jitter must be > 0")
        if self.growth <= 1:
            raise ValueError("growth must be > 1")
        if self.max_tries < 1:
            raise ValueError("max_tries must be >= 1")

    def ladder(self):
        yield 0.0
        j = self.initial
        for _ in range(self.max_tries):
            yield j
            j *= self.growth


DEFAULT_JITTER = JitterPolicy()


def cholesky(S, policy=DEFAULT_JITTER):
    """Lower Cholesky factor of a symmetric matrix with jitter escalation.

    Returns (L, jitter_used) where L @ L.T == S + jitter_used * d * I and
    d is the mean diagonal of S (1.0 when scale_by_mean_diag is off or the
    diagonal is all zero). jitter_used is the smallest rung of the policy
    ladder for which the factorization succeeds.
    """
    S = np.asarray(S, dtype=float)
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise DimensionMismatch(f"expected square matrix, got shape {S.shape}")
    if not np.isfinite(S).all():
        raise NonFinite("matrix contains NaN or Inf")
    scale = np.abs(S).max()
    asym = np.abs(S - S.T).max()
    if scale > 0 and asym > 1e-10 * scale:
        raise DimensionMismatch(f"matrix not symmetric (relative asymmetry {asym / scale:.2e})")

    n = S.shape[0]
    diag_scale = 1.0
    if policy.scale_by_mean_diag:
        md = float(np.trace(S)) / max(n, 1)
        if md > 0:
            diag_scale = md
    for jitter in policy.ladder():
        try:
            L = scipy.linalg.cholesky(S + (jitter * diag_scale) * np.eye(n), lower=True)
        except scipy.linalg.LinAlgError:
            continue
        if np.all(np.diag(L) > 0):
            return L, jitter
    raise NotPositiveDefinite(
        f"Cholesky failed after {policy.max_tries} jitter escalations (max jitter tried "
        f"{policy.initial * policy.growth ** (policy.max_tries - 1):.1e})"
    )


def tri_solve(L, B, mode="lower"):
    """Solve L X = B ("lower") or L^T X = B ("lower_transposed")."""
    L = np.asarray(L, dtype=float)
    B = np.asarray(B, dtype=float)
    if mode not in ("lower", "lower_transposed"):
        raise ValueError(f"unknown mode {mode!r}")
    if L.shape[0] != B.shape[0]:
        raise DimensionMismatch(f"L dim {L.shape[0]} != B rows {B.shape[0]}")
    if np.any(np.abs(np.diag(L)) < 1e-300):
        raise SingularDiagonal("triangular factor has (near-)zero diagonal entry")
    return scipy.linalg.solve_triangular(L, B, lower=True, trans="T" if mode == "lower_transposed" else "N")


def _phi(A):
    # lower triangle with the diagonal halved
    out = np.tril(A)
    out[np.diag_indices_from(out)] *= 0.5
    return out


def cholesky_backward(L, L_adj):
    """Adjoint of S -> chol(S) for symmetric S.

    Given the factor L and the cotangent L_adj (lower triangular), returns
    the symmetric S_adj with <S_adj, dS> = <L_adj, dL> for every symmetric
    perturbation dS.
    """
    L = np.asarray(L, dtype=float)
    L_adj = np.asarray(L_adj, dtype=float)
    if L.shape != L_adj.shape or L.ndim != 2 or L.shape[0] != L.shape[1]:
        raise DimensionMismatch(f"shape mismatch: {L.shape} vs {L_adj.shape}")
    P = _phi(L.T @ np.tril(L_adj))
    # S_adj = L^{-T} P L^{-1}, then symmetrize
    tmp = scipy.linalg.solve_triangular(L, P.T, lower=True, trans="T").T  # P L^{-1}
    S_adj = scipy.linalg.solve_triangular(L, tmp, lower=True, trans="T")  # L^{-T} (P L^{-1})
    return 0.5 * (S_adj + S_adj.T)
