"""Dense linear-algebra kernels: orthonormalization, a reference SVD oracle,
Gram matrices, subspace distances, and basis-alignment transforms.

Matrices are plain float64 ``numpy.ndarray`` values. An "orthonormal basis"
is a d x r array Q with ``Q.T @ Q == I_r`` up to :data:`ORTHO_TOL`; functions
here either produce such bases or expect them as inputs. All operations are
pure and safe to call concurrently.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

from .errors import ConvergenceFailure, DimensionMismatch, RankDeficient

__all__ = [
    "ORTHO_TOL",
    "RANK_TOL",
    "SvdResult",
    "as_matrix",
    "gram",
    "is_orthonormal",
    "orth",
    "procrustes",
    "projection_distance",
    "sign_fix",
    "sin_theta_k",
    "spectral_norm",
    "svd",
]

# Maximum entrywise deviation of Q.T @ Q from the identity for a basis to
# count as orthonormal.
ORTHO_TOL = 1e-10

# A QR pivot below RANK_TOL * ||y||_2 marks the input as rank deficient.
RANK_TOL = 1e-12


class SvdResult(NamedTuple):
    """Thin SVD ``a = u @ diag(singular_values) @ v.T``.

    ``u`` and ``v`` hold left/right singular vectors as columns;
    ``singular_values`` is nonnegative and non-increasing.
    """

    u: np.ndarray
    singular_values: np.ndarray
    v: np.ndarray


def as_matrix(a) -> np.ndarray:
    """Coerce ``a`` to a 2-D float64 array (no copy when already one)."""
    m = np.asarray(a, dtype=np.float64)
    if m.ndim != 2:
        raise DimensionMismatch(f"expected a 2-D array, got shape {m.shape}")
    return m


def is_orthonormal(q, tol: float = ORTHO_TOL) -> bool:
    q = as_matrix(q)
    gramian = q.T @ q
    return bool(np.abs(gramian - np.eye(q.shape[1])).max() <= tol)


def orth(y, rank_tol: float = RANK_TOL, require_full_rank: bool = True) -> np.ndarray:
    """Orthonormalize the columns of ``y`` via QR factorization.

    The factorization is deterministic: column signs of Q are flipped so the
    diagonal of R is nonnegative. With ``require_full_rank`` (the default) a
    diagonal entry of R below ``rank_tol * ||y||_2`` raises
    :class:`RankDeficient`. Passing ``require_full_rank=False`` returns the
    (still orthonormal) Q unconditionally, which the iteration engine needs
    when a shard has fewer rows than the iteration rank.
    """
    y = as_matrix(y)
    if y.shape[0] < y.shape[1]:
        raise DimensionMismatch(f"cannot orthonormalize {y.shape}: more columns than rows")
    q, r = np.linalg.qr(y)
    diag = np.diagonal(r)
    if require_full_rank:
        scale = float(np.linalg.norm(y, 2))
        if scale == 0.0 or float(np.abs(diag).min()) < rank_tol * scale:
            raise RankDeficient(
                f"pivot {float(np.abs(diag).min()):.3e} under threshold "
                f"{rank_tol:.1e} * ||y||_2 = {rank_tol * scale:.3e}"
            )
    signs = np.where(diag < 0.0, -1.0, 1.0)
    return q * signs


def gram(shard) -> np.ndarray:
    """Sample second-moment matrix ``shard.T @ shard / rows``."""
    shard = as_matrix(shard)
    if shard.shape[0] < 1:
        raise DimensionMismatch("shard must contain at least one row")
    return (shard.T @ shard) / shard.shape[0]


def svd(a) -> SvdResult:
    """Thin SVD of a dense matrix via LAPACK, deterministic for fixed input.

    Raises :class:`ConvergenceFailure` if the underlying iteration does not
    converge (never silently returns garbage).
    """
    a = as_matrix(a)
    if not np.isfinite(a).all():
        raise ValueError("svd requires finite entries")
    try:
        u, s, vt = np.linalg.svd(a, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise ConvergenceFailure(f"SVD did not converge: {exc}") from exc
    return SvdResult(u, s, vt.T)


def spectral_norm(a) -> float:
    """Largest singular value, computed through :func:`svd`."""
    res = svd(a)
    return float(res.singular_values[0]) if res.singular_values.size else 0.0


def _complement_norm(u: np.ndarray, v: np.ndarray) -> float:
    # ||(I - u u^T) v||_2 without forming the d x d projector.
    resid = v - u @ (u.T @ v)
    return float(np.linalg.norm(resid, 2))


def projection_distance(u, v) -> float:
    """Spectral-norm distance ``||u u^T - v v^T||_2`` between two subspaces.

    Both arguments must be d x k orthonormal bases of the same shape. The
    value lies in [0, 1] and is symmetric in its arguments by construction.
    """
    u = as_matrix(u)
    v = as_matrix(v)
    if u.shape != v.shape:
        raise DimensionMismatch(f"subspace bases differ in shape: {u.shape} vs {v.shape}")
    a = _complement_norm(u, v)
    b = _complement_norm(v, u)
    return min(max(a, b), 1.0)


def sin_theta_k(z, v, k: int | None = None) -> float:
    """``||(I - z z^T) v[:, :k]||_2``: how much of the reference subspace
    escapes the span of ``z``.

    ``z`` is d x r, ``v`` is d x k with r >= k; for r == k this coincides
    with :func:`projection_distance`.
    """
    z = as_matrix(z)
    v = as_matrix(v)
    if k is not None:
        if k > v.shape[1]:
            raise DimensionMismatch(f"k={k} exceeds reference width {v.shape[1]}")
        v = v[:, :k]
    if z.shape[0] != v.shape[0]:
        raise DimensionMismatch(f"ambient dimensions differ: {z.shape[0]} vs {v.shape[0]}")
    if z.shape[1] < v.shape[1]:
        raise DimensionMismatch(f"basis rank {z.shape[1]} below reference rank {v.shape[1]}")
    return min(_complement_norm(z, v), 1.0)


def procrustes(z_i, z_base) -> np.ndarray:
    """Orthogonal r x r matrix minimizing ``||z_i @ D - z_base||_F``.

    Closed form: with ``z_i.T @ z_base = W1 diag(s) W2.T``, the minimizer is
    ``D = W1 @ W2.T``. A rank-deficient cross-Gram is fine: the SVD supplies
    an orthogonal completion of the zero directions (any completion is
    optimal); the result is then re-orthonormalized to clear rounding drift.
    """
    z_i = as_matrix(z_i)
    z_base = as_matrix(z_base)
    if z_i.shape != z_base.shape:
        raise DimensionMismatch(f"alignment operands differ in shape: {z_i.shape} vs {z_base.shape}")
    cross = z_i.T @ z_base
    res = svd(cross)
    d = res.u @ res.v.T
    s = res.singular_values
    if s.size and s[-1] <= 1e-12 * max(float(s[0]), 1.0):
        d = orth(d, require_full_rank=False)
    return d


def sign_fix(z_i, z_base) -> np.ndarray:
    """Diagonal +-1 matrix minimizing ``||z_i @ D - z_base||_F`` over sign
    flips: ``D[j, j] = sgn(<z_i[:, j], z_base[:, j]>)``.

    A zero inner product resolves to +1 so the result is stable and
    idempotent. Runs in O(d r) time.
    """
    z_i = as_matrix(z_i)
    z_base = as_matrix(z_base)
    if z_i.shape != z_base.shape:
        raise DimensionMismatch(f"alignment operands differ in shape: {z_i.shape} vs {z_base.shape}")
    ips = np.einsum("ij,ij->j", z_i, z_base)
    return np.diag(np.where(ips < 0.0, -1.0, 1.0))
