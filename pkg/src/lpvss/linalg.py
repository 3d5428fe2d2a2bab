"""Small dense linear algebra kernels.

Matrices are plain 2-D ``float64`` numpy arrays. ``sym_eig`` and
``spectral_radius_upper`` also accept stacks of matrices with shape
``(..., n, n)`` and process them in one vectorized pass, which is what the
sampled certificate checks rely on.
"""

from dataclasses import dataclass

import numpy as np

from .errors import NoConvergence, ShapeMismatch, SingularMatrix

PIVOT_RTOL = 1e-12
JACOBI_RTOL = 1e-12
JACOBI_MAX_SWEEPS = 100


def as_matrix(a):
    """Convert ``a`` to a finite 2-D float64 array."""
    m = np.array(a, dtype=np.float64)
    if m.ndim == 1:
        m = m.reshape(-1, 1)
    if m.ndim != 2:
        raise ShapeMismatch(f"expected a matrix, got ndim={m.ndim}")
    if not np.all(np.isfinite(m)):
        raise ValueError("matrix has non-finite entries")
    return m


def _require_square(a):
    if a.ndim < 2 or a.shape[-1] != a.shape[-2]:
        raise ShapeMismatch(f"expected square matrix, got shape {a.shape}")


@dataclass(frozen=True)
class LuFactors:
    """Packed LU factors with row permutation: ``A[perm] = L @ U``.

    ``lu`` holds the strictly lower part of the unit-diagonal ``L`` and the
    upper triangle ``U``. ``parity`` is the sign of the permutation.
    """

    lu: np.ndarray
    perm: np.ndarray
    parity: int

    @property
    def L(self):
        return np.tril(self.lu, -1) + np.eye(self.lu.shape[0])

    @property
    def U(self):
        return np.triu(self.lu)

    def determinant(self):
        return self.parity * float(np.prod(np.diag(self.lu)))


def lu_factor(a):
    """LU factorization with partial pivoting.

    Raises :class:`SingularMatrix` when a pivot falls below
    ``1e-12`` times the largest entry magnitude of ``a``.
    """
    a = as_matrix(a)
    _require_square(a)
    n = a.shape[0]
    lu = a.copy()
    perm = np.arange(n)
    parity = 1
    scale = np.max(np.abs(a)) if a.size else 0.0
    tol = PIVOT_RTOL * scale
    for k in range(n):
        piv = k + int(np.argmax(np.abs(lu[k:, k])))
        if scale == 0.0 or abs(lu[piv, k]) <= tol:
            raise SingularMatrix(f"pivot {k} is numerically zero")
        if piv != k:
            lu[[k, piv]] = lu[[piv, k]]
            perm[[k, piv]] = perm[[piv, k]]
            parity = -parity
        lu[k + 1:, k] /= lu[k, k]
        lu[k + 1:, k + 1:] -= np.outer(lu[k + 1:, k], lu[k, k + 1:])
    return LuFactors(lu, perm, parity)


def lu_solve(factors, b):
    b = np.asarray(b, dtype=np.float64)
    vector = b.ndim == 1
    rhs = b.reshape(-1, 1) if vector else b
    lu = factors.lu
    n = lu.shape[0]
    if rhs.shape[0] != n:
        raise ShapeMismatch(f"rhs has {rhs.shape[0]} rows, expected {n}")
    x = rhs[factors.perm].copy()
    for i in range(1, n):
        x[i] -= lu[i, :i] @ x[:i]
    for i in range(n - 1, -1, -1):
        x[i] = (x[i] - lu[i, i + 1:] @ x[i + 1:]) / lu[i, i]
    return x.ravel() if vector else x


def solve(a, b):
    """Solve ``a @ x = b`` for ``x``."""
    return lu_solve(lu_factor(a), b)


@dataclass(frozen=True)
class SymEig:
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray


def sym_eig(s, rtol=JACOBI_RTOL, max_sweeps=JACOBI_MAX_SWEEPS):
    """Cyclic Jacobi eigendecomposition of symmetric matrices.

    Accepts ``(n, n)`` or a stack ``(..., n, n)``; the input is symmetrized
    first. Eigenvalues come back in ascending order, eigenvectors as the
    columns of ``eigenvectors``.
    """
    s = np.asarray(s, dtype=np.float64)
    _require_square(s)
    batch_shape = s.shape[:-2]
    n = s.shape[-1]
    a = 0.5 * (s + np.swapaxes(s, -1, -2))
    a = a.reshape((-1, n, n)).copy()
    # work at unit scale so the tolerance neither underflows nor overflows
    scl = np.max(np.abs(a), axis=(-1, -2))
    scl = np.where(scl > 0.0, scl, 1.0)
    a /= scl[:, None, None]
    v = np.broadcast_to(np.eye(n), a.shape).copy()
    fro = np.sqrt(np.sum(a * a, axis=(-1, -2)))
    offmask = ~np.eye(n, dtype=bool)

    for _ in range(max_sweeps + 1):
        off = np.max(np.abs(a[:, offmask]), axis=-1) if n > 1 else np.zeros(len(a))
        if np.all(off <= rtol * fro):
            break
        if _ == max_sweeps:
            raise NoConvergence(f"Jacobi did not converge in {max_sweeps} sweeps")
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[:, p, q]
                active = np.abs(apq) > 0.0
                if not np.any(active):
                    continue
                safe = np.where(active, apq, 1.0)
                theta = (a[:, q, q] - a[:, p, p]) / (2.0 * safe)
                t = np.sign(theta) / (np.abs(theta) + np.hypot(theta, 1.0))
                t = np.where(theta == 0.0, 1.0, t)
                t = np.where(active, t, 0.0)
                c = 1.0 / np.sqrt(t * t + 1.0)
                sn = t * c
                # A <- J^T A J, rotating rows then columns p, q
                ap = a[:, p, :].copy()
                aq = a[:, q, :].copy()
                a[:, p, :] = c[:, None] * ap - sn[:, None] * aq
                a[:, q, :] = sn[:, None] * ap + c[:, None] * aq
                ap = a[:, :, p].copy()
                aq = a[:, :, q].copy()
                a[:, :, p] = c[:, None] * ap - sn[:, None] * aq
                a[:, :, q] = sn[:, None] * ap + c[:, None] * aq
                vp = v[:, :, p].copy()
                vq = v[:, :, q].copy()
                v[:, :, p] = c[:, None] * vp - sn[:, None] * vq
                v[:, :, q] = sn[:, None] * vp + c[:, None] * vq

    w = np.diagonal(a, axis1=-2, axis2=-1) * scl[:, None]
    order = np.argsort(w, axis=-1, kind="stable")
    w = np.take_along_axis(w, order, axis=-1)
    v = np.take_along_axis(v, order[:, None, :], axis=-1)
    return SymEig(w.reshape(batch_shape + (n,)), v.reshape(batch_shape + (n, n)))


def min_eigenvalue(s):
    return sym_eig(s).eigenvalues[..., 0]


def cayley(m):
    """Cayley transform ``(I - m) (I + m)^{-1}``.

    Computed from the transposed system ``(I + m)^T X^T = (I - m)^T``.
    """
    m = as_matrix(m)
    _require_square(m)
    eye = np.eye(m.shape[0])
    return solve((eye + m).T, (eye - m).T).T


def spectral_radius_upper(a, iters=500, starts=5, seed=0):
    """Power-iteration estimate of the spectral radius.

    Each of ``starts`` random vectors is pushed through ``iters``
    normalized iterations; the growth rate is averaged over the second half
    so that complex-conjugate dominant pairs still give a stable estimate.
    Returns the largest estimate (an array for stacked input).
    """
    a = np.asarray(a, dtype=np.float64)
    _require_square(a)
    batch_shape = a.shape[:-2]
    n = a.shape[-1]
    mats = a.reshape((-1, n, n))
    rng = np.random.default_rng(seed)
    iters = max(int(iters), 2)
    half = iters // 2
    best = np.zeros(len(mats))
    for _ in range(starts):
        x = rng.standard_normal((len(mats), n))
        x /= np.linalg.norm(x, axis=-1, keepdims=True)
        logsum = np.zeros(len(mats))
        dead = np.zeros(len(mats), dtype=bool)
        for k in range(iters):
            x = np.einsum("bij,bj->bi", mats, x)
            nrm = np.linalg.norm(x, axis=-1)
            dead |= nrm == 0.0
            nrm = np.where(dead, 1.0, nrm)
            x /= nrm[:, None]
            if k >= iters - half:
                logsum += np.log(nrm)
        est = np.where(dead, 0.0, np.exp(logsum / half))
        best = np.maximum(best, est)
    best = best.reshape(batch_shape)
    return float(best) if best.ndim == 0 else best
