"""Direct parametrizations of contracting and Lipschitz-bounded LPV-SS models.

Both constructions push unconstrained matrices through a (possibly
non-square) Cayley transform so that the resulting coefficient matrices
satisfy the corresponding matrix inequality for every parameter value:

* contracting: ``A(p) = alpha Q Lambda^{-1} M(p) Lambda Q^T`` satisfies
  ``alpha^2 X - A^T X A > 0`` with ``X = Q Lambda^2 Q^T``;
* gamma-Lipschitz: ``W(p) = diag(Q Lambda^{-1}, I) M(p) diag(Lambda Q^T, gamma I)``
  satisfies ``diag(X, gamma^2 I) - W^T diag(X, I) W > 0``.

The ``*_op`` functions work on autodiff Vars (any leading batch axes); the
plain-named wrappers evaluate the same graph on numpy inputs. The inverse
constructions recover unconstrained parameters from a given contraction
matrix or orthogonal matrix and are used for round-trip checks.
"""

from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

from . import autodiff as ad
from .autodiff import Tape
from .errors import NormBoundViolated, ShapeMismatch, SingularMatrix
from .linalg import as_matrix, cayley, sym_eig

DEFAULT_EPSILON = 1e-2
ALPHA_MIN = 0.5


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


@dataclass
class ContractingParam:
    """Trainable bundle for the contracting parametrization.

    ``alpha`` is ``ALPHA_MIN + (1 - ALPHA_MIN) * sigmoid(alpha_raw)`` unless
    ``fixed_alpha`` is set, in which case ``alpha_raw`` is ignored.
    """

    d: np.ndarray
    Ycal: np.ndarray
    alpha_raw: float = 0.0
    epsilon: float = DEFAULT_EPSILON
    fixed_alpha: Optional[float] = None

    def __post_init__(self):
        self.d = np.asarray(self.d, dtype=np.float64).reshape(-1)
        self.Ycal = as_matrix(self.Ycal)
        if self.Ycal.shape != (self.n_x, self.n_x):
            raise ShapeMismatch(f"Ycal must be {self.n_x}x{self.n_x}")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if self.fixed_alpha is not None and not 0.0 < self.fixed_alpha <= 1.0:
            raise ValueError("fixed_alpha must lie in (0, 1]")

    @property
    def n_x(self):
        return self.d.shape[0]

    @property
    def alpha(self):
        if self.fixed_alpha is not None:
            return float(self.fixed_alpha)
        return ALPHA_MIN + (1.0 - ALPHA_MIN) * float(_sigmoid(self.alpha_raw))

    def metric(self):
        return metric_matrix(self.d, self.Ycal)


@dataclass(frozen=True)
class LipschitzDims:
    n_x: int
    n_u: int
    n_y: int

    @property
    def n(self):
        return self.n_x + min(self.n_u, self.n_y)

    @property
    def n0(self):
        return abs(self.n_y - self.n_u)

    @property
    def tall(self):
        """True when the stacked Cayley block is ``M`` itself (``n_y >= n_u``)."""
        return self.n_y >= self.n_u


@dataclass
class LipschitzParam:
    d: np.ndarray
    Ycal: np.ndarray
    gamma: float
    dims: LipschitzDims
    epsilon: float = DEFAULT_EPSILON

    def __post_init__(self):
        self.d = np.asarray(self.d, dtype=np.float64).reshape(-1)
        self.Ycal = as_matrix(self.Ycal)
        if self.gamma <= 0:
            raise ValueError("gamma must be positive")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if self.d.shape[0] != self.dims.n_x or self.Ycal.shape != (self.dims.n_x,) * 2:
            raise ShapeMismatch("d / Ycal do not match n_x")

    def metric(self):
        return metric_matrix(self.d, self.Ycal)


@dataclass
class PhiOutput:
    """Output of the coefficient map at one (or a batch of) scheduling values.

    Fields hold numpy arrays or autodiff Vars. ``Z`` may be None (empty) and
    ``B``, ``C``, ``D`` are only used by the contracting variant.
    """

    X: object
    Y: object
    Z: object = None
    B: object = None
    C: object = None
    D: object = None
    b: object = None


def metric_matrix(d, Ycal):
    """``Q diag(e^{2d}) Q^T`` with ``Q = cayley(Ycal - Ycal^T)``."""
    Ycal = as_matrix(Ycal)
    q = cayley(Ycal - Ycal.T)
    lam2 = np.exp(2.0 * np.asarray(d, dtype=np.float64).reshape(-1))
    return (q * lam2) @ q.T


# ---------------------------------------------------------------------------
# autodiff graph builders


def build_N_op(X, Y, Z, epsilon):
    """``X^T X + Y - Y^T + Z^T Z + eps I`` on Vars; ``Z`` may be None."""
    n = X.shape[-1]
    N = X.T @ X + (Y - Y.T)
    if Z is not None and Z.shape[-2] > 0:
        N = N + Z.T @ Z
    eps_eye = X.tape.const(np.broadcast_to(epsilon * np.eye(n), N.shape))
    return N + eps_eye


def cayley_op(N):
    """Cayley transform of a Var; ``I - N`` and ``(I + N)^{-1}`` commute."""
    eye = ad.eye_like(N.tape, N.shape[-1], N.shape[:-2])
    return ad.solve(eye + N, eye - N)


def extended_cayley_op(N, Z, tall=True):
    """Non-square Cayley stack ``[cayley(N); -2 Z (I+N)^{-1}]``.

    Returned as is when ``tall``, transposed otherwise.
    """
    eye = ad.eye_like(N.tape, N.shape[-1], N.shape[:-2])
    top = eye - N
    if Z is not None and Z.shape[-2] > 0:
        top = ad.concat([top, Z.scale(-2.0)], axis=-2)
    # [I - N; -2Z] (I+N)^{-1} = ((I+N)^{-T} [I - N; -2Z]^T)^T
    stack_ = ad.solve((eye + N).T, top.T).T
    return stack_ if tall else stack_.T


def orthogonal_op(Ycal):
    return cayley_op(Ycal - Ycal.T)


def alpha_op(alpha_raw, fixed_alpha=None):
    """Map the raw scalar Var to ``alpha`` in ``(ALPHA_MIN, 1)`` as a (1, 1) Var."""
    if fixed_alpha is not None:
        return alpha_raw.tape.const(np.array([[float(fixed_alpha)]]))
    raw = alpha_raw.reshape(1, 1)
    return raw.sigmoid().scale(1.0 - ALPHA_MIN) + alpha_raw.tape.const(np.array([[ALPHA_MIN]]))


def contracting_A_op(d, Ycal, alpha, X, Y, epsilon):
    """``alpha Q Lambda^{-1} cayley(N) Lambda Q^T`` on Vars.

    ``d`` is ``(n_x, 1)``, ``alpha`` a ``(1, 1)`` Var, ``X``/``Y`` are
    ``(..., n_x, n_x)``.
    """
    Q = orthogonal_op(Ycal)
    left = Q @ ad.diag(d.scale(-1.0).exp())
    right = ad.diag(d.exp()) @ Q.T
    M = cayley_op(build_N_op(X, Y, None, epsilon))
    core = left @ M @ right
    return alpha.broadcast_to(core.shape) * core


def lipschitz_W_op(d, Ycal, X, Y, Z, gamma, epsilon, dims):
    """Full ``(n_x+n_y) x (n_x+n_u)`` coefficient matrix ``W(p)`` on Vars."""
    tape = d.tape
    n_x, n_u, n_y = dims.n_x, dims.n_u, dims.n_y
    Q = orthogonal_op(Ycal)
    qli = Q @ ad.diag(d.scale(-1.0).exp())
    lqt = ad.diag(d.exp()) @ Q.T
    left = ad.block([
        [qli, tape.const(np.zeros((n_x, n_y)))],
        [tape.const(np.zeros((n_y, n_x))), tape.const(np.eye(n_y))],
    ])
    right = ad.block([
        [lqt, tape.const(np.zeros((n_x, n_u)))],
        [tape.const(np.zeros((n_u, n_x))), tape.const(gamma * np.eye(n_u))],
    ])
    N = build_N_op(X, Y, Z, epsilon)
    M = extended_cayley_op(N, Z, tall=dims.tall)
    return left @ M @ right


def split_W(W, n_x, n_u):
    """Split ``W`` (array or Var) into ``A, B, C, D`` blocks."""
    return W[..., :n_x, :n_x], W[..., :n_x, n_x:], W[..., n_x:, :n_x], W[..., n_x:, n_x:]


# ---------------------------------------------------------------------------
# numpy wrappers


def _maybe(tape, a):
    if a is None:
        return None
    a = np.asarray(a, dtype=np.float64)
    return tape.const(a)


def build_N(X, Y, Z=None, epsilon=DEFAULT_EPSILON):
    tape = Tape()
    X = tape.const(np.asarray(X, dtype=np.float64))
    return build_N_op(X, _maybe(tape, Y), _maybe(tape, Z), epsilon).value


def extended_cayley(N, Z=None, tall=True):
    """Numeric non-square Cayley transform (see :func:`extended_cayley_op`)."""
    tape = Tape()
    return extended_cayley_op(_maybe(tape, N), _maybe(tape, Z), tall).value


def contracting_A(params, phi):
    tape = Tape()
    alpha = tape.const(np.array([[params.alpha]]))
    return contracting_A_op(
        tape.const(params.d.reshape(-1, 1)),
        tape.const(params.Ycal),
        alpha,
        _maybe(tape, phi.X),
        _maybe(tape, phi.Y),
        params.epsilon,
    ).value


def lipschitz_W(params, phi):
    tape = Tape()
    return lipschitz_W_op(
        tape.const(params.d.reshape(-1, 1)),
        tape.const(params.Ycal),
        _maybe(tape, phi.X),
        _maybe(tape, phi.Y),
        _maybe(tape, phi.Z),
        params.gamma,
        params.epsilon,
        params.dims,
    ).value


# ---------------------------------------------------------------------------
# inverse constructions


class Lemma1Params(NamedTuple):
    X: np.ndarray
    Y: np.ndarray
    Z: np.ndarray
    epsilon: float


def inverse_lemma1(M, epsilon=DEFAULT_EPSILON, max_halvings=60):
    """Recover ``(X, Y, Z, eps)`` whose Cayley stack equals a contraction ``M``.

    ``M`` is square or tall with ``M^T M < I``. ``eps`` starts at
    ``epsilon`` and is halved until ``H - eps I`` is positive semidefinite.
    """
    M = as_matrix(M)
    rows, n = M.shape
    if rows < n:
        raise ShapeMismatch("inverse_lemma1 expects a square or tall matrix; transpose wide ones")
    top_eig = sym_eig(M.T @ M).eigenvalues[-1]
    if top_eig >= 1.0 - 1e-10:
        raise NormBoundViolated(f"max eigenvalue of M^T M is {top_eig:.3g}")
    M1, M2 = M[:n], M[n:]
    eye = np.eye(n)
    N = cayley(M1)
    Z = -0.5 * M2 @ (eye + N)
    H = 0.5 * (N + N.T) - Z.T @ Z
    h_min = sym_eig(H).eigenvalues[0]
    eps = float(epsilon)
    for _ in range(max_halvings):
        if h_min - eps >= 0.0:
            break
        eps *= 0.5
    else:
        raise NormBoundViolated("could not find epsilon with H - eps I >= 0")
    eig = sym_eig(H - eps * eye)
    sigma = np.clip(eig.eigenvalues, 0.0, None)
    # H - eps I = U^T diag(sigma) U with U = V^T
    X = np.sqrt(sigma)[:, None] * eig.eigenvectors.T
    Y = 0.5 * N
    return Lemma1Params(X, Y, Z, eps)


def inverse_lemma2(Q):
    """Strictly lower-triangular ``Ycal`` with ``cayley(Ycal - Ycal^T) = Q``."""
    Q = as_matrix(Q)
    n = Q.shape[0]
    if Q.shape != (n, n):
        raise ShapeMismatch("Q must be square")
    if np.max(np.abs(Q.T @ Q - np.eye(n))) > 1e-9:
        raise ValueError("Q is not orthogonal")
    try:
        N = cayley(Q)
    except SingularMatrix:
        raise SingularMatrix("Q has an eigenvalue of -1") from None
    return np.tril(N, -1)
