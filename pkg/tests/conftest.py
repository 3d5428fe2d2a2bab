import numpy as np

from lpvss.autodiff import Tape
from lpvss.lpvmodel import LpvSsModel

FD_STEP = 1e-6
FD_RTOL = 1e-5
FD_ATOL = 1e-7


def tape_gradients(fn, params):
    """Reverse-mode gradients of ``fn(tape, vars) -> (1, 1) Var``."""
    tape = Tape()
    leaves = {k: tape.param(v) for k, v in params.items()}
    loss = fn(tape, leaves)
    grads = tape.backward(loss)
    return float(loss.value.reshape(-1)[0]), {k: grads[v.id] for k, v in leaves.items()}


def fd_gradients(fn, params, h=FD_STEP):
    """Central finite differences of the same scalar function."""

    def value(ps):
        tape = Tape()
        leaves = {k: tape.const(v) for k, v in ps.items()}
        return float(fn(tape, leaves).value.reshape(-1)[0])

    out = {}
    for k, v in params.items():
        g = np.zeros_like(v, dtype=np.float64)
        for idx in np.ndindex(v.shape):
            plus = {kk: vv.copy() for kk, vv in params.items()}
            minus = {kk: vv.copy() for kk, vv in params.items()}
            plus[k][idx] += h
            minus[k][idx] -= h
            g[idx] = (value(plus) - value(minus)) / (2 * h)
        out[k] = g
    return out


def max_fd_violation(fn, params, rtol=FD_RTOL, atol=FD_ATOL, h=FD_STEP):
    """Largest ``|g_ad - g_fd| / (atol + rtol |g_fd|)``; passing means ``<= 1``."""
    params = {k: np.array(v, dtype=np.float64) for k, v in params.items()}
    _, ad = tape_gradients(fn, params)
    fd = fd_gradients(fn, params, h)
    worst = 0.0
    for k in params:
        err = np.abs(ad[k] - fd[k]) / (atol + rtol * np.abs(fd[k]))
        worst = max(worst, float(np.max(err)) if err.size else 0.0)
    return worst


def lti_affine_model(A, B, C, D, bx=None, by=None):
    """Affine-map model whose coefficients ignore p."""
    n_x, n_u = B.shape
    n_y = C.shape[0]
    m = LpvSsModel("affine", n_x, n_u, n_y, 3, coeff={"kind": "affine"})
    W = np.block([[A, B], [C, D]])
    b = np.concatenate([np.zeros(n_x) if bx is None else bx, np.zeros(n_y) if by is None else by])
    m.params["phi.S1"][:] = 0.0
    m.params["phi.S0"][:, 0] = np.concatenate([W.flatten(order="F"), b])
    return m
