"""Sampled numerical certificates for contraction and incremental gain.

The LMI checks evaluate the matrix inequalities at a finite set of scheduling
samples, so a pass is a *sampled certificate*. For the constrained model
variants the guarantee already holds by construction; these checks are a
regression test of that construction, not a proof over the whole box.

The empirical probes simulate the increment dynamics
``dx_{t+1} = A(p_t) dx_t + B(p_t) du_t``, ``dy_t = C(p_t) dx_t + D(p_t) du_t``,
which is exact for LPV-SS models and avoids the cancellation of subtracting
two nearly equal trajectories. Models without ``coefficients`` (the LFR
baseline) are probed through paired simulations instead.
"""

import csv
import itertools
from dataclasses import dataclass, field

import numpy as np

from .bench import P_HIGH, P_LOW
from .errors import NonFiniteState
from .linalg import sym_eig

SLOPE_TOL = 1e-3
GAIN_TOL = 1e-9


def default_box(n_p):
    if n_p == 3:
        return P_LOW.copy(), P_HIGH.copy()
    return -np.ones(n_p), np.ones(n_p)


def sample_box(n, low, high, seed=0, vertices=True):
    """``n`` uniform samples of the box plus (optionally) its ``2^n_p`` vertices."""
    low = np.asarray(low, dtype=np.float64)
    high = np.asarray(high, dtype=np.float64)
    rng = np.random.default_rng(seed)
    pts = rng.uniform(low, high, size=(n, low.size))
    if vertices:
        corners = np.array(list(itertools.product(*zip(low, high))))
        pts = np.concatenate([pts, corners])
    return pts


@dataclass
class CertReport:
    property: str
    samples: int
    min_lmi_eig: float
    margin: float  # min eigenvalue relative to ||X||_2
    bound: float  # alpha (contraction) or gamma (lipschitz)
    empirical: float = float("nan")  # fitted slope or worst gain ratio
    passed: bool = False
    seed: int = 0
    notes: list = field(default_factory=list)

    FIELDS = ("property", "samples", "min_lmi_eig", "margin", "bound", "empirical", "passed", "seed")

    def to_text(self):
        lines = [
            f"property      : {self.property} (sampled certificate)",
            f"samples       : {self.samples}",
            f"min LMI eig   : {self.min_lmi_eig:.6e}",
            f"relative marg : {self.margin:.6e}",
            f"bound         : {self.bound:.6g}",
        ]
        if np.isfinite(self.empirical):
            label = "fitted slope" if self.property == "contraction" else "worst gain"
            lines.append(f"{label:<14}: {self.empirical:.9g}")
        lines.extend(f"note          : {n}" for n in self.notes)
        lines.append(f"result        : {'PASS' if self.passed else 'FAIL'}")
        return "\n".join(lines)

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(self.FIELDS)
            w.writerow([self.property, self.samples, repr(self.min_lmi_eig), repr(self.margin),
                        repr(self.bound), repr(self.empirical), int(self.passed), self.seed])


def read_cert_csv(path):
    with open(path, newline="") as fh:
        row = next(csv.DictReader(fh))
    return CertReport(row["property"], int(row["samples"]), float(row["min_lmi_eig"]),
                      float(row["margin"]), float(row["bound"]), float(row["empirical"]),
                      bool(int(row["passed"])), int(row["seed"]))


def _metric_for(model, metric):
    if metric is not None:
        return np.asarray(metric, dtype=np.float64)
    X = model.metric() if hasattr(model, "metric") else None
    # Unconstrained models have no built-in certificate; try the identity.
    return np.eye(model.n_x) if X is None else X


def contraction_lmi_eigs(A, metric, alpha):
    """Smallest eigenvalue of ``alpha^2 X - A^T X A`` for each stacked ``A``."""
    lmi = alpha ** 2 * metric - np.swapaxes(A, -1, -2) @ metric @ A
    return sym_eig(lmi).eigenvalues[..., 0]


def lipschitz_lmi_eigs(W, metric, gamma, n_u, n_y):
    """Smallest eigenvalue of ``diag(X, g^2 I) - W^T diag(X, I) W`` per stacked ``W``."""
    n_x = metric.shape[0]
    left = np.zeros((n_x + n_u,) * 2)
    left[:n_x, :n_x] = metric
    left[n_x:, n_x:] = gamma ** 2 * np.eye(n_u)
    mid = np.zeros((n_x + n_y,) * 2)
    mid[:n_x, :n_x] = metric
    mid[n_x:, n_x:] = np.eye(n_y)
    lmi = left - np.swapaxes(W, -1, -2) @ mid @ W
    return sym_eig(lmi).eigenvalues[..., 0]


def check_contraction_lmi(model, p_samples, metric=None, alpha=None, seed=0):
    """Minimum over samples of the contraction LMI eigenvalue.

    ``metric`` and ``alpha`` default to the model's own certificate (for the
    contracting variant). Models without a certificate matrix are checked
    against the identity metric, and ``alpha`` then defaults to 1.
    """
    X = _metric_for(model, metric)
    if alpha is None:
        alpha = getattr(model, "alpha", None) or 1.0
    A = model.coefficients(np.asarray(p_samples))[0]
    eigs = contraction_lmi_eigs(A, X, alpha)
    lo = float(np.min(eigs))
    scale = float(np.max(np.abs(sym_eig(X).eigenvalues)))
    return CertReport("contraction", len(p_samples), lo, lo / scale, float(alpha),
                      passed=lo > 0.0, seed=seed)


def check_lipschitz_lmi(model, p_samples, gamma=None, metric=None, seed=0):
    X = _metric_for(model, metric)
    gamma = float(model.gamma if gamma is None else gamma)
    W = model.W(np.asarray(p_samples))
    eigs = lipschitz_lmi_eigs(W, X, gamma, model.n_u, model.n_y)
    lo = float(np.min(eigs))
    scale = max(float(np.max(np.abs(sym_eig(X).eigenvalues))), gamma ** 2)
    return CertReport("lipschitz", len(p_samples), lo, lo / scale, gamma,
                      passed=lo > 0.0, seed=seed)


# ---------------------------------------------------------------------------
# empirical probes


def _random_signals(rng, trials, T, n_u, n_p, box, u_range):
    low, high = box
    u = rng.uniform(u_range[0], u_range[1], size=(trials, T, n_u))
    p = rng.uniform(low, high, size=(trials, T, n_p))
    return u, p


def increment_response(coeffs, du, dx0=None):
    """Simulate the increment system for batched coefficients ``(N, T, ...)``."""
    A, B, C, D = coeffs[:4]
    nb, T = du.shape[:2]
    dx = np.zeros((nb, A.shape[-1])) if dx0 is None else dx0.copy()
    dy = np.empty((nb, T, C.shape[-2]))
    xs = [dx]
    for t in range(T):
        dy[:, t] = np.einsum("bij,bj->bi", C[:, t], dx) + np.einsum("bij,bj->bi", D[:, t], du[:, t])
        dx = np.einsum("bij,bj->bi", A[:, t], dx) + np.einsum("bij,bj->bi", B[:, t], du[:, t])
        xs.append(dx)
    return dy, np.stack(xs, axis=1)


def increment_adjoint(coeffs, w):
    """Transpose of the ``du -> dy`` map (zero initial increment) applied to ``w``."""
    A, B, C, D = coeffs[:4]
    nb, T = w.shape[:2]
    lam = np.zeros((nb, A.shape[-1]))
    out = np.empty((nb, T, B.shape[-1]))
    for t in range(T - 1, -1, -1):
        out[:, t] = np.einsum("bji,bj->bi", B[:, t], lam) + np.einsum("bji,bj->bi", D[:, t], w[:, t])
        lam = np.einsum("bji,bj->bi", A[:, t], lam) + np.einsum("bji,bj->bi", C[:, t], w[:, t])
    return out


def _fit_slope(logs):
    t = np.arange(len(logs), dtype=np.float64)
    return float(np.polyfit(t, logs, 1)[0])


@dataclass
class ContractionProbe:
    max_slope: float
    slopes: np.ndarray
    norm: str


def empirical_contraction(model, trials=100, T=200, seed=0, box=None, u_range=(-1.0, 1.0),
                          fit_start=None, metric="auto"):
    """Worst least-squares slope of ``log ||x^a_t - x^b_t||`` over random trials.

    With ``metric="auto"`` the norm is the one induced by the model's
    certificate matrix when it has one (contracting variant), otherwise the
    Euclidean norm; pass an array to force a specific weighting or ``None``
    for Euclidean. The fit uses ``t`` in ``[fit_start, T]`` (default ``T/4``).
    """
    rng = np.random.default_rng(seed)
    box = box or default_box(model.n_p)
    u, p = _random_signals(rng, trials, T, model.n_u, model.n_p, box, u_range)
    xa = rng.uniform(-1.0, 1.0, size=(trials, model.n_x))
    xb = rng.uniform(-1.0, 1.0, size=(trials, model.n_x))
    if isinstance(metric, str):
        metric = model.metric() if hasattr(model, "metric") else None
    if hasattr(model, "coefficients"):
        coeffs = model.coefficients(p)
        _, dx = increment_response(coeffs, np.zeros_like(u), xa - xb)
    else:
        _, x1 = model.simulate(xa, u, p)
        _, x2 = model.simulate(xb, u, p)
        dx = x1 - x2
    if metric is None:
        norms = np.linalg.norm(dx, axis=-1)
        name = "euclidean"
    else:
        norms = np.sqrt(np.maximum(np.einsum("nti,ij,ntj->nt", dx, metric, dx), 0.0))
        name = "certificate"
    start = T // 4 if fit_start is None else fit_start
    slopes = np.empty(trials)
    for k in range(trials):
        seg = norms[k, start:]
        ok = seg > 1e-280
        # stop the fit where the increment underflows
        n_ok = len(seg) if ok.all() else int(np.argmin(ok))
        slopes[k] = -np.inf if n_ok < 2 else _fit_slope(np.log(seg[:n_ok]))
    return ContractionProbe(float(np.max(slopes)), slopes, name)


@dataclass
class GainProbe:
    max_ratio: float
    ratios: np.ndarray
    power_ratio: float = float("nan")
    diverged: int = 0


def _ratio(dy, du):
    num = np.sum(dy.reshape(len(dy), -1) ** 2, axis=1)
    den = np.sum(du.reshape(len(du), -1) ** 2, axis=1)
    return np.sqrt(np.divide(num, den, out=np.zeros_like(num), where=den > 0))


def empirical_gain(model, trials=100, T=200, seed=0, box=None, u_range=(-1.0, 1.0), p=None,
                   power_iters=30):
    """Worst observed ``sqrt(sum ||dy||^2 / sum ||du||^2)`` over input pairs.

    Probes are random input pairs, unit impulses, and (for LPV-SS models) a
    power iteration on the increment map for each scheduling trajectory,
    which approaches the worst input direction from below. A fixed scheduling
    trajectory ``p`` of shape ``(T, n_p)`` may be supplied.
    """
    rng = np.random.default_rng(seed)
    box = box or default_box(model.n_p)
    if p is not None:
        p = np.asarray(p, dtype=np.float64)
        T = p.shape[0]
        ps = np.broadcast_to(p, (trials,) + p.shape)
        ua = rng.uniform(u_range[0], u_range[1], size=(trials, T, model.n_u))
    else:
        ua, ps = _random_signals(rng, trials, T, model.n_u, model.n_p, box, u_range)
    ub = rng.uniform(u_range[0], u_range[1], size=ua.shape)
    du = ua - ub
    impulse = np.zeros_like(du)
    k = rng.integers(0, T, size=trials)
    impulse[np.arange(trials), k, rng.integers(0, model.n_u, size=trials)] = 1.0

    if hasattr(model, "coefficients"):
        if p is not None:
            # one scheduling trajectory shared by all trials
            coeffs = tuple(np.broadcast_to(c, (trials,) + c.shape[1:])
                           for c in model.coefficients(p[None]))
        else:
            coeffs = model.coefficients(ps)
        r_rand = _ratio(increment_response(coeffs, du)[0], du)
        r_imp = _ratio(increment_response(coeffs, impulse)[0], impulse)
        v = rng.standard_normal(du.shape)
        for _ in range(power_iters):
            v = increment_adjoint(coeffs, increment_response(coeffs, v)[0])
            nrm = np.linalg.norm(v.reshape(trials, -1), axis=1)
            v /= np.maximum(nrm, 1e-300)[:, None, None]
        r_pow = _ratio(increment_response(coeffs, v)[0], v)
        ratios = np.concatenate([r_rand, r_imp, r_pow])
        return GainProbe(float(np.max(ratios)), ratios, float(np.max(r_pow)))

    x0 = rng.uniform(-1.0, 1.0, size=(trials, model.n_x))
    ratios, diverged = [], 0
    for pert in (du, impulse):
        try:
            ya, _ = model.simulate(x0, ub + pert, ps)
            yb, _ = model.simulate(x0, ub, ps)
            ratios.append(_ratio(ya - yb, pert))
        except NonFiniteState:
            diverged += 1
            ratios.append(np.array([np.inf]))
    ratios = np.concatenate(ratios)
    return GainProbe(float(np.max(ratios)), ratios, diverged=diverged)


def certify(model, prop, samples=1000, seed=0, gamma=None, trials=100, T=200):
    """LMI check on sampled scheduling values plus the matching empirical probe."""
    low, high = default_box(model.n_p)
    pts = sample_box(samples, low, high, seed)
    if prop == "contraction":
        rep = check_contraction_lmi(model, pts, seed=seed)
        probe = empirical_contraction(model, trials=trials, T=T, seed=seed)
        rep.empirical = probe.max_slope
        ok = probe.max_slope <= np.log(rep.bound) + SLOPE_TOL
    elif prop == "lipschitz":
        rep = check_lipschitz_lmi(model, pts, gamma=gamma, seed=seed)
        probe = empirical_gain(model, trials=trials, T=T, seed=seed)
        rep.empirical = probe.max_ratio
        ok = probe.max_ratio <= rep.bound + GAIN_TOL
    else:
        raise ValueError(f"unknown property {prop!r}")
    rep.passed = rep.passed and bool(ok)
    return rep
