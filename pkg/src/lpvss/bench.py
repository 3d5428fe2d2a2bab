"""Benchmark data: the third-order LPV data-generating system and its datasets.

Four datasets are defined (name: T, N_b, input range, scheduling scale):

    training    200  3200  [-1, 1]    0.3
    validation  200  1280  [-1, 1]    0.3
    test-a      200    30  [-1, 1]    0.3
    test-b     6000     1  [-20, 20]  1.0

The scheduling box is ``[-1, 1] x [0, 4] x [-2, 2]``; a scale ``s`` means
every bound is multiplied by ``s``. Inputs are a ten-tone multisine plus
white noise, min-max rescaled onto the input range.
"""

import csv
import hashlib
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import NonFiniteState
from .ident import nrmse

P_LOW = np.array([-1.0, 0.0, -2.0])
P_HIGH = np.array([1.0, 4.0, 2.0])

A_D = np.array([
    [[-0.3885, -0.1912, 0.1631],
     [0.3261, -0.2583, -0.9150],
     [-0.1664, -0.1384, 0.0768]],
    [[0.2650, -0.2214, -0.1866],
     [0.1747, 0.1687, -0.5876],
     [-0.0477, -0.1313, 0.2863]],
    [[0.1476, 0.1390, 0.0901],
     [-0.1242, 0.1903, 0.4027],
     [0.0403, 0.0845, 0.0971]],
    [[0.1613, -0.0998, -0.1652],
     [0.0349, 0.0645, -0.1630],
     [0.0098, -0.0529, 0.0591]],
])
B_D = np.array([
    [[-3.4269], [-0.3316], [-2.1006]],
    [[-1.1096], [-0.8456], [-0.5727]],
    [[-0.5587], [0.1784], [-0.1969]],
    [[0.0], [0.0], [0.0]],
])
C_D = np.array([
    [[-0.2097, 0.0607, 0.1421]],
    [[0.0, 0.0, 0.0]],
    [[0.0, 0.0, 0.0]],
    [[0.0, 0.0, 0.0]],
])
D_D = np.array([[[0.3]], [[0.01]], [[0.0]], [[0.04]]])

# the listed 0.08 is read as the noise standard deviation (see README)
NOISE_STD = 0.08
INPUT_NOISE_VAR = 0.05
N_SINES = 10
PHASE_TRIALS = 50


def system_checksum():
    """SHA-256 over the coefficient tables, guarding against transcription edits."""
    h = hashlib.sha256()
    for arr in (A_D, B_D, C_D, D_D):
        h.update(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    return h.hexdigest()


@dataclass(frozen=True)
class TrueSystem:
    A: np.ndarray = field(default_factory=A_D.copy)
    B: np.ndarray = field(default_factory=B_D.copy)
    C: np.ndarray = field(default_factory=C_D.copy)
    D: np.ndarray = field(default_factory=D_D.copy)
    noise_std: float = NOISE_STD

    n_x = 3
    n_u = 1
    n_y = 1
    n_p = 3

    @staticmethod
    def _affine(family, p):
        p = np.asarray(p, dtype=np.float64)
        return family[0] + np.einsum("...i,ijk->...jk", p, family[1:])

    def coefficients(self, p):
        return (self._affine(self.A, p), self._affine(self.B, p),
                self._affine(self.C, p), self._affine(self.D, p))

    def simulate(self, u, p, x0=None):
        """Noise-free response for a batch ``u: (N, T, 1)``, ``p: (N, T, 3)``."""
        A, B, C, D = self.coefficients(p)
        nb, T = u.shape[:2]
        x = np.zeros((nb, self.n_x)) if x0 is None else np.array(x0, dtype=np.float64)
        ys = np.empty((nb, T, self.n_y))
        for t in range(T):
            ys[:, t] = np.einsum("bij,bj->bi", C[:, t], x) + np.einsum("bij,bj->bi", D[:, t], u[:, t])
            x = np.einsum("bij,bj->bi", A[:, t], x) + np.einsum("bij,bj->bi", B[:, t], u[:, t])
        return ys


@dataclass(frozen=True)
class DatasetSpec:
    name: str
    T: int
    n_b: int
    u_min: float
    u_max: float
    p_scale: float


SPECS = {
    "training": DatasetSpec("training", 200, 3200, -1.0, 1.0, 0.3),
    "validation": DatasetSpec("validation", 200, 1280, -1.0, 1.0, 0.3),
    "test-a": DatasetSpec("test-a", 200, 30, -1.0, 1.0, 0.3),
    "test-b": DatasetSpec("test-b", 6000, 1, -20.0, 20.0, 1.0),
}
_SET_INDEX = {name: i for i, name in enumerate(SPECS)}


@dataclass
class Dataset:
    name: str
    u: np.ndarray  # (N_b, T, 1)
    p: np.ndarray  # (N_b, T, 3)
    y: np.ndarray  # (N_b, T, 1), noisy
    meta: dict = field(default_factory=dict)

    @property
    def T(self):
        return self.u.shape[1]

    @property
    def n_b(self):
        return self.u.shape[0]

    def subset(self, n):
        meta = dict(self.meta, N_b=min(n, self.n_b))
        return Dataset(self.name, self.u[:n], self.p[:n], self.y[:n], meta)


def excitation(T, u_range=(-1.0, 1.0), n_sines=N_SINES, noise_var=INPUT_NOISE_VAR, rng=None,
               phase_trials=PHASE_TRIALS):
    """Multisine plus white noise, affinely rescaled so min/max hit ``u_range``.

    Tone ``k`` sits at ``k / (2 (n_sines + 1))`` cycles per sample with unit
    amplitude. Phases are uniform on ``[0, 2 pi)``; out of ``phase_trials``
    draws the one with the lowest crest factor is kept, which keeps the
    signal power after min-max scaling steady across trajectories. A
    constant signal (no tones, no noise) maps to the midpoint of the range.
    """
    rng = np.random.default_rng(rng)
    t = np.arange(T)
    u = np.zeros(T)
    if n_sines > 0:
        freqs = np.arange(1, n_sines + 1) / (2.0 * (n_sines + 1))
        phases = rng.uniform(0.0, 2.0 * np.pi, (max(phase_trials, 1), n_sines))
        tones = np.sin(2.0 * np.pi * freqs[None, :, None] * t + phases[:, :, None]).sum(axis=1)
        crest = np.abs(tones).max(axis=1) / np.sqrt(np.mean(tones ** 2, axis=1))
        u = tones[np.argmin(crest)]
    if noise_var > 0:
        u = u + rng.normal(0.0, np.sqrt(noise_var), T)
    lo, hi = u_range
    span = u.max() - u.min()
    if span <= 0.0:
        return np.full(T, 0.5 * (lo + hi))
    return lo + (u - u.min()) * (hi - lo) / span


def _streams(spec, seed):
    root = np.random.SeedSequence([int(seed), _SET_INDEX[spec.name]])
    return [np.random.default_rng(s) for s in root.spawn(spec.n_b)]


def generate_dataset(name, seed=0, n_b=None, system=None, noise=True):
    """Synthesize one of the benchmark datasets.

    Each trajectory draws from its own child seed stream: the input, then the
    i.i.d. uniform scheduling, then the output noise. ``n_b`` truncates the
    set without changing the first trajectories.
    """
    spec = SPECS[name]
    system = system or TrueSystem()
    streams = _streams(spec, seed)
    if n_b is not None:
        streams = streams[:n_b]
    nb, T = len(streams), spec.T
    u = np.empty((nb, T, 1))
    p = np.empty((nb, T, 3))
    e = np.empty((nb, T, 1))
    lo, hi = spec.p_scale * P_LOW, spec.p_scale * P_HIGH
    for i, rng in enumerate(streams):
        u[i, :, 0] = excitation(T, (spec.u_min, spec.u_max), rng=rng)
        p[i] = rng.uniform(lo, hi, size=(T, 3))
        e[i, :, 0] = rng.normal(0.0, system.noise_std, T)
    y_clean = system.simulate(u, p)
    y = y_clean + e if noise else y_clean
    meta = {
        "name": name, "T": T, "N_b": nb, "u_min": spec.u_min, "u_max": spec.u_max,
        "p_scale": spec.p_scale, "noise_var": system.noise_std ** 2 if noise else 0.0,
        "seed": int(seed),
    }
    return Dataset(name, u, p, y, meta)


def snr_db(y_clean, y_noisy):
    """Output signal-to-noise ratio in dB (power of clean output over noise power)."""
    y_clean = np.asarray(y_clean)
    noise = np.asarray(y_noisy) - y_clean
    return float(10.0 * np.log10(np.sum(y_clean ** 2) / np.sum(noise ** 2)))


# ---------------------------------------------------------------------------
# files

_META_KEYS = ("name", "T", "N_b", "u_min", "u_max", "p_scale", "noise_var", "seed")


def write_dataset(ds, directory):
    """Write ``meta`` (key = value lines) and one ``traj_NNNNN.csv`` per trajectory."""
    os.makedirs(directory, exist_ok=True)
    with open(os.path.join(directory, "meta"), "w", newline="\n") as fh:
        for k in _META_KEYS:
            fh.write(f"{k} = {ds.meta.get(k, '')}\n")
    for i in range(ds.n_b):
        path = os.path.join(directory, f"traj_{i:05d}.csv")
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t", "u", "p1", "p2", "p3", "y"])
            for t in range(ds.T):
                w.writerow([t] + [f"{v:.17g}" for v in (ds.u[i, t, 0], *ds.p[i, t], ds.y[i, t, 0])])


def read_meta(directory):
    meta = {}
    with open(os.path.join(directory, "meta")) as fh:
        for line in fh:
            if "=" not in line:
                continue
            k, v = (s.strip() for s in line.split("=", 1))
            meta[k] = v
    for k in ("T", "N_b", "seed"):
        if k in meta:
            meta[k] = int(meta[k])
    for k in ("u_min", "u_max", "p_scale", "noise_var"):
        if k in meta:
            meta[k] = float(meta[k])
    return meta


def read_dataset(directory, limit=None):
    meta = read_meta(directory)
    n = meta["N_b"] if limit is None else min(limit, meta["N_b"])
    rows = [np.loadtxt(os.path.join(directory, f"traj_{i:05d}.csv"), delimiter=",", skiprows=1, ndmin=2)
            for i in range(n)]
    data = np.stack(rows)
    meta = dict(meta, N_b=n)
    return Dataset(meta.get("name", os.path.basename(directory)), data[..., 1:2], data[..., 2:5],
                   data[..., 5:6], meta)


# ---------------------------------------------------------------------------
# evaluation


@dataclass
class EvalResult:
    nrmse: np.ndarray
    failed_at: dict  # trajectory index -> time step of NonFiniteState

    @property
    def mean(self):
        return float(np.mean(self.nrmse))


def evaluate(model, ds, seed=0):
    """NRMSe of free-run simulation per trajectory, over the full horizon.

    Initial states are drawn uniform on ``[-1, 1]^n_x`` from ``seed``. A
    diverging trajectory scores ``inf``.
    """
    rng = np.random.default_rng(seed)
    x0 = rng.uniform(-1.0, 1.0, size=(ds.n_b, model.n_x))
    scores = np.empty(ds.n_b)
    failed = {}
    for i in range(ds.n_b):
        try:
            y, _ = model.simulate(x0[i], ds.u[i], ds.p[i])
            scores[i] = nrmse(ds.y[i], y)
        except NonFiniteState as exc:
            scores[i] = np.inf
            failed[i] = exc.step
    return EvalResult(scores, failed)


class ZeroModel:
    """Predicts ``y = 0``; the trivial baseline."""

    n_x = 1

    def __init__(self, n_y=1):
        self.n_y = n_y

    def simulate(self, x0, u, p):
        T = np.shape(u)[0]
        return np.zeros((T, self.n_y)), np.zeros((T + 1, 1))


class TrueSystemModel:
    """The data-generating system wrapped with the model simulation interface."""

    n_x = 3

    def __init__(self, system=None):
        self.system = system or TrueSystem()

    def simulate(self, x0, u, p):
        y = self.system.simulate(np.asarray(u)[None], np.asarray(p)[None], np.asarray(x0)[None])
        return y[0], None
