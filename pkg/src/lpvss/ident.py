"""Simulation-error training of LPV models with Adam."""

import csv
import logging
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .autodiff import Tape
from .errors import DegenerateReference, NonFiniteState, ShapeMismatch

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    lr: float = 1e-2
    epochs: int = 20
    batch_size: Optional[int] = None  # None: one full batch per epoch
    skip: int = 10
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    init_state: str = "random-uniform"  # or "zero"
    restore_best: bool = True

    def __post_init__(self):
        if self.init_state not in ("random-uniform", "zero"):
            raise ValueError(f"unknown init_state {self.init_state!r}")
        if self.epochs < 0 or self.skip < 0:
            raise ValueError("epochs and skip must be non-negative")


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0


def adam_step(params, grads, state, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """Bias-corrected Adam update, applied in place to ``params``."""
    state.step += 1
    c1 = 1.0 - beta1 ** state.step
    c2 = 1.0 - beta2 ** state.step
    for k, g in grads.items():
        p = params[k]
        if g.shape != p.shape:
            raise ShapeMismatch(f"gradient for {k} has shape {g.shape}, expected {p.shape}")
        m = state.m.setdefault(k, np.zeros_like(p))
        v = state.v.setdefault(k, np.zeros_like(p))
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        p -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return params, state


def _col(a):
    return np.asarray(a, dtype=np.float64)[..., None]


def sim_loss(model, leaves, u, p, y, x0, skip):
    """Mean over batch and ``t in [skip, T)`` of ``||y_t - yhat_t||^2`` as a (1, 1) Var.

    ``u``, ``p``, ``y`` are arrays ``(B, T, n)``; ``x0`` is ``(B, n_x)``.
    """
    tape = next(iter(leaves.values())).tape
    nb, T = u.shape[:2]
    if skip >= T:
        raise ValueError(f"skip={skip} must be below T={T}")
    yhat, _ = model.rollout_op(leaves, tape.const(_col(x0)), tape.const(_col(u)), tape.const(_col(p)))
    r = yhat[:, skip:] - tape.const(_col(y)[:, skip:])
    return (r * r).sum().scale(1.0 / (nb * (T - skip)))


def loss_value(model, u, p, y, x0, skip):
    """Same quantity as :func:`sim_loss`, evaluated without a tape."""
    yhat, _ = model.simulate(x0, u, p)
    r = np.asarray(y)[:, skip:] - yhat[:, skip:]
    return float(np.sum(r * r) / (r.shape[0] * r.shape[1]))


def initial_states(rng, n, n_x, policy):
    if policy == "zero":
        return np.zeros((n, n_x))
    return rng.uniform(-1.0, 1.0, size=(n, n_x))


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    wall_ms: float


@dataclass
class TrainReport:
    rows: list = field(default_factory=list)
    initial_train_loss: float = float("nan")
    initial_val_loss: float = float("nan")
    best_epoch: int = 0
    best_val_loss: float = float("inf")
    best_params: Optional[dict] = None

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "train_loss", "val_loss", "wall_ms"])
            for r in self.rows:
                w.writerow([r.epoch, repr(r.train_loss), repr(r.val_loss), f"{r.wall_ms:.3f}"])


def read_report_csv(path):
    with open(path, newline="") as fh:
        return [
            EpochRecord(int(r["epoch"]), float(r["train_loss"]), float(r["val_loss"]), float(r["wall_ms"]))
            for r in csv.DictReader(fh)
        ]


def train(model, train_set, val_set=None, config=None, callback=None):
    """Fit ``model`` to ``train_set`` by minimizing the simulation error.

    Datasets expose ``u``, ``p``, ``y`` arrays of shape ``(N, T, n)``.
    ``callback(epoch, model)`` runs after every epoch. The model ends up
    holding the best-validation parameters unless ``restore_best`` is off.
    A :class:`NonFiniteState` escaping a rollout gets an ``epoch`` attribute.
    """
    config = config or TrainConfig()
    n_traj, T = train_set.u.shape[:2]
    if config.skip >= T:
        raise ValueError("burn-in skip must be shorter than the trajectories")
    rng = np.random.default_rng(config.seed)
    val_rng = np.random.default_rng([config.seed, 1])
    val_x0 = None
    if val_set is not None:
        val_x0 = initial_states(val_rng, val_set.u.shape[0], model.n_x, config.init_state)
    batch = config.batch_size or n_traj
    state = AdamState()
    report = TrainReport()

    def validate():
        if val_set is None:
            return float("nan")
        return loss_value(model, val_set.u, val_set.p, val_set.y, val_x0, config.skip)

    report.initial_val_loss = validate()
    report.best_params = model.copy_params()
    if config.epochs == 0:
        return report
    x0_init = initial_states(np.random.default_rng([config.seed, 2]), n_traj, model.n_x,
                             config.init_state)
    report.initial_train_loss = loss_value(model, train_set.u, train_set.p, train_set.y, x0_init,
                                           config.skip)

    for epoch in range(1, config.epochs + 1):
        t0 = time.perf_counter()
        order = rng.permutation(n_traj)
        x0_all = initial_states(rng, n_traj, model.n_x, config.init_state)
        total = 0.0
        try:
            for start in range(0, n_traj, batch):
                idx = order[start:start + batch]
                tape = Tape()
                leaves = model.leaves(tape)
                loss = sim_loss(model, leaves, train_set.u[idx], train_set.p[idx],
                                train_set.y[idx], x0_all[idx], config.skip)
                grads = tape.backward(loss)
                named = {k: grads[v.id] for k, v in leaves.items()}
                adam_step(model.params, named, state, config.lr, config.beta1, config.beta2,
                          config.adam_eps)
                total += float(loss.value[0, 0]) * len(idx)
            val = validate()
        except NonFiniteState as exc:
            exc.epoch = epoch
            raise
        rec = EpochRecord(epoch, total / n_traj, val, 1e3 * (time.perf_counter() - t0))
        report.rows.append(rec)
        log.info("epoch %d train %.5g val %.5g (%.0f ms)", epoch, rec.train_loss, val, rec.wall_ms)
        score = val if val_set is not None else rec.train_loss
        if score < report.best_val_loss:
            report.best_val_loss = score
            report.best_epoch = epoch
            report.best_params = model.copy_params()
        if callback is not None:
            callback(epoch, model)

    if config.restore_best and report.best_params is not None:
        model.set_params(report.best_params)
    return report


def nrmse(ytrue, ypred):
    """Channel-averaged RMS error normalized by the population std of ``ytrue``."""
    ytrue = np.asarray(ytrue, dtype=np.float64)
    ypred = np.asarray(ypred, dtype=np.float64)
    if ytrue.shape != ypred.shape:
        raise ShapeMismatch(f"shapes {ytrue.shape} and {ypred.shape} differ")
    if ytrue.ndim == 1:
        ytrue, ypred = ytrue[:, None], ypred[:, None]
    std = ytrue.std(axis=0)
    if np.any(std < 1e-12):
        raise DegenerateReference("reference channel has zero variance")
    rms = np.sqrt(np.mean((ytrue - ypred) ** 2, axis=0))
    return float(np.mean(rms / std))
