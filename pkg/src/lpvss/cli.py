"""Command-line entry point.

    lpvss generate --set {training,validation,test-a,test-b,all} --out DIR [--seed N]
    lpvss train    --variant {lipschitz,contracting,lfr} --data DIR --val DIR --out MODEL ...
    lpvss verify   --model MODEL --property {contraction,lipschitz} [--samples K]
    lpvss eval     --model MODEL --data DIR --out CSV
    lpvss trace    --model MODEL --data DIR --traj I --out CSV

Settings resolve as: command-line flag, then ``--config FILE`` (``key = value``
lines, keys spelled like the long flags without dashes), then the
``LPV_SEED`` environment variable (seed only), then the built-in default.
Exit codes: 0 success, 1 runtime failure (including a failed certificate),
2 usage error.
"""

import argparse
import csv
import logging
import os
import sys
import time

import numpy as np

from . import bench, ident, lpvmodel, verify
from .errors import LpvError, NonFiniteState

log = logging.getLogger("lpvss")

DEFAULTS = {
    "seed": 0,
    "epochs": 20,
    "lr": 1e-2,
    "gamma": 1.0,
    "scale": "desk",
    "variant": "lipschitz",
    "coeff": "mlp",
    "samples": 1000,
    "trials": 100,
    "n_x": 3,
}
DESK_SIZES = {"training": 128, "validation": 64}
DESK_BATCH = 8


def read_config(path):
    cfg = {}
    with open(path) as fh:
        for line in fh:
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"bad config line: {line!r}")
            k, v = (s.strip() for s in line.split("=", 1))
            cfg[k.replace("-", "_")] = v
    return cfg


def resolve(args, name, cast=str):
    """Flag > config file > LPV_SEED (seed only) > default."""
    val = getattr(args, name, None)
    if val is not None:
        return val
    cfg = args.config_values
    if name in cfg:
        return cast(cfg[name])
    if name == "seed" and os.environ.get("LPV_SEED"):
        return int(os.environ["LPV_SEED"])
    return DEFAULTS.get(name)


def _parser():
    ap = argparse.ArgumentParser(prog="lpvss", description=__doc__.split("\n\n")[0])
    ap.add_argument("--config", help="key = value settings file")
    ap.add_argument("--serial", action="store_true",
                    help="single-threaded execution (the default; kept for scripts)")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="synthesize benchmark datasets")
    g.add_argument("--set", required=True, choices=[*bench.SPECS, "all"], dest="set_name")
    g.add_argument("--out", required=True)
    g.add_argument("--seed", type=int)
    g.add_argument("--n-b", type=int, dest="n_b", help="truncate to the first N trajectories")

    t = sub.add_parser("train", help="fit a model")
    t.add_argument("--variant", choices=["lipschitz", "contracting", "lfr"])
    t.add_argument("--gamma", type=float)
    t.add_argument("--data", required=True)
    t.add_argument("--val")
    t.add_argument("--out", required=True)
    t.add_argument("--epochs", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--seed", type=int)
    t.add_argument("--scale", choices=["paper", "desk"])
    t.add_argument("--batch-size", type=int, dest="batch_size")
    t.add_argument("--coeff", choices=["mlp", "affine"])
    t.add_argument("--n-x", type=int, dest="n_x")
    t.add_argument("--report", help="TrainReport CSV (default: MODEL.report.csv)")
    t.add_argument("--checkpoint-dir", dest="checkpoint_dir")

    v = sub.add_parser("verify", help="sampled certificate of a saved model")
    v.add_argument("--model", required=True)
    v.add_argument("--property", required=True, choices=["contraction", "lipschitz"])
    v.add_argument("--samples", type=int)
    v.add_argument("--trials", type=int)
    v.add_argument("--seed", type=int)
    v.add_argument("--gamma", type=float)
    v.add_argument("--out", help="write the report as CSV")

    e = sub.add_parser("eval", help="NRMSe per trajectory")
    e.add_argument("--model", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--out", required=True)
    e.add_argument("--seed", type=int)

    r = sub.add_parser("trace", help="simulated vs measured output of one trajectory")
    r.add_argument("--model", required=True)
    r.add_argument("--data", required=True)
    r.add_argument("--traj", type=int, default=0)
    r.add_argument("--out", required=True)
    r.add_argument("--seed", type=int)
    return ap


# ---------------------------------------------------------------------------
# commands


def cmd_generate(args):
    seed = resolve(args, "seed", int)
    names = list(bench.SPECS) if args.set_name == "all" else [args.set_name]
    for name in names:
        ds = bench.generate_dataset(name, seed=seed, n_b=args.n_b)
        path = os.path.join(args.out, name)
        bench.write_dataset(ds, path)
        log.info("wrote %s (%d x %d)", path, ds.n_b, ds.T)
    return 0


def _load_sets(args, scale):
    limit_t = DESK_SIZES["training"] if scale == "desk" else None
    limit_v = DESK_SIZES["validation"] if scale == "desk" else None
    train_set = bench.read_dataset(args.data, limit=limit_t)
    val_set = bench.read_dataset(args.val, limit=limit_v) if args.val else None
    return train_set, val_set


def build_model(variant, n_x, n_u, n_y, n_p, gamma=1.0, coeff="mlp", seed=0):
    if variant == "lfr":
        return lpvmodel.LpvLfrModel(n_x, n_u, n_y, n_p, seed=seed)
    spec = {"kind": "affine"} if coeff == "affine" else {
        "kind": "mlp", "hidden": [50, 50], "mode": "per-component"}
    return lpvmodel.LpvSsModel(variant, n_x, n_u, n_y, n_p, coeff=spec, gamma=gamma, seed=seed)


def cmd_train(args):
    seed = resolve(args, "seed", int)
    scale = resolve(args, "scale")
    variant = resolve(args, "variant")
    train_set, val_set = _load_sets(args, scale)
    n_u, n_p, n_y = train_set.u.shape[-1], train_set.p.shape[-1], train_set.y.shape[-1]
    model = build_model(variant, resolve(args, "n_x", int), n_u, n_y, n_p,
                        gamma=resolve(args, "gamma", float), coeff=resolve(args, "coeff"), seed=seed)
    batch = resolve(args, "batch_size", int)
    if batch is None and scale == "desk":
        batch = DESK_BATCH
    config = ident.TrainConfig(lr=resolve(args, "lr", float), epochs=resolve(args, "epochs", int),
                               batch_size=batch, seed=seed)
    ckpt = args.checkpoint_dir
    if ckpt:
        os.makedirs(ckpt, exist_ok=True)

    def on_epoch(epoch, m):
        if ckpt:
            lpvmodel.save_model(m, os.path.join(ckpt, f"epoch_{epoch:03d}.lpvss"))

    try:
        report = ident.train(model, train_set, val_set, config, callback=on_epoch)
    except NonFiniteState as exc:
        log.error("training diverged in epoch %s at t=%s", getattr(exc, "epoch", "?"), exc.step)
        return 1
    lpvmodel.save_model(model, args.out)
    report.to_csv(args.report or args.out + ".report.csv")
    log.info("saved %s (best epoch %d, val loss %.5g)", args.out, report.best_epoch,
             report.best_val_loss)
    return 0


def cmd_verify(args):
    model = lpvmodel.load_model(args.model)
    if not hasattr(model, "coefficients"):
        print("verify: only LPV-SS models carry a certificate", file=sys.stderr)
        return 1
    rep = verify.certify(model, args.property, samples=resolve(args, "samples", int),
                         seed=resolve(args, "seed", int), gamma=args.gamma,
                         trials=resolve(args, "trials", int))
    print(rep.to_text())
    if args.out:
        rep.to_csv(args.out)
    return 0 if rep.passed else 1


def write_eval_csv(path, result):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["traj", "nrmse"])
        for i, v in enumerate(result.nrmse):
            w.writerow([i, repr(float(v))])
        w.writerow(["mean", repr(result.mean)])


def read_eval_csv(path):
    rows, mean = [], None
    with open(path, newline="") as fh:
        for r in csv.DictReader(fh):
            if r["traj"] == "mean":
                mean = float(r["nrmse"])
            else:
                rows.append(float(r["nrmse"]))
    return np.array(rows), mean


def cmd_eval(args):
    model = lpvmodel.load_model(args.model)
    ds = bench.read_dataset(args.data)
    result = bench.evaluate(model, ds, seed=resolve(args, "seed", int))
    write_eval_csv(args.out, result)
    print(f"mean NRMSe over {ds.n_b} trajectories: {result.mean:.6g}")
    return 0


def write_trace_csv(path, y_true, y_pred, failed_at=None):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "y_true", "y_pred"])
        for t in range(len(y_pred)):
            w.writerow([t, f"{y_true[t, 0]:.17g}", f"{y_pred[t, 0]:.17g}"])
        if failed_at is not None:
            fh.write(f"# NonFiniteState at t={failed_at}\n")


def read_trace_csv(path):
    """Returns ``(t, y_true, y_pred, failed_at)``."""
    rows, failed = [], None
    with open(path) as fh:
        next(fh)
        for line in fh:
            if line.startswith("#"):
                failed = int(line.rsplit("=", 1)[1])
                continue
            rows.append([float(x) for x in line.split(",")])
    data = np.array(rows).reshape(-1, 3)
    return data[:, 0].astype(int), data[:, 1], data[:, 2], failed


def cmd_trace(args):
    model = lpvmodel.load_model(args.model)
    ds = bench.read_dataset(args.data, limit=args.traj + 1)
    i = args.traj
    rng = np.random.default_rng(resolve(args, "seed", int))
    x0 = rng.uniform(-1.0, 1.0, size=model.n_x)
    try:
        y, _ = model.simulate(x0, ds.u[i], ds.p[i])
        write_trace_csv(args.out, ds.y[i], y)
    except NonFiniteState as exc:
        prefix = exc.prefix if exc.prefix is not None else np.zeros((0, ds.y.shape[-1]))
        write_trace_csv(args.out, ds.y[i], prefix, failed_at=exc.step)
        print(f"trace: state diverged at t={exc.step}", file=sys.stderr)
    return 0


COMMANDS = {
    "generate": cmd_generate,
    "train": cmd_train,
    "verify": cmd_verify,
    "eval": cmd_eval,
    "trace": cmd_trace,
}


def main(argv=None):
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.config_values = read_config(args.config) if args.config else {}
    except (OSError, ValueError) as exc:
        print(f"lpvss: {exc}", file=sys.stderr)
        return 2
    t0 = time.perf_counter()
    try:
        code = COMMANDS[args.command](args)
    except (LpvError, OSError, ValueError, KeyError) as exc:
        print(f"lpvss {args.command}: {exc}", file=sys.stderr)
        return 1
    log.info("%s finished in %.1f s", args.command, time.perf_counter() - t0)
    return code


if __name__ == "__main__":
    sys.exit(main())
