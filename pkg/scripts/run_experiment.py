#!/usr/bin/env python3
"""Generate data, train the three model families and score them on both test sets.

Everything goes through the ``lpvss`` command line so the artifacts in OUT
are the same files a user would produce by hand:

    OUT/data/{training,validation,test-a,test-b}/
    OUT/<variant>.lpvss, OUT/<variant>.lpvss.report.csv
    OUT/<variant>.eval-{a,b}.csv, OUT/<variant>.trace-b.csv
    OUT/<variant>.cert.csv           (LPV-SS variants only)

Desk scale (128/64 trajectories, 20 epochs) finishes in a couple of minutes;
``--scale paper`` uses the full 3200/1280 sets and takes far longer.
"""

import argparse
import math
import os
import time

from lpvss import cli

VARIANTS = {"lipschitz": "lipschitz", "contracting": "contraction", "lfr": None}


def run(argv):
    code = cli.main(argv)
    if code not in (0, 1):
        raise SystemExit(f"lpvss {' '.join(argv)} exited with {code}")
    return code


def main():
    ap = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    ap.add_argument("--out", default="runs/desk")
    ap.add_argument("--scale", choices=["desk", "paper"], default="desk")
    ap.add_argument("--epochs", type=int, default=20)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--gamma", type=float, default=1.0)
    ap.add_argument("--variants", nargs="+", choices=list(VARIANTS), default=list(VARIANTS))
    args = ap.parse_args()

    data = os.path.join(args.out, "data")
    if not os.path.isdir(os.path.join(data, "test-b")):
        run(["generate", "--set", "all", "--out", data, "--seed", str(args.seed)])

    rows = []
    for variant in args.variants:
        model = os.path.join(args.out, f"{variant}.lpvss")
        t0 = time.perf_counter()
        trained = run(["train", "--variant", variant, "--gamma", str(args.gamma), "--scale", args.scale,
                       "--data", os.path.join(data, "training"), "--val", os.path.join(data, "validation"),
                       "--out", model, "--epochs", str(args.epochs), "--seed", str(args.seed)]) == 0
        elapsed = time.perf_counter() - t0
        if not trained:
            rows.append((variant, math.inf, math.inf, "diverged in training", elapsed))
            continue
        scores = []
        for tag in ("a", "b"):
            out = os.path.join(args.out, f"{variant}.eval-{tag}.csv")
            run(["eval", "--model", model, "--data", os.path.join(data, f"test-{tag}"), "--out", out])
            scores.append(cli.read_eval_csv(out)[1])
        run(["trace", "--model", model, "--data", os.path.join(data, "test-b"),
             "--out", os.path.join(args.out, f"{variant}.trace-b.csv")])
        cert = "n/a"
        if VARIANTS[variant]:
            ok = run(["verify", "--model", model, "--property", VARIANTS[variant], "--seed", str(args.seed),
                      "--out", os.path.join(args.out, f"{variant}.cert.csv")]) == 0
            cert = "pass" if ok else "FAIL"
        rows.append((variant, *scores, cert, elapsed))

    print(f"\n{'model':<12} {'test-a':>9} {'test-b':>9} {'certificate':>21} {'train s':>8}")
    for variant, a, b, cert, sec in rows:
        print(f"{variant:<12} {a:9.4f} {b:9.4f} {cert:>21} {sec:8.1f}")


if __name__ == "__main__":
    main()
