#!/usr/bin/env python3
"""How far can the log-diagonal d range grow before sampled LMIs lose resolution?

For each half-width r, draw random Lipschitz and contracting parametrizations
with X, Y, Z, Ycal entries in [-10, 10] and d in [-r, r], then report the
share of draws whose smallest LMI eigenvalue falls below 1e-12 ||metric||
and the share that comes out negative. The metric condition number grows
like exp(2 * range(d)), and the exact margin scales with the smallest metric
eigenvalue, so wide d ranges push it under the floor and eventually under
float64 rounding of the LMI itself.
"""

import argparse

import numpy as np

from lpvss import ssparam as sp
from lpvss.verify import contraction_lmi_eigs, lipschitz_lmi_eigs


def scan(r, draws, seed):
    rng = np.random.default_rng(seed)
    dims = sp.LipschitzDims(3, 1, 1)
    big = lambda *shape: rng.uniform(-10, 10, shape)  # noqa: E731
    bad, neg, worst_cond = 0, 0, 0.0
    for _ in range(draws):
        d = rng.uniform(-r, r, 3)
        lip = sp.LipschitzParam(d, big(3, 3), float(rng.uniform(0.1, 10)), dims)
        metric = lip.metric()
        floor = 1e-12 * np.linalg.norm(metric, 2)
        worst_cond = max(worst_cond, np.linalg.cond(metric))
        W = sp.lipschitz_W(lip, sp.PhiOutput(big(dims.n, dims.n), big(dims.n, dims.n), big(dims.n0, dims.n)))
        e = lipschitz_lmi_eigs(W, metric, lip.gamma, 1, 1)
        bad, neg = bad + (e < floor), neg + (e < 0)
        con = sp.ContractingParam(d, big(3, 3), alpha_raw=float(rng.uniform(-10, 10)))
        A = sp.contracting_A(con, sp.PhiOutput(big(8, 3, 3), big(8, 3, 3)))
        e = np.min(contraction_lmi_eigs(A, con.metric(), con.alpha))
        bad, neg = bad + (e < floor), neg + (e < 0)
    return bad, neg, worst_cond


def main():
    ap = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    ap.add_argument("--draws", type=int, default=200)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    total = 2 * args.draws
    print(f"{'d range':>8} {'below floor':>12} {'negative':>10} {'max cond':>10}")
    for r in (1, 2, 3, 4, 5, 6, 8, 10):
        bad, neg, cond = scan(r, args.draws, args.seed)
        print(f"{'+/-' + str(r):>8} {bad:>5d}/{total:<6d} {neg:>4d}/{total:<5d} {cond:10.1e}")


if __name__ == "__main__":
    main()
