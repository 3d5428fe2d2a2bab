#!/usr/bin/env python3
"""Sanity statistics of the synthetic benchmark.

Prints the output SNR of each generated set, the NRMSe the noise-free true
system scores against noisy measurements, and the largest spectral radius of
the true state matrix over the scheduling box.
"""

import argparse
import itertools

import numpy as np

from lpvss import bench


def main():
    ap = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--samples", type=int, default=10_000)
    ap.add_argument("--n-b", type=int, default=256, help="trajectories per set (test sets use all)")
    args = ap.parse_args()

    print(f"{'set':<11} {'N_b':>5} {'T':>5} {'SNR dB':>7} {'true NRMSe':>10}")
    for name, spec in bench.SPECS.items():
        n_b = min(args.n_b, spec.n_b)
        noisy = bench.generate_dataset(name, seed=args.seed, n_b=n_b)
        clean = bench.generate_dataset(name, seed=args.seed, n_b=n_b, noise=False)
        snr = bench.snr_db(clean.y, noisy.y)
        true = bench.evaluate(bench.TrueSystemModel(), noisy, seed=args.seed).mean
        print(f"{name:<11} {n_b:5d} {noisy.u.shape[1]:5d} {snr:7.2f} {true:10.4f}")

    rng = np.random.default_rng(args.seed)
    pts = rng.uniform(bench.P_LOW, bench.P_HIGH, (args.samples, 3))
    pts = np.vstack([pts, list(itertools.product(*zip(bench.P_LOW, bench.P_HIGH)))])
    A = bench.TrueSystem().coefficients(pts)[0]
    rho = np.max(np.abs(np.linalg.eigvals(A)), axis=-1)
    print(f"\nmax spectral radius of A(p) over {len(pts)} box points: {rho.max():.4f}")


if __name__ == "__main__":
    main()
