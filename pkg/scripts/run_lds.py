"""Neuron identity accuracy versus position tolerance and number of worms.

    python scripts/run_lds.py --seeds 5 --methods rounding,naive,map,mcmc
"""
import argparse

import numpy as np

from permvi.experiments.lds import TOL_GRID, LdsConfig, run_lds_repetition


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--seeds", type=int, default=5)
    p.add_argument("--n", type=int, default=30)
    p.add_argument("--T", type=int, default=300)
    p.add_argument("--worms", default="1,5")
    p.add_argument("--methods", default="rounding,naive")
    args = p.parse_args()
    worms = tuple(int(w) for w in args.worms.split(","))
    methods = tuple(args.methods.split(","))
    acc = {}
    for seed in range(args.seeds):
        for method, tol, J, a, _ in run_lds_repetition(0, seed, args.n, args.T, TOL_GRID, worms,
                                                       methods, LdsConfig()):
            acc.setdefault((method, tol, J), []).append(a)
        print(f"seed {seed} done", flush=True)
    cols = [(m, J) for m in methods for J in worms]
    print("tol     " + " ".join(f"{m}/J={J}".rjust(14) for m, J in cols))
    for tol in TOL_GRID:
        print(f"{tol:<7} " + " ".join(f"{np.mean(acc[(m, tol, J)]):14.3f}" for m, J in cols))


if __name__ == "__main__":
    main()
