"""Total variation to the target pmf as the stick-breaking temperature goes to zero."""
import numpy as np

from permvi.experiments.categorical import TAU_GRID, categorical_limit_study, gumbel_max_study


def main(seed: int = 0):
    rng = np.random.default_rng(seed)
    pi = rng.dirichlet(np.ones(4))
    print("target pmf", np.round(pi, 3))
    for tau, tv in categorical_limit_study(pi, TAU_GRID, 100_000, rng).items():
        print(f"tau={tau:<6g} TV={tv:.4f}")
    print(f"gumbel-max TV={gumbel_max_study(pi, 100_000, rng):.4f}")


if __name__ == "__main__":
    main()
