"""Zero-temperature behavior of the categorical (simplex) relaxations."""
from __future__ import annotations

import numpy as np
from scipy.special import expit

from ..transforms import (
    breaks_to_gaussian_means,
    categorical_to_breaks,
    gumbel_softmax,
    simplex_sb_forward,
)

TAU_GRID = (1.0, 0.3, 0.1, 1e-3)


def total_variation(p, q) -> float:
    return 0.5 * float(np.abs(np.asarray(p, dtype=float) - np.asarray(q, dtype=float)).sum())


def argmax_pmf(x, n: int) -> np.ndarray:
    return np.bincount(np.argmax(x, axis=-1), minlength=n) / len(x)


def categorical_limit_study(pi, taus=TAU_GRID, n_samples: int = 100_000, rng=None,
                            nu: float = 1.0) -> dict:
    """TV between the argmax pmf of stick-breaking samples and ``pi`` at each tau.

    The Gaussian means are set so that ``P(psi_n > 0) = rho_n``, where
    ``rho`` are the stick proportions of ``pi``. As tau goes to zero each
    break becomes a Bernoulli(rho_n) draw and the samples become one-hot
    with law ``pi``.
    """
    pi = np.asarray(pi, dtype=float)
    if (pi <= 0).any() or abs(pi.sum() - 1) > 1e-9:
        raise ValueError("pi must be a strictly positive pmf")
    rng = np.random.default_rng(rng)
    nus = np.full(len(pi) - 1, float(nu))
    mu = breaks_to_gaussian_means(categorical_to_breaks(pi), nus)
    z = rng.standard_normal((n_samples, len(pi) - 1))
    psi = mu + nus * z
    out = {}
    for tau in taus:
        x = simplex_sb_forward(expit(psi / tau))
        out[float(tau)] = total_variation(argmax_pmf(x, len(pi)), pi)
    return out


def gumbel_max_study(pi, n_samples: int = 100_000, rng=None, tau: float = 1.0) -> float:
    """TV between argmax frequencies of Gumbel-softmax samples and ``pi``."""
    pi = np.asarray(pi, dtype=float)
    rng = np.random.default_rng(rng)
    x = gumbel_softmax(np.log(pi), tau, rng.uniform(size=(n_samples, len(pi))))
    return total_variation(argmax_pmf(x, len(pi)), pi)
