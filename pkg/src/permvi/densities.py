"""Priors and baseline distributions over (relaxed) permutations."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.special import logsumexp

from .errors import DimensionMismatch
from .perm_core import MAX_ENUMERATION, as_permutation, enumerate_permutations, hungarian

DEFAULT_ETA = 0.5
ETA_GRID = (0.25, 0.5, 1.0)
_LOG_HALF_NORM = -0.5 * math.log(2 * math.pi)


@dataclass(frozen=True)
class RelaxedPermutationPrior:
    eta: float = DEFAULT_ETA

    def __post_init__(self):
        if not self.eta > 0:
            raise ValueError("eta must be positive")

    def logpdf(self, X):
        return relaxed_prior_logpdf(X, self.eta)


def relaxed_prior_logpdf(X, eta: float = DEFAULT_ETA, return_grad: bool = False):
    """Coordinate-wise two-component Gaussian mixture at 0 and 1.

    Works on a single matrix or a batch (..., N, N); the sum runs over the
    last two axes.
    """
    if not eta > 0:
        raise ValueError("eta must be positive")
    X = np.asarray(X, dtype=float)
    a = -0.5 * (X / eta) ** 2
    b = -0.5 * ((X - 1) / eta) ** 2
    per = np.logaddexp(a, b) + math.log(0.5) + _LOG_HALF_NORM - math.log(eta)
    value = per.sum(axis=(-1, -2))
    if not return_grad:
        return value
    w1 = np.exp(b - np.logaddexp(a, b))
    grad = -(X - w1) / eta**2
    return value, grad


def footrule_distance(phi, phi0) -> int:
    """Spearman footrule ``sum_i |phi(i) - phi0(i)|``."""
    if len(phi) != len(phi0):
        raise DimensionMismatch(f"permutations of size {len(phi)} and {len(phi0)}")
    return int(np.abs(np.asarray(phi) - np.asarray(phi0)).sum())


@dataclass
class MallowsModel:
    """``p(phi) ∝ exp(-theta * footrule(phi, center))``."""

    center: tuple
    theta: float
    log_normalizer: Optional[float] = field(default=None)

    def __post_init__(self):
        self.center = as_permutation(self.center)
        if self.theta < 0:
            raise ValueError("theta must be >= 0")
        if self.log_normalizer is None and self.n <= MAX_ENUMERATION:
            perms = np.array(enumerate_permutations(self.n))
            d = np.abs(perms - np.asarray(self.center)).sum(axis=1)
            self.log_normalizer = float(logsumexp(-self.theta * d))

    @property
    def n(self) -> int:
        return len(self.center)


def mallows_logpmf(model: MallowsModel, phi) -> tuple[float, bool]:
    """Log pmf of ``phi``; the flag is ``False`` when the value is unnormalized.

    The normalizer is only available for N <= 8 (exact enumeration).
    """
    d = footrule_distance(phi, model.center)
    if model.log_normalizer is None:
        return -model.theta * d, False
    return -model.theta * d - model.log_normalizer, True


def mallows_mcmc(model: MallowsModel, steps: int, rng_seed=None, burn_in: float = 0.1,
                 start=None) -> list:
    """Metropolis sampler with uniform random transposition proposals.

    The chain starts at the center (or ``start``), runs ``steps``
    transitions and discards the first ``burn_in`` fraction.
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    rng = np.random.default_rng(rng_seed)
    n = model.n
    center = np.asarray(model.center)
    cur = np.array(model.center if start is None else as_permutation(start))
    d = int(np.abs(cur - center).sum())
    skip = int(burn_in * steps)
    out = []
    if n == 1:
        return [tuple(int(i) for i in cur)] * (steps - skip)
    pairs = rng.choice(n, size=(steps, 2), replace=True)
    logu = np.log(rng.uniform(size=steps))
    for t in range(steps):
        i, j = pairs[t]
        if i != j:
            ci, cj = cur[i], cur[j]
            delta = (abs(cj - center[i]) + abs(ci - center[j])
                     - abs(ci - center[i]) - abs(cj - center[j]))
            if delta <= 0 or logu[t] < -model.theta * delta:
                cur[i], cur[j] = cj, ci
                d += delta
        if t >= skip:
            out.append(tuple(int(v) for v in cur))
    return out


def mallows_fit_center(loglik) -> tuple:
    """Center at the maximum-likelihood assignment (entry (m, n) = log-lik of m -> n)."""
    phi, _ = hungarian(-np.asarray(loglik, dtype=float))
    return phi
