"""Reparameterizations from Gaussian noise to (near-)permutation matrices.

Two maps onto or toward the Birkhoff polytope are provided:

* stick-breaking: ``Z -> Psi = mu + nu * Z -> B = logistic(Psi / tau) -> X``
  where ``X`` is filled in raster order, each entry taking a fraction
  ``beta`` of its feasible interval ``[lower, upper]``;
* rounding: ``X = tau * Psi + (1 - tau) * round(Psi)`` with
  ``Psi = sinkhorn(M) + V * Z``.

Both are batched over a leading sample axis where it matters for speed.
Categorical (simplex) analogs live at the bottom of the module.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np
from scipy.special import expit, log_expit, ndtri

from .errors import DegenerateBound
from .perm_core import (
    SINKHORN_ITERS,
    DoublyStochastic,
    round_to_permutation,
    sinkhorn_knopp,
    sinkhorn_with_grad,
    sum_deviation,
)

NU_BOUNDS = (1e-8, 1.0)
V_BOUNDS = (0.1, 0.5)
M_FLOOR = 1e-6
GAP_FLOOR = 1e-12
LOG_2PI = np.log(2 * np.pi)


@dataclass(frozen=True)
class StickBreakingParams:
    mu: np.ndarray
    nu: np.ndarray
    tau: float = 1.0
    nu_bounds: tuple = NU_BOUNDS

    def __post_init__(self):
        mu = np.asarray(self.mu, dtype=float)
        nu = np.clip(np.asarray(self.nu, dtype=float), *self.nu_bounds)
        if mu.shape != nu.shape or mu.ndim != 2 or mu.shape[0] != mu.shape[1]:
            raise ValueError("mu and nu must be matching square (N-1)x(N-1) arrays")
        if not self.tau > 0:
            raise ValueError("tau must be positive")
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "nu", nu)

    @property
    def n(self) -> int:
        return self.mu.shape[0] + 1

    @classmethod
    def init(cls, n: int, nu: float = 1.0, tau: float = 1.0, mu=None, nu_bounds=NU_BOUNDS):
        mu = np.zeros((n - 1, n - 1)) if mu is None else mu
        return cls(mu, np.full((n - 1, n - 1), nu), tau, tuple(nu_bounds))


@dataclass(frozen=True)
class RoundingParams:
    m_raw: np.ndarray
    v: np.ndarray
    tau: float = 0.5
    forbidden: Optional[np.ndarray] = None
    sinkhorn_iters: int = SINKHORN_ITERS
    v_bounds: tuple = V_BOUNDS

    def __post_init__(self):
        m = np.maximum(np.asarray(self.m_raw, dtype=float), M_FLOOR)
        v = np.clip(np.asarray(self.v, dtype=float), *self.v_bounds)
        if m.shape != v.shape or m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ValueError("m_raw and v must be matching square arrays")
        if not 0 < self.tau <= 1:
            raise ValueError("rounding temperature must lie in (0, 1]")
        object.__setattr__(self, "m_raw", m)
        object.__setattr__(self, "v", v)
        if self.forbidden is not None:
            object.__setattr__(self, "forbidden", np.asarray(self.forbidden, dtype=bool))

    @property
    def n(self) -> int:
        return self.m_raw.shape[0]

    @classmethod
    def init(cls, n: int, v: float = 0.5, tau: float = 0.5, forbidden=None, m_raw=None,
             v_bounds=V_BOUNDS):
        m = np.ones((n, n)) if m_raw is None else m_raw
        return cls(m, np.full((n, n), v), tau, forbidden, v_bounds=tuple(v_bounds))

    def masked_m(self) -> np.ndarray:
        if self.forbidden is None:
            return self.m_raw
        return np.where(self.forbidden, M_FLOOR, self.m_raw)

    def mean_matrix(self) -> np.ndarray:
        """``M~``: the Sinkhorn-normalized location of ``Psi``."""
        return sinkhorn_knopp(self.masked_m(), self.sinkhorn_iters).matrix


class StickBounds(NamedTuple):
    lower: np.ndarray
    upper: np.ndarray


def logistic(x):
    return expit(x)


# ---------------------------------------------------------------------------
# stick-breaking onto the Birkhoff polytope


def _sb_scan(B: np.ndarray):
    """Raster-scan fill of X from B; B has shape (..., N-1, N-1).

    Returns X, lower, upper and the branch masks needed by the backward
    pass: ``row_active`` (upper bound came from the row remainder) and
    ``lower_active`` (lower bound strictly positive).
    """
    batch = B.shape[:-2]
    k = B.shape[-1]
    n = k + 1
    X = np.zeros(batch + (n, n))
    lower = np.zeros(batch + (k, k))
    upper = np.zeros(batch + (k, k))
    row_active = np.zeros(batch + (k, k), dtype=bool)
    lower_active = np.zeros(batch + (k, k), dtype=bool)
    col_sum = np.zeros(batch + (n,))
    for m in range(k):
        # completed-row mass in columns strictly right of j: tail[..., j]
        rev = np.cumsum(col_sum[..., ::-1], axis=-1)[..., ::-1]
        tail = np.concatenate([rev[..., 1:], np.zeros(batch + (1,))], axis=-1)
        row_sum = np.zeros(batch)
        for j in range(k):
            u_row = 1.0 - row_sum
            u_col = 1.0 - col_sum[..., j]
            ra = u_row <= u_col
            u = np.where(ra, u_row, u_col)
            l_raw = (j + 2 - n) - row_sum + tail[..., j]
            la = l_raw > 0
            lo = np.where(la, l_raw, 0.0)
            x = lo + B[..., m, j] * (u - lo)
            X[..., m, j] = x
            lower[..., m, j] = lo
            upper[..., m, j] = u
            row_active[..., m, j] = ra
            lower_active[..., m, j] = la
            row_sum = row_sum + x
        X[..., m, k] = 1.0 - row_sum
        col_sum = col_sum + X[..., m, :]
    X[..., k, :] = 1.0 - col_sum
    return X, lower, upper, row_active, lower_active


def _sb_backward(gX, B, X, lower, upper, row_active, lower_active, g_logdet=None):
    """Reverse pass of ``_sb_scan``.

    ``gX`` is dL/dX; ``g_logdet`` is the coefficient on ``sum log(u - l)``
    (scalar or per-sample).  Returns dL/dB.
    """
    gX = np.array(gX, dtype=float, copy=True)
    k = B.shape[-1]
    batch = B.shape[:-2]
    gap = upper - lower
    if g_logdet is None:
        c = np.zeros(batch)
    else:
        c = np.broadcast_to(np.asarray(g_logdet, dtype=float), batch)
    gB = np.zeros_like(B)
    # last row: X[k, j] = 1 - sum_{m<k} X[m, j]
    gX[..., :k, :] -= gX[..., k:k + 1, :]
    for m in range(k - 1, -1, -1):
        # last column: X[m, k] = 1 - sum_{j<k} X[m, j]
        gX[..., m, :k] -= gX[..., m, k:k + 1]
        for j in range(k - 1, -1, -1):
            g = gX[..., m, j]
            beta = B[..., m, j]
            inv_gap = c / gap[..., m, j]
            gB[..., m, j] = g * gap[..., m, j]
            gu = g * beta + inv_gap
            gl = np.where(lower_active[..., m, j], g * (1 - beta) - inv_gap, 0.0)
            ra = row_active[..., m, j]
            # u = 1 - row_sum  or  1 - col_sum[j];  l = const - row_sum + tail
            g_row = -np.where(ra, gu, 0.0) - gl
            g_col = -np.where(ra, 0.0, gu)
            gX[..., m, :j] += g_row[..., None]
            gX[..., :m, j] += g_col[..., None]
            gX[..., :m, j + 1:] += gl[..., None, None]
    return gB


def sb_forward(B) -> tuple[DoublyStochastic, StickBounds]:
    """Map ``B`` in [0,1]^{(N-1)x(N-1)} to a doubly stochastic ``X``."""
    B = np.asarray(B, dtype=float)
    if B.ndim < 2 or B.shape[-1] != B.shape[-2]:
        raise ValueError("B must be square in its last two axes")
    if ((B < 0) | (B > 1)).any():
        raise ValueError("entries of B must lie in [0, 1]")
    X, lo, up, _, _ = _sb_scan(B)
    return DoublyStochastic(X, sum_deviation(X)), StickBounds(lo, up)


def sb_inverse(X) -> tuple[np.ndarray, StickBounds]:
    """Recover ``B`` from a doubly stochastic ``X`` strictly inside the polytope."""
    X = np.asarray(X, dtype=float)
    n = X.shape[-1]
    k = n - 1
    B = np.zeros((k, k))
    lower = np.zeros((k, k))
    upper = np.zeros((k, k))
    for m in range(k):
        for j in range(k):
            row_sum = X[m, :j].sum()
            u = min(1.0 - row_sum, 1.0 - X[:m, j].sum())
            lo = max(0.0, (j + 2 - n) - row_sum + X[:m, j + 1:].sum())
            if u - lo < GAP_FLOOR:
                raise DegenerateBound(f"bound gap {u - lo:.3g} at entry ({m}, {j})")
            lower[m, j], upper[m, j] = lo, u
            B[m, j] = min(max((X[m, j] - lo) / (u - lo), 0.0), 1.0)
    return B, StickBounds(lower, upper)


def _sb_logit_logdet(psi, tau):
    a = psi / tau
    return -np.log(tau) + log_expit(a) + log_expit(-a)


def sb_transform(psi, tau):
    """``Psi -> X`` for a batch of Psi; returns X and log|dX/dPsi| per sample."""
    psi = np.asarray(psi, dtype=float)
    B = expit(psi / tau)
    X, lo, up, _, _ = _sb_scan(B)
    gap = np.maximum(up - lo, 1e-300)
    logdet = np.log(gap).sum(axis=(-1, -2)) + _sb_logit_logdet(psi, tau).sum(axis=(-1, -2))
    return X, logdet


def sb_sample(params: StickBreakingParams, Z) -> tuple[np.ndarray, np.ndarray]:
    """Push standard normal draws ``Z`` (shape (..., N-1, N-1)) to the polytope.

    Returns ``X`` and ``log_det``, the log-determinant of dX/dPsi over the
    free (N-1)^2 coordinates.
    """
    psi = params.mu + params.nu * np.asarray(Z, dtype=float)
    return sb_transform(psi, params.tau)


def sb_log_density(X, params: StickBreakingParams) -> float:
    """Log density of ``X`` (in the free coordinates) under stick-breaking."""
    B, bounds = sb_inverse(X)
    tau = params.tau
    eps = np.finfo(float).tiny
    Bc = np.clip(B, eps, 1 - 1e-16)
    psi = tau * (np.log(Bc) - np.log1p(-Bc))
    z = (psi - params.mu) / params.nu
    log_psi = (-0.5 * z**2 - 0.5 * LOG_2PI - np.log(params.nu)).sum()
    logdet = np.log(bounds.upper - bounds.lower).sum() + _sb_logit_logdet(psi, tau).sum()
    return float(log_psi - logdet)


def sb_sample_with_grad(params: StickBreakingParams, Z):
    """Batched forward pass and a reverse-mode closure.

    ``backward(gX, g_logdet)`` returns ``(g_mu, g_nu)`` summed over the
    batch, where ``gX`` is dL/dX per sample and ``g_logdet`` the
    coefficient on each sample's log-determinant.
    """
    Z = np.asarray(Z, dtype=float)
    tau = params.tau
    psi = params.mu + params.nu * Z
    a = psi / tau
    B = expit(a)
    X, lo, up, ra, la = _sb_scan(B)
    gap = np.maximum(up - lo, 1e-300)
    logdet = np.log(gap).sum(axis=(-1, -2)) + _sb_logit_logdet(psi, tau).sum(axis=(-1, -2))

    def backward(gX, g_logdet):
        gB = _sb_backward(gX, B, X, lo, gap + lo, ra, la, g_logdet)
        c = np.broadcast_to(np.asarray(g_logdet, dtype=float), Z.shape[:-2])[..., None, None]
        # d beta / d psi = beta (1 - beta) / tau;  d logit-logdet / d psi = (1 - 2 beta) / tau
        gpsi = (gB * B * (1 - B) + c * (1 - 2 * B)) / tau
        axes = tuple(range(Z.ndim - 2))
        return gpsi.sum(axis=axes), (gpsi * Z).sum(axis=axes)

    return X, logdet, backward


# ---------------------------------------------------------------------------
# rounding toward permutation matrices


def _round_batch(psi, forbidden):
    if psi.ndim == 2:
        return round_to_permutation(psi, forbidden)
    out = np.empty_like(psi)
    for idx in np.ndindex(psi.shape[:-2]):
        out[idx] = round_to_permutation(psi[idx], forbidden)
    return out


def round_sample(params: RoundingParams, Z) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(X, Psi)`` for noise ``Z`` of shape (..., N, N)."""
    Z = np.asarray(Z, dtype=float)
    psi = params.mean_matrix() + params.v * Z
    P = _round_batch(psi, params.forbidden)
    return params.tau * psi + (1 - params.tau) * P, psi


def round_inverse(X, params: RoundingParams) -> np.ndarray:
    """Recover the noise ``Z`` that generated ``X`` (valid on the image set)."""
    X = np.asarray(X, dtype=float)
    tau = params.tau
    P = _round_batch(X, params.forbidden)
    psi = (X - (1 - tau) * P) / tau
    return (psi - params.mean_matrix()) / params.v


def in_rounding_image(X, params: RoundingParams) -> bool:
    """Self-consistency test for membership of ``X`` in the image set."""
    X = np.asarray(X, dtype=float)
    P = round_to_permutation(X, params.forbidden)
    psi = (X - (1 - params.tau) * P) / params.tau
    return bool(np.array_equal(round_to_permutation(psi, params.forbidden), P))


def round_log_det(params: RoundingParams) -> float:
    """log|dX/dZ| of the rounding map, constant within each Voronoi cell."""
    n = params.n
    return float(n * n * np.log(params.tau) + np.log(params.v).sum())


def round_log_density(X, params: RoundingParams) -> float:
    """Log density of ``X`` under the rounding transform; -inf off the image set."""
    if not in_rounding_image(X, params):
        return -np.inf
    z = round_inverse(X, params)
    return float((-0.5 * z**2 - 0.5 * LOG_2PI).sum() - round_log_det(params))


def round_sample_with_grad(params: RoundingParams, Z):
    """Batched rounding forward pass with reverse-mode closure.

    ``backward(gX)`` returns ``(g_m_raw, g_v)`` for dL/dX summed over the
    batch.  The ``round(Psi)`` term is treated as locally constant.
    """
    Z = np.asarray(Z, dtype=float)
    tau = params.tau
    mt, sk_back = sinkhorn_with_grad(params.masked_m(), params.sinkhorn_iters)
    psi = mt + params.v * Z
    P = _round_batch(psi, params.forbidden)
    X = tau * psi + (1 - tau) * P

    def backward(gX):
        gpsi = tau * np.asarray(gX, dtype=float)
        axes = tuple(range(Z.ndim - 2))
        g_v = (gpsi * Z).sum(axis=axes)
        g_m = sk_back(gpsi.sum(axis=axes))
        if params.forbidden is not None:
            g_m = np.where(params.forbidden, 0.0, g_m)
        return g_m, g_v

    return X, psi, P, backward


# ---------------------------------------------------------------------------
# categorical (simplex) analogs


def simplex_sb_forward(beta) -> np.ndarray:
    """Stick-breaking of ``beta`` in [0,1]^{N-1} to a point on the simplex."""
    beta = np.asarray(beta, dtype=float)
    stick = np.concatenate([np.ones(beta.shape[:-1] + (1,)), np.cumprod(1 - beta, axis=-1)], axis=-1)
    x = stick.copy()
    x[..., :-1] *= beta
    return x


def simplex_sb_inverse(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    # tail sums instead of 1 - cumsum: no cancellation when early breaks are large
    remaining = np.cumsum(x[..., ::-1], axis=-1)[..., ::-1][..., :-1]
    if (remaining <= 0).any():
        raise DegenerateBound("stick remainder underflowed")
    return np.clip(x[..., :-1] / remaining, 0.0, 1.0)


def simplex_round(psi, tau: float) -> np.ndarray:
    """Pull ``psi`` toward its nearest one-hot vector (ties -> smallest index)."""
    psi = np.asarray(psi, dtype=float)
    onehot = np.zeros_like(psi)
    np.put_along_axis(onehot, np.argmax(psi, axis=-1)[..., None], 1.0, axis=-1)
    return tau * psi + (1 - tau) * onehot


def gumbel(U) -> np.ndarray:
    U = np.clip(np.asarray(U, dtype=float), 1e-12, 1 - 1e-12)
    return -np.log(-np.log(U))


def softmax(a, axis=-1):
    a = np.asarray(a, dtype=float)
    e = np.exp(a - a.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


def gumbel_softmax(logits, tau: float, U) -> np.ndarray:
    """Concrete relaxation: ``softmax((logits + Gumbel(U)) / tau)``."""
    if not tau > 0:
        raise ValueError("tau must be positive")
    return softmax((np.asarray(logits, dtype=float) + gumbel(U)) / tau)


def simplex_project(m) -> np.ndarray:
    """Euclidean projection onto the probability simplex (sort-based)."""
    m = np.asarray(m, dtype=float)
    n = m.shape[-1]
    s = -np.sort(-m, axis=-1)
    css = np.cumsum(s, axis=-1) - 1.0
    ks = np.arange(1, n + 1)
    cond = s - css / ks > 0
    rho = n - 1 - np.argmax(cond[..., ::-1], axis=-1)
    theta = np.take_along_axis(css, rho[..., None], axis=-1) / (rho[..., None] + 1)
    return np.maximum(m - theta, 0.0)


def categorical_to_breaks(pi) -> np.ndarray:
    """Bernoulli parameters ``rho`` whose stick-breaking yields ``pi``."""
    pi = np.asarray(pi, dtype=float)
    rho = np.empty(len(pi) - 1)
    left = 1.0
    for i in range(len(pi) - 1):
        rho[i] = pi[i] / left if left > 0 else 0.0
        left *= 1 - rho[i]
    return np.clip(rho, 0.0, 1.0)


def breaks_to_categorical(rho) -> np.ndarray:
    rho = np.asarray(rho, dtype=float)
    return simplex_sb_forward(rho)


def breaks_to_gaussian_means(rho, nu) -> np.ndarray:
    """Means with ``P(psi > 0) = rho`` for ``psi ~ N(mu, nu^2)``.

    In the zero-temperature limit ``logistic(psi / tau)`` becomes the
    indicator of ``psi > 0``, so ``beta`` is Bernoulli with success
    probability ``Phi(mu / nu)``.
    """
    rho = np.clip(np.asarray(rho, dtype=float), 1e-15, 1 - 1e-15)
    return np.asarray(nu, dtype=float) * ndtri(rho)
