"""Numerical health checks of both transforms on random instances."""
from __future__ import annotations

import numpy as np

from ..perm_core import round_to_permutation, sinkhorn_knopp
from ..transforms import (
    RoundingParams,
    round_inverse,
    round_log_det,
    round_sample,
    sb_forward,
    sb_inverse,
    sb_transform,
)


def _numerical_logdet(f, x, h=1e-6):
    x = np.asarray(x, dtype=float).ravel()
    cols = []
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        cols.append((f(x + e) - f(x - e)) / (2 * h))
    return np.linalg.slogdet(np.stack(cols, axis=1))[1]


def transform_diagnostics(n: int, rng, tau: float = 0.5, draws: int = 1000) -> dict:
    """Roundtrip errors, Jacobian agreement and cell preservation for one instance."""
    rng = np.random.default_rng(rng)
    k = n - 1
    M = sinkhorn_knopp(rng.uniform(0.1, 1.0, (n, n)), 50).matrix
    B = sb_inverse(0.5 * M + 0.5 / n)[0]
    X, _ = sb_forward(B)
    sb_err = float(np.abs(sb_forward(sb_inverse(X.matrix)[0])[0].matrix - X.matrix).max())

    psi = rng.normal(0, 1, (k, k))
    f = lambda v: sb_transform(v.reshape(k, k), tau)[0][:k, :k].ravel()
    ref = _numerical_logdet(f, psi)
    sb_logdet_rel = float(abs(sb_transform(psi, tau)[1] - ref) / abs(ref))

    params = RoundingParams(rng.uniform(0.1, 1, (n, n)), rng.uniform(0.1, 0.5, (n, n)), tau)
    Z = rng.standard_normal((draws, n, n))
    Xr, psi_r = round_sample(params, Z)
    round_err = float(np.abs(round_inverse(Xr, params) - Z).max())
    z0 = Z[0]
    ref_r = _numerical_logdet(lambda v: round_sample(params, v.reshape(n, n))[0].ravel(), z0)
    round_logdet_abs = float(abs(round_log_det(params) - ref_r))
    same = [np.array_equal(round_to_permutation(a), round_to_permutation(b)) for a, b in zip(Xr, psi_r)]
    return {
        "sb_roundtrip_err": sb_err,
        "sb_logdet_rel_err": sb_logdet_rel,
        "round_roundtrip_err": round_err,
        "round_logdet_abs_err": round_logdet_abs,
        "cell_preserved_frac": float(np.mean(same)),
    }
