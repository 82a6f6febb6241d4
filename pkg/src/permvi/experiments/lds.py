"""Neuron identity inference in a linear dynamical system with a known wiring mask.

Each worm ``j`` records ``Y_t = X W X^T Y_{t-1} + noise`` where ``X`` is an
unknown permutation from observed neurons (rows) to canonical connectome
neurons (columns). ``W`` is shared across worms and may only be nonzero
where the adjacency ``A`` is. Reported neuron positions restrict the
candidate identities of each observed neuron to canonical neurons within
``constraint_tol``.
"""
from __future__ import annotations

import dataclasses
import math
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..errors import InfeasibleMatching, ParseError
from ..inference import (
    AnnealSchedule,
    GumbelSoftmaxParams,
    OptimizerState,
    draw_noise,
    fit_variational,
)
from ..perm_core import hungarian, perm_to_matrix, round_to_permutation, sinkhorn_knopp
from ..densities import relaxed_prior_logpdf
from ..transforms import RoundingParams, round_sample

TOL_GRID = (0.0075, 0.01, 0.02, 0.04, 0.05)


# -- model and data -----------------------------------------------------------


@dataclass
class WormStats:
    """Lag-one sufficient statistics of one recording."""

    s00: np.ndarray  # sum_t y_{t-1} y_{t-1}^T
    s10: np.ndarray  # sum_t y_t y_{t-1}^T
    s11: np.ndarray  # sum_t y_t y_t^T

    @classmethod
    def from_series(cls, Y):
        Y = np.asarray(Y, dtype=float)
        prev, nxt = Y[:-1], Y[1:]
        return cls(prev.T @ prev, nxt.T @ prev, nxt.T @ nxt)

    def canonical(self, X):
        """Statistics of ``X^T y`` (observed -> canonical order)."""
        return WormStats(X.T @ self.s00 @ X, X.T @ self.s10 @ X, X.T @ self.s11 @ X)


@dataclass
class LdsModel:
    adjacency: np.ndarray
    weights: np.ndarray
    positions: np.ndarray
    observations: list
    noise_std: float = 1.0
    constraint_tol: float = 1.0
    constraints: list = field(default_factory=list)
    known_identities: list = field(default_factory=list)
    true_perms: list = field(default_factory=list)
    observed_positions: list = field(default_factory=list)
    base_constraints: Optional[np.ndarray] = None

    def __post_init__(self):
        self.adjacency = np.asarray(self.adjacency).astype(bool)
        self.weights = np.asarray(self.weights, dtype=float)
        if (self.weights[~self.adjacency] != 0).any():
            raise ValueError("weights must vanish outside the adjacency mask")
        for Y in self.observations:
            if not np.isfinite(Y).all():
                raise ValueError("observations must be finite")
        if not self.constraints and self.base_constraints is not None:
            self.constraints = [pin_identities(self.base_constraints, k) for k in self.known_identities]
        elif not self.constraints:
            self.constraints = [build_constraints(p, self.positions, self.constraint_tol, k)
                                for p, k in zip(self.observed_positions, self.known_identities)]
        self.stats = [WormStats.from_series(Y) for Y in self.observations]

    @property
    def n(self) -> int:
        return self.adjacency.shape[0]

    @property
    def num_worms(self) -> int:
        return len(self.observations)

    def with_tolerance(self, tol: float) -> "LdsModel":
        """Same data and truth under a different position tolerance."""
        return dataclasses.replace(self, constraint_tol=tol, constraints=[])

    def subset(self, worms: int) -> "LdsModel":
        """The first ``worms`` recordings only."""
        return dataclasses.replace(
            self, observations=self.observations[:worms], constraints=self.constraints[:worms],
            known_identities=self.known_identities[:worms], true_perms=self.true_perms[:worms],
            observed_positions=self.observed_positions[:worms])

    def forbidden(self, j: int) -> np.ndarray:
        return ~self.constraints[j]


def build_constraints(observed_positions, positions, tol, known=()) -> np.ndarray:
    """``C[m, n] = |pos_obs[m] - pos[n]| < tol`` with pinned identities enforced."""
    obs = np.asarray(observed_positions, dtype=float)
    pos = np.asarray(positions, dtype=float)
    return pin_identities(np.abs(obs[:, None] - pos[None, :]) < tol, known)


def pin_identities(constraints, known=()) -> np.ndarray:
    """Restrict pinned rows and columns to their known identity; check feasibility."""
    C = np.array(constraints, dtype=bool)
    for m, n in known:
        C[m, :] = False
        C[:, n] = False
        C[m, n] = True
    # raises InfeasibleMatching when no permutation fits inside the mask
    hungarian(np.where(C, 0.0, np.inf))
    return C


def random_adjacency(n: int, density: float, rng) -> np.ndarray:
    upper = np.triu(rng.uniform(size=(n, n)) < density, 1)
    return upper | upper.T


def antisymmetric_weights(adjacency, rng) -> np.ndarray:
    """Gaussian weights on the mask, antisymmetrized and divided by 1.1x the spectral radius."""
    A = np.asarray(adjacency, dtype=bool)
    G = np.triu(rng.standard_normal(A.shape), 1)
    W = (G - G.T) * A
    radius = np.abs(np.linalg.eigvals(W)).max()
    return W / (1.1 * radius) if radius > 0 else W


def simulate(W, T: int, noise_std: float, rng) -> np.ndarray:
    """Canonical-order trajectory ``z_t = W z_{t-1} + noise`` of length T."""
    n = W.shape[0]
    eps = noise_std * rng.standard_normal((T, n))
    Z = np.empty((T, n))
    Z[0] = eps[0]
    for t in range(1, T):
        Z[t] = W @ Z[t - 1] + eps[t]
    return Z


def lds_generate(n: int, num_worms: int, T: int, density: float = 0.2, noise_std: float = 1.0,
                 rng=None, constraint_tol: float = 0.05, num_known: int = 3,
                 adjacency=None, positions=None, constraints=None) -> LdsModel:
    """Simulate ``num_worms`` recordings sharing one dynamics matrix.

    Every worm draws its own generator from the parent seed, so the first
    ``k`` worms are identical whatever ``num_worms`` is. A fixed
    ``constraints`` mask (observed x canonical) replaces the positional
    one; each true permutation is then drawn inside it.
    """
    if n < 2 or T < 2:
        raise ValueError("need n >= 2 and T >= 2")
    ss = np.random.SeedSequence(rng) if not isinstance(rng, np.random.SeedSequence) else rng
    shared, *worm_seeds = ss.spawn(1 + num_worms)
    g = np.random.default_rng(shared)
    A = random_adjacency(n, density, g) if adjacency is None else np.asarray(adjacency, dtype=bool)
    W = antisymmetric_weights(A, g)
    pos = g.uniform(size=n) if positions is None else np.asarray(positions, dtype=float)
    if A.shape != (n, n) or len(pos) != n:
        raise ValueError(f"adjacency/positions do not match n={n}")
    base = None
    if constraints is not None:
        base = np.asarray(constraints, dtype=bool)
        hungarian(np.where(base, 0.0, np.inf))
    observations, perms, obs_pos, known = [], [], [], []
    for s in worm_seeds:
        wr = np.random.default_rng(s)
        if base is None:
            perm = wr.permutation(n)
        else:
            perm = np.array(hungarian(np.where(base, wr.uniform(size=(n, n)), np.inf))[0])
        Z = simulate(W, T, noise_std, wr)
        observations.append(Z[:, perm])
        perms.append(tuple(int(i) for i in perm))
        obs_pos.append(pos[perm])
        pinned = wr.choice(n, size=min(num_known, n), replace=False)
        known.append([(int(m), int(perm[m])) for m in sorted(pinned)])
    return LdsModel(A, W, pos, observations, noise_std, constraint_tol, [], known, perms, obs_pos,
                    base)


def load_adjacency(path) -> np.ndarray:
    """Whitespace file: a header line with N, then N rows of 0/1 entries."""
    try:
        with open(path) as fh:
            lines = [ln.split() for ln in fh if ln.strip()]
        n = int(lines[0][0])
        A = np.array([[int(v) for v in row] for row in lines[1:]], dtype=int)
    except (OSError, ValueError, IndexError) as exc:
        raise ParseError(f"{path}: {exc}") from exc
    if A.shape != (n, n) or not np.isin(A, (0, 1)).all():
        raise ParseError(f"{path}: expected {n}x{n} binary matrix, got shape {A.shape}")
    return A.astype(bool)


def load_constraints(path) -> np.ndarray:
    """Observed x canonical candidate mask, in the adjacency file format."""
    return load_adjacency(path)


def load_positions(path, n: Optional[int] = None) -> np.ndarray:
    """Whitespace-separated reals in [0, 1]."""
    try:
        with open(path) as fh:
            vals = np.array([float(v) for v in fh.read().split()])
    except (OSError, ValueError) as exc:
        raise ParseError(f"{path}: {exc}") from exc
    if n is not None and len(vals) != n:
        raise ParseError(f"{path}: expected {n} positions, got {len(vals)}")
    if ((vals < 0) | (vals > 1)).any():
        raise ParseError(f"{path}: positions must lie in [0, 1]")
    return vals


# -- likelihood -----------------------------------------------------------------


def lds_loglik(stats: WormStats, W, X, noise_std: float = 1.0):
    """Gaussian log-likelihood (up to a constant) and its gradient in ``X``.

    ``X`` may be a batch (S, N, N).
    """
    X = np.asarray(X, dtype=float)
    F = X @ W @ np.swapaxes(X, -1, -2)
    s2 = noise_std**2
    FS00 = F @ stats.s00
    quad = (FS00 * F).sum(axis=(-1, -2))
    cross = (F * stats.s10).sum(axis=(-1, -2))
    value = -0.5 * (np.trace(stats.s11) - 2 * cross + quad) / s2
    G = (stats.s10 - FS00) / s2
    grad = G @ X @ W.T + np.swapaxes(G, -1, -2) @ X @ W
    return value, grad


def lds_objective(stats: WormStats, W, P) -> float:
    """Residual sum of squares for a hard assignment."""
    F = P @ W @ P.T
    return float(np.trace(stats.s11) - 2 * (F * stats.s10).sum() + (F @ stats.s00 * F).sum())


def regress_weights(adjacency, canonical_stats, noise_std: float = 1.0, prior_var: float = 1.0):
    """Posterior mean of ``W`` under a N(0, prior_var) prior on unmasked entries.

    Returns ``(W, precisions)``; ``precisions[i]`` is the posterior precision
    of row ``i`` restricted to its mask, used for Gibbs draws.
    """
    A = np.asarray(adjacency, dtype=bool)
    n = A.shape[0]
    s00 = sum(s.s00 for s in canonical_stats)
    s10 = sum(s.s10 for s in canonical_stats)
    s2 = noise_std**2
    W = np.zeros((n, n))
    precs = []
    for i in range(n):
        idx = np.flatnonzero(A[i])
        if idx.size == 0:
            precs.append(None)
            continue
        prec = s00[np.ix_(idx, idx)] / s2 + np.eye(idx.size) / prior_var
        W[i, idx] = np.linalg.solve(prec, s10[i, idx] / s2)
        precs.append((idx, prec))
    return W, precs


def candidate_average(constraints) -> np.ndarray:
    """Doubly stochastic matrix spreading each neuron evenly over its candidates."""
    C = np.asarray(constraints, dtype=float)
    return sinkhorn_knopp(C + 1e-9, 50).matrix * C


def initial_weights(model: "LdsModel") -> np.ndarray:
    """Ridge estimate of W before any identity is resolved."""
    canon = [st.canonical(candidate_average(C)) for st, C in zip(model.stats, model.constraints)]
    return regress_weights(model.adjacency, canon, model.noise_std)[0]


def _mean_canonical_stats(stats: WormStats, mats) -> WormStats:
    mats = list(mats)
    parts = [stats.canonical(X) for X in mats]
    k = len(parts)
    return WormStats(sum(p.s00 for p in parts) / k, sum(p.s10 for p in parts) / k,
                     sum(p.s11 for p in parts) / k)


def assignment_accuracy(perm, truth, known=()) -> float:
    pinned = {m for m, _ in known}
    free = [m for m in range(len(truth)) if m not in pinned]
    if not free:
        return 1.0
    return float(np.mean([perm[m] == truth[m] for m in free]))


def _decode(mean_matrix, forbidden) -> tuple:
    P = round_to_permutation(mean_matrix, forbidden)
    return tuple(int(j) for j in P.argmax(axis=1))


# -- variational inference ---------------------------------------------------------


@dataclass
class LdsConfig:
    outer_iters: int = 15
    inner_steps: int = 20
    samples: int = 5
    w_samples: int = 5
    lr: float = 0.1
    tau0: float = 1.0
    decay: float = 0.99
    tau_min: float = 0.5
    v_init: float = 0.3
    v_bounds: tuple = (0.1, 0.5)
    eta: Optional[float] = None
    w_update: str = "rounded"
    mcmc_sweeps: int = 300
    map_rounds: int = 10


@dataclass
class LdsFit:
    weights: np.ndarray
    params: list
    perms: list
    accuracy: float
    accuracy_trace: list


def _worm_accuracy(model: LdsModel, perms) -> float:
    return float(np.mean([assignment_accuracy(p, t, k) for p, t, k in
                          zip(perms, model.true_perms, model.known_identities)]))


def _coordinate_ascent(model: LdsModel, cfg: LdsConfig, rng, params, w_matrices) -> LdsFit:
    """Alternate a W regression with a few SVI steps per worm."""
    states = [OptimizerState(lr=cfg.lr) for _ in params]
    trace = []
    sched = AnnealSchedule(cfg.tau0, cfg.decay, cfg.tau_min)
    W = initial_weights(model)
    for it in range(cfg.outer_iters):
        if it > 0:
            canon = [_mean_canonical_stats(st, w_matrices(p, rng))
                     for st, p in zip(model.stats, params)]
            W, _ = regress_weights(model.adjacency, canon, model.noise_std)
        inner = AnnealSchedule(sched.tau(it * cfg.inner_steps), cfg.decay,
                               min(cfg.tau_min, sched.tau(it * cfg.inner_steps)))
        for j in range(model.num_worms):
            stats = model.stats[j]

            def logjoint(X, stats=stats, W=W):
                v, g = lds_loglik(stats, W, X, model.noise_std)
                if cfg.eta is not None:
                    pv, pg = relaxed_prior_logpdf(X, cfg.eta, return_grad=True)
                    v, g = v + pv, g + pg
                return v, g

            fit = fit_variational(logjoint, params[j], inner, cfg.inner_steps, cfg.samples, rng,
                                  cfg.lr, state=states[j])
            params[j] = fit.params
        perms = [_decode(p.mean_matrix(), model.forbidden(j)) for j, p in enumerate(params)]
        trace.append(_worm_accuracy(model, perms))
    return LdsFit(W, params, perms, trace[-1], trace)


def lds_fit_variational(model: LdsModel, cfg: LdsConfig = LdsConfig(), rng=None) -> LdsFit:
    """Masked rounding VI for every worm, alternating with a ridge update of W."""
    rng = np.random.default_rng(rng)
    params = [RoundingParams.init(model.n, v=cfg.v_init, tau=cfg.tau0, forbidden=model.forbidden(j),
                                  v_bounds=cfg.v_bounds)
              for j in range(model.num_worms)]

    def rounded_samples(p, rng):
        if cfg.w_update == "mean":
            return [p.mean_matrix()]
        _, psi = round_sample(p, draw_noise(p, cfg.w_samples, rng))
        return [round_to_permutation(x, p.forbidden) for x in psi]

    return _coordinate_ascent(model, cfg, rng, params, rounded_samples)


def lds_baseline_naive(model: LdsModel, cfg: LdsConfig = LdsConfig(), rng=None) -> LdsFit:
    """Rows as independent relaxed categoricals; no column constraint during the fit."""
    rng = np.random.default_rng(rng)
    params = [GumbelSoftmaxParams.init(model.n, tau=cfg.tau0, forbidden=model.forbidden(j))
              for j in range(model.num_worms)]

    def soft_samples(p, rng):
        return [p.mean_matrix()]

    return _coordinate_ascent(model, cfg, rng, params, soft_samples)


# -- MAP and MCMC baselines ------------------------------------------------------


def _linearized_start(stats, W, forbidden, noise_std):
    n = W.shape[0]
    allowed = (~forbidden).astype(float)
    X0 = allowed / allowed.sum(axis=1, keepdims=True)
    _, grad = lds_loglik(stats, W, X0, noise_std)
    phi, _ = hungarian(np.where(forbidden, np.inf, -grad))
    return np.asarray(phi)


def qap_local_search(stats: WormStats, W, forbidden, start, max_sweeps: int = 100):
    """Best-improvement pairwise swaps of identities that respect the mask.

    Returns the final assignment and the objective after each accepted swap.
    """
    phi = np.array(start)
    n = len(phi)
    P = perm_to_matrix(phi).astype(float)
    best = lds_objective(stats, W, P)
    history = [best]
    allowed = ~np.asarray(forbidden, dtype=bool)
    for _ in range(max_sweeps):
        cand = None
        for a in range(n):
            for b in range(a + 1, n):
                if not (allowed[a, phi[b]] and allowed[b, phi[a]]):
                    continue
                phi[a], phi[b] = phi[b], phi[a]
                val = lds_objective(stats, W, perm_to_matrix(phi).astype(float))
                phi[a], phi[b] = phi[b], phi[a]
                if val < best - 1e-9 and (cand is None or val < cand[0]):
                    cand = (val, a, b)
        if cand is None:
            break
        best, a, b = cand
        phi[a], phi[b] = phi[b], phi[a]
        history.append(best)
    return tuple(int(i) for i in phi), history


def lds_baseline_map(model: LdsModel, cfg: LdsConfig = LdsConfig(), rng=None) -> LdsFit:
    """Alternate exact W regression with per-worm swap search on the assignment."""
    W = initial_weights(model)
    perms = [_decode(candidate_average(C), ~C) for C in model.constraints]
    trace = []
    for r in range(cfg.map_rounds):
        if r > 0:
            canon = [st.canonical(perm_to_matrix(p).astype(float)) for st, p in zip(model.stats, perms)]
            W, _ = regress_weights(model.adjacency, canon, model.noise_std)
        new = []
        for j, st in enumerate(model.stats):
            fb = model.forbidden(j)
            start = _linearized_start(st, W, fb, model.noise_std)
            cur = np.asarray(perms[j])
            # keep whichever start scores better
            if lds_objective(st, W, perm_to_matrix(cur).astype(float)) < \
                    lds_objective(st, W, perm_to_matrix(start).astype(float)):
                start = cur
            new.append(qap_local_search(st, W, fb, start)[0])
        trace.append(_worm_accuracy(model, new))
        if new == perms:
            break
        perms = new
    perms = new
    return LdsFit(W, [], perms, _worm_accuracy(model, perms), trace)


def gibbs_weights(adjacency, canonical_stats, noise_std, rng):
    W_mean, precs = regress_weights(adjacency, canonical_stats, noise_std)
    W = np.zeros_like(W_mean)
    for i, entry in enumerate(precs):
        if entry is None:
            continue
        idx, prec = entry
        L = np.linalg.cholesky(prec)
        W[i, idx] = W_mean[i, idx] + np.linalg.solve(L.T, rng.standard_normal(idx.size))
    return W


@dataclass
class McmcResult:
    perms: list
    accuracy: float
    acceptance_rate: float
    samples: list


def lds_baseline_mcmc(model: LdsModel, cfg: LdsConfig = LdsConfig(), rng=None) -> McmcResult:
    """Gibbs draws of W alternated with Metropolis identity swaps within the mask.

    The point estimate per worm is the Hungarian assignment of the
    post-burn-in marginal frequencies.
    """
    rng = np.random.default_rng(rng)
    n = model.n
    s2 = model.noise_std**2
    W0 = initial_weights(model)
    phis = [np.asarray(_linearized_start(st, W0, model.forbidden(j), model.noise_std))
            for j, st in enumerate(model.stats)]
    counts = [np.zeros((n, n)) for _ in phis]
    burn = cfg.mcmc_sweeps // 10
    accepted = proposed = 0
    samples = []
    for sweep in range(cfg.mcmc_sweeps):
        canon = [st.canonical(perm_to_matrix(p).astype(float)) for st, p in zip(model.stats, phis)]
        W = gibbs_weights(model.adjacency, canon, model.noise_std, rng)
        for j, st in enumerate(model.stats):
            allowed = model.constraints[j]
            phi = phis[j]
            cur = lds_objective(st, W, perm_to_matrix(phi).astype(float))
            for _ in range(n):
                a, b = rng.choice(n, size=2, replace=False)
                if not (allowed[a, phi[b]] and allowed[b, phi[a]]):
                    continue
                proposed += 1
                phi[a], phi[b] = phi[b], phi[a]
                val = lds_objective(st, W, perm_to_matrix(phi).astype(float))
                if math.log(rng.uniform()) < -0.5 * (val - cur) / s2:
                    cur = val
                    accepted += 1
                else:
                    phi[a], phi[b] = phi[b], phi[a]
            if sweep >= burn:
                counts[j][np.arange(n), phi] += 1
        if sweep >= burn:
            samples.append([tuple(int(i) for i in p) for p in phis])
    perms = [_decode(c, model.forbidden(j)) for j, c in enumerate(counts)]
    rate = accepted / proposed if proposed else 0.0
    return McmcResult(perms, _worm_accuracy(model, perms), rate, samples)


# -- experiment driver -------------------------------------------------------------

LDS_METHODS = ("rounding", "naive", "map", "mcmc")


def _run_method(method, model, cfg, rng):
    if method == "rounding":
        return lds_fit_variational(model, cfg, rng).accuracy
    if method == "naive":
        return lds_baseline_naive(model, cfg, rng).accuracy
    if method == "map":
        return lds_baseline_map(model, cfg, rng).accuracy
    if method == "mcmc":
        return lds_baseline_mcmc(model, cfg, rng).accuracy
    raise ValueError(f"unknown LDS method {method!r}")


def run_lds_repetition(rep: int, seed: int, n: int, T: int, tols, worms, methods,
                       cfg: LdsConfig, density: float = 0.2, noise_std: float = 1.0,
                       num_known: int = 3, adjacency=None, positions=None, constraints=None):
    """Accuracy rows ``(method, tol, J, accuracy, ms)`` for one simulated dataset.

    All tolerances and worm counts share the same simulated data, so the
    trends across them are not confounded by resampling.
    """
    base = lds_generate(n, max(worms), T, density, noise_std, np.random.SeedSequence([seed, rep]),
                        max(tols), num_known, adjacency, positions, constraints)
    rows = []
    for tol in tols:
        model = base if constraints is not None else base.with_tolerance(tol)
        for J in worms:
            sub = model.subset(J)
            for k, method in enumerate(methods):
                rng = np.random.default_rng([seed, rep, k])
                t0 = time.perf_counter()
                acc = _run_method(method, sub, cfg, rng)
                rows.append((method, tol, J, acc, 1e3 * (time.perf_counter() - t0)))
    return rows
