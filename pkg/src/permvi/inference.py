"""Reparameterized stochastic variational inference over relaxed permutations.

A model is a callable ``logjoint(X) -> (values, grads)`` taking a batch of
relaxed matrices of shape (S, N, N) and returning per-sample log joint
values (S,) and their gradients with respect to ``X`` (S, N, N).

The entropy of ``q`` is computed with the change-of-variables identity
``H[q] = H[Psi] + E log|dX/dPsi|``, where ``Psi`` is the Gaussian
intermediate and the Jacobian term is exact per sample (stick-breaking)
or constant (rounding).
"""
from __future__ import annotations

import dataclasses
import math
import time
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.special import gammaln, logsumexp

from . import transforms as T
from .errors import NonFiniteElbo, ShapeMismatch

STICK_BREAKING = "stick-breaking"
ROUNDING = "rounding"
GUMBEL_SOFTMAX = "gumbel-softmax"
TRANSFORMS = (STICK_BREAKING, ROUNDING, GUMBEL_SOFTMAX)

LogJoint = Callable[[np.ndarray], tuple]


@dataclass(frozen=True)
class GumbelSoftmaxParams:
    """Independent Concrete factor per row; forbidden cells get zero mass."""

    logits: np.ndarray
    tau: float = 1.0
    forbidden: Optional[np.ndarray] = None

    def __post_init__(self):
        object.__setattr__(self, "logits", np.asarray(self.logits, dtype=float))
        if self.forbidden is not None:
            fb = np.asarray(self.forbidden, dtype=bool)
            if fb.all(axis=1).any():
                raise ValueError("every row needs at least one allowed entry")
            object.__setattr__(self, "forbidden", fb)
        if not self.tau > 0:
            raise ValueError("tau must be positive")

    @property
    def n(self) -> int:
        return self.logits.shape[0]

    @classmethod
    def init(cls, n: int, tau: float = 1.0, forbidden=None):
        return cls(np.zeros((n, n)), tau, forbidden)

    def mean_matrix(self) -> np.ndarray:
        return _masked_softmax(self.logits, self.forbidden)


def _masked_softmax(a, forbidden):
    if forbidden is not None:
        a = np.where(forbidden, -np.inf, a)
    return T.softmax(a, axis=-1)


@dataclass(frozen=True)
class ElboEstimate:
    value: float
    entropy_term: float
    logjoint_term: float
    num_samples: int


@dataclass(frozen=True)
class AnnealSchedule:
    tau0: float = 1.0
    decay: float = 0.997
    tau_min: float = 0.3

    def __post_init__(self):
        if not (0 < self.decay <= 1):
            raise ValueError("decay must lie in (0, 1]")
        if not (0 < self.tau_min <= self.tau0):
            raise ValueError("need 0 < tau_min <= tau0")

    def tau(self, k: int) -> float:
        return max(self.tau_min, self.tau0 * self.decay**k)


def transform_kind(params) -> str:
    if isinstance(params, T.StickBreakingParams):
        return STICK_BREAKING
    if isinstance(params, T.RoundingParams):
        return ROUNDING
    if isinstance(params, GumbelSoftmaxParams):
        return GUMBEL_SOFTMAX
    raise TypeError(f"unknown parameter type {type(params).__name__}")


def param_fields(params) -> tuple:
    return {
        STICK_BREAKING: ("mu", "nu"),
        ROUNDING: ("m_raw", "v"),
        GUMBEL_SOFTMAX: ("logits",),
    }[transform_kind(params)]


def draw_noise(params, S: int, rng: np.random.Generator) -> np.ndarray:
    """Parameter-free noise for ``S`` samples (normal, or uniform for Gumbel)."""
    kind = transform_kind(params)
    if kind == STICK_BREAKING:
        k = params.n - 1
        return rng.standard_normal((S, k, k))
    if kind == ROUNDING:
        return rng.standard_normal((S, params.n, params.n))
    return rng.uniform(size=(S, params.n, params.n))


def sample_relaxed(params, Z) -> np.ndarray:
    """Relaxed samples ``X`` for the given noise batch."""
    kind = transform_kind(params)
    if kind == STICK_BREAKING:
        return T.sb_sample(params, Z)[0]
    if kind == ROUNDING:
        return T.round_sample(params, Z)[0]
    return _gumbel_rows(params, Z)[0]


def _gaussian_entropy(sd) -> float:
    return float(np.log(sd).sum() + 0.5 * sd.size * (1 + T.LOG_2PI))


def _gumbel_rows(params: GumbelSoftmaxParams, U):
    g = T.gumbel(U)
    a = params.logits
    s = (a + g) / params.tau
    if params.forbidden is not None:
        s = np.where(params.forbidden, -np.inf, s)
    X = T.softmax(s, axis=-1)
    return X, g, s


def _concrete_neg_logq(params: GumbelSoftmaxParams, g, s, X):
    """``-log q(X)`` for independent Concrete rows, per sample."""
    tau = params.tau
    allowed = np.ones(params.logits.shape, dtype=bool) if params.forbidden is None else ~params.forbidden
    n = allowed.sum(axis=1)
    a = np.where(allowed, params.logits, 0.0)
    gm = np.where(allowed, g, 0.0)
    lse_s = logsumexp(np.where(allowed, s, -np.inf), axis=-1)
    lse_g = logsumexp(np.where(allowed, -g, -np.inf), axis=-1)
    logq = (gammaln(n) + (n - 1) * math.log(tau) - a.sum(-1) / tau
            - (tau + 1) / tau * gm.sum(-1) + n * lse_s - n * lse_g)
    # single-candidate rows are point masses and carry no density
    logq = np.where(n > 1, logq, 0.0)
    return -logq.sum(axis=-1)


def elbo_and_grad(logjoint: LogJoint, params, Z, need_grad: bool = True):
    """ELBO estimate and its gradient for a fixed batch of noise ``Z``.

    Returns ``(ElboEstimate, grads)`` where ``grads`` maps parameter
    field names to dELBO/dparam (ascent direction).
    """
    kind = transform_kind(params)
    S = Z.shape[0]
    grads = None
    if kind == STICK_BREAKING:
        X, logdet, back = T.sb_sample_with_grad(params, Z)
        lj, gX = logjoint(X)
        entropy = _gaussian_entropy(params.nu) + float(logdet.mean())
        if need_grad:
            g_mu, g_nu = back(np.asarray(gX) / S, 1.0 / S)
            grads = {"mu": g_mu, "nu": g_nu + 1.0 / params.nu}
    elif kind == ROUNDING:
        X, _, _, back = T.round_sample_with_grad(params, Z)
        lj, gX = logjoint(X)
        n = params.n
        entropy = _gaussian_entropy(params.v) + n * n * math.log(params.tau)
        if need_grad:
            g_m, g_v = back(np.asarray(gX) / S)
            grads = {"m_raw": g_m, "v": g_v + 1.0 / params.v}
    else:
        X, g, s = _gumbel_rows(params, Z)
        lj, gX = logjoint(X)
        entropy = float(_concrete_neg_logq(params, g, s, X).mean())
        if need_grad:
            gX = np.asarray(gX) / S
            inner = (gX * X).sum(axis=-1, keepdims=True)
            g_path = X * (gX - inner) / params.tau
            allowed = 1.0 if params.forbidden is None else ~params.forbidden
            n = np.asarray(np.broadcast_to(allowed, X.shape[1:])).sum(axis=1, keepdims=True)
            g_ent = ((1 - n * X) / params.tau * allowed).sum(axis=0) / S
            g_ent = np.where(n > 1, g_ent, 0.0)
            grads = {"logits": g_path.sum(axis=0) + g_ent}
    lj_mean = float(np.mean(lj))
    est = ElboEstimate(lj_mean + entropy, entropy, lj_mean, S)
    return est, grads


def elbo_estimate(logjoint: LogJoint, params, S: int, rng) -> ElboEstimate:
    if S < 1:
        raise ValueError("S must be >= 1")
    rng = np.random.default_rng(rng)
    return elbo_and_grad(logjoint, params, draw_noise(params, S, rng), need_grad=False)[0]


def elbo_gradient(logjoint: LogJoint, params, S: int, rng) -> dict:
    if S < 1:
        raise ValueError("S must be >= 1")
    rng = np.random.default_rng(rng)
    return elbo_and_grad(logjoint, params, draw_noise(params, S, rng))[1]


@dataclass
class OptimizerState:
    lr: float = 0.1
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


# positive location parameters are optimized on the log scale
LOG_SCALE_FIELDS = frozenset({"m_raw"})


def adam_step(state: OptimizerState, grad: dict, params):
    """One ADAM descent step on ``grad`` followed by parameter clamping.

    Fields in ``LOG_SCALE_FIELDS`` take their step in log space (the
    gradient is converted with the chain rule), which keeps them positive.
    """
    state.step += 1
    t = state.step
    updates = {}
    for name, g in grad.items():
        p = getattr(params, name)
        g = np.asarray(g, dtype=float)
        if g.shape != p.shape:
            raise ShapeMismatch(f"{name}: gradient {g.shape} vs parameter {p.shape}")
        log_scale = name in LOG_SCALE_FIELDS
        if log_scale:
            g = g * p
            p = np.log(p)
        m = state.m.get(name, np.zeros_like(p))
        v = state.v.get(name, np.zeros_like(p))
        m = state.beta1 * m + (1 - state.beta1) * g
        v = state.beta2 * v + (1 - state.beta2) * g * g
        state.m[name], state.v[name] = m, v
        mhat = m / (1 - state.beta1**t)
        vhat = v / (1 - state.beta2**t)
        new = p - state.lr * mhat / (np.sqrt(vhat) + state.eps)
        updates[name] = np.exp(new) if log_scale else new
    # dataclass validation clamps nu / v / m_raw into their boxes
    return dataclasses.replace(params, **updates)


@dataclass
class FitResult:
    params: object
    elbo_trace: np.ndarray
    tau_trace: np.ndarray
    params_trace: list
    seconds: float


def fit_variational(logjoint: LogJoint, params, schedule: AnnealSchedule, steps: int,
                    S: int = 10, rng=None, lr: float = 0.1, record_every: int = 0,
                    state: Optional[OptimizerState] = None) -> FitResult:
    """Anneal, estimate the gradient with fresh noise, take an ADAM step; repeat."""
    if steps < 1:
        raise ValueError("steps must be >= 1")
    rng = np.random.default_rng(rng)
    state = OptimizerState(lr=lr) if state is None else state
    elbos = np.empty(steps)
    taus = np.empty(steps)
    trace = []
    t0 = time.perf_counter()
    for k in range(steps):
        tau = schedule.tau(k)
        params = dataclasses.replace(params, tau=tau)
        est, grad = elbo_and_grad(logjoint, params, draw_noise(params, S, rng))
        if not math.isfinite(est.value):
            raise NonFiniteElbo(
                f"non-finite ELBO at step {k} (tau={tau:.4g}, "
                f"logjoint={est.logjoint_term!r}, entropy={est.entropy_term!r})")
        elbos[k] = est.value
        taus[k] = tau
        params = adam_step(state, {name: -g for name, g in grad.items()}, params)
        if record_every and k % record_every == 0:
            trace.append(params)
    return FitResult(params, elbos, taus, trace, time.perf_counter() - t0)
