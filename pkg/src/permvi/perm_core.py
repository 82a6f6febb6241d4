"""Exact combinatorial primitives on permutations.

Permutations are stored in one-line notation as tuples of ints,
``phi[m] = n`` meaning row ``m`` is assigned to column ``n``.  The
matching permutation matrix has ``P[m, phi[m]] = 1``.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from .errors import DimensionTooLarge, InfeasibleMatching, NonPositiveEntry

MAX_ENUMERATION = 8
SINKHORN_ITERS = 10

Permutation = tuple


def as_permutation(mapping: Iterable[int]) -> tuple:
    phi = tuple(int(i) for i in mapping)
    n = len(phi)
    if n < 1 or sorted(phi) != list(range(n)):
        raise ValueError(f"not a permutation of range({n}): {phi}")
    return phi


def perm_to_matrix(phi: Sequence[int]) -> np.ndarray:
    n = len(phi)
    P = np.zeros((n, n))
    P[np.arange(n), np.asarray(phi, dtype=int)] = 1.0
    return P


def matrix_to_perm(P: np.ndarray) -> tuple:
    P = np.asarray(P)
    if P.ndim != 2 or P.shape[0] != P.shape[1]:
        raise ValueError("permutation matrix must be square")
    if not (np.isin(P, (0, 1)).all() and (P.sum(0) == 1).all() and (P.sum(1) == 1).all()):
        raise ValueError("not a permutation matrix")
    return tuple(int(j) for j in P.argmax(axis=1))


def is_permutation_matrix(P: np.ndarray) -> bool:
    try:
        matrix_to_perm(P)
    except ValueError:
        return False
    return True


class DoublyStochastic(NamedTuple):
    """A point in (or numerically near) the Birkhoff polytope.

    ``tolerance`` is the measured maximum deviation of any row or column
    sum from one.
    """

    matrix: np.ndarray
    tolerance: float


def sum_deviation(X: np.ndarray) -> float:
    X = np.asarray(X)
    return float(max(np.abs(X.sum(-1) - 1).max(), np.abs(X.sum(-2) - 1).max()))


def is_doubly_stochastic(X: np.ndarray, tol: float = 1e-10) -> bool:
    X = np.asarray(X)
    return bool((X >= -tol).all() and sum_deviation(X) <= tol)


# ---------------------------------------------------------------------------
# linear assignment


def _finite_cost(cost: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    forbidden = np.isposinf(cost)
    if np.isnan(cost).any() or np.isneginf(cost).any():
        raise ValueError("cost entries must be finite or +inf")
    if not forbidden.any():
        return cost, forbidden
    finite = cost[~forbidden]
    scale = float(np.abs(finite).max()) if finite.size else 0.0
    # any matching using a forbidden cell costs more than every feasible one
    big = 2.0 * cost.shape[0] * scale + 1.0
    return np.where(forbidden, big, cost), forbidden


def hungarian(cost) -> tuple[tuple, float]:
    """Minimum-cost perfect matching on a square cost matrix.

    Shortest augmenting path with dual potentials (Jonker-Volgenant
    style), O(N^3).  ``+inf`` entries are forbidden assignments.

    Returns
    -------
    phi : tuple
        ``phi[m]`` is the column assigned to row ``m``.
    total : float
        ``sum(cost[m, phi[m]])``.
    """
    cost = np.asarray(cost, dtype=float)
    if cost.ndim != 2 or cost.shape[0] != cost.shape[1]:
        raise ValueError(f"cost must be square, got shape {cost.shape}")
    n = cost.shape[0]
    a, forbidden = _finite_cost(cost)

    # 1-based columns, index 0 is the virtual root column
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    match = np.zeros(n + 1, dtype=int)  # match[j] = row (1-based) in column j
    way = np.zeros(n + 1, dtype=int)
    for i in range(1, n + 1):
        match[0] = i
        j0 = 0
        minv = np.full(n + 1, np.inf)
        used = np.zeros(n + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = match[j0]
            free = ~used
            free[0] = False
            reduced = a[i0 - 1] - u[i0] - v[1:]
            better = free[1:] & (reduced < minv[1:])
            idx = np.flatnonzero(better) + 1
            minv[idx] = reduced[idx - 1]
            way[idx] = j0
            cand = np.where(free, minv, np.inf)
            j1 = int(np.argmin(cand))
            delta = cand[j1]
            u[match[used]] += delta
            v[used] -= delta
            minv[free] -= delta
            j0 = j1
            if match[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            match[j0] = match[j1]
            j0 = j1

    phi = [0] * n
    for j in range(1, n + 1):
        phi[match[j] - 1] = j - 1
    rows = np.arange(n)
    if forbidden[rows, phi].any():
        raise InfeasibleMatching("no finite-cost perfect matching exists")
    return tuple(phi), float(cost[rows, phi].sum())


def round_to_permutation(psi, forbidden=None) -> np.ndarray:
    """Nearest permutation matrix to ``psi`` in Frobenius norm.

    ``forbidden`` is an optional boolean mask of cells that may never be
    selected.
    """
    psi = np.asarray(psi, dtype=float)
    cost = -psi
    if forbidden is not None:
        cost = np.where(np.asarray(forbidden, dtype=bool), np.inf, cost)
    phi, _ = hungarian(cost)
    return perm_to_matrix(phi)


# ---------------------------------------------------------------------------
# Sinkhorn


def sinkhorn_knopp(M, iters: int = SINKHORN_ITERS) -> DoublyStochastic:
    """Alternate exact row then column normalization ``iters`` times."""
    M = np.asarray(M, dtype=float)
    if iters < 1:
        raise ValueError("iters must be >= 1")
    if not (M > 0).all():
        raise NonPositiveEntry("Sinkhorn-Knopp needs strictly positive entries")
    X = M
    for _ in range(iters):
        X = X / X.sum(axis=-1, keepdims=True)
        X = X / X.sum(axis=-2, keepdims=True)
    return DoublyStochastic(X, sum_deviation(X))


def sinkhorn_with_grad(M: np.ndarray, iters: int = SINKHORN_ITERS):
    """Sinkhorn forward pass plus a closure for reverse-mode gradients.

    The returned ``backward(g)`` maps dL/dX to dL/dM through the unrolled
    normalizations.
    """
    M = np.asarray(M, dtype=float)
    if not (M > 0).all():
        raise NonPositiveEntry("Sinkhorn-Knopp needs strictly positive entries")
    tape = []
    X = M
    for _ in range(iters):
        r = X.sum(axis=1, keepdims=True)
        X = X / r
        tape.append((1, r, X))
        c = X.sum(axis=0, keepdims=True)
        X = X / c
        tape.append((0, c, X))

    def backward(g):
        g = np.asarray(g, dtype=float)
        for axis, s, out in reversed(tape):
            g = (g - (g * out).sum(axis=axis, keepdims=True)) / s
        return g

    return X, backward


# ---------------------------------------------------------------------------
# enumeration and distances between pmfs


def enumerate_permutations(n: int) -> list:
    """All ``n!`` permutations of ``range(n)`` in lexicographic order."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if n > MAX_ENUMERATION:
        raise DimensionTooLarge(f"enumeration capped at N={MAX_ENUMERATION}, got {n}")
    return list(itertools.permutations(range(n)))


def brute_force_assignment(cost) -> tuple[tuple, float]:
    """Exhaustive minimum over all permutations, for small N only."""
    cost = np.asarray(cost, dtype=float)
    n = cost.shape[0]
    perms = np.array(enumerate_permutations(n))
    totals = cost[np.arange(n), perms].sum(axis=1)
    k = int(np.argmin(totals))
    if not np.isfinite(totals[k]):
        raise InfeasibleMatching("no finite-cost perfect matching exists")
    return tuple(int(i) for i in perms[k]), float(totals[k])


@dataclass
class PosteriorHistogram:
    """Probability mass function on a finite set of permutations."""

    support: list
    mass: np.ndarray
    _index: dict = field(init=False, repr=False)

    def __post_init__(self):
        self.support = [tuple(int(i) for i in s) for s in self.support]
        self.mass = np.asarray(self.mass, dtype=float)
        if len(self.support) != len(self.mass):
            raise ValueError("support and mass lengths differ")
        if (self.mass < 0).any():
            raise ValueError("masses must be nonnegative")
        if abs(self.mass.sum() - 1.0) > 1e-12:
            raise ValueError(f"masses sum to {self.mass.sum()!r}, not 1")
        self._index = {s: i for i, s in enumerate(self.support)}
        if len(self._index) != len(self.support):
            raise ValueError("support entries must be distinct")

    @classmethod
    def from_weights(cls, support, weights):
        w = np.asarray(weights, dtype=float)
        return cls(list(support), w / w.sum())

    @classmethod
    def from_log_weights(cls, support, log_weights):
        lw = np.asarray(log_weights, dtype=float)
        w = np.exp(lw - lw.max())
        return cls(list(support), w / w.sum())

    @classmethod
    def from_samples(cls, samples):
        counts: dict = {}
        for s in samples:
            key = tuple(int(i) for i in s)
            counts[key] = counts.get(key, 0) + 1
        support = sorted(counts)
        w = np.array([counts[s] for s in support], dtype=float)
        return cls(support, w / w.sum())

    def prob(self, phi) -> float:
        i = self._index.get(tuple(phi))
        return 0.0 if i is None else float(self.mass[i])

    def top(self, k: int = 10) -> list:
        """Top-``k`` (permutation, mass) pairs plus an ``"rest"`` bucket."""
        order = np.argsort(-self.mass, kind="stable")
        head = [(self.support[i], float(self.mass[i])) for i in order[:k]]
        rest = float(self.mass[order[k:]].sum())
        return head + [("rest", rest)]


def bhattacharyya_coefficient(p: PosteriorHistogram, q: PosteriorHistogram) -> float:
    if len(q.support) < len(p.support):
        p, q = q, p
    total = math.fsum(math.sqrt(m * q.prob(s)) for s, m in zip(p.support, p.mass))
    return min(total, 1.0)


def bhattacharyya(p: PosteriorHistogram, q: PosteriorHistogram) -> float:
    """Bhattacharyya distance ``-ln sum sqrt(p q)``; ``inf`` for disjoint supports."""
    bc = bhattacharyya_coefficient(p, q)
    return math.inf if bc == 0.0 else -math.log(bc)


def bhattacharyya_hellinger(p: PosteriorHistogram, q: PosteriorHistogram) -> float:
    """Bounded form ``sqrt(1 - sum sqrt(p q))`` of the Bhattacharyya distance.

    This is the variant reported by histogram-comparison tools (and the
    scale on which the matching benchmark numbers live); it lies in [0, 1].
    """
    return math.sqrt(max(0.0, 1.0 - bhattacharyya_coefficient(p, q)))
