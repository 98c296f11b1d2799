"""
Optimal Design Solver for Interpretable Bandit Bench
Approximate D-optimal designs over finite action sets with integer rounding
"""

import logging
import math
from dataclasses import dataclass, field
from typing import List, Tuple

import numpy as np
import scipy.linalg

from config import Config
from errors import InputError

logger = logging.getLogger(__name__)

RANK_TOL = 1e-10


@dataclass
class Design:
    """Distribution over actions with its G-value certificate"""

    support: List[Tuple[int, float]]
    g_value: float
    effective_dim: int
    logdet: float = 0.0
    # log det M(pi) after every Frank-Wolfe step
    trace: List[float] = field(default_factory=list)

    @property
    def indices(self) -> np.ndarray:
        return np.array([i for i, _ in self.support], dtype=int)

    @property
    def weights(self) -> np.ndarray:
        return np.array([w for _, w in self.support], dtype=float)


def _span_coordinates(actions: np.ndarray) -> np.ndarray:
    """Coordinates of the actions in an orthonormal basis of their span"""
    q, r, _ = scipy.linalg.qr(actions.T, mode="economic", pivoting=True)
    diag = np.abs(np.diag(r))
    if diag.size == 0 or diag[0] == 0.0:
        return np.zeros((actions.shape[0], 0))
    rank = int(np.sum(diag > RANK_TOL * diag[0]))
    return actions @ q[:, :rank]


def _spanning_subset(z: np.ndarray) -> List[int]:
    """Greedy volume maximisation: repeatedly take the largest residual"""
    residual = z.copy()
    chosen: List[int] = []
    for _ in range(z.shape[1]):
        norms = np.einsum("ij,ij->i", residual, residual)
        norms[chosen] = -1.0
        k = int(np.argmax(norms))
        chosen.append(k)
        direction = residual[k] / math.sqrt(norms[k])
        residual = residual - np.outer(residual @ direction, direction)
    return sorted(chosen)


def _g_values(z: np.ndarray, weights: np.ndarray) -> Tuple[np.ndarray, float]:
    moment = (z * weights[:, None]).T @ z
    sign, logdet = np.linalg.slogdet(moment)
    inv = np.linalg.inv(moment)
    return np.einsum("ij,jk,ik->i", z, inv, z), float(logdet) if sign > 0 else -math.inf


def d_optimal_design(actions, tol: float = 0.01, max_iter: int = None) -> Design:
    """
    Frank-Wolfe (Fedorov-Wynn) ascent on log det M(pi) with exact line search.
    Stops once max_a ||a||^2_{M(pi)^-1} <= (1 + tol) * rank.
    """
    actions = np.atleast_2d(np.asarray(actions, dtype=float))
    if actions.shape[0] < 1:
        raise InputError("need at least one action")
    if tol <= 0:
        raise InputError(f"tolerance must be positive, got {tol}")
    if not np.any(actions):
        raise InputError("all actions are zero; no design exists")
    max_iter = Config.DESIGN_MAX_ITER if max_iter is None else max_iter

    z = _span_coordinates(actions)
    r = z.shape[1]
    K = z.shape[0]

    weights = np.zeros(K)
    weights[_spanning_subset(z)] = 1.0 / r

    g, logdet = _g_values(z, weights)
    trace = [logdet]
    target = (1.0 + tol) * r

    iterations = 0
    while True:
        k = int(np.argmax(g))
        g_max = float(g[k])
        if g_max <= target:
            break
        if iterations >= max_iter:
            logger.warning(
                "Design solver hit %d iterations with g=%.6f > %.6f; relaxing tolerance",
                max_iter, g_max, target
            )
            break
        step = (g_max / r - 1.0) / (g_max - 1.0)
        weights *= 1.0 - step
        weights[k] += step
        g, logdet = _g_values(z, weights)
        trace.append(logdet)
        iterations += 1

    keep = weights >= Config.DESIGN_PRUNE_WEIGHT
    weights = np.where(keep, weights, 0.0)
    weights /= weights.sum()
    g, logdet = _g_values(z, weights)

    support = [(int(i), float(weights[i])) for i in np.flatnonzero(weights)]
    limit = r * (r + 1) // 2 + 1
    if len(support) > limit:
        logger.warning("Design support has %d points, above the %d-point bound", len(support), limit)

    design = Design(
        support=support,
        g_value=float(np.max(g)),
        effective_dim=r,
        logdet=logdet,
        trace=trace,
    )
    logger.debug("D-optimal design: %d iterations, g=%.4f, rank=%d", iterations, design.g_value, r)
    return design


def round_allocation(design: Design, m: int) -> np.ndarray:
    """
    Integer pull counts aligned with design.support, summing to m.
    Ceiling rounding, then excess trimmed from the largest allocations.
    """
    weights = design.weights
    k = weights.shape[0]
    if m < k:
        raise InputError(f"need at least {k} pulls to cover the support, got {m}")

    counts = np.maximum(np.ceil(weights * m - 1e-9), 1).astype(int)
    excess = int(counts.sum()) - m
    while excess > 0:
        # largest allocation first, lowest position on ties
        trimmable = np.where(counts > 1, counts, -1)
        j = int(np.argmax(trimmable))
        counts[j] -= 1
        excess -= 1
    return counts
