"""
Linear Algebra for Interpretable Bandit Bench
Design-matrix maintenance, ridge estimates and confidence-ellipsoid widths
"""

import copy
import logging
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.linalg

from config import Config
from errors import ConfigError, InputError, RankDeficiencyError, StructuralError

logger = logging.getLogger(__name__)


@dataclass
class DesignMatrix:
    """V = lam*I + sum of absorbed a a^T, with cached inverse and log-determinant"""

    dim: int
    lam: float
    matrix: np.ndarray
    inverse: np.ndarray
    logdet: float
    count: int = 0
    # running sum of ||a||^2_{V^-1} taken before each absorption
    potential: float = 0.0
    since_refresh: int = 0

    @classmethod
    def identity(cls, dim: int, lam: float) -> "DesignMatrix":
        """Regularised starting design lam*I"""
        if dim < 1:
            raise StructuralError(f"dimension must be positive, got {dim}")
        if lam < 0:
            raise InputError(f"regulariser must be non-negative, got {lam}")
        if lam == 0:
            raise RankDeficiencyError("lam = 0 gives a singular starting design")
        return cls(
            dim=dim,
            lam=float(lam),
            matrix=lam * np.eye(dim),
            inverse=np.eye(dim) / lam,
            logdet=dim * math.log(lam),
        )

    @classmethod
    def from_actions(cls, actions: np.ndarray, lam: float) -> "DesignMatrix":
        """Dense construction from a batch of actions"""
        actions = np.atleast_2d(np.asarray(actions, dtype=float))
        dim = actions.shape[1]
        if lam < 0:
            raise InputError(f"regulariser must be non-negative, got {lam}")
        design = cls(
            dim=dim,
            lam=float(lam),
            matrix=lam * np.eye(dim) + actions.T @ actions,
            inverse=np.eye(dim),
            logdet=0.0,
            count=actions.shape[0],
        )
        refresh(design)
        return design

    def copy(self) -> "DesignMatrix":
        return copy.deepcopy(self)


@dataclass
class ParameterEstimate:
    """Ridge estimate theta_hat = V^-1 xty"""

    theta_hat: np.ndarray
    design: DesignMatrix
    xty: np.ndarray


@dataclass(frozen=True)
class EllipsoidWidth:
    """Inputs of the confidence-ellipsoid radius"""

    delta: float
    L: float
    S: float
    R: float
    lam: float
    d: int

    def __post_init__(self):
        if not 0.0 < self.delta < 1.0:
            raise ConfigError(f"delta must lie in (0, 1), got {self.delta}")
        if self.lam <= 0:
            raise ConfigError(f"lambda must be positive for the ellipsoid width, got {self.lam}")
        if self.L < 0 or self.S < 0 or self.R < 0:
            raise ConfigError("L, S and R must be non-negative")
        if self.d < 1:
            raise ConfigError(f"dimension must be positive, got {self.d}")


def _as_vector(design: DesignMatrix, a) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    if a.ndim != 1 or a.shape[0] != design.dim:
        raise StructuralError(f"expected a vector of length {design.dim}, got shape {a.shape}")
    return a


def refresh(design: DesignMatrix) -> DesignMatrix:
    """Recompute inverse and log-determinant from a Cholesky factorization (in place)"""
    design.matrix = 0.5 * (design.matrix + design.matrix.T)
    try:
        factor = scipy.linalg.cho_factor(design.matrix, lower=True, check_finite=False)
    except np.linalg.LinAlgError:
        raise RankDeficiencyError("design matrix is not positive definite")
    design.inverse = scipy.linalg.cho_solve(factor, np.eye(design.dim), check_finite=False)
    design.inverse = 0.5 * (design.inverse + design.inverse.T)
    design.logdet = float(2.0 * np.sum(np.log(np.diag(factor[0]))))
    design.since_refresh = 0
    return design


def inverse_drift(design: DesignMatrix) -> float:
    """Max-norm deviation of inverse @ matrix from the identity"""
    return float(np.max(np.abs(design.inverse @ design.matrix - np.eye(design.dim))))


def rank_one_update(design: DesignMatrix, a, inplace: bool = False) -> DesignMatrix:
    """Absorb one action: V <- V + a a^T via the Sherman-Morrison identity"""
    a = _as_vector(design, a)
    if not np.all(np.isfinite(a)):
        raise InputError("action contains non-finite entries")

    target = design if inplace else design.copy()
    v_inv_a = target.inverse @ a
    m = max(float(a @ v_inv_a), 0.0)

    target.matrix = target.matrix + np.outer(a, a)
    target.inverse = target.inverse - np.outer(v_inv_a, v_inv_a) / (1.0 + m)
    target.logdet += math.log1p(m)
    target.potential += m
    target.count += 1
    target.since_refresh += 1

    if target.since_refresh >= Config.INVERSE_REFRESH_INTERVAL:
        refresh(target)
    else:
        drift = inverse_drift(target)
        if drift > Config.INVERSE_DRIFT_TOL:
            logger.debug("Inverse drift %.3e after %d updates, refreshing", drift, target.count)
            refresh(target)

    return target


def mahalanobis_sq(design: DesignMatrix, a) -> float:
    """||a||^2 in the V^-1 norm"""
    a = _as_vector(design, a)
    if not np.any(a):
        return 0.0
    return max(float(a @ design.inverse @ a), 0.0)


def mahalanobis_sq_batch(design: DesignMatrix, actions: np.ndarray) -> np.ndarray:
    """Row-wise ||a||^2_{V^-1} for a K x d action matrix"""
    actions = np.atleast_2d(np.asarray(actions, dtype=float))
    if actions.shape[1] != design.dim:
        raise StructuralError(f"expected actions with {design.dim} columns, got {actions.shape[1]}")
    values = np.einsum("ij,jk,ik->i", actions, design.inverse, actions)
    return np.maximum(values, 0.0)


def logdet_gain(design: DesignMatrix, a) -> float:
    """log det(V + a a^T) - log det V"""
    return math.log1p(mahalanobis_sq(design, a))


def ridge_fit(xty, design: DesignMatrix) -> ParameterEstimate:
    """Regularised least-squares estimate against the given design"""
    xty = _as_vector(design, xty)
    if design.lam <= 0:
        rank = np.linalg.matrix_rank(design.matrix)
        if rank < design.dim:
            raise RankDeficiencyError(f"design has rank {rank} < {design.dim} and no regulariser")
    return ParameterEstimate(theta_hat=design.inverse @ xty, design=design, xty=xty.copy())


def ellipsoid_width(cfg: EllipsoidWidth, t: int) -> float:
    """Radius of the confidence ellipsoid after t observations"""
    if t < 0:
        raise InputError(f"round index must be non-negative, got {t}")
    log_term = math.log((1.0 + t * cfg.L ** 2 / cfg.lam) / cfg.delta)
    return cfg.R * math.sqrt(cfg.d * log_term) + math.sqrt(cfg.lam) * cfg.S


def elliptical_potential_bound(d: int, n: int, L: float, lam: float) -> float:
    """Upper bound on sum_t ||A_t||^2_{V_t^-1}, valid when lam >= L^2"""
    return 2.0 * d * math.log(d + n * L ** 2 / lam)


def ellipsoid_contains(estimate: ParameterEstimate, theta, width: float) -> bool:
    """Whether theta lies within width of theta_hat in the V norm"""
    diff = estimate.theta_hat - np.asarray(theta, dtype=float)
    return float(diff @ estimate.design.matrix @ diff) <= width ** 2


def symmetric_factor(design: DesignMatrix, lower: bool = True) -> Optional[np.ndarray]:
    """Cholesky factor F with F F^T = V^-1"""
    try:
        return scipy.linalg.cholesky(design.inverse, lower=lower, check_finite=False)
    except np.linalg.LinAlgError:
        return None
