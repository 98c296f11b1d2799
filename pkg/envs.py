"""
Bandit Environments for Interpretable Bandit Bench
K-armed, fixed-action linear and changing-action linear ground truths
"""

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Optional, Sequence

import numpy as np

from errors import InputError

logger = logging.getLogger(__name__)


class EnvKind(str, Enum):
    K_ARMED = "k_armed"
    LINEAR_FIXED = "linear_fixed"
    LINEAR_CHANGING = "linear_changing"


@dataclass(frozen=True)
class Environment:
    """Immutable ground truth of one bandit problem"""

    kind: EnvKind
    theta_star: np.ndarray
    sigma: float
    L: float
    n_actions: int
    # K x d pool for the fixed kinds, None when actions are resampled each round
    action_pool: Optional[np.ndarray] = None

    @property
    def dim(self) -> int:
        return int(self.theta_star.shape[0])

    @property
    def is_changing(self) -> bool:
        return self.kind == EnvKind.LINEAR_CHANGING

    @property
    def optimal_index(self) -> Optional[int]:
        """argmax_a <a, theta*> over the fixed pool, lowest index on ties"""
        if self.action_pool is None:
            return None
        return int(np.argmax(self.action_pool @ self.theta_star))

    @property
    def means(self) -> Optional[np.ndarray]:
        """Mean reward of each pool action"""
        if self.action_pool is None:
            return None
        return self.action_pool @ self.theta_star


@dataclass(frozen=True)
class RoundContext:
    """Action set offered in round t (rows are actions, row index is identity)"""

    t: int
    actions: np.ndarray

    def __len__(self) -> int:
        return int(self.actions.shape[0])


def gen_synthetic_linear(
    d: int,
    K: int,
    sigma: float,
    rng: np.random.Generator,
    changing: bool = False
) -> Environment:
    """
    theta* ~ N(0, I_d), actions uniform on [-1, 1]^d.
    The changing kind draws only theta* here; actions come from next_round.
    """
    if d < 1:
        raise InputError(f"dimension must be at least 1, got {d}")
    if K < 2:
        raise InputError(f"need at least 2 actions, got {K}")
    if sigma < 0:
        raise InputError(f"noise scale must be non-negative, got {sigma}")

    theta_star = rng.standard_normal(d)
    bound = float(np.sqrt(d))

    if changing:
        return Environment(
            kind=EnvKind.LINEAR_CHANGING,
            theta_star=theta_star,
            sigma=float(sigma),
            L=bound,
            n_actions=K,
        )

    pool = rng.uniform(-1.0, 1.0, size=(K, d))
    return Environment(
        kind=EnvKind.LINEAR_FIXED,
        theta_star=theta_star,
        sigma=float(sigma),
        L=bound,
        n_actions=K,
        action_pool=pool,
    )


def gap_means(K: int, gap: float) -> np.ndarray:
    """mu = (0.5 + gap/2, 0.5 - gap/2, ..., 0.5 - gap/2)"""
    if K < 2:
        raise InputError(f"need at least 2 arms, got {K}")
    if not 0.0 < gap <= 1.0:
        raise InputError(f"gap must lie in (0, 1], got {gap}")
    means = np.full(K, 0.5 - gap / 2.0)
    means[0] = 0.5 + gap / 2.0
    return means


def gen_k_armed(means: Sequence[float], sigma: float) -> Environment:
    """K-armed bandit with orthonormal basis actions e_1..e_K"""
    means = np.asarray(means, dtype=float)
    if means.ndim != 1 or means.shape[0] < 2:
        raise InputError("need a vector of at least 2 arm means")
    if np.any(means < 0.0) or np.any(means > 1.0):
        raise InputError("arm means must lie in [0, 1]")
    if sigma < 0:
        raise InputError(f"noise scale must be non-negative, got {sigma}")

    K = means.shape[0]
    return Environment(
        kind=EnvKind.K_ARMED,
        theta_star=means.copy(),
        sigma=float(sigma),
        L=1.0,
        n_actions=K,
        action_pool=np.eye(K),
    )


def next_round(env: Environment, t: int, rng: np.random.Generator) -> RoundContext:
    """Action set for round t; resampled i.i.d. for the changing kind"""
    if t < 1:
        raise InputError(f"rounds are 1-based, got {t}")
    if env.is_changing:
        actions = rng.uniform(-1.0, 1.0, size=(env.n_actions, env.dim))
        return RoundContext(t=t, actions=actions)
    return RoundContext(t=t, actions=env.action_pool)


def sample_reward(env: Environment, a: np.ndarray, rng: np.random.Generator) -> float:
    """<a, theta*> plus N(0, sigma^2) noise; one normal draw per call"""
    noise = rng.standard_normal()
    return float(np.dot(a, env.theta_star) + env.sigma * noise)
