"""
Bandit Policies for Interpretable Bandit Bench
CODE (K-armed and linear) and the LinUCB, LinTS, epsilon-greedy, ETC and
phased-elimination baselines behind one observe/select/ingest interface
"""

import logging
import math
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

import numpy as np

from design_solver import d_optimal_design, round_allocation
from envs import EnvKind, Environment, RoundContext
from errors import ConfigError, InvariantViolation, StructuralError
from linalg import (
    DesignMatrix,
    EllipsoidWidth,
    ParameterEstimate,
    ellipsoid_width,
    mahalanobis_sq_batch,
    rank_one_update,
    ridge_fit,
    symmetric_factor,
)

logger = logging.getLogger(__name__)


class Algorithm(str, Enum):
    CODE = "code"
    CODE_KARMED = "code_karmed"
    LINUCB = "linucb"
    LINTS = "lints"
    EGREEDY = "egreedy"
    ETC = "etc"
    PHASED_ELIM = "phased_elim"


@dataclass(frozen=True)
class PolicyConfig:
    """Per-algorithm settings; defaults follow the synthetic linear experiment"""

    algorithm: Algorithm
    delta: float = 0.05
    # ridge regulariser of the design matrix V
    lam: float = 1.0
    # lambda inside the ellipsoid width; None means lam
    width_lam: Optional[float] = None
    L: float = 1.0
    S: float = 0.0
    # sub-Gaussian scale; None means the environment's sigma
    R: Optional[float] = None
    epsilon: float = 0.05
    ts_scale: float = 1.0
    horizon: int = 10_000
    seed: int = 0
    calibrated_delta: bool = False
    freeze: bool = False
    # use S = ||theta*|| of the drawn environment instead of S
    s_from_theta: bool = False
    label: Optional[str] = None

    def __post_init__(self):
        if not isinstance(self.algorithm, Algorithm):
            try:
                object.__setattr__(self, "algorithm", Algorithm(self.algorithm))
            except ValueError:
                known = ", ".join(a.value for a in Algorithm)
                raise ConfigError(f"unknown algorithm {self.algorithm!r} (known: {known})")
        if not 0.0 < self.delta < 1.0:
            raise ConfigError(f"delta must lie in (0, 1), got {self.delta}")
        if not 0.0 <= self.epsilon <= 1.0:
            raise ConfigError(f"epsilon must lie in [0, 1], got {self.epsilon}")
        if self.lam <= 0:
            raise ConfigError(f"lambda must be positive, got {self.lam}")
        if self.width_lam is not None and self.width_lam <= 0:
            raise ConfigError(f"width_lambda must be positive, got {self.width_lam}")
        if self.L < 0 or self.S < 0 or (self.R is not None and self.R < 0):
            raise ConfigError("L, S and R must be non-negative")
        if self.ts_scale < 0:
            raise ConfigError(f"ts_scale must be non-negative, got {self.ts_scale}")
        if self.horizon < 1:
            raise ConfigError(f"horizon must be at least 1, got {self.horizon}")

    @property
    def name(self) -> str:
        return self.label or self.algorithm.value

    @property
    def confidence_lam(self) -> float:
        return self.lam if self.width_lam is None else self.width_lam


@dataclass
class ConfidenceView:
    """Per-action upper and lower confidence bounds for one round"""

    ucb: np.ndarray
    lcb: np.ndarray
    norms_sq: Optional[np.ndarray] = None


def plausible_set(context: RoundContext, conf: ConfidenceView) -> np.ndarray:
    """Indices whose UCB reaches the largest LCB of the round"""
    if conf.ucb.shape[0] != len(context):
        raise StructuralError("confidence view does not match the context size")
    members = np.flatnonzero(conf.ucb >= np.max(conf.lcb))
    if members.size == 0:
        raise InvariantViolation(f"empty plausible set in round {context.t}")
    return members


# K-armed


@dataclass
class KArmedState:
    """Pull counts and empirical means of a K-armed learner"""

    pulls: np.ndarray
    sums: np.ndarray
    delta: float
    t: int = 1

    @classmethod
    def create(cls, K: int, delta: float) -> "KArmedState":
        return cls(pulls=np.zeros(K, dtype=int), sums=np.zeros(K), delta=delta)

    @property
    def mean_est(self) -> np.ndarray:
        """Empirical means, NaN for unpulled arms"""
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(self.pulls > 0, self.sums / np.maximum(self.pulls, 1), np.nan)

    def widths(self) -> np.ndarray:
        """c_t(a) = sqrt(2 log(1/delta) / T_t(a)), infinite before the first pull"""
        scale = 2.0 * math.log(1.0 / self.delta)
        with np.errstate(divide="ignore"):
            return np.where(self.pulls > 0, np.sqrt(scale / np.maximum(self.pulls, 1)), np.inf)

    def update(self, arm: int, reward: float):
        self.pulls[arm] += 1
        self.sums[arm] += reward
        self.t += 1


def karmed_confidence(state: KArmedState) -> ConfidenceView:
    widths = state.widths()
    pulled = state.pulls > 0
    means = np.where(pulled, state.mean_est, 0.0)
    ucb = np.where(pulled, means + widths, np.inf)
    lcb = np.where(pulled, means - widths, -np.inf)
    return ConfidenceView(ucb=ucb, lcb=lcb)


def code_select_karmed(state: KArmedState, context: RoundContext) -> int:
    """Least-pulled plausible arm; unpulled arms first, lowest index on ties"""
    if len(context) != state.pulls.shape[0]:
        raise StructuralError("context size does not match the number of arms")
    unpulled = np.flatnonzero(state.pulls == 0)
    if unpulled.size:
        return int(unpulled[0])
    members = plausible_set(context, karmed_confidence(state))
    return int(members[np.argmin(state.pulls[members])])


# Linear


@dataclass
class LinearState:
    """Design matrix, response sum and ridge estimate of a linear learner"""

    design: DesignMatrix
    xty: np.ndarray
    estimate: ParameterEstimate
    width_cfg: EllipsoidWidth

    @classmethod
    def create(cls, width_cfg: EllipsoidWidth, lam: Optional[float] = None) -> "LinearState":
        """Start from lam*I; lam defaults to the width's lambda"""
        design = DesignMatrix.identity(width_cfg.d, width_cfg.lam if lam is None else lam)
        xty = np.zeros(width_cfg.d)
        return cls(design=design, xty=xty, estimate=ridge_fit(xty, design), width_cfg=width_cfg)

    @property
    def theta_hat(self) -> np.ndarray:
        return self.estimate.theta_hat

    def width(self) -> float:
        return ellipsoid_width(self.width_cfg, self.design.count)

    def refresh(self) -> ParameterEstimate:
        self.estimate = ridge_fit(self.xty, self.design)
        return self.estimate

    def update(self, a: np.ndarray, reward: float):
        rank_one_update(self.design, a, inplace=True)
        self.xty += reward * a
        self.refresh()


def linear_confidence(state: LinearState, context: RoundContext) -> ConfidenceView:
    norms_sq = mahalanobis_sq_batch(state.design, context.actions)
    means = context.actions @ state.theta_hat
    radius = state.width() * np.sqrt(norms_sq)
    return ConfidenceView(ucb=means + radius, lcb=means - radius, norms_sq=norms_sq)


def greedy_index(state: LinearState, context: RoundContext) -> int:
    return int(np.argmax(context.actions @ state.theta_hat))


def code_select_linear(state: LinearState, context: RoundContext) -> int:
    """Plausible action with the largest log-det gain, lowest index on ties"""
    view = linear_confidence(state, context)
    members = plausible_set(context, view)
    return int(members[np.argmax(view.norms_sq[members])])


def linucb_select(state: LinearState, context: RoundContext) -> int:
    return int(np.argmax(linear_confidence(state, context).ucb))


def lints_select(state: LinearState, context: RoundContext, rng: np.random.Generator,
                 ts_scale: float = 1.0) -> int:
    """Greedy action under theta ~ N(theta_hat, ts_scale^2 V^-1)"""
    noise = rng.standard_normal(state.design.dim)
    factor = symmetric_factor(state.design)
    if factor is None:
        raise InvariantViolation("inverse design matrix is not positive definite")
    sample = state.theta_hat + ts_scale * (factor @ noise)
    return int(np.argmax(context.actions @ sample))


def egreedy_explores(t: int, n: int, epsilon: float, rng: np.random.Generator) -> bool:
    """Coin flip with probability min(1, epsilon * sqrt(n / t) / 2)"""
    probability = min(1.0, epsilon * math.sqrt(n / t) / 2.0)
    return bool(rng.random() < probability)


def egreedy_select(state: LinearState, context: RoundContext, t: int, n: int,
                   epsilon: float, rng: np.random.Generator) -> int:
    if egreedy_explores(t, n, epsilon, rng):
        return int(rng.integers(len(context)))
    return greedy_index(state, context)


def etc_commit_round(n: int, epsilon: float) -> int:
    """Last exploration round, ceil(epsilon * n)"""
    return max(0, math.ceil(epsilon * n - 1e-9))


def etc_select(state: LinearState, context: RoundContext, t: int, n: int,
               epsilon: float, rng: np.random.Generator) -> int:
    if t <= etc_commit_round(n, epsilon):
        return int(rng.integers(len(context)))
    return greedy_index(state, context)


# Phased elimination


@dataclass
class PhasedElimState:
    """Phase bookkeeping of the phased-elimination baseline"""

    pool: np.ndarray
    delta: float
    survivors: np.ndarray
    phase_length: int
    phase: int = 1
    schedule: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    position: int = 0
    phase_gram: Optional[np.ndarray] = None
    phase_xty: Optional[np.ndarray] = None
    phase_estimate: Optional[np.ndarray] = None

    @classmethod
    def create(cls, pool: np.ndarray, delta: float) -> "PhasedElimState":
        K, d = pool.shape
        initial = max(d * (d + 1) // 2, math.ceil(4 * d * math.log(1.0 / delta)))
        state = cls(
            pool=pool,
            delta=delta,
            survivors=np.arange(K),
            phase_length=initial,
        )
        start_phase(state)
        return state

    @property
    def eps_ell(self) -> float:
        return 2.0 ** (-self.phase)

    @property
    def phase_budget(self) -> int:
        return int(self.schedule.shape[0] - self.position)


def start_phase(state: PhasedElimState):
    """Compute the phase design over the survivors and lay out its pulls"""
    d = state.pool.shape[1]
    state.position = 0
    state.phase_gram = np.zeros((d, d))
    state.phase_xty = np.zeros(d)

    if state.survivors.shape[0] == 1:
        state.schedule = state.survivors.copy()
        return

    design = d_optimal_design(state.pool[state.survivors])
    counts = round_allocation(design, max(state.phase_length, len(design.support)))
    state.schedule = np.repeat(state.survivors[design.indices], counts)
    logger.debug(
        "Phase %d: %d survivors, %d pulls over %d support points",
        state.phase, state.survivors.shape[0], state.schedule.shape[0], len(design.support)
    )


def end_phase(state: PhasedElimState):
    """Fit on this phase's data only, drop clearly sub-optimal survivors, quadruple"""
    gram, xty = state.phase_gram, state.phase_xty
    if np.linalg.matrix_rank(gram) == gram.shape[0]:
        theta = np.linalg.solve(gram, xty)
    else:
        theta = np.linalg.lstsq(gram, xty, rcond=None)[0]
    state.phase_estimate = theta

    if state.survivors.shape[0] > 1:
        values = state.pool[state.survivors] @ theta
        gaps = np.max(values) - values
        state.survivors = state.survivors[gaps < 2.0 * state.eps_ell]

    state.phase += 1
    state.phase_length *= 4
    start_phase(state)


def phased_elim_step(state: PhasedElimState, context: RoundContext) -> int:
    """Next scheduled pull of the current phase"""
    if context.actions is not state.pool and not np.array_equal(context.actions, state.pool):
        raise ConfigError("phased elimination needs a fixed action set")
    if state.survivors.shape[0] == 1:
        return int(state.survivors[0])
    return int(state.schedule[state.position])


def phased_elim_observe(state: PhasedElimState, a: np.ndarray, reward: float):
    if state.survivors.shape[0] == 1:
        return
    state.phase_gram += np.outer(a, a)
    state.phase_xty += reward * a
    state.position += 1
    if state.position >= state.schedule.shape[0]:
        end_phase(state)


# Sequential-decision interface


class Policy(ABC):
    """observe context -> select action -> ingest reward"""

    def __init__(self, cfg: PolicyConfig, env: Environment, rng: np.random.Generator):
        self.cfg = cfg
        self.env = env
        self.rng = rng
        self.horizon = cfg.horizon

    @property
    def name(self) -> str:
        return self.cfg.name

    @abstractmethod
    def select(self, context: RoundContext) -> int:
        """Index of the chosen action within context"""

    @abstractmethod
    def observe(self, context: RoundContext, index: int, reward: float):
        """Ingest the reward of the chosen action"""

    @abstractmethod
    def plausible(self, context: RoundContext) -> np.ndarray:
        """Plausible set built from this policy's own history"""

    @abstractmethod
    def working_estimate(self) -> np.ndarray:
        """Current model estimate used for the uncertainty metric"""


class LinearPolicy(Policy):
    """Policies driven by a ridge estimate over all past observations"""

    def __init__(self, cfg: PolicyConfig, env: Environment, rng: np.random.Generator):
        super().__init__(cfg, env, rng)
        R = env.sigma if cfg.R is None else cfg.R
        S = float(np.linalg.norm(env.theta_star)) if cfg.s_from_theta else cfg.S
        self.width_cfg = EllipsoidWidth(
            delta=cfg.delta, L=cfg.L, S=S, R=R, lam=cfg.confidence_lam, d=env.dim
        )
        self.state = LinearState.create(self.width_cfg, lam=cfg.lam)

    def observe(self, context: RoundContext, index: int, reward: float):
        self.state.update(context.actions[index], reward)

    def plausible(self, context: RoundContext) -> np.ndarray:
        return plausible_set(context, linear_confidence(self.state, context))

    def working_estimate(self) -> np.ndarray:
        return self.state.theta_hat


class CodePolicy(LinearPolicy):
    def select(self, context: RoundContext) -> int:
        return code_select_linear(self.state, context)


class LinUCBPolicy(LinearPolicy):
    def select(self, context: RoundContext) -> int:
        return linucb_select(self.state, context)


class LinTSPolicy(LinearPolicy):
    def select(self, context: RoundContext) -> int:
        return lints_select(self.state, context, self.rng, self.cfg.ts_scale)


class EpsilonGreedyPolicy(LinearPolicy):
    def select(self, context: RoundContext) -> int:
        return egreedy_select(self.state, context, context.t, self.horizon, self.cfg.epsilon, self.rng)


class ExploreThenCommitPolicy(LinearPolicy):
    def select(self, context: RoundContext) -> int:
        return etc_select(self.state, context, context.t, self.horizon, self.cfg.epsilon, self.rng)

    def observe(self, context: RoundContext, index: int, reward: float):
        if self.cfg.freeze and context.t > etc_commit_round(self.horizon, self.cfg.epsilon):
            return
        super().observe(context, index, reward)


class PhasedElimPolicy(LinearPolicy):
    """Selection by phase schedule; the inherited ridge state only feeds metrics"""

    def __init__(self, cfg: PolicyConfig, env: Environment, rng: np.random.Generator):
        if env.is_changing or env.action_pool is None:
            raise ConfigError("phased elimination cannot handle changing action sets")
        super().__init__(cfg, env, rng)
        self.phases = PhasedElimState.create(env.action_pool, cfg.delta)

    def select(self, context: RoundContext) -> int:
        return phased_elim_step(self.phases, context)

    def observe(self, context: RoundContext, index: int, reward: float):
        a = context.actions[index]
        phased_elim_observe(self.phases, a, reward)
        super().observe(context, index, reward)


class CodeKArmedPolicy(Policy):
    """CODE on a K-armed bandit, driven by per-arm counts"""

    def __init__(self, cfg: PolicyConfig, env: Environment, rng: np.random.Generator):
        if env.kind != EnvKind.K_ARMED:
            raise ConfigError("code_karmed needs a k_armed environment")
        super().__init__(cfg, env, rng)
        delta = cfg.delta
        if cfg.calibrated_delta:
            delta = cfg.delta / (2.0 * env.n_actions * cfg.horizon ** 2)
        self.state = KArmedState.create(env.n_actions, delta)

    def select(self, context: RoundContext) -> int:
        return code_select_karmed(self.state, context)

    def observe(self, context: RoundContext, index: int, reward: float):
        self.state.update(index, reward)

    def plausible(self, context: RoundContext) -> np.ndarray:
        return plausible_set(context, karmed_confidence(self.state))

    def working_estimate(self) -> np.ndarray:
        return np.where(self.state.pulls > 0, self.state.mean_est, 0.0)


POLICY_CLASSES = {
    Algorithm.CODE: CodePolicy,
    Algorithm.CODE_KARMED: CodeKArmedPolicy,
    Algorithm.LINUCB: LinUCBPolicy,
    Algorithm.LINTS: LinTSPolicy,
    Algorithm.EGREEDY: EpsilonGreedyPolicy,
    Algorithm.ETC: ExploreThenCommitPolicy,
    Algorithm.PHASED_ELIM: PhasedElimPolicy,
}


def check_compatible(cfg: PolicyConfig, kind: EnvKind):
    """Reject algorithm/environment pairs before any simulation"""
    if cfg.algorithm == Algorithm.PHASED_ELIM and kind == EnvKind.LINEAR_CHANGING:
        raise ConfigError(f"{cfg.name}: phased elimination cannot handle changing action sets")
    if cfg.algorithm == Algorithm.CODE_KARMED and kind != EnvKind.K_ARMED:
        raise ConfigError(f"{cfg.name}: code_karmed needs a k_armed environment")


def build_policy(cfg: PolicyConfig, env: Environment, rng: np.random.Generator) -> Policy:
    check_compatible(cfg, env.kind)
    return POLICY_CLASSES[cfg.algorithm](cfg, env, rng)
