"""
Metrics for Interpretable Bandit Bench
Cumulative regret, cumulative model uncertainty and per-round lemma monitors
"""

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from envs import Environment, RoundContext
from errors import InvariantViolation

logger = logging.getLogger(__name__)


def instant_regret(env: Environment, context: RoundContext, chosen: int) -> float:
    """Gap between the best action of this round's context and the chosen one"""
    values = context.actions @ env.theta_star
    return max(float(np.max(values) - values[chosen]), 0.0)


def model_uncertainty(theta_hat: np.ndarray, theta_star: np.ndarray, plausible: np.ndarray) -> float:
    """max over plausible actions of (a^T (theta_hat - theta*))^2"""
    plausible = np.atleast_2d(plausible)
    if plausible.shape[0] == 0:
        raise InvariantViolation("model uncertainty needs a non-empty plausible set")
    errors = plausible @ (np.asarray(theta_hat) - np.asarray(theta_star))
    return float(np.max(errors ** 2))


@dataclass
class MetricsAccumulator:
    """Running R_n and Q_n with an optional per-round trace"""

    regret_cum: float = 0.0
    q_cum: float = 0.0
    rounds: int = 0
    keep_trace: bool = False
    # (round, instantaneous regret, instantaneous uncertainty)
    per_round: List[Tuple[int, float, float]] = field(default_factory=list)

    def record(self, regret: float, uncertainty: float):
        if regret < 0 or uncertainty < 0:
            raise InvariantViolation(
                f"negative increment in round {self.rounds + 1}: regret={regret}, q={uncertainty}"
            )
        self.regret_cum += regret
        self.q_cum += uncertainty
        self.rounds += 1
        if self.keep_trace:
            self.per_round.append((self.rounds, regret, uncertainty))

    def cumulative_trace(self) -> List[Tuple[int, float, float]]:
        """(round, R_t, Q_t) for every traced round, summed in recording order"""
        if not self.keep_trace:
            raise InvariantViolation("per-round trace was not kept")
        regret_cum = q_cum = 0.0
        rows = []
        for t, regret, uncertainty in self.per_round:
            regret_cum += regret
            q_cum += uncertainty
            rows.append((t, regret_cum, q_cum))
        return rows


@dataclass
class KArmedLemmaMonitor:
    """
    Checks, in rounds where every confidence interval covers its mean:
    mu(a*) - mu(A_t) <= 2 c(A_t) + 2 c(a*), and c(A_t) >= c(a*) when a* is
    plausible and every arm has been pulled.
    """

    means: np.ndarray
    strict: bool = True
    covered_rounds: int = 0
    regret_violations: int = 0
    width_violations: int = 0

    @property
    def optimal(self) -> int:
        return int(np.argmax(self.means))

    def check(self, mean_est: np.ndarray, widths: np.ndarray, plausible: np.ndarray, chosen: int,
              round_index: Optional[int] = None):
        pulled = np.isfinite(widths)
        if not np.all(np.abs(mean_est[pulled] - self.means[pulled]) <= widths[pulled]):
            return
        self.covered_rounds += 1
        star = self.optimal

        gap = self.means[star] - self.means[chosen]
        if gap > 2.0 * widths[chosen] + 2.0 * widths[star] + 1e-12:
            self.regret_violations += 1
            self._fail("per-round regret", round_index)

        if np.all(pulled) and star in plausible and widths[chosen] < widths[star] - 1e-12:
            self.width_violations += 1
            self._fail("optimal-action width dominance", round_index)

    def _fail(self, what: str, round_index: Optional[int]):
        logger.error("Lemma check failed: %s in round %s", what, round_index)
        if self.strict:
            raise InvariantViolation(f"{what} violated in round {round_index}")
