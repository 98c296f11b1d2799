import numpy as np
import pytest

from envs import RoundContext, gen_k_armed, gen_synthetic_linear, next_round
from errors import InvariantViolation
from metrics import KArmedLemmaMonitor, MetricsAccumulator, instant_regret, model_uncertainty


def test_best_action_has_no_regret(rng):
    env = gen_synthetic_linear(4, 20, 0.5, rng)
    context = next_round(env, 1, rng)
    assert instant_regret(env, context, env.optimal_index) == 0.0


def test_karmed_regret():
    env = gen_k_armed([0.9, 0.1], 1.0)
    context = RoundContext(t=1, actions=env.action_pool)
    assert instant_regret(env, context, 1) == pytest.approx(0.8)


def test_regret_uses_the_round_context(rng):
    env = gen_synthetic_linear(3, 15, 0.5, rng, changing=True)
    context = next_round(env, 4, rng)
    values = context.actions @ env.theta_star
    for chosen in range(len(context)):
        assert instant_regret(env, context, chosen) == pytest.approx(values.max() - values[chosen])


def test_exact_estimate_has_no_uncertainty(rng):
    theta = rng.normal(size=5)
    assert model_uncertainty(theta, theta, rng.normal(size=(4, 5))) == 0.0


def test_uncertainty_is_max_of_squares():
    theta_star = np.array([0.5, 0.5])
    theta_hat = theta_star + np.array([0.1, -0.2])
    assert model_uncertainty(theta_hat, theta_star, np.eye(2)) == pytest.approx(0.04)


def test_uncertainty_matches_enumeration(rng):
    theta_hat, theta_star = rng.normal(size=5), rng.normal(size=5)
    plausible = rng.normal(size=(7, 5))
    expected = max(float(a @ (theta_hat - theta_star)) ** 2 for a in plausible)
    assert model_uncertainty(theta_hat, theta_star, plausible) == pytest.approx(expected)


def test_empty_plausible_set_is_an_invariant_violation():
    with pytest.raises(InvariantViolation):
        model_uncertainty(np.zeros(2), np.ones(2), np.zeros((0, 2)))


def test_accumulator_sums_and_traces():
    metrics = MetricsAccumulator(keep_trace=True)
    metrics.record(0.5, 0.1)
    metrics.record(0.0, 0.2)
    assert metrics.regret_cum == pytest.approx(0.5)
    assert metrics.q_cum == pytest.approx(0.3)
    assert metrics.rounds == 2
    assert metrics.per_round == [(1, 0.5, 0.1), (2, 0.0, 0.2)]


def test_cumulative_trace_matches_running_totals(rng):
    metrics = MetricsAccumulator(keep_trace=True)
    for regret, uncertainty in rng.uniform(0, 1, size=(50, 2)):
        metrics.record(float(regret), float(uncertainty))
    trace = metrics.cumulative_trace()
    assert [t for t, _, _ in trace] == list(range(1, 51))
    assert trace[-1][1:] == (metrics.regret_cum, metrics.q_cum)


def test_cumulative_trace_needs_a_kept_trace():
    metrics = MetricsAccumulator()
    metrics.record(0.1, 0.1)
    with pytest.raises(InvariantViolation):
        metrics.cumulative_trace()


def test_accumulator_rejects_negative_increments():
    metrics = MetricsAccumulator()
    with pytest.raises(InvariantViolation):
        metrics.record(-1e-3, 0.0)


def test_lemma_monitor_counts_covered_rounds():
    monitor = KArmedLemmaMonitor(means=np.array([0.9, 0.1]))
    widths = np.array([0.3, 0.3])
    monitor.check(np.array([0.85, 0.15]), widths, np.array([0, 1]), chosen=1, round_index=3)
    assert monitor.covered_rounds == 1
    assert monitor.regret_violations == 0


def test_lemma_monitor_ignores_uncovered_rounds():
    monitor = KArmedLemmaMonitor(means=np.array([0.9, 0.1]))
    monitor.check(np.array([0.2, 0.8]), np.array([0.1, 0.1]), np.array([1]), chosen=1)
    assert monitor.covered_rounds == 0


def test_lemma_monitor_flags_oversized_regret():
    monitor = KArmedLemmaMonitor(means=np.array([0.9, 0.1]))
    with pytest.raises(InvariantViolation):
        monitor.check(np.array([0.88, 0.12]), np.array([0.05, 0.05]), np.array([0, 1]), chosen=1)

    lenient = KArmedLemmaMonitor(means=np.array([0.9, 0.1]), strict=False)
    lenient.check(np.array([0.88, 0.12]), np.array([0.05, 0.05]), np.array([0, 1]), chosen=1)
    assert lenient.regret_violations == 1
