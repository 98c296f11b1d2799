import math

import numpy as np
import pytest

from envs import EnvKind, Environment, RoundContext, gen_k_armed, gen_synthetic_linear, next_round, sample_reward
from errors import ConfigError
from linalg import DesignMatrix, EllipsoidWidth, ellipsoid_width, ridge_fit
from policies import (
    ConfidenceView,
    KArmedState,
    LinearState,
    PhasedElimState,
    PolicyConfig,
    build_policy,
    code_select_karmed,
    code_select_linear,
    egreedy_explores,
    egreedy_select,
    end_phase,
    etc_commit_round,
    etc_select,
    karmed_confidence,
    linear_confidence,
    lints_select,
    linucb_select,
    plausible_set,
)


def _karmed(pulls, means, delta=0.05):
    state = KArmedState.create(len(pulls), delta)
    state.pulls = np.asarray(pulls, dtype=int)
    state.sums = np.asarray(means, dtype=float) * state.pulls
    state.t = int(state.pulls.sum()) + 1
    return state


def _basis_context(K, t=1):
    return RoundContext(t=t, actions=np.eye(K))


def _linear(theta_hat, lam=1.0, R=0.0, S=0.0, delta=0.05):
    d = len(theta_hat)
    state = LinearState.create(EllipsoidWidth(delta=delta, L=1.0, S=S, R=R, lam=lam, d=d))
    state.xty = lam * np.asarray(theta_hat, dtype=float)
    state.refresh()
    return state


# Plausible set


def test_plausible_set_excludes_separated_arm():
    state = _karmed([50, 50], [0.9, 0.1])
    width = math.sqrt(2 * math.log(20) / 50)
    assert state.widths()[0] == pytest.approx(0.3462, abs=1e-4)
    assert width == pytest.approx(state.widths()[1])
    members = plausible_set(_basis_context(2), karmed_confidence(state))
    assert list(members) == [0]


def test_unpulled_arms_are_all_plausible():
    state = KArmedState.create(4, 0.05)
    members = plausible_set(_basis_context(4), karmed_confidence(state))
    assert list(members) == [0, 1, 2, 3]


def test_single_action_is_plausible():
    context = RoundContext(t=1, actions=np.array([[0.3, 0.4]]))
    view = ConfidenceView(ucb=np.array([1.0]), lcb=np.array([0.5]))
    assert list(plausible_set(context, view)) == [0]


# K-armed CODE


def test_code_karmed_picks_least_pulled():
    assert code_select_karmed(_karmed([3, 1, 2], [0.5, 0.5, 0.5]), _basis_context(3)) == 1


def test_code_karmed_ties_go_to_lowest_index():
    assert code_select_karmed(_karmed([5, 5], [0.5, 0.5]), _basis_context(2)) == 0


def test_code_karmed_skips_implausible_arm():
    assert code_select_karmed(_karmed([50, 50], [0.9, 0.1]), _basis_context(2)) == 0


def test_code_karmed_initialises_unpulled_first():
    assert code_select_karmed(_karmed([1, 0, 2], [0.5, 0.0, 0.5]), _basis_context(3)) == 1


def _dense_karmed_oracle(pulls, sums, delta):
    K = len(pulls)
    means = sums / pulls
    width = np.sqrt(2.0 * math.log(1.0 / delta) / pulls)
    best_lcb = max(means[a] - width[a] for a in range(K))
    plausible = [a for a in range(K) if means[a] + width[a] >= best_lcb]
    V = np.diag(pulls.astype(float))
    gains = []
    for a in plausible:
        e = np.zeros(K)
        e[a] = 1.0
        gains.append(np.linalg.slogdet(V + np.outer(e, e))[1])
    return plausible[int(np.argmax(np.round(gains, 9)))]


def test_code_karmed_matches_dense_logdet_oracle():
    rng = np.random.default_rng(2024)
    for _ in range(1000):
        K = int(rng.integers(2, 7))
        state = _karmed(rng.integers(1, 21, size=K), rng.uniform(0, 1, size=K))
        expected = _dense_karmed_oracle(state.pulls, state.sums, state.delta)
        assert code_select_karmed(state, _basis_context(K)) == expected


# Linear CODE


def test_code_linear_prefers_longer_plausible_action():
    state = _linear([0.0, 0.0], R=0.0, S=1.0)
    context = RoundContext(t=1, actions=np.array([[1.0, 0.0], [0.5, 0.0]]))
    assert code_select_linear(state, context) == 0


def test_code_linear_identical_actions_pick_first():
    state = _linear([0.3, -0.2], R=1.0)
    context = RoundContext(t=1, actions=np.tile([0.4, 0.1], (5, 1)))
    assert code_select_linear(state, context) == 0


def _dense_linear_oracle(state, actions):
    V = state.design.matrix
    theta = np.linalg.solve(V, state.xty)
    width = ellipsoid_width(state.width_cfg, state.design.count)
    norms = np.sqrt([a @ np.linalg.solve(V, a) for a in actions])
    means = actions @ theta
    best_lcb = np.max(means - width * norms)
    plausible = [i for i in range(len(actions)) if means[i] + width * norms[i] >= best_lcb]
    base = np.linalg.slogdet(V)[1]
    gains = [np.linalg.slogdet(V + np.outer(actions[i], actions[i]))[1] - base for i in plausible]
    return plausible[int(np.argmax(np.round(gains, 9)))]


def test_code_linear_matches_dense_enumeration_oracle():
    rng = np.random.default_rng(77)
    for _ in range(1000):
        d = int(rng.integers(1, 7))
        K = int(rng.integers(2, 11))
        theta = rng.normal(size=d)
        state = LinearState.create(EllipsoidWidth(delta=0.05, L=1.0, S=0.0, R=0.3, lam=1.0, d=d))
        for _ in range(int(rng.integers(0, 25))):
            a = rng.uniform(-1, 1, size=d)
            state.update(a, float(a @ theta + 0.3 * rng.normal()))
        actions = rng.uniform(-1, 1, size=(K, d))
        context = RoundContext(t=1, actions=actions)
        assert code_select_linear(state, context) == _dense_linear_oracle(state, actions)


def test_code_linear_reduces_to_karmed_on_basis_actions():
    rng = np.random.default_rng(606)
    lam = 1e-8
    radius = math.sqrt(2.0 * math.log(1.0 / 0.05))
    for _ in range(1000):
        K = int(rng.integers(2, 7))
        karmed = _karmed(rng.integers(1, 11, size=K), rng.uniform(0, 1, size=K))
        design = DesignMatrix.from_actions(np.repeat(np.eye(K), karmed.pulls, axis=0), lam)
        width_cfg = EllipsoidWidth(delta=0.05, L=1.0, S=radius / math.sqrt(lam), R=0.0, lam=lam, d=K)
        linear = LinearState(
            design=design,
            xty=karmed.sums.copy(),
            estimate=ridge_fit(karmed.sums, design),
            width_cfg=width_cfg,
        )
        context = _basis_context(K)
        assert code_select_linear(linear, context) == code_select_karmed(karmed, context)


# Baselines


def test_linucb_zero_width_is_greedy():
    state = _linear([1.0, 0.0], R=0.0, S=0.0)
    assert linucb_select(state, _basis_context(2)) == 0


def test_linucb_width_dominates_at_zero_estimate():
    state = _linear([0.0, 0.0], R=0.0, S=1.0)
    context = RoundContext(t=1, actions=np.array([[0.5, 0.0], [1.0, 0.0]]))
    assert linucb_select(state, context) == 1


def test_linucb_matches_index_formula(rng):
    state = _linear(rng.normal(size=3), R=0.5, S=1.0)
    actions = rng.normal(size=(5, 3))
    width = state.width()
    index = [a @ state.theta_hat + width * math.sqrt(a @ state.design.inverse @ a) for a in actions]
    assert linucb_select(state, RoundContext(t=1, actions=actions)) == int(np.argmax(index))


def test_lints_zero_scale_is_greedy(rng):
    state = _linear([0.2, 0.9])
    actions = rng.normal(size=(6, 2))
    expected = int(np.argmax(actions @ state.theta_hat))
    assert lints_select(state, RoundContext(t=1, actions=actions), rng, ts_scale=0.0) == expected


def test_lints_is_repeatable_for_a_seed(rng):
    state = _linear([0.0, 0.0])
    actions = rng.normal(size=(8, 2))
    context = RoundContext(t=1, actions=actions)
    first = [lints_select(state, context, np.random.default_rng(5)) for _ in range(3)]
    assert len(set(first)) == 1


def test_lints_symmetric_actions_split_evenly():
    state = _linear([0.0, 0.0])
    context = RoundContext(t=1, actions=np.array([[1.0, 0.0], [-1.0, 0.0]]))
    rng = np.random.default_rng(8)
    picks = np.array([lints_select(state, context, rng) for _ in range(10_000)])
    assert np.mean(picks == 0) == pytest.approx(0.5, abs=0.02)


def test_egreedy_without_exploration_is_greedy(rng):
    state = _linear([0.0, 1.0])
    for t in range(1, 50):
        assert egreedy_select(state, _basis_context(2, t), t, 100, 0.0, rng) == 1


def test_egreedy_probability_is_clamped(rng):
    assert all(egreedy_explores(1, 1, 2.0, rng) for _ in range(100))


def test_egreedy_exploration_count():
    n, epsilon, runs = 10_000, 0.05, 20
    expected = runs * sum(min(1.0, epsilon * math.sqrt(n / t) / 2.0) for t in range(1, n + 1))
    rng = np.random.default_rng(31)
    observed = sum(egreedy_explores(t, n, epsilon, rng) for _ in range(runs) for t in range(1, n + 1))
    assert observed == pytest.approx(expected, rel=0.05)


def test_etc_commit_round():
    assert etc_commit_round(10_000, 0.05) == 500
    assert etc_commit_round(100, 0.0) == 0
    assert etc_commit_round(100, 1.0) == 100


def test_etc_is_greedy_after_commit(rng):
    state = _linear([1.0, 0.0, 0.0])
    picks = [etc_select(state, _basis_context(3, t), t, 100, 0.05, rng) for t in range(6, 100)]
    assert set(picks) == {0}


def test_etc_freeze_stops_updates(rng):
    env = gen_synthetic_linear(2, 5, 0.1, rng)
    policy = build_policy(PolicyConfig(algorithm="etc", epsilon=0.1, horizon=20, freeze=True, lam=1.0), env, rng)
    for t in range(1, 21):
        context = next_round(env, t, rng)
        index = policy.select(context)
        policy.observe(context, index, sample_reward(env, context.actions[index], rng))
    assert policy.state.design.count == 2


# Phased elimination


def test_phased_elim_eliminates_noiselessly():
    env = Environment(
        kind=EnvKind.LINEAR_FIXED,
        theta_star=np.array([1.0, 0.0]),
        sigma=0.0,
        L=1.0,
        n_actions=2,
        action_pool=np.eye(2),
    )
    rng = np.random.default_rng(0)
    policy = build_policy(PolicyConfig(algorithm="phased_elim", lam=1.0), env, rng)
    first_phase = policy.phases.schedule.shape[0]
    assert first_phase == max(3, math.ceil(8 * math.log(20)))

    for t in range(1, first_phase + 1):
        context = next_round(env, t, rng)
        index = policy.select(context)
        policy.observe(context, index, sample_reward(env, context.actions[index], rng))

    assert list(policy.phases.survivors) == [0]
    assert policy.phases.phase == 2
    for t in range(first_phase + 1, first_phase + 20):
        assert policy.select(next_round(env, t, rng)) == 0


def test_phased_elim_basis_design_is_uniform():
    state = PhasedElimState.create(np.eye(4), 0.05)
    counts = np.bincount(state.schedule, minlength=4)
    assert np.all(counts == counts[0])
    assert state.eps_ell == 0.5


def _basis_phase(theta):
    state = PhasedElimState.create(np.eye(2), 0.05)
    state.phase_gram = 4.0 * np.eye(2)
    state.phase_xty = 4.0 * np.asarray(theta)
    return state


def test_phased_elim_drops_arm_at_exactly_twice_the_radius():
    state = _basis_phase([1.0, 0.0])
    assert 2.0 * state.eps_ell == 1.0
    end_phase(state)
    assert list(state.survivors) == [0]


def test_phased_elim_keeps_arm_just_inside_twice_the_radius():
    state = _basis_phase([1.0, 0.03125])
    end_phase(state)
    assert list(state.survivors) == [0, 1]
    assert state.phase == 2


def test_phased_elim_rejects_changing_actions(rng):
    env = gen_synthetic_linear(3, 10, 0.5, rng, changing=True)
    with pytest.raises(ConfigError):
        build_policy(PolicyConfig(algorithm="phased_elim"), env, rng)


def test_code_karmed_needs_karmed_environment(rng):
    env = gen_synthetic_linear(3, 10, 0.5, rng)
    with pytest.raises(ConfigError):
        build_policy(PolicyConfig(algorithm="code_karmed"), env, rng)


# Configuration


@pytest.mark.parametrize("overrides", [
    {"delta": 0.0},
    {"delta": 1.0},
    {"epsilon": 1.5},
    {"lam": 0.0},
    {"width_lam": 0.0},
    {"algorithm": "ucb-v"},
])
def test_policy_config_validation(overrides):
    settings = {"algorithm": "code", **overrides}
    with pytest.raises(ConfigError):
        PolicyConfig(**settings)


def test_policy_config_label():
    assert PolicyConfig(algorithm="linucb").name == "linucb"
    assert PolicyConfig(algorithm="linucb", label="linucb-wide").name == "linucb-wide"


def test_width_lambda_is_separate_from_ridge_lambda(rng):
    env = gen_synthetic_linear(3, 10, 0.5, rng)
    policy = build_policy(PolicyConfig(algorithm="code", lam=5.0, width_lam=1e4), env, rng)
    assert policy.state.design.lam == 5.0
    assert policy.width_cfg.lam == 1e4
    assert policy.state.width() == pytest.approx(0.5 * math.sqrt(3 * math.log(20)))


def test_width_lambda_defaults_to_ridge_lambda(rng):
    env = gen_synthetic_linear(3, 10, 0.5, rng)
    policy = build_policy(PolicyConfig(algorithm="linucb", lam=2.0), env, rng)
    assert policy.cfg.confidence_lam == 2.0
    assert policy.width_cfg.lam == policy.state.design.lam == 2.0


def test_calibrated_delta_tightens_karmed_confidence(rng):
    env = gen_k_armed([0.6, 0.4, 0.4], 1.0)
    plain = build_policy(PolicyConfig(algorithm="code_karmed", horizon=100), env, rng)
    calibrated = build_policy(PolicyConfig(algorithm="code_karmed", horizon=100, calibrated_delta=True), env, rng)
    assert calibrated.state.delta == pytest.approx(0.05 / (2 * 3 * 100 ** 2))
    assert plain.state.delta == 0.05


def test_karmed_pull_counts_track_rounds(rng):
    env = gen_k_armed([0.7, 0.5, 0.3], 0.5)
    policy = build_policy(PolicyConfig(algorithm="code_karmed", horizon=200), env, rng)
    for t in range(1, 201):
        context = next_round(env, t, rng)
        index = policy.select(context)
        policy.observe(context, index, sample_reward(env, context.actions[index], rng))
        assert policy.state.pulls.sum() == t
    assert np.all(policy.state.pulls >= 1)


def test_estimate_is_fresh_before_each_selection(rng):
    env = gen_synthetic_linear(3, 8, 0.2, rng)
    policy = build_policy(PolicyConfig(algorithm="code", lam=1.0), env, rng)
    for t in range(1, 30):
        context = next_round(env, t, rng)
        expected = np.linalg.solve(policy.state.design.matrix, policy.state.xty)
        assert np.allclose(policy.working_estimate(), expected, atol=1e-9)
        index = policy.select(context)
        policy.observe(context, index, sample_reward(env, context.actions[index], rng))


def test_linear_confidence_contains_estimate(rng):
    state = _linear(rng.normal(size=4), R=1.0)
    actions = rng.normal(size=(6, 4))
    view = linear_confidence(state, RoundContext(t=1, actions=actions))
    assert np.all(view.ucb >= view.lcb)
