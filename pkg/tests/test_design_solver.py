import numpy as np
import pytest

from design_solver import Design, d_optimal_design, round_allocation
from errors import InputError


def _multiplicative_oracle(actions, iters=20_000):
    """Reference D-optimal weights from the multiplicative update w <- w * g / d"""
    K, d = actions.shape
    weights = np.full(K, 1.0 / K)
    for _ in range(iters):
        moment = (actions * weights[:, None]).T @ actions
        g = np.einsum("ij,jk,ik->i", actions, np.linalg.inv(moment), actions)
        weights = weights * g / d
    moment = (actions * weights[:, None]).T @ actions
    return np.linalg.slogdet(moment)[1]


def test_basis_design_is_uniform():
    design = d_optimal_design(np.eye(4))
    assert np.allclose(design.weights, 0.25)
    assert design.g_value == pytest.approx(4.0)
    assert design.effective_dim == 4


def test_collinear_actions_use_the_longest():
    design = d_optimal_design(np.array([[1.0, 0.0], [2.0, 0.0]]))
    assert design.effective_dim == 1
    assert list(design.indices) == [1]
    assert design.weights[0] == pytest.approx(1.0)
    assert design.g_value == pytest.approx(1.0)


def test_random_design_certificate(rng):
    actions = rng.normal(size=(20, 4))
    design = d_optimal_design(actions, tol=0.01)
    assert design.g_value <= 4.04 + 1e-12
    assert design.weights.sum() == pytest.approx(1.0)
    assert np.all(design.weights > 0)


def test_random_design_matches_reference_logdet(rng):
    actions = rng.normal(size=(20, 4))
    # log det gap is at most g_value - d
    design = d_optimal_design(actions, tol=2e-4, max_iter=200_000)
    assert design.g_value <= 4.0008 + 1e-12
    assert design.logdet == pytest.approx(_multiplicative_oracle(actions), abs=1e-3)


def test_objective_never_decreases(rng):
    design = d_optimal_design(rng.uniform(-1, 1, size=(30, 5)), tol=1e-3)
    assert np.all(np.diff(design.trace) >= -1e-10)


def test_rank_deficient_actions_are_projected(rng):
    basis = rng.normal(size=(2, 3))
    actions = rng.normal(size=(10, 2)) @ basis
    design = d_optimal_design(actions)
    assert design.effective_dim == 2
    assert design.g_value <= 2.02 + 1e-12


def test_all_zero_actions_are_rejected():
    with pytest.raises(InputError):
        d_optimal_design(np.zeros((3, 2)))


def _design(weights):
    return Design(
        support=[(i, w) for i, w in enumerate(weights)],
        g_value=float(len(weights)),
        effective_dim=len(weights),
    )


def test_round_uniform():
    assert list(round_allocation(_design([0.25] * 4), 8)) == [2, 2, 2, 2]


def test_round_skewed():
    assert list(round_allocation(_design([0.75, 0.25]), 4)) == [3, 1]


def test_round_random_deviation(rng):
    weights = rng.dirichlet(np.ones(7))
    counts = round_allocation(_design(weights), 100)
    assert counts.sum() == 100
    assert np.all(counts >= 1)
    assert np.max(np.abs(counts / 100 - weights)) <= 7 / 100


def test_round_needs_enough_pulls():
    with pytest.raises(InputError):
        round_allocation(_design([0.25] * 4), 3)
