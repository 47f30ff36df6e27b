import numpy as np
import pytest

from drift_camouflage.filtering import (
    DriftScenario,
    bayes_filter,
    closed_form_g,
    coarsen,
    drift_mu,
    ensemble_hidden_paths,
    euler_drift_sde,
    euler_filter_sde,
    filter_error,
    half_distance,
    hidden_path_from_brownian,
    mu_plus_minus,
    observation_filter,
    simulate_hidden_path,
)
from drift_camouflage.models import SeededRng
from drift_camouflage.paths import make_grid, sample_brownian


def hidden(mu=1.0, epsilon=1, seed=1, dt=0.001, n_steps=1000):
    grid = make_grid(dt, n_steps)
    B = sample_brownian(grid, SeededRng(seed))
    return hidden_path_from_brownian(DriftScenario(mu), epsilon, B)


def test_filter_starts_at_one_half_and_drift_at_mu():
    assert closed_form_g(0.0, 0.0, 1, 1.5) == pytest.approx(0.5)
    assert closed_form_g(0.0, 0.0, -1, 1.5) == pytest.approx(0.5)
    assert drift_mu(0.0, 0.0, 1.5) == pytest.approx(1.5)


def test_filters_for_both_signs_sum_to_one():
    t = np.linspace(0, 1, 11)
    b = np.linspace(-2, 2, 11)
    total = closed_form_g(t, b, 1, 0.8) + closed_form_g(t, b, -1, 0.8)
    np.testing.assert_allclose(total, 1.0, atol=1e-12)


@pytest.mark.parametrize("mu", [0.5, 1.0, 2.0])
@pytest.mark.parametrize("epsilon", [1, -1])
def test_hidden_drift_stays_inside_open_range(mu, epsilon):
    path = hidden(mu=mu, epsilon=epsilon, seed=int(10 * mu) + epsilon)
    assert np.all(path.mu_t.values > 0)
    assert np.all(path.mu_t.values < 2 * mu)
    assert np.all((path.g.values > 0) & (path.g.values < 1))


@pytest.mark.parametrize("epsilon", [1, -1])
def test_balance_and_drift_filter_identity(epsilon):
    mu = 1.0
    path = hidden(mu=mu, epsilon=epsilon, seed=4)
    g = path.g.values
    balance = g * path.mu_plus.values - (1 - g) * path.mu_minus.values
    assert np.max(np.abs(balance)) <= 1e-12
    np.testing.assert_allclose(np.abs(path.mu_t.values - mu), 2 * mu * np.abs(g - 0.5), atol=1e-12)


@pytest.mark.parametrize("epsilon", [1, -1])
def test_half_distance_matches_filter(epsilon):
    path = hidden(mu=0.7, epsilon=epsilon, seed=9)
    distance = half_distance(path.grid.times, path.B.values, 0.7)
    np.testing.assert_allclose(distance, np.abs(path.g.values - 0.5), atol=1e-12)


def test_observation_is_signed_drifted_motion():
    path = hidden(epsilon=-1, seed=2)
    np.testing.assert_array_equal(path.Y.values, -path.S.values)
    assert path.S.values[0] == 0.0


@pytest.mark.parametrize("epsilon", [1, -1])
def test_bayes_filter_reproduces_closed_form(epsilon):
    path = hidden(mu=1.3, epsilon=epsilon, seed=21)
    weights = bayes_filter(path.Y, path.mu_plus, path.mu_minus)
    assert weights.p.values[0] == 0.5
    assert filter_error(path) <= 1e-9


def _rms(errors):
    return float(np.sqrt(np.mean(np.square(errors))))


def test_euler_schemes_converge_under_refinement():
    mu = 1.0
    fine = make_grid(2.0 ** -10, 2 ** 10)
    coarse_filter, fine_filter = [], []
    coarse_drift, fine_drift = [], []
    coarse_obs, fine_obs = [], []
    for i in range(64):
        path = simulate_hidden_path(DriftScenario(mu), fine, SeededRng(100, i))
        B = path.B
        B_coarse = coarsen(B, 4)
        g_end = path.g.values[-1]
        m_end = path.mu_t.values[-1]
        fine_filter.append(euler_filter_sde(B, path.epsilon, mu).path.values[-1] - g_end)
        coarse_filter.append(euler_filter_sde(B_coarse, path.epsilon, mu).path.values[-1] - g_end)
        fine_drift.append(euler_drift_sde(B, mu).path.values[-1] - m_end)
        coarse_drift.append(euler_drift_sde(B_coarse, mu).path.values[-1] - m_end)
        fine_obs.append(observation_filter(path.Y, mu).path.values[-1] - g_end)
        coarse_obs.append(observation_filter(coarsen(path.Y, 4), mu).path.values[-1] - g_end)
    assert _rms(fine_filter) < _rms(coarse_filter)
    assert _rms(fine_drift) < _rms(coarse_drift)
    assert _rms(fine_obs) < _rms(coarse_obs)


def test_ensemble_hidden_paths_carries_signs():
    grid = make_grid(0.01, 50)
    ensemble, paths = ensemble_hidden_paths(DriftScenario(1.0), grid, seed=3, n_paths=40)
    assert ensemble.n_paths == 40
    assert ensemble.spec.source == "hidden:Y"
    np.testing.assert_array_equal(ensemble.path(5).values, paths[5].Y.values)
    signs = ensemble.extras["epsilon"]
    assert set(np.unique(signs)) <= {-1.0, 1.0}
    assert len(set(signs.tolist())) == 2


def test_fixed_sign_scenario_ignores_rng():
    grid = make_grid(0.01, 10)
    for i in range(5):
        assert simulate_hidden_path(DriftScenario(1.0, epsilon=-1), grid, SeededRng(0, i)).epsilon == -1


@pytest.mark.parametrize("mu,epsilon", [(0.0, None), (-1.0, None), (1.0, 0), (1.0, 2)])
def test_scenario_rejects_bad_arguments(mu, epsilon):
    with pytest.raises(ValueError):
        DriftScenario(mu, epsilon)


def test_mu_plus_minus_rejects_degenerate_filter():
    with pytest.raises(ValueError):
        mu_plus_minus(np.array([0.5, 1.0]), 1.0)


def test_coarsen_requires_divisor():
    path = hidden(n_steps=10, dt=0.1).B
    with pytest.raises(ValueError):
        coarsen(path, 3)
    assert coarsen(path, 5).grid.n_steps == 2
