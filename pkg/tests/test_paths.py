import io

import numpy as np
import pytest

from drift_camouflage.models import Ensemble, EnsembleSpec, PathSample, SeededRng, TimeGrid
from drift_camouflage.paths import (
    grid_for_horizon,
    ito_sum_left,
    make_grid,
    quadratic_variation,
    read_path_csv,
    riemann_left,
    sample_brownian,
    sample_brownian_ensemble,
    write_path_csv,
)


@pytest.mark.parametrize("dt,n_steps", [(0.0, 10), (-0.1, 10), (0.1, 0), (0.1, 2.5)])
def test_make_grid_rejects_bad_arguments(dt, n_steps):
    with pytest.raises(ValueError):
        make_grid(dt, n_steps)


def test_grid_times_end_at_horizon():
    grid = grid_for_horizon(0.001, 2.0)
    assert grid.n_steps == 2000
    assert grid.times[0] == 0.0
    assert grid.times[-1] == pytest.approx(2.0)
    assert grid.horizon == pytest.approx(2.0)


def test_path_sample_checks_length_and_is_read_only():
    grid = TimeGrid(0.1, 3)
    with pytest.raises(ValueError):
        PathSample(grid, [0.0, 1.0])
    path = PathSample(grid, [0.0, 1.0, 2.0, 3.0])
    with pytest.raises(ValueError):
        path.values[0] = 5.0


def test_sample_brownian_is_reproducible_per_stream():
    grid = make_grid(0.01, 100)
    a = sample_brownian(grid, SeededRng(7, 0))
    b = sample_brownian(grid, SeededRng(7, 0))
    c = sample_brownian(grid, SeededRng(7, 1))
    assert a.values[0] == 0.0
    np.testing.assert_array_equal(a.values, b.values)
    assert not np.array_equal(a.values, c.values)


def test_brownian_ensemble_terminal_variance_matches_horizon():
    grid = make_grid(0.01, 100)
    ensemble = sample_brownian_ensemble(grid, seed=11, n_paths=500)
    terminal = ensemble.terminal()
    assert abs(np.mean(terminal)) < 0.2
    assert np.var(terminal, ddof=1) == pytest.approx(1.0, abs=0.3)


def test_ensemble_validates_shape():
    grid = TimeGrid(0.1, 4)
    with pytest.raises(ValueError):
        Ensemble(EnsembleSpec(2, grid), np.zeros((2, 4)))
    with pytest.raises(ValueError):
        Ensemble(EnsembleSpec(1, grid), np.zeros((1, 5)))


def test_ito_sum_with_unit_integrand_telescopes():
    grid = make_grid(0.01, 200)
    X = sample_brownian(grid, SeededRng(3))
    ones = PathSample(grid, np.ones(grid.n_steps + 1))
    np.testing.assert_allclose(ito_sum_left(ones, X).values, X.values, atol=1e-12)


def test_ito_sum_uses_left_endpoint():
    grid = TimeGrid(1.0, 2)
    H = PathSample(grid, [1.0, -1.0, 100.0])
    X = PathSample(grid, [0.0, 2.0, 5.0])
    # 1*(2-0) + (-1)*(5-2); the last integrand value never enters
    np.testing.assert_allclose(ito_sum_left(H, X).values, [0.0, 2.0, -1.0])


def test_ito_sum_rejects_mismatched_grids():
    a = PathSample(TimeGrid(0.1, 2), [0.0, 1.0, 2.0])
    b = PathSample(TimeGrid(0.2, 2), [0.0, 1.0, 2.0])
    with pytest.raises(ValueError):
        ito_sum_left(a, b)


def test_riemann_left_of_constant_is_linear():
    grid = make_grid(0.01, 100)
    c = PathSample(grid, np.full(grid.n_steps + 1, 2.5))
    np.testing.assert_allclose(riemann_left(c).values, 2.5 * grid.times, atol=1e-12)


def test_ito_sum_is_linear_in_the_integrand():
    grid = make_grid(0.01, 300)
    X = sample_brownian(grid, SeededRng(4, 0))
    f = sample_brownian(grid, SeededRng(4, 1))
    g = PathSample(grid, np.sign(X.values))
    combined = PathSample(grid, 2.0 * f.values - 0.5 * g.values)
    expected = 2.0 * ito_sum_left(f, X).values - 0.5 * ito_sum_left(g, X).values
    np.testing.assert_allclose(ito_sum_left(combined, X).values, expected, atol=1e-10)


def test_riemann_left_of_nonnegative_integrand_is_nondecreasing():
    grid = make_grid(0.01, 400)
    B = sample_brownian(grid, SeededRng(6))
    mu = PathSample(grid, np.abs(B.values))
    values = riemann_left(mu).values
    assert values[0] == 0.0
    assert np.all(np.diff(values) >= 0.0)


def test_quadratic_variation_of_brownian_path_is_close_to_horizon():
    grid = make_grid(1e-4, 10_000)
    B = sample_brownian(grid, SeededRng(2024))
    assert quadratic_variation(B) == pytest.approx(1.0, abs=0.07)


def test_path_csv_round_trip_keeps_full_precision():
    grid = make_grid(0.125, 8)
    B = sample_brownian(grid, SeededRng(5))
    buffer = io.StringIO()
    write_path_csv(B, buffer)
    assert buffer.getvalue().startswith("t,value\n")
    restored = read_path_csv(io.StringIO(buffer.getvalue()))
    assert restored.grid == grid
    np.testing.assert_array_equal(restored.values, B.values)


def test_read_path_csv_rejects_foreign_header():
    with pytest.raises(ValueError):
        read_path_csv(io.StringIO("time,x\n0,0\n1,1\n"))
