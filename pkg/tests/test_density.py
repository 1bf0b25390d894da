from __future__ import annotations

import csv

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from insider_acc.density import (
    EquivalenceViolation,
    GaussianInfoModel,
    UGrid,
    density_bound_check,
    gaussian_density,
    gaussian_density_max,
    gaussian_density_on_paths,
    gaussian_log_density,
    gaussian_logistic_ratio,
    gaussian_normalization_error,
    implied_law,
    independent_density,
    lattice_density,
    novikov_estimate,
    verify_density,
)
from insider_acc.instances import random_instance
from insider_acc.lattice import build_binomial
from insider_acc.rbsde import MarketParams, simulate_paths

seeds = st.integers(min_value=0, max_value=2**32 - 1)


def test_ugrid_validation():
    with pytest.raises(ValueError):
        UGrid([0.0, 0.0], [0.5, 0.5])
    with pytest.raises(ValueError):
        UGrid([0.0, 1.0], [0.5, 0.6])
    with pytest.raises(ValueError):
        UGrid([0.0, 1.0], [1.0, 0.0])
    g = UGrid.quantile(2.0, 16)
    assert g.size == 16 and abs(g.weights.sum() - 1) < 1e-15
    np.testing.assert_allclose(g.atoms, -g.atoms[::-1], atol=1e-12)
    h = UGrid.gauss_hermite(2.0, 20)
    assert abs(h.weights @ h.atoms**2 - 2.0) < 1e-10


@given(seeds)
def test_lattice_density_is_a_normalised_martingale(seed):
    inst = random_instance(np.random.default_rng(seed))
    diag = verify_density(inst.density, inst.lattice)
    assert diag.martingale_defect <= 1e-12
    assert diag.normalization_error <= 1e-12
    assert diag.min_alpha > 0


def test_lattice_density_rejects_degenerate_laws():
    lat = build_binomial(1.0, 2.0, 0.5, 0.5, 1)
    grid = UGrid([0.5, 2.0], [0.5, 0.5])
    with pytest.raises(EquivalenceViolation, match="zero conditional"):
        lattice_density(lat, np.eye(2), grid)
    # smoothing restores equivalence and mixes the grid weights consistently
    d = lattice_density(lat, np.eye(2), grid, smoothing=0.02)
    np.testing.assert_allclose(d.alpha[1], [[1.98, 0.02], [0.02, 1.98]])
    with pytest.raises(EquivalenceViolation, match="implied law"):
        lattice_density(lat, np.full((2, 2), 0.5), UGrid([0.5, 2.0], [0.3, 0.7]))


def test_independent_density_is_one():
    lat = build_binomial(1.0, 2.0, 0.5, 0.3, 3)
    d = independent_density(lat, UGrid([0.0, 1.0], [0.4, 0.6]))
    assert all(np.all(a == 1.0) for a in d.alpha)


def test_implied_law_of_product_information():
    lat = build_binomial(1.0, 2.0, 0.5, 0.3, 2)
    g = np.array([[1.0, 0.0], [0.5, 0.5], [0.0, 1.0]])
    np.testing.assert_allclose(implied_law(lat, g), [0.49 + 0.21, 0.21 + 0.09])


def test_zero_noise_rejected():
    with pytest.raises(EquivalenceViolation, match="density hypothesis"):
        GaussianInfoModel(1.0, 0.0)
    with pytest.raises(ValueError):
        GaussianInfoModel(0.0, 1.0)


def test_gaussian_density_closed_form():
    m = GaussianInfoModel(1.0, 1.0)
    # alpha_0 = 1 because B_0 = 0
    np.testing.assert_allclose(gaussian_density(m, 0.0, 0.0, np.linspace(-3, 3, 7)), 1.0, atol=1e-15)
    # at t the conditional law of G is N(B_t, T - t + eps); alpha is its ratio to N(0, T + eps)
    b, t, u = 0.7, 0.4, -0.3
    v, s = 1.6, 2.0
    ratio = np.exp(-(u - b) ** 2 / (2 * v)) / np.sqrt(v) / (np.exp(-(u**2) / (2 * s)) / np.sqrt(s))
    assert abs(gaussian_density(m, b, t, u) - ratio) < 1e-14
    assert abs(np.log(ratio) - gaussian_log_density(m, b, t, u)) < 1e-14


@given(st.floats(0.0, 1.0), st.floats(-3.0, 3.0), st.floats(0.05, 10.0))
def test_quadrature_normalisation(t, b, eps):
    m = GaussianInfoModel(1.0, eps)
    assert gaussian_normalization_error(m, t, [b], n_nodes=200) <= 1e-6


@given(st.floats(0.0, 0.999), st.floats(-3.0, 3.0), st.floats(-3.0, 3.0))
def test_logistic_ratio_matches_finite_difference(t, b, u):
    m = GaussianInfoModel(1.0, 1.0)
    h = 1e-5
    fd = (gaussian_log_density(m, b + h, t, u) - gaussian_log_density(m, b - h, t, u)) / (2 * h)
    assert abs(fd - gaussian_logistic_ratio(m, b, t, u)) <= 1e-6


def test_path_density_martingale_and_csv(tmp_path):
    m = GaussianInfoModel(1.0, 1.0)
    paths = simulate_paths(MarketParams(), 20_000, 10, seed=99)
    d = gaussian_density_on_paths(m, paths.brownian, paths.times, m.grid(6))
    diag = verify_density(d, normalize=False)
    assert diag.max_zscore < 5.0
    assert diag.min_alpha > 0
    small = gaussian_density_on_paths(m, paths.brownian[:3, :2], paths.times[:2], m.grid(2))
    out = tmp_path / "alpha.csv"
    small.to_csv(out, id_label="path")
    rows = list(csv.reader(open(out)))
    assert rows[0] == ["time", "path", "atom", "alpha", "logistic_ratio"]
    assert len(rows) == 1 + 2 * 3 * 2


def test_density_bounds_and_novikov():
    m = GaussianInfoModel(1.0, 1.0)
    mx = gaussian_density_max(m)
    ok, seen = density_bound_check(np.array([[0.5, mx]]), mx)
    assert ok and seen == mx
    # alpha is bounded by sqrt((T + eps) / eps) * exp(u^2 / (2 (T + eps))) at u = b
    assert mx <= np.sqrt(2.0) * np.exp(9.0 / 4.0) + 1e-12
    paths = simulate_paths(MarketParams(), 2_000, 10, seed=1)
    d = gaussian_density_on_paths(m, paths.brownian, paths.times, m.grid(4))
    assert np.all(np.isfinite(novikov_estimate(d, paths.dt)))
