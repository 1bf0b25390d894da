from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import sparse

from insider_acc.instances import one_step_tree, random_payoff
from insider_acc.lattice import (
    ExplosionError,
    FiltrationLattice,
    PayoffSpec,
    ShapeError,
    StoppingRule,
    brute_force_value,
    build_binomial,
    build_tree,
    conditional_expectation,
    count_rules,
    enumerate_paths,
    random_tree,
    snell_envelope,
)

seeds = st.integers(min_value=0, max_value=2**32 - 1)


def small_lattice(seed: int) -> FiltrationLattice:
    rng = np.random.default_rng(seed)
    kind = seed % 3
    if kind == 0:
        return random_tree(rng, int(rng.integers(1, 5)), max_branch=2)
    if kind == 1:
        return random_tree(rng, int(rng.integers(1, 4)), max_branch=3)
    return random_tree(rng, int(rng.integers(1, 5)), recombine=True)


def test_binomial_states_and_probabilities():
    lat = build_binomial(100.0, 1.1, 0.9, 0.6, 3)
    assert lat.sizes == [1, 2, 3, 4]
    np.testing.assert_allclose(lat.states[2], [81.0, 99.0, 121.0])
    probs = lat.node_probabilities()
    np.testing.assert_allclose(probs[3], [0.4**3, 3 * 0.4**2 * 0.6, 3 * 0.4 * 0.36, 0.216])
    assert all(abs(p.sum() - 1.0) < 1e-15 for p in probs)


def test_rejects_bad_rows_and_orphans():
    states = (np.array([1.0]), np.array([1.0, 2.0]))
    with pytest.raises(ValueError, match="sum to 1"):
        FiltrationLattice(states, (sparse.csr_matrix([[0.5, 0.4]]),))
    with pytest.raises(ValueError, match="orphan"):
        FiltrationLattice(states, (sparse.csr_matrix([[1.0, 0.0]]),))
    with pytest.raises(ValueError, match="unique"):
        FiltrationLattice((np.array([1.0, 2.0]), np.array([1.0])), (sparse.csr_matrix([[1.0], [1.0]]),))
    with pytest.raises(ValueError):
        build_binomial(1.0, 0.9, 1.1, 0.5, 2)


def test_json_roundtrip(tmp_path):
    lat = random_tree(np.random.default_rng(3), 3)
    path = tmp_path / "lat.json"
    lat.save(path)
    back = FiltrationLattice.load(path)
    assert back.sizes == lat.sizes
    for a, b in zip(back.transitions, lat.transitions):
        assert (a != b).nnz == 0
    for a, b in zip(back.states, lat.states):
        np.testing.assert_array_equal(a, b)


def test_conditional_expectation_tower():
    lat = random_tree(np.random.default_rng(5), 3)
    x = np.random.default_rng(6).normal(size=lat.sizes[-1])
    direct = conditional_expectation(lat, x, 0)
    via = conditional_expectation(lat, [None, conditional_expectation(lat, x, 1), None, x], 0, 1)
    np.testing.assert_allclose(direct, via, atol=1e-14)
    assert abs(direct[0] - lat.node_probabilities()[-1] @ x) < 1e-14
    with pytest.raises(ShapeError):
        conditional_expectation(lat, np.ones(lat.sizes[-1] + 1), 0)


def test_payoff_validation():
    lat = one_step_tree()
    with pytest.raises(ValueError, match="L_N"):
        PayoffSpec((np.zeros(1), np.array([1.0, 1.0])), np.array([0.5, 0.5]))
    bad = PayoffSpec((np.zeros(1), np.zeros(3)), np.zeros(3))
    with pytest.raises(ShapeError):
        snell_envelope(lat, bad)


def test_one_step_put_by_hand():
    lat = one_step_tree()
    res = snell_envelope(lat, PayoffSpec.put(lat, 1.5))
    # stop: 0.5; continue: 0.5 * 1.0 + 0.5 * 0.0 = 0.5; the tie stops
    assert res.value[0][0] == 0.5
    assert res.rule.exercise_flag[0][0]


@given(seeds)
def test_snell_matches_brute_force(seed):
    lat = small_lattice(seed)
    pay = random_payoff(np.random.default_rng(seed + 1), lat)
    res = snell_envelope(lat, pay)
    best, rule = brute_force_value(lat, pay)
    assert np.max(np.abs(best - res.value[0])) <= 1e-12
    np.testing.assert_allclose(rule.value(lat, pay)[0], best, atol=1e-12)


@given(seeds)
def test_snell_properties(seed):
    lat = small_lattice(seed)
    pay = random_payoff(np.random.default_rng(seed + 7), lat)
    res = snell_envelope(lat, pay)
    reward = pay.reward()
    for k in range(lat.n_steps):
        assert np.all(res.value[k] >= reward[k])
        # supermartingale, and a martingale where the push is zero
        cont = lat.step_expectation(k, res.value[k + 1])
        assert np.all(res.value[k] >= cont - 1e-15)
        flat = res.increments[k] == 0
        np.testing.assert_allclose(res.value[k][flat], cont[flat], atol=1e-15)
    assert res.skorokhod_residual(pay.barrier) == 0.0
    np.testing.assert_allclose(res.rule.value(lat, pay)[0], res.value[0], atol=1e-13)


@given(seeds, st.integers(0, 3))
def test_brute_force_from_later_time(seed, t):
    lat = small_lattice(seed)
    t = min(t, lat.n_steps)
    pay = random_payoff(np.random.default_rng(seed), lat)
    best, _ = brute_force_value(lat, pay, t=t)
    np.testing.assert_allclose(best, snell_envelope(lat, pay).value[t], atol=1e-12)


def test_brute_force_cap():
    lat = build_tree(
        [[1.0], [1.0, 2.0]] + [np.ones(2 ** (k + 1)) for k in range(1, 5)],
        [[[(2 * i, 0.5), (2 * i + 1, 0.5)] for i in range(2**k)] for k in range(5)],
    )
    assert count_rules(lat) == 2**31
    with pytest.raises(ExplosionError):
        brute_force_value(lat, PayoffSpec.put(lat, 1.0))


def test_stopping_rule_must_stop_at_maturity():
    with pytest.raises(ValueError):
        StoppingRule((np.array([False]), np.array([True, False])))


def test_enumerate_paths_probabilities():
    lat = random_tree(np.random.default_rng(11), 3, max_branch=3)
    paths = list(enumerate_paths(lat))
    assert abs(sum(p for _, p in paths) - 1.0) < 1e-14
    with pytest.raises(ExplosionError):
        list(enumerate_paths(lat, cap=2))


def test_step_expectation_broadcasts_over_atoms():
    lat = build_binomial(1.0, 2.0, 0.5, 0.25, 2)
    v = np.arange(6.0).reshape(3, 2)
    out = lat.step_expectation(1, v)
    assert out.shape == (2, 2)
    np.testing.assert_allclose(out[0], 0.75 * v[0] + 0.25 * v[1])
