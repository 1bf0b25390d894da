from __future__ import annotations

import csv
import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from insider_acc.density import independent_density
from insider_acc.instances import hand_case, random_instance
from insider_acc.lattice import PayoffSpec, brute_force_value, snell_envelope
from insider_acc.product import (
    conditioned_lattice,
    enlarged_dp_oracle,
    insider_value,
    oracle_projection,
    parametrized_snell,
    product_payoff,
    projection_value,
    value_insider,
)

seeds = st.integers(min_value=0, max_value=2**32 - 1)

# frozen fixture: strike-1.5 put on the (1 -> 2 | 0.5, p = 1/2) tree, G = S_1.
# Checked by brute force over the product payoff in test_hand_case_brute_force.
HAND_BASE = 0.5
HAND_INSIDER = {0.5: 1.0, 2.0: 0.5}
HAND_EXPECTED_CEI = 0.25


def test_hand_case_values():
    hc = hand_case()
    val = value_insider(hc.lattice, hc.payoff, hc.density)
    assert val.base_value[0][0] == HAND_BASE
    assert dict(zip(hc.grid.atoms.tolist(), val.insider_value[0][0].tolist())) == HAND_INSIDER
    assert val.expected_cei_0() == HAND_EXPECTED_CEI
    # the impossible (node, atom) pairs at maturity carry no value
    assert np.isnan(val.insider_value[1][0, 1]) and np.isnan(val.insider_value[1][1, 0])


def test_hand_case_brute_force():
    hc = hand_case()
    prod = product_payoff(hc.payoff, hc.density)
    par = parametrized_snell(hc.lattice, prod)
    for i in range(hc.grid.size):
        spec = PayoffSpec(tuple(v[:, i] for v in prod.values), prod.values[-1][:, i])
        best, _ = brute_force_value(hc.lattice, spec)
        assert best[0] == par.value[0][0, i]
    assert brute_force_value(hc.lattice, hc.payoff)[0][0] == HAND_BASE


def test_per_atom_cei_can_be_negative():
    # strike 1.2: base continues (0.35 > 0.2); told S_1 = 2 the insider stops for 0.2
    hc = hand_case(strike=1.2)
    val = value_insider(hc.lattice, hc.payoff, hc.density)
    assert val.base_value[0][0] == pytest.approx(0.35, abs=1e-15)
    np.testing.assert_allclose(val.insider_value[0][0], [0.7, 0.2], atol=1e-15)
    assert val.cei[0][0, 1] < 0
    assert val.expected_cei_0() == pytest.approx(0.1, abs=1e-15)


@given(seeds)
def test_insider_value_equals_enlarged_oracle(seed):
    inst = random_instance(np.random.default_rng(seed))
    val = value_insider(inst.lattice, inst.payoff, inst.density)
    oracle = enlarged_dp_oracle(inst.lattice, inst.payoff, inst.g_map, inst.grid)
    assert np.max(np.abs(val.insider_value[0] - oracle)) <= 1e-12
    proj = oracle_projection(inst.lattice, inst.g_map, oracle)
    assert np.max(np.abs(val.projection_value[0] - proj)) <= 1e-12


@given(seeds, st.integers(0, 3))
def test_insider_value_at_later_times(seed, t):
    inst = random_instance(np.random.default_rng(seed))
    t = min(t, inst.lattice.n_steps)
    val = value_insider(inst.lattice, inst.payoff, inst.density)
    oracle = enlarged_dp_oracle(inst.lattice, inst.payoff, inst.g_map, inst.grid, t=t)
    assert np.max(np.abs(val.insider_value[t] - oracle)) <= 1e-12


@given(seeds)
def test_conditioned_lattice_snell_is_insider_value(seed):
    inst = random_instance(np.random.default_rng(seed))
    val = value_insider(inst.lattice, inst.payoff, inst.density)
    for i in range(inst.grid.size):
        cond = conditioned_lattice(inst.lattice, inst.density, i)
        res = snell_envelope(cond, inst.payoff)
        np.testing.assert_allclose(res.value[0], val.insider_value[0][:, i], atol=1e-12)


@given(seeds)
def test_projection_forms_agree(seed):
    inst = random_instance(np.random.default_rng(seed))
    par = parametrized_snell(inst.lattice, product_payoff(inst.payoff, inst.density), inst.grid)
    for k in range(inst.lattice.n_steps + 1):
        a = projection_value(par, inst.grid, inst.density, k, weighting="conditional")
        b = projection_value(par, inst.grid, inst.density, k, weighting="unconditional")
        np.testing.assert_allclose(a, b, rtol=1e-13, atol=1e-15)


@given(seeds)
def test_cei_boundary_and_expectation(seed):
    inst = random_instance(np.random.default_rng(seed))
    val = value_insider(inst.lattice, inst.payoff, inst.density)
    assert np.all(val.cei[-1] == 0.0)
    assert np.all(val.expected_cei[-1] == 0.0)
    for c in val.expected_cei:
        assert np.all(c >= -1e-12)
    # E[CEI_t | F_t] is the alpha-weighted average of the per-atom CEI
    for k, c in enumerate(val.cei):
        avg = (c * val.alpha[k]) @ inst.grid.weights
        np.testing.assert_allclose(avg, val.expected_cei[k], atol=1e-12)


@given(seeds)
def test_cei_vanishes_for_independent_information(seed):
    inst = random_instance(np.random.default_rng(seed))
    val = value_insider(inst.lattice, inst.payoff, independent_density(inst.lattice, inst.grid))
    assert all(np.all(c == 0.0) for c in val.cei)


def test_insider_value_rejects_zero_density():
    hc = hand_case()
    par = parametrized_snell(hc.lattice, product_payoff(hc.payoff, hc.density))
    assert insider_value(par, hc.density, 0, 0, 1) == 0.5
    with pytest.raises(ZeroDivisionError):
        insider_value(par, hc.density, 1)


def test_outputs(tmp_path):
    inst = random_instance(np.random.default_rng(4))
    val = value_insider(inst.lattice, inst.payoff, inst.density)
    val.to_csv(tmp_path / "v.csv")
    rows = list(csv.reader(open(tmp_path / "v.csv")))
    assert rows[0] == ["time", "node", "atom", "Y_u", "alpha", "insider_value", "cei"]
    assert len(rows) == 1 + sum(inst.lattice.sizes) * inst.grid.size
    val.summary_json(tmp_path / "s.json")
    s = json.loads((tmp_path / "s.json").read_text())
    assert s["expected_cei"] == pytest.approx(s["projection_value"] - s["base_value"], abs=1e-12)
