"""Invariant checks behind ``insider-acc verify``.

Each check reports a measured defect against a tolerance. Informational
checks are printed but do not decide the exit code.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .density import (
    GaussianInfoModel,
    gaussian_density_on_paths,
    gaussian_log_density,
    gaussian_logistic_ratio,
    gaussian_normalization_error,
    independent_density,
    verify_density,
)
from .instances import hand_case, random_instance
from .lattice import PayoffSpec, brute_force_value, build_binomial, snell_envelope
from .product import (
    enlarged_dp_oracle,
    oracle_projection,
    parametrized_snell,
    product_payoff,
    value_insider,
)
from .rbsde import (
    MarketParams,
    PathPayoff,
    payoff_function,
    simulate_paths,
    skorokhod_residual,
    solve_parametrized_rbsde,
    solve_rbsde,
    transform_solution,
)
from .scenario import ScenarioConfig, run_scenario

SUITES = ("all", "lattice", "density", "rbsde", "scenario")


@dataclass
class Check:
    suite: str
    name: str
    measured: float
    tolerance: float
    passed: bool
    gating: bool = True

    def as_dict(self) -> dict:
        return asdict(self)


def _at_most(suite: str, name: str, measured: float, tol: float, gating: bool = True) -> Check:
    measured = float(measured)
    return Check(suite, name, measured, tol, bool(measured <= tol), gating)


def crr_put(s0: float, strike: float, sigma: float, horizon: float, n_steps: int) -> float:
    """Zero-rate American put on a CRR tree, valued by the lattice Snell envelope."""
    dt = horizon / n_steps
    up = math.exp(sigma * math.sqrt(dt))
    p = (1.0 - 1.0 / up) / (up - 1.0 / up)
    lat = build_binomial(s0, up, 1.0 / up, p, n_steps)
    return float(snell_envelope(lat, PayoffSpec.put(lat, strike)).value[0][0])


def lattice_checks(seed: int, n_instances: int = 40) -> list[Check]:
    rng = np.random.default_rng(seed)
    snell_err = insider_err = proj_err = boundary = alpha_one = 0.0
    min_expected, min_atom = math.inf, math.inf
    for _ in range(n_instances):
        inst = random_instance(rng)
        lat, pay = inst.lattice, inst.payoff
        snell = snell_envelope(lat, pay)
        best, _ = brute_force_value(lat, pay)
        snell_err = max(snell_err, float(np.max(np.abs(best - snell.value[0]))))
        val = value_insider(lat, pay, inst.density)
        oracle = enlarged_dp_oracle(lat, pay, inst.g_map, inst.grid)
        insider_err = max(insider_err, float(np.max(np.abs(val.insider_value[0] - oracle))))
        proj = oracle_projection(lat, inst.g_map, oracle)
        proj_err = max(proj_err, float(np.max(np.abs(val.projection_value[0] - proj))))
        boundary = max(boundary, float(np.nanmax(np.abs(val.cei[-1]))))
        min_expected = min(min_expected, min(float(c.min()) for c in val.expected_cei))
        min_atom = min(min_atom, min(float(np.nanmin(c)) for c in val.cei))
        ind = value_insider(lat, pay, independent_density(lat, inst.grid))
        alpha_one = max(alpha_one, max(float(np.max(np.abs(c))) for c in ind.cei))

    hc = hand_case()
    val = value_insider(hc.lattice, hc.payoff, hc.density)
    par = parametrized_snell(hc.lattice, product_payoff(hc.payoff, hc.density))
    prod = product_payoff(hc.payoff, hc.density)
    brute = []
    for i in range(hc.grid.size):
        spec = PayoffSpec(tuple(v[:, i] for v in prod.values), prod.values[-1][:, i])
        brute.append(float(brute_force_value(hc.lattice, spec)[0][0]))
    hand = max(
        abs(val.base_value[0][0] - 0.5),
        float(np.max(np.abs(val.insider_value[0][0] - [1.0, 0.5]))),
        abs(val.expected_cei_0() - 0.25),
        float(np.max(np.abs(np.array(brute) - par.value[0][0]))),
    )
    s = "lattice"
    return [
        _at_most(s, "snell_vs_brute_force", snell_err, 1e-12),
        _at_most(s, "insider_vs_enlarged_dp_oracle", insider_err, 1e-12),
        _at_most(s, "projection_vs_oracle", proj_err, 1e-12),
        _at_most(s, "one_step_hand_case", hand, 1e-12),
        _at_most(s, "cei_at_maturity", boundary, 0.0),
        _at_most(s, "cei_independent_information", alpha_one, 0.0),
        _at_most(s, "expected_cei_negative_part", max(-min_expected, 0.0), 1e-12),
        # per-atom CEI is a random variable and may be negative; reported only
        _at_most(s, "per_atom_cei_negative_part", max(-min_atom, 0.0), 1e-12, gating=False),
    ]


def density_checks(seed: int) -> list[Check]:
    rng = np.random.default_rng(seed)
    defect = 0.0
    for _ in range(20):
        inst = random_instance(rng)
        defect = max(defect, verify_density(inst.density, inst.lattice).martingale_defect)
    model = GaussianInfoModel(1.0, 1.0)
    b = np.linspace(-3.0, 3.0, 25)
    norm = max(gaussian_normalization_error(model, t, b, n_nodes=200) for t in (0.0, 0.25, 0.5, 0.9, 1.0))
    h = 1e-5
    fd_err = 0.0
    for t in (0.0, 0.5, 0.99):
        for u in (-2.0, 0.3, 1.7):
            fd = (gaussian_log_density(model, b + h, t, u) - gaussian_log_density(model, b - h, t, u)) / (2 * h)
            fd_err = max(fd_err, float(np.max(np.abs(fd - gaussian_logistic_ratio(model, b, t, u)))))
    paths = simulate_paths(MarketParams(), 20_000, 20, seed)
    dens = gaussian_density_on_paths(model, paths.brownian, paths.times, model.grid(8))
    z = verify_density(dens, normalize=False).max_zscore
    s = "density"
    return [
        _at_most(s, "lattice_martingale_defect", defect, 1e-12),
        _at_most(s, "gaussian_quadrature_normalization", norm, 1e-6),
        _at_most(s, "logistic_ratio_vs_finite_difference", fd_err, 1e-6),
        _at_most(s, "path_martingale_max_zscore", z, 5.0),
    ]


def rbsde_checks(seed: int, break_skorokhod: bool = False) -> list[Check]:
    paths = simulate_paths(MarketParams(100.0, 0.0, 0.2, 1.0), 100_000, 50, seed)
    pay = PathPayoff.from_state(paths, payoff_function("put", 100.0))
    base = solve_rbsde(paths, pay.barrier, pay.terminal)
    ref = crr_put(100.0, 100.0, 0.2, 1.0, 2000)
    model = GaussianInfoModel(1.0, 1.0)
    grid = model.grid(4)
    dens = gaussian_density_on_paths(model, paths.brownian, paths.times, grid)
    trans = [transform_solution(p, dens) for p in solve_parametrized_rbsde(paths, pay, dens)]
    if break_skorokhod:
        # push on paths strictly above the barrier: a reflection that should never happen
        above = base.y > base.barrier + 1e-9
        base.dk = base.dk + np.where(above, 1.0, 0.0)
    s = "rbsde"
    return [
        _at_most(s, "american_put_vs_lattice_relative", abs(base.y0 / ref - 1.0), 0.01),
        _at_most(s, "skorokhod_base", abs(skorokhod_residual(base)), 1e-12),
        _at_most(s, "skorokhod_transformed", max(abs(skorokhod_residual(t)) for t in trans), 1e-10),
    ]


def scenario_checks(seed: int) -> list[Check]:
    cfg = ScenarioConfig(n_paths=20_000, n_atoms=8, seed=seed)
    rep = run_scenario(cfg)
    large = run_scenario(cfg.replace(epsilon=1e6, routes=("transform",)))
    s = "scenario"
    return [
        _at_most(s, "three_route_max_relative_gap", rep.max_route_gap, 0.02),
        _at_most(s, "expected_cei_below_minus_3se", max(-rep.expected_cei / rep.expected_cei_stderr, 0.0), 3.0),
        _at_most(s, "large_noise_expected_cei_zscore", abs(large.expected_cei) / large.expected_cei_stderr, 3.0),
        _at_most(s, "per_atom_cei_violations_3se", float(rep.cei_sign_violations().size), 0.0, gating=False),
    ]


def run_checks(suite: str = "all", seed: int | None = None, break_skorokhod: bool = False) -> list[Check]:
    if suite not in SUITES:
        raise ValueError(f"unknown suite {suite!r}")
    seed = 12345 if seed is None else seed
    out: list[Check] = []
    if suite in ("all", "lattice"):
        out += lattice_checks(seed)
    if suite in ("all", "density"):
        out += density_checks(seed)
    if suite in ("all", "rbsde"):
        out += rbsde_checks(seed, break_skorokhod)
    if suite in ("all", "scenario"):
        out += scenario_checks(seed)
    if break_skorokhod and suite not in ("all", "rbsde"):
        out += [c for c in rbsde_checks(seed, True) if c.name.startswith("skorokhod")]
    return out
