"""End-to-end Gaussian scenario: GBM market, American payoff, insider told ``G = B_T + X``.

``run_scenario`` simulates one path ensemble, solves the base problem and then
streams through the atoms, solving each by the requested routes and keeping
only summaries so memory stays at a few solutions. ``matched_lattice_oracle``
values the same market on a small binomial surrogate exactly.
"""
from __future__ import annotations

import dataclasses
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .density import (
    GaussianInfoModel,
    UGrid,
    gaussian_density,
    gaussian_density_on_paths,
    gaussian_normalization_error,
    implied_law,
    independent_density,
    lattice_density,
    verify_density,
)
from .lattice import ExplosionError, FiltrationLattice, PayoffSpec, build_binomial
from .product import ORACLE_MAX_ATOMS, ORACLE_MAX_STEPS, InsiderValuation, value_insider
from .rbsde import (
    MarketParams,
    PathPayoff,
    PolynomialBasis,
    _map_atoms,
    girsanov_solve,
    payoff_function,
    simulate_paths,
    solve_enlarged_rbsde,
    solve_parametrized_rbsde,
    solve_rbsde,
    transform_solution,
)

SCHEMA_VERSION = 1
ROUTES = ("transform", "enlarged", "girsanov")
PAYOFF_KINDS = ("put", "call", "straddle")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ScenarioConfig:
    """Market, payoff, information and numerics of one run.

    ``mu`` and ``sigma`` are per unit time and per square-root time, ``strike``
    is in currency units, ``epsilon`` is the variance of the noise ``X``.
    """

    s0: float = 100.0
    mu: float = 0.0
    sigma: float = 0.2
    horizon: float = 1.0
    kind: str = "put"
    strike: float = 100.0
    epsilon: float = 1.0
    n_atoms: int = 16
    n_paths: int = 100_000
    n_steps: int = 50
    seed: int = 2024
    degree: int = 3
    grid: str = "quantile"
    routes: tuple[str, ...] = ROUTES
    enlarged_scheme: str = "exponential"

    def __post_init__(self) -> None:
        if not self.sigma > 0:
            raise ConfigError("sigma must be positive")
        if not self.epsilon > 0:
            raise ConfigError(
                "epsilon must be positive: with no noise the law of G given F_t is not "
                "equivalent to its unconditional law, so the density hypothesis fails"
            )
        if not self.strike > 0:
            raise ConfigError("strike must be positive")
        if self.n_steps < 2:
            raise ConfigError("n_steps must be at least 2")
        if not (self.s0 > 0 and self.horizon > 0):
            raise ConfigError("s0 and horizon must be positive")
        if self.kind not in PAYOFF_KINDS:
            raise ConfigError(f"payoff kind must be one of {PAYOFF_KINDS}, got {self.kind!r}")
        if self.grid not in ("quantile", "gauss_hermite"):
            raise ConfigError(f"unknown atom grid {self.grid!r}")
        if self.n_atoms < 1 or self.n_paths < 2 or self.degree < 0:
            raise ConfigError("n_atoms, n_paths and degree out of range")
        bad = set(self.routes) - set(ROUTES)
        if bad or not self.routes:
            raise ConfigError(f"routes must be a non-empty subset of {ROUTES}")
        if "transform" not in self.routes:
            raise ConfigError("the transform route is required (it carries the CEI estimate)")

    @classmethod
    def from_dict(cls, data: dict) -> "ScenarioConfig":
        """Accepts flat keys or the sections ``market``, ``payoff``, ``info``, ``numerics``."""
        flat: dict = {}
        for key, value in data.items():
            if isinstance(value, dict):
                flat.update(value)
            else:
                flat[key] = value
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(flat) - names
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        if "routes" in flat:
            flat["routes"] = tuple(flat["routes"])
        try:
            return cls(**flat)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["routes"] = list(self.routes)
        return d

    def replace(self, **changes) -> "ScenarioConfig":
        return dataclasses.replace(self, **changes)

    @property
    def market(self) -> MarketParams:
        return MarketParams(self.s0, self.mu, self.sigma, self.horizon)

    @property
    def info_model(self) -> GaussianInfoModel:
        return GaussianInfoModel(self.horizon, self.epsilon)

    @property
    def basis(self) -> PolynomialBasis:
        return PolynomialBasis(self.degree)

    def atom_grid(self) -> UGrid:
        return self.info_model.grid(self.n_atoms, self.grid)


@dataclass
class ScenarioReport:
    """Summaries of one scenario run. Arrays are per atom."""

    config: ScenarioConfig
    atoms: np.ndarray
    weights: np.ndarray
    base_value: float
    base_stderr: float
    insider_value: dict[str, np.ndarray]
    cei: np.ndarray
    cei_stderr: np.ndarray
    expected_cei: float
    expected_cei_stderr: float
    route_gaps: np.ndarray
    density: dict
    skorokhod: dict
    second_moments: dict
    min_ess: np.ndarray | None = None
    errors: list[str] = field(default_factory=list)

    @property
    def max_route_gap(self) -> float:
        return float(np.max(self.route_gaps)) if self.route_gaps.size else 0.0

    def cei_sign_violations(self, n_se: float = 3.0) -> np.ndarray:
        """Atoms whose CEI is below ``-n_se`` standard errors."""
        return np.flatnonzero(self.cei < -n_se * self.cei_stderr)

    def to_dict(self) -> dict:
        def fl(a):
            return [float(v) for v in np.asarray(a)]

        return {
            "schema_version": SCHEMA_VERSION,
            "config": self.config.to_dict(),
            "base_value": self.base_value,
            "base_stderr": self.base_stderr,
            "atoms": fl(self.atoms),
            "weights": fl(self.weights),
            "insider_value": {k: fl(v) for k, v in self.insider_value.items()},
            "cei": fl(self.cei),
            "cei_stderr": fl(self.cei_stderr),
            "expected_cei": self.expected_cei,
            "expected_cei_stderr": self.expected_cei_stderr,
            "route_gaps": fl(self.route_gaps),
            "max_route_gap": self.max_route_gap,
            "density": self.density,
            "skorokhod": self.skorokhod,
            "second_moments": self.second_moments,
            "min_ess": None if self.min_ess is None else fl(self.min_ess),
            "errors": list(self.errors),
        }

    def atom_rows(self) -> tuple[list[str], list[list]]:
        header = ["atom", "u", "weight", *(f"insider_{r}" for r in self.insider_value), "cei", "cei_stderr", "route_gap"]
        rows = []
        for i, (u, w) in enumerate(zip(self.atoms, self.weights)):
            rows.append([i, float(u), float(w), *(float(v[i]) for v in self.insider_value.values()),
                         float(self.cei[i]), float(self.cei_stderr[i]),
                         float(self.route_gaps[i]) if self.route_gaps.size else 0.0])
        return header, rows


def _stderr(x: np.ndarray) -> float:
    return float(x.std(ddof=1) / math.sqrt(x.size))


def _relative_gap(values: list[float]) -> float:
    lo, hi = min(values), max(values)
    if lo <= 0:
        return math.inf if hi > lo else 0.0
    return (hi - lo) / lo


def run_scenario(config: ScenarioConfig, threads: int = 1) -> ScenarioReport:
    """Base value, per-atom insider values by each route, CEI with standard errors and diagnostics.

    Per-atom solver failures are collected in ``errors`` and leave NaNs; only a
    failing base solve or path simulation propagates.
    """
    grid = config.atom_grid()
    paths = simulate_paths(config.market, config.n_paths, config.n_steps, config.seed, threads)
    payoff = PathPayoff.from_state(paths, payoff_function(config.kind, config.strike))
    density = gaussian_density_on_paths(config.info_model, paths.brownian, paths.times, grid)
    basis = config.basis

    base = solve_rbsde(paths, payoff.barrier, payoff.terminal, basis=basis)
    base_realized = base.realized
    m = grid.size

    def one(i: int) -> dict:
        out: dict = {"values": {}, "errors": [], "skorokhod": {}, "moments": {}}
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            try:
                par = solve_parametrized_rbsde(paths, payoff, density, basis, atoms=[i])[0]
                tr = transform_solution(par, density, i)
                out["values"]["transform"] = tr.y0
                out["realized"] = tr.realized
                out["skorokhod"]["parametrized"] = abs(par.info["skorokhod"])
                out["skorokhod"]["transform"] = abs(tr.info["skorokhod"])
                out["moments"] = tr.second_moments()
                del par, tr
            except Exception as exc:  # noqa: BLE001 - collected into the report
                out["errors"].append(f"atom {i} transform: {exc}")
            if "enlarged" in config.routes:
                try:
                    en = solve_enlarged_rbsde(paths, payoff, density, i, basis, scheme=config.enlarged_scheme)
                    out["values"]["enlarged"] = en.y0
                    out["skorokhod"]["enlarged"] = abs(en.info["skorokhod"])
                    del en
                except Exception as exc:  # noqa: BLE001
                    out["errors"].append(f"atom {i} enlarged: {exc}")
            if "girsanov" in config.routes:
                try:
                    gi = girsanov_solve(paths, payoff, density, i, basis)
                    out["values"]["girsanov"] = gi.y0
                    out["skorokhod"]["girsanov"] = abs(gi.info["skorokhod"])
                    out["ess"] = gi.info["min_ess"]
                    del gi
                except Exception as exc:  # noqa: BLE001
                    out["errors"].append(f"atom {i} girsanov: {exc}")
        out["warnings"] = sorted({f"atom {i}: {w.category.__name__}: {w.message}" for w in caught})
        return out

    results = _map_atoms(one, range(m), threads)

    insider = {r: np.full(m, np.nan) for r in config.routes}
    cei_arr = np.full(m, np.nan)
    cei_se = np.full(m, np.nan)
    gaps = np.full(m, np.nan) if len(config.routes) > 1 else np.zeros(0)
    weighted = np.zeros(config.n_paths)
    skor = {"base": abs(base.info["skorokhod"])}
    moments: dict = {"base": base.second_moments()}
    ess = np.full(m, np.nan) if "girsanov" in config.routes else None
    errors: list[str] = []
    complete = True
    for i, res in enumerate(results):
        errors += res["errors"] + res["warnings"]
        for r, v in res["values"].items():
            insider[r][i] = v
        for key, v in res["skorokhod"].items():
            skor[key] = max(skor.get(key, 0.0), v)
        for key, v in res["moments"].items():
            moments.setdefault("transform_max", {})
            moments["transform_max"][key] = max(moments["transform_max"].get(key, 0.0), v)
        if ess is not None and "ess" in res:
            ess[i] = res["ess"]
        if "realized" in res:
            diff = res["realized"] - base_realized
            cei_arr[i] = insider["transform"][i] - base.y0
            cei_se[i] = _stderr(diff)
            weighted += grid.weights[i] * diff
        else:
            complete = False
        if gaps.size and len(res["values"]) == len(config.routes):
            gaps[i] = _relative_gap(list(res["values"].values()))

    if complete:
        expected = float(grid.weights @ insider["transform"] - base.y0)
        expected_se = _stderr(weighted)
    else:
        expected, expected_se = math.nan, math.nan

    diag = verify_density(density, normalize=False).as_dict()
    times = paths.times
    b_probe = np.linspace(-3.0, 3.0, 13) * math.sqrt(config.horizon)
    diag["quadrature_normalization_error"] = max(
        gaussian_normalization_error(config.info_model, float(t), b_probe) for t in times
    )
    diag["grid_normalization_error"] = float(max(np.max(np.abs(a @ grid.weights - 1.0)) for a in density.alpha))
    diag = {k: (None if v is None else float(v)) for k, v in diag.items()}

    return ScenarioReport(
        config=config,
        atoms=grid.atoms,
        weights=grid.weights,
        base_value=base.y0,
        base_stderr=_stderr(base_realized),
        insider_value=insider,
        cei=cei_arr,
        cei_stderr=cei_se,
        expected_cei=expected,
        expected_cei_stderr=expected_se,
        route_gaps=gaps,
        density=diag,
        skorokhod=skor,
        second_moments=moments,
        min_ess=ess,
        errors=errors,
    )


def european_value(config: ScenarioConfig) -> tuple[float, float]:
    """Monte Carlo mean and standard error of the terminal payoff on the scenario's paths."""
    paths = simulate_paths(config.market, config.n_paths, config.n_steps, config.seed)
    xi = payoff_function(config.kind, config.strike)(paths.state[:, -1])
    return float(xi.mean()), _stderr(xi)


@dataclass
class LatticeOracleResult:
    lattice: FiltrationLattice
    grid: UGrid
    valuation: InsiderValuation

    @property
    def base_value(self) -> float:
        return float(self.valuation.base_value[0][0])

    @property
    def insider_value(self) -> np.ndarray:
        return self.valuation.insider_value[0][0]

    @property
    def expected_cei(self) -> float:
        return self.valuation.expected_cei_0()


def matched_lattice_oracle(config: ScenarioConfig, n_steps: int | None = None, independent: bool = False) -> LatticeOracleResult:
    """Exact values on a binomial surrogate of the scenario.

    ``B`` moves by ``+-sqrt(dt)`` with probability 1/2 and ``S = s0 exp((mu -
    sigma^2/2) t + sigma B)``. Given the terminal node, ``G`` takes the atom
    ``u_i`` with probability proportional to ``w_i alpha_T(u_i)``; the grid
    weights are replaced by the law this implies. ``independent`` uses
    ``alpha = 1`` instead.
    """
    n = config.n_steps if n_steps is None else n_steps
    if n > ORACLE_MAX_STEPS or config.n_atoms > ORACLE_MAX_ATOMS:
        raise ExplosionError(f"surrogate limited to {ORACLE_MAX_STEPS} steps x {ORACLE_MAX_ATOMS} atoms")
    dt = config.horizon / n
    sq = math.sqrt(dt)
    walk = build_binomial(1.0, 2.0, 0.5, 0.5, n)  # only the transitions are used
    b_levels = [np.arange(k + 1) * 2 * sq - k * sq for k in range(n + 1)]
    states = tuple(
        config.s0 * np.exp((config.mu - 0.5 * config.sigma**2) * k * dt + config.sigma * b)
        for k, b in enumerate(b_levels)
    )
    lat = FiltrationLattice(states, walk.transitions, recombining=True)
    payoff = PayoffSpec.from_function(lat, payoff_function(config.kind, config.strike))
    grid = config.atom_grid()
    if independent:
        density = independent_density(lat, grid)
    else:
        g = grid.weights[None, :] * gaussian_density(
            config.info_model, b_levels[-1][:, None], config.horizon, grid.atoms[None, :]
        )
        g /= g.sum(axis=1, keepdims=True)
        w = implied_law(lat, g)
        grid = UGrid(grid.atoms, w / w.sum())
        density = lattice_density(lat, g, grid)
    return LatticeOracleResult(lat, grid, value_insider(lat, payoff, density))


def epsilon_sweep(config: ScenarioConfig, epsilons=(0.1, 1.0, 10.0, 100.0), threads: int = 1) -> list[ScenarioReport]:
    """Transform-route reports for each noise level on common paths."""
    return [run_scenario(config.replace(epsilon=float(e), routes=("transform",)), threads) for e in epsilons]
