"""American contingent claims for a buyer who holds extra initial information."""
from __future__ import annotations

__version__ = "0.1.0"

from .density import DensityProcess, GaussianInfoModel, UGrid, lattice_density
from .lattice import FiltrationLattice, PayoffSpec, brute_force_value, snell_envelope
from .product import InsiderValuation, enlarged_dp_oracle, value_insider
from .rbsde import (
    MarketParams,
    PolynomialBasis,
    girsanov_solve,
    simulate_paths,
    solve_enlarged_rbsde,
    solve_parametrized_rbsde,
    solve_rbsde,
    transform_solution,
)
from .scenario import ScenarioConfig, matched_lattice_oracle, run_scenario

__all__ = [
    "DensityProcess",
    "FiltrationLattice",
    "GaussianInfoModel",
    "InsiderValuation",
    "MarketParams",
    "PayoffSpec",
    "PolynomialBasis",
    "ScenarioConfig",
    "UGrid",
    "brute_force_value",
    "enlarged_dp_oracle",
    "girsanov_solve",
    "lattice_density",
    "matched_lattice_oracle",
    "run_scenario",
    "simulate_paths",
    "snell_envelope",
    "solve_enlarged_rbsde",
    "solve_parametrized_rbsde",
    "solve_rbsde",
    "transform_solution",
    "value_insider",
]
