"""Small lattice instances shared by the checks, the tests and the scripts."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .density import DensityProcess, UGrid, implied_law, lattice_density
from .lattice import FiltrationLattice, PayoffSpec, build_binomial, random_tree


@dataclass
class LatticeInstance:
    lattice: FiltrationLattice
    payoff: PayoffSpec
    g_map: np.ndarray
    grid: UGrid
    density: DensityProcess


def random_payoff(rng: np.random.Generator, lattice: FiltrationLattice) -> PayoffSpec:
    """Either a put on the state or an arbitrary non-negative reward with ``L_N <= xi``."""
    if rng.random() < 0.5:
        strike = float(np.median(lattice.states[-1])) * rng.uniform(0.8, 1.2)
        return PayoffSpec.put(lattice, strike)
    barrier = [rng.uniform(0.0, 1.0, n) * (rng.random(n) < 0.8) for n in lattice.sizes]
    terminal = barrier[-1] + rng.uniform(0.0, 0.5, lattice.sizes[-1])
    return PayoffSpec(tuple(barrier), terminal)


def random_instance(rng: np.random.Generator, max_steps: int = 4, max_atoms: int = 8) -> LatticeInstance:
    """Random lattice, payoff and strictly positive information law.

    Trees stay small enough for brute force: binary non-recombining trees up
    to ``max_steps`` steps, ternary ones up to 3 steps, or recombining
    binomial trees.
    """
    n_steps = int(rng.integers(1, max_steps + 1))
    shape = rng.integers(3)
    if shape == 0:
        lat = random_tree(rng, n_steps, max_branch=2)
    elif shape == 1:
        lat = random_tree(rng, min(n_steps, 3), max_branch=3)
    else:
        lat = random_tree(rng, n_steps, recombine=True)
    m = int(rng.integers(1, max_atoms + 1))
    atoms = np.sort(rng.uniform(-2.0, 2.0, m))
    while np.any(np.diff(atoms) <= 1e-9):
        atoms = np.sort(rng.uniform(-2.0, 2.0, m))
    g = rng.dirichlet(np.full(m, 0.7), size=lat.sizes[-1]) + 1e-3
    g /= g.sum(axis=1, keepdims=True)
    w = implied_law(lat, g)
    grid = UGrid(atoms, w / w.sum())
    return LatticeInstance(lat, random_payoff(rng, lat), g, grid, lattice_density(lat, g, grid))


def one_step_tree() -> FiltrationLattice:
    """``S_0 = 1`` moving to 2 or 0.5 with probability 1/2 each."""
    return build_binomial(1.0, 2.0, 0.5, 0.5, 1)


def hand_case(strike: float = 1.5) -> LatticeInstance:
    """Put on the one-step tree with ``G = S_1`` revealed exactly.

    The terminal law is degenerate, so the density is built by hand:
    ``alpha_1(node, u) = 1{S_1 = u} / 0.5``.
    """
    lat = one_step_tree()
    g = np.eye(2)  # terminal node 0 is S = 0.5, node 1 is S = 2
    grid = UGrid(lat.states[-1], np.array([0.5, 0.5]))
    density = DensityProcess([np.ones((1, 2)), g / 0.5], grid, meta={"support": "lattice"})
    return LatticeInstance(lat, PayoffSpec.put(lat, strike), g, grid, density)
