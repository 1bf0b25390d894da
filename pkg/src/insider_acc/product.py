"""Insider value, projection value and cost of extra information on a lattice.

The buyer who knows ``G`` at time 0 chooses from a family of stopping rules,
one per atom ``u``. Weighting the reward by the density process turns that
problem into one ordinary Snell envelope per atom:

    Y_k(u) = max(L_k alpha_k(u), E[Y_{k+1}(u) | F_k]),   Y_N(u) = xi alpha_N(u)

and the insider's value given ``G = u`` is ``Y_k(u) / alpha_k(u)``.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .density import DensityProcess, UGrid
from .lattice import (
    ExplosionError,
    FiltrationLattice,
    PayoffSpec,
    Process,
    ShapeError,
    SnellResult,
    StoppingRule,
    enumerate_paths,
)

DEGENERATE_ALPHA = 1e-300
ORACLE_MAX_STEPS = 12
ORACLE_MAX_ATOMS = 64


@dataclass(frozen=True)
class ProductPayoff:
    """``values[k][node, i]``: the alpha-weighted reward at atom ``u_i``."""

    values: tuple[np.ndarray, ...]

    @property
    def n_atoms(self) -> int:
        return self.values[0].shape[1]


def product_payoff(payoff: PayoffSpec, density: DensityProcess) -> ProductPayoff:
    reward = payoff.reward()
    if len(reward) != density.n_times:
        raise ShapeError("payoff and density cover different time grids")
    values = []
    for r, a in zip(reward, density.alpha):
        if r.shape[0] != a.shape[0]:
            raise ShapeError("payoff and density differ in node count")
        values.append(r[:, None] * a)
    return ProductPayoff(tuple(values))


@dataclass
class ParametrizedSnell:
    """One Snell envelope per atom, stored column-wise (``value[k][node, i]``)."""

    value: Process
    exercise: Process
    increments: Process
    continuation: Process

    @property
    def n_atoms(self) -> int:
        return self.value[0].shape[1]

    def atom(self, i: int) -> SnellResult:
        return SnellResult(
            [v[:, i] for v in self.value],
            StoppingRule(tuple(e[:, i] for e in self.exercise)),
            [d[:, i] for d in self.increments],
            [c[:, i] for c in self.continuation],
        )


def parametrized_snell(lattice: FiltrationLattice, payoff: ProductPayoff, grid: UGrid | None = None) -> ParametrizedSnell:
    """Per-atom Snell envelopes of the product payoff (all atoms in one sweep)."""
    vals = payoff.values
    if len(vals) != lattice.n_steps + 1:
        raise ShapeError("product payoff does not match the lattice time grid")
    if grid is not None and payoff.n_atoms != grid.size:
        raise ShapeError("product payoff and grid disagree on the atom count")
    n = lattice.n_steps
    y = [None] * (n + 1)
    ex = [None] * (n + 1)
    dk = [None] * (n + 1)
    cont = [None] * (n + 1)
    y[n] = vals[n]
    ex[n] = np.ones(vals[n].shape, dtype=bool)
    dk[n] = np.zeros_like(vals[n])
    cont[n] = vals[n]
    for k in range(n - 1, -1, -1):
        c = lattice.step_expectation(k, y[k + 1])
        b = vals[k]
        stop = b >= c
        y[k] = np.where(stop, b, c)
        ex[k] = stop
        dk[k] = np.maximum(b - c, 0.0)
        cont[k] = c
    return ParametrizedSnell(y, ex, dk, cont)


def insider_value(
    parametrized: ParametrizedSnell,
    density: DensityProcess,
    t: int,
    node: int | None = None,
    atom: int | None = None,
):
    """``V^G_t = Y_t(u) / alpha_t(u)``; full ``(node, atom)`` slice when indices are omitted."""
    y = parametrized.value[t]
    a = density.alpha[t]
    if node is not None:
        y, a = y[node], a[node]
    if atom is not None:
        y, a = y[..., atom], a[..., atom]
    if np.any(np.asarray(a) < DEGENERATE_ALPHA):
        raise ZeroDivisionError("density too close to zero to recover the insider value")
    return y / a


def insider_value_process(parametrized: ParametrizedSnell, density: DensityProcess) -> Process:
    return [insider_value(parametrized, density, k) for k in range(density.n_times)]


def projection_value(
    parametrized: ParametrizedSnell,
    grid: UGrid,
    density: DensityProcess,
    t: int,
    node: int | None = None,
    weighting: str = "conditional",
):
    """Best F_t-conditional expected reward for a buyer who stops on ``F v sigma(G)`` information.

    ``weighting="conditional"`` integrates the insider value against the
    conditional law, ``sum_i Yhat_t(u_i) alpha_t(u_i) w_i``;
    ``"unconditional"`` integrates ``Y_t(u)`` against ``P^G``. The two agree
    because ``Y = Yhat * alpha``.
    """
    if weighting == "conditional":
        yhat = insider_value(parametrized, density, t)
        out = (yhat * density.alpha[t]) @ grid.weights
    elif weighting == "unconditional":
        out = parametrized.value[t] @ grid.weights
    else:
        raise ValueError(f"unknown weighting {weighting!r}")
    return out if node is None else out[node]


def cei(insider, base):
    """Cost of extra information ``V^G_t(u) - Y_t``, broadcasting ``base`` over atoms."""
    insider = np.asarray(insider, dtype=float)
    base = np.asarray(base, dtype=float)
    if insider.ndim == base.ndim + 1:
        base = base[..., None]
    return insider - base


@dataclass
class InsiderValuation:
    """Everything the lattice backend reports, level by level.

    ``cei[k][node, i]`` is the cost of extra information given ``G = u_i``;
    ``expected_cei[k][node]`` is its F_k-conditional expectation (projection
    value minus base value). ``cei_roundoff`` marks entries inside
    ``[-1e-12, 0)``, i.e. zero up to rounding. Entries at nodes that are
    impossible given ``G = u`` (``alpha = 0``) are NaN.
    """

    grid: UGrid
    alpha: Process
    product_value: Process
    insider_value: Process
    projection_value: Process
    base_value: Process
    cei: Process
    expected_cei: Process
    base: SnellResult
    parametrized: ParametrizedSnell

    @property
    def cei_roundoff(self) -> Process:
        return [(c < 0) & (c >= -1e-12) for c in self.cei]  # NaN compares False

    def expected_cei_0(self) -> float:
        return float(self.expected_cei[0][0])

    def summary(self) -> dict:
        return {
            "base_value": float(self.base_value[0][0]),
            "projection_value": float(self.projection_value[0][0]),
            "insider_value": {repr(float(u)): float(v) for u, v in zip(self.grid.atoms, self.insider_value[0][0])},
            "expected_cei": self.expected_cei_0(),
            "min_cei": float(min(np.nanmin(c) for c in self.cei)),
            "min_expected_cei": float(min(c.min() for c in self.expected_cei)),
        }

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["time", "node", "atom", "Y_u", "alpha", "insider_value", "cei"])
            for k, (yu, a, v, c) in enumerate(zip(self.product_value, self.alpha, self.insider_value, self.cei)):
                for j in range(yu.shape[0]):
                    for i, u in enumerate(self.grid.atoms):
                        w.writerow([k, j, repr(float(u)), repr(float(yu[j, i])), repr(float(a[j, i])),
                                    repr(float(v[j, i])), repr(float(c[j, i]))])

    def summary_json(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.summary(), indent=2, sort_keys=True))


def value_insider(lattice: FiltrationLattice, payoff: PayoffSpec, density: DensityProcess) -> InsiderValuation:
    """Base Snell envelope, per-atom insider values, projection value and CEI in one pass."""
    from .lattice import snell_envelope

    base = snell_envelope(lattice, payoff)
    par = parametrized_snell(lattice, product_payoff(payoff, density), density.grid)
    # nodes with alpha = 0 cannot occur given G = u; their insider value is left undefined
    ins = [
        np.divide(y, a, out=np.full_like(y, np.nan), where=a >= DEGENERATE_ALPHA)
        for y, a in zip(par.value, density.alpha)
    ]
    proj = [y @ density.grid.weights for y in par.value]
    c = [cei(v, y) for v, y in zip(ins, base.value)]
    # at maturity both values are xi; subtracting them again would only add rounding
    c[-1] = np.where(np.isnan(ins[-1]), np.nan, 0.0)
    ecei = [p - y for p, y in zip(proj, base.value)]
    ecei[-1] = np.zeros_like(ecei[-1])
    return InsiderValuation(density.grid, density.alpha, par.value, ins, proj, base.value, c, ecei, base, par)


def _conditional_laws_by_paths(lattice: FiltrationLattice, g_map: np.ndarray, cap: int) -> list[np.ndarray]:
    """``P(G = u | node)`` for every node, summing over explicit paths to maturity."""
    out = []
    for k, n in enumerate(lattice.sizes):
        rows = np.zeros((n, g_map.shape[1]))
        for i in range(n):
            for leaf, prob in enumerate_paths(lattice, k, i, cap=cap):
                rows[i] += prob * g_map[leaf]
        out.append(rows)
    return out


def enlarged_dp_oracle(
    lattice: FiltrationLattice,
    payoff: PayoffSpec,
    g_map: np.ndarray,
    grid: UGrid,
    t: int = 0,
    path_cap: int = 1_000_000,
) -> np.ndarray:
    """Insider value by dynamic programming on the tree conditioned on ``G = u``.

    Works with the original reward and the conditioned transition
    probabilities ``p(n -> c | G = u) = p(n -> c) P(G=u | c) / P(G=u | n)``.
    No density process or weighted reward is involved. Returns the level-``t``
    values with shape ``(n_t, n_atoms)``.
    """
    g_map = np.asarray(g_map, dtype=float)
    if lattice.n_steps > ORACLE_MAX_STEPS or grid.size > ORACLE_MAX_ATOMS:
        raise ExplosionError(
            f"oracle limited to {ORACLE_MAX_STEPS} steps x {ORACLE_MAX_ATOMS} atoms"
        )
    if g_map.shape != (lattice.sizes[-1], grid.size):
        raise ShapeError("g_map must have one row per terminal node and one column per atom")
    payoff.check(lattice)
    law = _conditional_laws_by_paths(lattice, g_map, path_cap)
    if np.any(law[0][0] <= 0):
        raise ValueError("some atom is unreachable")
    reward = payoff.reward()
    n = lattice.n_steps
    m = grid.size
    v = [[float(reward[n][j])] * m for j in range(lattice.sizes[n])]
    for k in range(n - 1, t - 1, -1):
        level = []
        for i in range(lattice.sizes[k]):
            idx, p = lattice.children(k, i)
            row = []
            for a in range(m):
                h = law[k][i, a]
                if h <= 0:
                    row.append(float(reward[k][i]))
                    continue
                cont = 0.0
                for j, q in zip(idx, p):
                    cont += q * law[k + 1][j, a] / h * v[j][a]
                row.append(max(float(reward[k][i]), cont))
            level.append(row)
        v = level
    return np.asarray(v)


def oracle_projection(lattice: FiltrationLattice, g_map: np.ndarray, oracle_values: np.ndarray, t: int = 0) -> np.ndarray:
    """``E[V^G_t | F_t]`` per level-``t`` node, weighting oracle values by ``P(G=u | node)``."""
    g_map = np.asarray(g_map, dtype=float)
    out = np.zeros(lattice.sizes[t])
    for i in range(lattice.sizes[t]):
        h = np.zeros(g_map.shape[1])
        for leaf, prob in enumerate_paths(lattice, t, i):
            h += prob * g_map[leaf]
        out[i] = h @ oracle_values[i]
    return out


def conditioned_lattice(lattice: FiltrationLattice, density: DensityProcess, atom: int) -> FiltrationLattice:
    """The lattice under ``P(. | G = u_atom)``: transitions reweighted by alpha ratios."""
    from scipy import sparse

    trans = []
    for k, t in enumerate(lattice.transitions):
        coo = t.tocoo()
        a_now = density.alpha[k][coo.row, atom]
        a_next = density.alpha[k + 1][coo.col, atom]
        data = coo.data * a_next / a_now
        trans.append(sparse.csr_matrix((data, (coo.row, coo.col)), shape=t.shape))
    return FiltrationLattice(lattice.states, tuple(trans), lattice.recombining)
