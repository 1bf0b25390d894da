"""Conditional-density processes of the insider's extra information.

``alpha_t(u)`` is the density of the conditional law of ``G`` given ``F_t``
with respect to its unconditional law. On a lattice it is computed exactly by
backward aggregation of the terminal conditional laws; for ``G = B_T + X``
with Gaussian noise ``X`` it has a closed form in the current Brownian value.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import stats

from .lattice import FiltrationLattice, ShapeError, conditional_expectation

WEIGHT_TOL = 1e-12
LAW_TOL = 1e-10
DEFAULT_SMOOTHING = 1e-6


class EquivalenceViolation(ValueError):
    """The conditional law of G is not equivalent to its unconditional law."""


@dataclass(frozen=True)
class UGrid:
    """Discretised law of ``G``: strictly increasing atoms with positive weights."""

    atoms: np.ndarray
    weights: np.ndarray

    def __post_init__(self) -> None:
        atoms = np.asarray(self.atoms, dtype=float).ravel()
        weights = np.asarray(self.weights, dtype=float).ravel()
        object.__setattr__(self, "atoms", atoms)
        object.__setattr__(self, "weights", weights)
        if atoms.shape != weights.shape or atoms.size == 0:
            raise ShapeError("atoms and weights must be non-empty and of equal length")
        if np.any(np.diff(atoms) <= 0):
            raise ValueError("atoms must be strictly increasing")
        if np.any(weights <= 0):
            raise ValueError("atom weights must be positive")
        if abs(weights.sum() - 1.0) > WEIGHT_TOL:
            raise ValueError(f"weights sum to {weights.sum()!r}, not 1")

    @property
    def size(self) -> int:
        return self.atoms.size

    @classmethod
    def quantile(cls, variance: float, n_atoms: int = 32) -> "UGrid":
        """Equal-weight atoms at the mid-quantiles of ``N(0, variance)``."""
        q = (np.arange(n_atoms) + 0.5) / n_atoms
        return cls(stats.norm.ppf(q) * np.sqrt(variance), np.full(n_atoms, 1.0 / n_atoms))

    @classmethod
    def gauss_hermite(cls, variance: float, n_atoms: int = 32) -> "UGrid":
        """Gauss-Hermite nodes and weights for ``N(0, variance)``."""
        x, w = np.polynomial.hermite_e.hermegauss(n_atoms)
        w = w / w.sum()
        return cls(x * np.sqrt(variance), w)


@dataclass
class DensityProcess:
    """``alpha[k]`` has one row per node (lattice) or path (ensemble) and one column per atom.

    ``logistic_ratio`` holds ``beta/alpha`` with the same layout when known.
    """

    alpha: list[np.ndarray]
    grid: UGrid
    logistic_ratio: list[np.ndarray] | None = None
    times: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        for k, a in enumerate(self.alpha):
            if a.ndim != 2 or a.shape[1] != self.grid.size:
                raise ShapeError(f"alpha at time {k} must have one column per atom")
        if self.logistic_ratio is not None:
            if len(self.logistic_ratio) != len(self.alpha):
                raise ShapeError("logistic_ratio must cover the same times as alpha")

    @property
    def n_times(self) -> int:
        return len(self.alpha)

    def at_atom(self, i: int) -> list[np.ndarray]:
        return [a[:, i] for a in self.alpha]

    def to_csv(self, path: str | Path, id_label: str = "node") -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["time", id_label, "atom", "alpha", "logistic_ratio"])
            for k, a in enumerate(self.alpha):
                t = k if self.times is None else self.times[k]
                lr = None if self.logistic_ratio is None else self.logistic_ratio[k]
                for j in range(a.shape[0]):
                    for i, u in enumerate(self.grid.atoms):
                        w.writerow([
                            repr(float(t)), j, repr(float(u)), repr(float(a[j, i])),
                            "" if lr is None else repr(float(lr[j, i])),
                        ])


def smooth_law(g_map: np.ndarray, rate: float = DEFAULT_SMOOTHING) -> np.ndarray:
    """Mix each conditional law with the uniform law on the atoms."""
    g_map = np.asarray(g_map, dtype=float)
    return (1.0 - rate) * g_map + rate / g_map.shape[1]


def implied_law(lattice: FiltrationLattice, g_map: np.ndarray) -> np.ndarray:
    """Unconditional law of G implied by per-terminal-node conditional laws."""
    return conditional_expectation(lattice, np.asarray(g_map, dtype=float), 0)[0]


def lattice_density(
    lattice: FiltrationLattice,
    g_map: np.ndarray,
    grid: UGrid,
    smoothing: float | None = None,
) -> DensityProcess:
    """Exact density process ``alpha_k(node, u) = P(G=u | node) / P(G=u)``.

    ``g_map[j, i]`` is ``P(G = atoms[i] | terminal node j)``. With
    ``smoothing`` the laws (and the grid weights, consistently) are mixed with
    the uniform law so that no atom carries zero conditional mass.
    """
    g_map = np.asarray(g_map, dtype=float)
    n_term = lattice.sizes[-1]
    if g_map.shape != (n_term, grid.size):
        raise ShapeError(f"g_map must have shape {(n_term, grid.size)}, got {g_map.shape}")
    if np.any(g_map < 0) or np.max(np.abs(g_map.sum(axis=1) - 1.0)) > LAW_TOL:
        raise ValueError("each terminal conditional law must be a probability vector")
    if smoothing is not None:
        g_map = smooth_law(g_map, smoothing)
        grid = UGrid(grid.atoms, smooth_law(grid.weights[None, :], smoothing)[0])
    if np.any(g_map <= 0):
        raise EquivalenceViolation("some atom has zero conditional probability; use smoothing")
    cond = [None] * (lattice.n_steps + 1)
    cond[-1] = g_map
    for k in range(lattice.n_steps - 1, -1, -1):
        cond[k] = lattice.step_expectation(k, cond[k + 1])
    mismatch = np.max(np.abs(cond[0][0] - grid.weights))
    if mismatch > LAW_TOL:
        raise EquivalenceViolation(
            f"implied law of G differs from the grid weights by {mismatch:.3e}"
        )
    alpha = [c / grid.weights[None, :] for c in cond]
    return DensityProcess(alpha, grid, meta={"support": "lattice"})


def independent_density(lattice: FiltrationLattice, grid: UGrid) -> DensityProcess:
    """``alpha == 1``: G independent of the market."""
    alpha = [np.ones((n, grid.size)) for n in lattice.sizes]
    return DensityProcess(alpha, grid, meta={"support": "lattice"})


@dataclass(frozen=True)
class GaussianInfoModel:
    """Insider observes ``G = B_T + X`` with ``X ~ N(0, noise_var)`` independent of B."""

    horizon: float
    noise_var: float

    def __post_init__(self) -> None:
        if not self.horizon > 0:
            raise ValueError("horizon T must be positive")
        if not self.noise_var > 0:
            raise EquivalenceViolation(
                "noise variance epsilon must be positive: with epsilon = 0 the law of G "
                "given F_T is a point mass and the density hypothesis fails"
            )

    @property
    def law_variance(self) -> float:
        return self.horizon + self.noise_var

    def grid(self, n_atoms: int = 32, kind: str = "quantile") -> UGrid:
        if kind == "quantile":
            return UGrid.quantile(self.law_variance, n_atoms)
        if kind in ("gauss", "gauss_hermite"):
            return UGrid.gauss_hermite(self.law_variance, n_atoms)
        raise ValueError(f"unknown grid kind {kind!r}")

    def _remaining(self, t):
        t = np.asarray(t, dtype=float)
        if np.any(t < 0) or np.any(t > self.horizon * (1 + 1e-12)):
            raise ValueError(f"t must lie in [0, {self.horizon}]")
        return np.maximum(self.horizon - t, 0.0) + self.noise_var


def gaussian_density(model: GaussianInfoModel, b_t, t, u):
    """Closed-form ``alpha_t(u)`` given ``B_t = b_t``; broadcasts over its arguments."""
    v = model._remaining(t)
    b_t = np.asarray(b_t, dtype=float)
    u = np.asarray(u, dtype=float)
    s = model.law_variance
    return np.sqrt(s / v) * np.exp(-((u - b_t) ** 2) / (2.0 * v) + u**2 / (2.0 * s))


def gaussian_log_density(model: GaussianInfoModel, b_t, t, u):
    v = model._remaining(t)
    s = model.law_variance
    b_t = np.asarray(b_t, dtype=float)
    u = np.asarray(u, dtype=float)
    return 0.5 * np.log(s / v) - (u - b_t) ** 2 / (2.0 * v) + u**2 / (2.0 * s)


def gaussian_logistic_ratio(model: GaussianInfoModel, b_t, t, u):
    """``beta_t(u) / alpha_t(u) = (u - B_t) / (T - t + eps)``."""
    v = model._remaining(t)
    return (np.asarray(u, dtype=float) - np.asarray(b_t, dtype=float)) / v


def gaussian_density_on_paths(
    model: GaussianInfoModel,
    brownian: np.ndarray,
    times: np.ndarray,
    grid: UGrid,
) -> DensityProcess:
    """Evaluate alpha and beta/alpha along simulated Brownian paths ``(n_paths, n_times)``."""
    brownian = np.asarray(brownian, dtype=float)
    times = np.asarray(times, dtype=float)
    if brownian.shape[1] != times.size:
        raise ShapeError("brownian must have one column per time")
    u = grid.atoms[None, :]
    alpha, ratio = [], []
    for k, t in enumerate(times):
        b = brownian[:, k:k + 1]
        alpha.append(gaussian_density(model, b, t, u))
        ratio.append(gaussian_logistic_ratio(model, b, t, u))
    return DensityProcess(alpha, grid, ratio, times=times, meta={"support": "paths"})


def gaussian_normalization_error(model: GaussianInfoModel, t: float, b_values, n_nodes: int = 200) -> float:
    """max over ``b_values`` of ``|int alpha_t(u) dP^G(u) - 1|`` by Gauss-Legendre quadrature.

    The window is centred at each ``b`` and is ten unconditional standard
    deviations wide on each side, so truncation stays far below the tolerance.
    """
    half = 10.0 * np.sqrt(model.law_variance)
    x, w = np.polynomial.legendre.leggauss(n_nodes)
    b = np.atleast_1d(np.asarray(b_values, dtype=float))
    u = b[:, None] + half * x[None, :]
    pdf = stats.norm.pdf(u, scale=np.sqrt(model.law_variance))
    vals = gaussian_density(model, b[:, None], t, u) * pdf
    integral = half * (vals @ w)
    return float(np.max(np.abs(integral - 1.0)))


@dataclass
class DensityDiagnostics:
    normalization_error: float
    martingale_defect: float
    min_alpha: float
    max_alpha: float
    max_zscore: float | None = None
    martingale_stderr: float | None = None

    def as_dict(self) -> dict:
        return {k: v for k, v in self.__dict__.items()}


def verify_density(
    density: DensityProcess,
    support: FiltrationLattice | None = None,
    grid: UGrid | None = None,
    normalize: bool = True,
) -> DensityDiagnostics:
    """Normalisation, martingale and positivity diagnostics.

    With a lattice ``support`` the martingale defect is the exact
    ``max |E[alpha_{k+1} | F_k] - alpha_k|``. Otherwise the alphas are treated as
    path samples: the defect is ``max |mean_paths alpha_k - alpha_0|`` and
    ``max_zscore`` expresses it in standard errors.
    """
    grid = density.grid if grid is None else grid
    w = grid.weights
    norm_err = 0.0
    if normalize:
        norm_err = max(float(np.max(np.abs(a @ w - 1.0))) for a in density.alpha)
    min_a = min(float(a.min()) for a in density.alpha)
    max_a = max(float(a.max()) for a in density.alpha)
    if isinstance(support, FiltrationLattice):
        if support.sizes != [a.shape[0] for a in density.alpha]:
            raise ShapeError("density does not live on this lattice")
        defect = 0.0
        for k in range(support.n_steps):
            e = support.step_expectation(k, density.alpha[k + 1])
            defect = max(defect, float(np.max(np.abs(e - density.alpha[k]))))
        defect = max(defect, float(np.max(np.abs(density.alpha[0] - 1.0))))
        return DensityDiagnostics(norm_err, defect, min_a, max_a)
    a0 = density.alpha[0].mean(axis=0)
    defect, zmax, se_at = 0.0, 0.0, 0.0
    for a in density.alpha[1:]:
        n = a.shape[0]
        m = a.mean(axis=0)
        se = a.std(axis=0, ddof=1) / np.sqrt(n)
        d = np.abs(m - a0)
        z = np.where(se > 0, d / np.where(se > 0, se, 1.0), np.where(d > 0, np.inf, 0.0))
        i = int(np.argmax(z))
        if z[i] >= zmax:
            zmax, se_at = float(z[i]), float(se[i])
        defect = max(defect, float(d.max()))
    return DensityDiagnostics(norm_err, defect, min_a, max_a, zmax, se_at)


def density_bound_check(density: DensityProcess | np.ndarray, threshold: float) -> tuple[bool, float]:
    """Whether ``alpha <= threshold`` everywhere on the computed support, and the max."""
    if isinstance(density, DensityProcess):
        m = max(float(a.max()) for a in density.alpha)
    else:
        m = float(np.max(density))
    return m <= threshold, m


def gaussian_density_max(
    model: GaussianInfoModel,
    u_range: tuple[float, float] = (-3.0, 3.0),
    b_range: tuple[float, float] = (-3.0, 3.0),
    n_grid: int = 241,
    n_times: int = 51,
) -> float:
    """Grid-scan maximum of alpha over ``u``, ``B_t`` and ``t in [0, T]``."""
    u = np.linspace(*u_range, n_grid)
    b = np.linspace(*b_range, n_grid)
    best = 0.0
    for t in np.linspace(0.0, model.horizon, n_times):
        best = max(best, float(gaussian_density(model, b[:, None], t, u[None, :]).max()))
    return best


def novikov_estimate(density: DensityProcess, dt: float) -> np.ndarray:
    """Monte Carlo ``E[exp(0.5 * int (beta/alpha)^2 dt)]`` per atom (left-point sums).

    Only a finite-sample stand-in for Novikov's condition; heavy tails show up
    as unstable estimates rather than as an error.
    """
    if density.logistic_ratio is None:
        raise ValueError("logistic ratio required")
    acc = sum(r**2 for r in density.logistic_ratio[:-1]) * dt
    return np.exp(0.5 * acc).mean(axis=0)


def conditional_law_from_density(density: DensityProcess, k: int) -> np.ndarray:
    """``P(G = u_i | node)`` rows at time ``k``."""
    return density.alpha[k] * density.grid.weights[None, :]

