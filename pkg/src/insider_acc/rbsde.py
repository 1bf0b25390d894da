"""Reflected BSDE solvers on simulated Brownian paths.

All solvers share one discretely reflected backward scheme

    Y_N = xi
    C_k = E_reg[Y_{k+1} | F_k] + f_k dt
    Y_k = max(L_k, C_k),   dK_k = Y_k - C_k,   Z_k = E_reg[Y_{k+1} dB_k | F_k] / dt

where ``E_reg`` is a least-squares projection on a polynomial basis of the
state. The insider routes differ only in barrier, driver and regression
weights:

* parametrized: barrier ``L alpha(u)``, terminal ``xi alpha_T(u)``, no driver;
  ``transform_solution`` divides by alpha afterwards;
* enlarged: original barrier with the information drift ``(beta/alpha) Zhat``
  as driver;
* Girsanov: original barrier, regressions weighted by ``alpha_{k+1}(u)``.
"""
from __future__ import annotations

import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .density import DensityProcess

RIDGE = 1e-8
COND_LIMIT = 1e12
ESS_FRACTION = 0.05
BLOCK_PATHS = 8192
MIN_ROWS_PER_COLUMN = 10


class RegressionWarning(RuntimeWarning):
    """Normal equations were rank deficient; a ridge penalty was added."""


class WeightDegeneracyWarning(RuntimeWarning):
    """Importance weights have a small effective sample size."""


class NonConvergence(RuntimeError):
    """Fixed-point sweeps did not settle within the allowed count."""


@dataclass(frozen=True)
class MarketParams:
    """Geometric dynamics ``dS = mu S dt + sigma S dB`` on ``[0, horizon]``."""

    s0: float = 100.0
    mu: float = 0.0
    sigma: float = 0.2
    horizon: float = 1.0

    def __post_init__(self) -> None:
        if self.s0 <= 0:
            raise ValueError("s0 must be positive")
        if self.sigma < 0:
            raise ValueError("sigma must be non-negative")
        if self.horizon <= 0:
            raise ValueError("horizon must be positive")


@dataclass
class PathEnsemble:
    n_paths: int
    n_steps: int
    dt: float
    brownian: np.ndarray
    state: np.ndarray
    seed: int
    params: MarketParams

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.n_steps + 1) * self.dt

    @property
    def increments(self) -> np.ndarray:
        return np.diff(self.brownian, axis=1)


def _block_normals(seed: int, block: int, rows: int, n_steps: int) -> np.ndarray:
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, block])))
    return rng.standard_normal((rows, n_steps))


def simulate_paths(params: MarketParams, n_paths: int, n_steps: int, seed: int, threads: int = 1) -> PathEnsemble:
    """Brownian paths and the exact log-Euler asset paths.

    Normals are drawn in fixed blocks of ``BLOCK_PATHS`` paths, each from its
    own Philox stream keyed by ``(seed, block)``, so the ensemble does not
    depend on ``threads``.
    """
    if n_paths < 2:
        raise ValueError("need at least two paths")
    if n_steps < 1:
        raise ValueError("need at least one step")
    dt = params.horizon / n_steps
    starts = list(range(0, n_paths, BLOCK_PATHS))

    def draw(b: int) -> np.ndarray:
        rows = min(BLOCK_PATHS, n_paths - starts[b])
        return _block_normals(seed, b, rows, n_steps)

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            blocks = list(pool.map(draw, range(len(starts))))
    else:
        blocks = [draw(b) for b in range(len(starts))]
    db = np.concatenate(blocks, axis=0) * np.sqrt(dt)
    brownian = np.zeros((n_paths, n_steps + 1))
    np.cumsum(db, axis=1, out=brownian[:, 1:])
    times = np.arange(n_steps + 1) * dt
    drift = (params.mu - 0.5 * params.sigma**2) * times
    state = params.s0 * np.exp(drift[None, :] + params.sigma * brownian)
    return PathEnsemble(n_paths, n_steps, dt, brownian, state, seed, params)


@dataclass(frozen=True)
class PolynomialBasis:
    """Regression basis: monomials ``1, x, ..., x^degree`` of the standardised state,
    plus ``knots`` hinge functions ``max(x - q_j, 0)`` at equally spaced state quantiles.

    ``itm`` re-fits the continuation value on the paths where the barrier is
    positive and only lets those paths stop. ``targets`` selects what is
    regressed (see ``_backward``).
    """

    degree: int = 3
    itm: bool = True
    targets: str = "realized"
    knots: int = 0

    def __post_init__(self) -> None:
        if self.degree < 0 or self.knots < 0:
            raise ValueError("degree and knots must be non-negative")
        if self.targets not in ("realized", "value"):
            raise ValueError(f"unknown regression targets {self.targets!r}")

    def as_dict(self) -> dict:
        return {"degree": self.degree, "itm": self.itm, "targets": self.targets, "knots": self.knots}

    def design(self, state: np.ndarray) -> np.ndarray:
        state = np.asarray(state, dtype=float)
        sd = state.std() if state.size else 0.0
        if sd == 0.0:
            return np.ones((state.size, 1))
        x = (state - state.mean()) / sd
        cols = np.vander(x, self.degree + 1, increasing=True)
        if self.knots == 0:
            return cols
        q = np.quantile(x, np.arange(1, self.knots + 1) / (self.knots + 1))
        return np.hstack([cols, np.maximum(x[:, None] - q[None, :], 0.0)])


def regress(x: np.ndarray, y: np.ndarray, weights: np.ndarray | None = None) -> np.ndarray:
    """Fitted values of the (weighted) least-squares projection of ``y`` on ``x``.

    ``y`` may have a trailing column axis. Sums use ``einsum`` so results do not
    depend on BLAS threading.
    """
    xw = x if weights is None else x * weights[:, None]
    a = np.einsum("ni,nj->ij", xw, x)
    b = np.einsum("ni,n...->i...", xw, y)
    p = a.shape[0]
    if np.linalg.matrix_rank(a) < p or np.linalg.cond(a) > COND_LIMIT:
        warnings.warn("rank-deficient regression; adding ridge penalty", RegressionWarning, stacklevel=2)
        a = a + RIDGE * np.trace(a) / p * np.eye(p)
    coef = np.linalg.solve(a, b)
    return np.einsum("ni,i...->n...", x, coef)


@dataclass
class PathPayoff:
    """Barrier ``(n_paths, n_steps + 1)`` and terminal value ``(n_paths,)`` on an ensemble."""

    barrier: np.ndarray
    terminal: np.ndarray

    @classmethod
    def from_state(cls, paths: PathEnsemble, f: Callable[[np.ndarray], np.ndarray]) -> "PathPayoff":
        barrier = np.asarray(f(paths.state), dtype=float)
        return cls(barrier, barrier[:, -1].copy())


def payoff_function(kind: str, strike: float) -> Callable[[np.ndarray], np.ndarray]:
    if kind == "put":
        return lambda s: np.maximum(strike - s, 0.0)
    if kind == "call":
        return lambda s: np.maximum(s - strike, 0.0)
    if kind == "straddle":
        return lambda s: np.abs(s - strike)
    raise ValueError(f"unknown payoff kind {kind!r}")


@dataclass
class RBSDESolution:
    """``y``, ``z``, cumulative ``k`` (``k[:, 0] = 0``) and per-step pushes ``dk``.

    ``dk[:, j]`` is the reflection applied at time ``j``; ``k[:, j + 1] =
    k[:, j] + dk[:, j]``, and the last push column is zero. ``realized`` holds
    the per-path values realised along the exercise policy; their mean is the
    time-0 continuation, so their spread gives a Monte Carlo standard error.
    """

    y: np.ndarray
    z: np.ndarray
    dk: np.ndarray
    barrier: np.ndarray
    info: dict = field(default_factory=dict)
    realized: np.ndarray | None = None

    @property
    def k(self) -> np.ndarray:
        k = np.zeros_like(self.dk)
        np.cumsum(self.dk[:, :-1], axis=1, out=k[:, 1:])
        return k

    @property
    def y0(self) -> float:
        return float(self.y[0, 0])

    def second_moments(self) -> dict:
        return {"z": float(np.mean(self.z[:, :-1] ** 2)), "k_T": float(np.mean(self.k[:, -1] ** 2))}


def skorokhod_residual(solution: RBSDESolution, barrier: np.ndarray | None = None) -> float:
    """Path mean of ``sum_k (Y_k - L_k) dK_k``."""
    barrier = solution.barrier if barrier is None else np.broadcast_to(barrier, solution.y.shape)
    return float(np.mean(np.sum((solution.y - barrier) * solution.dk, axis=1)))


def _backward(
    paths: PathEnsemble,
    barrier: np.ndarray,
    terminal: np.ndarray,
    basis: PolynomialBasis,
    driver: Callable[[int, np.ndarray], np.ndarray] | np.ndarray | None = None,
    weights: np.ndarray | None = None,
    z_shift: np.ndarray | None = None,
    multiplier: np.ndarray | None = None,
    growth: np.ndarray | None = None,
) -> RBSDESolution:
    """Discretely reflected backward sweep.

    With ``basis.targets == "realized"`` the regressand is the value realised
    along the current exercise policy (barrier where the path stopped, plus the
    driver accumulated before that); with ``"value"`` it is ``Y_{k+1}`` itself,
    which piles up upward bias from ``max(L, C)`` when the basis is coarse.
    Both estimate the same conditional expectation.

    ``weights[:, j]`` is a likelihood ratio at time ``j``; a path is weighted by
    its ratio at the time its regression target was realised. ``z_shift`` is
    subtracted from ``dB`` in the ``Z`` regression; ``multiplier[:, k]`` scales
    every basis column at step ``k``. ``growth[:, k]`` multiplies the target
    before the continuation regression: it is the one-step solution factor of
    a linear driver, so ``growth`` and ``driver`` should not be combined.
    """
    n, m = paths.n_paths, paths.n_steps
    dt = paths.dt
    barrier = np.broadcast_to(np.asarray(barrier, dtype=float), (n, m + 1))
    terminal = np.broadcast_to(np.asarray(terminal, dtype=float), (n,))
    if np.any(barrier[:, -1] > terminal + 1e-12 * np.maximum(1.0, np.abs(terminal))):
        raise ValueError("need L_T <= xi on every path")
    db = paths.increments
    y = np.empty((n, m + 1))
    z = np.zeros((n, m + 1))
    dk = np.zeros((n, m + 1))
    y[:, m] = terminal
    target = np.array(terminal)
    w = None if weights is None else np.array(weights[:, m])
    for k in range(m - 1, -1, -1):
        x = basis.design(paths.state[:, k])
        if multiplier is not None:
            x = x * multiplier[:, k:k + 1]
        dbk = db[:, k] if z_shift is None else db[:, k] - z_shift[:, k]
        carried = target if growth is None else target * growth[:, k]
        fits = regress(x, np.stack([carried, target * dbk], axis=1), w)
        c, z[:, k] = fits[:, 0], fits[:, 1] / dt
        b = barrier[:, k]
        itm = b > 0
        if basis.itm and x.shape[1] > 1 and itm.sum() >= MIN_ROWS_PER_COLUMN * x.shape[1]:
            xi = basis.design(paths.state[itm, k])
            if multiplier is not None:
                xi = xi * multiplier[itm, k:k + 1]
            c[itm] = regress(xi, carried[itm], None if w is None else w[itm])
        f = None
        if driver is not None:
            f = driver(k, z[:, k]) if callable(driver) else driver[:, k]
            c = c + f * dt
        stop = b >= c
        y[:, k] = np.where(stop, b, c)
        dk[:, k] = y[:, k] - c
        if basis.itm:
            stop &= itm
        if basis.targets == "value":
            target = y[:, k].copy()
            if w is not None:
                w = np.array(weights[:, k])
        else:
            target = np.where(stop, b, carried if f is None else carried + f * dt)
            if w is not None:
                w = np.where(stop, weights[:, k], w)
    return RBSDESolution(y, z, dk, np.array(barrier), realized=target)


def solve_rbsde(
    paths: PathEnsemble,
    barrier,
    terminal,
    driver: np.ndarray | None = None,
    basis: PolynomialBasis = PolynomialBasis(),
) -> RBSDESolution:
    """Reflected BSDE with a driver that does not depend on ``(y, z)``."""
    sol = _backward(paths, barrier, terminal, basis, driver)
    sol.info["skorokhod"] = skorokhod_residual(sol)
    return sol


def _alpha_matrix(density: DensityProcess, atom: int) -> np.ndarray:
    return np.stack([a[:, atom] for a in density.alpha], axis=1)


def _ratio_matrix(density: DensityProcess, atom: int) -> np.ndarray:
    if density.logistic_ratio is None:
        raise ValueError("the density carries no logistic ratio")
    return np.stack([r[:, atom] for r in density.logistic_ratio], axis=1)


def _map_atoms(fn, atoms, threads: int):
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            return list(pool.map(fn, atoms))
    return [fn(a) for a in atoms]


def solve_parametrized_rbsde(
    paths: PathEnsemble,
    payoff: PathPayoff,
    density: DensityProcess,
    basis: PolynomialBasis = PolynomialBasis(),
    atoms=None,
    density_basis: bool = True,
    threads: int = 1,
) -> list[RBSDESolution]:
    """One reflected solve per atom with barrier ``L alpha(u)`` and terminal ``xi alpha_T(u)``.

    With ``density_basis`` each basis column is multiplied by ``alpha_k(u)``,
    which matches the shape ``Y = alpha * Yhat`` of the solution.
    """
    atoms = range(density.grid.size) if atoms is None else atoms

    def one(i: int) -> RBSDESolution:
        a = _alpha_matrix(density, i)
        mult = a if density_basis else None
        sol = _backward(paths, payoff.barrier * a, payoff.terminal * a[:, -1], basis, multiplier=mult)
        sol.info.update(atom=int(i), route="parametrized", skorokhod=skorokhod_residual(sol))
        return sol

    return _map_atoms(one, atoms, threads)


def transform_solution(parametrized: RBSDESolution, density: DensityProcess, atom: int | None = None) -> RBSDESolution:
    """``Yhat = Y / alpha``, ``dKhat = dK / alpha``, ``Zhat = Z / alpha - (beta/alpha) Yhat``."""
    atom = parametrized.info.get("atom") if atom is None else atom
    a = _alpha_matrix(density, atom)
    yhat = parametrized.y / a
    dkhat = parametrized.dk / a
    info = {"atom": atom, "route": "transform"}
    if density.logistic_ratio is None:
        warnings.warn("no logistic ratio: Zhat omitted", RuntimeWarning, stacklevel=2)
        zhat = np.full_like(yhat, np.nan)
    else:
        zhat = parametrized.z / a - _ratio_matrix(density, atom) * yhat
    realized = None if parametrized.realized is None else parametrized.realized / a[:, 0]
    sol = RBSDESolution(yhat, zhat, dkhat, parametrized.barrier / a, info, realized)
    sol.info["skorokhod"] = skorokhod_residual(sol)
    return sol


def solve_enlarged_rbsde(
    paths: PathEnsemble,
    payoff: PathPayoff,
    density: DensityProcess,
    atom: int,
    basis: PolynomialBasis = PolynomialBasis(),
    scheme: str = "exponential",
    max_sweeps: int = 5,
    tol: float = 1e-4,
) -> RBSDESolution:
    """Solve for ``Yhat(u)`` directly, with driver ``f_k = (beta_k/alpha_k)(u) Zhat_k``.

    The driver is linear in ``Zhat``, so with ``theta_k = (beta/alpha)_k(u)``
    frozen over a step the continuation has the closed form
    ``E[Yhat_{k+1} exp(theta_k dB_k - theta_k^2 dt / 2) | F_k]``
    (``scheme="exponential"``). ``"explicit"`` is the Euler step
    ``E[Yhat_{k+1} | F_k] + theta_k Zhat_k dt`` with ``Zhat_k`` taken from the
    same sweep. ``"picard"`` starts from ``f = 0`` and re-solves with the
    previous sweep's ``Zhat`` until ``Yhat_0`` changes by less than ``tol``
    (relative). The Euler forms carry a first-order bias that is large for
    atoms with strong drift at 50 steps; the exponential form does not.
    ``Zhat`` is always the increment regression of the sweep.
    """
    theta = _ratio_matrix(density, atom)
    if scheme == "exponential":
        dt = paths.dt
        growth = np.exp(theta[:, :-1] * paths.increments - 0.5 * theta[:, :-1] ** 2 * dt)
        sol = _backward(paths, payoff.barrier, payoff.terminal, basis, growth=growth)
        sol.info.update(sweeps=1)
    elif scheme == "explicit":
        sol = _backward(paths, payoff.barrier, payoff.terminal, basis, lambda k, z: theta[:, k] * z)
        sol.info.update(sweeps=1)
    elif scheme == "picard":
        sol = _backward(paths, payoff.barrier, payoff.terminal, basis)
        history = [sol.y0]
        for sweep in range(2, max_sweeps + 1):
            sol = _backward(paths, payoff.barrier, payoff.terminal, basis, theta * sol.z)
            history.append(sol.y0)
            if abs(history[-1] - history[-2]) <= tol * max(abs(history[-1]), 1e-300):
                sol.info.update(sweeps=sweep, history=history)
                break
        else:
            raise NonConvergence(f"Yhat_0 still moving after {max_sweeps} sweeps: {history}")
    else:
        raise ValueError(f"unknown scheme {scheme!r}")
    sol.info.update(atom=atom, route="enlarged", scheme=scheme, skorokhod=skorokhod_residual(sol))
    return sol


@dataclass
class MeasureChange:
    """Terminal likelihood ratios ``q_T(u) = alpha_T(u)`` per (path, atom)."""

    weights: np.ndarray
    normalized: bool = False

    @classmethod
    def from_density(cls, density: DensityProcess) -> "MeasureChange":
        return cls(np.array(density.alpha[-1]))

    def mean_zscore(self) -> np.ndarray:
        n = self.weights.shape[0]
        se = self.weights.std(axis=0, ddof=1) / np.sqrt(n)
        return np.abs(self.weights.mean(axis=0) - 1.0) / se

    def ess(self) -> np.ndarray:
        w = self.weights
        return w.sum(axis=0) ** 2 / (w**2).sum(axis=0)


def effective_sample_size(w: np.ndarray) -> float:
    return float(w.sum() ** 2 / (w**2).sum())


def girsanov_solve(
    paths: PathEnsemble,
    payoff: PathPayoff,
    density: DensityProcess,
    atom: int,
    basis: PolynomialBasis = PolynomialBasis(),
) -> RBSDESolution:
    """Driver-free reflected solve under the measure with density ``alpha(u)``.

    A regression target is weighted by ``alpha(u)`` at the time it was
    realised (renormalised to mean one per time); ``Zhat`` uses the shifted
    increments ``dB - (beta/alpha) dt``.
    """
    a = _alpha_matrix(density, atom)
    w = a / a.mean(axis=0, keepdims=True)
    ess = min(effective_sample_size(w[:, k]) for k in range(1, w.shape[1]))
    if ess < ESS_FRACTION * paths.n_paths:
        warnings.warn(
            f"atom {atom}: effective sample size {ess:.0f} below {ESS_FRACTION:.0%} of paths",
            WeightDegeneracyWarning,
            stacklevel=2,
        )
    shift = None
    if density.logistic_ratio is not None:
        shift = _ratio_matrix(density, atom)[:, :-1] * paths.dt
    sol = _backward(paths, payoff.barrier, payoff.terminal, basis, weights=w, z_shift=shift)
    sol.info.update(atom=atom, route="girsanov", min_ess=ess, skorokhod=skorokhod_residual(sol))
    return sol
