"""Finite discrete-time market models, Snell envelopes and a brute-force stopping oracle.

A lattice is a tree (recombining or not) whose nodes are ``(time, index)``
pairs. Level ``k`` holds ``n_k`` nodes, and the one-step transition from level
``k`` to ``k + 1`` is stored as a sparse row-stochastic matrix. Processes are
lists of 1-D arrays, one per level (row axis = node). Arrays may carry extra
trailing axes (e.g. one column per information atom); every operation here
broadcasts over them.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import sparse

PROB_TOL = 1e-12
DEFAULT_RULE_CAP = 2**20

Process = list[np.ndarray]


class ShapeError(ValueError):
    """Process or payoff shapes do not match the lattice."""


class ExplosionError(RuntimeError):
    """An exhaustive enumeration would exceed its configured size cap."""


@dataclass(frozen=True)
class FiltrationLattice:
    """Tree surrogate of a filtered probability space.

    ``transitions[k]`` is an ``(n_k, n_{k+1})`` CSR matrix of strictly positive
    child probabilities; ``states[k]`` labels the nodes of level ``k``.
    """

    states: tuple[np.ndarray, ...]
    transitions: tuple[sparse.csr_matrix, ...]
    recombining: bool = False

    def __post_init__(self) -> None:
        states = tuple(np.asarray(s, dtype=float).ravel() for s in self.states)
        trans = tuple(sparse.csr_matrix(t, dtype=float) for t in self.transitions)
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "transitions", trans)
        if len(states) < 2:
            raise ValueError("a lattice needs at least one time step")
        if len(trans) != len(states) - 1:
            raise ValueError("need exactly one transition matrix per step")
        if states[0].size != 1:
            raise ValueError("the time-0 node must be unique (trivial initial sigma-field)")
        for k, t in enumerate(trans):
            if t.shape != (states[k].size, states[k + 1].size):
                raise ShapeError(f"transition {k} has shape {t.shape}")
            if t.nnz and t.data.min() <= 0.0:
                raise ValueError(f"non-positive transition probability at step {k}")
            row_sums = np.asarray(t.sum(axis=1)).ravel()
            if np.max(np.abs(row_sums - 1.0)) > PROB_TOL:
                raise ValueError(f"transition rows at step {k} do not sum to 1")
            has_parent = np.asarray((t != 0).sum(axis=0)).ravel() > 0
            if not has_parent.all():
                raise ValueError(f"orphan node at time {k + 1}")

    @property
    def n_steps(self) -> int:
        return len(self.transitions)

    @property
    def sizes(self) -> list[int]:
        return [s.size for s in self.states]

    def children(self, k: int, i: int) -> tuple[np.ndarray, np.ndarray]:
        """Child indices and probabilities of node ``(k, i)``."""
        t = self.transitions[k]
        lo, hi = t.indptr[i], t.indptr[i + 1]
        return t.indices[lo:hi], t.data[lo:hi]

    def step_expectation(self, k: int, values: np.ndarray) -> np.ndarray:
        """E[values_{k+1} | F_k] for values living on level ``k + 1``."""
        values = np.asarray(values, dtype=float)
        if values.shape[0] != self.states[k + 1].size:
            raise ShapeError(
                f"expected {self.states[k + 1].size} rows at time {k + 1}, got {values.shape[0]}"
            )
        return np.asarray(self.transitions[k] @ values)

    def node_probabilities(self) -> Process:
        """Unconditional probability of reaching each node."""
        probs = [np.ones(1)]
        for t in self.transitions:
            probs.append(np.asarray(t.T @ probs[-1]))
        return probs

    def to_json(self) -> str:
        levels = []
        for k, t in enumerate(self.transitions):
            rows = []
            for i in range(t.shape[0]):
                idx, p = self.children(k, i)
                rows.append([{"child": int(j), "prob": float(q)} for j, q in zip(idx, p)])
            levels.append(rows)
        doc = {
            "n_steps": self.n_steps,
            "recombining": self.recombining,
            "states": [s.tolist() for s in self.states],
            "transitions": levels,
        }
        return json.dumps(doc, indent=1)

    @classmethod
    def from_json(cls, text: str) -> "FiltrationLattice":
        doc = json.loads(text)
        states = [np.asarray(s, dtype=float) for s in doc["states"]]
        if len(doc["transitions"]) != doc["n_steps"] or len(states) != doc["n_steps"] + 1:
            raise ShapeError("n_steps disagrees with the stored levels")
        trans = []
        for k, rows in enumerate(doc["transitions"]):
            r, c, p = [], [], []
            for i, edges in enumerate(rows):
                for e in edges:
                    r.append(i)
                    c.append(e["child"])
                    p.append(e["prob"])
            shape = (states[k].size, states[k + 1].size)
            trans.append(sparse.csr_matrix((p, (r, c)), shape=shape))
        return cls(tuple(states), tuple(trans), bool(doc.get("recombining", False)))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path: str | Path) -> "FiltrationLattice":
        return cls.from_json(Path(path).read_text())


def build_binomial(s0: float, up: float, down: float, p: float, n_steps: int) -> FiltrationLattice:
    """Recombining binomial tree; node ``i`` of level ``k`` has ``i`` up-moves."""
    if not 0.0 < p < 1.0:
        raise ValueError("p must lie strictly between 0 and 1")
    if not up > down > 0.0:
        raise ValueError("need up > down > 0")
    if n_steps < 1:
        raise ValueError("n_steps must be at least 1")
    states = []
    trans = []
    for k in range(n_steps + 1):
        i = np.arange(k + 1)
        states.append(s0 * up**i * down ** (k - i))
    for k in range(n_steps):
        i = np.arange(k + 1)
        rows = np.concatenate([i, i])
        cols = np.concatenate([i, i + 1])
        data = np.concatenate([np.full(k + 1, 1.0 - p), np.full(k + 1, p)])
        trans.append(sparse.csr_matrix((data, (rows, cols)), shape=(k + 1, k + 2)))
    return FiltrationLattice(tuple(states), tuple(trans), recombining=True)


def build_tree(states: Sequence[Sequence[float]], children: Sequence[Sequence[Sequence[tuple[int, float]]]]) -> FiltrationLattice:
    """General tree from explicit ``children[k][i] = [(child, prob), ...]`` lists."""
    trans = []
    for k, rows in enumerate(children):
        r, c, p = [], [], []
        for i, edges in enumerate(rows):
            for j, q in edges:
                r.append(i)
                c.append(j)
                p.append(q)
        trans.append(sparse.csr_matrix((p, (r, c)), shape=(len(states[k]), len(states[k + 1]))))
    return FiltrationLattice(tuple(np.asarray(s, float) for s in states), tuple(trans))


def random_tree(rng: np.random.Generator, n_steps: int, max_branch: int = 3, recombine: bool = False) -> FiltrationLattice:
    """Random test lattice: non-recombining tree, or a random recombining binomial tree."""
    if recombine:
        up = 1.0 + rng.uniform(0.05, 1.0)
        down = rng.uniform(0.3, 0.95)
        return build_binomial(1.0, up, down, rng.uniform(0.1, 0.9), n_steps)
    states = [np.array([1.0])]
    children = []
    for _ in range(n_steps):
        rows = []
        nxt = []
        for i, s in enumerate(states[-1]):
            nb = int(rng.integers(2, max_branch + 1))
            probs = rng.dirichlet(np.ones(nb)) * 0.9 + 0.1 / nb
            probs /= probs.sum()
            edges = []
            for q in probs:
                edges.append((len(nxt), float(q)))
                nxt.append(s * float(np.exp(rng.normal(0.0, 0.3))))
            rows.append(edges)
        children.append(rows)
        states.append(np.array(nxt))
    return build_tree(states, children)


def _check_process(lattice: FiltrationLattice, process: Sequence[np.ndarray]) -> Process:
    if len(process) != lattice.n_steps + 1:
        raise ShapeError(f"process has {len(process)} levels, lattice has {lattice.n_steps + 1}")
    out = []
    for k, (v, n) in enumerate(zip(process, lattice.sizes)):
        v = np.asarray(v, dtype=float)
        if v.shape[0] != n:
            raise ShapeError(f"level {k}: expected {n} rows, got {v.shape[0]}")
        out.append(v)
    return out


def conditional_expectation(
    lattice: FiltrationLattice,
    process: np.ndarray | Sequence[np.ndarray],
    t: int,
    s: int | None = None,
) -> np.ndarray:
    """E[X_s | F_t] on level ``t``.

    ``process`` is either one array living on level ``s`` (default: terminal
    level) or a full per-level process, in which case its level-``s`` slice is
    used.
    """
    n = lattice.n_steps
    s = n if s is None else s
    if not 0 <= t <= s <= n:
        raise ValueError(f"need 0 <= t <= s <= {n}, got t={t}, s={s}")
    if isinstance(process, (list, tuple)):
        if len(process) != n + 1:
            raise ShapeError(f"process has {len(process)} levels, lattice has {n + 1}")
        values = np.asarray(process[s], dtype=float)
    else:
        values = np.asarray(process, dtype=float)
    if values.shape[0] != lattice.sizes[s]:
        raise ShapeError(f"level {s}: expected {lattice.sizes[s]} rows, got {values.shape[0]}")
    for k in range(s - 1, t - 1, -1):
        values = lattice.step_expectation(k, values)
    return values


@dataclass(frozen=True)
class PayoffSpec:
    """Reward ``L_k`` before maturity and ``xi`` at maturity, node by node.

    ``barrier`` covers every level including the terminal one, where
    ``0 <= L_N <= xi`` must hold.
    """

    barrier: tuple[np.ndarray, ...]
    terminal: np.ndarray

    def __post_init__(self) -> None:
        barrier = tuple(np.asarray(b, dtype=float) for b in self.barrier)
        terminal = np.asarray(self.terminal, dtype=float)
        object.__setattr__(self, "barrier", barrier)
        object.__setattr__(self, "terminal", terminal)
        if barrier[-1].shape != terminal.shape:
            raise ShapeError("terminal barrier and terminal value differ in shape")
        if np.any(barrier[-1] < -PROB_TOL) or np.any(barrier[-1] > terminal + PROB_TOL):
            raise ValueError("need 0 <= L_N <= xi at every terminal node")

    @classmethod
    def from_function(cls, lattice: FiltrationLattice, f) -> "PayoffSpec":
        """Payoff ``f(state)`` exercised at any node, including maturity."""
        barrier = tuple(np.asarray(f(s), dtype=float) for s in lattice.states)
        return cls(barrier, barrier[-1].copy())

    @classmethod
    def put(cls, lattice: FiltrationLattice, strike: float) -> "PayoffSpec":
        return cls.from_function(lattice, lambda s: np.maximum(strike - s, 0.0))

    @classmethod
    def call(cls, lattice: FiltrationLattice, strike: float) -> "PayoffSpec":
        return cls.from_function(lattice, lambda s: np.maximum(s - strike, 0.0))

    def check(self, lattice: FiltrationLattice) -> None:
        _check_process(lattice, self.barrier)
        if self.terminal.shape[0] != lattice.sizes[-1]:
            raise ShapeError("terminal payoff does not match the last level")

    def reward(self) -> Process:
        """The exercised reward: barrier before maturity, terminal value at it."""
        return [*self.barrier[:-1], self.terminal]


@dataclass(frozen=True)
class StoppingRule:
    """Node-wise exercise flags; the stopping time is the first flagged node on each path."""

    exercise_flag: tuple[np.ndarray, ...]

    def __post_init__(self) -> None:
        flags = tuple(np.asarray(f, dtype=bool) for f in self.exercise_flag)
        object.__setattr__(self, "exercise_flag", flags)
        if not flags[-1].all():
            raise ValueError("every path must stop by maturity")

    def value(self, lattice: FiltrationLattice, payoff: PayoffSpec) -> Process:
        """Expected reward of following this rule, from every node."""
        reward = payoff.reward()
        v = reward[-1]
        out = [v]
        for k in range(lattice.n_steps - 1, -1, -1):
            cont = lattice.step_expectation(k, v)
            flag = self.exercise_flag[k].reshape(self.exercise_flag[k].shape + (1,) * (cont.ndim - 1))
            v = np.where(flag, reward[k], cont)
            out.append(v)
        return out[::-1]


@dataclass
class SnellResult:
    """Snell envelope ``value``, first-contact rule and compensator increments.

    ``increments[k]`` is the push ``max(0, L_k - E[Y_{k+1} | F_k])``; it is
    zero at maturity.
    """

    value: Process
    rule: StoppingRule
    increments: Process
    continuation: Process = field(default_factory=list)

    def skorokhod_residual(self, barrier: Sequence[np.ndarray]) -> float:
        return float(sum(np.sum((y - b) * dk) for y, b, dk in zip(self.value, barrier, self.increments)))


def snell_envelope(lattice: FiltrationLattice, payoff: PayoffSpec) -> SnellResult:
    """Backward recursion ``Y_N = xi``, ``Y_k = max(L_k, E[Y_{k+1} | F_k])``.

    Ties (``L_k`` equal to the continuation value) are resolved to stopping.
    """
    payoff.check(lattice)
    n = lattice.n_steps
    y = [None] * (n + 1)
    flags = [None] * (n + 1)
    dk = [None] * (n + 1)
    cont = [None] * (n + 1)
    y[n] = payoff.terminal
    flags[n] = np.ones(payoff.terminal.shape, dtype=bool)
    dk[n] = np.zeros_like(payoff.terminal)
    cont[n] = payoff.terminal
    for k in range(n - 1, -1, -1):
        c = lattice.step_expectation(k, y[k + 1])
        b = payoff.barrier[k]
        stop = b >= c
        y[k] = np.where(stop, b, c)
        flags[k] = stop
        dk[k] = np.maximum(b - c, 0.0)
        cont[k] = c
    return SnellResult(y, StoppingRule(tuple(flags)), dk, cont)


def brute_force_value(
    lattice: FiltrationLattice,
    payoff: PayoffSpec,
    t: int = 0,
    cap: int = DEFAULT_RULE_CAP,
) -> tuple[np.ndarray, StoppingRule]:
    """Maximise the expected reward over every adapted node-wise stopping rule.

    Rules only flag nodes at times ``t .. N-1`` (maturity always stops). Returns
    the best value at every level-``t`` node and one rule attaining all of them.
    """
    payoff.check(lattice)
    n = lattice.n_steps
    if not 0 <= t <= n:
        raise ValueError("t outside the time grid")
    free = lattice.sizes[t:n]
    n_free = int(sum(free))
    if 2.0**n_free > cap:
        raise ExplosionError(f"2^{n_free} stopping rules exceed the cap {cap}")
    n_rules = 2**n_free
    bits = ((np.arange(n_rules)[:, None] >> np.arange(n_free)[None, :]) & 1).astype(bool)
    offsets = np.concatenate([[0], np.cumsum(free)])

    reward = payoff.reward()
    v = np.broadcast_to(reward[n], (n_rules, lattice.sizes[n]))
    for k in range(n - 1, t - 1, -1):
        cont = np.asarray(lattice.transitions[k] @ v.T).T
        j = k - t
        flag = bits[:, offsets[j]:offsets[j + 1]]
        v = np.where(flag, reward[k][None, :], cont)
    best = v.max(axis=0)
    # a single rule (the Snell one) is optimal at every node simultaneously
    hit = np.isclose(v, best[None, :], rtol=0.0, atol=1e-12).all(axis=1)
    r = int(np.argmax(hit)) if hit.any() else int(np.argmax(v.sum(axis=1)))
    flags = [np.zeros(s, dtype=bool) for s in lattice.sizes]
    for k in range(t, n):
        j = k - t
        flags[k] = bits[r, offsets[j]:offsets[j + 1]].copy()
    flags[n] = np.ones(lattice.sizes[n], dtype=bool)
    return best, StoppingRule(tuple(flags))


def count_rules(lattice: FiltrationLattice, t: int = 0) -> int:
    return 2 ** int(sum(lattice.sizes[t:lattice.n_steps]))


def enumerate_paths(lattice: FiltrationLattice, k: int = 0, i: int = 0, cap: int = 1_000_000):
    """Yield ``(terminal_index, probability)`` for every path from node ``(k, i)``."""
    count = 0
    stack = [(k, i, 1.0)]
    while stack:
        level, node, prob = stack.pop()
        if level == lattice.n_steps:
            count += 1
            if count > cap:
                raise ExplosionError(f"more than {cap} paths below node ({k}, {i})")
            yield node, prob
            continue
        idx, p = lattice.children(level, node)
        for j, q in zip(idx, p):
            stack.append((level + 1, int(j), prob * float(q)))


__all__ = [
    "FiltrationLattice",
    "PayoffSpec",
    "StoppingRule",
    "SnellResult",
    "ShapeError",
    "ExplosionError",
    "build_binomial",
    "build_tree",
    "random_tree",
    "conditional_expectation",
    "snell_envelope",
    "brute_force_value",
    "count_rules",
    "enumerate_paths",
]
