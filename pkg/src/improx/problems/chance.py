"""Sigmoid-smoothed SAA chance constraints and the gas-network instance."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..core import CompositeProblem, ConfigurationError, FeasibleSet, PieceBlock, PieceTable, ConvexFnOracle
from .scenarios import Distribution, ScenarioSet, sample_scenarios

__all__ = [
    "sigmoid",
    "sigmoid_derivative",
    "GasTree",
    "GasBlock",
    "pressure_drops",
    "build_gas_instance",
    "FOUR_NODE_TREE",
    "gas_start",
]


def sigmoid(z, theta: float = 0.1):
    """``1 / (1 + exp(-z/theta))`` evaluated without overflow."""
    if not theta > 0:
        raise ConfigurationError("theta must be positive")
    s = np.asarray(z, dtype=float) / theta
    e = np.exp(-np.abs(s))
    out = np.where(s >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return out if out.ndim else float(out)


def sigmoid_derivative(z, theta: float = 0.1):
    """``psi (1 - psi) / theta``, computed as ``e / (1 + e)^2 / theta`` with ``e = exp(-|z|/theta)``."""
    if not theta > 0:
        raise ConfigurationError("theta must be positive")
    s = np.asarray(z, dtype=float) / theta
    e = np.exp(-np.abs(s))
    out = e / (1.0 + e) ** 2 / theta
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class GasTree:
    """Rooted tree on nodes ``0..n-1`` given by a parent array (``parent[0] = -1``).

    ``resistance[i]`` is the coefficient of the edge entering node ``i``
    (entry 0 is unused); exit loads at nodes ``1..n-1`` are
    ``|N(load_mean, load_sd^2)|``.
    """

    parent: tuple
    resistance: tuple | None = None
    load_mean: float = 1.0
    load_sd: float = 0.3

    def __post_init__(self):
        par = tuple(int(p) for p in self.parent)
        n = len(par)
        if n < 1 or par[0] != -1:
            raise ConfigurationError("node 0 must be the root (parent -1)")
        for i in range(1, n):
            if not 0 <= par[i] < n or par[i] == i:
                raise ConfigurationError(f"invalid parent for node {i}")
        for i in range(1, n):
            seen, j = set(), i
            while j != 0:
                if j in seen:
                    raise ConfigurationError("parent array contains a cycle")
                seen.add(j)
                j = par[j]
        object.__setattr__(self, "parent", par)
        res = (0.0,) + (1.0,) * (n - 1) if self.resistance is None else tuple(float(r) for r in self.resistance)
        if len(res) != n or any(r <= 0 for r in res[1:]):
            raise ConfigurationError("need one positive resistance per non-root node")
        object.__setattr__(self, "resistance", res)

    @property
    def n(self) -> int:
        return len(self.parent)

    def path(self, node: int) -> list[int]:
        """Non-root nodes on the path from the root to ``node`` (each names its incoming edge)."""
        out = []
        while node != 0:
            out.append(node)
            node = self.parent[node]
        return out[::-1]

    def subtree(self, node: int) -> list[int]:
        return [i for i in range(self.n) if node in self.path(i) or i == node]

    def load_distributions(self) -> tuple:
        return tuple(Distribution(f"load{i}", self.load_mean, self.load_sd, "abs_normal")
                     for i in range(1, self.n))


FOUR_NODE_TREE = GasTree((-1, 0, 1, 1))


def pressure_drops(tree: GasTree, loads: np.ndarray) -> np.ndarray:
    """``h[:, l] = sum over edges e on the root path of l of beta_e * (subtree load of e)^2``.

    ``loads`` has one column per non-root node; the result has ``n`` columns
    (``h[:, 0] = 0``).
    """
    loads = np.atleast_2d(np.asarray(loads, dtype=float))
    full = np.zeros((loads.shape[0], tree.n))
    full[:, 1:] = loads
    edge = np.zeros_like(full)
    for i in range(1, tree.n):
        edge[:, i] = tree.resistance[i] * full[:, tree.subtree(i)].sum(axis=1) ** 2
    h = np.zeros_like(full)
    for l in range(1, tree.n):
        h[:, l] = edge[:, tree.path(l)].sum(axis=1)
    return h


class GasBlock(PieceBlock):
    """Groups ``j``, pieces ``l``: ``psi_theta(v_l(w_j) - x_l^2)/N - alpha/N`` (all weakly concave)."""

    def __init__(self, v: np.ndarray, theta: float, alpha: float, probs: np.ndarray | None = None):
        v = np.asarray(v, dtype=float)
        self.n_groups, self.n_pieces = v.shape
        self.v = np.ascontiguousarray(v.T)  # (pieces, groups)
        self.dim = self.n_pieces
        self.theta, self.alpha = float(theta), float(alpha)
        self.p = np.full(self.n_groups, 1.0 / self.n_groups) if probs is None else np.asarray(probs, dtype=float)

    def convex(self, x):
        return None

    def concave(self, x, alternatives=False):
        x = np.asarray(x, dtype=float)
        z = self.v - (x ** 2)[:, None]
        vals = self.p * sigmoid(z, self.theta) - self.p * self.alpha
        dz = self.p * sigmoid_derivative(z, self.theta)
        grads = np.zeros((self.dim, self.n_pieces, self.n_groups))
        for l in range(self.dim):
            grads[l, l] = dz[l] * (-2.0 * x[l])
        return vals, grads, []


def build_gas_instance(tree: GasTree, N: int, theta: float = 0.1, alpha: float = 0.05, seed: int = 0,
                       scenarios: ScenarioSet | None = None) -> CompositeProblem:
    """Chance-constrained gas exit problem: ``min sum x`` over ``x >= 1``.

    Exit loads are sampled from ``tree.load_distributions()`` unless
    ``scenarios`` (one column per non-root node) is given.
    """
    if not theta > 0:
        raise ConfigurationError("theta must be positive")
    if not 0 < alpha < 1:
        raise ConfigurationError("alpha must lie in (0, 1)")
    if scenarios is None:
        if N < 1:
            raise ConfigurationError("N must be positive")
        scenarios = sample_scenarios(tree.load_distributions(), N, seed)
    if scenarios.n_vars != tree.n - 1:
        raise ConfigurationError("need one load column per non-root node")
    h = pressure_drops(tree, scenarios.values)
    v0 = 1.0 + h.max(axis=1)
    v = v0[:, None] - h
    n = tree.n
    X = FeasibleSet(np.ones(n), np.full(n, np.inf))
    objective = PieceTable([[(ConvexFnOracle.affine(np.ones(n), 0.0, "sum"), None)]], n)
    block = GasBlock(v, theta, alpha, scenarios.probs)
    meta = {"instance": "gas", "n": n, "N": scenarios.N, "theta": theta, "alpha": alpha,
            "seed": scenarios.seed, "parent": list(tree.parent)}
    return CompositeProblem(X, (objective,), (block,), name="gas", meta=meta)


def gas_start(problem: CompositeProblem) -> np.ndarray:
    """Feasible start: every sigmoid argument at most ``-1``."""
    block = problem.constraint[0]
    return np.full(block.dim, np.sqrt(block.v.max() + 1.0) + 1.0)
