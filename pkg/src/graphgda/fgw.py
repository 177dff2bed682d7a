"""Fused Gromov-Wasserstein cost, a conditional-gradient solver and a brute-force oracle.

The order of the distance is fixed to 2. With that order the structure term of
the cost expands into marginal terms plus a bilinear trace, which is how
:func:`fgw_cost` evaluates it without a four-index loop.
"""
from __future__ import annotations

import itertools
import math
import os
from dataclasses import dataclass

import numpy as np

# only the numpy backend of POT is used; skip probing the deep-learning ones
for _key in ("PYTORCH", "JAX", "TENSORFLOW", "CUPY"):
    os.environ.setdefault(f"POT_BACKEND_DISABLE_{_key}", "1")
import ot  # noqa: E402

from .errors import InvalidArgument, Unsupported
from .graph import Graph, attribute_distance_matrix

COUPLING_TOL = 1e-6
BRUTEFORCE_MAX_NODES = 6


@dataclass(frozen=True)
class Coupling:
    """Transport plan between two node measures."""

    plan: np.ndarray
    row_marginal: np.ndarray
    col_marginal: np.ndarray

    def __post_init__(self):
        S = np.asarray(self.plan, dtype=float)
        if S.shape != (len(self.row_marginal), len(self.col_marginal)):
            raise InvalidArgument(f"plan shape {S.shape} does not match marginals")
        if np.any(S < -1e-12):
            raise InvalidArgument("coupling has negative entries")
        if np.abs(S.sum(1) - self.row_marginal).sum() > COUPLING_TOL:
            raise InvalidArgument("coupling row sums differ from the row marginal")
        if np.abs(S.sum(0) - self.col_marginal).sum() > COUPLING_TOL:
            raise InvalidArgument("coupling column sums differ from the column marginal")


@dataclass(frozen=True)
class FgwConfig:
    alpha: float = 0.5
    max_outer_iters: int = 500
    cost_tol: float = 1e-9
    inner_ot_tol: float = 1e-12
    # extra seeded starting vertices on top of the two deterministic starts
    restarts: int = 16
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise InvalidArgument(f"alpha must lie in [0, 1], got {self.alpha}")
        if self.cost_tol <= 0 or self.inner_ot_tol <= 0:
            raise InvalidArgument("tolerances must be positive")
        if self.max_outer_iters < 1:
            raise InvalidArgument("max_outer_iters must be >= 1")
        if self.restarts < 0:
            raise InvalidArgument("restarts must be >= 0")


@dataclass(frozen=True)
class FgwResult:
    distance: float
    coupling: Coupling
    converged: bool
    iterations: int

    def __iter__(self):
        # allows ``d, s = fgw_distance_cg(...)``
        yield self.distance
        yield self.coupling


def _check_dims(A0, A1, S, M):
    n0, n1 = A0.shape[0], A1.shape[0]
    if S.shape != (n0, n1) or M.shape != (n0, n1):
        raise InvalidArgument(
            f"dimension mismatch: graphs {n0}x{n1}, plan {S.shape}, M {M.shape}")


def structure_cross_term(A0, A1, S):
    """``sum_{u,u',v,v'} A0[u,u'] A1[v,v'] S[u,v] S[u',v']``."""
    return float(np.sum((A0 @ S @ A1) * S))


def fgw_cost_matrices(A0, A1, M, S, alpha: float) -> float:
    """The FGW cost of plan ``S`` given raw matrices (``M`` unsquared)."""
    A0 = np.asarray(A0, float)
    A1 = np.asarray(A1, float)
    M = np.asarray(M, float)
    S = np.asarray(S, float)
    _check_dims(A0, A1, S, M)
    p = S.sum(1)
    q = S.sum(0)
    feat = float(np.sum(M ** 2 * S))
    struct = float(p @ (A0 ** 2) @ p + q @ (A1 ** 2) @ q) - 2.0 * structure_cross_term(A0, A1, S)
    value = (1.0 - alpha) * feat + alpha * struct
    # the expansion can round a true zero to a tiny negative number
    return max(value, 0.0)


def fgw_cost(g0: Graph, g1: Graph, s, M=None, alpha: float = 0.5) -> float:
    """Evaluate the fused cost of a coupling (``s`` may be a Coupling or a plain matrix)."""
    S = s.plan if isinstance(s, Coupling) else np.asarray(s, float)
    if M is None:
        M = attribute_distance_matrix(g0, g1)
    return fgw_cost_matrices(g0.adjacency, g1.adjacency, M, S, alpha)


def _line_search(a: float, b: float) -> float:
    # minimise a*t^2 + b*t over [0, 1]
    if a > 0:
        return min(1.0, max(0.0, -b / (2.0 * a)))
    return 1.0 if a + b < 0 else 0.0


def _emd(mu0, mu1, G, tol):
    # ot.emd needs marginals with equal mass up to its own check
    G = np.ascontiguousarray(G - G.min())
    return ot.emd(mu0, mu1 * (mu0.sum() / mu1.sum()), G, numItermax=1_000_000,
                  numThreads=1)


def fgw_solve(A0, A1, M, mu0, mu1, cfg: FgwConfig, init=None):
    """Conditional gradient on the FGW cost with exact linear-OT directions.

    Returns ``(cost, plan, converged, iterations)`` where ``cost`` is the
    lowest value of the fused cost seen along the iterates.
    """
    alpha = cfg.alpha
    M2 = M ** 2
    mu0 = np.asarray(mu0, float)
    mu1 = np.asarray(mu1, float)
    S = np.outer(mu0, mu1) if init is None else np.array(init, float)
    cost = fgw_cost_matrices(A0, A1, M, S, alpha)
    best_cost, best_S = cost, S.copy()
    converged = False
    it = 0
    for it in range(1, cfg.max_outer_iters + 1):
        ASA = A0 @ S @ A1
        grad = (1.0 - alpha) * M2 - 4.0 * alpha * ASA
        target = _emd(mu0, mu1, grad, cfg.inner_ot_tol)
        D = target - S
        a = -2.0 * alpha * float(np.sum((A0 @ D @ A1) * D))
        b = float(np.sum(grad * D))
        if b >= -cfg.inner_ot_tol * max(1.0, abs(cost)):
            # Frank-Wolfe gap is (numerically) zero: stationary point
            converged = True
            break
        tau = _line_search(a, b)
        if tau == 0.0:
            converged = True
            break
        S = S + tau * D
        new_cost = fgw_cost_matrices(A0, A1, M, S, alpha)
        if new_cost < best_cost:
            best_cost, best_S = new_cost, S.copy()
        rel = abs(cost - new_cost) / max(abs(cost), 1e-300)
        cost = new_cost
        if rel < cfg.cost_tol or cost == 0.0:
            converged = True
            break
    return best_cost, best_S, converged, it


def exchange_polish(A0, A1, M, mu0, mu1, cfg: FgwConfig, S, max_moves: int = 200):
    """Pairwise mass-exchange local search around a conditional-gradient optimum.

    For two support entries ``(u, v)`` and ``(u', v')`` the move shifts mass
    ``m`` onto ``(u, v')`` and ``(u', v)``. The move is the rank-one direction
    ``m (e_u - e_u')(e_v' - e_v)^T``, so its cost change is available in closed
    form for every pair at once. After each improving move conditional
    gradient is resumed from the new plan.
    """
    alpha = cfg.alpha
    M2 = M ** 2
    d0, d1 = np.diag(A0), np.diag(A1)
    cost = fgw_cost_matrices(A0, A1, M, S, alpha)
    for _ in range(max_moves):
        grad = (1.0 - alpha) * M2 - 4.0 * alpha * (A0 @ S @ A1)
        us, vs = np.nonzero(S > 1e-15)
        mass = S[us, vs]
        m = np.minimum.outer(mass, mass)
        U, U2 = us[:, None], us[None, :]
        V, V2 = vs[:, None], vs[None, :]
        lin = grad[U, V2] + grad[U2, V] - grad[U, V] - grad[U2, V2]
        a0 = d0[U] + d0[U2] - 2.0 * A0[U, U2]
        a1 = d1[V] + d1[V2] - 2.0 * A1[V, V2]
        delta = m * lin - 2.0 * alpha * m ** 2 * a0 * a1
        delta[(U == U2) | (V == V2)] = np.inf
        i, j = np.unravel_index(np.argmin(delta), delta.shape)
        if not delta[i, j] < -1e-12 * max(1.0, cost):
            break
        moved = S.copy()
        mm = m[i, j]
        moved[us[i], vs[i]] -= mm
        moved[us[j], vs[j]] -= mm
        moved[us[i], vs[j]] += mm
        moved[us[j], vs[i]] += mm
        np.maximum(moved, 0.0, out=moved)
        new_cost, moved, _, _ = fgw_solve(A0, A1, M, mu0, mu1, cfg, init=moved)
        if new_cost >= cost:
            break
        cost, S = new_cost, moved
    return cost, S


def _starting_plans(mu0, mu1, M, cfg: FgwConfig):
    yield np.outer(mu0, mu1)
    yield _emd(mu0, mu1, M ** 2, cfg.inner_ot_tol)
    rng = np.random.default_rng(cfg.seed)
    for _ in range(cfg.restarts):
        yield _emd(mu0, mu1, rng.random(M.shape), cfg.inner_ot_tol)


def fgw_distance_cg(g0: Graph, g1: Graph, cfg: FgwConfig | None = None, M=None) -> FgwResult:
    """FGW distance by multi-start conditional gradient.

    The first start is the independent coupling, the second the optimal
    plan for the attribute cost alone, and ``cfg.restarts`` further starts are
    vertices of the transport polytope drawn with ``cfg.seed``. Each start runs
    conditional gradient followed by :func:`exchange_polish`; the lowest cost
    wins, earliest start on ties.

    Parameters
    ----------
    g0, g1 : Graph
        Graphs with marginals set; adjacency matrices serve as structure matrices.
    cfg : FgwConfig, optional
        Solver configuration; ``alpha`` weights the structure term.
    M : array, optional
        Precomputed attribute distance matrix.

    Returns
    -------
    FgwResult
        Square root of the best cost found, its coupling and a convergence
        flag. Hitting ``max_outer_iters`` is reported, not raised.
    """
    cfg = cfg or FgwConfig()
    if M is None:
        M = attribute_distance_matrix(g0, g1)
    A0, A1 = g0.adjacency, g1.adjacency
    mu0, mu1 = g0.marginal, g1.marginal
    best = None
    total_iters = 0
    for init in _starting_plans(mu0, mu1, M, cfg):
        cost, S, converged, it = fgw_solve(A0, A1, M, mu0, mu1, cfg, init=init)
        total_iters += it
        cost, S = exchange_polish(A0, A1, M, mu0, mu1, cfg, S)
        if best is None or cost < best[0]:
            best = (cost, S, converged)
    cost, S, converged = best
    coupling = Coupling(S, mu0, mu1)
    return FgwResult(math.sqrt(cost), coupling, converged, total_iters)


def fgw_distance(g0: Graph, g1: Graph, alpha: float = 0.5) -> float:
    return fgw_distance_cg(g0, g1, FgwConfig(alpha=alpha)).distance


def fgw_distance_bruteforce(g0: Graph, g1: Graph, alpha: float = 0.5) -> float:
    """Minimum over all permutation couplings of the square-rooted cost.

    Only for equal-size graphs with uniform marginals and at most six nodes.
    """
    n = g0.n
    if g1.n != n:
        raise Unsupported("brute force needs graphs of equal size")
    if n > BRUTEFORCE_MAX_NODES:
        raise Unsupported(f"brute force limited to {BRUTEFORCE_MAX_NODES} nodes, got {n}")
    for g in (g0, g1):
        if not np.allclose(g.marginal, 1.0 / n, rtol=0, atol=1e-12):
            raise Unsupported("brute force needs uniform marginals")
    M = attribute_distance_matrix(g0, g1)
    best = math.inf
    for perm in itertools.permutations(range(n)):
        S = np.zeros((n, n))
        S[np.arange(n), perm] = 1.0 / n
        best = min(best, fgw_cost_matrices(g0.adjacency, g1.adjacency, M, S, alpha))
    return math.sqrt(best)
