"""Low-rank FGW transport by mirror descent with LR-Dykstra projections.

A coupling is factored as ``Q0 diag(1/g) Q1^T`` with ``Q0`` in ``Pi(mu0, g)``,
``Q1`` in ``Pi(mu1, g)`` and ``g`` on the ``r``-simplex. Each outer step
multiplies the factors by exponentiated negative gradients of the FGW cost and
KL-projects the result back onto that constraint set.
"""
from __future__ import annotations

import dataclasses
import logging
import math
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np

from .errors import InvalidArgument, NumericalFailure
from .fgw import fgw_cost_matrices
from .graph import Graph, attribute_distance_matrix

logger = logging.getLogger(__name__)

PLAN_TOL = 1e-5
_EXP_MAX = 700.0


@dataclass(frozen=True)
class LowRankPlan:
    Q0: np.ndarray
    Q1: np.ndarray
    g: np.ndarray
    g_floor: float = 0.0
    converged: bool = field(default=True, compare=False)
    iterations: int = field(default=0, compare=False)

    @property
    def rank(self) -> int:
        return self.g.shape[0]

    def coupling(self) -> np.ndarray:
        """Dense ``Q0 diag(1/g) Q1^T``."""
        return (self.Q0 / self.g) @ self.Q1.T

    def marginal_errors(self, mu0, mu1) -> dict[str, float]:
        return {
            "Q0_rows": float(np.abs(self.Q0.sum(1) - mu0).sum()),
            "Q0_cols": float(np.abs(self.Q0.sum(0) - self.g).sum()),
            "Q1_rows": float(np.abs(self.Q1.sum(1) - mu1).sum()),
            "Q1_cols": float(np.abs(self.Q1.sum(0) - self.g).sum()),
            "g_mass": float(abs(self.g.sum() - 1.0)),
        }

    def check(self, mu0, mu1, tol: float = PLAN_TOL) -> None:
        if np.any(self.Q0 < 0) or np.any(self.Q1 < 0):
            raise InvalidArgument("plan factors must be nonnegative")
        errs = self.marginal_errors(mu0, mu1)
        worst = max(errs.values())
        if worst > tol:
            raise InvalidArgument(f"plan marginals violated by {worst:.3g}: {errs}")


@dataclass(frozen=True)
class LowRankConfig:
    rank: Optional[int] = None          # None -> min(n0, n1)
    step_size: float = 10.0
    g_floor: Optional[float] = None     # None -> 1e-10 / rank
    dykstra_tol: float = 1e-9
    dykstra_max_iters: int = 1_000
    max_iters: int = 200
    cost_tol: float = 1e-6
    # divide the step by the range of the current gradient
    rescale_step: bool = True
    # starting plan: "kmeans" (feature clusters) or "perturbed" (noisy independent plan)
    init: str = "kmeans"
    init_temperature: float = 1.0
    init_noise: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.rank is not None and self.rank < 1:
            raise InvalidArgument("rank must be >= 1")
        if self.step_size <= 0:
            raise InvalidArgument("step_size must be positive")
        if self.dykstra_tol <= 0 or self.cost_tol <= 0:
            raise InvalidArgument("tolerances must be positive")
        if self.max_iters < 1 or self.dykstra_max_iters < 1:
            raise InvalidArgument("iteration caps must be >= 1")
        if self.init not in ("kmeans", "perturbed"):
            raise InvalidArgument(f"unknown init {self.init!r}; expected 'kmeans' or 'perturbed'")
        if self.init_temperature <= 0 or not 0 <= self.init_noise < 1:
            raise InvalidArgument("init_temperature must be positive and init_noise in [0, 1)")
        if self.g_floor is not None and self.rank is not None:
            if not 0 < self.g_floor <= 1.0 / self.rank:
                raise InvalidArgument("g_floor must lie in (0, 1/rank]")

    def resolve(self, n0: int, n1: int) -> "LowRankConfig":
        """Materialize rank and g_floor defaults for a given problem size."""
        r = self.rank if self.rank is not None else min(n0, n1)
        floor = self.g_floor if self.g_floor is not None else 1e-10 / r
        return dataclasses.replace(self, rank=r, g_floor=floor)


class Kernels(NamedTuple):
    xi1: np.ndarray
    xi2: np.ndarray
    xi3: np.ndarray
    stabilized: bool


@dataclass(frozen=True)
class LowRankResult:
    plan: LowRankPlan
    cost_trace: list
    converged: bool
    iterations: int

    def __iter__(self):
        yield self.plan
        yield self.cost_trace

    @property
    def cost(self) -> float:
        return self.cost_trace[-1]


def init_plan(mu0, mu1, r: int) -> LowRankPlan:
    """Independent factors ``Q0 = mu0 g^T``, ``Q1 = mu1 g^T`` with uniform ``g``."""
    if r < 1:
        raise InvalidArgument("rank must be >= 1")
    mu0 = np.asarray(mu0, float)
    mu1 = np.asarray(mu1, float)
    g = np.full(r, 1.0 / r)
    return LowRankPlan(np.outer(mu0, g), np.outer(mu1, g), g)


def perturbed_plan(mu0, mu1, r: int, g_floor: float, noise: float, seed: int,
                   tol: float = 1e-12) -> LowRankPlan:
    """Feasible plan near :func:`init_plan` with its column symmetry broken.

    The independent plan is a stationary point of the mirror-descent map
    (all columns of each factor are equal, so every update is a row scaling
    the projection undoes). Multiplying entries by seeded factors in
    ``[1 - noise, 1 + noise]`` and projecting gives a nearby feasible start.
    """
    base = init_plan(mu0, mu1, r)
    if noise == 0.0:
        return LowRankPlan(base.Q0, base.Q1, base.g, g_floor)
    rng = np.random.default_rng(seed)
    xi1 = base.Q0 * (1.0 + noise * rng.uniform(-1.0, 1.0, base.Q0.shape))
    xi2 = base.Q1 * (1.0 + noise * rng.uniform(-1.0, 1.0, base.Q1.shape))
    return lr_dykstra(xi1, xi2, base.g, mu0, mu1, g_floor, tol)


def cluster_plan(X0, X1, mu0, mu1, r: int, g_floor: float, seed: int,
                 temperature: float = 0.05, tol: float = 1e-12) -> LowRankPlan:
    """Feasible start that groups nodes of both graphs by feature similarity.

    The pooled feature rows are clustered into ``r`` centroids (k-means++
    seeded with ``seed``); each node is softly assigned to the centroids with
    weights ``exp(-||x - z_k||^2 / (temperature * s))``, ``s`` the median
    squared distance, and the result is projected onto the constraint set.
    Falls back to :func:`perturbed_plan` when there are fewer distinct rows
    than centroids.
    """
    from scipy.cluster.vq import kmeans2

    X = np.vstack([X0, X1])
    if len(np.unique(X, axis=0)) < r:
        return perturbed_plan(mu0, mu1, r, g_floor, 0.5, seed, tol)
    Z, _ = kmeans2(X, r, minit="++", rng=seed)
    C0 = _sq_dists(X0, Z)
    C1 = _sq_dists(X1, Z)
    scale = np.median(np.concatenate([C0.ravel(), C1.ravel()]))
    scale = temperature * (scale if scale > 0 else 1.0)
    L0 = -C0 / scale
    L1 = -C1 / scale
    xi1 = np.exp(np.maximum(L0 - L0.max(1, keepdims=True), -_EXP_MAX / 2))
    xi2 = np.exp(np.maximum(L1 - L1.max(1, keepdims=True), -_EXP_MAX / 2))
    return lr_dykstra(xi1, xi2, np.full(r, 1.0 / r), mu0, mu1, g_floor, tol)


def _sq_dists(X, Z):
    from scipy.spatial.distance import cdist

    return cdist(X, Z, metric="sqeuclidean")


def _exponent_terms(plan: LowRankPlan, A0, A1, M2, alpha):
    """Pieces of ``B = -grad_S`` contracted with the factors.

    Returns ``B Q1 diag(1/g)``, ``B^T Q0 diag(1/g)`` and ``diag(Q0^T B Q1)``.
    """
    Q0, Q1, g = plan.Q0, plan.Q1, plan.g
    R0 = Q0 / g
    R1 = Q1 / g
    A0Q0 = A0 @ Q0
    A1Q1 = A1 @ Q1
    # A0 P A1 = (A0 Q0) diag(1/g) (A1 Q1)^T, contracted through r x r blocks
    BQ1 = -(1.0 - alpha) * (M2 @ R1) + 4.0 * alpha * ((A0Q0 / g) @ (A1Q1.T @ R1))
    BtQ0 = -(1.0 - alpha) * (M2.T @ R0) + 4.0 * alpha * ((A1Q1 / g) @ (A0Q0.T @ R0))
    diag = np.einsum("ij,ij->j", Q0, BQ1) * g
    return BQ1, BtQ0, diag


def gradient_kernels(plan: LowRankPlan, g0: Graph, g1: Graph, M, alpha: float,
                     gamma: float) -> Kernels:
    """Mirror-descent kernels for one outer step.

    With ``B = -(1 - alpha) M^2 + 4 alpha A0 Q0 diag(1/g) Q1^T A1`` (the
    negative gradient of the FGW cost in the coupling, up to terms fixed by
    the marginals)::

        xi1 = exp(gamma B Q1 diag(1/g)) * Q0                (n0 x r)
        xi2 = exp(gamma B^T Q0 diag(1/g)) * Q1              (n1 x r)
        xi3 = exp(-gamma diag(Q0^T B Q1) / g^2) * g         (r,)

    If an exponent would overflow (or a row would underflow to zero), rows of
    ``xi1``/``xi2`` and the whole of ``xi3`` are divided by their maxima. Those
    rescalings leave the subsequent KL projection unchanged; ``stabilized``
    reports that it happened. Rescaled entries are bounded below by
    ``exp(-350)`` so the scalings of the projection stay representable.
    """
    M = np.asarray(M, float)
    return _kernels(plan, g0.adjacency, g1.adjacency, M ** 2, alpha, gamma)


def _kernels(plan, A0, A1, M2, alpha, gamma) -> Kernels:
    BQ1, BtQ0, diag = _exponent_terms(plan, A0, A1, M2, alpha)
    g = plan.g
    with np.errstate(divide="ignore"):
        L1 = gamma * BQ1 + np.log(plan.Q0)
        L2 = gamma * BtQ0 + np.log(plan.Q1)
        L3 = -gamma * diag / g ** 2 + np.log(g)
    stabilized = False
    out = []
    for L, axis in ((L1, 1), (L2, 1), (L3, None)):
        top = np.max(L, axis=axis, keepdims=axis is not None)
        if np.any(top > _EXP_MAX) or np.any(top < -_EXP_MAX):
            # entries far below the maximum are kept at exp(-_EXP_MAX / 2)
            # rather than underflowing, so no column of a kernel vanishes
            L = np.maximum(L - top, -_EXP_MAX / 2)
            stabilized = True
        out.append(np.exp(L))
    if stabilized:
        logger.debug("kernel exponents rescaled to avoid overflow")
    for k in out:
        if not np.all(np.isfinite(k)):
            raise NumericalFailure("non-finite mirror-descent kernel")
    return Kernels(out[0], out[1], out[2], stabilized)


def lr_dykstra(xi1, xi2, xi3, mu0, mu1, g_floor: float, tol: float,
               max_iters: int = 10_000) -> LowRankPlan:
    """KL projection of ``(xi1, xi2, xi3)`` onto the low-rank coupling set.

    The set is ``{Q0 in Pi(mu0, g), Q1 in Pi(mu1, g), g in simplex, g >= g_floor}``.
    Alternating scalings with Dykstra corrections for the two non-affine
    pieces (the lower bound and the shared ``g``); stops when the summed l1
    violation of the row marginals is at most ``tol``. Column sums of both
    factors equal ``g`` exactly on return.
    """
    xi1 = np.asarray(xi1, float)
    xi2 = np.asarray(xi2, float)
    xi3 = np.asarray(xi3, float)
    mu0 = np.asarray(mu0, float)
    mu1 = np.asarray(mu1, float)
    r = xi3.shape[0]
    if g_floor > 1.0 / r * (1 + 1e-12):
        raise InvalidArgument("g_floor must not exceed 1/rank")

    g_t = xi3.copy()
    q3a = np.ones(r)
    q3b = np.ones(r)
    v1 = np.ones(r)
    v2 = np.ones(r)
    q1 = np.ones(r)
    q2 = np.ones(r)
    xv1 = xi1 @ v1
    xv2 = xi2 @ v2
    err = math.inf
    converged = False
    it = 0
    for it in range(1, max_iters + 1):
        u1 = _safe_div(mu0, xv1)
        u2 = _safe_div(mu1, xv2)

        # lower-bound constraint on g, with its Dykstra correction q3a
        g = np.maximum(g_floor, g_t * q3a)
        q3a = g_t * q3a / g
        g_t = g

        # shared column marginal: geometric mean of the three proposals
        k1 = xi1.T @ u1
        k2 = xi2.T @ u2
        g = np.cbrt(g_t * q3b * (v1 * q1 * k1) * (v2 * q2 * k2))
        v1_new = g / k1
        v2_new = g / k2
        q1 = v1 * q1 / v1_new
        q2 = v2 * q2 / v2_new
        q3b = g_t * q3b / g
        v1, v2, g_t = v1_new, v2_new, g

        xv1 = xi1 @ v1
        xv2 = xi2 @ v2
        err = np.abs(u1 * xv1 - mu0).sum() + np.abs(u2 * xv2 - mu1).sum()
        if not np.isfinite(err):
            raise NumericalFailure("LR-Dykstra diverged")
        if err <= tol:
            converged = True
            break
    if not converged:
        logger.debug("LR-Dykstra stopped at violation %.3g after %d iterations", err, max_iters)
    Q0 = u1[:, None] * xi1 * v1[None, :]
    Q1 = u2[:, None] * xi2 * v2[None, :]
    g = _floor_simplex(g, g_floor)
    Q0 = round_to_polytope(Q0, mu0, g)
    Q1 = round_to_polytope(Q1, mu1, g)
    return LowRankPlan(Q0, Q1, g, g_floor, converged, it)


def _floor_simplex(g, floor):
    # put g on {g >= floor, sum g = 1} keeping the relative excess over the floor
    excess = np.maximum(g - floor, 0.0)
    spare = max(1.0 - floor * g.shape[0], 0.0)
    total = excess.sum()
    if total <= 0 or spare == 0.0:
        return np.full(g.shape[0], 1.0 / g.shape[0]) if spare == 0.0 else floor + spare / g.shape[0]
    return floor + spare * excess / total


def round_to_polytope(F, row, col):
    """Move a nearly feasible nonnegative matrix onto ``Pi(row, col)``.

    Rows and then columns that carry too much mass are scaled down, and the
    remaining deficit is added back as a rank-one term. The l1 change is at
    most twice the input violation.
    """
    row_sums = F.sum(1)
    x = np.minimum(1.0, _safe_div(row, row_sums))
    F = F * x[:, None]
    col_sums = F.sum(0)
    y = np.minimum(1.0, _safe_div(col, col_sums))
    F = F * y[None, :]
    err_r = np.maximum(row - F.sum(1), 0.0)
    err_c = np.maximum(col - F.sum(0), 0.0)
    total = err_r.sum()
    if total > 0:
        F = F + np.outer(err_r, err_c) / total
    return F


def _safe_div(a, b):
    out = np.zeros_like(a)
    np.divide(a, b, out=out, where=b > 0)
    return out


def lowrank_cost(plan: LowRankPlan, A0, A1, M, alpha: float) -> float:
    """Square-rooted FGW cost of the coupling the plan represents."""
    return math.sqrt(fgw_cost_matrices(A0, A1, M, plan.coupling(), alpha))


def solve_lowrank_fgw(g0: Graph, g1: Graph, alpha: float = 0.5,
                      cfg: LowRankConfig | None = None, M=None) -> LowRankResult:
    """Mirror descent on the low-rank FGW problem.

    Parameters
    ----------
    g0, g1 : Graph
        Source and target graphs.
    alpha : float
        Structure weight of the FGW cost.
    cfg : LowRankConfig, optional
        Rank, step size, Dykstra settings and stopping rule.
    M : array, optional
        Precomputed attribute distance matrix.

    Returns
    -------
    LowRankResult
        Final plan and the per-iteration square-rooted cost, starting with the
        cost of the initial plan.
    """
    if not 0.0 <= alpha <= 1.0:
        raise InvalidArgument(f"alpha must lie in [0, 1], got {alpha}")
    cfg = (cfg or LowRankConfig()).resolve(g0.n, g1.n)
    if M is None:
        M = attribute_distance_matrix(g0, g1)
    A0, A1 = g0.adjacency, g1.adjacency
    M2 = M ** 2
    mu0, mu1 = g0.marginal, g1.marginal

    if cfg.init == "kmeans":
        plan = cluster_plan(g0.features, g1.features, mu0, mu1, cfg.rank, cfg.g_floor,
                            cfg.seed, cfg.init_temperature)
    else:
        plan = perturbed_plan(mu0, mu1, cfg.rank, cfg.g_floor, cfg.init_noise, cfg.seed)
    trace = [lowrank_cost(plan, A0, A1, M, alpha)]
    converged = False
    it = 0
    for it in range(1, cfg.max_iters + 1):
        gamma = cfg.step_size
        if cfg.rescale_step:
            gamma = gamma / _gradient_range(plan, A0, A1, M2, alpha)
        xi = _kernels(plan, A0, A1, M2, alpha, gamma)
        plan = lr_dykstra(xi.xi1, xi.xi2, xi.xi3, mu0, mu1, cfg.g_floor,
                          cfg.dykstra_tol, cfg.dykstra_max_iters)
        trace.append(lowrank_cost(plan, A0, A1, M, alpha))
        prev, cur = trace[-2], trace[-1]
        if abs(prev - cur) <= cfg.cost_tol * max(prev, 1e-12):
            converged = True
            break
    return LowRankResult(plan, trace, converged, it)


def _gradient_range(plan, A0, A1, M2, alpha) -> float:
    BQ1, BtQ0, diag = _exponent_terms(plan, A0, A1, M2, alpha)
    d3 = diag / plan.g ** 2
    spread = max(np.ptp(BQ1), np.ptp(BtQ0), np.ptp(d3))
    return spread if spread > 0 else 1.0
