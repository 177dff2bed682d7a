"""Aligned graph pairs, interpolated paths between them and path diagnostics.

A low-rank plan ``Q0 diag(1/g) Q1^T`` defines an ``r``-node surrogate of the
product space of two graphs. Pushing each graph through its normalized factor
gives an aligned pair that shares the node measure ``g``; a path of graphs is
then the entry-wise convex combination of the pair.
"""
from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import InvalidArgument, InvalidState
from .fgw import FgwConfig, fgw_distance_cg
from .graph import Graph, load_graph_dir, save_graph
from .lowrank import LowRankConfig, LowRankPlan, solve_lowrank_fgw

DEFAULT_T = 3
QUALITY_EXHAUSTIVE_MAX_T = 10
QUALITY_SAMPLES = 50
# full product-space reference is only offered for tiny pairs
PRODUCT_SPACE_MAX = 64
# source-target distances at or below this count as zero (identical graphs
# come out of the solver at ~1e-8 from rounding)
DEGENERATE_DISTANCE = 1e-6
_SUPPORT_EPS = 1e-15


@dataclass(frozen=True)
class GeodesicPath:
    """Graphs ``H_0 .. H_T`` at ``lambda = t / T``.

    ``P0`` and ``P1`` are the normalized transport factors that produced the
    endpoints; they are kept so labels can be carried onto ``H_0``.
    """

    graphs: tuple
    lambdas: np.ndarray
    source_target_distance: Optional[float]
    rank: int
    alpha: float
    P0: Optional[np.ndarray] = field(default=None, compare=False, repr=False)
    P1: Optional[np.ndarray] = field(default=None, compare=False, repr=False)
    timings: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        graphs = tuple(self.graphs)
        lam = np.asarray(self.lambdas, dtype=float)
        if len(graphs) < 2 or lam.shape != (len(graphs),):
            raise InvalidArgument("a path needs at least two graphs and one lambda per graph")
        if lam[0] != 0.0 or lam[-1] != 1.0 or np.any(np.diff(lam) <= 0):
            raise InvalidArgument("lambdas must increase strictly from 0 to 1")
        ref = graphs[0]
        for h in graphs[1:]:
            if h.n != ref.n or h.d != ref.d or not np.array_equal(h.marginal, ref.marginal):
                raise InvalidArgument("path graphs must share node count, dimension and marginal")
        object.__setattr__(self, "graphs", graphs)
        object.__setattr__(self, "lambdas", lam)

    @property
    def T(self) -> int:
        return len(self.graphs) - 1

    def __len__(self):
        return len(self.graphs)

    def __getitem__(self, t):
        return self.graphs[t]


def normalize_plan(plan: LowRankPlan) -> tuple[np.ndarray, np.ndarray]:
    """``P0 = Q0 diag(1/g)`` and ``P1 = Q1 diag(1/g)``; columns of both sum to one."""
    g = plan.g
    if np.any(g <= 0) or np.any(g < plan.g_floor * (1.0 - 1e-6)):
        raise InvalidState(f"inner histogram below its floor (min {g.min():.3g}, "
                           f"floor {plan.g_floor:.3g})")
    return plan.Q0 / g, plan.Q1 / g


def transform_graphs(g0: Graph, g1: Graph, P0, P1, g=None, tol: float = 1e-5):
    """Push both graphs onto the ``r`` columns of the normalized factors.

    ``A~ = P^T A P`` and ``X~ = P^T X``. Both transformed graphs carry the
    inner histogram ``g`` as their node measure. When ``g`` is not given it
    is recovered from ``P0 g = mu0``, ``P1 g = mu1`` by nonnegative least
    squares.

    Raises
    ------
    InvalidState
        If ``P0 diag(g) 1`` or ``P1 diag(g) 1`` misses its graph's marginal by
        more than ``10 * tol`` in l1, i.e. the two factors do not describe one
        coupling.
    """
    P0 = np.asarray(P0, float)
    P1 = np.asarray(P1, float)
    if P0.shape[0] != g0.n or P1.shape[0] != g1.n or P0.shape[1] != P1.shape[1]:
        raise InvalidArgument(
            f"factor shapes {P0.shape}, {P1.shape} do not fit graphs of size {g0.n}, {g1.n}")
    if g0.d != g1.d:
        raise InvalidArgument(f"feature dimensions differ: {g0.d} vs {g1.d}")
    if g is None:
        g = _recover_inner_histogram(P0, P1, g0.marginal, g1.marginal)
    g = np.asarray(g, float)
    err0 = np.abs(P0 @ g - g0.marginal).sum()
    err1 = np.abs(P1 @ g - g1.marginal).sum()
    if max(err0, err1) > 10.0 * tol:
        raise InvalidState(f"factors disagree on the shared marginal "
                           f"(l1 errors {err0:.3g}, {err1:.3g})")
    mu = g / g.sum()
    out = []
    for G, P in ((g0, P0), (g1, P1)):
        A = P.T @ G.adjacency @ P
        A = (A + A.T) / 2.0
        out.append(Graph(A, P.T @ G.features, mu))
    return out[0], out[1]


def _recover_inner_histogram(P0, P1, mu0, mu1):
    from scipy.optimize import nnls

    g, _ = nnls(np.vstack([P0, P1]), np.concatenate([mu0, mu1]))
    s = g.sum()
    if s <= 0:
        raise InvalidState("cannot recover a positive inner histogram from the factors")
    return g / s


def product_space_factors(coupling, support_only: bool = True):
    """Exact factors placing one transformed node on each cell of a coupling.

    Node ``k`` stands for the pair ``(u_k, v_k)`` with mass ``S[u_k, v_k]``;
    ``P0`` and ``P1`` are its one-hot indicator columns. The transformed source
    then copies ``A0[u_k, u_k']`` and ``X0[u_k]``, so it lies at FGW distance
    zero from the original graph. With ``support_only`` the cells are
    restricted to the support of ``S`` (at most ``n0 + n1 - 1`` cells for a
    vertex coupling); otherwise all ``n0 * n1`` cells are used, zero-mass
    ones included, which is limited to small pairs.

    Returns
    -------
    P0, P1, g : arrays
        ``(n0, K)`` and ``(n1, K)`` indicator factors and the cell masses.
    """
    S = np.asarray(coupling.plan if hasattr(coupling, "plan") else coupling, float)
    n0, n1 = S.shape
    if support_only:
        us, vs = np.nonzero(S > _SUPPORT_EPS)
    else:
        if n0 * n1 > PRODUCT_SPACE_MAX:
            raise InvalidArgument(
                f"full product space limited to {PRODUCT_SPACE_MAX} cells, got {n0 * n1}")
        us, vs = np.divmod(np.arange(n0 * n1), n1)
    k = len(us)
    P0 = np.zeros((n0, k))
    P1 = np.zeros((n1, k))
    P0[us, np.arange(k)] = 1.0
    P1[vs, np.arange(k)] = 1.0
    g = np.maximum(S[us, vs], 0.0)
    return P0, P1, g / g.sum()


def exact_transform(g0: Graph, g1: Graph, coupling, support_only: bool = True):
    """Aligned pair in the product space of a full coupling (test-scale reference)."""
    P0, P1, g = product_space_factors(coupling, support_only)
    return transform_graphs(g0, g1, P0, P1, g)


def interpolate(gt0: Graph, gt1: Graph, t: int, T: int) -> Graph:
    """``H_t = (1 - t/T) G~0 + (t/T) G~1`` for adjacency and features."""
    if T < 1 or not 0 <= t <= T:
        raise InvalidArgument(f"need 0 <= t <= T and T >= 1, got t={t}, T={T}")
    if gt0.n != gt1.n or gt0.d != gt1.d:
        raise InvalidArgument("endpoints are not aligned (node count or dimension differ)")
    if np.abs(gt0.marginal - gt1.marginal).sum() > 1e-9:
        raise InvalidArgument("endpoints are not aligned (marginals differ)")
    if t == 0:
        return gt0
    if t == T:
        return gt1
    lam = t / T
    A = (1.0 - lam) * gt0.adjacency + lam * gt1.adjacency
    X = (1.0 - lam) * gt0.features + lam * gt1.features
    return Graph(A, X, gt0.marginal)


def generate_path(g0: Graph, g1: Graph, T: int = DEFAULT_T, alpha: float = 0.5,
                  lr_cfg: LowRankConfig | None = None, plan: LowRankPlan | None = None,
                  measure_distance: bool = True,
                  fgw_cfg: FgwConfig | None = None) -> GeodesicPath:
    """Low-rank transport, aligned endpoints and ``T + 1`` interpolated graphs.

    Parameters
    ----------
    g0, g1 : Graph
        Source and target graphs.
    T : int
        Number of steps; ``T = 1`` gives just the two aligned endpoints.
    alpha : float
        Structure weight shared by the transport problem and the distance.
    lr_cfg : LowRankConfig, optional
        Settings for :func:`solve_lowrank_fgw`.
    plan : LowRankPlan, optional
        Reuse a plan computed earlier for the same pair instead of solving.
    measure_distance : bool
        Record ``d_FGW(g0, g1)`` from the conditional-gradient solver.
    """
    if T < 1:
        raise InvalidArgument(f"T must be >= 1, got {T}")
    timings = {}
    t0 = time.perf_counter()
    if plan is None:
        plan = solve_lowrank_fgw(g0, g1, alpha, lr_cfg).plan
    timings["transport"] = time.perf_counter() - t0
    t0 = time.perf_counter()
    P0, P1 = normalize_plan(plan)
    gt0, gt1 = transform_graphs(g0, g1, P0, P1, plan.g)
    graphs = tuple(interpolate(gt0, gt1, t, T) for t in range(T + 1))
    timings["interpolation"] = time.perf_counter() - t0
    dist = None
    if measure_distance:
        t0 = time.perf_counter()
        dist = fgw_distance_cg(g0, g1, fgw_cfg or FgwConfig(alpha=alpha)).distance
        timings["distance"] = time.perf_counter() - t0
    lambdas = np.arange(T + 1) / T
    return GeodesicPath(graphs, lambdas, dist, plan.rank, alpha, P0, P1, timings)


def path_from_endpoints(gt0: Graph, gt1: Graph, T: int, alpha: float = 0.5,
                        source_target_distance=None, P0=None, P1=None) -> GeodesicPath:
    """Path through two already aligned graphs (e.g. from :func:`exact_transform`)."""
    graphs = tuple(interpolate(gt0, gt1, t, T) for t in range(T + 1))
    return GeodesicPath(graphs, np.arange(T + 1) / T, source_target_distance,
                        gt0.n, alpha, P0, P1)


@dataclass(frozen=True)
class PathQuality:
    pairs: list             # (lambda0, lambda1, measured_ratio)
    pearson: Optional[float]
    degenerate: bool
    source_target_distance: Optional[float]

    def to_dict(self) -> dict:
        return {
            "pairs": [{"lambda0": a, "lambda1": b, "measured_ratio": r} for a, b, r in self.pairs],
            "pearson": self.pearson,
            "degenerate": self.degenerate,
            "source_target_distance": self.source_target_distance,
        }


def _quality_pairs(T: int, samples: int, seed: int):
    every = [(a, b) for a in range(T + 1) for b in range(a + 1, T + 1)]
    if T <= QUALITY_EXHAUSTIVE_MAX_T or samples >= len(every):
        return every
    rng = np.random.default_rng(seed)
    idx = rng.choice(len(every), size=samples, replace=False)
    return [every[i] for i in sorted(idx)]


def path_quality(path: GeodesicPath, alpha: float | None = None,
                 samples: int = QUALITY_SAMPLES, seed: int = 0,
                 fgw_cfg: FgwConfig | None = None) -> PathQuality:
    """Check that distances along the path grow linearly in ``|lambda0 - lambda1|``.

    Every index pair is measured when ``T <= 10``, otherwise ``samples``
    pairs drawn with ``seed``. Distances come from the conditional-gradient
    solver and are divided by the path's source-target distance; the report
    gives their Pearson correlation with the lambda gaps. A zero (at most
    ``DEGENERATE_DISTANCE``) or missing source-target distance gives a
    degenerate report without a correlation.
    """
    if len(path) < 3:
        raise InvalidArgument("path quality needs at least three graphs")
    alpha = path.alpha if alpha is None else alpha
    cfg = fgw_cfg or FgwConfig(alpha=alpha)
    base = path.source_target_distance
    if base is None or not base > DEGENERATE_DISTANCE:
        return PathQuality([], None, True, base)
    rows = []
    for a, b in _quality_pairs(path.T, samples, seed):
        d = fgw_distance_cg(path.graphs[a], path.graphs[b], cfg).distance
        rows.append((float(path.lambdas[a]), float(path.lambdas[b]), d / base))
    gaps = np.array([b - a for a, b, _ in rows])
    ratios = np.array([r for _, _, r in rows])
    if np.ptp(ratios) == 0 or np.ptp(gaps) == 0:
        return PathQuality(rows, None, True, base)
    pearson = float(np.corrcoef(gaps, ratios)[0, 1])
    return PathQuality(rows, pearson, False, base)


def estimate_optimal_T(d_fgw: float, C: float, C_f: float, delta: float, q: float = 2.0) -> int:
    """Stage count balancing accumulated training error and path length.

    ``T ~ ((q - 1) C / (C_f delta))^(1/q) * d_fgw``, rounded to the nearest
    integer and at least 1.
    """
    for name, v in (("d_fgw", d_fgw), ("C", C), ("C_f", C_f), ("delta", delta), ("q", q)):
        if not v > 0:
            raise InvalidArgument(f"{name} must be positive, got {v}")
    if q < 1:
        raise InvalidArgument(f"q must be >= 1, got {q}")
    raw = ((q - 1.0) * C / (C_f * delta)) ** (1.0 / q) * d_fgw
    return max(1, int(math.floor(raw + 0.5)))


def save_path(path: GeodesicPath, directory) -> Path:
    """Write ``H_000 .. H_TTT`` graph folders and ``path.json``."""
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    width = max(3, len(str(path.T)))
    names = []
    for t, h in enumerate(path.graphs):
        name = f"H_{t:0{width}d}"
        save_graph(h, out / name, write_marginal=True)
        names.append(name)
    meta = {
        "T": path.T,
        "lambdas": [float(x) for x in path.lambdas],
        "rank": path.rank,
        "alpha": path.alpha,
        "source_target_distance": path.source_target_distance,
        "graphs": names,
    }
    if path.timings:
        meta["timings"] = path.timings
    with open(out / "path.json", "w") as fh:
        json.dump(meta, fh, indent=2)
    return out


def load_path(directory) -> GeodesicPath:
    d = Path(directory)
    with open(d / "path.json") as fh:
        meta = json.load(fh)
    graphs = tuple(load_graph_dir(d / name) for name in meta["graphs"])
    return GeodesicPath(graphs, np.asarray(meta["lambdas"]), meta["source_target_distance"],
                        meta["rank"], meta["alpha"])


def consecutive_distances(path: GeodesicPath, alpha: float | None = None,
                          fgw_cfg: FgwConfig | None = None) -> list:
    """``d_FGW(H_{t-1}, H_t)`` for ``t = 1..T``."""
    alpha = path.alpha if alpha is None else alpha
    cfg = fgw_cfg or FgwConfig(alpha=alpha)
    return [fgw_distance_cg(path.graphs[t - 1], path.graphs[t], cfg).distance
            for t in range(1, len(path))]


def pairwise_indices(T: int, samples: int = QUALITY_SAMPLES, seed: int = 0) -> Sequence:
    return _quality_pairs(T, samples, seed)
