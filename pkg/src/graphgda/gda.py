"""Direct adaptation and gradual self-training along a generated path.

Ground-truth target labels enter only through :class:`EvalLabels`, which the
training code never accepts, so evaluation labels cannot leak into a fit.
"""
from __future__ import annotations

import csv
import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .csbm import csbm_shift_pair, csbm_shift_preset, generate_csbm
from .errors import InvalidArgument
from .geodesic import GeodesicPath, generate_path
from .gnn import GCNModel, TrainConfig, entropy_confidence, predict, train
from .graph import Graph
from .lowrank import LowRankConfig, LowRankPlan

logger = logging.getLogger(__name__)


class EvalLabels:
    """Read-only target labels used for scoring only."""

    __slots__ = ("_y",)

    def __init__(self, labels):
        y = np.array(labels, dtype=np.int64, copy=True)
        y.setflags(write=False)
        self._y = y

    @property
    def values(self) -> np.ndarray:
        return self._y

    def __len__(self):
        return len(self._y)

    def __array__(self, dtype=None, copy=None):
        # blocks np.asarray(), which every training entry point goes through
        raise TypeError("evaluation labels are for scoring only and cannot be used as "
                        "training targets")


def _eval_array(labels) -> Optional[np.ndarray]:
    if labels is None:
        return None
    return labels.values if isinstance(labels, EvalLabels) else np.asarray(labels, np.int64)


@dataclass
class GdaReport:
    mode: str
    per_stage_accuracy: list            # (stage, target accuracy or None)
    final_target_accuracy: Optional[float]
    path_metadata: dict
    seeds: dict
    wall_times: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class GdaConfig:
    T: int = 3
    alpha: float = 0.5
    lr: LowRankConfig = field(default_factory=LowRankConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    # weight pseudo-labels by entropy confidence; False gives unit weights
    use_confidence: bool = True

    def __post_init__(self):
        if self.T < 1:
            raise InvalidArgument(f"T must be >= 1, got {self.T}")
        if not 0.0 <= self.alpha <= 1.0:
            raise InvalidArgument("alpha must lie in [0, 1]")


# stage hook: (stage, graph, pseudo_labels, weights, previous model) -> (labels, weights)
Adapter = Callable[[int, Graph, np.ndarray, np.ndarray, GCNModel], tuple]


def evaluate(model: GCNModel, graph: Graph, labels) -> float:
    """Fraction of nodes whose argmax prediction equals the label."""
    y = _eval_array(labels)
    if y is None or y.shape != (graph.n,):
        raise InvalidArgument("evaluation labels must cover every node")
    pred, _ = predict(model, graph)
    return float(np.mean(pred == y))


def label_transfer_to_transformed(source_labels, P0, num_classes: Optional[int] = None):
    """Class vote of each transformed node through the columns of ``P0``.

    Column ``j`` of ``P0`` is a distribution over source nodes; the vote is
    ``sum_u P0[u, j] onehot(y_u)``. The label is its argmax (lowest index on
    ties) and the weight its maximum, i.e. the class purity of the column.
    """
    y = np.asarray(source_labels, np.int64)
    P0 = np.asarray(P0, float)
    if P0.shape[0] != y.shape[0]:
        raise InvalidArgument(f"{y.shape[0]} labels for a factor with {P0.shape[0]} rows")
    C = num_classes if num_classes is not None else int(y.max()) + 1
    onehot = np.zeros((y.shape[0], C))
    onehot[np.arange(y.shape[0]), y] = 1.0
    votes = P0.T @ onehot
    labels = np.argmax(votes, axis=1)
    weights = np.clip(votes.max(axis=1), 0.0, 1.0)
    return labels, weights


def _num_classes(source: Graph, num_classes):
    if num_classes is not None:
        return num_classes
    return max(2, source.num_classes)


def run_direct(source: Graph, target: Graph, eval_labels=None,
               train_cfg: TrainConfig | None = None, num_classes: Optional[int] = None):
    """Train on the labeled source with unit weights and score the model on the target.

    Returns ``(report, model)``.
    """
    if source.labels is None:
        raise InvalidArgument("source graph must be labeled")
    cfg = train_cfg or TrainConfig()
    C = _num_classes(source, num_classes)
    t0 = time.perf_counter()
    model = train(source, source.labels, None, cfg, num_classes=C)
    wall = time.perf_counter() - t0
    y = _eval_array(eval_labels)
    acc = evaluate(model, target.without_labels(), y) if y is not None else None
    report = GdaReport("direct", [(0, acc)], acc, {"T": 0}, {"train": cfg.seed},
                       {"train": wall})
    return report, model


def run_gradual(source: Graph, target: Graph, eval_labels=None, T: int = 3,
                lr_cfg: LowRankConfig | None = None, train_cfg: TrainConfig | None = None,
                alpha: float = 0.5, path: GeodesicPath | None = None,
                plan: LowRankPlan | None = None, use_confidence: bool = True,
                adapter: Adapter | None = None, num_classes: Optional[int] = None,
                measure_distance: bool = False):
    """Gradual self-training along ``H_0 .. H_T``.

    1. Build the path (or reuse ``path`` / ``plan``).
    2. Train ``f_0`` on ``H_0`` with source labels carried through ``P0``,
       weighted by class purity.
    3. For each next graph, pseudo-label it with the current model, weight the
       labels by entropy confidence and fine-tune a copy of the model.
    4. Score every stage model on the original target.

    ``adapter`` may rewrite the pseudo-labels and weights of each stage.
    Returns ``(report, final model, path)``.
    """
    if source.labels is None:
        raise InvalidArgument("source graph must be labeled")
    cfg = train_cfg or TrainConfig()
    C = _num_classes(source, num_classes)
    source_unlabeled = source.without_labels()
    target_unlabeled = target.without_labels()
    y_eval = _eval_array(eval_labels)
    walls = {}
    t0 = time.perf_counter()
    if path is None:
        path = generate_path(source_unlabeled, target_unlabeled, T, alpha, lr_cfg, plan=plan,
                             measure_distance=measure_distance)
    elif path.T != T:
        raise InvalidArgument(f"given path has T={path.T}, expected {T}")
    walls["path"] = time.perf_counter() - t0
    if path.P0 is None:
        raise InvalidArgument("path lacks the source factor needed to carry labels")

    t0 = time.perf_counter()
    labels0, weights0 = label_transfer_to_transformed(source.labels, path.P0, C)
    model = train(path.graphs[0], labels0, weights0, cfg, num_classes=C)
    stages = [(0, _score(model, target_unlabeled, y_eval))]
    for t in range(1, T + 1):
        H = path.graphs[t]
        pseudo, probs = predict(model, H)
        weights = entropy_confidence(probs) if use_confidence else np.ones(H.n)
        if adapter is not None:
            pseudo, weights = adapter(t, H, pseudo, weights, model)
        model = train(H, pseudo, weights, cfg, init=model)
        stages.append((t, _score(model, target_unlabeled, y_eval)))
    walls["train"] = time.perf_counter() - t0
    meta = {"T": T, "rank": path.rank, "alpha": path.alpha,
            "d_fgw": path.source_target_distance}
    seeds = {"train": cfg.seed, "transport": (lr_cfg or LowRankConfig()).seed}
    report = GdaReport("gradual", stages, stages[-1][1], meta, seeds, walls)
    return report, model, path


def _score(model, graph, y):
    return None if y is None else evaluate(model, graph, y)


def preset_pair(kind: str, seed: int):
    """Labeled source and target graphs for a shift preset; target uses ``seed + 1``."""
    src = generate_csbm(csbm_shift_preset(kind, "source", seed))
    tgt = generate_csbm(csbm_shift_preset(kind, "target", seed + 1))
    return src, tgt


def compare_on_pair(source: Graph, target: Graph, cfg: GdaConfig, seed: int,
                    path: GeodesicPath | None = None) -> dict:
    """Direct and gradual accuracy on one pair with every seed set to ``seed``."""
    tcfg = _with_seed(cfg.train, seed)
    lcfg = _with_seed(cfg.lr, seed)
    ev = EvalLabels(target.labels)
    direct, _ = run_direct(source, target.without_labels(), ev, tcfg)
    gradual, _, path = run_gradual(source, target.without_labels(), ev, cfg.T, lcfg, tcfg,
                                   cfg.alpha, path=path, use_confidence=cfg.use_confidence)
    return {"direct": direct, "gradual": gradual, "path": path}


def _with_seed(cfg, seed):
    from dataclasses import replace

    return replace(cfg, seed=seed)


def shift_sweep(kind: str, levels, T: int = 3, seeds=(0, 1, 2, 3, 4),
                cfg: GdaConfig | None = None, n: int = 500, d: int = 64) -> list[dict]:
    """Direct vs gradual accuracy across shift levels of one kind.

    Returns flat rows ``{kind, level, seed, method, accuracy, wall_time}``;
    :func:`summarize` turns them into mean and std per level.
    """
    cfg = cfg or GdaConfig(T=T)
    if cfg.T != T:
        from dataclasses import replace
        cfg = replace(cfg, T=T)
    rows = []
    for level in levels:
        for seed in seeds:
            s0, s1 = csbm_shift_pair(kind, level, seed, n, d)
            res = compare_on_pair(generate_csbm(s0), generate_csbm(s1), cfg, seed)
            for method in ("direct", "gradual"):
                rep = res[method]
                rows.append({"kind": kind, "level": float(level), "seed": seed,
                             "method": method, "accuracy": rep.final_target_accuracy,
                             "wall_time": float(sum(rep.wall_times.values()))})
    return rows


def summarize(rows) -> list[dict]:
    """Mean and population std of accuracy per (kind, level, method)."""
    groups: dict = {}
    for r in rows:
        groups.setdefault((r["kind"], r["level"], r["method"]), []).append(r["accuracy"])
    out = []
    for (kind, level, method), accs in groups.items():
        a = np.asarray(accs, float)
        out.append({"kind": kind, "level": level, "method": method, "n": len(a),
                    "mean": float(a.mean()), "std": float(a.std())})
    return out


CSV_FIELDS = ("kind", "level", "seed", "method", "accuracy", "wall_time")


def write_reports(out_dir, reports: list[dict], rows: list[dict]) -> dict[str, Path]:
    """``report.json`` (full reports plus rows) and ``report.csv`` (flat rows)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    js = out / "report.json"
    with open(js, "w") as fh:
        json.dump({"reports": reports, "rows": rows, "summary": summarize(rows)}, fh,
                  indent=2)
    cs = out / "report.csv"
    with open(cs, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=CSV_FIELDS, extrasaction="ignore")
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})
    return {"json": js, "csv": cs}
