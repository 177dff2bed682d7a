"""Two-class contextual stochastic block model graphs with controllable shifts.

Class id 1 holds the nodes with feature mean ``mu_plus`` and class id 0 those
with ``mu_minus``. Nodes are ordered class 1 first.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgument
from .graph import Graph

DEFAULT_N = 500
DEFAULT_D = 64
DEFAULT_HOMOPHILY = 0.5
DEFAULT_DEGREE = 40.0
DEFAULT_MU = 0.5

SHIFT_KINDS = ("attribute", "degree", "homophily")


@dataclass(frozen=True)
class CsbmSpec:
    n: int = DEFAULT_N
    p: float = 0.128
    q_inter: float = 0.032
    mu_plus: float = DEFAULT_MU
    mu_minus: float = -DEFAULT_MU
    d: int = DEFAULT_D
    seed: int = 0

    def __post_init__(self):
        if self.n < 2 or self.n % 2:
            raise InvalidArgument(f"n must be a positive even number, got {self.n}")
        if not (0.0 <= self.p <= 1.0 and 0.0 <= self.q_inter <= 1.0):
            raise InvalidArgument("edge probabilities must lie in [0, 1]")
        if self.d < 1:
            raise InvalidArgument("feature dimension must be >= 1")

    @classmethod
    def from_homophily_degree(cls, n=DEFAULT_N, homophily=DEFAULT_HOMOPHILY,
                              degree=DEFAULT_DEGREE, mu_plus=DEFAULT_MU,
                              mu_minus=-DEFAULT_MU, d=DEFAULT_D, seed=0) -> "CsbmSpec":
        """Solve ``h = p / (p + q)`` and ``degree = n (p + q) / 2`` for ``(p, q)``."""
        if not 0.0 <= homophily <= 1.0:
            raise InvalidArgument("homophily must lie in [0, 1]")
        if degree < 0:
            raise InvalidArgument("degree must be nonnegative")
        total = 2.0 * degree / n
        return cls(n=n, p=homophily * total, q_inter=(1.0 - homophily) * total,
                   mu_plus=mu_plus, mu_minus=mu_minus, d=d, seed=seed)

    @property
    def homophily(self) -> float:
        s = self.p + self.q_inter
        return self.p / s if s > 0 else float("nan")

    @property
    def degree(self) -> float:
        return self.n * (self.p + self.q_inter) / 2.0

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        out["homophily"] = self.homophily
        out["degree"] = self.degree
        return out


def generate_csbm(spec: CsbmSpec) -> Graph:
    """Sample a labeled graph; identical specs give identical graphs."""
    rng = np.random.default_rng(spec.seed)
    n, half = spec.n, spec.n // 2
    labels = np.concatenate([np.ones(half, dtype=np.int64), np.zeros(half, dtype=np.int64)])
    means = np.where(labels == 1, spec.mu_plus, spec.mu_minus)
    X = means[:, None] + rng.standard_normal((n, spec.d))
    same = labels[:, None] == labels[None, :]
    prob = np.where(same, spec.p, spec.q_inter)
    draws = rng.random((n, n)) < prob
    A = np.triu(draws, 1).astype(float)
    A = A + A.T
    return Graph(A, X, labels=labels)


def csbm_shift_preset(kind: str, side: str, seed: int = 0) -> CsbmSpec:
    """Source/target presets for the three shift families.

    attribute: means (0.6, -0.4) on the source side, (0.4, -0.6) on the target;
    degree: 80 on the source side, 20 on the target; homophily: 0.8 on the
    source side, 0.2 on the target. Unshifted axes use homophily 0.5,
    degree 40 and means +-0.5, with 500 nodes and 64 feature dimensions.
    """
    if side not in ("source", "target"):
        raise InvalidArgument(f"side must be 'source' or 'target', got {side!r}")
    src = side == "source"
    h, deg, mp, mm = DEFAULT_HOMOPHILY, DEFAULT_DEGREE, DEFAULT_MU, -DEFAULT_MU
    if kind == "attribute":
        mp, mm = (0.6, -0.4) if src else (0.4, -0.6)
    elif kind == "degree":
        deg = 80.0 if src else 20.0
    elif kind == "homophily":
        h = 0.8 if src else 0.2
    else:
        raise InvalidArgument(f"unknown shift kind {kind!r}; expected one of {SHIFT_KINDS}")
    return CsbmSpec.from_homophily_degree(DEFAULT_N, h, deg, mp, mm, DEFAULT_D, seed)


def csbm_shift_pair(kind: str, level: float, seed: int = 0, n: int = DEFAULT_N,
                    d: int = DEFAULT_D) -> tuple[CsbmSpec, CsbmSpec]:
    """Source and target specs whose gap along one axis equals ``level``.

    The two sides sit symmetrically around the unshifted defaults: homophily
    ``0.5 +- level/2``, degree ``50 +- level/2`` or feature means shifted by
    ``+-level/2``. At the largest levels this reproduces the presets
    (``level`` 0.6, 60 and 0.2 respectively). The target is drawn with seed
    ``seed + 1``.
    """
    if level < 0:
        raise InvalidArgument("shift level must be nonnegative")
    sides = []
    for sign, s in ((1.0, seed), (-1.0, seed + 1)):
        h, deg, shift = DEFAULT_HOMOPHILY, DEFAULT_DEGREE, 0.0
        if kind == "homophily":
            h = 0.5 + sign * level / 2.0
        elif kind == "degree":
            deg = 50.0 + sign * level / 2.0
        elif kind == "attribute":
            shift = sign * level / 2.0
        else:
            raise InvalidArgument(f"unknown shift kind {kind!r}; expected one of {SHIFT_KINDS}")
        sides.append(CsbmSpec.from_homophily_degree(
            n, h, deg, DEFAULT_MU + shift, -DEFAULT_MU + shift, d, s))
    return sides[0], sides[1]
