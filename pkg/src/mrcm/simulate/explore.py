"""Rooted exploration: thinned clusters, branching envelopes and two-root trials."""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from ..model import ModelError, ModelSpec
from . import _engine as eng

__all__ = [
    "ExplorationConfig",
    "ClusterSample",
    "explore_cluster",
    "explore_branching",
    "explore_coupled",
    "two_root_connect",
    "packed",
    "mark_pair",
]

DEFAULT_SIZE_CAP = 100_000
_NO_GEN_CAP = np.iinfo(np.int64).max


@dataclass(frozen=True)
class ExplorationConfig:
    """Termination caps for one exploration.

    ``generation_cap`` and ``radius_cap`` are disabled when ``None``.
    """

    size_cap: int = DEFAULT_SIZE_CAP
    generation_cap: int | None = None
    radius_cap: float | None = None

    def __post_init__(self):
        if int(self.size_cap) != self.size_cap or self.size_cap < 1:
            raise ValueError("size_cap must be an integer >= 1")
        if self.generation_cap is not None and self.generation_cap < 0:
            raise ValueError("generation_cap must be >= 0")
        if self.radius_cap is not None and not self.radius_cap > 0:
            raise ValueError("radius_cap must be positive")

    def engine_args(self):
        return (int(self.size_cap),
                _NO_GEN_CAP if self.generation_cap is None else int(self.generation_cap),
                0.0 if self.radius_cap is None else float(self.radius_cap))

    def to_dict(self):
        return {"size_cap": self.size_cap, "generation_cap": self.generation_cap,
                "radius_cap": self.radius_cap}


@dataclass(frozen=True)
class ClusterSample:
    size: int
    capped: str = "none"
    generations: int = 0
    max_radius: float = 0.0
    root_degree: int = field(default=0, compare=False)

    @classmethod
    def from_row(cls, row) -> "ClusterSample":
        return cls(int(row[0]), eng.CAP_NAMES[int(row[1])], int(row[2]), float(row[3]), int(row[4]))


@lru_cache(maxsize=64)
def _packed_cached(model: ModelSpec):
    return eng.pack_model(model)


def packed(model: ModelSpec) -> eng.PackedModel:
    """Flattened, cached engine representation of ``model``."""
    return _packed_cached(model)


def mark_pair(model: ModelSpec, a):
    """Engine ``(index, value)`` form of mark ``a``."""
    model.marks.check(a)
    if model.marks.is_finite:
        return int(a), float(model.marks.values[int(a)])
    return -1, float(a)


def _check_lam(lam):
    if not lam >= 0 or not np.isfinite(lam):
        raise ValueError("intensity must be finite and nonnegative")


def _run(model, lam, a, cfg, rng, thinned, target=None):
    _check_lam(lam)
    cfg = cfg or ExplorationConfig()
    pk = packed(model)
    ia, va = mark_pair(model, a)
    if target is None:
        tpos, ib, vb, has = np.zeros(model.d), 0, 0.0, False
    else:
        tpos, (ib, vb), has = target[0], mark_pair(model, target[1]), True
    out = np.empty(6)
    eng.explore_one(*pk.args(), float(lam), ia, va, thinned, *cfg.engine_args(),
                    has, tpos, ib, vb, rng, out)
    return out


def explore_cluster(model: ModelSpec, lam: float, a, cfg: ExplorationConfig | None = None,
                    rng: np.random.Generator | None = None) -> ClusterSample:
    """Sample the cluster of a root with mark ``a`` planted at the origin.

    Vertices are processed in FIFO order.  A candidate child of ``x`` is
    kept with probability ``prod (1 - phi(z, y))`` over the vertices ``z``
    whose offspring were drawn before those of ``x``.
    """
    rng = rng if rng is not None else np.random.default_rng()
    return ClusterSample.from_row(_run(model, lam, a, cfg, rng, True))


def explore_branching(model: ModelSpec, lam: float, a, cfg: ExplorationConfig | None = None,
                      rng: np.random.Generator | None = None) -> ClusterSample:
    """Same offspring law as :func:`explore_cluster` without the thinning step."""
    rng = rng if rng is not None else np.random.default_rng()
    return ClusterSample.from_row(_run(model, lam, a, cfg, rng, False))


def explore_coupled(model: ModelSpec, lam: float, a, cfg: ExplorationConfig | None = None,
                    rng: np.random.Generator | None = None) -> tuple[ClusterSample, ClusterSample]:
    """A thinned cluster and the branching tree containing it, from one stream.

    Returns ``(thinned, branching)``; ``thinned.size <= branching.size`` always.
    """
    _check_lam(lam)
    rng = rng if rng is not None else np.random.default_rng()
    cfg = cfg or ExplorationConfig()
    ia, va = mark_pair(model, a)
    out = np.empty(12)
    eng.explore_coupled_one(*packed(model).args(), float(lam), ia, va, *cfg.engine_args(), rng, out)
    return ClusterSample.from_row(out[:6]), ClusterSample.from_row(out[6:])


def two_root_connect(model: ModelSpec, lam: float, y, marks, cfg: ExplorationConfig | None = None,
                     rng: np.random.Generator | None = None, return_capped: bool = False):
    """Whether ``(0, a)`` and ``(y, b)`` are connected in the doubly augmented graph.

    Exploration runs from the origin; the second root is a known point tested
    for an edge against each processed vertex.  With ``return_capped`` the
    cap outcome of the run is returned as well.
    """
    rng = rng if rng is not None else np.random.default_rng()
    y = np.atleast_1d(np.asarray(y, dtype=float))
    if y.shape != (model.d,):
        raise ModelError(f"displacement must have length {model.d}")
    a, b = marks
    out = _run(model, lam, a, cfg, rng, True, target=(y, b))
    hit = bool(out[5])
    if return_capped:
        return hit, eng.CAP_NAMES[int(out[1])]
    return hit
