"""Seeded, block-parallel batches of explorations.

Runs are grouped in fixed-size blocks.  Block ``k`` of task ``t`` draws from
``PCG64(s)`` where ``s`` is the first 64-bit word of
``SeedSequence(seed, spawn_key=(t, k))``.  The partition into blocks never
depends on the worker count, so results are identical for any ``workers``.
"""
from __future__ import annotations

import io
import os
from dataclasses import dataclass

import numpy as np
from joblib import Parallel, delayed

from ..model import ModelSpec
from . import _engine as eng
from .explore import ClusterSample, ExplorationConfig, mark_pair, packed

__all__ = ["BatchResult", "run_batch", "block_seed", "resolve_workers", "SAMPLE_COLUMNS", "MODES"]

BLOCK_SIZE = 1024
MODES = ("thinned", "branching", "coupled", "two_root")
SAMPLE_COLUMNS = ("run_id", "seed", "lambda", "root_mark", "size", "capped", "generations", "max_radius")


def block_seed(seed: int, task: int, block: int) -> int:
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(task), int(block)))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def resolve_workers(workers: int | None = None) -> int:
    env = os.environ.get("MRCM_THREADS")
    if env:
        try:
            workers = int(env)
        except ValueError:
            raise ValueError(f"MRCM_THREADS must be an integer, got {env!r}") from None
    workers = 1 if workers is None else int(workers)
    if workers < 1:
        raise ValueError("workers must be >= 1")
    return workers


@dataclass
class BatchResult:
    """Per-run records of one batch, in run order.

    ``table`` columns are size, capped code, generations, max_radius,
    root_degree and target hit.  In coupled mode ``branching`` holds the
    matching envelope records.
    """

    lam: float
    root_mark: object
    mode: str
    seeds: np.ndarray
    table: np.ndarray
    cfg: ExplorationConfig
    branching: np.ndarray | None = None

    def __len__(self):
        return len(self.table)

    @property
    def sizes(self) -> np.ndarray:
        return self.table[:, 0].astype(np.int64)

    @property
    def capped(self) -> np.ndarray:
        return self.table[:, 1] != eng.CAP_NONE

    @property
    def size_capped(self) -> np.ndarray:
        return self.table[:, 1] == eng.CAP_SIZE

    @property
    def root_degrees(self) -> np.ndarray:
        return self.table[:, 4].astype(np.int64)

    @property
    def hits(self) -> np.ndarray:
        return self.table[:, 5] > 0

    @property
    def generations(self) -> np.ndarray:
        return self.table[:, 2].astype(np.int64)

    def samples(self) -> list[ClusterSample]:
        return [ClusterSample.from_row(r) for r in self.table]

    def csv_rows(self, run_offset: int = 0):
        lam = repr(float(self.lam))
        mark = self.root_mark
        for i, (s, r) in enumerate(zip(self.seeds, self.table)):
            yield (f"{run_offset + i},{int(s)},{lam},{mark},{int(r[0])},"
                   f"{eng.CAP_NAMES[int(r[1])]},{int(r[2])},{float(r[3])!r}")

    def to_csv(self, header: bool = True) -> str:
        buf = io.StringIO()
        if header:
            buf.write(",".join(SAMPLE_COLUMNS) + "\n")
        for row in self.csv_rows():
            buf.write(row + "\n")
        return buf.getvalue()


def _block(pk, lam, ia, va, mode, caps, target, seed, n):
    rng = np.random.Generator(np.random.PCG64(seed))
    if mode == "coupled":
        return eng.coupled_block(*pk.args(), lam, ia, va, *caps, rng, n)
    if target is None:
        tpos, ib, vb, has = np.zeros(int(pk.ip[3])), 0, 0.0, False
    else:
        tpos, ib, vb, has = target[0], target[1], target[2], True
    return eng.explore_block(*pk.args(), lam, ia, va, mode != "branching", *caps,
                             has, tpos, ib, vb, rng, n)


def run_batch(model: ModelSpec, lam: float, root_mark, n_runs: int, seed: int,
              cfg: ExplorationConfig | None = None, mode: str = "thinned", task: int = 0,
              workers: int | None = 1, target=None, block_size: int = BLOCK_SIZE) -> BatchResult:
    """Run ``n_runs`` independent explorations.

    Parameters
    ----------
    mode : {"thinned", "branching", "coupled", "two_root"}
    target : (displacement, mark), required for ``"two_root"``
    task : int
        Stream namespace; use distinct values for distinct experiments that
        share a seed.
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    if n_runs < 1:
        raise ValueError("n_runs must be >= 1")
    if not lam >= 0:
        raise ValueError("intensity must be nonnegative")
    if (mode == "two_root") != (target is not None):
        raise ValueError("target is required for two_root mode and only there")
    cfg = cfg or ExplorationConfig()
    pk = packed(model)
    ia, va = mark_pair(model, root_mark)
    tgt = None
    if target is not None:
        y = np.atleast_1d(np.asarray(target[0], dtype=float))
        if y.shape != (model.d,):
            raise ValueError(f"target displacement must have length {model.d}")
        ib, vb = mark_pair(model, target[1])
        tgt = (y, ib, vb)
    caps = cfg.engine_args()
    n_blocks = -(-n_runs // block_size)
    sizes = [min(block_size, n_runs - k * block_size) for k in range(n_blocks)]
    seeds = [block_seed(seed, task, k) for k in range(n_blocks)]
    jobs = [delayed(_block)(pk, float(lam), ia, va, mode, caps, tgt, s, n) for s, n in zip(seeds, sizes)]
    workers = resolve_workers(workers)
    if workers == 1 or n_blocks == 1:
        parts = [j[0](*j[1], **j[2]) for j in jobs]
    else:
        parts = Parallel(n_jobs=min(workers, n_blocks), prefer="threads")(jobs)
    table = np.concatenate(parts)
    run_seeds = np.repeat(np.asarray(seeds, dtype=np.uint64), sizes)
    mark_out = root_mark if model.marks.is_finite else float(root_mark)
    if mode == "coupled":
        return BatchResult(lam, mark_out, mode, run_seeds, table[:, :6], cfg, table[:, 6:])
    return BatchResult(lam, mark_out, mode, run_seeds, table, cfg)
