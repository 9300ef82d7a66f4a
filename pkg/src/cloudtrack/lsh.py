"""Random-hyperplane LSH over Fisher vectors with exact cosine re-ranking.

Buckets only shortlist candidates; the stored vectors are kept and every
query re-ranks its candidate set by exact cosine distance. A query whose
buckets yield fewer than k candidates falls back to an exhaustive scan, so
results degrade to exact search rather than coming back short.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .bmm import FisherVector
from .errors import InvalidArgument

__all__ = ["LshConfig", "LshIndex", "build_lsh", "query_knn"]


@dataclass(frozen=True)
class LshConfig:
    tables: int = 16
    bits: int = 18
    seed: int = 0


class LshIndex:
    """Hyperplane signatures in `tables` hash tables plus the raw vectors."""

    def __init__(self, fvs: np.ndarray, ref_ids: np.ndarray, cfg: LshConfig):
        self.cfg = cfg
        self.fvs = np.asarray(fvs, dtype=np.float64)
        self.ref_ids = np.asarray(ref_ids, dtype=np.int64)
        if self.fvs.ndim != 2:
            raise InvalidArgument("expected a (N, dim) matrix of vectors")
        if self.fvs.shape[0] != self.ref_ids.shape[0]:
            raise InvalidArgument("one ref id per stored vector required")
        self.dim = self.fvs.shape[1]
        self._norms = np.linalg.norm(self.fvs, axis=1)
        self._norms[self._norms == 0.0] = 1.0
        rng = np.random.default_rng(cfg.seed)
        self._planes = rng.standard_normal((cfg.tables, cfg.bits, self.dim))
        self._pow2 = 1 << np.arange(cfg.bits, dtype=np.int64)
        self._tables: list[dict[int, list[int]]] = []
        for t in range(cfg.tables):
            keys = self._signatures(self.fvs, t)
            table: dict[int, list[int]] = {}
            for i, key in enumerate(keys):
                table.setdefault(int(key), []).append(i)
            self._tables.append(table)

    def __len__(self) -> int:
        return self.fvs.shape[0]

    def _signatures(self, vecs: np.ndarray, table: int) -> np.ndarray:
        proj = vecs @ self._planes[table].T > 0.0
        return proj.astype(np.int64) @ self._pow2

    def candidates(self, vec: np.ndarray) -> np.ndarray:
        found: set[int] = set()
        row = vec.reshape(1, -1)
        for t in range(self.cfg.tables):
            key = int(self._signatures(row, t)[0])
            found.update(self._tables[t].get(key, ()))
        return np.fromiter(sorted(found), dtype=np.int64, count=len(found))


def build_lsh(fvs, ref_ids=None, cfg: LshConfig | None = None) -> LshIndex:
    """Index a list of Fisher vectors (all the same dimension)."""
    cfg = cfg or LshConfig()
    rows = [fv.values if isinstance(fv, FisherVector) else np.asarray(fv, dtype=np.float64) for fv in fvs]
    if not rows:
        raise InvalidArgument("cannot build an empty index")
    dim = rows[0].shape[0]
    if any(r.shape != (dim,) for r in rows):
        raise InvalidArgument("all vectors must share one dimension")
    matrix = np.stack(rows)
    ids = np.arange(len(rows)) if ref_ids is None else np.asarray(ref_ids, dtype=np.int64)
    return LshIndex(matrix, ids, cfg)


def query_knn(index: LshIndex, fv, k: int = 5) -> list[tuple[int, float]]:
    """k nearest stored vectors by cosine distance, bucket-shortlisted.

    Returns (ref_id, distance) sorted ascending by distance, ties broken by
    ascending ref id; exactly min(k, corpus size) entries.
    """
    vec = fv.values if isinstance(fv, FisherVector) else np.asarray(fv, dtype=np.float64)
    if vec.shape != (index.dim,):
        raise InvalidArgument(f"query dimension {vec.shape} != index dimension {index.dim}")
    cand = index.candidates(vec)
    if cand.size < k:
        cand = np.arange(len(index))
    qn = np.linalg.norm(vec)
    qn = qn if qn > 0 else 1.0
    sims = (index.fvs[cand] @ vec) / (index._norms[cand] * qn)
    dists = 1.0 - sims
    ids = index.ref_ids[cand]
    order = np.lexsort((ids, dists))[: min(k, cand.size)]
    return [(int(ids[i]), float(dists[i])) for i in order]
