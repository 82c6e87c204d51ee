"""Most-similar-partner search within a difficulty pool.

Similarity is the cosine of pooled sentence vectors. The pools are few-shot
sized, so the search is an exhaustive scan; ties break to the smallest
example id.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .corpus import Example
from .encoder import ParamStore, forward


@dataclass
class PairAssignment:
    anchor_id: int
    partner_id: int
    similarity: float


def represent(params: ParamStore, example: Example) -> np.ndarray:
    """Pooled sentence vector, detached from any gradient bookkeeping."""
    return forward(params, example).pooled.data.copy()


def cosine(u: np.ndarray, v: np.ndarray) -> float:
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape:
        raise ValueError(f"cosine shape mismatch: {u.shape} vs {v.shape}")
    nu = np.linalg.norm(u)
    nv = np.linalg.norm(v)
    if nu == 0.0 or nv == 0.0:
        return 0.0  # convention: a zero vector is similar to nothing
    return float(np.clip(np.dot(u, v) / (nu * nv), -1.0, 1.0))


def nearest_partner(
    anchor_id: int,
    subset: list[int],
    reprs: dict[int, np.ndarray],
) -> PairAssignment:
    if anchor_id not in subset:
        raise ValueError(f"anchor {anchor_id} is not in the subset")
    candidates = sorted(i for i in subset if i != anchor_id)
    if not candidates:
        raise ValueError(f"no partner available for {anchor_id}: subset has one member")
    anchor_vec = reprs[anchor_id]
    best_id = candidates[0]
    best_sim = cosine(anchor_vec, reprs[best_id])
    for cid in candidates[1:]:
        sim = cosine(anchor_vec, reprs[cid])
        if sim > best_sim:  # ties keep the smaller id
            best_id, best_sim = cid, sim
    return PairAssignment(anchor_id=anchor_id, partner_id=best_id, similarity=best_sim)


def nearest_partners(subset: list[int], reprs: dict[int, np.ndarray]) -> dict[int, PairAssignment]:
    return {i: nearest_partner(i, subset, reprs) for i in subset}
