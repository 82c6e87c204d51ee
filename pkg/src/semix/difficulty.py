"""Per-example learning difficulty and the median split into easy/hard pools.

Difficulty is the margin between the predicted probability of the true class
and the best wrong class, so it lives in [-1, 1] and high means easy.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .corpus import Example
from .encoder import ParamStore, forward


@dataclass
class DifficultyScore:
    example_id: int
    d: float
    probs: np.ndarray  # cached prediction, reused as the smoothing prior


@dataclass
class DifficultyPartition:
    easy: list[int]
    hard: list[int]
    threshold: float


def score(probs: np.ndarray, label: int) -> float:
    if probs.shape[0] < 2:
        raise ValueError("difficulty needs at least two classes")
    wrong = np.delete(probs, label)
    return float(probs[label] - wrong.max())


def score_all(params: ParamStore, examples: list[Example]) -> list[DifficultyScore]:
    out = []
    for ex in examples:
        probs = forward(params, ex).probs.data
        out.append(DifficultyScore(ex.example_id, score(probs, ex.label), probs.copy()))
    return out


def partition_by_median(scores: list[DifficultyScore]) -> DifficultyPartition:
    """Median threshold; ties on the median go to the easy pool."""
    if not scores:
        raise ValueError("cannot partition an empty score list")
    threshold = float(np.median([s.d for s in scores]))
    easy = [s.example_id for s in scores if s.d >= threshold]
    hard = [s.example_id for s in scores if s.d < threshold]
    return DifficultyPartition(easy=easy, hard=hard, threshold=threshold)


def write_scores_tsv(scores: list[DifficultyScore], path) -> None:
    lines = []
    for s in scores:
        probs = "\t".join(repr(float(p)) for p in s.probs)
        lines.append(f"{s.example_id}\t{s.d!r}\t{probs}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
