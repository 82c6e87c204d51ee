"""Synthetic corpora with controllable difficulty structure.

``planted_difficulty_records`` draws two-class sentences from class-conditional
token mixtures with two planted clusters: an easy cluster whose per-token
label-consistency margin (own-class signal rate minus opposite-class signal
rate) is several times larger than the hard cluster's. With the defaults the
margins are 0.8 vs 0.2, a 4x ratio, so a partially trained classifier scores
the clusters apart and a median split recovers them.
"""

from __future__ import annotations

import numpy as np

from .corpus import RawRecord

LABELS = ("neg", "pos")


def planted_difficulty_records(
    seed: int,
    n_per_class: int = 150,
    easy_fraction: float = 0.5,
    sentence_len: int = 12,
    easy_own: float = 0.85,
    easy_opposite: float = 0.05,
    hard_own: float = 0.35,
    hard_opposite: float = 0.15,
    n_signal: int = 6,
    n_noise: int = 30,
) -> list[RawRecord]:
    """Two-class corpus with an easy and a hard cluster per class.

    Each token is a class-0 signal word, a class-1 signal word, or a shared
    noise word; the draw probabilities depend on the record's class and
    cluster. Deterministic in the seed.
    """
    rng = np.random.default_rng(seed)
    signal = [[f"w{c}x{i}" for i in range(n_signal)] for c in range(2)]
    noise = [f"zn{i}" for i in range(n_noise)]
    n_easy = int(round(easy_fraction * n_per_class))

    records = []
    for idx in range(n_per_class):
        for c, label in enumerate(LABELS):
            own, opp = (easy_own, easy_opposite) if idx < n_easy else (hard_own, hard_opposite)
            tokens = []
            for _ in range(sentence_len):
                u = rng.random()
                if u < own:
                    pool = signal[c]
                elif u < own + opp:
                    pool = signal[1 - c]
                else:
                    pool = noise
                tokens.append(pool[int(rng.integers(len(pool)))])
            records.append(RawRecord(text=" ".join(tokens), label_name=label))
    return records


def separable_records(
    seed: int,
    n_per_class: int = 60,
    sentence_len: int = 8,
    n_signal: int = 5,
) -> list[RawRecord]:
    """Trivially separable two-class corpus: disjoint token sets per class."""
    rng = np.random.default_rng(seed)
    words = [[f"s{c}w{i}" for i in range(n_signal)] for c in range(2)]
    records = []
    for _ in range(n_per_class):
        for c, label in enumerate(LABELS):
            tokens = [words[c][int(rng.integers(n_signal))] for _ in range(sentence_len)]
            records.append(RawRecord(text=" ".join(tokens), label_name=label))
    return records
