"""Dataset ingestion, vocabulary, tokenization, few-shot sampling, padding.

File formats: TSV rows are ``label<TAB>text``; JSON Lines objects carry string
fields "label" and "text". A persisted vocabulary is one token per line with
the line number as id. Split manifests are TSV with a header row
``subset source record_index``.
"""

from __future__ import annotations

import json
import logging
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError

log = logging.getLogger(__name__)

PAD_ID = 0
UNK_ID = 1
PAD_TOKEN = "<pad>"
UNK_TOKEN = "<unk>"

_WORD_RE = re.compile(r"\w+")


def tokenize(text: str) -> list[str]:
    """Lowercase and split on whitespace and punctuation."""
    return _WORD_RE.findall(text.lower())


@dataclass(frozen=True)
class RawRecord:
    text: str
    label_name: str


@dataclass(eq=False)
class Example:
    """One encoded instance: right-padded ids, binary mask, one-hot label."""

    example_id: int
    token_ids: np.ndarray  # int64 [max_len]
    mask: np.ndarray  # float64 [max_len], 1.0 = real token
    label: int
    one_hot: np.ndarray  # float64 [num_classes]

    def length(self) -> int:
        return int(self.mask.sum())


class Vocab:
    """Token <-> id map with reserved PAD=0 and UNK=1."""

    def __init__(self, id_to_token: list[str]):
        if len(id_to_token) < 2 or id_to_token[0] != PAD_TOKEN or id_to_token[1] != UNK_TOKEN:
            raise DataError("vocabulary must start with the PAD and UNK tokens")
        self.id_to_token = list(id_to_token)
        self.token_to_id = {t: i for i, t in enumerate(self.id_to_token)}

    def id(self, token: str) -> int:
        return self.token_to_id.get(token, UNK_ID)

    def __len__(self) -> int:
        return len(self.id_to_token)

    def __contains__(self, token: str) -> bool:
        return token in self.token_to_id

    def save(self, path) -> None:
        Path(path).write_text("\n".join(self.id_to_token) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Vocab":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        return cls(lines)


def load_dataset(path, format: str) -> list[RawRecord]:
    """Read one record per data row; skip malformed rows unless >10% are bad."""
    if format not in ("tsv", "jsonl"):
        raise DataError(f"unknown dataset format {format!r}")
    try:
        raw = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc

    records: list[RawRecord] = []
    malformed = 0
    rows = 0
    for lineno, line in enumerate(raw.splitlines(), start=1):
        if not line.strip():
            continue
        rows += 1
        rec = _parse_row(line, format)
        if rec is None:
            malformed += 1
            log.warning("%s:%d: malformed row skipped", path, lineno)
        else:
            records.append(rec)

    if rows == 0 or not records:
        raise DataError(f"no records in {path}")
    if malformed > 0.10 * rows:
        raise DataError(f"{path}: {malformed}/{rows} rows malformed (over the 10% limit)")
    return records


def _parse_row(line: str, format: str) -> RawRecord | None:
    if format == "tsv":
        parts = line.split("\t", 1)
        if len(parts) != 2:
            return None
        label, text = parts[0].strip(), parts[1].strip()
    else:
        try:
            obj = json.loads(line)
        except json.JSONDecodeError:
            return None
        if not isinstance(obj, dict):
            return None
        label, text = obj.get("label"), obj.get("text")
        if not isinstance(label, str) or not isinstance(text, str):
            return None
        label, text = label.strip(), text.strip()
    if not label or not text:
        return None
    return RawRecord(text=text, label_name=label)


def build_vocab(records: list[RawRecord], min_freq: int = 1) -> Vocab:
    """Frequency-then-lexicographic token ordering, ids dense from 2."""
    if min_freq < 1:
        raise ValueError("min_freq must be >= 1")
    if not records:
        raise DataError("cannot build a vocabulary from an empty record list")
    counts: Counter[str] = Counter()
    for rec in records:
        counts.update(tokenize(rec.text))
    kept = sorted(
        (t for t, c in counts.items() if c >= min_freq),
        key=lambda t: (-counts[t], t),
    )
    return Vocab([PAD_TOKEN, UNK_TOKEN] + kept)


def label_map_from_records(records: list[RawRecord]) -> dict[str, int]:
    names = sorted({r.label_name for r in records})
    return {name: i for i, name in enumerate(names)}


def encode(
    record: RawRecord,
    vocab: Vocab,
    label_map: dict[str, int],
    max_len: int = 128,
    num_classes: int | None = None,
    example_id: int = -1,
) -> Example:
    """Tokenize, truncate to max_len, right-pad, attach the one-hot label."""
    if record.label_name not in label_map:
        raise DataError(f"unknown label {record.label_name!r}")
    tokens = tokenize(record.text)[:max_len]
    ids = np.full(max_len, PAD_ID, dtype=np.int64)
    for i, tok in enumerate(tokens):
        ids[i] = vocab.id(tok)
    mask = np.zeros(max_len, dtype=np.float64)
    mask[: len(tokens)] = 1.0
    n_classes = num_classes if num_classes is not None else len(label_map)
    label = label_map[record.label_name]
    one_hot = np.zeros(n_classes, dtype=np.float64)
    one_hot[label] = 1.0
    return Example(example_id=example_id, token_ids=ids, mask=mask, label=label, one_hot=one_hot)


def decode(example: Example, vocab: Vocab) -> list[str]:
    n = example.length()
    return [vocab.id_to_token[int(i)] for i in example.token_ids[:n]]


@dataclass
class FewShotSplit:
    """Encoded train/dev/test examples plus the record ids that produced them."""

    train: list[Example]
    dev: list[Example]
    test: list[Example]
    shots_per_class: int
    seed: int
    train_ids: list[int] = field(default_factory=list)
    dev_ids: list[int] = field(default_factory=list)
    test_ids: list[int] = field(default_factory=list)
    test_from_file: bool = False


def sample_few_shot(
    records: list[RawRecord],
    shots_per_class: int,
    dev_fraction: float,
    seed: int,
    *,
    vocab: Vocab,
    label_map: dict[str, int],
    max_len: int = 128,
    test_records: list[RawRecord] | None = None,
) -> FewShotSplit:
    """Seeded per-class sampling without replacement; dev from the remainder.

    Test examples come from ``test_records`` when given, otherwise from the
    remainder after the dev draw. The id selection depends only on
    (records, shots_per_class, dev_fraction, seed). Dev size is capped at
    min(500, round(dev_fraction * remaining)).
    """
    if not 0.0 < dev_fraction < 1.0:
        raise ValueError("dev_fraction must be in (0, 1)")
    if shots_per_class < 1:
        raise ValueError("shots_per_class must be >= 1")

    by_class: dict[str, list[int]] = {}
    for i, rec in enumerate(records):
        by_class.setdefault(rec.label_name, []).append(i)
    for name in sorted(by_class):
        if len(by_class[name]) < shots_per_class:
            raise DataError(
                f"class {name!r} has {len(by_class[name])} records, "
                f"needs {shots_per_class}"
            )

    rng = np.random.default_rng(seed)
    train_ids: list[int] = []
    for name in sorted(by_class):
        perm = rng.permutation(np.asarray(by_class[name], dtype=np.int64))
        train_ids.extend(int(i) for i in perm[:shots_per_class])
    train_ids.sort()
    train_set = set(train_ids)

    remaining = [i for i in range(len(records)) if i not in train_set]
    dev_ids: list[int] = []
    if remaining:
        dev_count = min(500, max(1, int(round(dev_fraction * len(remaining)))))
        perm = rng.permutation(np.asarray(remaining, dtype=np.int64))
        dev_ids = sorted(int(i) for i in perm[:dev_count])
    dev_set = set(dev_ids)

    if test_records is not None:
        test_ids = list(range(len(test_records)))
        test_pool = test_records
        test_from_file = True
    else:
        test_ids = [i for i in remaining if i not in dev_set]
        test_pool = records
        test_from_file = False

    def enc(pool, i):
        return encode(pool[i], vocab, label_map, max_len=max_len, example_id=i)

    return FewShotSplit(
        train=[enc(records, i) for i in train_ids],
        dev=[enc(records, i) for i in dev_ids],
        test=[enc(test_pool, i) for i in test_ids],
        shots_per_class=shots_per_class,
        seed=seed,
        train_ids=train_ids,
        dev_ids=dev_ids,
        test_ids=test_ids,
        test_from_file=test_from_file,
    )


def write_manifest(split: FewShotSplit, path) -> None:
    lines = ["subset\tsource\trecord_index"]
    test_source = "test" if split.test_from_file else "data"
    for i in split.train_ids:
        lines.append(f"train\tdata\t{i}")
    for i in split.dev_ids:
        lines.append(f"dev\tdata\t{i}")
    for i in split.test_ids:
        lines.append(f"test\t{test_source}\t{i}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def split_from_manifest(
    path,
    records: list[RawRecord],
    *,
    vocab: Vocab,
    label_map: dict[str, int],
    max_len: int = 128,
    test_records: list[RawRecord] | None = None,
    shots_per_class: int = 0,
    seed: int = 0,
) -> FewShotSplit:
    """Rebuild an encoded split from a persisted manifest."""
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or lines[0].split("\t") != ["subset", "source", "record_index"]:
        raise DataError(f"{path}: not a split manifest")
    ids: dict[str, list[int]] = {"train": [], "dev": [], "test": []}
    test_from_file = False
    for line in lines[1:]:
        if not line.strip():
            continue
        subset, source, idx = line.split("\t")
        ids[subset].append(int(idx))
        if subset == "test" and source == "test":
            test_from_file = True
    if test_from_file and test_records is None:
        raise DataError(f"{path}: manifest references a test file that was not provided")
    test_pool = test_records if test_from_file else records

    def enc(pool, i):
        return encode(pool[i], vocab, label_map, max_len=max_len, example_id=i)

    return FewShotSplit(
        train=[enc(records, i) for i in ids["train"]],
        dev=[enc(records, i) for i in ids["dev"]],
        test=[enc(test_pool, i) for i in ids["test"]],
        shots_per_class=shots_per_class,
        seed=seed,
        train_ids=ids["train"],
        dev_ids=ids["dev"],
        test_ids=ids["test"],
        test_from_file=test_from_file,
    )
