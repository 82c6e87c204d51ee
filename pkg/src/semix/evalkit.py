"""Accuracy evaluation, multi-seed aggregation, transfer evaluation, and
ablation sweeps.

Report TSVs carry the config fingerprint so every table row is traceable to
the exact configuration that produced it.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .config import RunConfig, known_keys
from .corpus import RawRecord, Vocab, encode
from .encoder import ParamStore, forward, load_checkpoint
from .errors import ConfigError, DataError, SemixError

log = logging.getLogger(__name__)


def evaluate(params: ParamStore, examples) -> float:
    """Fraction of examples whose argmax prediction matches the label.

    Argmax ties break to the lowest class index.
    """
    if not examples:
        raise ValueError("no examples to evaluate")
    correct = 0
    for ex in examples:
        probs = forward(params, ex).probs.data
        if int(np.argmax(probs)) == ex.label:
            correct += 1
    return correct / len(examples)


@dataclass
class SeedResult:
    seed: int
    accuracy: float | None
    error: str | None = None


@dataclass
class EvalReport:
    per_seed: list[SeedResult]
    mean: float
    sd: float
    n_seeds: int
    fingerprint: str

    def ok_accuracies(self) -> list[float]:
        return [r.accuracy for r in self.per_seed if r.accuracy is not None]


def _aggregate(results: list[SeedResult], fingerprint: str) -> EvalReport:
    accs = [r.accuracy for r in results if r.accuracy is not None]
    mean = float(np.mean(accs)) if accs else float("nan")
    sd = float(np.std(accs)) if accs else float("nan")
    return EvalReport(results, mean, sd, len(results), fingerprint)


def multi_seed(
    cfg: RunConfig,
    records: list[RawRecord],
    out_dir,
    seeds: list[int] | None = None,
    test_records: list[RawRecord] | None = None,
) -> EvalReport:
    """Full pipeline per seed; aggregates test-at-best-dev accuracies.

    A fatal seed run is recorded with its error message instead of aborting
    the sweep.
    """
    from .trainer import run_pipeline  # deferred: trainer imports evaluate from here

    if seeds is None:
        seeds = cfg.seed_list()
    if not seeds:
        raise ConfigError("multi_seed needs at least one seed")
    out = Path(out_dir)
    results = []
    for seed in seeds:
        run_cfg = replace(cfg, seed=seed)
        try:
            res = run_pipeline(run_cfg, records, test_records, out / f"seed_{seed}")
            if res.test_accuracy is None:
                raise DataError("run produced no test accuracy (empty test split)")
            results.append(SeedResult(seed, res.test_accuracy))
        except (SemixError, ValueError, OSError) as exc:
            log.warning("seed %d failed: %s", seed, exc)
            results.append(SeedResult(seed, None, error=str(exc)))
    return _aggregate(results, cfg.fingerprint())


@dataclass
class OodTarget:
    """A transfer-evaluation target: records plus an optional label mapping
    from target label names to source label names."""

    name: str
    records: list[RawRecord]
    label_map: dict[str, str] | None = None


@dataclass
class OodRow:
    target: str
    n_examples: int
    accuracy: float


def ood_eval(
    ckpt_path,
    vocab: Vocab,
    source_labels: list[str],
    targets: list[OodTarget],
    max_len: int = 128,
) -> list[OodRow]:
    """Evaluate a frozen source checkpoint on target test sets (no training).

    Targets must share the source label space or supply an explicit mapping.
    """
    params, config = load_checkpoint(ckpt_path)
    if config.num_classes != len(source_labels):
        raise DataError(
            f"checkpoint has {config.num_classes} classes, source label list has {len(source_labels)}"
        )
    source_index = {name: i for i, name in enumerate(source_labels)}
    rows = []
    for target in targets:
        observed = sorted({r.label_name for r in target.records})
        if target.label_map is None:
            if set(observed) != set(source_labels):
                raise DataError(
                    f"target {target.name!r} labels {observed} do not match source labels "
                    f"{sorted(source_labels)}; supply a label mapping"
                )
            mapping = {name: source_index[name] for name in observed}
        else:
            mapping = {}
            for tgt_name, src_name in target.label_map.items():
                if src_name not in source_index:
                    raise DataError(
                        f"target {target.name!r}: mapped label {src_name!r} is not a source label"
                    )
                mapping[tgt_name] = source_index[src_name]
            missing = [name for name in observed if name not in mapping]
            if missing:
                raise DataError(f"target {target.name!r}: unmapped labels {missing}")
        examples = [
            encode(r, vocab, mapping, max_len=max_len, num_classes=len(source_labels), example_id=i)
            for i, r in enumerate(target.records)
        ]
        rows.append(OodRow(target.name, len(examples), evaluate(params, examples)))
    return rows


def ablation_matrix(
    base_cfg: RunConfig,
    axes: list[tuple[str, list[str]]],
    records: list[RawRecord],
    out_dir,
    seeds: list[int] | None = None,
    test_records: list[RawRecord] | None = None,
) -> list[dict]:
    """Cartesian sweep over config axes, each point run via multi_seed.

    Returns one row dict per point: axis values plus mean/sd/n_seeds and the
    point's config fingerprint. Axis keys are validated before any run.
    """
    valid = set(known_keys())
    for key, values in axes:
        if key not in valid:
            raise ConfigError(f"unknown ablation axis key: {key}")
        if not values:
            raise ConfigError(f"ablation axis {key!r} has no values")
    out = Path(out_dir)
    rows = []
    keys = [key for key, _ in axes]
    combos = itertools.product(*[values for _, values in axes]) if axes else [()]
    for combo in combos:
        overrides = dict(zip(keys, combo))
        cfg = base_cfg.with_overrides(overrides)
        tag = "__".join(f"{k}={v}" for k, v in overrides.items()) or "base"
        tag = tag.replace("/", "-")
        report = multi_seed(cfg, records, out / tag, seeds=seeds, test_records=test_records)
        row = dict(overrides)
        row.update(
            mean=report.mean,
            sd=report.sd,
            n_seeds=report.n_seeds,
            fingerprint=report.fingerprint,
        )
        rows.append(row)
    return rows


def write_report_tsv(rows: list[dict], axis_keys: list[str], path) -> None:
    header = axis_keys + ["mean", "sd", "n_seeds", "fingerprint"]
    lines = ["\t".join(header)]
    for row in rows:
        cells = [str(row.get(k, "")) for k in axis_keys]
        cells += [repr(float(row["mean"])), repr(float(row["sd"])), str(row["n_seeds"]), row["fingerprint"]]
        lines.append("\t".join(cells))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_batchlog(path) -> list[tuple[int, int, str, list[int]]]:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or lines[0].split("\t") != ["epoch", "batch", "subset", "anchor_ids"]:
        raise DataError(f"{path}: not a batch log")
    rows = []
    for line in lines[1:]:
        if not line.strip():
            continue
        epoch, batch, subset, ids = line.split("\t")
        rows.append((int(epoch), int(batch), subset, [int(i) for i in ids.split(",") if i]))
    return rows


def curriculum_ordered(path, first: str = "easy", then: str = "hard") -> bool:
    """True when, within every epoch, no ``first``-pool batch follows a
    ``then``-pool batch."""
    by_epoch: dict[int, list[str]] = {}
    for epoch, batch, subset, _ in read_batchlog(path):
        by_epoch.setdefault(epoch, []).append(subset)
    for subsets in by_epoch.values():
        seen_then = False
        for subset in subsets:
            if subset == then:
                seen_then = True
            elif subset == first and seen_then:
                return False
    return True
