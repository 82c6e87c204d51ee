"""Command-line entry point: prepare, train, ablate, ood, report.

Every command takes --config=PATH plus per-key overrides spelled --key=value;
unknown keys are fatal. Exit codes: 0 success, 2 config error, 3 data error,
4 runtime error.
"""

from __future__ import annotations

import argparse
import logging
import re
import sys
from pathlib import Path

from . import evalkit
from .config import RunConfig, load_config
from .corpus import (
    Vocab,
    build_vocab,
    label_map_from_records,
    load_dataset,
    sample_few_shot,
    split_from_manifest,
    write_manifest,
)
from .errors import ConfigError, DataError, SemixError
from .evalkit import OodTarget, ablation_matrix, multi_seed, ood_eval, write_report_tsv
from .trainer import run_pipeline

log = logging.getLogger(__name__)

_OVERRIDE_RE = re.compile(r"^--([A-Za-z0-9_]+)=(.*)$")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="semix", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", default=None, help="flat key=value config file")
        p.add_argument("--out", default="runs", help="output root directory")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")

    common(sub.add_parser("prepare", help="sample and persist a few-shot split + vocabulary"))
    common(sub.add_parser("train", help="run stage-1 and stage-2 training on a prepared split"))
    p = sub.add_parser("ablate", help="sweep config axes, aggregating each point over seeds")
    common(p)
    p.add_argument("--axes", required=True, help="axis file: one `key=v1,v2,...` line per axis")
    p = sub.add_parser("ood", help="evaluate a frozen checkpoint on other datasets")
    common(p)
    p.add_argument("--ckpt", required=True, help="source checkpoint (.semx)")
    p.add_argument("--vocab", required=True, help="source vocabulary file")
    p.add_argument("--labels", required=True, help="source label file (one name per line)")
    p.add_argument(
        "--target",
        action="append",
        default=[],
        metavar="NAME=PATH[:FORMAT]",
        help="target dataset; repeatable",
    )
    p.add_argument(
        "--label-map",
        action="append",
        default=[],
        metavar="NAME:tgt=src[,tgt=src...]",
        help="label mapping for one target; repeatable",
    )
    p = sub.add_parser("report", help="render run metrics and report tables as text")
    common(p)
    return parser


def _split_overrides(argv: list[str]) -> tuple[list[str], dict[str, str]]:
    known_flags = {"--config", "--out", "--seed", "--axes", "--ckpt", "--vocab", "--labels", "--target", "--label-map"}
    plain: list[str] = []
    overrides: dict[str, str] = {}
    for arg in argv:
        m = _OVERRIDE_RE.match(arg)
        if m and f"--{m.group(1)}" not in known_flags and m.group(1) not in ("help",):
            overrides[m.group(1)] = m.group(2)
        else:
            plain.append(arg)
    return plain, overrides


def _config_from(args, overrides: dict[str, str]) -> RunConfig:
    cfg = load_config(args.config, overrides)
    if args.seed is not None:
        cfg = cfg.with_overrides({"seed": str(args.seed)})
    return cfg


def _load_records(cfg: RunConfig):
    if not cfg.data_path:
        raise ConfigError("data_path is not set")
    records = load_dataset(cfg.data_path, cfg.data_format)
    test_records = load_dataset(cfg.test_path, cfg.test_format) if cfg.test_path else None
    return records, test_records


def cmd_prepare(args, overrides) -> int:
    cfg = _config_from(args, overrides)
    records, test_records = _load_records(cfg)
    label_map = label_map_from_records(records)
    vocab = build_vocab(records, cfg.min_freq)
    split = sample_few_shot(
        records,
        cfg.shots_per_class,
        cfg.dev_fraction,
        cfg.seed,
        vocab=vocab,
        label_map=label_map,
        max_len=cfg.max_len,
        test_records=test_records,
    )
    out = Path(args.out) / "prepared"
    out.mkdir(parents=True, exist_ok=True)
    vocab.save(out / "vocab.txt")
    (out / "labels.txt").write_text(
        "\n".join(sorted(label_map, key=label_map.get)) + "\n", encoding="utf-8"
    )
    write_manifest(split, out / "manifest.tsv")
    (out / "config.txt").write_text(cfg.to_text(), encoding="utf-8")
    print(f"prepared split: {len(split.train)} train / {len(split.dev)} dev / {len(split.test)} test")
    print(f"vocabulary: {len(vocab)} tokens")
    print(f"artifacts in {out}")
    return 0


def _load_prepared(cfg: RunConfig, out_root: str):
    prepared = Path(cfg.prepared_dir) if cfg.prepared_dir else Path(out_root) / "prepared"
    manifest = prepared / "manifest.tsv"
    if not manifest.exists():
        raise DataError(f"no prepared split at {prepared} (run `semix prepare` first)")
    vocab = Vocab.load(prepared / "vocab.txt")
    labels = (prepared / "labels.txt").read_text(encoding="utf-8").splitlines()
    label_map = {name: i for i, name in enumerate(labels) if name}
    records, test_records = _load_records(cfg)
    split = split_from_manifest(
        manifest,
        records,
        vocab=vocab,
        label_map=label_map,
        max_len=cfg.max_len,
        test_records=test_records,
        shots_per_class=cfg.shots_per_class,
        seed=cfg.seed,
    )
    return split, vocab, label_map, records, test_records


def cmd_train(args, overrides) -> int:
    cfg = _config_from(args, overrides)
    split, vocab, label_map, records, test_records = _load_prepared(cfg, args.out)
    run_dir = Path(args.out) / cfg.run_name
    result = run_pipeline(
        cfg, records, test_records, run_dir, split=split, vocab=vocab, label_map=label_map
    )
    print(f"run dir: {result.run_dir}")
    print(f"stage1 best dev accuracy: {result.stage1.best_dev_accuracy:.4f}")
    print(f"stage2 best dev accuracy: {result.best_dev_accuracy:.4f}")
    if result.test_accuracy is not None:
        print(f"test accuracy at best checkpoint: {result.test_accuracy:.4f}")
    return 0


def _parse_axes_file(path) -> list[tuple[str, list[str]]]:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read axes file {path}: {exc}") from exc
    axes = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"{path}:{lineno}: expected key=v1,v2,...")
        key, _, values = stripped.partition("=")
        axes.append((key.strip(), [v.strip() for v in values.split(",") if v.strip()]))
    if not axes:
        raise ConfigError(f"{path}: no axes defined")
    return axes


def cmd_ablate(args, overrides) -> int:
    cfg = _config_from(args, overrides)
    axes = _parse_axes_file(args.axes)
    records, test_records = _load_records(cfg)
    out = Path(args.out) / "ablation"
    rows = ablation_matrix(cfg, axes, records, out, seeds=cfg.seed_list(), test_records=test_records)
    keys = [key for key, _ in axes]
    report_path = out / "report.tsv"
    write_report_tsv(rows, keys, report_path)
    print(f"report: {report_path}")
    _print_table(
        keys + ["mean", "sd", "n_seeds", "fingerprint"],
        [
            [str(r.get(k, "")) for k in keys]
            + [f"{r['mean']:.4f}", f"{r['sd']:.4f}", str(r["n_seeds"]), r["fingerprint"]]
            for r in rows
        ],
    )
    return 0


def _parse_targets(args, cfg: RunConfig) -> list[OodTarget]:
    maps: dict[str, dict[str, str]] = {}
    for spec in args.label_map:
        name, _, body = spec.partition(":")
        if not body:
            raise ConfigError(f"bad --label-map {spec!r}")
        mapping = {}
        for pair in body.split(","):
            tgt, _, src = pair.partition("=")
            if not src:
                raise ConfigError(f"bad --label-map entry {pair!r}")
            mapping[tgt.strip()] = src.strip()
        maps[name.strip()] = mapping
    targets = []
    for spec in args.target:
        name, _, rest = spec.partition("=")
        if not rest:
            raise ConfigError(f"bad --target {spec!r} (expected NAME=PATH[:FORMAT])")
        path, _, fmt = rest.partition(":")
        records = load_dataset(path, fmt or cfg.data_format)
        targets.append(OodTarget(name.strip(), records, maps.get(name.strip())))
    if not targets:
        raise ConfigError("ood needs at least one --target")
    return targets


def cmd_ood(args, overrides) -> int:
    cfg = _config_from(args, overrides)
    vocab = Vocab.load(args.vocab)
    source_labels = [
        line for line in Path(args.labels).read_text(encoding="utf-8").splitlines() if line
    ]
    targets = _parse_targets(args, cfg)
    rows = ood_eval(args.ckpt, vocab, source_labels, targets, max_len=cfg.max_len)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    lines = ["target\tn_examples\taccuracy"]
    lines += [f"{r.target}\t{r.n_examples}\t{r.accuracy!r}" for r in rows]
    (out / "ood.tsv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    _print_table(
        ["target", "n_examples", "accuracy"],
        [[r.target, str(r.n_examples), f"{r.accuracy:.4f}"] for r in rows],
    )
    return 0


def cmd_report(args, overrides) -> int:
    root = Path(args.out)
    metric_files = sorted(root.glob("**/metrics.tsv"))
    report_files = sorted(root.glob("**/report.tsv")) + sorted(root.glob("**/ood.tsv"))
    if not metric_files and not report_files:
        raise DataError(f"no runs found in {root}")
    if metric_files:
        rows = []
        for path in metric_files:
            best = test = ""
            for line in path.read_text(encoding="utf-8").splitlines()[1:]:
                _, _, metric, value = line.split("\t")
                if metric == "best_accuracy":
                    best = f"{float(value):.4f}"
                elif metric == "test_accuracy":
                    test = f"{float(value):.4f}"
            rows.append([str(path.parent.relative_to(root)), best, test])
        _print_table(["run", "best_dev_accuracy", "test_accuracy"], rows)
    for path in report_files:
        print(f"\n{path.relative_to(root)}")
        lines = path.read_text(encoding="utf-8").splitlines()
        _print_table(lines[0].split("\t"), [line.split("\t") for line in lines[1:]])
    return 0


def _print_table(header: list[str], rows: list[list[str]]) -> None:
    widths = [len(h) for h in header]
    for row in rows:
        for i, cell in enumerate(row):
            widths[i] = max(widths[i], len(cell))
    fmt = "  ".join(f"{{:<{w}}}" for w in widths)
    print(fmt.format(*header))
    print(fmt.format(*["-" * w for w in widths]))
    for row in rows:
        print(fmt.format(*row))


_COMMANDS = {
    "prepare": cmd_prepare,
    "train": cmd_train,
    "ablate": cmd_ablate,
    "ood": cmd_ood,
    "report": cmd_report,
}


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    argv = list(sys.argv[1:] if argv is None else argv)
    plain, overrides = _split_overrides(argv)
    args = _build_parser().parse_args(plain)
    try:
        return _COMMANDS[args.command](args, overrides)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except (SemixError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
