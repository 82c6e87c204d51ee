"""Two-stage training: plain fine-tuning, then curriculum-ordered mixup.

Stage 1 minimizes one-hot cross-entropy over minibatches. Stage 2 reloads the
stage-1 best checkpoint, scores every training example's difficulty, splits at
the median, and then -- per epoch -- mixes every anchor with its most similar
same-pool partner, walking the pools in the configured order (all easy batches
before all hard ones under easy_to_hard). The "random" policy ignores the
partition and draws partners uniformly from the whole train set.

All randomness is derived from (seed, stage, epoch); identical configurations
reproduce identical metrics and checkpoint bytes. Difficulty scores, smoothing
priors, pairing representations, and partners are frozen at stage-2 start
unless ``rescore_every_epoch`` refreshes them each epoch.

Run directory layout: ``config.txt`` (flat key=value), ``metrics.tsv``
(epoch, split, metric, value), ``ckpt_stage1_best.semx``, ``ckpt_best.semx``,
``batchlog.tsv`` (epoch, batch, subset, anchor_ids).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import difficulty, mixup, pairing, smoothing
from . import tensorcore as tc
from .config import RunConfig
from .corpus import PAD_ID, Example, FewShotSplit, build_vocab, label_map_from_records, sample_few_shot
from .encoder import ModelConfig, ParamStore, init_params, load_checkpoint, save_checkpoint
from .errors import ConfigError, DataError
from .evalkit import evaluate
from .mixup import LambdaDist, MixedExample
from .smoothing import SmoothingConfig
from .tensorcore import Tape

log = logging.getLogger(__name__)

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8

_STAGE1, _STAGE2 = 1, 2


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 32
    stage1_lr: float = 1e-3
    stage2_lr: float = 2e-4
    weight_decay: float = 1e-4
    warmup_fraction: float = 0.10
    stage1_epochs: int = 30
    stage2_epochs: int = 20
    selection_policy: str = "easy_to_hard"
    mix_variant: str = "embed"
    mix_layer: int = 1
    lambda_dist: LambdaDist = field(default_factory=lambda: LambdaDist("beta", 0.2))
    smoothing: SmoothingConfig = field(default_factory=SmoothingConfig)
    seed: int = 1
    rescore_every_epoch: bool = False
    append_originals: bool = False

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.stage1_lr <= 0 or self.stage2_lr <= 0:
            raise ConfigError("learning rates must be > 0")
        if not 0.0 <= self.warmup_fraction < 1.0:
            raise ConfigError("warmup_fraction must be in [0, 1)")
        if self.selection_policy not in ("random", "easy_to_hard", "hard_to_easy"):
            raise ConfigError(f"unknown selection policy {self.selection_policy!r}")


@dataclass
class RunRecord:
    stage: str
    epoch_metrics: list[tuple[int, float | None, float]]  # (epoch, train loss, dev acc)
    best_dev_accuracy: float
    best_epoch: int
    best_checkpoint: str
    test_accuracy: float | None = None


class OptimizerState:
    """Per-parameter first/second moment accumulators and the step counter."""

    def __init__(self, params: ParamStore):
        self.m = {n: np.zeros_like(t.data) for n, t in params.items()}
        self.v = {n: np.zeros_like(t.data) for n, t in params.items()}
        self.t = 0


def _rng(seed: int, stage: int, epoch: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, stage, epoch]))


def lr_schedule(step: int, total_steps: int, base_lr: float, warmup_fraction: float) -> float:
    """Linear 0 -> base over the warmup span, then linear base -> 0."""
    if total_steps <= 0:
        raise ValueError("total_steps must be > 0")
    if not 0 <= step <= total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps}]")
    warm = warmup_fraction * total_steps
    if step < warm:
        return base_lr * step / warm
    return base_lr * (total_steps - step) / (total_steps - warm)


def optimizer_step(
    params: ParamStore,
    grads: dict[str, np.ndarray],
    state: OptimizerState,
    lr_t: float,
    weight_decay: float,
) -> bool:
    """Adaptive-moment update with bias correction and decoupled decay.

    The pad embedding row is excluded: its gradient is zeroed, so the row
    stays exactly zero. Non-finite gradients skip the whole step.
    """
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            log.warning("skipping optimizer step: non-finite gradient in %s", name)
            return False
    state.t += 1
    t = state.t
    bias1 = 1.0 - ADAM_BETA1 ** t
    bias2 = 1.0 - ADAM_BETA2 ** t
    for name, tensor in params.items():
        g = grads[name]
        if name == "embedding":
            g = g.copy()
            g[PAD_ID] = 0.0
        m = state.m[name]
        v = state.v[name]
        m *= ADAM_BETA1
        m += (1.0 - ADAM_BETA1) * g
        v *= ADAM_BETA2
        v += (1.0 - ADAM_BETA2) * g * g
        update = lr_t * (m / bias1) / (np.sqrt(v / bias2) + ADAM_EPS)
        theta = tensor.data - update - lr_t * weight_decay * tensor.data
        tensor.data = theta.astype(np.float32).astype(np.float64)
    if tc.DEBUG:
        if np.any(params["embedding"].data[PAD_ID] != 0.0):
            raise AssertionError("pad embedding row drifted from zero")
    return True


def _batch_step(params: ParamStore, items: list[MixedExample]) -> tuple[float, dict[str, np.ndarray]]:
    tape = Tape()
    params.zero_grads()
    probs = []
    labels = []
    for item in items:
        trace = mixup.forward_mixed(params, item, tape)
        probs.append(trace.probs)
        labels.append(item.soft_label)
    loss = smoothing.soft_cross_entropy_loss(probs, np.stack(labels), tape)
    tc.backward(tape, loss)
    grads = {
        n: (t.grad if t.grad is not None else np.zeros_like(t.data)) for n, t in params.items()
    }
    return float(loss.data), grads


def _chunks(items: list, size: int):
    for i in range(0, len(items), size):
        yield items[i : i + size]


def _plain(example: Example, label: np.ndarray) -> MixedExample:
    return MixedExample("plain", example, None, 1.0, np.asarray(label, dtype=np.float64))


def train_stage1(cfg: TrainConfig, split: FewShotSplit, params: ParamStore, run_dir) -> RunRecord:
    """Plain one-hot cross-entropy fine-tuning with best-checkpoint tracking."""
    if not split.train:
        raise DataError("empty train set")
    if not split.dev:
        raise DataError("empty dev set")
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    ckpt = run_dir / "ckpt_stage1_best.semx"

    save_checkpoint(params, ckpt)
    baseline = evaluate(params, split.dev)
    metrics: list[tuple[int, float | None, float]] = [(0, None, baseline)]
    # Best is tracked over training epochs; the untrained state only stands
    # when there are no epochs at all.
    best = baseline if cfg.stage1_epochs == 0 else -1.0
    best_epoch = 0

    opt = OptimizerState(params)
    n_batches = math.ceil(len(split.train) / cfg.batch_size)
    total_steps = max(1, cfg.stage1_epochs * n_batches)
    step = 0
    for epoch in range(1, cfg.stage1_epochs + 1):
        order = _rng(cfg.seed, _STAGE1, epoch).permutation(len(split.train))
        epoch_loss = 0.0
        for chunk in _chunks(list(order), cfg.batch_size):
            items = [_plain(split.train[i], split.train[i].one_hot) for i in chunk]
            loss, grads = _batch_step(params, items)
            lr_t = lr_schedule(step, total_steps, cfg.stage1_lr, cfg.warmup_fraction)
            optimizer_step(params, grads, opt, lr_t, cfg.weight_decay)
            step += 1
            epoch_loss += loss * len(chunk)
        train_loss = epoch_loss / len(split.train)
        acc = evaluate(params, split.dev)
        metrics.append((epoch, train_loss, acc))
        if acc > best:
            best, best_epoch = acc, epoch
            save_checkpoint(params, ckpt)
    return RunRecord("stage1", metrics, best, best_epoch, str(ckpt))


@dataclass
class _Stage2State:
    scores: list[difficulty.DifficultyScore]
    partition: difficulty.DifficultyPartition | None
    priors: dict[int, np.ndarray]
    labels: dict[int, np.ndarray]
    pairs: dict[str, dict[int, pairing.PairAssignment]]


def _stage2_state(cfg: TrainConfig, params: ParamStore, train: list[Example]) -> _Stage2State:
    scores = difficulty.score_all(params, train)
    priors = {s.example_id: s.probs for s in scores}
    labels = {
        ex.example_id: smoothing.smooth_label(ex.one_hot, priors[ex.example_id], cfg.smoothing)
        for ex in train
    }
    if cfg.selection_policy == "random":
        return _Stage2State(scores, None, priors, labels, {})
    part = difficulty.partition_by_median(scores)
    reprs = {ex.example_id: pairing.represent(params, ex) for ex in train}
    pairs = {}
    for name, ids in (("easy", part.easy), ("hard", part.hard)):
        pairs[name] = pairing.nearest_partners(ids, reprs) if len(ids) >= 2 else {}
    return _Stage2State(scores, part, priors, labels, pairs)


def _phase_order(cfg: TrainConfig, state: _Stage2State, train_ids: list[int]):
    if cfg.selection_policy == "random":
        return [("all", list(train_ids))]
    part = state.partition
    phases = [("easy", part.easy), ("hard", part.hard)]
    if cfg.selection_policy == "hard_to_easy":
        phases.reverse()
    return phases


def _epoch_plan(
    cfg: TrainConfig,
    params: ParamStore,
    state: _Stage2State,
    by_id: dict[int, Example],
    train_ids: list[int],
    epoch: int,
) -> list[tuple[str, list[MixedExample]]]:
    """Anchor-once-per-epoch item lists, one entry per curriculum phase."""
    rng = _rng(cfg.seed, _STAGE2, epoch)
    plan: list[tuple[str, list[MixedExample]]] = []
    for subset, ids in _phase_order(cfg, state, train_ids):
        order = [int(i) for i in rng.permutation(np.asarray(ids, dtype=np.int64))]
        items: list[MixedExample] = []
        if len(ids) < 2:
            if ids:
                log.info("subset %r has one member; training it without mixup", subset)
            items = [_plain(by_id[a], state.labels[a]) for a in order]
        else:
            for anchor_id in order:
                if cfg.selection_policy == "random":
                    others = [i for i in train_ids if i != anchor_id]
                    partner_id = others[int(rng.integers(len(others)))]
                else:
                    partner_id = state.pairs[subset][anchor_id].partner_id
                lam = mixup.sample_lambda(rng, cfg.lambda_dist)
                items.append(
                    mixup.build_mixed(
                        cfg.mix_variant,
                        params,
                        by_id[anchor_id],
                        by_id[partner_id],
                        lam,
                        mix_layer=cfg.mix_layer,
                        label_i=state.labels[anchor_id],
                        label_j=state.labels[partner_id],
                    )
                )
        if cfg.append_originals:
            items.extend(_plain(by_id[a], state.labels[a]) for a in order)
        plan.append((subset, items))
    return plan


def _planned_batches(cfg: TrainConfig, state: _Stage2State, n_train: int) -> int:
    factor = 2 if cfg.append_originals else 1
    if cfg.selection_policy == "random":
        sizes = [n_train]
    else:
        sizes = [len(state.partition.easy), len(state.partition.hard)]
    return sum(math.ceil(s * factor / cfg.batch_size) for s in sizes if s)


def train_stage2_se(
    cfg: TrainConfig,
    split: FewShotSplit,
    stage1_ckpt,
    run_dir,
) -> tuple[RunRecord, list[tuple[int, int, str, list[int]]]]:
    """Curriculum mixup training from a stage-1 checkpoint.

    Returns the run record and the batch log rows (epoch, batch, subset,
    anchor ids). With ``rescore_every_epoch`` the schedule length is estimated
    from the initial partition; pool sizes can drift by a tie's worth.
    """
    stage1_ckpt = Path(stage1_ckpt)
    if not stage1_ckpt.exists():
        raise DataError(f"stage-1 checkpoint {stage1_ckpt} not found")
    if not split.dev:
        raise DataError("empty dev set")
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    ckpt = run_dir / "ckpt_best.semx"

    params, _ = load_checkpoint(stage1_ckpt)
    by_id = {ex.example_id: ex for ex in split.train}
    train_ids = [ex.example_id for ex in split.train]

    save_checkpoint(params, ckpt)
    baseline = evaluate(params, split.dev)
    metrics: list[tuple[int, float | None, float]] = [(0, None, baseline)]
    best = baseline if cfg.stage2_epochs == 0 else -1.0
    best_epoch = 0

    state = _stage2_state(cfg, params, split.train)
    opt = OptimizerState(params)
    total_steps = max(1, cfg.stage2_epochs * _planned_batches(cfg, state, len(train_ids)))
    rows: list[tuple[int, int, str, list[int]]] = []
    step = 0
    for epoch in range(1, cfg.stage2_epochs + 1):
        if cfg.rescore_every_epoch and epoch > 1:
            state = _stage2_state(cfg, params, split.train)
        plan = _epoch_plan(cfg, params, state, by_id, train_ids, epoch)
        batch_idx = 0
        epoch_loss = 0.0
        n_items = 0
        for subset, items in plan:
            for chunk in _chunks(items, cfg.batch_size):
                rows.append((epoch, batch_idx, subset, [it.anchor.example_id for it in chunk]))
                loss, grads = _batch_step(params, chunk)
                lr_t = lr_schedule(min(step, total_steps), total_steps, cfg.stage2_lr, cfg.warmup_fraction)
                optimizer_step(params, grads, opt, lr_t, cfg.weight_decay)
                step += 1
                batch_idx += 1
                epoch_loss += loss * len(chunk)
                n_items += len(chunk)
        train_loss = epoch_loss / n_items if n_items else 0.0
        acc = evaluate(params, split.dev)
        metrics.append((epoch, train_loss, acc))
        if acc > best:
            best, best_epoch = acc, epoch
            save_checkpoint(params, ckpt)
    return RunRecord("stage2", metrics, best, best_epoch, str(ckpt)), rows


@dataclass
class PipelineResult:
    run_dir: str
    stage1: RunRecord
    stage2: RunRecord
    best_dev_accuracy: float
    test_accuracy: float | None


def _train_config(cfg: RunConfig) -> TrainConfig:
    return TrainConfig(
        batch_size=cfg.batch_size,
        stage1_lr=cfg.stage1_lr,
        stage2_lr=cfg.stage2_lr,
        weight_decay=cfg.weight_decay,
        warmup_fraction=cfg.warmup_fraction,
        stage1_epochs=cfg.stage1_epochs,
        stage2_epochs=cfg.stage2_epochs,
        selection_policy=cfg.selection_policy,
        mix_variant=cfg.mix_variant,
        mix_layer=cfg.mix_layer,
        lambda_dist=mixup.parse_lambda_dist(cfg.lambda_dist),
        smoothing=SmoothingConfig(cfg.smoothing, cfg.alpha),
        seed=cfg.seed,
        rescore_every_epoch=cfg.rescore_every_epoch,
        append_originals=cfg.append_originals,
    )


def run_pipeline(
    cfg: RunConfig,
    records,
    test_records=None,
    out_dir="run",
    split: FewShotSplit | None = None,
    vocab=None,
    label_map: dict[str, int] | None = None,
) -> PipelineResult:
    """Stage 1 then stage 2, test once at the final best checkpoint, artifacts
    written to ``out_dir`` (refused if it already holds a completed run)."""
    out = Path(out_dir)
    if (out / "metrics.tsv").exists():
        raise ConfigError(f"{out} already holds a completed run (run directories are append-only)")
    out.mkdir(parents=True, exist_ok=True)

    if label_map is None:
        label_map = label_map_from_records(records)
    if len(label_map) < 2:
        raise DataError("need at least two classes")
    if vocab is None:
        vocab = build_vocab(records, cfg.min_freq)
    if split is None:
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

    model_cfg = ModelConfig(
        vocab_size=len(vocab),
        num_classes=len(label_map),
        embed_dim=cfg.embed_dim,
        num_blocks=cfg.num_blocks,
        hidden_dim=cfg.hidden_dim,
        max_len=cfg.max_len,
    )
    params = init_params(model_cfg, seed=cfg.seed)
    tcfg = _train_config(cfg)

    rec1 = train_stage1(tcfg, split, params, out)
    rec2, rows = train_stage2_se(tcfg, split, rec1.best_checkpoint, out)

    test_acc = None
    if split.test:
        best_params, _ = load_checkpoint(out / "ckpt_best.semx")
        test_acc = evaluate(best_params, split.test)
        rec2.test_accuracy = test_acc

    (out / "config.txt").write_text(cfg.to_text(), encoding="utf-8")
    _write_metrics(out / "metrics.tsv", rec1, rec2)
    _write_batchlog(out / "batchlog.tsv", rows)
    return PipelineResult(str(out), rec1, rec2, rec2.best_dev_accuracy, test_acc)


def _write_metrics(path, rec1: RunRecord, rec2: RunRecord) -> None:
    lines = ["epoch\tsplit\tmetric\tvalue"]
    for rec in (rec1, rec2):
        for epoch, train_loss, dev_acc in rec.epoch_metrics:
            if train_loss is not None:
                lines.append(f"{epoch}\ttrain\t{rec.stage}_loss\t{float(train_loss)!r}")
            lines.append(f"{epoch}\tdev\t{rec.stage}_accuracy\t{float(dev_acc)!r}")
    lines.append(f"{rec2.best_epoch}\tdev\tbest_accuracy\t{float(rec2.best_dev_accuracy)!r}")
    if rec2.test_accuracy is not None:
        lines.append(f"{rec2.best_epoch}\ttest\ttest_accuracy\t{float(rec2.test_accuracy)!r}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _write_batchlog(path, rows: list[tuple[int, int, str, list[int]]]) -> None:
    lines = ["epoch\tbatch\tsubset\tanchor_ids"]
    for epoch, batch, subset, ids in rows:
        lines.append(f"{epoch}\t{batch}\t{subset}\t{','.join(str(i) for i in ids)}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
