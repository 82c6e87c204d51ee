"""Small text classifier: embedding lookup, residual position-wise tanh
blocks, mask-weighted mean pooling, and a linear softmax head.

Each block computes ``h <- h + tanh(h @ W + b)`` per position, so token-level
hidden states exist at every depth and the pooled vector summarizes the
sequence. The padded tail never reaches pooling (pad embedding row is zero and
pad weights are zero), which lets the forward pass trim to the populated
prefix without changing any output.

Checkpoint format: magic "SEMX", u32 version=1, six u32 config fields
(vocab_size, embed_dim, num_blocks, hidden_dim, num_classes, max_len), then
per tensor: u32 name length, UTF-8 name, u32 rank, u32 dims, raw float32
little-endian values row-major.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import tensorcore as tc
from .corpus import PAD_ID, Example
from .tensorcore import Tape, Tensor

CKPT_MAGIC = b"SEMX"
CKPT_VERSION = 1


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    num_classes: int
    embed_dim: int = 64
    num_blocks: int = 2
    hidden_dim: int = 64
    max_len: int = 128

    def __post_init__(self):
        for name in ("vocab_size", "num_classes", "embed_dim", "num_blocks", "hidden_dim", "max_len"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.embed_dim != self.hidden_dim:
            raise ValueError("embed_dim must equal hidden_dim (residual blocks)")


@dataclass
class ForwardTrace:
    """Intermediate states of one forward pass, trimmed to the populated prefix."""

    token_embeddings: Tensor | None
    hidden_states: list[Tensor]
    pooled: Tensor
    logits: Tensor
    probs: Tensor


class ParamStore:
    """Named parameter tensors bound to the config they were built for."""

    def __init__(self, config: ModelConfig, tensors: dict[str, Tensor]):
        self.config = config
        self.tensors = dict(tensors)

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def items(self):
        return self.tensors.items()

    def names(self) -> list[str]:
        return list(self.tensors)

    def zero_grads(self) -> None:
        for t in self.tensors.values():
            t.grad = None

    def copy(self) -> "ParamStore":
        return ParamStore(
            self.config,
            {n: Tensor(t.data.copy(), name=n) for n, t in self.tensors.items()},
        )


def expected_shapes(config: ModelConfig) -> dict[str, tuple[int, ...]]:
    shapes: dict[str, tuple[int, ...]] = {
        "embedding": (config.vocab_size, config.embed_dim)
    }
    for l in range(config.num_blocks):
        shapes[f"block{l}.weight"] = (config.hidden_dim, config.hidden_dim)
        shapes[f"block{l}.bias"] = (config.hidden_dim,)
    shapes["head.weight"] = (config.hidden_dim, config.num_classes)
    shapes["head.bias"] = (config.num_classes,)
    return shapes


def _f32_exact(arr: np.ndarray) -> np.ndarray:
    # Parameters stay float32-representable so checkpoints round-trip bitwise.
    return arr.astype(np.float32).astype(np.float64)


def init_params(config: ModelConfig, seed: int = 0) -> ParamStore:
    """Uniform[-0.1, 0.1] weights, zero biases, zero (frozen) pad row."""
    rng = np.random.default_rng(seed)
    tensors: dict[str, Tensor] = {}
    for name, shape in expected_shapes(config).items():
        if name.endswith(".bias"):
            data = np.zeros(shape, dtype=np.float64)
        else:
            data = _f32_exact(rng.uniform(-0.1, 0.1, size=shape))
        if name == "embedding":
            data[PAD_ID] = 0.0
        tensors[name] = Tensor(data, name=name)
    return ParamStore(config, tensors)


def _run_blocks(params: ParamStore, h: Tensor, tape: Tape | None, start: int = 0) -> list[Tensor]:
    states = []
    for l in range(start, params.config.num_blocks):
        pre = tc.add(tc.matmul(h, params[f"block{l}.weight"], tape), params[f"block{l}.bias"], tape)
        h = tc.add(h, tc.tanh(pre, tape), tape)
        states.append(h)
    return states


def _head(params: ParamStore, h: Tensor, weights: np.ndarray, tape: Tape | None):
    pooled = tc.mean_pool_masked(h, weights, tape)
    logits = tc.add(tc.matmul(pooled, params["head.weight"], tape), params["head.bias"], tape)
    probs = tc.softmax(logits, tape)
    return pooled, logits, probs


def _prefix_len(weights: np.ndarray) -> int:
    nz = np.nonzero(weights > 0)[0]
    if nz.size == 0:
        raise ValueError("all-pad example: mask weights sum to zero")
    return int(nz[-1]) + 1


def forward(params: ParamStore, example: Example, tape: Tape | None = None) -> ForwardTrace:
    n = _prefix_len(example.mask)
    ids = example.token_ids[:n]
    if ids.max() >= params.config.vocab_size:
        raise ValueError("token id out of range for this model")
    emb = tc.lookup(params["embedding"], ids, tape)
    hidden = [emb] + _run_blocks(params, emb, tape)
    pooled, logits, probs = _head(params, hidden[-1], example.mask[:n], tape)
    return ForwardTrace(emb, hidden, pooled, logits, probs)


def forward_from_embeddings(
    params: ParamStore,
    embeddings: Tensor | np.ndarray,
    mask_weights,
    tape: Tape | None = None,
) -> ForwardTrace:
    """Same pass as forward, starting from supplied (possibly mixed) embeddings.

    Weights may be fractional; pooling divides by their sum. No trimming is
    done here -- the caller controls the row count.
    """
    emb = embeddings if isinstance(embeddings, Tensor) else Tensor(np.asarray(embeddings))
    w = np.asarray(mask_weights, dtype=np.float64)
    if w.shape != (emb.data.shape[0],):
        raise ValueError("mask weights must have one entry per embedding row")
    if w.sum() <= 0.0:
        raise ValueError("mask weights sum to zero")
    hidden = [emb] + _run_blocks(params, emb, tape)
    pooled, logits, probs = _head(params, hidden[-1], w, tape)
    return ForwardTrace(emb, hidden, pooled, logits, probs)


def forward_mixed_hidden(
    params: ParamStore,
    ex_i: Example,
    ex_j: Example,
    lam: float,
    mix_layer: int,
    tape: Tape | None = None,
) -> ForwardTrace:
    """Run both inputs through blocks 1..m, blend states and mask weights by
    lam, then continue through the remaining blocks."""
    L = params.config.num_blocks
    if not 0 <= mix_layer <= L:
        raise ValueError(f"mix layer {mix_layer} outside [0, {L}]")
    if not 0.0 <= lam <= 1.0:
        raise ValueError("lam must be in [0, 1]")
    n = max(_prefix_len(ex_i.mask), _prefix_len(ex_j.mask))
    h_i = tc.lookup(params["embedding"], ex_i.token_ids[:n], tape)
    h_j = tc.lookup(params["embedding"], ex_j.token_ids[:n], tape)
    for l in range(mix_layer):
        h_i = _run_blocks_one(params, h_i, tape, l)
        h_j = _run_blocks_one(params, h_j, tape, l)
    h = tc.add(tc.scale(h_i, lam, tape), tc.scale(h_j, 1.0 - lam, tape), tape)
    w = lam * ex_i.mask[:n] + (1.0 - lam) * ex_j.mask[:n]
    hidden = [h] + _run_blocks(params, h, tape, start=mix_layer)
    pooled, logits, probs = _head(params, hidden[-1], w, tape)
    return ForwardTrace(None, hidden, pooled, logits, probs)


def _run_blocks_one(params: ParamStore, h: Tensor, tape: Tape | None, l: int) -> Tensor:
    pre = tc.add(tc.matmul(h, params[f"block{l}.weight"], tape), params[f"block{l}.bias"], tape)
    return tc.add(h, tc.tanh(pre, tape), tape)


def save_checkpoint(params: ParamStore, path) -> None:
    cfg = params.config
    chunks = [
        struct.pack("<4sI", CKPT_MAGIC, CKPT_VERSION),
        struct.pack(
            "<6I",
            cfg.vocab_size,
            cfg.embed_dim,
            cfg.num_blocks,
            cfg.hidden_dim,
            cfg.num_classes,
            cfg.max_len,
        ),
    ]
    for name, t in params.items():
        encoded = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(encoded)))
        chunks.append(encoded)
        dims = t.data.shape
        chunks.append(struct.pack("<I", len(dims)))
        chunks.append(struct.pack(f"<{len(dims)}I", *dims))
        chunks.append(np.ascontiguousarray(t.data, dtype="<f4").tobytes())
    Path(path).write_bytes(b"".join(chunks))


class _Reader:
    def __init__(self, blob: bytes):
        self.blob = blob
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.blob):
            raise ValueError("truncated checkpoint file")
        out = self.blob[self.pos : self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def done(self) -> bool:
        return self.pos == len(self.blob)


def load_checkpoint(path, expected_config: ModelConfig | None = None) -> tuple[ParamStore, ModelConfig]:
    r = _Reader(Path(path).read_bytes())
    magic = r.take(4)
    if magic != CKPT_MAGIC:
        raise ValueError(f"{path}: bad checkpoint magic {magic!r}")
    version = r.u32()
    if version != CKPT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    fields = [r.u32() for _ in range(6)]
    config = ModelConfig(
        vocab_size=fields[0],
        embed_dim=fields[1],
        num_blocks=fields[2],
        hidden_dim=fields[3],
        num_classes=fields[4],
        max_len=fields[5],
    )
    if expected_config is not None and config != expected_config:
        raise ValueError(f"{path}: checkpoint config {config} does not match {expected_config}")

    shapes = expected_shapes(config)
    tensors: dict[str, Tensor] = {}
    while not r.done():
        name = r.take(r.u32()).decode("utf-8")
        rank = r.u32()
        dims = tuple(r.u32() for _ in range(rank))
        count = int(np.prod(dims)) if dims else 1
        data = np.frombuffer(r.take(4 * count), dtype="<f4").reshape(dims)
        if name not in shapes:
            raise ValueError(f"{path}: unexpected tensor {name!r}")
        if dims != shapes[name]:
            raise ValueError(f"{path}: tensor {name!r} has shape {dims}, expected {shapes[name]}")
        tensors[name] = Tensor(data.astype(np.float64), name=name)
    missing = set(shapes) - set(tensors)
    if missing:
        raise ValueError(f"{path}: checkpoint missing tensors {sorted(missing)}")
    ordered = {name: tensors[name] for name in shapes}
    return ParamStore(config, ordered), config
