"""Mixed pseudo-sample construction at three levels.

* embed: position-wise blend of the two token-embedding sequences.
* hidden: blend of block-m hidden states, then the remaining blocks run once.
* span: token-level swap -- the least-salient span of the anchor is replaced
  by the most-salient same-length span of the partner, and the realized blend
  weight is the fraction of anchor tokens kept.

Labels always follow the same convex combination as the inputs. Callers pass
already-smoothed labels when smoothing is on; the default is the one-hot.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import encoder
from . import smoothing
from . import tensorcore as tc
from .corpus import Example
from .encoder import ForwardTrace, ParamStore
from .errors import ConfigError
from .tensorcore import Tape, Tensor

VARIANTS = ("embed", "hidden", "span")


@dataclass(frozen=True)
class LambdaDist:
    """Blend-weight distribution: beta(a) folded above 0.5, or a fixed value."""

    kind: str
    value: float

    def __post_init__(self):
        if self.kind == "beta":
            if self.value <= 0:
                raise ConfigError("beta concentration must be > 0")
        elif self.kind == "fixed":
            if not 0.0 <= self.value <= 1.0:
                raise ConfigError("fixed lambda must be in [0, 1]")
        else:
            raise ConfigError(f"unknown lambda distribution kind {self.kind!r}")


def parse_lambda_dist(spec: str) -> LambdaDist:
    """Parse "beta(0.2)" or "fixed(0.7)"."""
    spec = spec.strip()
    for kind in ("beta", "fixed"):
        if spec.startswith(kind + "(") and spec.endswith(")"):
            try:
                value = float(spec[len(kind) + 1 : -1])
            except ValueError as exc:
                raise ConfigError(f"bad lambda distribution {spec!r}") from exc
            return LambdaDist(kind, value)
    raise ConfigError(f"bad lambda distribution {spec!r} (expected beta(a) or fixed(v))")


def sample_lambda(rng: np.random.Generator, dist: LambdaDist) -> float:
    """Draw the anchor weight; beta draws are folded so the anchor dominates."""
    if dist.kind == "fixed":
        return dist.value
    draw = float(rng.beta(dist.value, dist.value))
    return max(draw, 1.0 - draw)


@dataclass
class MixedExample:
    """A forward-ready mixed item plus its interpolated soft label.

    variant "plain" passes the anchor through unmixed (used when a pool is too
    small to pair); "span" carries a re-encoded token sequence.
    """

    variant: str
    anchor: Example
    partner: Example | None
    lam: float
    soft_label: np.ndarray
    mix_layer: int | None = None
    mixed_example: Example | None = None


def _mix_labels(lam: float, label_i: np.ndarray, label_j: np.ndarray) -> np.ndarray:
    return lam * np.asarray(label_i, dtype=np.float64) + (1.0 - lam) * np.asarray(
        label_j, dtype=np.float64
    )


def _resolve_labels(ex_i: Example, ex_j: Example, label_i, label_j):
    li = ex_i.one_hot if label_i is None else label_i
    lj = ex_j.one_hot if label_j is None else label_j
    return li, lj


def mix_embed(
    params: ParamStore,
    ex_i: Example,
    ex_j: Example,
    lam: float,
    label_i: np.ndarray | None = None,
    label_j: np.ndarray | None = None,
) -> MixedExample:
    if not 0.0 <= lam <= 1.0:
        raise ValueError("lam must be in [0, 1]")
    li, lj = _resolve_labels(ex_i, ex_j, label_i, label_j)
    return MixedExample("embed", ex_i, ex_j, float(lam), _mix_labels(lam, li, lj))


def mix_hidden(
    params: ParamStore,
    ex_i: Example,
    ex_j: Example,
    lam: float,
    mix_layer: int,
    label_i: np.ndarray | None = None,
    label_j: np.ndarray | None = None,
) -> MixedExample:
    if not 0.0 <= lam <= 1.0:
        raise ValueError("lam must be in [0, 1]")
    if not 0 <= mix_layer <= params.config.num_blocks:
        raise ValueError(f"mix layer {mix_layer} outside [0, {params.config.num_blocks}]")
    li, lj = _resolve_labels(ex_i, ex_j, label_i, label_j)
    return MixedExample(
        "hidden", ex_i, ex_j, float(lam), _mix_labels(lam, li, lj), mix_layer=mix_layer
    )


def saliency(params: ParamStore, example: Example) -> np.ndarray:
    """Gradient-norm importance per token; pad positions score -inf."""
    n = example.length()
    if n == 0:
        raise ValueError("all-pad example")
    tape = Tape()
    leaf = Tensor(params["embedding"].data[example.token_ids[:n]])
    trace = encoder.forward_from_embeddings(params, leaf, example.mask[:n], tape)
    loss = smoothing.soft_cross_entropy_loss([trace.probs], example.one_hot[None, :], tape)
    tc.backward(tape, loss)
    grad = leaf.grad if leaf.grad is not None else np.zeros_like(leaf.data)
    scores = np.full(example.token_ids.shape[0], -np.inf)
    scores[:n] = np.sqrt((grad ** 2).sum(axis=1))
    return scores


def _window_sums(values: np.ndarray, width: int) -> np.ndarray:
    cs = np.concatenate([[0.0], np.cumsum(values)])
    return cs[width:] - cs[:-width]


def mix_span(
    params: ParamStore,
    ex_i: Example,
    ex_j: Example,
    lam_target: float,
    label_i: np.ndarray | None = None,
    label_j: np.ndarray | None = None,
) -> MixedExample:
    """Swap the anchor's least-salient span for the partner's most-salient one.

    The span length is round((1 - lam_target) * len_i), clamped to [1,
    min(len_i, len_j)], so the realized blend weight 1 - span/len_i can differ
    from the request; the realized value is what enters the label. A target of
    exactly 1 returns the anchor verbatim.
    """
    if not 0.0 <= lam_target <= 1.0:
        raise ValueError("lam_target must be in [0, 1]")
    len_i, len_j = ex_i.length(), ex_j.length()
    if len_i < 1 or len_j < 1:
        raise ValueError("span mixing needs at least one real token on each side")
    li, lj = _resolve_labels(ex_i, ex_j, label_i, label_j)

    if lam_target >= 1.0:
        mixed = Example(
            example_id=ex_i.example_id,
            token_ids=ex_i.token_ids.copy(),
            mask=ex_i.mask.copy(),
            label=ex_i.label,
            one_hot=ex_i.one_hot.copy(),
        )
        return MixedExample("span", ex_i, ex_j, 1.0, _mix_labels(1.0, li, lj), mixed_example=mixed)

    span = int(np.floor((1.0 - lam_target) * len_i + 0.5))  # halves round up
    span = max(1, min(span, len_i, len_j))
    sal_i = saliency(params, ex_i)[:len_i]
    sal_j = saliency(params, ex_j)[:len_j]
    a = int(np.argmin(_window_sums(sal_i, span)))  # leftmost least-salient
    b = int(np.argmax(_window_sums(sal_j, span)))  # leftmost most-salient
    ids = ex_i.token_ids.copy()
    ids[a : a + span] = ex_j.token_ids[b : b + span]
    lam = 1.0 - span / len_i
    mixed = Example(
        example_id=ex_i.example_id,
        token_ids=ids,
        mask=ex_i.mask.copy(),
        label=ex_i.label,
        one_hot=ex_i.one_hot.copy(),
    )
    return MixedExample("span", ex_i, ex_j, lam, _mix_labels(lam, li, lj), mixed_example=mixed)


def build_mixed(
    variant: str,
    params: ParamStore,
    ex_i: Example,
    ex_j: Example,
    lam: float,
    mix_layer: int = 1,
    label_i: np.ndarray | None = None,
    label_j: np.ndarray | None = None,
) -> MixedExample:
    if variant == "embed":
        return mix_embed(params, ex_i, ex_j, lam, label_i, label_j)
    if variant == "hidden":
        return mix_hidden(params, ex_i, ex_j, lam, mix_layer, label_i, label_j)
    if variant == "span":
        return mix_span(params, ex_i, ex_j, lam, label_i, label_j)
    raise ConfigError(f"unknown mix variant {variant!r}")


def forward_mixed(params: ParamStore, item: MixedExample, tape: Tape | None = None) -> ForwardTrace:
    """Run the forward pass a mixed item describes."""
    if item.variant == "plain":
        return encoder.forward(params, item.anchor, tape)
    if item.variant == "span":
        return encoder.forward(params, item.mixed_example, tape)
    if item.variant == "hidden":
        return encoder.forward_mixed_hidden(
            params, item.anchor, item.partner, item.lam, item.mix_layer, tape
        )
    if item.variant != "embed":
        raise ValueError(f"unknown mixed item variant {item.variant!r}")
    ex_i, ex_j, lam = item.anchor, item.partner, item.lam
    n = max(ex_i.length(), ex_j.length())
    e_i = tc.lookup(params["embedding"], ex_i.token_ids[:n], tape)
    e_j = tc.lookup(params["embedding"], ex_j.token_ids[:n], tape)
    mixed = tc.add(tc.scale(e_i, lam, tape), tc.scale(e_j, 1.0 - lam, tape), tape)
    weights = lam * ex_i.mask[:n] + (1.0 - lam) * ex_j.mask[:n]
    return encoder.forward_from_embeddings(params, mixed, weights, tape)
