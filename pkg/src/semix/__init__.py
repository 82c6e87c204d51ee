"""Curriculum-ordered mixup with instance-specific label smoothing for
few-shot text classification, built on a small self-contained classifier."""

from .config import RunConfig, load_config
from .corpus import (
    Example,
    FewShotSplit,
    RawRecord,
    Vocab,
    build_vocab,
    decode,
    encode,
    load_dataset,
    sample_few_shot,
)
from .difficulty import (
    DifficultyPartition,
    DifficultyScore,
    partition_by_median,
    score_all,
)
from .encoder import (
    ForwardTrace,
    ModelConfig,
    ParamStore,
    forward,
    forward_from_embeddings,
    forward_mixed_hidden,
    init_params,
    load_checkpoint,
    save_checkpoint,
)
from .errors import ConfigError, DataError, SemixError
from .evalkit import (
    EvalReport,
    OodTarget,
    ablation_matrix,
    evaluate,
    multi_seed,
    ood_eval,
)
from .mixup import (
    LambdaDist,
    MixedExample,
    forward_mixed,
    mix_embed,
    mix_hidden,
    mix_span,
    parse_lambda_dist,
    saliency,
    sample_lambda,
)
from .pairing import PairAssignment, cosine, nearest_partner, represent
from .smoothing import (
    SmoothingConfig,
    ls_decomposition_check,
    smooth_instance,
    smooth_uniform,
    soft_cross_entropy,
)
from .tensorcore import Tape, Tensor, backward, grad_check
from .trainer import (
    OptimizerState,
    RunRecord,
    TrainConfig,
    lr_schedule,
    optimizer_step,
    run_pipeline,
    train_stage1,
    train_stage2_se,
)

__version__ = "0.1.0"
