"""Desk-scale sequence-to-sequence lab for studying temperature-scaled
softmax training: a float64 autodiff core, a small transformer, greedy and
beam decoding, BLEU with significance testing, and experiment commands."""

import os

# Desk-scale tensors are far too small for BLAS thread pools; oversubscribed
# threads slow the training step several-fold. Only takes effect when numpy
# has not been imported yet and the variables are unset.
for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(_var, "1")
del _var, os

from .data import (
    BOS_ID,
    EOS_ID,
    PAD_ID,
    UNK_ID,
    SyntheticTaskSpec,
    Vocabulary,
    build_vocabulary,
    generate_multilingual_corpus,
    generate_synthetic_corpus,
    make_batches,
    prepend_target_tag,
)
from .decoding import BeamConfig, Hypothesis, beam_decode, greedy_decode, length_penalty
from .errors import (
    ConfigError,
    ContractError,
    DataError,
    NumericError,
    ShapeError,
    TemperlabError,
)
from .metrics import corpus_bleu, output_similarity_bleu, paired_bootstrap
from .model import (
    ModelConfig,
    TransformerModel,
    init_parameters,
    load_checkpoint,
    parameter_count,
    save_checkpoint,
)
from .tempering import (
    LabelDistribution,
    TemperingConfig,
    analytic_logit_gradient,
    shannon_entropy,
    tempered_cross_entropy,
    tempered_softmax,
)
from .tensor import GradientTape, Tensor, backward, finite_difference_gradient
from .training import (
    TrainerConfig,
    average_checkpoints,
    evaluate_checkpoint,
    global_gradient_norm,
    should_stop,
    train,
)

__version__ = "0.1.0"
