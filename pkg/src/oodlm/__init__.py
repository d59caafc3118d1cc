"""Laboratory for studying language model generalization in surprising contexts.

The package builds the full loop: generate a random regular language (a DFA),
sample corpora from it by uniform random walk, train small GRU / transformer
language models from scratch, construct "surprising" contexts whose final
token has probability zero (or provably below a threshold) under the data
distribution, and compare the model's behavior there against explicit
hypothesis predictors (local bigram, global state-based, interpolations,
baselines).  A separate module verifies a regularized log-linear
interpolation bound on synthetic tasks.

Conventions used throughout:

* Symbols are integers ``0 .. vocab_size-1``.
* On the output side, index ``vocab_size`` is the end-of-sequence (EOS) slot;
  every next-token distribution is a float64 array of length
  ``vocab_size + 1`` with EOS last.
* On the input side, id ``vocab_size`` is the beginning-of-sequence (BOS)
  token, so embedding tables have ``vocab_size + 1`` rows.
"""

from .automata import (
    Dfa,
    DfaConfig,
    DfaReject,
    GenerationError,
    SurprisingContext,
    generate_dfa,
    ground_truth_global,
    ground_truth_local,
    make_surprising_context,
    next_token_distribution,
    occupancy_measure,
    prune_unreachable,
    run,
    sample_walk,
    sample_walks,
)
from .corpus import CountTable, bigram_dist, count_corpus, make_surprising_natural, unigram_dist
from .evaluation import acc, err, evaluate_suite, jsd, tv_distance
from .hypotheses import (
    GlobalBeamHypothesis,
    GlobalDfaHypothesis,
    IgnoreHypothesis,
    InterpolationParams,
    LinearInterpolation,
    LocalCountsHypothesis,
    LocalDfaHypothesis,
    LogLinearInterpolation,
    RestartHypothesis,
    UnigramHypothesis,
    fit_lambda,
    interp_linear,
    interp_loglinear,
)
from .lm import (
    GruLm,
    LmConfig,
    NoiseConfig,
    TrainConfig,
    TransformerLm,
    apply_token_noise,
    grad_check_lm,
    lm_next_dist,
    load_lm,
    save_lm,
    state_dropout,
    train_lm,
)
from .theory import (
    FeatureSpec,
    LogLinearModel,
    SyntheticTask,
    grad_check_loglinear,
    make_synthetic_task,
    measure_epsilon,
    train_loglinear,
    verify_lemma,
    verify_proposition,
)

__version__ = "0.1.0"
