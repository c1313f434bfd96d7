"""Word-level LSTM language model: vocabulary, training, inference, surprisal."""

from n400surprisal.lm.estimator import LstmLanguageModel, NotFittedError
from n400surprisal.lm.io import WeightFormatError, load_params, read_header, save_params
from n400surprisal.lm.network import (
    LmState,
    LstmParams,
    NonFiniteActivationError,
    initial_state,
    lstm_step,
    next_word_distribution,
    softmax,
    surprisal_bits,
)
from n400surprisal.lm.training import (
    TrainingConfig,
    TrainingDivergedError,
    TrainingLog,
    corpus_cross_entropy,
    loss_and_gradients,
    perplexity,
    train,
)
from n400surprisal.lm.vocab import (
    BOS_ID,
    EOS_ID,
    RESERVED_TOKENS,
    UNK_ID,
    Vocabulary,
    build_vocab,
    tokenize,
)

__all__ = [
    "BOS_ID",
    "EOS_ID",
    "LmState",
    "LstmLanguageModel",
    "LstmParams",
    "NonFiniteActivationError",
    "NotFittedError",
    "RESERVED_TOKENS",
    "TrainingConfig",
    "TrainingDivergedError",
    "TrainingLog",
    "UNK_ID",
    "Vocabulary",
    "WeightFormatError",
    "build_vocab",
    "corpus_cross_entropy",
    "initial_state",
    "load_params",
    "loss_and_gradients",
    "lstm_step",
    "next_word_distribution",
    "perplexity",
    "read_header",
    "save_params",
    "softmax",
    "surprisal_bits",
    "tokenize",
    "train",
]
