"""Estimator-style wrapper around vocabulary building, training, and scoring."""

from __future__ import annotations

import math
from pathlib import Path
from typing import Sequence

import numpy as np
from sklearn.base import BaseEstimator

from n400surprisal.lm import io as weight_io
from n400surprisal.lm import network, training
from n400surprisal.lm.vocab import UNK_ID, Vocabulary, build_vocab, tokenize


class NotFittedError(RuntimeError):
    pass


class LstmLanguageModel(BaseEstimator):
    """Word-level LSTM language model with a fit/predict surface.

    ``fit`` takes a corpus as a list of sentences, each a list of word
    strings; it builds the vocabulary and trains the network.  Scoring
    methods operate on word strings and handle out-of-vocabulary mapping.
    """

    def __init__(
        self,
        embedding_size: int = 64,
        hidden_sizes: tuple[int, ...] = (64, 64),
        max_vocab_size: int = 10000,
        epochs: int = 10,
        learning_rate: float = 0.5,
        batch_size: int = 16,
        bptt_window: int = 32,
        clip_norm: float = 5.0,
        holdout_fraction: float = 0.1,
        seed: int = 0,
    ):
        self.embedding_size = embedding_size
        self.hidden_sizes = hidden_sizes
        self.max_vocab_size = max_vocab_size
        self.epochs = epochs
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.bptt_window = bptt_window
        self.clip_norm = clip_norm
        self.holdout_fraction = holdout_fraction
        self.seed = seed

    def fit(self, sentences: Sequence[Sequence[str]], y=None):
        if not sentences:
            raise ValueError("empty training corpus")
        stream = (word for sent in sentences for word in sent)
        self.vocab_ = build_vocab(stream, self.max_vocab_size)
        encoded = [[self.vocab_.id_of(w) for w in sent] for sent in sentences]
        config = self.training_config()
        self.params_, self.training_log_ = training.train(
            encoded, self.vocab_.size, self.embedding_size, self.hidden_sizes, config
        )
        return self

    def training_config(self) -> training.TrainingConfig:
        return training.TrainingConfig(
            epochs=self.epochs,
            learning_rate=self.learning_rate,
            batch_size=self.batch_size,
            bptt_window=self.bptt_window,
            seed=self.seed,
            clip_norm=self.clip_norm,
            holdout_fraction=self.holdout_fraction,
        )

    def _require_fitted(self):
        if not hasattr(self, "params_") or not hasattr(self, "vocab_"):
            raise NotFittedError("model is not fitted; call fit() or load()")

    def predict_proba(self, prefix_tokens: Sequence[str]) -> np.ndarray:
        """Next-word distribution after a (possibly empty) word prefix."""
        self._require_fitted()
        ids, _ = tokenize(prefix_tokens, self.vocab_)
        return network.next_word_distribution(self.params_, ids)

    def surprisal(self, tokens: Sequence[str], target_index: int) -> float:
        """Surprisal in bits of the word at ``target_index`` given its prefix.

        Out-of-vocabulary targets are rejected; out-of-vocabulary context
        words are fed as the unknown token.
        """
        self._require_fitted()
        if not 0 <= target_index < len(tokens):
            raise ValueError(f"target_index {target_index} outside sentence of length {len(tokens)}")
        ids, oov = tokenize(tokens, self.vocab_)
        if target_index in oov:
            raise ValueError(f"target word {tokens[target_index]!r} is out of vocabulary")
        return network.surprisal_bits(self.params_, ids, target_index + 1)

    def perplexity(self, sentences: Sequence[Sequence[str]]) -> float:
        self._require_fitted()
        encoded = [[self.vocab_.id_of(w) for w in sent] for sent in sentences]
        return training.perplexity(self.params_, encoded)

    def score(self, sentences: Sequence[Sequence[str]], y=None) -> float:
        """Mean negative cross-entropy (higher is better), sklearn-style."""
        return -math.log(self.perplexity(sentences))

    def save(self, weights_path, vocab_path=None, config_hash: str = "") -> None:
        """Write the weight file and, next to it, the vocabulary file."""
        self._require_fitted()
        weights_path = Path(weights_path)
        if vocab_path is None:
            vocab_path = weights_path.with_suffix(".vocab")
        weight_io.save_params(
            self.params_, weights_path, self.vocab_.content_hash(),
            seed=self.seed, config_hash=config_hash,
        )
        self.vocab_.save(vocab_path)

    @classmethod
    def load(cls, weights_path, vocab_path=None) -> "LstmLanguageModel":
        weights_path = Path(weights_path)
        if vocab_path is None:
            vocab_path = weights_path.with_suffix(".vocab")
        vocab = Vocabulary.load(vocab_path)
        params, header = weight_io.load_params(weights_path, vocab.content_hash())
        model = cls(
            embedding_size=header.embedding_size,
            hidden_sizes=header.hidden_sizes,
            max_vocab_size=max(vocab.size, 3),
            seed=header.seed,
        )
        model.params_ = params
        model.vocab_ = vocab
        return model

    @property
    def unknown_id(self) -> int:
        return UNK_ID
