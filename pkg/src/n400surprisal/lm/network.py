"""Word-level LSTM forward pass and surprisal.

Standard LSTM recurrence (input, forget, output gates with a tanh cell
candidate, no peepholes).  Gate pre-activations are packed in the order
input, forget, candidate, output.  All math is float64; incremental
processing is strictly left to right, so a word's surprisal depends only on
the words before it.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np

PROB_FLOOR = 1e-300


class NonFiniteActivationError(FloatingPointError):
    """A forward step produced NaN or infinity (corrupted weights)."""


@dataclass(frozen=True)
class LstmParams:
    """Embedding, per-layer gate weights, and output projection.

    Immutable after construction: arrays are copied and marked read-only, so
    parameter sets can be shared freely across threads.
    """

    embedding: np.ndarray            # (V, d_emb)
    w_x: tuple[np.ndarray, ...]      # per layer (4H, input_dim)
    w_h: tuple[np.ndarray, ...]      # per layer (4H, H)
    bias: tuple[np.ndarray, ...]     # per layer (4H,)
    w_out: np.ndarray                # (V, H_last)
    b_out: np.ndarray                # (V,)

    def __post_init__(self):
        lock = lambda arr: _freeze(np.asarray(arr, dtype=np.float64))
        object.__setattr__(self, "embedding", lock(self.embedding))
        object.__setattr__(self, "w_x", tuple(lock(a) for a in self.w_x))
        object.__setattr__(self, "w_h", tuple(lock(a) for a in self.w_h))
        object.__setattr__(self, "bias", tuple(lock(a) for a in self.bias))
        object.__setattr__(self, "w_out", lock(self.w_out))
        object.__setattr__(self, "b_out", lock(self.b_out))
        self._check_shapes()

    def _check_shapes(self):
        if self.embedding.ndim != 2:
            raise ValueError("embedding must be 2-D (vocab x embedding_size)")
        n_layers = len(self.w_x)
        if not (len(self.w_h) == len(self.bias) == n_layers) or n_layers == 0:
            raise ValueError("per-layer weight tuples must be non-empty and equal length")
        in_dim = self.embedding.shape[1]
        for layer, (wx, wh, b) in enumerate(zip(self.w_x, self.w_h, self.bias)):
            hidden = wh.shape[1]
            if wx.shape != (4 * hidden, in_dim):
                raise ValueError(f"layer {layer}: w_x shape {wx.shape} != {(4 * hidden, in_dim)}")
            if wh.shape != (4 * hidden, hidden):
                raise ValueError(f"layer {layer}: w_h shape {wh.shape} inconsistent")
            if b.shape != (4 * hidden,):
                raise ValueError(f"layer {layer}: bias shape {b.shape} inconsistent")
            in_dim = hidden
        if self.w_out.shape != (self.embedding.shape[0], in_dim):
            raise ValueError(f"w_out shape {self.w_out.shape} != {(self.embedding.shape[0], in_dim)}")
        if self.b_out.shape != (self.embedding.shape[0],):
            raise ValueError("b_out length must equal vocabulary size")
        for arr in self.arrays():
            if not np.all(np.isfinite(arr)):
                raise ValueError("parameters contain non-finite values")

    def arrays(self):
        yield self.embedding
        yield from self.w_x
        yield from self.w_h
        yield from self.bias
        yield self.w_out
        yield self.b_out

    @property
    def vocab_size(self) -> int:
        return self.embedding.shape[0]

    @property
    def embedding_size(self) -> int:
        return self.embedding.shape[1]

    @property
    def hidden_sizes(self) -> tuple[int, ...]:
        return tuple(wh.shape[1] for wh in self.w_h)

    @property
    def n_layers(self) -> int:
        return len(self.w_x)

    @property
    def n_parameters(self) -> int:
        return sum(arr.size for arr in self.arrays())


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr = arr.copy()
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class LmState:
    """Per-layer hidden and cell vectors."""

    hidden: tuple[np.ndarray, ...]
    cell: tuple[np.ndarray, ...]


def initial_state(params: LstmParams) -> LmState:
    return LmState(
        hidden=tuple(np.zeros(h) for h in params.hidden_sizes),
        cell=tuple(np.zeros(h) for h in params.hidden_sizes),
    )


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def lstm_step(params: LstmParams, state: LmState, token_id: int) -> tuple[LmState, np.ndarray]:
    """Advance one token; returns the new state and next-word logits."""
    if not 0 <= token_id < params.vocab_size:
        raise ValueError(f"token id {token_id} outside vocabulary of size {params.vocab_size}")
    x = params.embedding[token_id]
    new_hidden = []
    new_cell = []
    with np.errstate(over="ignore", invalid="ignore"):
        for layer in range(params.n_layers):
            hsz = params.hidden_sizes[layer]
            z = params.w_x[layer] @ x + params.w_h[layer] @ state.hidden[layer] + params.bias[layer]
            i = _sigmoid(z[:hsz])
            f = _sigmoid(z[hsz:2 * hsz])
            g = np.tanh(z[2 * hsz:3 * hsz])
            o = _sigmoid(z[3 * hsz:])
            c = f * state.cell[layer] + i * g
            h = o * np.tanh(c)
            new_hidden.append(h)
            new_cell.append(c)
            x = h
        logits = params.w_out @ x + params.b_out
    if not (np.all(np.isfinite(logits)) and np.all(np.isfinite(x))):
        raise NonFiniteActivationError("non-finite activation; weights are corrupted or diverged")
    return LmState(hidden=tuple(new_hidden), cell=tuple(new_cell)), logits


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - np.max(logits)
    ex = np.exp(shifted)
    return ex / ex.sum()


def next_word_distribution(params: LstmParams, prefix_ids: Sequence[int]) -> np.ndarray:
    """Probability vector over the next word after consuming ``prefix_ids``.

    The prefix must be non-empty (it carries at least the begin-of-sentence
    id).  Entries are non-negative and sum to 1 within floating-point error.
    """
    if len(prefix_ids) == 0:
        raise ValueError("prefix must contain at least the begin-of-sentence id")
    state = initial_state(params)
    logits = None
    for token_id in prefix_ids:
        state, logits = lstm_step(params, state, token_id)
    return softmax(logits)


def surprisal_bits(params: LstmParams, sentence_ids: Sequence[int], target_index: int) -> float:
    """Surprisal of the token at ``target_index`` in bits.

    ``sentence_ids`` starts with the begin-of-sentence id (the tokenizer's
    output), so ``target_index`` must be at least 1.  Only the prefix strictly
    before the target is consumed.  A probability that underflows to exact
    zero is reported as +inf with a diagnostic warning; subnormal
    probabilities are floored at 1e-300 first.
    """
    if not 1 <= target_index < len(sentence_ids):
        raise ValueError(
            f"target_index {target_index} invalid for sentence of length {len(sentence_ids)} "
            "(index 0 is the begin-of-sentence id)"
        )
    probs = next_word_distribution(params, sentence_ids[:target_index])
    p = float(probs[sentence_ids[target_index]])
    if p <= 0.0:
        warnings.warn(
            f"predicted probability underflowed to zero for token id "
            f"{sentence_ids[target_index]}; reporting infinite surprisal",
            RuntimeWarning,
            stacklevel=2,
        )
        return math.inf
    return -math.log2(max(p, PROB_FLOOR))
