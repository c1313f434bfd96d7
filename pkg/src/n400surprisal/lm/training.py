"""Truncated-BPTT training of the word-level LSTM.

Plain SGD with global gradient-norm clipping, deterministic given the seed:
the seed fixes initialization, the train/held-out split, and batch order.
Sentences are grouped by length so batches need no padding; state is carried
across window chunks within a sentence with gradients truncated at chunk
boundaries.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from n400surprisal.lm.network import LstmParams
from n400surprisal.lm.vocab import BOS_ID, EOS_ID


class TrainingDivergedError(RuntimeError):
    def __init__(self, step: int, learning_rate: float):
        self.step = step
        self.learning_rate = learning_rate
        super().__init__(
            f"non-finite loss at update step {step} (learning_rate={learning_rate}); "
            "lower the learning rate or raise the clipping threshold"
        )


@dataclass(frozen=True)
class TrainingConfig:
    epochs: int = 10
    learning_rate: float = 0.5
    batch_size: int = 16
    bptt_window: int = 32
    seed: int = 0
    clip_norm: float = 5.0
    holdout_fraction: float = 0.1

    def __post_init__(self):
        for name in ("epochs", "learning_rate", "batch_size", "bptt_window", "clip_norm"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if not 0.0 < self.holdout_fraction < 1.0:
            raise ValueError(f"holdout_fraction must be in (0, 1), got {self.holdout_fraction}")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")


@dataclass
class TrainingLog:
    """Per-epoch cross-entropy (nats/token); index 0 of holdout_ce is the
    untrained model."""

    holdout_ce: list[float] = field(default_factory=list)
    train_ce: list[float] = field(default_factory=list)

    def holdout_perplexities(self) -> list[float]:
        return [math.exp(ce) for ce in self.holdout_ce]


def _init_weights(vocab_size, embedding_size, hidden_sizes, rng) -> dict:
    scale = 0.1
    weights = {
        "embedding": rng.uniform(-scale, scale, size=(vocab_size, embedding_size)),
        "w_x": [], "w_h": [], "bias": [],
    }
    in_dim = embedding_size
    for hidden in hidden_sizes:
        weights["w_x"].append(rng.uniform(-scale, scale, size=(4 * hidden, in_dim)))
        weights["w_h"].append(rng.uniform(-scale, scale, size=(4 * hidden, hidden)))
        bias = np.zeros(4 * hidden)
        bias[hidden:2 * hidden] = 1.0  # forget-gate bias; stabilizes early training
        weights["bias"].append(bias)
        in_dim = hidden
    weights["w_out"] = rng.uniform(-scale, scale, size=(vocab_size, in_dim))
    weights["b_out"] = np.zeros(vocab_size)
    return weights


def _to_params(weights: dict) -> LstmParams:
    return LstmParams(
        embedding=weights["embedding"],
        w_x=tuple(weights["w_x"]),
        w_h=tuple(weights["w_h"]),
        bias=tuple(weights["bias"]),
        w_out=weights["w_out"],
        b_out=weights["b_out"],
    )


def weights_from_params(params: LstmParams) -> dict:
    return {
        "embedding": params.embedding.copy(),
        "w_x": [a.copy() for a in params.w_x],
        "w_h": [a.copy() for a in params.w_h],
        "bias": [a.copy() for a in params.bias],
        "w_out": params.w_out.copy(),
        "b_out": params.b_out.copy(),
    }


def _weight_arrays(weights: dict):
    yield weights["embedding"]
    yield from weights["w_x"]
    yield from weights["w_h"]
    yield from weights["bias"]
    yield weights["w_out"]
    yield weights["b_out"]


def _zero_grads(weights: dict) -> dict:
    return {
        "embedding": np.zeros_like(weights["embedding"]),
        "w_x": [np.zeros_like(a) for a in weights["w_x"]],
        "w_h": [np.zeros_like(a) for a in weights["w_h"]],
        "bias": [np.zeros_like(a) for a in weights["bias"]],
        "w_out": np.zeros_like(weights["w_out"]),
        "b_out": np.zeros_like(weights["b_out"]),
    }


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _forward_batch(weights, x_ids, h_in, c_in):
    """Forward over a (B, T) id batch; returns logits, caches, final state."""
    n_layers = len(weights["w_x"])
    batch, n_steps = x_ids.shape
    h = [a.copy() for a in h_in]
    c = [a.copy() for a in c_in]
    caches = []
    logits = np.empty((batch, n_steps, weights["w_out"].shape[0]))
    for t in range(n_steps):
        x = weights["embedding"][x_ids[:, t]]
        layer_caches = []
        for layer in range(n_layers):
            hsz = weights["w_h"][layer].shape[1]
            z = (x @ weights["w_x"][layer].T + h[layer] @ weights["w_h"][layer].T
                 + weights["bias"][layer])
            gi = _sigmoid(z[:, :hsz])
            gf = _sigmoid(z[:, hsz:2 * hsz])
            gg = np.tanh(z[:, 2 * hsz:3 * hsz])
            go = _sigmoid(z[:, 3 * hsz:])
            c_new = gf * c[layer] + gi * gg
            tanh_c = np.tanh(c_new)
            h_new = go * tanh_c
            layer_caches.append((x, h[layer], c[layer], gi, gf, gg, go, tanh_c))
            h[layer] = h_new
            c[layer] = c_new
            x = h_new
        logits[:, t] = x @ weights["w_out"].T + weights["b_out"]
        caches.append((x_ids[:, t], layer_caches, x))
    return logits, caches, h, c


def _backward_batch(weights, caches, dlogits):
    """Backpropagate through a forward cache; returns gradients."""
    grads = _zero_grads(weights)
    n_layers = len(weights["w_x"])
    batch = dlogits.shape[0]
    dh_time = [np.zeros((batch, wh.shape[1])) for wh in weights["w_h"]]
    dc_time = [np.zeros((batch, wh.shape[1])) for wh in weights["w_h"]]
    for t in range(len(caches) - 1, -1, -1):
        token_ids, layer_caches, top_h = caches[t]
        dl = dlogits[:, t]
        grads["w_out"] += dl.T @ top_h
        grads["b_out"] += dl.sum(axis=0)
        d_above = dl @ weights["w_out"]
        for layer in range(n_layers - 1, -1, -1):
            x, h_prev, c_prev, gi, gf, gg, go, tanh_c = layer_caches[layer]
            dh = d_above + dh_time[layer]
            dc = dc_time[layer] + dh * go * (1.0 - tanh_c * tanh_c)
            dzo = dh * tanh_c * go * (1.0 - go)
            dzi = dc * gg * gi * (1.0 - gi)
            dzf = dc * c_prev * gf * (1.0 - gf)
            dzg = dc * gi * (1.0 - gg * gg)
            dz = np.concatenate([dzi, dzf, dzg, dzo], axis=1)
            grads["w_x"][layer] += dz.T @ x
            grads["w_h"][layer] += dz.T @ h_prev
            grads["bias"][layer] += dz.sum(axis=0)
            d_above = dz @ weights["w_x"][layer]
            dh_time[layer] = dz @ weights["w_h"][layer]
            dc_time[layer] = dc * gf
        np.add.at(grads["embedding"], token_ids, d_above)
    return grads


def _loss_and_dlogits(logits, targets):
    """Mean cross-entropy (nats) over all positions plus its logit gradient."""
    batch, n_steps, vocab = logits.shape
    shifted = logits - logits.max(axis=2, keepdims=True)
    ex = np.exp(shifted)
    probs = ex / ex.sum(axis=2, keepdims=True)
    rows = np.arange(batch)[:, None]
    cols = np.arange(n_steps)[None, :]
    log_probs = shifted - np.log(ex.sum(axis=2, keepdims=True))
    n_tokens = batch * n_steps
    loss = -log_probs[rows, cols, targets].sum() / n_tokens
    dlogits = probs
    dlogits[rows, cols, targets] -= 1.0
    dlogits /= n_tokens
    return loss, dlogits


def loss_and_gradients(weights_or_params, sentences: Sequence[Sequence[int]]):
    """Mean next-word cross-entropy over full sentences and its gradients.

    Sentences are word-id lists without boundary ids; each is scored as
    begin-of-sentence + words + end-of-sentence from a zero state.  Exposed
    for finite-difference verification of the backward pass.
    """
    weights = (weights_from_params(weights_or_params)
               if isinstance(weights_or_params, LstmParams) else weights_or_params)
    sequences = [[BOS_ID, *sent, EOS_ID] for sent in sentences]
    total_tokens = sum(len(seq) - 1 for seq in sequences)
    grand_grads = _zero_grads(weights)
    grand_loss = 0.0
    for seq in sequences:
        inputs = np.array([seq[:-1]])
        targets = np.array([seq[1:]])
        h0, c0 = _zero_state(weights, 1)
        logits, caches, _, _ = _forward_batch(weights, inputs, h0, c0)
        loss, dlogits = _loss_and_dlogits(logits, targets)
        scale = targets.size / total_tokens
        grads = _backward_batch(weights, caches, dlogits)
        grand_loss += loss * scale
        for g_tot, g in zip(_weight_arrays(grand_grads), _weight_arrays(grads)):
            g_tot += g * scale
    return grand_loss, grand_grads


def _zero_state(weights, batch):
    return ([np.zeros((batch, wh.shape[1])) for wh in weights["w_h"]],
            [np.zeros((batch, wh.shape[1])) for wh in weights["w_h"]])


def _make_batches(sequences, batch_size):
    """Group equal-length sequences into (inputs, targets) arrays."""
    by_length: dict[int, list] = {}
    for seq in sequences:
        by_length.setdefault(len(seq), []).append(seq)
    batches = []
    for length in sorted(by_length):
        group = by_length[length]
        for start in range(0, len(group), batch_size):
            chunk = np.array(group[start:start + batch_size])
            batches.append((chunk[:, :-1], chunk[:, 1:]))
    return batches


def _corpus_ce(weights, batches) -> float:
    total_loss = 0.0
    total_tokens = 0
    with np.errstate(over="ignore", invalid="ignore"):
        for inputs, targets in batches:
            h, c = _zero_state(weights, inputs.shape[0])
            logits, _, _, _ = _forward_batch(weights, inputs, h, c)
            loss, _ = _loss_and_dlogits(logits, targets)
            total_loss += loss * targets.size
            total_tokens += targets.size
    return total_loss / total_tokens


def _clip_gradients(grads, clip_norm) -> float:
    total = 0.0
    for arr in _weight_arrays(grads):
        total += float(np.sum(arr * arr))
    norm = math.sqrt(total)
    if norm > clip_norm:
        scale = clip_norm / norm
        for arr in _weight_arrays(grads):
            arr *= scale
    return norm


def train(
    sentences: Sequence[Sequence[int]],
    vocab_size: int,
    embedding_size: int,
    hidden_sizes: Sequence[int],
    config: TrainingConfig,
) -> tuple[LstmParams, TrainingLog]:
    """Train an LSTM language model on tokenized sentences.

    ``sentences`` holds word-id lists (no boundary ids; they are added here).
    Returns the trained parameters and a log with per-epoch held-out
    cross-entropy, the first entry being the untrained model.  The run is
    bit-reproducible given ``config.seed``.
    """
    if len(sentences) < 2:
        raise ValueError("training needs at least 2 sentences (one is held out)")
    for sent in sentences:
        for token_id in sent:
            if not 0 <= token_id < vocab_size:
                raise ValueError(f"token id {token_id} outside vocabulary of size {vocab_size}")
    rng = np.random.default_rng(config.seed)
    weights = _init_weights(vocab_size, embedding_size, tuple(hidden_sizes), rng)

    sequences = [[BOS_ID, *sent, EOS_ID] for sent in sentences]
    order = rng.permutation(len(sequences))
    n_holdout = max(1, int(round(config.holdout_fraction * len(sequences))))
    n_holdout = min(n_holdout, len(sequences) - 1)
    holdout = [sequences[i] for i in order[:n_holdout]]
    training = [sequences[i] for i in order[n_holdout:]]

    train_batches = _make_batches(training, config.batch_size)
    holdout_batches = _make_batches(holdout, config.batch_size)

    log = TrainingLog()
    log.holdout_ce.append(_corpus_ce(weights, holdout_batches))

    step = 0
    for _ in range(config.epochs):
        batch_order = rng.permutation(len(train_batches))
        epoch_loss = 0.0
        epoch_tokens = 0
        for batch_index in batch_order:
            inputs, targets = train_batches[batch_index]
            h, c = _zero_state(weights, inputs.shape[0])
            for t0 in range(0, inputs.shape[1], config.bptt_window):
                t1 = min(t0 + config.bptt_window, inputs.shape[1])
                with np.errstate(over="ignore", invalid="ignore"):
                    logits, caches, h, c = _forward_batch(weights, inputs[:, t0:t1], h, c)
                    loss, dlogits = _loss_and_dlogits(logits, targets[:, t0:t1])
                if not math.isfinite(loss):
                    raise TrainingDivergedError(step, config.learning_rate)
                with np.errstate(over="ignore", invalid="ignore"):
                    grads = _backward_batch(weights, caches, dlogits)
                _clip_gradients(grads, config.clip_norm)
                for w_arr, g_arr in zip(_weight_arrays(weights), _weight_arrays(grads)):
                    w_arr -= config.learning_rate * g_arr
                step += 1
                n_tok = (t1 - t0) * inputs.shape[0]
                epoch_loss += loss * n_tok
                epoch_tokens += n_tok
        log.train_ce.append(epoch_loss / epoch_tokens)
        log.holdout_ce.append(_corpus_ce(weights, holdout_batches))
    return _to_params(weights), log


def corpus_cross_entropy(params: LstmParams, sentences: Sequence[Sequence[int]]) -> float:
    """Mean next-word cross-entropy (nats/token) including end-of-sentence."""
    weights = weights_from_params(params)
    sequences = [[BOS_ID, *sent, EOS_ID] for sent in sentences]
    return _corpus_ce(weights, _make_batches(sequences, 64))


def perplexity(params: LstmParams, sentences: Sequence[Sequence[int]]) -> float:
    return math.exp(corpus_cross_entropy(params, sentences))
