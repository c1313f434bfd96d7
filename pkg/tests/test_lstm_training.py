"""Training gradients, determinism, and perplexity behavior."""

import math

import numpy as np
import pytest

from n400surprisal.lm.network import initial_state, lstm_step
from n400surprisal.lm.training import (
    TrainingConfig,
    TrainingDivergedError,
    loss_and_gradients,
    perplexity,
    train,
    weights_from_params,
    _forward_batch,
    _make_batches,
    _weight_arrays,
    _zero_state,
)
from conftest import random_params


def flatten(weights):
    return np.concatenate([a.ravel() for a in _weight_arrays(weights)])


def assign_flat(weights, vector):
    offset = 0
    for arr in _weight_arrays(weights):
        arr[...] = vector[offset: offset + arr.size].reshape(arr.shape)
        offset += arr.size


def central_difference_grads(weights, sentences, step=1e-4):
    theta = flatten(weights)
    grads = np.empty_like(theta)
    work = {k: ([a.copy() for a in v] if isinstance(v, list) else v.copy())
            for k, v in weights.items()}
    for j in range(theta.size):
        bumped = theta.copy()
        bumped[j] += step
        assign_flat(work, bumped)
        up, _ = loss_and_gradients(work, sentences)
        bumped[j] -= 2 * step
        assign_flat(work, bumped)
        down, _ = loss_and_gradients(work, sentences)
        grads[j] = (up - down) / (2 * step)
    return grads


class TestGradients:
    def test_analytic_matches_central_differences(self, rng):
        # 168-parameter model: vocab 5, embedding 3, one 4-unit layer
        params = random_params(rng, 5, 3, (4,), scale=0.4)
        assert params.n_parameters <= 200
        weights = weights_from_params(params)
        sentences = [[2, 4, 3], [0, 1], [4, 4, 0, 2]]
        _, analytic = loss_and_gradients(weights, sentences)
        numeric = central_difference_grads(weights, sentences)
        analytic_flat = flatten(analytic)
        err = np.abs(analytic_flat - numeric)
        tol = 1e-4 * np.maximum(np.abs(numeric), np.abs(analytic_flat)) + 1e-8
        assert np.all(err <= tol), f"max rel err {np.max(err / (np.abs(numeric) + 1e-12))}"

    def test_multilayer_gradients(self, rng):
        params = random_params(rng, 4, 2, (3, 2), scale=0.4)
        weights = weights_from_params(params)
        sentences = [[1, 3, 0, 2]]
        _, analytic = loss_and_gradients(weights, sentences)
        numeric = central_difference_grads(weights, sentences)
        analytic_flat = flatten(analytic)
        tol = 1e-4 * np.maximum(np.abs(numeric), np.abs(analytic_flat)) + 1e-8
        assert np.all(np.abs(analytic_flat - numeric) <= tol)


class TestTrainingForwardConsistency:
    def test_batched_forward_matches_stepwise(self, rng):
        params = random_params(rng, 6, 3, (4, 3))
        weights = weights_from_params(params)
        sentence = [1, 4, 2, 5, 0]
        h0, c0 = _zero_state(weights, 1)
        logits, _, _, _ = _forward_batch(weights, np.array([sentence]), h0, c0)
        state = initial_state(params)
        for t, token in enumerate(sentence):
            state, step_logits = lstm_step(params, state, token)
            np.testing.assert_allclose(logits[0, t], step_logits, atol=1e-12, rtol=0)


def repeated_pair_corpus(n_sentences=120):
    return [[3, 4] for _ in range(n_sentences)]


class TestTrain:
    def test_deterministic_source_perplexity_approaches_one(self):
        config = TrainingConfig(epochs=50, learning_rate=1.0, batch_size=16,
                                bptt_window=8, seed=3, clip_norm=5.0)
        params, log = train(repeated_pair_corpus(), vocab_size=5, embedding_size=8,
                            hidden_sizes=(8,), config=config)
        assert math.exp(log.holdout_ce[-1]) < 1.05

    def test_uniform_source_perplexity_bounded_by_entropy(self):
        rng = np.random.default_rng(9)
        k = 5
        # ids 3..7 uniform; long sentences keep the end-of-sentence share small
        sentences = [[int(rng.integers(3, 3 + k)) for _ in range(50)] for _ in range(60)]
        config = TrainingConfig(epochs=5, learning_rate=0.5, batch_size=16,
                                bptt_window=16, seed=1, clip_norm=5.0)
        params, log = train(sentences, vocab_size=3 + k, embedding_size=8,
                            hidden_sizes=(8,), config=config)
        held_ce = log.holdout_ce[-1]
        # floor: 50 unpredictable tokens at ln k plus one predictable EOS
        floor = 50 * math.log(k) / 51
        assert held_ce >= floor - 0.02
        assert held_ce <= math.log(k) + 0.3

    def test_holdout_ce_decreases_from_initialization(self):
        config = TrainingConfig(epochs=8, learning_rate=0.5, batch_size=8,
                                bptt_window=8, seed=0)
        params, log = train(repeated_pair_corpus(40), vocab_size=5, embedding_size=4,
                            hidden_sizes=(4,), config=config)
        assert log.holdout_ce[-1] < log.holdout_ce[0]

    def test_same_seed_identical_parameters(self):
        config = TrainingConfig(epochs=3, learning_rate=0.4, batch_size=8,
                                bptt_window=4, seed=42)
        corpus = repeated_pair_corpus(30)
        params_a, _ = train(corpus, 5, 4, (4,), config)
        params_b, _ = train(corpus, 5, 4, (4,), config)
        for a, b in zip(params_a.arrays(), params_b.arrays()):
            np.testing.assert_array_equal(a, b)

    def test_different_seed_differs(self):
        corpus = repeated_pair_corpus(30)
        pa, _ = train(corpus, 5, 4, (4,), TrainingConfig(epochs=2, seed=1))
        pb, _ = train(corpus, 5, 4, (4,), TrainingConfig(epochs=2, seed=2))
        assert any(not np.array_equal(a, b) for a, b in zip(pa.arrays(), pb.arrays()))

    def test_divergence_reports_step_and_rate(self):
        # updates this large overflow the output projection to infinity
        config = TrainingConfig(epochs=5, learning_rate=1e308, batch_size=8,
                                bptt_window=8, seed=0, clip_norm=1e307)
        with pytest.raises(TrainingDivergedError) as err:
            train(repeated_pair_corpus(40), 5, 8, (8,), config)
        assert err.value.learning_rate == 1e308
        assert err.value.step >= 0

    def test_token_id_out_of_vocab_rejected(self):
        with pytest.raises(ValueError, match="outside vocabulary"):
            train([[3, 9], [3, 4]], vocab_size=5, embedding_size=4, hidden_sizes=(4,),
                  config=TrainingConfig(epochs=1))

    def test_config_validation(self):
        with pytest.raises(ValueError):
            TrainingConfig(epochs=0)
        with pytest.raises(ValueError):
            TrainingConfig(holdout_fraction=1.5)

    def test_batches_group_by_length(self):
        seqs = [[1, 2, 3], [1, 2], [3, 4], [2, 2, 2]]
        batches = _make_batches(seqs, batch_size=4)
        shapes = sorted(b[0].shape for b in batches)
        assert shapes == [(2, 1), (2, 2)]

    def test_perplexity_of_uniform_params(self, rng):
        params = random_params(rng, 6, 2, (2,), scale=0.0)
        assert perplexity(params, [[3, 4, 5]]) == pytest.approx(6.0, rel=1e-12)
