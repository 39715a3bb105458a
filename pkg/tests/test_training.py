import numpy as np
import pytest

import migraph.training as training
from migraph import tensor as T
from migraph.data import FeatureTensor
from migraph.layers import state_dict
from migraph.model import ModelDims
from migraph.tensor import Tensor
from migraph.training import (
    Adam,
    AdamState,
    LossWeights,
    TrainConfig,
    _batches,
    adam_step,
    top_k_edge_deltas,
    total_loss,
    train,
)


def toy_features(n=24, nodes=4, seed=0):
    rng = np.random.default_rng(seed)
    labels = np.arange(n) % 4
    x = rng.uniform(size=(n, nodes, 18)).astype(np.float32)
    return FeatureTensor(x, labels, np.arange(n))


def tiny_config(**kw):
    base = dict(max_epochs=3, patience=2, batch_st=8, seed=5)
    base.update(kw)
    return TrainConfig(**base)


class TestAdam:
    def test_two_steps_by_hand(self):
        p = Tensor(np.array([1.0, -2.0]), requires_grad=True)
        state = AdamState.for_params([p])
        g1, g2 = np.array([0.5, -1.0]), np.array([0.1, 0.3])
        adam_step([p], [g1], state, lr=0.1)
        adam_step([p], [g2], state, lr=0.1)

        x = np.array([1.0, -2.0])
        m = v = np.zeros(2)
        for t, g in enumerate([g1, g2], 1):
            m = 0.9 * m + 0.1 * g
            v = 0.999 * v + 0.001 * g * g
            x = x - 0.1 * (m / (1 - 0.9**t)) / (np.sqrt(v / (1 - 0.999**t)) + 1e-8)
        np.testing.assert_allclose(p.data, x, rtol=1e-12)

    def test_first_step_is_sign_times_lr(self):
        p = Tensor(np.array([0.0, 0.0, 0.0]), requires_grad=True)
        adam_step([p], [np.array([3.0, -0.01, 2e3])], AdamState.for_params([p]), lr=0.01)
        np.testing.assert_allclose(p.data, [-0.01, 0.01, -0.01], rtol=1e-5)

    def test_missing_gradient_skipped(self):
        p = Tensor(np.ones(2), requires_grad=True)
        adam_step([p], [None], AdamState.for_params([p]), lr=1.0)
        np.testing.assert_array_equal(p.data, np.ones(2))

    def test_groups_use_own_rates(self):
        a = Tensor(np.zeros(1), requires_grad=True)
        b = Tensor(np.zeros(1), requires_grad=True)
        opt = Adam([([a], 1e-3), ([b], 2e-4)])
        a.grad = np.ones(1)
        b.grad = np.ones(1)
        opt.step()
        np.testing.assert_allclose([a.data[0], b.data[0]], [-1e-3, -2e-4], rtol=1e-5)


class TestTotalLoss:
    def setup_method(self):
        self.x = Tensor(np.zeros((2, 3, 4)))
        self.x_hat = Tensor(np.full((2, 3, 4), 0.5))
        self.logits = Tensor(np.zeros((2, 4)))
        self.labels = np.array([0, 3])

    def test_scripted_value(self):
        # mse 0.25, each cross-entropy ln 4
        loss = total_loss(self.x, self.x_hat, self.logits, self.logits, self.labels, LossWeights(0.3, 1.0))
        assert float(loss.data) == pytest.approx(0.25 + 1.3 * np.log(4))

    def test_weights_scale_terms(self):
        loss = total_loss(self.x, self.x_hat, self.logits, self.logits, self.labels, LossWeights(0.0, 2.0))
        assert float(loss.data) == pytest.approx(0.25 + 2 * np.log(4))

    def test_autoencoder_free(self):
        loss = total_loss(None, None, None, self.logits, self.labels, LossWeights(0.3, 1.0))
        assert float(loss.data) == pytest.approx(np.log(4))

    def test_negative_weights_rejected(self):
        with pytest.raises(ValueError):
            LossWeights(-0.1, 1.0)


class TestBatches:
    def test_partition(self):
        out = _batches(37, 8, np.random.default_rng(0))
        assert sorted(np.concatenate(out).tolist()) == list(range(37))
        assert [len(b) for b in out] == [8, 8, 8, 8, 5]

    def test_singleton_tail_merged(self):
        out = _batches(17, 8, np.random.default_rng(0))
        assert [len(b) for b in out] == [8, 9]
        assert sorted(np.concatenate(out).tolist()) == list(range(17))


class TestTrainLoop:
    def test_early_stopping_restores_best(self, monkeypatch):
        losses = iter([1.0, 0.8, 0.9, 0.85, 0.95, 0.1])
        monkeypatch.setattr(training, "validation_loss", lambda params, ft, w: (next(losses), 0.5))
        snapshots = {}

        def remember(epoch, params, row):
            snapshots[epoch] = {k: v.copy() for k, v in state_dict(params).items()}

        ft = toy_features()
        result = train(ft, ft, tiny_config(max_epochs=20, patience=3), ModelDims(4), on_epoch=remember)
        assert [r.epoch for r in result.log] == [1, 2, 3, 4, 5]
        assert result.best_epoch == 2
        assert result.best_val_loss == 0.8
        final = state_dict(result.params)
        for k, v in snapshots[2].items():
            np.testing.assert_array_equal(final[k], v)

    def test_deterministic(self):
        ft = toy_features()
        r1 = train(ft, ft, tiny_config(), ModelDims(4))
        r2 = train(ft, ft, tiny_config(), ModelDims(4))
        assert r1.log_tsv() == r2.log_tsv()
        s1, s2 = state_dict(r1.params), state_dict(r2.params)
        for k in s1:
            np.testing.assert_array_equal(s1[k], s2[k])

    def test_adjacency_rows_stochastic(self):
        ft = toy_features()
        r = train(ft, ft, tiny_config(max_epochs=2), ModelDims(4))
        for a in (r.a_before, r.a_after):
            np.testing.assert_allclose(a.sum(axis=1), 1.0, atol=1e-6)
            np.testing.assert_array_equal(np.diag(a), 0.0)

    def test_batch_larger_than_data(self):
        ft = toy_features(n=6)
        with pytest.raises(ValueError):
            train(ft, ft, tiny_config(batch_st=8), ModelDims(4))

    @pytest.mark.parametrize("kw", [dict(lr_ae=-1.0), dict(lr_st=0.0), dict(batch_st=1), dict(dropout=1.0), dict(patience=0),
                                    dict(stgnn_input="raw")])
    def test_bad_config(self, kw):
        with pytest.raises(ValueError):
            TrainConfig(**kw)


class TestTopEdges:
    def test_hand_example(self):
        before = np.zeros((4, 4))
        after = np.zeros((4, 4))
        after[0, 1] = 0.4  # symmetrized 0.2
        after[2, 3] = after[3, 2] = -0.3
        after[1, 2] = 0.6  # symmetrized 0.3, ties (2, 3) in magnitude
        edges = top_k_edge_deltas(before, after, 3)
        assert [(i, j) for i, j, _ in edges] == [(1, 2), (2, 3), (0, 1)]
        np.testing.assert_allclose([d for *_, d in edges], [0.3, -0.3, 0.2])

    def test_k_bounds(self):
        with pytest.raises(ValueError):
            top_k_edge_deltas(np.zeros((3, 3)), np.zeros((3, 3)), 4)
        assert len(top_k_edge_deltas(np.zeros((3, 3)), np.eye(3), 3)) == 3

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            top_k_edge_deltas(np.zeros((3, 3)), np.zeros((4, 4)))


def test_no_grad_blocks_recording():
    with T.Tape() as tape:
        with T.no_grad():
            T.add(Tensor(np.ones(2), requires_grad=True), 1.0)
    assert len(tape.nodes) == 0
