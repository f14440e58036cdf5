"""Combined objective, SGD, and the two-stage training loop."""

import numpy as np
import pytest

from rankprune import datasets, model, rank, sparsity as sp, trainer
from rankprune.model import Batch
from rankprune.rank import RankLossConfig
from rankprune.sparsity import GrowSchedule, ScheduleError, SparsitySchedule
from rankprune.trainer import OptimizerState, TrainConfig


def small_config(final_sparsity=0.9, prune=200, interval=50, total=300, lam=0.1, **kw):
    defaults = dict(learning_rate=0.03, momentum=0.9, weight_decay=0.0, batch_size=16, seed=0)
    defaults.update(kw)
    return TrainConfig(
        schedule=SparsitySchedule(final_sparsity, prune, interval, total),
        grow=GrowSchedule(0.3),
        rank_cfg=RankLossConfig(lam=lam),
        **defaults,
    )


def small_dataset(seed=0):
    spec = datasets.SyntheticDatasetSpec(
        num_classes=4, features=12, samples_per_class=30, cluster_spread=0.8, seed=seed
    )
    return datasets.make_blobs(spec)


def small_net(seed=0):
    return model.build_network(12, [("dense", 16)], 4, seed=seed)


class TestCombinedGradient:
    def test_lambda_zero_equals_task_gradient(self):
        net = small_net()
        data = small_dataset()
        batch = Batch(data.train_x[:8], data.train_y[:8])
        grads, _ = trainer.combined_gradient(net, batch, RankLossConfig(lam=0.0))
        _, cache = model.forward(net, batch)
        task = model.backward(net, cache, batch.labels)
        for (dw, db), (tw, tb) in zip(grads, task):
            np.testing.assert_array_equal(dw, tw)
            np.testing.assert_array_equal(db, tb)

    def test_constant_task_loss_isolates_rank_gradient(self):
        # zero out the head so logits are constant: task gradient vanishes on
        # the hidden layer, leaving lambda * rank gradient only
        net = small_net()
        net.layers[-1].params.weight[:] = 0.0
        net.touch()
        data = small_dataset()
        batch = Batch(data.train_x[:8], data.train_y[:8])
        lam = 0.25
        grads, _ = trainer.combined_gradient(net, batch, RankLossConfig(lam=lam))
        term = rank.layer_rank_term(
            model.reshape_to_matrix(net.layers[0]), RankLossConfig(lam=lam)
        )
        np.testing.assert_allclose(grads[0][0], lam * term.gradient, atol=1e-12)

    def test_finite_differences_combined(self):
        lam = 0.1
        cfg = RankLossConfig(lam=lam, target_error=0.2)
        arch = (6, [("dense", 5)], 3)
        net = model.build_network(*arch, seed=1)
        rng = np.random.default_rng(2)
        for l in net.layers:
            l.bias = rng.normal(size=l.bias.shape) * 0.1
        x = rng.normal(size=(4, 6))
        labels = rng.integers(0, 3, 4)
        batch = Batch(x, labels)
        grads, _ = trainer.combined_gradient(net, batch, cfg)

        # freeze per-layer k at the base point, as the trainer does for one step
        ks = [
            rank.select_k(
                np.linalg.svd(
                    rank.normalize(model.reshape_to_matrix(l)), compute_uv=False
                ),
                cfg.target_error,
            )
            for l in net.layers
        ]
        effs = [l.params.effective() for l in net.layers]

        def objective(layer_idx, pos, delta):
            twin = model.build_network(*arch, seed=1)
            for tl, e, orig in zip(twin.layers, effs, net.layers):
                tl.params.weight = e.copy()
                tl.params.mask = np.ones_like(e)
                tl.bias = orig.bias.copy()
            twin.layers[layer_idx].params.weight[pos] += delta
            logits, _ = model.forward(twin, batch)
            total = model.task_loss(logits, labels)
            for tl, k in zip(twin.layers, ks):
                total += lam * rank.rank_loss(model.reshape_to_matrix(tl), k)
            return total

        eps = 1e-6
        rng2 = np.random.default_rng(3)
        for li in range(len(net.layers)):
            dw = grads[li][0]
            for fp in rng2.choice(dw.size, size=10, replace=False):
                pos = np.unravel_index(fp, dw.shape)
                fd = (objective(li, pos, eps) - objective(li, pos, -eps)) / (2 * eps)
                assert fd == pytest.approx(dw[pos], rel=1e-4, abs=1e-8)

    def test_degenerate_layer_contributes_task_only(self):
        net = small_net()
        net.layers[0].params.weight[:] = 0.0  # degenerate weight: skip rank term
        net.touch()
        data = small_dataset()
        batch = Batch(data.train_x[:8], data.train_y[:8])
        grads, rank_sum = trainer.combined_gradient(net, batch, RankLossConfig(lam=1.0))
        _, cache = model.forward(net, batch)
        task = model.backward(net, cache, batch.labels)
        np.testing.assert_array_equal(grads[0][0], task[0][0])


class TestSgdStep:
    def test_zero_gradient_fixed_point(self):
        net = small_net()
        before = [l.params.weight.copy() for l in net.layers]
        opt = OptimizerState.zeros_like(net)
        grads = [(np.zeros_like(l.params.weight), np.zeros_like(l.bias)) for l in net.layers]
        trainer.sgd_step(net, grads, opt, lr=0.1, momentum=0.9, weight_decay=0.0)
        for l, b in zip(net.layers, before):
            np.testing.assert_array_equal(l.params.weight, b)

    def test_single_step_formula(self):
        net = small_net()
        mask = net.layers[0].params.mask
        w0 = net.layers[0].params.weight.copy()
        opt = OptimizerState.zeros_like(net)
        rng = np.random.default_rng(4)
        grads = [
            (rng.normal(size=l.params.weight.shape), rng.normal(size=l.bias.shape))
            for l in net.layers
        ]
        lr, wd = 0.05, 0.01
        trainer.sgd_step(net, grads, opt, lr=lr, momentum=0.0, weight_decay=wd)
        expected = w0 - lr * (grads[0][0] + wd * w0) * mask
        np.testing.assert_allclose(net.layers[0].params.weight, expected, atol=1e-14)

    def test_momentum_recurrence_two_steps(self):
        net = small_net()
        w0 = net.layers[0].params.weight.copy()
        opt = OptimizerState.zeros_like(net)
        rng = np.random.default_rng(5)
        g1 = [(rng.normal(size=l.params.weight.shape), np.zeros_like(l.bias)) for l in net.layers]
        g2 = [(rng.normal(size=l.params.weight.shape), np.zeros_like(l.bias)) for l in net.layers]
        lr, mu = 0.1, 0.9
        trainer.sgd_step(net, g1, opt, lr=lr, momentum=mu, weight_decay=0.0)
        trainer.sgd_step(net, g2, opt, lr=lr, momentum=mu, weight_decay=0.0)
        # hand-unrolled: v1 = g1; w1 = w0 - lr v1; v2 = mu v1 + g2; w2 = w1 - lr v2
        v1 = g1[0][0]
        w1 = w0 - lr * v1
        v2 = mu * v1 + g2[0][0]
        w2 = w1 - lr * v2
        np.testing.assert_allclose(net.layers[0].params.weight, w2, atol=1e-14)

    def test_masked_positions_stay_zero(self):
        net = small_net()
        mask = (np.random.default_rng(6).random(net.layers[0].params.weight.shape) < 0.5).astype(float)
        mask.ravel()[0] = 1.0
        net.layers[0].params.set_mask(mask)
        opt = OptimizerState.zeros_like(net)
        grads = [(np.ones_like(l.params.weight), np.ones_like(l.bias)) for l in net.layers]
        trainer.sgd_step(net, grads, opt, lr=0.1, momentum=0.9, weight_decay=0.01)
        assert np.all(net.layers[0].params.weight[mask == 0.0] == 0.0)


class TestAverageDeltaRank:
    def test_rank_one_layers(self):
        net = small_net()
        for l in net.layers:
            out, inp = l.params.weight.shape
            l.params.weight = np.outer(np.linspace(1, 2, out), np.linspace(1, 2, inp))
            l.params.mask = np.ones_like(l.params.weight)
        net.touch()
        assert trainer.average_delta_rank(net, 0.1) == pytest.approx(1.0)

    def test_all_zero_weights(self):
        net = small_net()
        for l in net.layers:
            l.params.weight[:] = 0.0
        net.touch()
        assert trainer.average_delta_rank(net, 0.1) == 0.0

    def test_matches_direct_recomputation(self):
        net = small_net(seed=7)
        expected = np.mean(
            [rank.delta_rank(model.reshape_to_matrix(l), 0.2) for l in net.layers]
        )
        assert trainer.average_delta_rank(net, 0.2) == pytest.approx(expected)


class TestTrain:
    def test_dense_schedule_keeps_masks_full(self):
        cfg = small_config(final_sparsity=0.0, prune=100, interval=50, total=150)
        res = trainer.train(small_net(), small_dataset(), cfg)
        assert res.net.sparsity() == 0.0
        for l in res.net.layers:
            assert np.all(l.params.mask == 1.0)

    def test_sparsity_trajectory_and_final_budget(self):
        cfg = small_config(final_sparsity=0.9, prune=200, interval=50, total=250)
        res = trainer.train(small_net(), small_dataset(), cfg)
        sps = [m.sparsity for m in res.metrics]
        assert all(b >= a - 1e-12 for a, b in zip(sps, sps[1:]))
        # final sparsity within one weight per layer of the target
        total = res.net.total_weights()
        slack = len(res.net.layers) / total
        assert res.net.sparsity() == pytest.approx(0.9, abs=slack + 1e-9)
        # sparsity at each update step matches the schedule
        for m in res.metrics:
            if m.step % 50 == 0 and m.step <= 200:
                want = sp.target_sparsity(cfg.schedule, m.step)
                assert m.sparsity == pytest.approx(want, abs=slack + 1e-9)

    def test_stage2_masks_frozen(self):
        cfg = small_config(final_sparsity=0.8, prune=100, interval=50, total=200)
        net = small_net()
        data = small_dataset()
        partial = trainer.train(net, data, cfg, stop_after=100)
        masks_at_freeze = [l.params.mask.copy() for l in net.layers]
        trainer.train(net, data, cfg, start_step=100, optimizer=partial.optimizer)
        for l, m in zip(net.layers, masks_at_freeze):
            assert np.array_equal(l.params.mask, m)

    def test_determinism(self):
        cfg = small_config()
        r1 = trainer.train(small_net(seed=3), small_dataset(), cfg)
        r2 = trainer.train(small_net(seed=3), small_dataset(), cfg)
        assert len(r1.metrics) == len(r2.metrics)
        for a, b in zip(r1.metrics, r2.metrics):
            assert a.csv_row() == b.csv_row()
        for la, lb in zip(r1.net.layers, r2.net.layers):
            assert np.array_equal(la.params.weight, lb.params.weight)

    def test_momentum_zero_at_pruned_positions(self):
        cfg = small_config(final_sparsity=0.85, prune=100, interval=50, total=100)
        net = small_net()
        res = trainer.train(net, small_dataset(), cfg)
        for buf, l in zip(res.optimizer.weight_buffers, net.layers):
            assert np.all(buf[l.params.mask == 0.0] == 0.0)

    def test_lambda_zero_is_pure_magnitude_grow_baseline(self):
        # identical to a run whose rank gradients are never added
        cfg0 = small_config(lam=0.0)
        res0 = trainer.train(small_net(seed=4), small_dataset(), cfg0)
        assert res0.net.sparsity() == pytest.approx(0.9, abs=0.01)

    def test_empty_dataset_rejected(self):
        data = small_dataset()
        data.train_x = data.train_x[:0]
        with pytest.raises(ValueError):
            trainer.train(small_net(), data, small_config())

    def test_indivisible_schedule_rejected(self):
        with pytest.raises(ScheduleError):
            small_config(prune=130, interval=50, total=200)

    def test_conv_network_trains_with_rank_term(self):
        spec = datasets.SyntheticDatasetSpec(
            num_classes=3, features=16, samples_per_class=40, cluster_spread=0.8, seed=2
        )
        d = datasets.make_blobs(spec)
        d.train_x = d.train_x.reshape(-1, 1, 4, 4)
        d.eval_x = d.eval_x.reshape(-1, 1, 4, 4)
        net = model.build_network((1, 4, 4), [("conv2d", 4, 3, 3), ("dense", 12)], 3, seed=1)
        cfg = TrainConfig(
            schedule=SparsitySchedule(0.8, 100, 50, 150),
            grow=GrowSchedule(0.3),
            rank_cfg=RankLossConfig(lam=0.5),
            learning_rate=0.03,
            momentum=0.9,
            batch_size=16,
            seed=3,
        )
        res = trainer.train(net, d, cfg)
        slack = len(net.layers) / net.total_weights()
        assert res.net.sparsity() == pytest.approx(0.8, abs=slack + 1e-9)
        assert res.metrics[-1].eval_acc > 0.5

    def test_cosine_lr_changes_trajectory(self):
        cfg_const = small_config()
        cfg_cos = small_config(cosine_lr=True)
        r1 = trainer.train(small_net(seed=8), small_dataset(), cfg_const)
        r2 = trainer.train(small_net(seed=8), small_dataset(), cfg_cos)
        assert not np.array_equal(r1.net.layers[0].params.weight, r2.net.layers[0].params.weight)

    def test_resume_matches_uninterrupted(self):
        cfg = small_config(final_sparsity=0.7, prune=200, interval=50, total=250)
        data = small_dataset()
        full = trainer.train(small_net(seed=5), data, cfg)

        net = small_net(seed=5)
        part1 = trainer.train(net, data, cfg, stop_after=120)
        part2 = trainer.train(net, data, cfg, start_step=120, optimizer=part1.optimizer)
        resumed = part1.metrics + part2.metrics
        assert len(resumed) == len(full.metrics)
        for a, b in zip(full.metrics, resumed):
            assert a.csv_row() == b.csv_row()
        for la, lb in zip(full.net.layers, net.layers):
            assert np.array_equal(la.params.weight, lb.params.weight)
            assert np.array_equal(la.params.mask, lb.params.mask)
