import numpy as np
import pytest

from ivusnet.augment import AugmentConfig
from ivusnet.errors import ConfigError
from ivusnet.network import ArchConfig, build_network
from ivusnet.tensor import Tensor
from ivusnet.training import (Adam, TrainConfig, adam_step, ensemble_predict,
                              fit_network, predict_prob, split_validation,
                              train_model)

MICRO = ArchConfig(block_depths=(2, 3, 4, 5))


class TestAdam:
    def test_zero_gradient_leaves_params(self):
        p = Tensor(np.array([1.0, -2.0]), requires_grad=True)
        opt = Adam({"p": p}, lr=0.1)
        p.zero_grad()
        opt.step()
        np.testing.assert_array_equal(p.data, [1.0, -2.0])
        assert opt.step_count == 1

    def test_first_step_is_signed_lr(self):
        # bias correction makes the first update ~ -lr * sign(g) for |g| >> eps
        g = np.array([0.5, -3.0, 10.0])
        p = Tensor(np.zeros(3), requires_grad=True)
        opt = Adam({"p": p}, lr=0.01)
        p.grad = g.copy()
        opt.step()
        np.testing.assert_allclose(p.data, -0.01 * np.sign(g), rtol=1e-6)

    def test_deterministic(self):
        results = []
        for _ in range(2):
            p = Tensor(np.array([0.3, 0.7]), requires_grad=True)
            opt = Adam({"p": p}, lr=0.05)
            for step in range(5):
                p.grad = np.array([0.1 * (step + 1), -0.2])
                opt.step()
            results.append(p.data.copy())
        np.testing.assert_array_equal(results[0], results[1])

    def test_functional_adam_step_matches_class(self):
        g = np.array([0.4, -1.5])
        p1 = Tensor(np.array([1.0, 1.0]), requires_grad=True)
        opt = Adam({"p": p1}, lr=0.02)
        p1.grad = g.copy()
        opt.step()

        p2 = np.array([1.0, 1.0])
        m = np.zeros(2)
        v = np.zeros(2)
        adam_step(p2, g, m, v, step=1, lr=0.02)
        np.testing.assert_allclose(p1.data, p2, rtol=1e-12)

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValueError):
            adam_step(np.zeros(2), np.zeros(3), np.zeros(2), np.zeros(2),
                      step=1, lr=0.1)

    def test_constant_learning_rate(self):
        p = Tensor(np.array([1.0]), requires_grad=True)
        opt = Adam({"p": p}, lr=0.125)
        for _ in range(10):
            p.grad = np.array([1.0])
            opt.step()
            assert opt.lr == 0.125


class TestValidationSplit:
    def test_seeded_and_disjoint(self):
        val, train = split_validation(20, 5, seed=3)
        assert len(val) == 5 and len(train) == 15
        assert set(val).isdisjoint(train)
        assert set(val) | set(train) == set(range(20))
        val2, _ = split_validation(20, 5, seed=3)
        assert val == val2

    def test_too_few_frames(self):
        with pytest.raises(ConfigError):
            split_validation(5, 5, seed=0)

    def test_zero_validation(self):
        val, train = split_validation(4, 0, seed=0)
        assert val == [] and train == [0, 1, 2, 3]


class TestFitNetwork:
    def test_smoke_run_history_and_shapes(self, phantom_frames):
        tcfg = TrainConfig(epochs=2, validation_count=2, seed=0,
                           learning_rate=3e-4)
        net, history = fit_network(phantom_frames, MICRO, tcfg,
                                   AugmentConfig(seed=0))
        assert len(history.losses) == 2
        assert len(history.val_jm) == 2
        assert all(jm is not None for jm in history.val_jm)
        prob = predict_prob(net, phantom_frames[0].image)
        assert prob.shape == phantom_frames[0].image.shape

    def test_no_aug_trains_on_originals_only(self, phantom_frames):
        tcfg = TrainConfig(epochs=1, validation_count=0, seed=0)
        net, history = fit_network(phantom_frames, MICRO, tcfg, aug_cfg=None)
        assert len(history.losses) == 1

    def test_bit_identical_reruns(self, phantom_frames, tmp_path):
        from ivusnet.checkpoint import save_checkpoint
        tcfg = TrainConfig(epochs=1, validation_count=1, seed=11)
        blobs = []
        for run in range(2):
            net, _ = fit_network(phantom_frames, MICRO, tcfg,
                                 AugmentConfig(seed=11))
            path = tmp_path / f"r{run}.ckpt"
            save_checkpoint(net, path)
            blobs.append(path.read_bytes())
        assert blobs[0] == blobs[1]

    def test_media_target_uses_other_mask(self, phantom_frames):
        tcfg = TrainConfig(target="media", epochs=1, validation_count=1,
                           seed=0)
        net, history = fit_network(phantom_frames, MICRO, tcfg, None)
        assert history.val_jm[0] is not None

    def test_insufficient_records(self, phantom_frames):
        tcfg = TrainConfig(epochs=1, validation_count=len(phantom_frames),
                           seed=0)
        with pytest.raises(ConfigError):
            fit_network(phantom_frames, MICRO, tcfg, None)

    def test_train_model_loads_records(self, phantom_dir):
        from ivusnet.data import load_manifest
        records = load_manifest(phantom_dir / "manifest.tsv")
        tcfg = TrainConfig(epochs=1, validation_count=1, seed=0)
        net, history = train_model(records, MICRO, tcfg)
        assert len(history.losses) == 1

    def test_history_csv(self, tmp_path):
        from ivusnet.training import TrainHistory
        h = TrainHistory(losses=[0.5, 0.25], val_jm=[0.1, 0.9])
        p = tmp_path / "h.csv"
        h.to_csv(p)
        lines = p.read_text().splitlines()
        assert lines[0] == "epoch,loss,val_jm"
        assert lines[1].startswith("0,0.5")
        assert len(lines) == 3

    @pytest.mark.slow
    def test_training_improves_validation_jm(self, phantom_frames):
        from ivusnet.training import split_validation, validation_jaccard
        for seed in range(3):
            tcfg = TrainConfig(epochs=40, validation_count=2, seed=seed,
                               learning_rate=1e-3)
            val_idx, _ = split_validation(len(phantom_frames), 2, seed)
            val_frames = [phantom_frames[i] for i in val_idx]
            untrained = build_network(MICRO, seed=seed)
            before = validation_jaccard(untrained, val_frames, 0)
            _, history = fit_network(phantom_frames, MICRO, tcfg,
                                     AugmentConfig(seed=seed))
            assert history.val_jm[-1] > before


class TestEnsemble:
    def _models(self, k):
        return [build_network(MICRO, seed=s) for s in range(k)]

    def test_copies_of_one_model_equal_single(self, rng):
        net = build_network(MICRO, seed=0)
        img = rng.random((16, 16), dtype=np.float32)
        single = predict_prob(net, img)
        triple = ensemble_predict([net, net, net], img)
        np.testing.assert_allclose(triple, single, atol=1e-7)

    def test_two_models_average(self, rng):
        m1, m2 = self._models(2)
        img = rng.random((16, 16), dtype=np.float32)
        p1 = predict_prob(m1, img).astype(np.float64)
        p2 = predict_prob(m2, img).astype(np.float64)
        np.testing.assert_allclose(ensemble_predict([m1, m2], img),
                                   (p1 + p2) / 2, atol=1e-7)

    def test_output_in_unit_interval(self, rng):
        models = self._models(3)
        out = ensemble_predict(models, rng.random((16, 16), dtype=np.float32))
        assert np.all(out > 0) and np.all(out < 1)

    def test_permutation_invariant(self, rng):
        models = self._models(3)
        img = rng.random((16, 16), dtype=np.float32)
        a = ensemble_predict(models, img)
        b = ensemble_predict(models[::-1], img)
        np.testing.assert_allclose(a, b, atol=1e-12)

    def test_empty_list_rejected(self, rng):
        with pytest.raises(ValueError):
            ensemble_predict([], rng.random((16, 16), dtype=np.float32))
