import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from ivusnet.estimator import (IvusNetSegmenter, check_image_batch,
                               check_mask_batch)


@pytest.fixture(scope="module")
def phantom_xy():
    from ivusnet.data import load_frame, synth_phantoms
    import tempfile
    tmp = tempfile.mkdtemp()
    records = synth_phantoms(21, 10, 48, tmp)
    frames = [load_frame(r) for r in records]
    X = np.stack([f.image for f in frames])
    y = np.stack([f.masks[0] for f in frames])
    return X, y


class TestValidationHelpers:
    def test_accepts_channel_axis(self, rng):
        X = rng.random((2, 1, 16, 16), dtype=np.float32)
        assert check_image_batch(X).shape == (2, 16, 16)

    def test_rejects_bad_rank(self, rng):
        with pytest.raises(ValueError):
            check_image_batch(rng.random((16, 16)))

    def test_rejects_indivisible_size(self, rng):
        with pytest.raises(ValueError, match="divisible by 8"):
            check_image_batch(rng.random((1, 20, 20)))

    def test_rejects_out_of_range(self, rng):
        with pytest.raises(ValueError, match="\\[0, 1\\]"):
            check_image_batch(rng.random((1, 16, 16)) * 3.0)

    def test_mask_shape_mismatch(self, rng):
        X = check_image_batch(rng.random((2, 16, 16)))
        with pytest.raises(ValueError):
            check_mask_batch(np.zeros((2, 16, 24)), X)

    def test_mask_must_be_binary(self, rng):
        X = check_image_batch(rng.random((1, 16, 16)))
        with pytest.raises(ValueError, match="binary"):
            check_mask_batch(np.full((1, 16, 16), 0.5), X)


class TestEstimatorApi:
    def test_get_set_params_round_trip(self):
        est = IvusNetSegmenter(epochs=3, learning_rate=2e-4)
        params = est.get_params()
        assert params["epochs"] == 3
        est2 = IvusNetSegmenter().set_params(**params)
        assert est2.get_params() == params

    def test_clone(self):
        est = IvusNetSegmenter(preset=(2, 3, 4, 5), n_models=2)
        cloned = clone(est)
        assert cloned.get_params() == est.get_params()

    def test_predict_before_fit_raises(self, rng):
        with pytest.raises(NotFittedError):
            IvusNetSegmenter().predict(rng.random((1, 16, 16)))

    def test_unknown_preset(self, phantom_xy):
        X, y = phantom_xy
        with pytest.raises(ValueError, match="preset"):
            IvusNetSegmenter(preset="galactic", epochs=1).fit(X[:2], y[:2])


class TestEstimatorTraining:
    def test_fit_predict_score(self, phantom_xy):
        X, y = phantom_xy
        est = IvusNetSegmenter(preset=(4, 8, 16, 32), epochs=10,
                               learning_rate=3e-4, n_models=1,
                               random_state=0)
        est.fit(X[:8], y[:8])
        assert len(est.models_) == 1
        preds = est.predict(X[8:])
        assert preds.shape == y[8:].shape
        assert preds.dtype == bool
        proba = est.predict_proba(X[8:])
        assert np.all(proba > 0) and np.all(proba < 1)
        score = est.score(X[8:], y[8:])
        assert 0.0 <= score <= 1.0

    def test_raw_mode_skips_ellipse(self, phantom_xy):
        X, y = phantom_xy
        est = IvusNetSegmenter(preset=(2, 3, 4, 5), epochs=1,
                               fit_ellipse=False, random_state=1)
        est.fit(X[:4], y[:4])
        preds = est.predict(X[:2])
        np.testing.assert_array_equal(
            preds, est.predict_proba(X[:2]) >= est.threshold)

    def test_untrained_quality_never_crashes_predict(self, phantom_xy):
        # an epoch-1 model may emit anything; predict must stay total
        X, y = phantom_xy
        est = IvusNetSegmenter(preset=(2, 3, 4, 5), epochs=1, random_state=2)
        est.fit(X[:4], y[:4])
        out = est.predict(X[4:])
        assert out.shape == X[4:].shape
