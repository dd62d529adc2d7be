import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from sslr.data import generate_synthetic
from sslr.estimators import (
    PoseAugmenter,
    PoseNormalizer,
    PseudoLabelClassifier,
    SignTransformerClassifier,
    as_sign_samples,
)
from sslr.preprocess import NormalizationConfig, normalize_sample

def tiny_kw(**overrides):
    kw = dict(hidden_dim=12, num_heads=2, num_encoder_blocks=1,
              num_decoder_blocks=1, max_sequence_len=16, epochs=10,
              learning_rate=0.01, patience=0, augment=False, normalize=False)
    kw.update(overrides)
    return kw


@pytest.fixture(scope="module")
def dataset():
    return generate_synthetic(3, 8, 5, noise_sigma=0.02, seed=1)


class TestInputValidation:
    def test_accepts_arrays_and_samples(self, dataset):
        arrays = [s.frames for s in dataset.samples[:2]]
        flat = [s.frames.reshape(-1, 108) for s in dataset.samples[2:4]]
        coerced = as_sign_samples(arrays + flat + dataset.samples[4:5])
        assert len(coerced) == 5
        np.testing.assert_array_equal(coerced[0].frames, arrays[0])
        np.testing.assert_array_equal(coerced[2].frames.reshape(-1, 108), flat[0])

    def test_rejects_garbage_shapes(self):
        with pytest.raises(ValueError, match=r"X\[0\]"):
            as_sign_samples([np.zeros((3, 7))])


class TestTransformers:
    def test_normalizer_matches_functional_path(self, dataset):
        sample = dataset.samples[0]
        via_estimator = PoseNormalizer().fit_transform([sample])[0]
        direct = normalize_sample(sample, NormalizationConfig())
        np.testing.assert_array_equal(via_estimator.frames, direct.frames)

    def test_augmenter_deterministic_under_random_state(self, dataset):
        first = PoseAugmenter(random_state=5).transform(dataset.samples[:3])
        second = PoseAugmenter(random_state=5).transform(dataset.samples[:3])
        for a, b in zip(first, second):
            np.testing.assert_array_equal(a.frames, b.frames)

    def test_get_params_round_trip(self):
        aug = PoseAugmenter(noise_sigma=0.01, random_state=3)
        cloned = clone(aug)
        assert cloned.get_params() == aug.get_params()


class TestSupervisedEstimator:
    def test_fit_predict_on_separable_data(self, dataset):
        X = dataset.samples
        y = np.array([s.label for s in X])
        clf = SignTransformerClassifier(**tiny_kw(epochs=40), random_state=0)
        clf.fit(X, y)
        assert (clf.predict(X) == y).mean() == 1.0

    def test_labels_can_come_from_samples(self, dataset):
        clf = SignTransformerClassifier(**tiny_kw(epochs=2))
        clf.fit(dataset.samples)
        assert set(clf.classes_) == {0, 1, 2}

    def test_predict_proba_rows_are_distributions(self, dataset):
        clf = SignTransformerClassifier(**tiny_kw(epochs=2))
        clf.fit(dataset.samples)
        probs = clf.predict_proba(dataset.samples[:5])
        assert probs.shape == (5, 3)
        np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-9)

    def test_non_contiguous_labels_map_back(self, dataset):
        X = dataset.samples
        y = np.array([10 + 5 * s.label for s in X])  # classes 10, 15, 20
        clf = SignTransformerClassifier(**tiny_kw(epochs=40))
        clf.fit(X, y)
        assert set(np.unique(clf.predict(X))) <= {10, 15, 20}
        assert (clf.predict(X) == y).mean() == 1.0

    def test_unfitted_predict_raises(self, dataset):
        with pytest.raises(NotFittedError):
            SignTransformerClassifier(**tiny_kw()).predict(dataset.samples[:1])

    def test_clone_and_score(self, dataset):
        X, y = dataset.samples, np.array([s.label for s in dataset.samples])
        clf = SignTransformerClassifier(**tiny_kw(epochs=5), random_state=1)
        cloned = clone(clf)
        cloned.fit(X, y)
        assert 0.0 <= cloned.score(X, y) <= 1.0

    def test_validation_fraction_enables_early_stop_history(self, dataset):
        clf = SignTransformerClassifier(**tiny_kw(epochs=6), validation_fraction=0.25)
        clf.fit(dataset.samples)
        assert len(clf.train_report_.val_accuracy) >= 1


class TestPseudoLabelEstimator:
    def test_minus_one_marks_unlabeled(self, dataset):
        X = dataset.samples
        y = np.array([s.label for s in X])
        masked = y.copy()
        rng = np.random.default_rng(0)
        hide = rng.permutation(len(y))[: len(y) // 2]
        masked[hide] = -1
        clf = PseudoLabelClassifier(**tiny_kw(epochs=15), inner_epochs=3,
                                    random_state=0)
        clf.fit(X, masked)
        assert clf.ssl_report_.cycles, "loop should have run at least one cycle"
        assert clf.ssl_report_.cycles[-1].unlabeled_size == 0
        accuracy = (clf.predict(X) == y).mean()
        assert accuracy > 1.0 / 3.0

    def test_all_unlabeled_rejected(self, dataset):
        y = np.full(len(dataset.samples), -1)
        with pytest.raises(ValueError, match="labeled"):
            PseudoLabelClassifier(**tiny_kw()).fit(dataset.samples, y)

    def test_fully_labeled_degenerates(self, dataset):
        y = np.array([s.label for s in dataset.samples])
        clf = PseudoLabelClassifier(**tiny_kw(epochs=3), inner_epochs=2)
        clf.fit(dataset.samples, y)
        assert clf.ssl_report_.degenerate_fsl

    def test_get_params_includes_loop_settings(self):
        params = PseudoLabelClassifier(**tiny_kw()).get_params()
        assert params["inner_epochs"] == 60
        assert params["selection"] == "per_class"
