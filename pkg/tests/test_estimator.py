import numpy as np
import pytest
from sklearn.base import clone
from sklearn.pipeline import Pipeline

from dermcnn import (
    CnnLesionClassifier,
    Denoiser,
    ImageNormalizer,
    ImageResizer,
    ReflectionArtifactRemover,
)


def blob_arrays(n=24, size=16, seed=0):
    gen = np.random.default_rng(seed)
    images, labels = [], []
    for i in range(n):
        img = gen.uniform(0.0, 0.1, size=(size, size, 3))
        if i % 2 == 0:
            cy, cx = gen.integers(5, size - 5, 2)
            yy, xx = np.mgrid[0:size, 0:size]
            img += 0.8 * np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / 18.0)[:, :, None]
        images.append(np.clip(img, 0.0, 1.0))
        labels.append(i % 2 == 0)
    return np.stack(images).astype(np.float32), np.asarray(labels, dtype=np.int64)


class TestTransformers:
    def test_resizer_array_and_list(self, rng64):
        x = rng64.random((3, 20, 24, 3))
        resizer = ImageResizer(height=8, width=8)
        out = resizer.fit_transform(x)
        assert out.shape == (3, 8, 8, 3)
        out_list = resizer.transform([x[0], rng64.random((10, 10, 3))])
        assert isinstance(out_list, list)
        assert all(o.shape == (8, 8, 3) for o in out_list)

    def test_normalizer(self, rng64):
        x = rng64.random((2, 6, 6, 3)) * 0.5 + 0.2
        out = ImageNormalizer("minmax").fit_transform(x)
        assert out.min() == pytest.approx(0.0)
        assert out.max() == pytest.approx(1.0)

    def test_denoiser_constant_preserved(self):
        x = np.full((2, 8, 8, 3), 0.4)
        for method in ("median", "gaussian", "none"):
            out = Denoiser(method=method, kernel=3).fit_transform(x)
            assert np.allclose(out, 0.4)

    def test_reflection_remover_fills_speck(self):
        img = np.full((16, 16, 3), 0.5)
        img[5, 5] = 0.99
        out = ReflectionArtifactRemover(mean_window=5).fit_transform(img[None])[0]
        assert out[5, 5, 0] == pytest.approx(0.5)

    def test_get_set_params_clone(self):
        resizer = ImageResizer(height=32, width=48)
        params = resizer.get_params()
        assert params == {"height": 32, "width": 48}
        cloned = clone(resizer)
        assert cloned.get_params() == params


class TestClassifier:
    def test_fit_predict_proba_shapes(self):
        x, y = blob_arrays()
        clf = CnnLesionClassifier(input_size=(16, 16), epochs=25, batch_size=24,
                                  learning_rate=0.01, seed=1)
        clf.fit(x, y)
        proba = clf.predict_proba(x)
        assert proba.shape == (len(y), 2)
        assert np.allclose(proba.sum(axis=1), 1.0)
        assert set(np.unique(clf.predict(x))) <= {0, 1}
        assert np.array_equal(clf.classes_, [0, 1])

    def test_learns_separable_task(self):
        x, y = blob_arrays(n=32)
        clf = CnnLesionClassifier(input_size=(16, 16), epochs=80, batch_size=32,
                                  learning_rate=0.01, seed=2)
        clf.fit(x, y)
        assert clf.score(x, y) >= 0.95

    def test_seeded_fit_is_deterministic(self):
        x, y = blob_arrays(n=16)
        a = CnnLesionClassifier(input_size=(16, 16), epochs=5, seed=7).fit(x, y)
        b = CnnLesionClassifier(input_size=(16, 16), epochs=5, seed=7).fit(x, y)
        for pa, pb in zip(a.params_, b.params_):
            for key in pa:
                assert np.array_equal(pa[key], pb[key])

    def test_clone_preserves_params(self):
        clf = CnnLesionClassifier(epochs=3, seed=5, learning_rate=0.01)
        cloned = clone(clf)
        assert cloned.get_params()["epochs"] == 3
        assert cloned.get_params()["learning_rate"] == 0.01

    def test_resizes_mismatched_inputs(self):
        x, y = blob_arrays(n=8, size=20)
        clf = CnnLesionClassifier(input_size=(16, 16), epochs=2, seed=0)
        clf.fit(x, y)
        assert clf.predict_proba(x).shape == (8, 2)


class TestPipelineComposition:
    def test_full_sklearn_pipeline(self):
        x, y = blob_arrays(n=24, size=20)
        pipeline = Pipeline([
            ("deflare", ReflectionArtifactRemover()),
            ("denoise", Denoiser(method="median", kernel=3)),
            ("normalize", ImageNormalizer("minmax")),
            ("resize", ImageResizer(height=16, width=16)),
            ("clf", CnnLesionClassifier(input_size=(16, 16), epochs=30, batch_size=24,
                                        learning_rate=0.01, seed=3)),
        ])
        pipeline.fit(x, y)
        assert pipeline.score(x, y) >= 0.9
        proba = pipeline.predict_proba(x[:4])
        assert proba.shape == (4, 2)
