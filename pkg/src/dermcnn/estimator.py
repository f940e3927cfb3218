"""scikit-learn compatible wrappers around the engine.

The transformers apply the per-image preprocessing stages; the classifier
trains the from-scratch CNN with fit(X, y) / predict_proba(X) semantics, so
the whole pipeline composes with sklearn's Pipeline, clone(), and scoring.
Images are (N, H, W, C) float arrays with values in [0, 1], or lists of
(H, W, C) arrays when sizes differ.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin

from . import preprocess as pp
from .errors import DataError
from .nn import default_spec, forward, init_adam, init_params, parse_spec
from .train import TrainConfig, _train_loop, evaluate_batched


def _iter_images(X):
    if isinstance(X, np.ndarray) and X.ndim == 4:
        return [X[i] for i in range(X.shape[0])], True
    if isinstance(X, (list, tuple)):
        return list(X), False
    raise DataError(f"expected (N, H, W, C) array or list of images, got {type(X).__name__}")


def _pack_images(images, was_array):
    if was_array:
        return np.stack(images)
    return images


class _ImageTransformer(BaseEstimator, TransformerMixin):
    """Stateless per-image transformer; subclasses define _transform_one."""

    def fit(self, X, y=None):
        return self

    def transform(self, X):
        images, was_array = _iter_images(X)
        return _pack_images([self._transform_one(np.asarray(img)) for img in images], was_array)


class ReflectionArtifactRemover(_ImageTransformer):
    """Detect specular reflections on grayscale intensity and inpaint them."""

    def __init__(self, t_r1=0.87, t_r2=0.096, mean_window=12):
        self.t_r1 = t_r1
        self.t_r2 = t_r2
        self.mean_window = mean_window

    def _transform_one(self, img):
        cfg = pp.PreprocessConfig(t_r1=self.t_r1, t_r2=self.t_r2, mean_window=self.mean_window)
        mask = pp.detect_reflection(pp.to_grayscale(img), cfg)
        return pp.inpaint(img, mask) if mask.any() else img.copy()


class Denoiser(_ImageTransformer):
    def __init__(self, method="median", kernel=3, sigma=1.0):
        self.method = method
        self.kernel = kernel
        self.sigma = sigma

    def _transform_one(self, img):
        if self.method == "median":
            return pp.denoise(img, pp.Median(self.kernel))
        if self.method == "gaussian":
            return pp.denoise(img, pp.Gaussian(self.kernel, self.sigma))
        if self.method == "none":
            return img.copy()
        raise DataError(f"unknown denoise method {self.method!r}")


class ImageNormalizer(_ImageTransformer):
    def __init__(self, method="minmax"):
        self.method = method

    def _transform_one(self, img):
        return pp.normalize(img, self.method)


class ImageResizer(_ImageTransformer):
    def __init__(self, height=64, width=64):
        self.height = height
        self.width = width

    def _transform_one(self, img):
        return pp.resize(img, self.height, self.width)


class CnnLesionClassifier(BaseEstimator, ClassifierMixin):
    """Binary CNN classifier trained with Adam on binary cross-entropy.

    Parameters mirror the training defaults: three conv blocks into a dense
    head with a sigmoid output.  ``spec_text`` overrides the architecture
    with the line-oriented model-spec format.
    """

    def __init__(self, spec_text=None, input_size=(64, 64), epochs=30, batch_size=128,
                 learning_rate=0.001, beta1=0.9, beta2=0.999, eps=1e-8,
                 val_fraction=0.0, val_every_iters=36, seed=0):
        self.spec_text = spec_text
        self.input_size = input_size
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.val_fraction = val_fraction
        self.val_every_iters = val_every_iters
        self.seed = seed

    def _to_batch(self, X):
        images, _ = _iter_images(X)
        h, w = self.input_size
        batch = []
        for img in images:
            img = np.asarray(img, dtype=np.float32)
            if img.ndim == 2:
                img = img[:, :, None]
            if img.shape[:2] != (h, w):
                img = pp.resize(img, h, w)
            batch.append(img.transpose(2, 0, 1))
        return np.ascontiguousarray(np.stack(batch))

    def fit(self, X, y):
        x = self._to_batch(X)
        y = np.asarray(y)
        self.classes_ = np.unique(y)
        if not np.isin(self.classes_, (0, 1)).all():
            raise DataError(f"labels must be 0/1, got classes {self.classes_}")
        yb = y.astype(np.int64)
        if self.spec_text is not None:
            spec = parse_spec(self.spec_text)
        else:
            spec = default_spec(input_hw=self.input_size, in_channels=int(x.shape[1]))
        cfg = TrainConfig(batch_size=self.batch_size, epochs=self.epochs,
                          val_every_iters=self.val_every_iters, seed=self.seed,
                          lr=self.learning_rate, beta1=self.beta1, beta2=self.beta2,
                          eps=self.eps, balance=False)

        x_val = y_val = None
        if self.val_fraction > 0.0:
            n_val = max(1, int(round(self.val_fraction * len(yb))))
            x, x_val = x[:-n_val], x[-n_val:]
            yb, y_val = yb[:-n_val], yb[-n_val:]

        params = init_params(spec, self.seed)
        state = init_adam(params, lr=self.learning_rate, beta1=self.beta1,
                          beta2=self.beta2, eps=self.eps)
        params, state, log, best, _ = _train_loop(spec, x, yb, x_val, y_val, cfg, params, state)
        self.spec_ = spec
        self.params_ = params
        self.adam_state_ = state
        self.train_log_ = log
        return self

    def predict_proba(self, X):
        x = self._to_batch(X)
        scores = np.empty(len(x), dtype=np.float64)
        for lo in range(0, len(x), self.batch_size):
            probs, _ = forward(self.spec_, self.params_, x[lo:lo + self.batch_size], mode="infer")
            scores[lo:lo + len(probs)] = probs
        return np.column_stack([1.0 - scores, scores])

    def predict(self, X):
        return (self.predict_proba(X)[:, 1] >= 0.5).astype(np.int64)

    def score(self, X, y):
        x = self._to_batch(X)
        _, accuracy, _ = evaluate_batched(self.spec_, self.params_, x, np.asarray(y, dtype=np.int64),
                                          self.batch_size)
        return accuracy
