"""scikit-learn compatible wrappers around the transforms and classifier.

Image inputs are ``(n, height, width, channels)`` arrays, so these
estimators do their own shape validation instead of ``check_array``.

>>> from sklearn.pipeline import make_pipeline
>>> defended = make_pipeline(LinacTransformer(key=7, epochs=5, width=64),
...                          ConvClassifier(standardize=False, epochs=20))
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.multiclass import unique_labels
from sklearn.utils.validation import check_is_fitted

from .classifier import ClassifierSpec, TrainConfig, train_classifier
from .inr import FitConfig, InrArch
from .rng import REFERENCE_KEY
from .transforms import (ShuffleKeySpec, apply_normalization, block_pixel_shuffle,
                         block_pixel_unshuffle, check_images, fit_normalization,
                         invert_normalization, linac_reconstruction, linac_transform)


class ChannelStandardizer(TransformerMixin, BaseEstimator):
    """Per-channel ``(x - mean) / std`` with statistics from the training set."""

    def fit(self, X, y=None):
        X = check_images(X)
        self.stats_ = fit_normalization(X)
        self.n_channels_ = X.shape[-1]
        return self

    def transform(self, X):
        check_is_fitted(self, "stats_")
        return apply_normalization(check_images(X, self.n_channels_), self.stats_)

    def inverse_transform(self, X):
        check_is_fitted(self, "stats_")
        return invert_normalization(check_images(X, self.n_channels_), self.stats_)


class LinacTransformer(TransformerMixin, BaseEstimator):
    """Keyed activation-image transform.

    ``repr_layer == layers`` returns the colour reconstruction (in pixel
    scale) instead of hidden activations.
    """

    def __init__(self, key=REFERENCE_KEY, epochs=10, batch_size=32, learning_rate=1e-3, alpha=1e-4,
                 layers=5, width=256, freqs=5, repr_layer=2, grid="centers", standardize=True,
                 workers=None):
        self.key = key
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.alpha = alpha
        self.layers = layers
        self.width = width
        self.freqs = freqs
        self.repr_layer = repr_layer
        self.grid = grid
        self.standardize = standardize
        self.workers = workers

    def _configs(self):
        cfg = FitConfig(self.epochs, self.batch_size, self.learning_rate, self.alpha, self.key)
        arch = InrArch(self.layers, self.width, self.freqs, self.grid)
        if not 0 <= self.repr_layer <= arch.layers:
            raise ValueError(f"repr_layer must lie in [0, {arch.layers}]")
        return cfg, arch

    def fit(self, X, y=None):
        X = check_images(X, 3)
        self._configs()
        self.stats_ = fit_normalization(X) if self.standardize else None
        self.n_features_in_ = int(np.prod(X.shape[1:]))
        return self

    def transform(self, X):
        check_is_fitted(self, "n_features_in_")
        cfg, arch = self._configs()
        if self.repr_layer == arch.layers:
            return linac_reconstruction(X, self.key, cfg, arch, self.stats_, self.workers)
        return linac_transform(X, self.key, cfg, arch, self.repr_layer, self.stats_, self.workers)


class BlockPixelShuffle(TransformerMixin, BaseEstimator):
    """Keyed permutation of pixel positions shared by every ``block x block`` tile."""

    def __init__(self, key=0, block=4):
        self.key = key
        self.block = block

    def fit(self, X, y=None):
        X = check_images(X)
        if X.shape[1] % self.block or X.shape[2] % self.block:
            raise ValueError(f"block size {self.block} does not divide {X.shape[1:3]}")
        self.spec_ = ShuffleKeySpec(self.key, self.block)
        return self

    def transform(self, X):
        check_is_fitted(self, "spec_")
        return block_pixel_shuffle(check_images(X), self.spec_)

    def inverse_transform(self, X):
        check_is_fitted(self, "spec_")
        return block_pixel_unshuffle(check_images(X), self.spec_)


class ConvClassifier(ClassifierMixin, BaseEstimator):
    """The small convolutional classifier as an estimator.

    ``standardize=True`` folds per-channel standardisation of the training
    inputs into the network, so it consumes raw pixels.
    """

    def __init__(self, epochs=20, batch_size=64, learning_rate=0.04, weight_decay=5e-4,
                 momentum=0.9, ema_decay=0.995, cutmix=False, standardize=True,
                 widths=(32, 64, 64), key=0):
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.weight_decay = weight_decay
        self.momentum = momentum
        self.ema_decay = ema_decay
        self.cutmix = cutmix
        self.standardize = standardize
        self.widths = widths
        self.key = key

    def fit(self, X, y):
        X = check_images(X)
        y = np.asarray(y)
        if len(X) != len(y):
            raise ValueError("X and y have different lengths")
        self.classes_ = unique_labels(y)
        if len(self.classes_) < 2:
            raise ValueError("need at least two classes")
        yi = np.searchsorted(self.classes_, y)
        spec = ClassifierSpec(X.shape[-1], len(self.classes_), tuple(self.widths),
                              fit_normalization(X) if self.standardize else None)
        cfg = TrainConfig.desk(self.epochs, batch_size=self.batch_size,
                               learning_rate=self.learning_rate,
                               weight_decay=self.weight_decay, momentum=self.momentum,
                               ema_decay=self.ema_decay, cutmix=self.cutmix)
        self.classifier_ = train_classifier(X, yi, spec, cfg, key=self.key)
        self.n_features_in_ = int(np.prod(X.shape[1:]))
        return self

    def predict_proba(self, X):
        check_is_fitted(self, "classifier_")
        return self.classifier_.predict_proba(X)

    def predict(self, X):
        check_is_fitted(self, "classifier_")
        return self.classes_[self.predict_proba(X).argmax(axis=1)]
