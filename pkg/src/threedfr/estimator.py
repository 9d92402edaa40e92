"""scikit-learn compatible front end for training and applying the network."""

from __future__ import annotations

from typing import Sequence

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from . import network
from .datasets import SampleWindow, VideoSequence, WindowSet
from .errors import ShapeError
from .metrics import Confusion, accumulate, fscore
from .trainer import SGDConfig, train


def check_windows(X) -> Sequence[SampleWindow]:
    """Accept windows or whole sequences; validate the tensor layout of the first window.

    Sequences are expanded to all their evaluable windows.
    """
    if isinstance(X, VideoSequence):
        X = [X]
    if isinstance(X, (list, tuple)) and X and all(isinstance(s, VideoSequence) for s in X):
        X = WindowSet(X)
    if isinstance(X, SampleWindow):
        X = [X]
    if len(X) == 0:
        raise ValueError("no sample windows given")
    w = X[0]
    if not isinstance(w, SampleWindow):
        raise TypeError(f"expected SampleWindow items, got {type(w).__name__}")
    n, c, t, h, wd = w.history.shape
    if t != network.HISTORY_LENGTH:
        raise ShapeError(f"history depth {t}, expected {network.HISTORY_LENGTH}")
    if w.current.shape != (n, c, 1, h, wd) or w.target.shape != (n, 1, 1, h, wd):
        raise ShapeError("current frame / target shapes do not match the history")
    if h % 8 or wd % 8:
        raise ShapeError(f"window size {h}x{wd} is not padded to a multiple of 8")
    return X


class ChangeDetector(ClassifierMixin, BaseEstimator):
    """Per-pixel change detector trained with per-sample SGD.

    ``fit`` takes sample windows (or video sequences); ``predict_proba``
    returns one foreground-probability map per window, cropped to the
    original frame size.
    """

    def __init__(self, epochs=60, seed=0, lr_initial=0.0006, lr_decrement=0.0002,
                 decrement_period=20, lr_floor=0.0001, threshold=0.5):
        self.epochs = epochs
        self.seed = seed
        self.lr_initial = lr_initial
        self.lr_decrement = lr_decrement
        self.decrement_period = decrement_period
        self.lr_floor = lr_floor
        self.threshold = threshold

    def _sgd_config(self) -> SGDConfig:
        return SGDConfig(self.lr_initial, self.lr_decrement, self.decrement_period, self.lr_floor)

    def fit(self, X, y=None):
        X = check_windows(X)
        self.params_, run = train(X, self._sgd_config(), epochs=self.epochs, seed=self.seed)
        self.loss_history_ = run.loss_history
        self.n_params_ = network.param_count(self.params_)
        self.classes_ = np.array([0, 1])
        return self

    def predict_proba(self, X) -> list[np.ndarray]:
        check_is_fitted(self, "params_")
        return [
            w.crop(network.predict(w.history, w.current, self.params_)[0, 0, 0])
            for w in check_windows(X)
        ]

    def predict(self, X) -> list[np.ndarray]:
        return [p >= self.threshold for p in self.predict_proba(X)]

    def confusion(self, X) -> Confusion:
        check_is_fitted(self, "params_")
        conf = Confusion()
        for w in check_windows(X):
            prob = network.predict(w.history, w.current, self.params_)
            accumulate(conf, prob, w.target, w.ignore_mask, self.threshold)
        return conf

    def score(self, X, y=None, sample_weight=None) -> float:
        """F-score over every evaluated pixel of ``X`` (0 when undefined)."""
        f = fscore(self.confusion(X))
        return 0.0 if f is None else f
