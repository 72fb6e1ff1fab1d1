"""scikit-learn style wrappers around the calibrators.

Every estimator takes logits ``X`` (N x C) and node labels ``y`` with ``-1``
for unlabeled nodes; ``fit`` uses the labeled rows only. ``transform``
returns calibrated logits, ``predict_proba`` their softmax. Calibration
never changes the argmax, so ``predict`` equals ``X.argmax(1)``.
"""

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_graph, check_logits, check_node_labels
from .graph import NodeDataset, gcn_normalize
from .models import softmax, ts_fit, vs_fit
from .trainer import TrainConfig, train_advcali

__all__ = ["Uncalibrated", "TemperatureScaling", "VectorScaling", "AdvCaliCalibrator"]


class _CalibratorMixin(TransformerMixin):
    def predict_proba(self, X, **kw):
        return softmax(self.transform(X, **kw))

    def predict(self, X, **kw):
        return np.argmax(self.predict_proba(X, **kw), axis=1)


class Uncalibrated(_CalibratorMixin, BaseEstimator):
    def fit(self, X, y=None, **fit_params):
        self.n_classes_ = check_logits(X).shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "n_classes_")
        return check_logits(X, self.n_classes_).copy()


class TemperatureScaling(_CalibratorMixin, BaseEstimator):
    """One global temperature fitted by golden-section search on NLL."""

    def __init__(self, lower=0.05, upper=10.0, tol=1e-4):
        self.lower = lower
        self.upper = upper
        self.tol = tol

    def fit(self, X, y, **fit_params):
        X = check_logits(X)
        y = check_node_labels(y, X.shape[0])
        self.temperature_ = ts_fit(X, y, y >= 0, self.lower, self.upper, self.tol)
        self.n_classes_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "temperature_")
        return check_logits(X, self.n_classes_) / self.temperature_


class VectorScaling(_CalibratorMixin, BaseEstimator):
    def __init__(self, steps=2000, lr=0.01):
        self.steps = steps
        self.lr = lr

    def fit(self, X, y, **fit_params):
        X = check_logits(X)
        y = check_node_labels(y, X.shape[0])
        p = vs_fit(X, y, y >= 0, self.steps, self.lr)
        self.coef_, self.intercept_ = p.w, p.b
        self.n_classes_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "coef_")
        return check_logits(X, self.n_classes_) * self.coef_ + self.intercept_


class AdvCaliCalibrator(_CalibratorMixin, BaseEstimator):
    """Node-wise temperatures trained against an adversarial group detector.

    ``fit`` and the prediction methods take the graph as a keyword; when it
    is omitted at prediction time the training graph is reused.
    """

    def __init__(self, lam=1.0, n_groups=8, epochs=300, lr_calibrator=0.01, lr_detector=0.01,
                 weight_decay=5e-4, dist="squared", variant="full", hidden_calibrator=16,
                 hidden_detector=16, t_min=1e-3, random_state=0):
        self.lam = lam
        self.n_groups = n_groups
        self.epochs = epochs
        self.lr_calibrator = lr_calibrator
        self.lr_detector = lr_detector
        self.weight_decay = weight_decay
        self.dist = dist
        self.variant = variant
        self.hidden_calibrator = hidden_calibrator
        self.hidden_detector = hidden_detector
        self.t_min = t_min
        self.random_state = random_state

    def train_config(self):
        p = self.get_params()
        p["seed"] = p.pop("random_state")
        return TrainConfig(**p)

    def fit(self, X, y, graph=None):
        X = check_logits(X)
        n = X.shape[0]
        if graph is None:
            raise TypeError("AdvCaliCalibrator.fit needs graph=")
        g = check_graph(graph, n)
        y = check_node_labels(y, n)
        ds = NodeDataset(X, y, y >= 0, np.zeros(n, dtype=bool), X.shape[1])
        self.calibrator_, self.detector_, self.trace_ = train_advcali(g, ds, self.train_config())
        self.graph_ = g
        self.n_classes_ = X.shape[1]
        return self

    def _graph(self, X, graph):
        return check_graph(self.graph_ if graph is None else graph, X.shape[0])

    def temperatures(self, X, graph=None):
        check_is_fitted(self, "calibrator_")
        X = check_logits(X, self.n_classes_)
        return self.calibrator_.temperatures(gcn_normalize(self._graph(X, graph)), X)

    def transform(self, X, graph=None):
        X = check_logits(X, getattr(self, "n_classes_", None))
        return X / self.temperatures(X, graph)[:, None]

    def group_weights(self, X, graph=None):
        g = self._graph(check_logits(X), graph)
        return self.detector_.group_weights(g, self.transform(X, g))
