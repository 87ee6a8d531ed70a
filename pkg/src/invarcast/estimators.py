"""Scikit-learn style facade over the multi-environment forecaster.

``InvariantForecaster`` wraps data preparation, normalization, and the
penalized training loop behind the familiar ``fit`` / ``predict`` /
``get_params`` surface so the model composes with scikit-learn tooling
(``clone``, grid search over ``set_params``, pipelines that pass mappings
through). Because the task is forecasting, ``fit`` takes a mapping from
environment name to one or more (d, T) series instead of a flat design
matrix, and ``predict`` consumes (n, d, t_in) windows in raw units.
"""

from __future__ import annotations

from collections.abc import Mapping

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from .training import (
    TrainConfig,
    _prepare_suite_windows,
    SuiteData,
    mse,
    predict_batch,
    train,
)

__all__ = ["InvariantForecaster"]


class InvariantForecaster(RegressorMixin, BaseEstimator):
    """Multi-environment sequence forecaster with an invariance penalty.

    Parameters mirror the training configuration and are stored verbatim,
    as the scikit-learn contract requires; validation happens in ``fit``.

    Parameters
    ----------
    architecture : "recurrent" or "transformer"
    mode : "irm" trains with the invariance penalty, "erm" pools the risks
    t_in, horizon, stride : window geometry, in time steps
    lambda_pre, lambda_main, warmup_epochs : penalty weight schedule
    normalize : z-score variables on the training environments
    seed : master seed; fitting twice with identical inputs is bitwise
        reproducible

    Attributes (after ``fit``)
    ----------
    params_ : trained model parameters
    model_config_ : architecture description actually used
    scaler_ : fitted per-variable normalizer
    history_ : per-epoch training records
    n_features_in_ : number of variables d seen during fit
    env_ids_ : sorted training environment names

    Examples
    --------
    >>> fc = InvariantForecaster(epochs=2, hidden_size=8, t_in=4)
    >>> fc = fc.fit({"a": series_a, "b": series_b})
    >>> fc.predict(windows).shape
    (n, d, horizon)
    """

    def __init__(self, architecture="recurrent", mode="irm", t_in=20, horizon=1,
                 stride=1, batch_size=48, epochs=16, steps_per_epoch=30,
                 learning_rate=2e-3, lambda_pre=1.0, lambda_main=1.5,
                 warmup_epochs=4, seed=0, hidden_size=64, recurrent_gated=True,
                 recurrent_activation="tanh", width=32, head_count=2,
                 layer_count=1, ffn_width=64, use_residual=True,
                 use_layer_norm=True, normalize=True, rescale_large_lambda=True,
                 adam_reset_at_switch=True, curve_eval_max=500,
                 report_eval_max=4000):
        self.architecture = architecture
        self.mode = mode
        self.t_in = t_in
        self.horizon = horizon
        self.stride = stride
        self.batch_size = batch_size
        self.epochs = epochs
        self.steps_per_epoch = steps_per_epoch
        self.learning_rate = learning_rate
        self.lambda_pre = lambda_pre
        self.lambda_main = lambda_main
        self.warmup_epochs = warmup_epochs
        self.seed = seed
        self.hidden_size = hidden_size
        self.recurrent_gated = recurrent_gated
        self.recurrent_activation = recurrent_activation
        self.width = width
        self.head_count = head_count
        self.layer_count = layer_count
        self.ffn_width = ffn_width
        self.use_residual = use_residual
        self.use_layer_norm = use_layer_norm
        self.normalize = normalize
        self.rescale_large_lambda = rescale_large_lambda
        self.adam_reset_at_switch = adam_reset_at_switch
        self.curve_eval_max = curve_eval_max
        self.report_eval_max = report_eval_max

    def _train_config(self) -> TrainConfig:
        return TrainConfig(**{name: getattr(self, name)
                              for name in TrainConfig.__dataclass_fields__})

    @staticmethod
    def _as_segments(env_id, value) -> list[np.ndarray]:
        segments = value if isinstance(value, (list, tuple)) else [value]
        out = []
        for seg in segments:
            arr = np.asarray(getattr(seg, "values", seg), dtype=np.float64)
            if arr.ndim != 2:
                raise ValueError(
                    f"environment {env_id!r}: expected (d, T) series, got shape {arr.shape}"
                )
            out.append(arr)
        if not out:
            raise ValueError(f"environment {env_id!r} has no series")
        return out

    def fit(self, X, y=None):
        """Fit on a mapping from environment name to (d, T) series.

        Each value may be a single array, a list of arrays (gap-split
        segments), or objects exposing ``.values``. ``y`` is ignored:
        forecasting targets come from the series themselves.
        """
        if not isinstance(X, Mapping) or not X:
            raise ValueError(
                "fit expects a non-empty mapping {env_id: (d, T) series or "
                f"list of series}}, got {type(X).__name__}"
            )
        series = {str(env): self._as_segments(env, value) for env, value in X.items()}
        dims = {seg.shape[0] for segs in series.values() for seg in segs}
        if len(dims) != 1:
            raise ValueError(f"environments disagree on the variable count: {sorted(dims)}")

        config = self._train_config()
        suite = SuiteData(train_series=series, test_series={})
        scaler, train_windows, _ = _prepare_suite_windows(config, suite)
        result = train(config, train_windows)

        self.params_ = result.params
        self.model_config_ = result.model_config
        self.scaler_ = scaler
        self.history_ = result.history
        self.n_features_in_ = dims.pop()
        self.env_ids_ = sorted(series)
        return self

    def _validate_windows(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 3:
            raise ValueError(f"predict expects (n, d, t_in) windows, got shape {X.shape}")
        if X.shape[1] != self.n_features_in_:
            raise ValueError(
                f"windows carry {X.shape[1]} variables, model was fit on "
                f"{self.n_features_in_}"
            )
        if X.shape[2] != self.t_in:
            raise ValueError(f"windows have length {X.shape[2]}, expected t_in={self.t_in}")
        return X

    def predict(self, X) -> np.ndarray:
        """Forecast the next ``horizon`` steps for (n, d, t_in) raw windows.

        Returns (n, d, horizon) predictions in the same raw units; the
        normalization applied during fit is inverted on the way out.
        """
        check_is_fitted(self)
        X = self._validate_windows(X)
        if self.normalize:
            X = self.scaler_.transform(X)
        preds = predict_batch(self.params_, self.model_config_, X.transpose(0, 2, 1))
        if self.normalize:
            preds = self.scaler_.inverse_transform(preds)
        return preds

    def score(self, X, y, sample_weight=None) -> float:
        """Negative raw-unit MSE of ``predict(X)`` against (n, d, horizon)
        targets, so that larger is better as scikit-learn expects."""
        check_is_fitted(self)
        y = np.asarray(y, dtype=np.float64)
        preds = self.predict(X)
        if y.shape != preds.shape:
            raise ValueError(f"targets have shape {y.shape}, expected {preds.shape}")
        return -mse(preds, y)
