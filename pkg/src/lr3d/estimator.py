"""scikit-learn style wrappers around the IP-Head and the long-range teacher."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from lr3d import iphead
from lr3d.synthdata import training_arrays
from lr3d.teacher import pseudo_label


class IPHeadRegressor(RegressorMixin, BaseEstimator):
    """Depth regressor from 2D box descriptors conditioned on instance features.

    ``X`` has columns ``[w2d, h2d, feature...]``; ``y`` is metric depth.
    Projection augmentation needs ``camera`` and one ObjectState per row,
    passed to :meth:`fit` as ``objects``.

    Parameters
    ----------
    camera : CameraIntrinsics or None
        Calibration used to synthesise augmented pairs.
    num_freqs, input_scale : positional encoding of (w2d, h2d).
    hidden : int
        Hidden width of the per-instance MLP.
    hyper_hidden : int
        Hidden width of the weight generator.
    weight_mode : {"dynamic", "shared"}
        ``shared`` trains a single MLP for all instances (ablation baseline).
    aug_samples : int
        Augmented pairs per object per epoch; 0 disables augmentation.
    """

    def __init__(self, camera=None, num_freqs=8, input_scale=1000.0, hidden=16, hyper_hidden=64,
                 weight_mode="dynamic", aug_samples=8, aug_low=0.5, aug_high=3.0, lr=1e-2,
                 epochs=1000, batch_size=0, loss_beta=1.0, random_state=0):
        self.camera = camera
        self.num_freqs = num_freqs
        self.input_scale = input_scale
        self.hidden = hidden
        self.hyper_hidden = hyper_hidden
        self.weight_mode = weight_mode
        self.aug_samples = aug_samples
        self.aug_low = aug_low
        self.aug_high = aug_high
        self.lr = lr
        self.epochs = epochs
        self.batch_size = batch_size
        self.loss_beta = loss_beta
        self.random_state = random_state

    def _train_config(self) -> iphead.TrainConfig:
        return iphead.TrainConfig(lr=self.lr, epochs=self.epochs, batch_size=self.batch_size,
                                  aug_samples=self.aug_samples, aug_low=self.aug_low,
                                  aug_high=self.aug_high, loss_beta=self.loss_beta,
                                  seed=self.random_state)

    def fit(self, X, y, objects=None, eval_set=None):
        X, y = check_X_y(X, y, dtype=np.float64, y_numeric=True)
        if X.shape[1] < 2 + iphead.N_GEOM_FEATURES:
            raise ValueError(f"X needs w2d, h2d and at least {iphead.N_GEOM_FEATURES} feature columns")
        model = iphead.IPHeadModel(
            X.shape[1] - 2,
            iphead.PositionalEncodingConfig(self.num_freqs, self.input_scale),
            hidden=self.hidden,
            hyper_hidden=self.hyper_hidden,
            weight_mode=self.weight_mode,
            rng_seed=self.random_state,
        )
        heldout = None
        if eval_set is not None:
            Xv, yv = check_X_y(*eval_set, dtype=np.float64)
            heldout = (Xv[:, 2:], Xv[:, :2], yv)
        objects = None if self.aug_samples == 0 else objects
        self.model_, self.report_ = iphead.train(model, (X[:, 2:], X[:, :2], y), self.camera, objects,
                                                 self._train_config(), heldout=heldout)
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X):
        check_is_fitted(self, "model_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} columns, expected {self.n_features_in_}")
        return iphead.predict_depths(self.model_, X[:, 2:], X[:, :2])

    @classmethod
    def from_model(cls, model: iphead.IPHeadModel, **params) -> "IPHeadRegressor":
        """Wrap an already trained model (e.g. loaded from disk)."""
        est = cls(num_freqs=model.pe_config.num_freqs, input_scale=model.pe_config.input_scale,
                  hidden=model.target_shape.hidden, hyper_hidden=model.hyper_hidden,
                  weight_mode=model.weight_mode, **params)
        est.model_ = model
        est.n_features_in_ = model.feature_dim + 2
        return est


def records_to_xy(records):
    """Design matrix and targets from annotation records carrying 3D labels."""
    F, wh, depth, objects = training_arrays(records)
    if len(F) == 0:
        return np.empty((0, 2)), depth, objects
    return np.hstack([wh, F]), depth, objects


class LongRangeTeacher(TransformerMixin, BaseEstimator):
    """Fit an IP-Head on close annotations, then transform distant records into pseudo labels."""

    def __init__(self, camera=None, regressor=None):
        self.camera = camera
        self.regressor = regressor

    def fit(self, records, y=None):
        X, depth, objects = records_to_xy(records)
        reg = self.regressor if self.regressor is not None else IPHeadRegressor(camera=self.camera)
        self.regressor_ = reg.fit(X, depth, objects=objects)
        return self

    def transform(self, records):
        check_is_fitted(self, "regressor_")
        distant = [r for r in records if r.distant]
        return pseudo_label(self.regressor_.model_, self.camera, distant)
