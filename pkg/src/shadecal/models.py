"""Skin-with-foundation predictors and leave-one-out evaluation.

Inputs are 6-vectors (bare-skin Lab followed by foundation Lab), targets are
the skin-with-foundation Lab triple.
"""
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin, clone
from sklearn.metrics import mean_absolute_error, mean_squared_error, r2_score
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .dataset import rows_to_arrays
from .svr import LinearEpsilonSVR


class ShortDatasetError(ValueError):
    pass


class LinearShadeRegressor(RegressorMixin, BaseEstimator):
    """Multi-output least squares through the normal equations.

    ``theta_`` stacks the weights and the bias row (7 x 3 for Lab data).
    The normal equations are formed on standardized inputs with a ridge of
    ``rel_ridge * trace(ZᵀZ) / n_features`` that keeps rank-deficient
    designs solvable; the intercept is not penalized. Raw Lab columns are
    nearly collinear with the constant column (L* sits far from zero), so
    a ridge on them would move well-conditioned solutions visibly.
    """

    def __init__(self, rel_ridge=1e-12):
        self.rel_ridge = rel_ridge

    def fit(self, X, y):
        X, y = check_X_y(X, y, multi_output=True, y_numeric=True, dtype=np.float64)
        mean = X.mean(axis=0)
        scale = X.std(axis=0)
        scale[scale == 0] = 1.0
        z = (X - mean) / scale
        gram = z.T @ z
        lam = self.rel_ridge * max(np.trace(gram), 1.0) / z.shape[1]
        w = np.linalg.solve(gram + lam * np.eye(z.shape[1]), z.T @ (y - y.mean(axis=0)))
        w = w / scale[:, None] if w.ndim == 2 else w / scale
        self.theta_ = np.vstack([w.reshape(X.shape[1], -1), (y.mean(axis=0) - mean @ w).reshape(1, -1)])
        if y.ndim == 1:
            self.theta_ = self.theta_[:, 0]
        self.n_features_in_ = X.shape[1]
        return self

    @property
    def coef_(self):
        return self.theta_[:-1].T

    @property
    def intercept_(self):
        return self.theta_[-1]

    def predict(self, X):
        check_is_fitted(self, "theta_")
        X = check_array(X, dtype=np.float64)
        return np.column_stack([X, np.ones(len(X))]) @ self.theta_

    def to_dict(self):
        return {"theta": self.theta_.tolist(), "rel_ridge": self.rel_ridge}

    @classmethod
    def from_dict(cls, d):
        est = cls(rel_ridge=d.get("rel_ridge", 1e-12))
        est.theta_ = np.array(d["theta"], dtype=np.float64)
        est.n_features_in_ = est.theta_.shape[0] - 1
        return est


class MeanRegressor(RegressorMixin, BaseEstimator):
    """Predicts the training mean; the floor any useful model should beat."""

    def fit(self, X, y):
        X, y = check_X_y(X, y, multi_output=True, y_numeric=True, dtype=np.float64)
        self.mean_ = y.mean(axis=0)
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X):
        check_is_fitted(self, "mean_")
        X = check_array(X, dtype=np.float64)
        return np.tile(self.mean_, (len(X), 1)) if self.mean_.ndim else np.full(len(X), self.mean_)

    def to_dict(self):
        return {"mean": np.atleast_1d(self.mean_).tolist()}

    @classmethod
    def from_dict(cls, d):
        est = cls()
        est.mean_ = np.array(d["mean"], dtype=np.float64)
        est.n_features_in_ = 6
        return est


MODEL_KINDS = {
    "linear": LinearShadeRegressor,
    "svr": LinearEpsilonSVR,
    "mean": MeanRegressor,
}


def make_model(kind, C=1.0, epsilon=0.1):
    if kind == "svr":
        return LinearEpsilonSVR(C=C, epsilon=epsilon)
    if kind not in MODEL_KINDS:
        raise ValueError(f"unknown model kind {kind!r}; choose from {sorted(MODEL_KINDS)}")
    return MODEL_KINDS[kind]()


def model_to_dict(model):
    kind = next(k for k, cls in MODEL_KINDS.items() if type(model) is cls)
    return {"format": "shadecal-model/1", "kind": kind, "params": model.to_dict()}


def model_from_dict(d):
    if d.get("format") != "shadecal-model/1" or d.get("kind") not in MODEL_KINDS:
        raise ValueError("not a shadecal model file")
    return MODEL_KINDS[d["kind"]].from_dict(d["params"])


def fit_linear(rows, rel_ridge=1e-12):
    if not rows:
        raise ShortDatasetError("cannot fit a model on an empty dataset")
    x, y = rows_to_arrays(rows)
    return LinearShadeRegressor(rel_ridge).fit(x, y)


def fit_svr(rows, dim, C=1.0, eps=0.1):
    """Single-output SVR for Lab component ``dim`` (0, 1 or 2)."""
    x, y = rows_to_arrays(rows)
    return LinearEpsilonSVR(C=C, epsilon=eps).fit(x, y[:, dim])


@dataclass
class EvalReport:
    r2: float
    mse: float
    mae: float
    r2_per_dim: list
    predictions: np.ndarray
    targets: np.ndarray
    keys: list

    @property
    def residuals(self):
        return self.predictions - self.targets

    def to_dict(self):
        return {
            "r2": self.r2, "mse": self.mse, "mae": self.mae,
            "r2_per_dim": self.r2_per_dim,
            "n": len(self.targets),
            "folds": [
                {"subject_id": k[0], "shade": k[1],
                 "prediction": p.tolist(), "target": t.tolist(), "residual": (p - t).tolist()}
                for k, p, t in zip(self.keys, self.predictions, self.targets)
            ],
        }

    def table(self, title="LOOCV"):
        return "\n".join([
            f"{title:<24}{'R2':>10}{'MSE':>10}{'MAE':>10}",
            f"{'':<24}{self.r2:>10.4f}{self.mse:>10.4f}{self.mae:>10.4f}",
        ])


def regression_report(targets, predictions, keys=None):
    """Pooled metrics: R² per output dimension averaged uniformly, MSE and
    MAE over every scalar component."""
    targets = np.asarray(targets, dtype=np.float64)
    predictions = np.asarray(predictions, dtype=np.float64)
    per_dim = r2_score(targets, predictions, multioutput="raw_values")
    return EvalReport(
        r2=float(np.mean(per_dim)),
        mse=float(mean_squared_error(targets, predictions)),
        mae=float(mean_absolute_error(targets, predictions)),
        r2_per_dim=[float(v) for v in per_dim],
        predictions=predictions,
        targets=targets,
        keys=list(keys) if keys is not None else [("", "")] * len(targets),
    )


def loocv(rows, model):
    """Leave-one-out predictions for every row, pooled into one report.

    ``model`` is an unfitted estimator or a kind name (``"linear"``,
    ``"svr"``, ``"mean"``).
    """
    if isinstance(model, str):
        model = make_model(model)
    if len(rows) < 3:
        raise ShortDatasetError(f"LOOCV needs at least 3 rows, got {len(rows)}")
    x, y = rows_to_arrays(rows)
    preds = np.empty_like(y)
    keep = np.ones(len(rows), dtype=bool)
    for i in range(len(rows)):
        keep[i] = False
        est = clone(model).fit(x[keep], y[keep])
        preds[i] = est.predict(x[i:i + 1])[0]
        keep[i] = True
    return regression_report(y, preds, [(r.subject_id, r.shade) for r in rows])
