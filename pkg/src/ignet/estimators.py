"""scikit-learn style wrappers around training and prediction."""

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, RegressorMixin
from sklearn.utils.multiclass import check_classification_targets
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .classification import OneVsAll, one_vs_all
from .classification import predict_proba as _binary_proba
from .datasets import Dataset, Normalizer
from .model import ModelConfig, initialize
from .persistence import ModelFile
from .regression import predict as _predict
from .trainer import TrainConfig, train


class _IGNBase(BaseEstimator):
    def __init__(self, hidden=(128, 128, 128), feature_dim=64, n_inducing=512, kernel="rbf",
                 gamma=1.0, train_gamma=True, init_sigma_eps=0.5, feature_scale=0.1,
                 init_z="data", epochs=500, batch_size=128, learning_rate=1e-3,
                 loss_scaling="per-batch", normalize=True, random_state=0):
        self.hidden = hidden
        self.feature_dim = feature_dim
        self.n_inducing = n_inducing
        self.kernel = kernel
        self.gamma = gamma
        self.train_gamma = train_gamma
        self.init_sigma_eps = init_sigma_eps
        self.feature_scale = feature_scale
        self.init_z = init_z
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.loss_scaling = loss_scaling
        self.normalize = normalize
        self.random_state = random_state

    def _configs(self, n_features):
        model = ModelConfig(
            input_dim=n_features, hidden=tuple(self.hidden), feature_dim=self.feature_dim,
            n_inducing=self.n_inducing, kernel=self.kernel, gamma=self.gamma,
            train_gamma=self.train_gamma, init_sigma_eps=self.init_sigma_eps,
            feature_scale=self.feature_scale, init_z=self.init_z,
        )
        seed = 0 if self.random_state is None else int(self.random_state)
        trainer = TrainConfig(epochs=self.epochs, batch_size=self.batch_size,
                              learning_rate=self.learning_rate, seed=seed,
                              loss_scaling=self.loss_scaling)
        return model, trainer

    def _fit_normalizer(self, X, y, task):
        ds = Dataset(X, y, task=task)
        if self.normalize:
            return Normalizer.fit(ds)
        d = X.shape[1]
        return Normalizer(np.zeros(d), np.ones(d), 0.0, 1.0, [], False)

    def _Xn(self, X):
        check_is_fitted(self, "normalizer_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, the model was fitted with {self.n_features_in_}")
        return self.normalizer_.transform_X(X)

    def _train(self, task, Xn, y):
        params = initialize(self.config_, Xn, self.train_config_.seed)
        return train(task, params, (Xn, y), self.train_config_)


class IGNRegressor(RegressorMixin, _IGNBase):
    """Inducing Gaussian process network for regression.

    Targets and inputs are standardized on the training set by default;
    predictions are returned in the original target units.
    """

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float64, y_numeric=True)
        self.n_features_in_ = X.shape[1]
        self.config_, self.train_config_ = self._configs(X.shape[1])
        self.normalizer_ = self._fit_normalizer(X, y, "regression")
        Xn, yn = self.normalizer_.transform_X(X), self.normalizer_.transform_y(y)
        self.params_, self.report_ = self._train("regression", Xn, yn)
        return self

    def predict(self, X, return_std=False, include_noise=False):
        """Predictive mean; with ``return_std`` also the (noise-free by default) std."""
        Xn = self._Xn(X)
        dist = _predict(self.params_, Xn, want="diag", include_noise=include_noise)
        mean = self.normalizer_.inverse_y(dist.mean)
        if not return_std:
            return mean
        return mean, np.sqrt(self.normalizer_.inverse_variance(dist.variance))

    def to_model_file(self):
        check_is_fitted(self, "params_")
        return ModelFile(self.config_, "regression", [self.params_], self.normalizer_,
                         self.report_.to_dict())


class IGNClassifier(ClassifierMixin, _IGNBase):
    """Probit IGN classifier; more than two classes use one-vs-all heads.

    ``n_jobs`` threads train the one-vs-all heads.
    """

    def __init__(self, hidden=(128, 128, 128), feature_dim=64, n_inducing=512, kernel="rbf",
                 gamma=1.0, train_gamma=True, init_sigma_eps=0.5, feature_scale=0.1,
                 init_z="data", epochs=500, batch_size=128, learning_rate=1e-3,
                 loss_scaling="per-batch", normalize=True, random_state=0, n_jobs=1):
        super().__init__(hidden, feature_dim, n_inducing, kernel, gamma, train_gamma,
                         init_sigma_eps, feature_scale, init_z, epochs, batch_size,
                         learning_rate, loss_scaling, normalize, random_state)
        self.n_jobs = n_jobs

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float64)
        check_classification_targets(y)
        self.classes_, codes = np.unique(y, return_inverse=True)
        if len(self.classes_) < 2:
            raise ValueError("need samples of at least two classes")
        self.n_features_in_ = X.shape[1]
        self.config_, self.train_config_ = self._configs(X.shape[1])
        self.normalizer_ = self._fit_normalizer(X, codes.astype(float), "classification")
        Xn = self.normalizer_.transform_X(X)
        if len(self.classes_) == 2:
            params, self.report_ = self._train("binary-classification", Xn, np.where(codes == 1, 1.0, -1.0))
            self.heads_ = [params]
        else:
            reports = {}

            def fit_head(c, y_pm):
                params, reports[c] = self._train("binary-classification", Xn, y_pm)
                return params

            self.heads_ = one_vs_all(fit_head, codes, len(self.classes_), jobs=self.n_jobs).heads
            self.report_ = reports[0]
            self.reports_ = [reports[c] for c in range(len(self.classes_))]
        return self

    def _scores(self, X):
        Xn = self._Xn(X)
        if len(self.heads_) == 1:
            return _binary_proba(self.heads_[0], Xn)
        return OneVsAll(self.heads_).predict_proba(Xn)

    def predict_proba(self, X):
        """Class probabilities; one-vs-all scores are renormalized to sum to one."""
        s = self._scores(X)
        if s.ndim == 1:
            return np.column_stack([1.0 - s, s])
        total = s.sum(axis=1, keepdims=True)
        return np.where(total > 0, s / np.where(total > 0, total, 1.0), 1.0 / s.shape[1])

    def predict(self, X):
        s = self._scores(X)
        idx = (s > 0.5).astype(int) if s.ndim == 1 else np.argmax(s, axis=1)
        return self.classes_[idx]

    def to_model_file(self):
        check_is_fitted(self, "heads_")
        task = "binary-classification" if len(self.heads_) == 1 else "multiclass"
        return ModelFile(self.config_, task, list(self.heads_), self.normalizer_,
                         self.report_.to_dict(), [c.item() if hasattr(c, "item") else c for c in self.classes_])
