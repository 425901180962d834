"""scikit-learn compatible point-cloud classifier."""

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.preprocessing import LabelEncoder
from sklearn.utils.multiclass import check_classification_targets
from sklearn.utils.validation import check_is_fitted

from ._validation import check_features
from .network import BlockSpec, HeadSpec, NetworkSpec, fit_params, forward
from .rng import derive_seed


def default_spec(mode="accelerated"):
    return NetworkSpec(
        blocks=[BlockSpec(n=2, K=10, P=5, widths=[16, 32])],
        head=HeadSpec(hidden=[32], classes=2),
        mode=mode,
    )


class GCNClassifier(ClassifierMixin, BaseEstimator):
    """Edge-convolution classifier over whole point clouds.

    Parameters
    ----------
    spec : NetworkSpec or dict, optional
        Network layout. The head's class count is replaced by the number of
        classes seen in ``fit``. Defaults to :func:`default_spec`.
    mode : str, optional
        Overrides ``spec.mode`` when given.
    epochs, step_size, momentum, batch_size :
        Mini-batch gradient descent settings.
    freeze_sampling : bool
        Reuse one neighbor-sampling seed for every step instead of redrawing.
    random_state : int
        Seed for initialization, batch order and neighbor sampling.

    ``X`` has shape (n_clouds, n_points, d).
    """

    def __init__(self, spec=None, mode=None, epochs=10, step_size=0.01, momentum=0.9,
                 batch_size=16, freeze_sampling=False, random_state=0):
        self.spec = spec
        self.mode = mode
        self.epochs = epochs
        self.step_size = step_size
        self.momentum = momentum
        self.batch_size = batch_size
        self.freeze_sampling = freeze_sampling
        self.random_state = random_state

    def _resolve_spec(self, n_classes, in_dim):
        spec = self.spec if self.spec is not None else default_spec()
        data = spec.to_dict() if isinstance(spec, NetworkSpec) else dict(spec)
        head = dict(data.get("head") or {})
        head["classes"] = n_classes
        data.update(head=head, in_dim=in_dim)
        if self.mode is not None:
            data["mode"] = self.mode
        return NetworkSpec.from_dict(data)

    def fit(self, X, y):
        X = check_features(X, name="X", allow_batch=True)
        if X.ndim != 3:
            raise ValueError(f"X must have shape (n_clouds, n_points, d), got {X.shape}")
        check_classification_targets(y)
        self.label_encoder_ = LabelEncoder().fit(y)
        self.classes_ = self.label_encoder_.classes_
        y_enc = self.label_encoder_.transform(y)
        self.spec_ = self._resolve_spec(len(self.classes_), X.shape[2])
        self.seed_ = derive_seed(self.random_state)
        self.params_, self.loss_curve_ = fit_params(
            self.spec_, X, y_enc, epochs=self.epochs, step_size=self.step_size,
            momentum=self.momentum, batch_size=self.batch_size, seed=self.seed_,
            freeze_sampling=self.freeze_sampling,
        )
        self.n_features_in_ = X.shape[2]
        return self

    def decision_function(self, X):
        check_is_fitted(self, "params_")
        X = check_features(X, name="X", allow_batch=True)
        if X.ndim != 3 or X.shape[2] != self.n_features_in_:
            raise ValueError(f"X must have shape (n_clouds, n_points, {self.n_features_in_})")
        return np.stack([forward(self.spec_, self.params_, pc, seed=self.seed_) for pc in X])

    def predict_proba(self, X):
        z = self.decision_function(X)
        z = z - z.max(axis=1, keepdims=True)
        p = np.exp(z)
        return p / p.sum(axis=1, keepdims=True)

    def predict(self, X):
        check_is_fitted(self, "params_")
        return self.classes_[self.decision_function(X).argmax(axis=1)]
