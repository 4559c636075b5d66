"""Linear embedding adapter trained with soft-target cross-entropy and a
stochastic center loss.

Raw (frozen) embeddings ``x`` are mapped to ``z = A x / ||A x||`` and scored by
a linear head ``W z + b``. The training objective on a batch is::

    L = -sum_i sum_k y_ik log softmax(W z_i + b)_k
        + lambda * sum_i sum_k y_ik ||z_i - o_k||^2

with ``o_k`` the soft-label weighted mean of the batch features.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import log_softmax, softmax
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.exceptions import NotFittedError
from sklearn.utils.validation import check_array, check_is_fitted

from .core import DimensionError

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "crosstune-adapter"
CHECKPOINT_VERSION = 1


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    batch_size: int = 50
    learning_rate: float = 0.01
    val_fraction: float = 0.2
    lambda_stoc: float = 0.01
    seed: int = 0

    def __post_init__(self):
        problems = []
        if self.epochs < 0:
            problems.append("epochs must be >= 0")
        if self.batch_size < 1:
            problems.append("batch_size must be >= 1")
        if not self.learning_rate > 0:
            problems.append("learning_rate must be > 0")
        if not 0 < self.val_fraction < 1:
            problems.append("val_fraction must lie in (0, 1)")
        if not self.lambda_stoc >= 0:
            problems.append("lambda_stoc must be >= 0")
        if problems:
            raise ValueError("; ".join(problems))


@dataclass
class AdapterModel:
    A: np.ndarray
    W: np.ndarray
    b: np.ndarray

    @classmethod
    def initial(cls, d: int, m: int, seed: int = 0, out_dim: int | None = None, scale: float = 0.01):
        out_dim = d if out_dim is None else out_dim
        rng = np.random.default_rng(seed)
        return cls(
            A=np.eye(out_dim, d),
            W=rng.uniform(-scale, scale, size=(m, out_dim)),
            b=rng.uniform(-scale, scale, size=m),
        )

    @property
    def d(self) -> int:
        return self.A.shape[1]

    @property
    def out_dim(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.W.shape[0]

    def copy(self) -> AdapterModel:
        return AdapterModel(self.A.copy(), self.W.copy(), self.b.copy())

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(p)) for p in (self.A, self.W, self.b))


def transform(X, model: AdapterModel) -> np.ndarray:
    """Adapted, L2-normalized features ``A x / ||A x||``."""
    X = np.asarray(X, dtype=float)
    if X.shape[-1] != model.d:
        raise DimensionError(f"expected features of dimension {model.d}, got {X.shape[-1]}")
    V = X @ model.A.T
    norms = np.linalg.norm(V, axis=-1, keepdims=True)
    if np.any(norms == 0):
        raise ValueError("adapted feature is the zero vector; cannot normalize")
    return V / norms


def stochastic_centers(Z, Y) -> tuple[np.ndarray, np.ndarray]:
    """Soft-label weighted class means.

    Returns ``(centers, present)``; rows of ``centers`` for identities with no
    label mass are NaN and ``present`` is False there.
    """
    Z = np.asarray(Z, dtype=float)
    Y = np.asarray(Y, dtype=float)
    mass = Y.sum(axis=0)
    present = mass > 0
    centers = np.full((Y.shape[1], Z.shape[1]), np.nan)
    centers[present] = (Y[:, present].T @ Z) / mass[present, None]
    return centers, present


def _forward(X, model):
    V = X @ model.A.T
    norms = np.sqrt(np.einsum("ij,ij->i", V, V))[:, None]
    Z = V / norms
    logits = Z @ model.W.T + model.b
    return V, norms, Z, logits


def _stoc_part(Z, Y) -> float:
    centers, present = stochastic_centers(Z, Y)
    if not present.any():
        return 0.0
    Yp = Y[:, present]
    C = centers[present]
    sq = np.einsum("ij,ij->i", Z, Z)[:, None] + np.einsum("kd,kd->k", C, C)[None, :] - 2.0 * (Z @ C.T)
    return float(max((Yp * sq).sum(), 0.0))


def loss(X, Y, model: AdapterModel, lambda_stoc: float = 0.01) -> tuple[float, dict[str, float]]:
    """Total objective and its two parts, summed over samples."""
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    _, _, Z, logits = _forward(X, model)
    ce = float(-(Y * log_softmax(logits, axis=1)).sum())
    stoc = _stoc_part(Z, Y)
    return ce + lambda_stoc * stoc, {"softmax_ce": ce, "stoc_center": stoc}


def gradients(X, Y, model: AdapterModel, lambda_stoc: float = 0.01) -> dict[str, np.ndarray]:
    """Analytic gradients of :func:`loss` with respect to ``A``, ``W`` and ``b``.

    Centers depend on ``A`` through the features; because each center is the
    weighted mean of its members, the center terms of the chain rule cancel
    and only the direct ``z_i`` dependence remains.
    """
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    _, norms, Z, logits = _forward(X, model)
    s = Y.sum(axis=1, keepdims=True)
    logits = logits - logits.max(axis=1, keepdims=True)
    P = np.exp(logits)
    P /= P.sum(axis=1, keepdims=True)
    G = s * P - Y
    dW = G.T @ Z
    db = G.sum(axis=0)
    dZ = G @ model.W
    if lambda_stoc:
        mass = Y.sum(axis=0)
        present = mass > 0
        # sum_k y_ik o_k, with o_k the weighted mean of the batch
        pulled = Y[:, present] @ ((Y[:, present].T @ Z) / mass[present, None])
        dZ += 2.0 * lambda_stoc * (s * Z - pulled)
    dV = (dZ - np.einsum("ij,ij->i", dZ, Z)[:, None] * Z) / norms
    dA = dV.T @ X
    return {"A": dA, "W": dW, "b": db}


def stratified_split(labels, val_fraction: float, rng: np.random.Generator):
    """Shuffle and split indices so every class keeps its share in validation.

    Singleton classes go to training.
    """
    labels = np.asarray(labels)
    train, val = [], []
    for c in np.unique(labels):
        idx = np.flatnonzero(labels == c)
        idx = idx[rng.permutation(idx.size)]
        n_val = int(round(val_fraction * idx.size)) if idx.size > 1 else 0
        n_val = min(n_val, idx.size - 1)
        val.append(idx[:n_val])
        train.append(idx[n_val:])
    train = np.concatenate(train)
    val = np.concatenate(val)
    return train[rng.permutation(train.size)], np.sort(val)


@dataclass
class TrainHistory:
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    val_accuracy: list[float] = field(default_factory=list)
    best_epoch: int = 0

    def as_dict(self) -> dict:
        return asdict(self)


def _mean_val_loss(X, Y, model, lambda_stoc):
    if X.shape[0] == 0:
        return 0.0
    total, _ = loss(X, Y, model, lambda_stoc)
    return total / X.shape[0]


def _accuracy(X, Y, model):
    if X.shape[0] == 0:
        return float("nan")
    pred = np.argmax(transform(X, model) @ model.W.T + model.b, axis=1)
    return float(np.mean(pred == np.argmax(Y, axis=1)))


def train_adapter(X, Y, config: TrainConfig = TrainConfig(), init: AdapterModel | None = None):
    """Minibatch gradient descent; keep the epoch with the lowest validation loss.

    Rows of ``Y`` without any label mass are dropped. Epoch 0 of the history
    is the initialization.
    """
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    keep = Y.sum(axis=1) > 0
    X, Y = X[keep], Y[keep]
    hard = np.argmax(Y, axis=1)
    if np.unique(hard).size < 2:
        raise TrainingError("training needs at least two distinct label classes")

    rng = np.random.default_rng(config.seed)
    model = init.copy() if init is not None else AdapterModel.initial(X.shape[1], Y.shape[1], seed=config.seed)
    train_idx, val_idx = stratified_split(hard, config.val_fraction, rng)
    Xt, Yt = X[train_idx], Y[train_idx]
    Xv, Yv = X[val_idx], Y[val_idx]

    history = TrainHistory()
    best = model.copy()
    best_val = _mean_val_loss(Xv, Yv, model, config.lambda_stoc)
    history.train_loss.append(_mean_val_loss(Xt, Yt, model, config.lambda_stoc))
    history.val_loss.append(best_val)
    history.val_accuracy.append(_accuracy(Xv, Yv, model))

    n_train = Xt.shape[0]
    lr = config.learning_rate
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(n_train)
        epoch_loss = 0.0
        for start in range(0, n_train, config.batch_size):
            batch = order[start : start + config.batch_size]
            xb, yb = Xt[batch], Yt[batch]
            grads = gradients(xb, yb, model, config.lambda_stoc)
            step = lr / batch.size
            model.A -= step * grads["A"]
            model.W -= step * grads["W"]
            model.b -= step * grads["b"]
        if not model.is_finite():
            raise TrainingError(f"parameters diverged at epoch {epoch}; lower the learning rate")
        epoch_loss = _mean_val_loss(Xt, Yt, model, config.lambda_stoc)
        val = _mean_val_loss(Xv, Yv, model, config.lambda_stoc)
        history.train_loss.append(epoch_loss)
        history.val_loss.append(val)
        history.val_accuracy.append(_accuracy(Xv, Yv, model))
        if val < best_val:
            best_val = val
            best = model.copy()
            history.best_epoch = epoch
    log.debug("adapter trained: best epoch %d, val loss %.4f", history.best_epoch, best_val)
    return best, history


def _as_targets(y, n_classes=None):
    y = np.asarray(y)
    if y.ndim == 2:
        return y.astype(float)
    labels = y.astype(int)
    m = int(labels.max()) + 1 if n_classes is None else n_classes
    Y = np.zeros((labels.size, m))
    ok = labels >= 0
    Y[np.flatnonzero(ok), labels[ok]] = 1.0
    return Y


class LinearAdapter(TransformerMixin, BaseEstimator):
    """Trainable linear map plus classifier head over frozen embeddings.

    ``fit`` accepts soft targets (n x m, rows summing to 1 or all-zero) or
    hard labels (1-D, ``-1`` meaning unlabeled). ``transform`` returns the
    adapted unit-norm features; ``decision_function`` the head logits.
    """

    def __init__(
        self,
        epochs=100,
        batch_size=50,
        learning_rate=0.01,
        val_fraction=0.2,
        lambda_stoc=0.01,
        n_classes=None,
        random_state=0,
    ):
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.val_fraction = val_fraction
        self.lambda_stoc = lambda_stoc
        self.n_classes = n_classes
        self.random_state = random_state

    def _config(self) -> TrainConfig:
        return TrainConfig(
            epochs=self.epochs,
            batch_size=self.batch_size,
            learning_rate=self.learning_rate,
            val_fraction=self.val_fraction,
            lambda_stoc=self.lambda_stoc,
            seed=self.random_state,
        )

    def fit(self, X, y, init: AdapterModel | None = None):
        X = check_array(X)
        Y = _as_targets(y, self.n_classes)
        if Y.shape[0] != X.shape[0]:
            raise DimensionError("X and y have different numbers of rows")
        self.model_, self.history_ = train_adapter(X, Y, self._config(), init=init)
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "model_")
        return transform(check_array(X), self.model_)

    def decision_function(self, X):
        check_is_fitted(self, "model_")
        return self.transform(X) @ self.model_.W.T + self.model_.b

    def predict_proba(self, X):
        return softmax(self.decision_function(X), axis=1)

    def predict(self, X):
        return np.argmax(self.decision_function(X), axis=1)


def save_checkpoint(path, model: AdapterModel, hyper: dict | None = None) -> None:
    payload = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "d": model.d,
        "out_dim": model.out_dim,
        "m": model.m,
        "A": model.A.tolist(),
        "W": model.W.tolist(),
        "b": model.b.tolist(),
        "hyper": hyper or {},
    }
    Path(path).write_text(json.dumps(payload, indent=1, sort_keys=True) + "\n")


def load_checkpoint(path) -> tuple[AdapterModel, dict]:
    payload = json.loads(Path(path).read_text())
    if payload.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path}: not an adapter checkpoint")
    if payload.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {payload.get('version')}")
    model = AdapterModel(
        A=np.array(payload["A"], dtype=float).reshape(payload["out_dim"], payload["d"]),
        W=np.array(payload["W"], dtype=float).reshape(payload["m"], payload["out_dim"]),
        b=np.array(payload["b"], dtype=float).reshape(payload["m"]),
    )
    return model, payload.get("hyper", {})


__all__ = [
    "AdapterModel",
    "LinearAdapter",
    "NotFittedError",
    "TrainConfig",
    "TrainHistory",
    "TrainingError",
    "gradients",
    "load_checkpoint",
    "loss",
    "save_checkpoint",
    "stochastic_centers",
    "train_adapter",
    "transform",
]
