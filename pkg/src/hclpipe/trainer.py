"""Mini-batch training of the linear head on frozen features.

The estimator follows the scikit-learn protocol (``fit``/``predict``/
``score``, ``get_params``) so it composes with the wider ecosystem; the
module-level ``train_hcl`` / ``train_baseline`` helpers adapt annotation
runs and baseline views onto it.

Supervision comes in two flavors.  With only (X, y) the fit is plain
supervised training under the +/-1 squared loss.  With a consistency-flag
vector ``s`` the objective splits each mini-batch: s=1 rows (corrected
labels) contribute their mean supervised loss, s=0 rows (consensus labels)
contribute the mean expected loss under the estimated label distribution.
The estimate is recomputed from current parameters but treated as a
constant: no gradient flows through it.
"""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .annotation import AnnotationRun, LabeledView, hcl_arrays
from .domain import Dataset, LinearModel, logits_batch
from .estimator import (
    RISK_WEIGHTINGS,
    check_prototypes,
    cosine_similarities,
    loss_rows,
    soft_loss_rows,
    softmax,
)
from .optim import AdamW, scheduled_lr

P_HAT_REFRESH = ("batch", "epoch")
INIT_SCHEMES = ("zeros", "uniform")


@dataclass(frozen=True)
class TrainConfig:
    """Everything a training run depends on, seed included."""

    epochs: int = 30
    batch_size: int = 64
    learning_rate: float = 5e-4
    weight_decay: float = 1e-4
    lr_decay_factor: float = 0.1
    lr_decay_every: int = 5
    seed: int = 42
    lam: float = 1.0
    tau: float = 100.0
    risk_weighting: str = "partition-means"
    p_hat_refresh: str = "batch"
    init: str = "zeros"
    init_scale: float = 0.01

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if not self.learning_rate > 0:
            raise ValueError(f"learning_rate must be positive, got {self.learning_rate}")
        if not 0 < self.lr_decay_factor <= 1:
            raise ValueError(f"lr_decay_factor must lie in (0, 1], got {self.lr_decay_factor}")
        if self.lr_decay_every < 1:
            raise ValueError(f"lr_decay_every must be >= 1, got {self.lr_decay_every}")
        if not 0 <= self.lam <= 1:
            raise ValueError(f"lam must lie in [0, 1], got {self.lam}")
        if not self.tau > 0:
            raise ValueError(f"tau must be positive, got {self.tau}")
        if self.weight_decay < 0:
            raise ValueError(f"weight_decay must be nonnegative, got {self.weight_decay}")
        if self.risk_weighting not in RISK_WEIGHTINGS:
            raise ValueError(f"unknown risk_weighting {self.risk_weighting!r}")
        if self.p_hat_refresh not in P_HAT_REFRESH:
            raise ValueError(f"p_hat_refresh must be one of {P_HAT_REFRESH}")
        if self.init not in INIT_SCHEMES:
            raise ValueError(f"init must be one of {INIT_SCHEMES}")

    def as_dict(self) -> dict:
        d = asdict(self)
        d["lambda"] = d.pop("lam")
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        if "lambda" in d:
            d["lam"] = d.pop("lambda")
        return cls(**d)


@dataclass(frozen=True)
class EpochStats:
    epoch: int
    objective: float
    train_accuracy: float
    test_accuracy: float | None
    wall_time_s: float


@dataclass
class TrainReport:
    """Per-epoch trajectory plus the resolved configuration it came from."""

    epochs: list[EpochStats] = field(default_factory=list)
    final_test_accuracy: float | None = None
    config: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {
            "epochs": [asdict(e) for e in self.epochs],
            "final_test_accuracy": self.final_test_accuracy,
            "config": dict(self.config),
        }

    def metrics(self) -> dict:
        """The deterministic part of the report: everything but wall times."""
        return {
            "objective": [e.objective for e in self.epochs],
            "train_accuracy": [e.train_accuracy for e in self.epochs],
            "test_accuracy": [e.test_accuracy for e in self.epochs],
            "final_test_accuracy": self.final_test_accuracy,
        }


def evaluate(model: LinearModel, X: np.ndarray, y: np.ndarray) -> float:
    """Accuracy of argmax predictions; ties go to the lowest class index."""
    y = np.asarray(y, dtype=np.int64)
    if y.size == 0:
        raise ValueError("cannot evaluate on an empty sample set")
    if np.any(y < 0):
        raise ValueError("evaluation requires ground truth for every sample")
    preds = np.argmax(logits_batch(model, X), axis=1)
    return float(np.mean(preds == y))


class HclLinearClassifier(BaseEstimator):
    """Linear probe trained under the consensus/correction objective.

    Parameters mirror :class:`TrainConfig`.  ``fit(X, y)`` alone performs
    plain supervised training; passing ``s`` (per-row consistency flags)
    and ``prototypes`` enables the split objective described in the module
    docstring.
    """

    def __init__(
        self,
        epochs: int = 30,
        batch_size: int = 64,
        learning_rate: float = 5e-4,
        weight_decay: float = 1e-4,
        lr_decay_factor: float = 0.1,
        lr_decay_every: int = 5,
        seed: int = 42,
        lam: float = 1.0,
        tau: float = 100.0,
        risk_weighting: str = "partition-means",
        p_hat_refresh: str = "batch",
        init: str = "zeros",
        init_scale: float = 0.01,
        n_classes: int | None = None,
    ):
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.weight_decay = weight_decay
        self.lr_decay_factor = lr_decay_factor
        self.lr_decay_every = lr_decay_every
        self.seed = seed
        self.lam = lam
        self.tau = tau
        self.risk_weighting = risk_weighting
        self.p_hat_refresh = p_hat_refresh
        self.init = init
        self.init_scale = init_scale
        self.n_classes = n_classes

    @classmethod
    def from_config(cls, config: TrainConfig, n_classes: int | None = None):
        return cls(n_classes=n_classes, **asdict(config))

    def _config(self) -> TrainConfig:
        params = self.get_params()
        params.pop("n_classes")
        return TrainConfig(**params)

    def fit(self, X, y, s=None, prototypes=None, eval_set=None):
        """Train the linear head; returns self.

        ``s`` marks rows: 1 = corrected label (supervised term), 0 =
        consensus label (expected-loss term).  ``eval_set=(X_test, y_test)``
        adds per-epoch test accuracy to the report.
        """
        cfg = self._config()  # validates all hyperparameters
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.int64)
        if X.ndim != 2 or X.shape[0] != y.shape[0]:
            raise ValueError(f"X {X.shape} and y {y.shape} do not align")
        if X.shape[0] == 0:
            raise ValueError("cannot fit on an empty view")
        if not np.all(np.isfinite(X)):
            raise ValueError("X contains non-finite entries")
        n, d = X.shape
        k = self.n_classes if self.n_classes is not None else int(y.max()) + 1
        if prototypes is not None:
            prototypes = check_prototypes(prototypes)
            if prototypes.shape[0] != k:
                raise ValueError(
                    f"prototype bank has {prototypes.shape[0]} rows but n_classes={k}"
                )
        if np.any(y < 0) or np.any(y >= k):
            raise ValueError(f"labels outside [0, {k})")

        if s is not None:
            s = np.asarray(s, dtype=np.int64)
            if s.shape != y.shape or not np.all((s == 0) | (s == 1)):
                raise ValueError("s must be a 0/1 vector aligned with y")
            if np.any(s == 0):
                if cfg.lam > 0 and prototypes is None:
                    raise ValueError("consensus rows with lam > 0 require prototypes")

        rng = np.random.default_rng(cfg.seed)
        if cfg.init == "zeros":
            W = np.zeros((k, d))
            b = np.zeros(k)
        else:
            W = rng.uniform(-cfg.init_scale, cfg.init_scale, size=(k, d))
            b = rng.uniform(-cfg.init_scale, cfg.init_scale, size=k)
        opt = AdamW([W, b], lr=cfg.learning_rate, weight_decay=cfg.weight_decay)

        # Consensus-row machinery: prototype similarities never change, so
        # compute them once; the model softmax is refreshed per batch or per
        # epoch depending on config.
        v_rows = np.flatnonzero(s == 0) if s is not None else np.array([], dtype=np.int64)
        has_v = v_rows.size > 0
        v_index = None
        P_sim = None
        if has_v:
            v_index = np.full(n, -1, dtype=np.int64)
            v_index[v_rows] = np.arange(v_rows.size)
            if cfg.lam > 0:
                P_sim = softmax(cfg.tau * cosine_similarities(X[v_rows], prototypes), axis=-1)

        report = TrainReport(config={**cfg.as_dict(), "n_train": int(n), "n_classes": int(k)})
        two_over_k = 2.0 / k
        X_test = y_test = None
        if eval_set is not None:
            X_test = np.asarray(eval_set[0], dtype=np.float64)
            y_test = np.asarray(eval_set[1], dtype=np.int64)

        for epoch in range(cfg.epochs):
            t0 = time.perf_counter()
            opt.lr = scheduled_lr(
                cfg.learning_rate, epoch, cfg.lr_decay_factor, cfg.lr_decay_every
            )
            P_mod_epoch = None
            if has_v and cfg.lam < 1 and cfg.p_hat_refresh == "epoch":
                P_mod_epoch = softmax(X[v_rows] @ W.T + b, axis=-1)

            perm = rng.permutation(n)
            batch_objs = []
            for start in range(0, n, cfg.batch_size):
                idx = perm[start : start + cfg.batch_size]
                Xb = X[idx]
                yb = y[idx]
                F = Xb @ W.T + b
                nb = idx.size
                G = np.zeros_like(F)

                if s is None:
                    T = 2.0 * np.eye(k)[yb] - 1.0
                    G = two_over_k * (F - T) / nb
                    obj = float(np.mean(loss_rows(F, yb)))
                else:
                    sb = s[idx]
                    h_mask = sb == 1
                    v_mask = ~h_mask
                    nh, nv = int(h_mask.sum()), int(v_mask.sum())
                    obj = 0.0
                    if cfg.risk_weighting == "partition-means":
                        den_h, den_v = nh, nv
                    else:
                        den_h = den_v = nb
                    if nh:
                        T = 2.0 * np.eye(k)[yb[h_mask]] - 1.0
                        G[h_mask] = two_over_k * (F[h_mask] - T) / den_h
                        obj += float(np.sum(loss_rows(F[h_mask], yb[h_mask]))) / den_h
                    if nv:
                        rows = v_index[idx[v_mask]]
                        if cfg.lam == 1.0:
                            p_hat = P_sim[rows]
                        else:
                            if cfg.p_hat_refresh == "epoch":
                                p_mod = P_mod_epoch[rows]
                            else:
                                p_mod = softmax(F[v_mask], axis=-1)
                            if cfg.lam == 0.0:
                                p_hat = p_mod
                            else:
                                p_hat = cfg.lam * P_sim[rows] + (1.0 - cfg.lam) * p_mod
                        G[v_mask] = two_over_k * (F[v_mask] - (2.0 * p_hat - 1.0)) / den_v
                        obj += float(np.sum(soft_loss_rows(F[v_mask], p_hat))) / den_v

                opt.step([G.T @ Xb, G.sum(axis=0)])
                batch_objs.append(obj)

            model = LinearModel(W.copy(), b.copy())
            train_acc = float(np.mean(np.argmax(X @ W.T + b, axis=1) == y))
            test_acc = evaluate(model, X_test, y_test) if X_test is not None else None
            report.epochs.append(
                EpochStats(
                    epoch=epoch,
                    objective=float(np.mean(batch_objs)),
                    train_accuracy=train_acc,
                    test_accuracy=test_acc,
                    wall_time_s=time.perf_counter() - t0,
                )
            )

        self.model_ = LinearModel(W, b)
        self.coef_ = self.model_.W
        self.intercept_ = self.model_.b
        self.classes_ = np.arange(k)
        self.n_features_in_ = d
        self.report_ = report
        report.final_test_accuracy = report.epochs[-1].test_accuracy
        return self

    def _check_fitted(self):
        if not hasattr(self, "model_"):
            raise NotFittedError("this classifier has not been fitted yet")

    def decision_function(self, X) -> np.ndarray:
        self._check_fitted()
        return logits_batch(self.model_, np.asarray(X, dtype=np.float64))

    def predict(self, X) -> np.ndarray:
        return np.argmax(self.decision_function(X), axis=1)

    def predict_proba(self, X) -> np.ndarray:
        return softmax(self.decision_function(X), axis=-1)

    def score(self, X, y) -> float:
        self._check_fitted()
        return evaluate(self.model_, X, y)


def train_hcl(
    dataset: Dataset,
    run: AnnotationRun,
    prototypes: np.ndarray,
    config: TrainConfig,
    eval_set: tuple[np.ndarray, np.ndarray] | None = None,
) -> tuple[LinearModel, TrainReport]:
    """Train on a complete annotation run under the split objective."""
    X, y, s = hcl_arrays(run, dataset)
    clf = HclLinearClassifier.from_config(config, n_classes=dataset.k)
    clf.fit(X, y, s=s, prototypes=prototypes, eval_set=eval_set)
    return clf.model_, clf.report_


def train_baseline(
    view: LabeledView,
    config: TrainConfig,
    n_classes: int,
    eval_set: tuple[np.ndarray, np.ndarray] | None = None,
) -> tuple[LinearModel, TrainReport]:
    """Plain supervised training on a baseline view (same loss and schedule)."""
    if view.n == 0:
        raise ValueError(f"baseline view {view.name!r} is empty")
    clf = HclLinearClassifier.from_config(config, n_classes=n_classes)
    clf.fit(view.X, view.y, eval_set=eval_set)
    report = clf.report_
    report.config["view"] = view.name
    return clf.model_, report


def lambda_sweep(
    dataset: Dataset,
    run: AnnotationRun,
    prototypes: np.ndarray,
    config: TrainConfig,
    lambda_grid: list[float],
    eval_set: tuple[np.ndarray, np.ndarray] | None = None,
) -> list[dict]:
    """One full training per grid value, shared seed; returns one row per value."""
    if len(lambda_grid) == 0:
        raise ValueError("lambda grid is empty")
    for lam in lambda_grid:
        if not 0 <= lam <= 1:
            raise ValueError(f"grid value {lam} outside [0, 1]")
    rows = []
    base = asdict(config)
    for lam in lambda_grid:
        cfg = TrainConfig(**{**base, "lam": float(lam)})
        model, report = train_hcl(dataset, run, prototypes, cfg, eval_set=eval_set)
        rows.append(
            {
                "lambda": float(lam),
                "final_test_accuracy": report.final_test_accuracy,
                "final_train_accuracy": report.epochs[-1].train_accuracy,
                "final_objective": report.epochs[-1].objective,
            }
        )
    return rows
