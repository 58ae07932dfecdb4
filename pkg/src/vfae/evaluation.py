"""Probe classifiers and invariance/fairness metrics over embeddings."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import minimize
from scipy.special import log_softmax, softmax

from . import tensor as T
from .optim import Adam
from .tensor import Parameter

REPORT_SCHEMA_VERSION = 1


class ContractError(ValueError):
    """Inputs violate a metric's preconditions."""


@dataclass
class EmbeddingSet:
    """Latent codes with aligned nuisance states and (optional) labels."""

    z: np.ndarray
    s: np.ndarray
    y: np.ndarray | None = None
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        self.z = np.atleast_2d(np.asarray(self.z, dtype=np.float64))
        self.s = np.asarray(self.s, dtype=int)
        if self.y is not None:
            self.y = np.asarray(self.y, dtype=int)
        if len(self.s) != len(self.z) or (self.y is not None and len(self.y) != len(self.z)):
            raise ContractError("z, s and y must have the same number of rows")
        if not self.provenance:
            raise ContractError("an EmbeddingSet needs provenance (model id, mode, seed)")

    def __len__(self) -> int:
        return len(self.z)

    def target(self, name: str) -> np.ndarray:
        if name == "s":
            return self.s
        if name == "y":
            if self.y is None:
                raise ContractError("embedding set has no y column")
            return self.y
        raise ValueError(f"target must be 's' or 'y', got {name!r}")


@dataclass
class ProbeReport:
    kind: str
    target: str
    accuracy: float
    per_class_accuracy: dict
    chance: float


class _Standardizer:
    def __init__(self, X: np.ndarray):
        self.mean = X.mean(axis=0)
        sd = X.std(axis=0)
        self.scale = np.where(sd > 0, sd, 1.0)

    def __call__(self, X: np.ndarray) -> np.ndarray:
        return (X - self.mean) / self.scale


def _classes(labels: np.ndarray) -> np.ndarray:
    classes = np.unique(labels)
    if len(classes) < 2:
        raise ContractError(f"probe training needs at least 2 classes, got {classes.tolist()}")
    return classes


class LinearProbe:
    """Multinomial logistic regression with an L2 penalty on the weights.

    Minimizes mean cross-entropy + ``l2 * ||W||^2`` with L-BFGS on
    standardized inputs.
    """

    kind = "linear"

    def __init__(self, l2: float = 1e-4):
        self.l2 = l2

    def fit(self, X, labels) -> "LinearProbe":
        X = np.asarray(X, dtype=np.float64)
        labels = np.asarray(labels)
        self.classes_ = _classes(labels)
        self._std = _Standardizer(X)
        Xs = self._std(X)
        n, d = Xs.shape
        C = len(self.classes_)
        Y = (labels[:, None] == self.classes_[None, :]).astype(np.float64)

        def objective(theta):
            W = theta[: d * C].reshape(d, C)
            b = theta[d * C :]
            logits = Xs @ W + b
            logp = log_softmax(logits, axis=1)
            loss = -np.sum(Y * logp) / n + self.l2 * np.sum(W * W)
            G = (np.exp(logp) - Y) / n
            gW = Xs.T @ G + 2.0 * self.l2 * W
            return loss, np.concatenate([gW.ravel(), G.sum(axis=0)])

        res = minimize(
            objective, np.zeros(d * C + C), jac=True, method="L-BFGS-B",
            options={"maxiter": 2000, "gtol": 1e-9, "ftol": 1e-14},
        )
        self.W = res.x[: d * C].reshape(d, C)
        self.b = res.x[d * C :]
        return self

    def decision_function(self, X) -> np.ndarray:
        return self._std(np.asarray(X, dtype=np.float64)) @ self.W + self.b

    def predict_proba(self, X) -> np.ndarray:
        return softmax(self.decision_function(X), axis=1)

    def predict(self, X) -> np.ndarray:
        return self.classes_[self.decision_function(X).argmax(axis=1)]


class MlpProbe:
    """One-hidden-layer perceptron probe, Adam-trained with early stopping."""

    kind = "nonlinear"

    def __init__(
        self,
        hidden: int = 64,
        lr: float = 5e-3,
        batch_size: int = 128,
        max_epochs: int = 200,
        patience: int = 10,
        seed: int = 0,
    ):
        self.hidden, self.lr, self.batch_size = hidden, lr, batch_size
        self.max_epochs, self.patience, self.seed = max_epochs, patience, seed

    def _forward(self, X):
        h = T.softplus(T.matmul(X, self.W1) + self.b1)
        return T.matmul(h, self.W2) + self.b2

    def fit(self, X, labels) -> "MlpProbe":
        X = np.asarray(X, dtype=np.float64)
        labels = np.asarray(labels)
        self.classes_ = _classes(labels)
        self._std = _Standardizer(X)
        Xs = self._std(X)
        Y = (labels[:, None] == self.classes_[None, :]).astype(np.float64)
        rng = np.random.default_rng(self.seed)
        n, d = Xs.shape
        C = len(self.classes_)
        b1 = np.sqrt(6.0 / (d + self.hidden))
        b2 = np.sqrt(6.0 / (self.hidden + C))
        self.W1 = Parameter(rng.uniform(-b1, b1, (d, self.hidden)), "probe.W1")
        self.b1 = Parameter(np.zeros((1, self.hidden)), "probe.b1")
        self.W2 = Parameter(rng.uniform(-b2, b2, (self.hidden, C)), "probe.W2")
        self.b2 = Parameter(np.zeros((1, C)), "probe.b2")
        params = [self.W1, self.b1, self.W2, self.b2]

        perm = rng.permutation(n)
        n_hold = max(1, n // 5) if n >= 5 else 0
        hold, fit_rows = perm[:n_hold], perm[n_hold:]
        opt = Adam(params, lr=self.lr)
        best, best_state, stale = np.inf, [p.data.copy() for p in params], 0
        for _ in range(self.max_epochs):
            order = fit_rows[rng.permutation(len(fit_rows))]
            for i in range(0, len(order), self.batch_size):
                rows = order[i : i + self.batch_size]
                logits = self._forward(Xs[rows])
                logp = logits - T.logsumexp(logits, axis=1, keepdims=True)
                loss = -T.sum(logp * Y[rows]) / len(rows)
                T.backward(loss)
                opt.step()
            if n_hold == 0:
                continue
            logits = self._forward(Xs[hold]).data
            val = -np.mean(np.sum(Y[hold] * log_softmax(logits, axis=1), axis=1))
            if val < best - 1e-6:
                best, best_state, stale = val, [p.data.copy() for p in params], 0
            else:
                stale += 1
                if stale >= self.patience:
                    break
        for p, v in zip(params, best_state):
            p.data = v
        return self

    def predict_proba(self, X) -> np.ndarray:
        return softmax(self._forward(self._std(np.asarray(X, dtype=np.float64))).data, axis=1)

    def predict(self, X) -> np.ndarray:
        return self.classes_[self.predict_proba(X).argmax(axis=1)]


def fit_linear_probe(train: EmbeddingSet, target: str = "s", l2: float = 1e-4) -> LinearProbe:
    return LinearProbe(l2=l2).fit(train.z, train.target(target))


def fit_nonlinear_probe(train: EmbeddingSet, target: str = "s", seed: int = 0, **kwargs) -> MlpProbe:
    return MlpProbe(seed=seed, **kwargs).fit(train.z, train.target(target))


def chance_accuracy(labels) -> float:
    """Majority-class share."""
    labels = np.asarray(labels)
    return float(np.unique(labels, return_counts=True)[1].max() / len(labels))


def probe_accuracy(probe, z, labels) -> float:
    return float(np.mean(probe.predict(z) == np.asarray(labels)))


def probe_report(probe, test: EmbeddingSet, target: str) -> ProbeReport:
    labels = test.target(target)
    pred = probe.predict(test.z)
    per_class = {int(c): float(np.mean(pred[labels == c] == c)) for c in np.unique(labels)}
    return ProbeReport(probe.kind, target, float(np.mean(pred == labels)), per_class, chance_accuracy(labels))


def _group_means(values: np.ndarray, s: np.ndarray) -> tuple[float, float]:
    values = np.asarray(values, dtype=np.float64)
    s = np.asarray(s)
    if len(values) != len(s):
        raise ContractError("values and s must have the same length")
    if not np.all(np.isin(s, (0, 1))):
        raise ContractError("s must be binary (0/1)")
    out = []
    for g in (0, 1):
        if not np.any(s == g):
            raise ContractError(f"group s={g} is empty")
        out.append(float(values[s == g].mean()))
    return out[0], out[1]


def discrimination(preds, s) -> float:
    """|positive rate among s=0 - positive rate among s=1|."""
    preds = np.asarray(preds)
    if not np.all(np.isin(preds, (0, 1))):
        raise ContractError("predictions must be binary (0/1)")
    a, b = _group_means(preds, s)
    return abs(a - b)


def discrimination_prob(probs, s) -> float:
    """|mean predicted probability among s=0 - the same among s=1|."""
    probs = np.asarray(probs, dtype=np.float64)
    if np.any((probs < 0) | (probs > 1)):
        raise ContractError("probabilities must lie in [0, 1]")
    a, b = _group_means(probs, s)
    return abs(a - b)


def pad_from_error(eps: float) -> float:
    """Proxy A-distance 2(1 - 2 eps), floored at 0."""
    return max(0.0, 2.0 * (1.0 - 2.0 * eps))


def proxy_a_distance(source: EmbeddingSet, target: EmbeddingSet, seed: int = 0) -> float:
    """Domain separability of two embedding sets via a linear probe's test error."""
    if source.z.shape[1] != target.z.shape[1]:
        raise ContractError(f"dimension mismatch: {source.z.shape[1]} vs {target.z.shape[1]}")
    if len(source) == 0 or len(target) == 0:
        raise ContractError("both embedding sets must be non-empty")
    Z = np.vstack([source.z, target.z])
    origin = np.r_[np.zeros(len(source), int), np.ones(len(target), int)]
    rng = np.random.default_rng(seed)
    train_rows, test_rows = [], []
    for g in (0, 1):
        rows = rng.permutation(np.flatnonzero(origin == g))
        half = len(rows) // 2
        train_rows.append(rows[:half])
        test_rows.append(rows[half:])
    tr, te = np.concatenate(train_rows), np.concatenate(test_rows)
    probe = LinearProbe().fit(Z[tr], origin[tr])
    eps = float(np.mean(probe.predict(Z[te]) != origin[te]))
    return pad_from_error(eps)


# -- full report --------------------------------------------------------------


def _embedding_set(model, d, mode, rng, model_id) -> EmbeddingSet:
    from .models import embed

    z = embed(model, d.X, d.s_onehot(), mode=mode, rng=rng)
    return EmbeddingSet(z, d.s, d.y, {"model_id": model_id, "mode": mode})


def evaluate_embeddings(train: EmbeddingSet, test: EmbeddingSet, seed: int = 0, y_known_train=None, y_known_test=None) -> dict:
    """Probe metrics for one train/test pair of embedding sets."""
    out: dict = {}
    lin = fit_linear_probe(train, "s")
    non = fit_nonlinear_probe(train, "s", seed=seed)
    out["probe_s_linear"] = asdict(probe_report(lin, test, "s"))
    out["probe_s_nonlinear"] = asdict(probe_report(non, test, "s"))
    out["chance_s"] = chance_accuracy(test.s)
    out["discrimination"] = None
    out["discrimination_prob"] = None
    if train.y is not None and test.y is not None:
        ktr = np.ones(len(train), bool) if y_known_train is None else y_known_train
        kte = np.ones(len(test), bool) if y_known_test is None else y_known_test
        binary = set(np.unique(train.y[ktr])) <= {0, 1} and set(np.unique(test.s)) <= {0, 1}
        if binary and len(np.unique(train.y[ktr])) == 2 and len(np.unique(test.s[kte])) == 2:
            yprobe = LinearProbe().fit(train.z[ktr], train.y[ktr])
            pos = int(np.flatnonzero(yprobe.classes_ == 1)[0])
            proba = yprobe.predict_proba(test.z[kte])[:, pos]
            preds = (proba > 0.5).astype(int)
            out["discrimination"] = discrimination(preds, test.s[kte])
            out["discrimination_prob"] = discrimination_prob(proba, test.s[kte])
            out["y_accuracy_linear_probe"] = float(np.mean(preds == test.y[kte]))
    return out


def evaluate_model(model, dataset, seed: int = 0, mode: str = "sample", model_id: str = "vfae") -> dict:
    """Full invariance/accuracy report for a trained model on ``dataset``.

    Probes are fitted on training-split embeddings and scored on the test
    split.  y-accuracy uses the model's own q(y|z1).
    """
    from .models import predict

    rng = np.random.default_rng(seed)
    tr, te = dataset.subset("train"), dataset.subset("test")
    e_tr = _embedding_set(model, tr, mode, rng, model_id)
    e_te = _embedding_set(model, te, mode, rng, model_id)
    report = {
        "schema_version": REPORT_SCHEMA_VERSION,
        "provenance": {"model_id": model_id, "mode": mode, "seed": seed, "n_train": len(tr), "n_test": len(te)},
    }
    report.update(evaluate_embeddings(e_tr, e_te, seed, tr.y_known, te.y_known))
    known = te.y_known
    probs = predict(model, te.X[known], te.s_onehot()[known], mode=mode, rng=rng).probs()
    report["y_accuracy"] = float(np.mean(probs.argmax(axis=1) == te.y[known]))
    report["chance_y"] = chance_accuracy(te.y[known])
    return report


def evaluate_raw(dataset, seed: int = 0) -> dict:
    """The same report computed on the input features themselves."""
    tr, te = dataset.subset("train"), dataset.subset("test")
    e_tr = EmbeddingSet(tr.X, tr.s, tr.y, {"model_id": "raw-x", "mode": "identity"})
    e_te = EmbeddingSet(te.X, te.s, te.y, {"model_id": "raw-x", "mode": "identity"})
    report = {
        "schema_version": REPORT_SCHEMA_VERSION,
        "provenance": {"model_id": "raw-x", "mode": "identity", "seed": seed, "n_train": len(tr), "n_test": len(te)},
    }
    report.update(evaluate_embeddings(e_tr, e_te, seed, tr.y_known, te.y_known))
    return report


def format_report(report: dict) -> str:
    rows = [
        ("s accuracy, linear probe", report["probe_s_linear"]["accuracy"]),
        ("s accuracy, MLP probe", report["probe_s_nonlinear"]["accuracy"]),
        ("s chance", report["chance_s"]),
        ("discrimination", report.get("discrimination")),
        ("discrimination (prob.)", report.get("discrimination_prob")),
        ("y accuracy", report.get("y_accuracy")),
        ("y chance", report.get("chance_y")),
    ]
    width = max(len(r[0]) for r in rows)
    lines = [f"model {report['provenance']['model_id']} ({report['provenance']['mode']})"]
    for name, val in rows:
        lines.append(f"  {name:<{width}}  {'n/a' if val is None else f'{val:.4f}'}")
    return "\n".join(lines)


def write_report(report: dict, path: str | Path) -> None:
    Path(path).write_text(json.dumps(report, indent=2, sort_keys=True))
