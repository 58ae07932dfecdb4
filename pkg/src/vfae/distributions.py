"""Diagonal Gaussians, categoricals and observation likelihoods.

All log-densities and KL divergences return one value per row (a tensor of
shape ``(n,)``) so the bounds can be assembled per data point.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

from . import tensor as T
from .tensor import DomainError, Tensor

LOG_SIGMA_MIN = -7.0
LOG_SIGMA_MAX = 7.0
LOG_2PI = float(np.log(2.0 * np.pi))

LIKELIHOOD_KINDS = ("bernoulli", "poisson", "gaussian_sigmoid_mean")


@dataclass
class DiagGaussian:
    """Gaussian with diagonal covariance, parameterized by mean and log std.

    ``log_sigma`` is clamped to ``[-7, 7]`` on construction.
    """

    mu: Tensor
    log_sigma: Tensor

    def __post_init__(self):
        self.mu = T.as_tensor(self.mu)
        self.log_sigma = T.clip(T.as_tensor(self.log_sigma), LOG_SIGMA_MIN, LOG_SIGMA_MAX)
        if self.mu.shape != self.log_sigma.shape:
            raise T.ShapeError(f"mu {self.mu.shape} and log_sigma {self.log_sigma.shape} differ")

    @property
    def shape(self):
        return self.mu.shape

    @classmethod
    def standard(cls, n: int, d: int) -> "DiagGaussian":
        return cls(Tensor(np.zeros((n, d))), Tensor(np.zeros((n, d))))


@dataclass
class CategoricalDist:
    logits: Tensor

    def __post_init__(self):
        self.logits = T.as_tensor(self.logits)

    @property
    def n_classes(self) -> int:
        return self.logits.shape[1]

    def log_probs(self) -> Tensor:
        return self.logits - T.logsumexp(self.logits, axis=1, keepdims=True)

    def probs(self) -> np.ndarray:
        z = self.logits.data - self.logits.data.max(axis=1, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=1, keepdims=True)


def sample_reparam(d: DiagGaussian, rng: np.random.Generator) -> Tensor:
    """Draw ``mu + exp(log_sigma) * eps`` with ``eps ~ N(0, I)`` from ``rng``."""
    eps = rng.standard_normal(d.mu.shape)
    return d.mu + T.exp(d.log_sigma) * eps


def kl_diag_gaussian_std(d: DiagGaussian) -> Tensor:
    """KL(d || N(0, I)) per row."""
    inner = T.square(d.mu) + T.exp(2.0 * d.log_sigma) - 1.0 - 2.0 * d.log_sigma
    return 0.5 * T.sum(inner, axis=1)


def kl_categorical_uniform(d: CategoricalDist) -> Tensor:
    """KL(d || Uniform(C)) per row, i.e. ``log C - H(d)``."""
    log_p = d.log_probs()
    p = T.exp(log_p)
    return T.sum(p * (log_p + np.log(d.n_classes)), axis=1)


def gaussian_log_prob(d: DiagGaussian, z) -> Tensor:
    """Diagonal-Gaussian log-density of each row of ``z``."""
    z = T.as_tensor(z)
    if z.shape != d.mu.shape:
        raise T.ShapeError(f"z {z.shape} does not match distribution {d.mu.shape}")
    std = (z - d.mu) * T.exp(-d.log_sigma)
    return -0.5 * T.sum(T.square(std) + 2.0 * d.log_sigma + LOG_2PI, axis=1)


gaussian_log_prob_pair = gaussian_log_prob


def _support_error(kind: str, x: np.ndarray, bad: np.ndarray) -> DomainError:
    row, col = (int(i) for i in np.argwhere(bad)[0])
    return DomainError(
        f"{kind} likelihood: value {x[row, col]!r} at row {row}, column {col} is outside the support"
    )


@dataclass
class Likelihood:
    """Observation model p(x | z1, s) produced by the decoder.

    ``params`` holds the decoder's raw outputs: ``logits`` (bernoulli),
    ``log_rate`` (poisson) or ``mean_logits`` and ``log_sigma``
    (gaussian_sigmoid_mean).
    """

    kind: str
    params: dict

    def __post_init__(self):
        if self.kind not in LIKELIHOOD_KINDS:
            raise ValueError(f"unknown likelihood kind {self.kind!r}")
        if self.kind == "gaussian_sigmoid_mean":
            self.params["log_sigma"] = T.clip(self.params["log_sigma"], LOG_SIGMA_MIN, LOG_SIGMA_MAX)

    @classmethod
    def from_output(cls, kind: str, out: dict) -> "Likelihood":
        return cls(kind, dict(out))

    def mean(self) -> np.ndarray:
        if self.kind == "bernoulli":
            return T.sigmoid(self.params["logits"]).data
        if self.kind == "poisson":
            return np.exp(self.params["log_rate"].data)
        return T.sigmoid(self.params["mean_logits"]).data

    def validate(self, x: np.ndarray) -> None:
        x = np.asarray(x, dtype=np.float64)
        if self.kind == "bernoulli":
            bad = (x != 0.0) & (x != 1.0)
        elif self.kind == "poisson":
            bad = (x < 0) | (x != np.floor(x)) | ~np.isfinite(x)
        else:
            bad = ~np.isfinite(x)
        if bad.any():
            raise _support_error(self.kind, x, bad)

    def log_prob(self, x) -> Tensor:
        x = np.asarray(x, dtype=np.float64)
        self.validate(x)
        if self.kind == "bernoulli":
            logits = self.params["logits"]
            # x*log(sigmoid(t)) + (1-x)*log(1-sigmoid(t)) == x*t - softplus(t)
            return T.sum(logits * x - T.softplus(logits), axis=1)
        if self.kind == "poisson":
            log_rate = self.params["log_rate"]
            return T.sum(log_rate * x - T.exp(log_rate), axis=1) - gammaln(x + 1.0).sum(axis=1)
        mu = T.sigmoid(self.params["mean_logits"])
        return gaussian_log_prob(DiagGaussian(mu, self.params["log_sigma"]), x)


def log_prob(lik: Likelihood, x) -> Tensor:
    return lik.log_prob(x)
