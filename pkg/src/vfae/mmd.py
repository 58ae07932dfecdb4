"""Maximum Mean Discrepancy: exact Gram estimator and random Fourier features.

The Gaussian kernel is ``k(x, x') = exp(-gamma * ||x - x'||^2)``.  Two scale
conventions are offered for the random feature map
``sqrt(2/D) * cos(scale * x @ W + b)``:

``standard``
    ``scale = sqrt(2 * gamma)``.  With ``W ~ N(0, 1)`` the feature inner
    product is an unbiased estimate of the kernel above.
``paper``
    ``scale = sqrt(2 / gamma)``.  It approximates the kernel with
    ``gamma`` replaced by ``1 / gamma``, so the two coincide only at
    ``gamma = 1``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import cdist, pdist

from . import tensor as T
from .tensor import ShapeError, Tensor

CONVENTIONS = ("standard", "paper")
DEFAULT_FEATURES = 500


@dataclass(frozen=True)
class GaussianKernel:
    gamma: float

    def __post_init__(self):
        if not self.gamma > 0:
            raise ValueError(f"gamma must be positive, got {self.gamma}")

    def __call__(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        return np.exp(-self.gamma * cdist(np.atleast_2d(a), np.atleast_2d(b), "sqeuclidean"))


@dataclass
class RffProjection:
    """A fixed random feature map for the Gaussian kernel."""

    in_dim: int
    n_features: int = DEFAULT_FEATURES
    gamma: float = 1.0
    seed: int = 0
    convention: str = "standard"
    W: np.ndarray = field(init=False, repr=False)
    b: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.n_features < 1:
            raise ValueError("n_features must be at least 1")
        if not self.gamma > 0:
            raise ValueError(f"gamma must be positive, got {self.gamma}")
        if self.convention not in CONVENTIONS:
            raise ValueError(f"convention must be one of {CONVENTIONS}, got {self.convention!r}")
        rng = np.random.default_rng(self.seed)
        self.W = rng.standard_normal((self.in_dim, self.n_features))
        self.b = rng.uniform(0.0, 2.0 * np.pi, size=self.n_features)

    @property
    def scale(self) -> float:
        if self.convention == "standard":
            return float(np.sqrt(2.0 * self.gamma))
        return float(np.sqrt(2.0 / self.gamma))


def _width(X) -> int:
    return X.shape[1] if X.ndim == 2 else -1


def mmd_exact(X, Y, kernel: GaussianKernel | float) -> float:
    """Biased (V-statistic) MMD^2 between the rows of ``X`` and ``Y``."""
    if not isinstance(kernel, GaussianKernel):
        kernel = GaussianKernel(float(kernel))
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    Y = np.atleast_2d(np.asarray(Y, dtype=np.float64))
    if len(X) == 0 or len(Y) == 0:
        raise ValueError("mmd_exact needs at least one row on each side")
    if X.shape[1] != Y.shape[1]:
        raise ShapeError(f"mmd_exact: column counts differ ({X.shape[1]} vs {Y.shape[1]})")
    kxx = kernel(X, X).mean()
    kyy = kernel(Y, Y).mean()
    kxy = kernel(X, Y).mean()
    return float(kxx + kyy - 2.0 * kxy)


def rff_features(X, proj: RffProjection):
    """Random Fourier features of each row; differentiable when ``X`` is a Tensor."""
    is_tensor = isinstance(X, Tensor)
    Xt = T.as_tensor(X)
    if Xt.ndim != 2 or Xt.shape[1] != proj.in_dim:
        raise ShapeError(f"rff_features: input shape {Xt.shape} does not match projection ({proj.in_dim}, .)")
    phase = T.matmul(Xt * proj.scale, proj.W) + proj.b
    feats = T.cos(phase) * np.sqrt(2.0 / proj.n_features)
    return feats if is_tensor else feats.data


def mmd_rff(X, Y, proj: RffProjection):
    """Squared distance between the mean random features of ``X`` and ``Y``.

    Returns a scalar Tensor if either input is a Tensor, else a float.
    """
    is_tensor = isinstance(X, Tensor) or isinstance(Y, Tensor)
    Xt, Yt = T.as_tensor(X), T.as_tensor(Y)
    if Xt.shape[1:] != Yt.shape[1:]:
        raise ShapeError(f"mmd_rff: column counts differ ({Xt.shape} vs {Yt.shape})")
    diff = T.mean(rff_features(Xt, proj), axis=0) - T.mean(rff_features(Yt, proj), axis=0)
    out = T.sum(T.square(diff))
    return out if is_tensor else float(out.data)


def mmd_penalty(Z, s_labels, proj: RffProjection, n_states: int | None = None):
    """Invariance penalty on a batch of latent codes grouped by nuisance state.

    Two states: MMD between the two groups.  More than two: the sum over
    states k of MMD(group k, all rows).  A group with no rows in the batch
    contributes zero.
    """
    s_labels = np.asarray(s_labels).astype(int).ravel()
    Zt = T.as_tensor(Z)
    if len(s_labels) != Zt.shape[0]:
        raise ShapeError(f"mmd_penalty: {Zt.shape[0]} rows but {len(s_labels)} labels")
    if n_states is None:
        n_states = max(2, int(s_labels.max()) + 1 if len(s_labels) else 2)
    is_tensor = isinstance(Z, Tensor)
    total = Tensor(0.0)
    if n_states == 2:
        g0, g1 = np.flatnonzero(s_labels == 0), np.flatnonzero(s_labels == 1)
        if len(g0) and len(g1):
            total = mmd_rff(T.take_rows(Zt, g0), T.take_rows(Zt, g1), proj)
    elif n_states > 2:
        for k in range(n_states):
            gk = np.flatnonzero(s_labels == k)
            if len(gk):
                total = total + mmd_rff(T.take_rows(Zt, gk), Zt, proj)
    return total if is_tensor else float(total.data)


def median_heuristic_gamma(Z: np.ndarray) -> float:
    """``1 / (2 * median pairwise squared distance)`` over the rows of ``Z``."""
    Z = np.asarray(Z, dtype=np.float64)
    d2 = pdist(Z, "sqeuclidean")
    med = float(np.median(d2)) if d2.size else 0.0
    if med <= 0.0:
        return 1.0
    return 1.0 / (2.0 * med)
