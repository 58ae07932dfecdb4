"""Encoder/decoder networks and the variational objectives.

The stacked model has five parts sharing one parameter registry::

    q(z1 | x, s)      encoder_z1   Gaussian
    q(y | z1)         classifier_y softmax regression
    q(z2 | z1, y)     encoder_z2   Gaussian
    p(z1 | z2, y)     decoder_z1   Gaussian
    p(x | z1, s)      decoder_x    bernoulli / poisson / gaussian_sigmoid_mean

The unsupervised bound only uses ``encoder_z1`` and ``decoder_x`` with a
standard normal prior on z1.

Noise is drawn from an explicit ``numpy.random.Generator`` in a fixed order so
that two evaluations fed generators with the same seed see the same draws:
first one ``(n, z1_dim)`` block for z1, then one ``(n_labeled, z2_dim)``
block for the labeled rows' z2, then one ``(n_unlabeled, z2_dim)`` block per
class for the unlabeled rows.
"""

from __future__ import annotations

import copy
from dataclasses import asdict, dataclass, field

import numpy as np

from . import tensor as T
from .distributions import (
    LIKELIHOOD_KINDS,
    CategoricalDist,
    DiagGaussian,
    Likelihood,
    gaussian_log_prob,
    kl_categorical_uniform,
    kl_diag_gaussian_std,
    sample_reparam,
)
from .mmd import RffProjection, mmd_penalty
from .tensor import Parameter, Tensor

ACTIVATIONS = {"softplus": T.softplus, "tanh": T.tanh, "relu": T.relu, "sigmoid": T.sigmoid}


@dataclass
class ModelConfig:
    x_dim: int
    n_s: int
    n_classes: int
    z1_dim: int = 50
    z2_dim: int = 50
    hidden_z1_encoder: tuple[int, ...] = (100,)
    hidden_x_decoder: tuple[int, ...] = (100,)
    hidden_z2_encoder: tuple[int, ...] = (100,)
    hidden_z1_decoder: tuple[int, ...] = (100,)
    likelihood: str = "bernoulli"
    activation: str = "softplus"
    use_s: bool = True
    seed: int = 0

    def __post_init__(self):
        for name in ("hidden_z1_encoder", "hidden_x_decoder", "hidden_z2_encoder", "hidden_z1_decoder"):
            setattr(self, name, tuple(int(h) for h in getattr(self, name)))
        if self.likelihood not in LIKELIHOOD_KINDS:
            raise ValueError(f"likelihood must be one of {LIKELIHOOD_KINDS}, got {self.likelihood!r}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {sorted(ACTIVATIONS)}, got {self.activation!r}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


class Mlp:
    """Fully connected trunk with named linear output heads."""

    def __init__(
        self,
        name: str,
        in_dim: int,
        hidden: tuple[int, ...],
        heads: dict[str, int],
        rng: np.random.Generator,
        activation: str = "softplus",
    ):
        self.name = name
        self.activation = ACTIVATIONS[activation]
        self.layers: list[tuple[Parameter, Parameter]] = []
        self.heads: dict[str, tuple[Parameter, Parameter]] = {}
        d = in_dim
        for i, h in enumerate(hidden):
            self.layers.append(self._linear(f"{name}.hidden{i}", d, h, rng))
            d = h
        # log-scale heads start near zero so scales and rates begin near 1;
        # location heads keep full-size weights (both near zero is a saddle)
        for head, out in heads.items():
            gain = 0.1 if head.startswith("log_") else 1.0
            self.heads[head] = self._linear(f"{name}.{head}", d, out, rng, gain=gain)

    @staticmethod
    def _linear(prefix: str, fan_in: int, fan_out: int, rng, gain: float = 1.0) -> tuple[Parameter, Parameter]:
        bound = gain * np.sqrt(6.0 / (fan_in + fan_out))
        W = Parameter(rng.uniform(-bound, bound, size=(fan_in, fan_out)), name=f"{prefix}.W")
        b = Parameter(np.zeros((1, fan_out)), name=f"{prefix}.b")
        return W, b

    def parameters(self) -> list[Parameter]:
        out = []
        for W, b in self.layers + list(self.heads.values()):
            out.extend((W, b))
        return out

    def __call__(self, inp) -> dict[str, Tensor]:
        h = T.as_tensor(inp)
        for W, b in self.layers:
            h = self.activation(h @ W + b)
        return {name: h @ W + b for name, (W, b) in self.heads.items()}


def _cat(*parts):
    parts = [p for p in parts if p is not None and (not hasattr(p, "shape") or p.shape[1] > 0)]
    return parts[0] if len(parts) == 1 else T.concat(parts, axis=1)


class VFAE:
    """Parameter container plus the conditional distributions of the model."""

    def __init__(self, config: ModelConfig):
        self.config = config
        c = config
        rng = np.random.default_rng(c.seed)
        s_in = c.n_s if c.use_s else 0
        act = c.activation
        gauss = {"mu": c.z1_dim, "log_sigma": c.z1_dim}
        self.encoder_z1 = Mlp("encoder_z1", c.x_dim + s_in, c.hidden_z1_encoder, gauss, rng, act)
        self.classifier_y = Mlp("classifier_y", c.z1_dim, (), {"logits": c.n_classes}, rng, act)
        self.encoder_z2 = Mlp(
            "encoder_z2", c.z1_dim + c.n_classes, c.hidden_z2_encoder,
            {"mu": c.z2_dim, "log_sigma": c.z2_dim}, rng, act,
        )
        self.decoder_z1 = Mlp("decoder_z1", c.z2_dim + c.n_classes, c.hidden_z1_decoder, gauss, rng, act)
        if c.likelihood == "bernoulli":
            x_heads = {"logits": c.x_dim}
        elif c.likelihood == "poisson":
            x_heads = {"log_rate": c.x_dim}
        else:
            x_heads = {"mean_logits": c.x_dim, "log_sigma": c.x_dim}
        self.decoder_x = Mlp("decoder_x", c.z1_dim + s_in, c.hidden_x_decoder, x_heads, rng, act)

    @property
    def components(self) -> list[Mlp]:
        return [self.encoder_z1, self.classifier_y, self.encoder_z2, self.decoder_z1, self.decoder_x]

    def parameters(self) -> list[Parameter]:
        return [p for m in self.components for p in m.parameters()]

    def named_parameters(self) -> dict[str, Parameter]:
        return {p.name: p for p in self.parameters()}

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters().items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        params = self.named_parameters()
        missing = set(params) - set(state)
        extra = set(state) - set(params)
        if missing or extra:
            raise ValueError(f"state mismatch: missing={sorted(missing)} unexpected={sorted(extra)}")
        for name, p in params.items():
            if state[name].shape != p.data.shape:
                raise ValueError(f"{name}: shape {state[name].shape} != {p.data.shape}")
            p.data = np.array(state[name], dtype=np.float64)

    def copy(self) -> "VFAE":
        return copy.deepcopy(self)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    # -- conditionals ---------------------------------------------------------

    def _s(self, s):
        return s if self.config.use_s else None

    def q_z1(self, x, s) -> DiagGaussian:
        out = self.encoder_z1(_cat(T.as_tensor(x), self._s(s)))
        return DiagGaussian(out["mu"], out["log_sigma"])

    def q_y(self, z1) -> CategoricalDist:
        return CategoricalDist(self.classifier_y(z1)["logits"])

    def q_z2(self, z1, y_onehot) -> DiagGaussian:
        out = self.encoder_z2(_cat(z1, y_onehot))
        return DiagGaussian(out["mu"], out["log_sigma"])

    def p_z1(self, z2, y_onehot) -> DiagGaussian:
        out = self.decoder_z1(_cat(z2, y_onehot))
        return DiagGaussian(out["mu"], out["log_sigma"])

    def p_x(self, z1, s) -> Likelihood:
        out = self.decoder_x(_cat(z1, self._s(s)))
        return Likelihood.from_output(self.config.likelihood, out)


@dataclass
class Batch:
    """Minibatch: features, one-hot nuisance, one-hot labels and labeled mask."""

    x: np.ndarray
    s: np.ndarray
    y: np.ndarray
    labeled: np.ndarray

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64)
        self.s = np.asarray(self.s, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.float64)
        self.labeled = np.asarray(self.labeled, dtype=bool)
        n = len(self.x)
        if not (len(self.s) == len(self.y) == len(self.labeled) == n):
            raise ValueError("batch arrays have inconsistent row counts")
        if np.any(self.y[~self.labeled] != 0):
            raise ValueError("unlabeled rows must not carry label content")

    def __len__(self) -> int:
        return len(self.x)

    @property
    def s_labels(self) -> np.ndarray:
        return self.s.argmax(axis=1)

    @property
    def y_labels(self) -> np.ndarray:
        return self.y.argmax(axis=1)

    @classmethod
    def from_labels(cls, x, s, y, n_s: int, n_classes: int, labeled=None) -> "Batch":
        s = np.asarray(s, dtype=int)
        y = np.asarray(y, dtype=int)
        labeled = np.ones(len(x), dtype=bool) if labeled is None else np.asarray(labeled, dtype=bool)
        y1 = np.eye(n_classes)[y] * labeled[:, None]
        return cls(x, np.eye(n_s)[s], y1, labeled)


@dataclass
class Objective:
    """Weights and switches of the training loss.

    ``beta`` multiplies ``n * mmd_penalty`` where ``n`` is the batch size.
    ``supervised_only`` drops the unlabeled bound from the loss.
    """

    alpha: float = 1.0
    beta: float = 0.0
    use_mmd: bool = True
    supervised_only: bool = False

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0:
            raise ValueError("alpha and beta must be non-negative")


# -- bounds -------------------------------------------------------------------


def elbo_unsupervised(model: VFAE, batch: Batch, rng: np.random.Generator) -> Tensor:
    """Negative unsupervised bound summed over the batch (a loss)."""
    q = model.q_z1(batch.x, batch.s)
    z = sample_reparam(q, rng)
    recon = model.p_x(z, batch.s).log_prob(batch.x)
    return -T.sum(recon - kl_diag_gaussian_std(q))


def _z2_stage(model: VFAE, z1: Tensor, y_onehot: np.ndarray, log_q_z1: Tensor, rng):
    """Return (kl_z2, log p(z1|z2,y) - log q(z1|x,s)) per row."""
    qz2 = model.q_z2(z1, y_onehot)
    z2 = sample_reparam(qz2, rng)
    kl_z2 = kl_diag_gaussian_std(qz2)
    z1_term = gaussian_log_prob(model.p_z1(z2, y_onehot), z1) - log_q_z1
    return kl_z2, z1_term


def supervised_bound(model: VFAE, x, s, y, rng: np.random.Generator) -> Tensor:
    """Per-row lower bound on log p(x, y | s) for labeled rows (one-hot ``y``)."""
    q1 = model.q_z1(x, s)
    z1 = sample_reparam(q1, rng)
    recon = model.p_x(z1, s).log_prob(x)
    log_q_z1 = gaussian_log_prob(q1, z1)
    kl_z2, z1_term = _z2_stage(model, z1, np.asarray(y, dtype=np.float64), log_q_z1, rng)
    return -kl_z2 + recon + z1_term


def _unlabeled_terms(model: VFAE, z1: Tensor, log_q_z1: Tensor, rng):
    qy = model.q_y(z1)
    n, C = z1.shape[0], qy.n_classes
    pi = T.exp(qy.log_probs())
    mix = Tensor(np.zeros(n))
    for c in range(C):
        onehot = np.zeros((n, C))
        onehot[:, c] = 1.0
        kl_z2, z1_term = _z2_stage(model, z1, onehot, log_q_z1, rng)
        mix = mix + T.column(pi, c) * (z1_term - kl_z2)
    return kl_categorical_uniform(qy), mix


def unlabeled_bound(model: VFAE, x, s, rng: np.random.Generator) -> Tensor:
    """Per-row lower bound on log p(x | s) with y summed out exactly."""
    q1 = model.q_z1(x, s)
    z1 = sample_reparam(q1, rng)
    recon = model.p_x(z1, s).log_prob(x)
    log_q_z1 = gaussian_log_prob(q1, z1)
    kl_y, mix = _unlabeled_terms(model, z1, log_q_z1, rng)
    return -kl_y + recon + mix


@dataclass
class LossResult:
    loss: Tensor
    components: dict = field(default_factory=dict)
    z1: np.ndarray | None = None

    def __float__(self) -> float:
        return float(self.loss.data)


def vfae_loss(
    model: VFAE,
    batch: Batch,
    objective: Objective,
    rff: RffProjection | None,
    rng: np.random.Generator,
) -> LossResult:
    """Negative penalized bound for a batch mixing labeled and unlabeled rows.

    loss = -(sum L_s + sum L_u) + alpha * sum_labeled(-log q(y|z1))
           + beta * n * mmd_penalty(z1, s)
    """
    n = len(batch)
    lab = np.flatnonzero(batch.labeled)
    unl = np.flatnonzero(~batch.labeled)
    if objective.supervised_only:
        unl = unl[:0]

    q1 = model.q_z1(batch.x, batch.s)
    z1 = sample_reparam(q1, rng)
    recon = model.p_x(z1, batch.s).log_prob(batch.x)
    log_q_z1 = gaussian_log_prob(q1, z1)

    total_bound = Tensor(0.0)
    parts = dict.fromkeys(("reconstruction", "kl_z2", "kl_y", "z1_term", "classification", "mmd"), 0.0)

    if len(lab):
        z1_l = T.take_rows(z1, lab)
        lq_l = T.take_rows(log_q_z1, lab)
        kl_z2, z1_term = _z2_stage(model, z1_l, batch.y[lab], lq_l, rng)
        rec_l = T.take_rows(recon, lab)
        total_bound = total_bound + T.sum(rec_l - kl_z2 + z1_term)
        parts["reconstruction"] += float(rec_l.data.sum())
        parts["kl_z2"] += float(kl_z2.data.sum())
        parts["z1_term"] += float(z1_term.data.sum())
    if len(unl):
        z1_u = T.take_rows(z1, unl)
        lq_u = T.take_rows(log_q_z1, unl)
        kl_y, mix = _unlabeled_terms(model, z1_u, lq_u, rng)
        rec_u = T.take_rows(recon, unl)
        total_bound = total_bound + T.sum(rec_u - kl_y + mix)
        parts["reconstruction"] += float(rec_u.data.sum())
        parts["kl_y"] += float(kl_y.data.sum())
        parts["z1_term"] += float(mix.data.sum())

    loss = -total_bound
    if len(lab) and objective.alpha > 0:
        log_py = model.q_y(T.take_rows(z1, lab)).log_probs()
        nll = -T.sum(log_py * batch.y[lab])
        loss = loss + objective.alpha * nll
        parts["classification"] = float(objective.alpha * nll.data)
    if objective.use_mmd and objective.beta > 0 and rff is not None:
        pen = mmd_penalty(z1, batch.s_labels, rff, n_states=batch.s.shape[1])
        term = pen * (objective.beta * n)
        loss = loss + term
        parts["mmd"] = float(term.data)
    parts["total"] = float(loss.data)
    return LossResult(loss, parts, z1.data.copy())


# -- inference ----------------------------------------------------------------


def embed(model: VFAE, x, s, mode: str = "sample", rng: np.random.Generator | None = None) -> np.ndarray:
    """z1 for each row: a posterior sample (``mode="sample"``) or the mean."""
    q1 = model.q_z1(x, s)
    if mode == "mean":
        return q1.mu.data.copy()
    if mode != "sample":
        raise ValueError(f"mode must be 'sample' or 'mean', got {mode!r}")
    if rng is None:
        raise ValueError("sample mode needs an rng")
    return sample_reparam(q1, rng).data


def predict(model: VFAE, x, s, mode: str = "sample", rng: np.random.Generator | None = None) -> CategoricalDist:
    z1 = embed(model, x, s, mode=mode, rng=rng)
    return CategoricalDist(model.q_y(z1).logits.detach())


def log_marginal_is(
    model: VFAE, x, s, rng: np.random.Generator, n_samples: int = 10_000, chunk: int = 1000
) -> tuple[np.ndarray, np.ndarray]:
    """Importance-sampled log p(x|s) for the unsupervised model.

    Proposal q(z|x,s), prior N(0, I).  Returns per-row estimates and the
    delta-method standard error of each.
    """
    x = np.asarray(x, dtype=np.float64)
    s = np.asarray(s, dtype=np.float64)
    q = model.q_z1(x, s)
    mu, ls = q.mu.data, q.log_sigma.data
    n, d = mu.shape
    logw = np.empty((n, n_samples))
    for start in range(0, n_samples, chunk):
        k = min(chunk, n_samples - start)
        eps = rng.standard_normal((k, n, d))
        z = mu[None] + np.exp(ls)[None] * eps
        zf = z.reshape(k * n, d)
        xr = np.tile(x, (k, 1))
        sr = np.tile(s, (k, 1))
        log_px = model.p_x(Tensor(zf), sr).log_prob(xr).data.reshape(k, n)
        log_prior = -0.5 * (zf**2 + np.log(2 * np.pi)).sum(axis=1).reshape(k, n)
        log_q = (-0.5 * (eps**2 + np.log(2 * np.pi)) - ls[None]).sum(axis=2)
        logw[:, start : start + k] = (log_px + log_prior - log_q).T
    m = logw.max(axis=1, keepdims=True)
    w = np.exp(logw - m)
    est = m[:, 0] + np.log(w.mean(axis=1))
    se = w.std(axis=1, ddof=1) / (np.sqrt(n_samples) * w.mean(axis=1))
    return est, se
