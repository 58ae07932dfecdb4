"""Optimization loop: Adam, parameter averaging, batching and beta search."""

from __future__ import annotations

import csv
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable

import numpy as np

from . import tensor as T
from .data import TabularDataset
from .distributions import sample_reparam
from .evaluation import EmbeddingSet, fit_linear_probe, probe_accuracy
from .mmd import RffProjection, median_heuristic_gamma
from .models import VFAE, Batch, Objective, embed, predict, vfae_loss
from .optim import Adam, AveragedParams, TrainingDiverged

logger = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    epochs: int = 100
    batch_size: int = 100
    seed: int = 0
    alpha: float = 1.0
    beta: float = 0.0
    use_mmd: bool = True
    supervised_only: bool = False
    stratify_by_s: bool = True
    mixing_ratio: float | None = None
    beta_grid: tuple[float, ...] = (0.0, 1.0, 10.0, 100.0)
    patience: int = 10
    ema_decay: float = 0.999
    lr: float = 1e-3
    gamma: float | None = None
    rff_features: int = 500
    rff_convention: str = "standard"
    eval_mode: str = "sample"
    workers: int = 1

    def __post_init__(self):
        if self.batch_size < 1 or (self.batch_size < 2 and self.beta > 0 and self.use_mmd):
            raise ValueError("batch_size must be >= 2 when the MMD penalty is active")
        if self.mixing_ratio is not None and not 0.0 < self.mixing_ratio < 1.0:
            raise ValueError("mixing_ratio must lie strictly between 0 and 1")

    def objective(self) -> Objective:
        return Objective(self.alpha, self.beta, self.use_mmd, self.supervised_only)

    def to_dict(self) -> dict:
        return asdict(self)


def _streams(seed: int) -> dict[str, np.random.Generator]:
    names = ("batches", "noise", "rff", "eval")
    seqs = np.random.SeedSequence(seed).spawn(len(names))
    return {n: np.random.default_rng(s) for n, s in zip(names, seqs)}


def _stratified_order(strata: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    # each stratum is spread evenly along the epoch: sort rows by their
    # fractional rank inside their stratum
    key = np.empty(len(strata))
    for g in np.unique(strata):
        rows = np.flatnonzero(strata == g)
        rows = rows[rng.permutation(len(rows))]
        key[rows] = (np.arange(len(rows)) + rng.random()) / len(rows)
    return np.argsort(key, kind="stable")


def make_batches(dataset: TabularDataset, config: TrainConfig, epoch_seed: int) -> list[Batch]:
    """Minibatches for one epoch over ``dataset`` (all of its rows).

    Without ``mixing_ratio`` the batches partition the rows; with
    ``stratify_by_s`` every batch reproduces the dataset's s proportions to
    within one row.  With ``mixing_ratio`` every batch holds that fraction of
    labeled rows and the rest unlabeled; the smaller pool is cycled.
    """
    n = len(dataset)
    if n == 0:
        raise ValueError("empty dataset")
    rng = np.random.default_rng(epoch_seed)
    bs = config.batch_size
    if config.mixing_ratio is not None and dataset.labeled.any() and (~dataset.labeled).any():
        groups = []
        n_lab = max(1, int(round(bs * config.mixing_ratio)))
        for mask, per_batch in ((dataset.labeled, n_lab), (~dataset.labeled, bs - n_lab)):
            rows = np.flatnonzero(mask)
            strata = dataset.s[rows] if config.stratify_by_s else np.zeros(len(rows))
            groups.append((rows[_stratified_order(strata, rng)], per_batch))
        n_batches = max(math.ceil(len(r) / k) for r, k in groups)
        chunks = []
        for rows, k in groups:
            reps = math.ceil(n_batches * k / len(rows))
            seq = np.concatenate([rows] + [rows[rng.permutation(len(rows))] for _ in range(reps - 1)])
            chunks.append(seq[: n_batches * k].reshape(n_batches, k))
        index_batches = [np.concatenate([c[b] for c in chunks]) for b in range(n_batches)]
    else:
        strata = dataset.s if config.stratify_by_s else np.zeros(n, dtype=int)
        order = _stratified_order(strata, rng) if config.stratify_by_s else rng.permutation(n)
        index_batches = [order[i : i + bs] for i in range(0, n, bs)]
    out = []
    S, Y = dataset.s_onehot(), dataset.y_onehot()
    for idx in index_batches:
        idx = idx[rng.permutation(len(idx))]
        out.append(Batch(dataset.X[idx], S[idx], Y[idx], dataset.labeled[idx]))
    return out


def _full_batch(d: TabularDataset) -> Batch:
    return Batch(d.X, d.s_onehot(), d.y_onehot(), d.labeled)


def y_accuracy(model: VFAE, d: TabularDataset, mode: str, rng) -> float:
    rows = d.y_known
    if not rows.any():
        return float("nan")
    probs = predict(model, d.X[rows], d.s_onehot()[rows], mode=mode, rng=rng).probs()
    return float(np.mean(probs.argmax(axis=1) == d.y[rows]))


LOG_COLUMNS = (
    "epoch",
    "total",
    "reconstruction",
    "kl_z2",
    "kl_y",
    "z1_term",
    "classification",
    "mmd",
    "validation_objective",
    "validation_y_accuracy",
)


@dataclass
class TrainResult:
    model: VFAE
    averaged: dict[str, np.ndarray]
    best: dict[str, np.ndarray]
    log: list[dict] = field(default_factory=list)
    step_log: list[dict] = field(default_factory=list)
    rff: RffProjection | None = None
    best_epoch: int = 0

    def averaged_model(self, which: str = "best") -> VFAE:
        m = self.model.copy()
        m.load_state_dict(self.best if which == "best" else self.averaged)
        return m


def build_projection(model: VFAE, d: TabularDataset, config: TrainConfig, rng) -> RffProjection:
    gamma = config.gamma
    if gamma is None:
        # on z1 samples, since the penalty itself sees samples
        first = make_batches(d, config, epoch_seed=config.seed)[0]
        gamma = median_heuristic_gamma(sample_reparam(model.q_z1(first.x, first.s), rng).data)
    seed = int(rng.integers(2**31))
    return RffProjection(model.config.z1_dim, config.rff_features, gamma, seed, config.rff_convention)


def train(model: VFAE, dataset: TabularDataset, config: TrainConfig) -> TrainResult:
    """Fit ``model`` on the training split, early-stopping on validation.

    The model object is updated in place (raw parameters); averaged and
    best-validation averaged parameters are returned alongside the log.
    """
    streams = _streams(config.seed)
    train_d = dataset.subset("train") if dataset.has_split("train") else dataset
    val_d = dataset.subset("validation") if dataset.has_split("validation") else None
    objective = config.objective()
    rff = build_projection(model, train_d, config, streams["rff"])
    opt = Adam(model.parameters(), lr=config.lr)
    avg = AveragedParams(model.parameters(), config.ema_decay)
    params = model.parameters()
    model.zero_grad()

    log: list[dict] = []
    step_log: list[dict] = []
    best_score, best_state, best_epoch, stale = -math.inf, None, 0, 0
    epoch_seeds = streams["batches"].integers(2**31, size=config.epochs)
    last_good = model.state_dict()
    for epoch in range(config.epochs):
        sums = dict.fromkeys(LOG_COLUMNS[1:8], 0.0)
        n_rows = 0
        for batch in make_batches(train_d, config, int(epoch_seeds[epoch])):
            try:
                res = vfae_loss(model, batch, objective, rff, streams["noise"])
            except T.NonFiniteError as exc:
                raise TrainingDiverged(f"epoch {epoch}: {exc}", last_good, epoch) from exc
            if not math.isfinite(res.components["total"]):
                raise TrainingDiverged(f"epoch {epoch}: loss is not finite", last_good, epoch)
            step_log.append(dict(res.components))
            T.backward(res.loss)
            try:
                opt.step()
            except TrainingDiverged as exc:
                raise TrainingDiverged(f"epoch {epoch}: {exc}", last_good, epoch) from exc
            avg.update(params)
            for k in sums:
                sums[k] += res.components[k]
            n_rows += len(batch)
        last_good = model.state_dict()
        row = {"epoch": epoch, **{k: v / n_rows for k, v in sums.items()}}

        averaged = avg.averaged()
        if val_d is not None and len(val_d):
            probe = model.copy()
            probe.load_state_dict(averaged)
            eval_rng = np.random.default_rng(config.seed + 7919)
            vres = vfae_loss(probe, _full_batch(val_d), objective, rff, eval_rng)
            row["validation_objective"] = vres.components["total"] / len(val_d)
            row["validation_y_accuracy"] = y_accuracy(probe, val_d, config.eval_mode, eval_rng)
            score = -row["validation_objective"]
        else:
            row["validation_objective"] = float("nan")
            row["validation_y_accuracy"] = float("nan")
            score = -row["total"]
        log.append(row)
        logger.debug("epoch %d: %s", epoch, row)

        if score > best_score:
            best_score, best_state, best_epoch, stale = score, averaged, epoch, 0
        else:
            stale += 1
            if val_d is not None and config.patience and stale >= config.patience:
                break
    return TrainResult(model, avg.averaged(), best_state, log, step_log, rff, best_epoch)


def write_log(log: list[dict], path: str | Path) -> None:
    """One CSV row per epoch."""
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=LOG_COLUMNS, extrasaction="ignore")
        w.writeheader()
        for row in log:
            w.writerow({k: repr(float(v)) if k != "epoch" else v for k, v in row.items()})


@dataclass
class BetaSelection:
    best_beta: float
    table: list[dict]
    best_index: int = 0
    models: list[VFAE] | None = None

    @property
    def best_model(self) -> VFAE:
        if self.models is None:
            raise ValueError("models were not kept; pass keep_models=True")
        return self.models[self.best_index]


def _beta_run(args):
    model_factory, dataset, beta, config, index = args
    seed = int(np.random.SeedSequence([config.seed, index]).generate_state(1)[0])
    cfg = replace(config, beta=beta, seed=seed)
    model = model_factory(seed)
    result = train(model, dataset, cfg)
    m = result.averaged_model("best")
    rng = np.random.default_rng(seed + 1)
    tr, va = dataset.subset("train"), dataset.subset("validation")
    z_tr = embed(m, tr.X, tr.s_onehot(), cfg.eval_mode, rng)
    z_va = embed(m, va.X, va.s_onehot(), cfg.eval_mode, rng)
    probe = fit_linear_probe(EmbeddingSet(z_tr, tr.s, tr.y, {"beta": beta}), "s")
    s_acc = probe_accuracy(probe, z_va, va.s)
    chance = float(np.bincount(va.s, minlength=dataset.n_s).max() / len(va.s))
    y_acc = y_accuracy(m, va, cfg.eval_mode, rng)
    score = y_acc - max(0.0, s_acc - chance)
    row = {
        "beta": beta,
        "seed": seed,
        "validation_y_accuracy": y_acc,
        "probe_s_accuracy": s_acc,
        "chance_s": chance,
        "score": score,
        "epochs_run": len(result.log),
    }
    return row, m


def select_beta(
    model_factory: Callable[[int], VFAE],
    dataset: TabularDataset,
    grid,
    config: TrainConfig,
    keep_models: bool = False,
) -> BetaSelection:
    """Train one model per beta and pick the best validation composite.

    score = validation y-accuracy - max(0, linear probe s-accuracy - chance).
    """
    grid = list(grid)
    if not grid:
        raise ValueError("beta grid is empty")
    if not dataset.has_split("validation"):
        raise ValueError("beta selection needs a validation split")
    jobs = [(model_factory, dataset, float(b), config, i) for i, b in enumerate(grid)]
    if config.workers > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            runs = list(pool.map(_beta_run, jobs))
    else:
        runs = [_beta_run(j) for j in jobs]
    table = [row for row, _ in runs]
    best = max(range(len(table)), key=lambda i: (table[i]["score"], -i))
    return BetaSelection(table[best]["beta"], table, best, [m for _, m in runs] if keep_models else None)
