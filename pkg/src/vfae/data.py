"""Tabular datasets: CSV ingestion, splits, preprocessing, synthetic data, export.

Schema files are JSON::

    {
      "version": 1,
      "s_column": "sex",
      "y_column": "income",
      "s_values": ["Male", "Female"],          # optional, fixes state order
      "y_values": ["<=50K", ">50K"],           # optional
      "s_threshold": null,                     # optional: s = value > threshold
      "features": [
        {"name": "age", "kind": "numeric"},
        {"name": "workclass", "kind": "categorical"},
        {"name": "w_great", "kind": "count"}
      ],
      "max_count_features": 5000
    }

An empty y cell marks an unlabeled row.  Categorical vocabularies are fitted
on the training split only; values first seen outside it land in an
``<unseen>`` column.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

SPLITS = ("train", "validation", "test")
UNSEEN = "<unseen>"
SCHEMA_VERSION = 1


class DataError(ValueError):
    """Malformed dataset, schema or split definition."""


@dataclass
class TabularDataset:
    """Features, nuisance states, labels and split assignment.

    ``y_known`` marks rows whose label is known at all (used for evaluation);
    ``labeled`` marks rows whose label the training loss may use.
    """

    X: np.ndarray
    s: np.ndarray
    y: np.ndarray
    n_s: int
    n_classes: int
    split: np.ndarray
    y_known: np.ndarray | None = None
    labeled: np.ndarray | None = None
    feature_names: list[str] = field(default_factory=list)
    s_names: list[str] = field(default_factory=list)
    y_names: list[str] = field(default_factory=list)
    z_true: np.ndarray | None = None

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        self.s = np.asarray(self.s, dtype=int)
        self.y = np.asarray(self.y, dtype=int)
        self.split = np.asarray(self.split, dtype=object)
        n = len(self.X)
        if self.y_known is None:
            self.y_known = np.ones(n, dtype=bool)
        if self.labeled is None:
            self.labeled = self.y_known.copy()
        self.y_known = np.asarray(self.y_known, dtype=bool)
        self.labeled = np.asarray(self.labeled, dtype=bool) & self.y_known
        for name in ("s", "y", "split", "y_known", "labeled"):
            if len(getattr(self, name)) != n:
                raise DataError(f"{name} has {len(getattr(self, name))} rows, X has {n}")
        bad = set(np.unique(self.split)) - set(SPLITS)
        if bad:
            raise DataError(f"unknown split names {sorted(bad)}")
        if not self.feature_names:
            self.feature_names = [f"x{i}" for i in range(self.X.shape[1])]

    def __len__(self) -> int:
        return len(self.X)

    @property
    def x_dim(self) -> int:
        return self.X.shape[1]

    def indices(self, split: str) -> np.ndarray:
        return np.flatnonzero(self.split == split)

    def has_split(self, split: str) -> bool:
        return bool(np.any(self.split == split))

    def subset(self, rows) -> "TabularDataset":
        rows = self.indices(rows) if isinstance(rows, str) else np.asarray(rows)
        return replace(
            self,
            X=self.X[rows],
            s=self.s[rows],
            y=self.y[rows],
            split=self.split[rows],
            y_known=self.y_known[rows],
            labeled=self.labeled[rows],
            z_true=None if self.z_true is None else self.z_true[rows],
        )

    def s_onehot(self) -> np.ndarray:
        return np.eye(self.n_s)[self.s]

    def y_onehot(self) -> np.ndarray:
        return np.eye(self.n_classes)[self.y] * self.labeled[:, None]


# -- splits -------------------------------------------------------------------


def assign_splits(n: int, fractions=(0.6, 0.2, 0.2), seed: int = 0) -> np.ndarray:
    """Seeded random partition of ``n`` rows into train/validation/test."""
    fr = np.asarray(fractions, dtype=float)
    if len(fr) != 3 or np.any(fr < 0) or not np.isclose(fr.sum(), 1.0):
        raise DataError(f"split fractions must be three non-negative numbers summing to 1, got {fractions}")
    perm = np.random.default_rng(seed).permutation(n)
    n_train = int(round(fr[0] * n))
    n_val = int(round(fr[1] * n))
    out = np.empty(n, dtype=object)
    out[perm[:n_train]] = "train"
    out[perm[n_train : n_train + n_val]] = "validation"
    out[perm[n_train + n_val :]] = "test"
    return out


def read_split_files(paths: dict[str, str | Path], n: int) -> np.ndarray:
    """Split assignment from per-split files of row indices (one per line)."""
    out = np.full(n, None, dtype=object)
    for name, path in paths.items():
        if name not in SPLITS:
            raise DataError(f"unknown split {name!r}")
        try:
            idx = np.array([int(t) for t in Path(path).read_text().split()], dtype=int)
        except ValueError:
            raise DataError(f"{path}: row indices must be integers") from None
        if np.any((idx < 0) | (idx >= n)):
            raise DataError(f"{path}: row index out of range for {n} rows")
        if np.any(out[idx] != None):  # noqa: E711
            raise DataError(f"{path}: rows assigned to more than one split")
        out[idx] = name
    if np.any(out == None):  # noqa: E711
        raise DataError("split files do not cover every row")
    return out


def write_split_files(split: np.ndarray, directory: str | Path) -> dict[str, Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = {}
    for name in SPLITS:
        p = directory / f"{name}.idx"
        np.savetxt(p, np.flatnonzero(split == name), fmt="%d")
        paths[name] = p
    return paths


# -- CSV ingestion ------------------------------------------------------------


def load_schema(path: str | Path) -> dict:
    schema = json.loads(Path(path).read_text())
    if schema.get("version", SCHEMA_VERSION) != SCHEMA_VERSION:
        raise DataError(f"{path}: unsupported schema version {schema.get('version')}")
    for key in ("s_column", "y_column", "features"):
        if key not in schema:
            raise DataError(f"{path}: schema is missing {key!r}")
    for f in schema["features"]:
        if f.get("kind") not in ("numeric", "categorical", "count"):
            raise DataError(f"feature {f.get('name')!r}: kind must be numeric, categorical or count")
    return schema


def _read_rows(path: Path, needed: list[str]) -> tuple[list[str], list[list[str]]]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        missing = [c for c in needed if c not in header]
        if missing:
            raise DataError(f"{path}: missing columns {missing}")
        rows = []
        for row in reader:
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise DataError(
                    f"{path}, line {reader.line_num}: expected {len(header)} fields, got {len(row)}"
                )
            rows.append([c.strip() for c in row])
    return header, rows


def _to_float(value: str, path: Path, line: int, column: str) -> float:
    try:
        return float(value)
    except ValueError:
        raise DataError(f"{path}, line {line}: column {column!r} value {value!r} is not numeric") from None


def load_csv(
    path: str | Path,
    schema: dict | str | Path,
    split_spec: dict | None = None,
) -> TabularDataset:
    """Read a CSV according to ``schema`` and assign splits.

    ``split_spec`` is either ``{"files": {"train": path, ...}}`` or
    ``{"fractions": [train, validation, test], "seed": int}`` (default
    60/20/20 with seed 0).  Split files win when both are present.
    """
    path = Path(path)
    if not isinstance(schema, dict):
        schema = load_schema(schema)
    split_spec = split_spec or {}
    feats = schema["features"]
    s_col, y_col = schema["s_column"], schema["y_column"]
    header, rows = _read_rows(path, [s_col, y_col] + [f["name"] for f in feats])
    col = {name: i for i, name in enumerate(header)}
    n = len(rows)
    if n == 0:
        raise DataError(f"{path}: no data rows")

    if split_spec.get("files"):
        split = read_split_files(split_spec["files"], n)
    else:
        split = assign_splits(n, split_spec.get("fractions", (0.6, 0.2, 0.2)), split_spec.get("seed", 0))
    train = split == "train"

    # nuisance variable
    raw_s = [r[col[s_col]] for r in rows]
    if schema.get("s_threshold") is not None:
        thr = float(schema["s_threshold"])
        s = np.array([_to_float(v, path, i + 2, s_col) > thr for i, v in enumerate(raw_s)], dtype=int)
        s_names = [f"<={thr:g}", f">{thr:g}"]
    else:
        s_names = list(schema.get("s_values") or sorted(set(raw_s)))
        lookup = {v: i for i, v in enumerate(s_names)}
        unknown = sorted(set(raw_s) - set(lookup))
        if unknown:
            raise DataError(f"{path}: s values {unknown} not declared in schema")
        s = np.array([lookup[v] for v in raw_s], dtype=int)

    # label, possibly missing
    raw_y = [r[col[y_col]] for r in rows]
    y_known = np.array([v != "" for v in raw_y])
    y_names = list(schema.get("y_values") or sorted({v for v in raw_y if v != ""}))
    ylookup = {v: i for i, v in enumerate(y_names)}
    unknown = sorted({v for v in raw_y if v != ""} - set(ylookup))
    if unknown:
        raise DataError(f"{path}: y values {unknown} not declared in schema")
    y = np.array([ylookup.get(v, 0) for v in raw_y], dtype=int)

    blocks, names = [], []
    count_cols, count_names = [], []
    for f in feats:
        j, name = col[f["name"]], f["name"]
        if f["kind"] == "categorical":
            values = [r[j] for r in rows]
            vocab = sorted({v for v, t in zip(values, train) if t})
            index = {v: i for i, v in enumerate(vocab)}
            block = np.zeros((n, len(vocab) + 1))
            for i, v in enumerate(values):
                block[i, index.get(v, len(vocab))] = 1.0
            blocks.append(block)
            names.extend([f"{name}={v}" for v in vocab] + [f"{name}={UNSEEN}"])
        else:
            colvals = np.array([_to_float(r[j], path, i + 2, name) for i, r in enumerate(rows)])
            if f["kind"] == "count":
                if np.any(colvals < 0) or np.any(colvals != np.floor(colvals)):
                    raise DataError(f"{path}: count column {name!r} has non-integer or negative values")
                count_cols.append(colvals)
                count_names.append(name)
            else:
                blocks.append(colvals[:, None])
                names.append(name)
    if count_cols:
        counts = np.stack(count_cols, axis=1)
        cap = int(schema.get("max_count_features", 5000))
        if counts.shape[1] > cap:
            totals = counts[train].sum(axis=0)
            keep = np.sort(np.argsort(-totals, kind="stable")[:cap])
            counts = counts[:, keep]
            count_names = [count_names[k] for k in keep]
        blocks.append(counts)
        names.extend(count_names)
    X = np.hstack(blocks) if blocks else np.zeros((n, 0))
    return TabularDataset(
        X=X, s=s, y=y, n_s=len(s_names), n_classes=max(len(y_names), 1), split=split,
        y_known=y_known, feature_names=names, s_names=s_names, y_names=y_names,
    )


def save_csv(d: TabularDataset, path: str | Path) -> dict:
    """Write a dataset as CSV plus a matching schema; returns the schema."""
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(list(d.feature_names) + ["s", "y"])
        for i in range(len(d)):
            w.writerow([repr(float(v)) for v in d.X[i]] + [str(d.s[i]), str(d.y[i]) if d.y_known[i] else ""])
    return {
        "version": SCHEMA_VERSION,
        "s_column": "s",
        "y_column": "y",
        "s_values": [str(k) for k in range(d.n_s)],
        "y_values": [str(k) for k in range(d.n_classes)],
        "features": [{"name": f, "kind": "numeric"} for f in d.feature_names],
    }


# -- preprocessing ------------------------------------------------------------


def binarize(d: TabularDataset) -> TabularDataset:
    """Map every feature to 1 if it is positive, else 0."""
    return replace(d, X=(d.X > 0).astype(np.float64))


def minmax_scale(d: TabularDataset, margin: float = 0.0) -> TabularDataset:
    """Scale features into ``[margin, 1 - margin]`` using training-split ranges."""
    train = d.X[d.split == "train"] if d.has_split("train") else d.X
    lo, hi = train.min(axis=0), train.max(axis=0)
    span = np.where(hi > lo, hi - lo, 1.0)
    X = (d.X - lo) / span
    X = np.clip(X, 0.0, 1.0) * (1.0 - 2 * margin) + margin
    return replace(d, X=X)


def hide_labels(d: TabularDataset, s_value: int, splits=("train", "validation")) -> TabularDataset:
    """Treat labels of rows with ``s == s_value`` as missing during training."""
    hide = (d.s == s_value) & np.isin(d.split, splits)
    return replace(d, labeled=d.labeled & ~hide)


# -- synthetic data -----------------------------------------------------------


@dataclass
class SyntheticSpec:
    """Generator settings for data with a known nuisance factor.

    ``z ~ N(0, I)`` of size ``latent_dim``; the label is ``y = 1[z . w + e > 0]``
    with ``e ~ N(0, label_noise^2)``; ``s`` copies ``y`` with probability
    ``|correlation|`` (its complement when negative) and is drawn from
    ``group_weights`` otherwise; ``x = A z + shift * v_s + noise * eps``
    where the ``v_s`` are orthonormal directions outside the span of ``A``.
    """

    n: int = 2000
    latent_dim: int = 4
    x_dim: int = 12
    n_s: int = 2
    group_weights: tuple[float, ...] | None = None
    correlation: float = 0.4
    shift: float = 2.0
    noise: float = 1.0
    label_noise: float = 0.0
    seed: int = 0
    fractions: tuple[float, float, float] = (0.6, 0.2, 0.2)

    def __post_init__(self):
        if not -1.0 <= self.correlation <= 1.0:
            raise ValueError("correlation must lie in [-1, 1]")
        if self.n < 1 or self.latent_dim < 1 or self.n_s < 1:
            raise ValueError("counts must be at least 1")
        if self.x_dim < self.latent_dim + self.n_s:
            raise ValueError("x_dim must be at least latent_dim + n_s")


def generate_synthetic(spec: SyntheticSpec) -> TabularDataset:
    rng = np.random.default_rng(spec.seed)
    K = spec.n_s
    weights = np.full(K, 1.0 / K) if spec.group_weights is None else np.asarray(spec.group_weights, float)
    weights = weights / weights.sum()

    # fixed geometry
    basis, _ = np.linalg.qr(rng.standard_normal((spec.x_dim, spec.x_dim)))
    A = basis[:, : spec.latent_dim] * rng.uniform(1.0, 2.0, size=spec.latent_dim)
    shift_dirs = basis[:, spec.latent_dim : spec.latent_dim + K].T
    w = rng.standard_normal(spec.latent_dim)
    w /= np.linalg.norm(w)

    z = rng.standard_normal((spec.n, spec.latent_dim))
    y = (z @ w + spec.label_noise * rng.standard_normal(spec.n) > 0).astype(int)
    tied = rng.random(spec.n) < abs(spec.correlation)
    target = y if spec.correlation >= 0 else 1 - y
    s_free = rng.choice(K, size=spec.n, p=weights)
    s = np.where(tied, np.minimum(target, K - 1), s_free)
    X = z @ A.T + spec.shift * shift_dirs[s] + spec.noise * rng.standard_normal((spec.n, spec.x_dim))
    split = assign_splits(spec.n, spec.fractions, seed=spec.seed + 1)
    return TabularDataset(
        X=X, s=s, y=y, n_s=K, n_classes=2, split=split, z_true=z,
        s_names=[str(k) for k in range(K)], y_names=["0", "1"],
    )


# -- embeddings ---------------------------------------------------------------


def export_embeddings(e, path: str | Path) -> tuple[Path, Path]:
    """Write an EmbeddingSet as CSV plus a JSON provenance sidecar."""
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            d = e.z.shape[1]
            w.writerow([f"z_{i}" for i in range(d)] + ["s", "y"])
            for i in range(len(e.z)):
                yv = "" if e.y is None else str(int(e.y[i]))
                w.writerow([repr(float(v)) for v in e.z[i]] + [str(int(e.s[i])), yv])
        side = path.with_name(path.name + ".provenance.json")
        side.write_text(json.dumps(e.provenance, indent=2, sort_keys=True, default=str))
    except OSError as exc:
        raise OSError(f"cannot write embeddings to {path}: {exc}") from exc
    return path, side


def load_embeddings(path: str | Path):
    from .evaluation import EmbeddingSet

    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = list(reader)
    d = len(header) - 2
    z = np.array([[float(v) for v in r[:d]] for r in rows]).reshape(len(rows), d)
    s = np.array([int(r[d]) for r in rows], dtype=int)
    ys = [r[d + 1] for r in rows]
    y = None if all(v == "" for v in ys) else np.array([int(v) if v else -1 for v in ys])
    side = path.with_name(path.name + ".provenance.json")
    prov = json.loads(side.read_text()) if side.exists() else {}
    return EmbeddingSet(z=z, s=s, y=y, provenance=prov)
