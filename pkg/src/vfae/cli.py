"""Command-line interface: ``vfae {train,evaluate,embed,mmd-test,select-beta}``.

Configuration is resolved from, in increasing precedence: built-in defaults,
a named preset, a key=value config file (``--config``) and explicit flags.
Config files hold one ``key = value`` per line; ``#`` starts a comment.
Tuples are comma separated.  The resolved config, with the source of every
value, is written to ``config.json`` in the output directory before any
work starts.

Exit codes: 0 success, 1 invalid input or config, 2 training diverged,
3 I/O error.  Environment variables are never consulted.
"""

from __future__ import annotations

import argparse
import csv
import difflib
import json
import sys
from dataclasses import fields
from functools import partial
from pathlib import Path

import numpy as np

from . import data as D
from .evaluation import EmbeddingSet, evaluate_model, format_report, write_report
from .mmd import CONVENTIONS, RffProjection, median_heuristic_gamma, mmd_exact, mmd_rff
from .models import VFAE, ModelConfig, embed
from .optim import TrainingDiverged
from .presets import PRESETS, get_preset
from .tensor import NonFiniteError, load_parameters, save_parameters
from .training import TrainConfig, select_beta, train, write_log

EXIT_OK, EXIT_INVALID, EXIT_DIVERGED, EXIT_IO = 0, 1, 2, 3
CONFIG_VERSION = 1


class ConfigError(ValueError):
    """One or more configuration problems, reported together."""

    def __init__(self, problems: list[str]):
        self.problems = problems
        super().__init__("; ".join(problems))


def _bool(v: str) -> bool:
    low = v.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {v!r}")


def _int_tuple(v: str) -> tuple[int, ...]:
    return tuple(int(p) for p in v.split(",") if p.strip())


def _float_tuple(v: str) -> tuple[float, ...]:
    return tuple(float(p) for p in v.split(",") if p.strip())


def _opt_float(v: str) -> float | None:
    return None if v.strip().lower() in ("none", "median", "") else float(v)


def _choice(options):
    def parse(v: str) -> str:
        if v not in options:
            raise ValueError(f"expected one of {list(options)}, got {v!r}")
        return v

    return parse


def _opt_str(v: str) -> str | None:
    return None if v.strip().lower() in ("none", "") else v


# key -> (parser, default, help)
KEYS: dict[str, tuple] = {
    "data": (str, None, "dataset CSV, or 'synthetic' for generated data"),
    "schema": (_opt_str, None, "JSON schema describing the CSV columns"),
    "splits": (_opt_str, None, "directory of train.idx/validation.idx/test.idx files"),
    "split_fractions": (_float_tuple, (0.6, 0.2, 0.2), "train,validation,test fractions"),
    "split_seed": (int, 0, "seed of the fractional split"),
    "synthetic_n": (int, 2000, "rows of generated data"),
    "synthetic_seed": (int, 0, "seed of generated data"),
    "synthetic_correlation": (float, 0.4, "s-y correlation of generated data"),
    "synthetic_label_noise": (float, 0.0, "label noise of generated data"),
    "preset": (_opt_str, None, f"one of {sorted(PRESETS)}"),
    "preprocess": (_choice(("none", "binarize", "minmax", "hide_target_labels")), "none", "feature preprocessing"),
    "hidden_z1_encoder": (_int_tuple, (100,), "hidden sizes of q(z1|x,s)"),
    "hidden_x_decoder": (_int_tuple, (100,), "hidden sizes of p(x|z1,s)"),
    "hidden_z2_encoder": (_int_tuple, (100,), "hidden sizes of q(z2|z1,y)"),
    "hidden_z1_decoder": (_int_tuple, (100,), "hidden sizes of p(z1|z2,y)"),
    "z1_dim": (int, 50, "dimension of z1"),
    "z2_dim": (int, 50, "dimension of z2"),
    "likelihood": (str, "bernoulli", "bernoulli, poisson or gaussian_sigmoid_mean"),
    "activation": (str, "softplus", "hidden activation"),
    "use_s": (_bool, True, "feed s to the encoder and decoder"),
    "alpha": (float, 1.0, "weight of the labeled classification term"),
    "beta": (float, 0.0, "MMD weight (multiplied by the batch size)"),
    "use_mmd": (_bool, True, "enable the MMD penalty"),
    "supervised_only": (_bool, False, "drop the unlabeled bound"),
    "gamma": (_opt_float, None, "kernel gamma, or 'median' for the median heuristic"),
    "rff_features": (int, 500, "random Fourier features D"),
    "rff_convention": (_choice(CONVENTIONS), "standard", "RFF scale convention"),
    "epochs": (int, 100, "maximum epochs"),
    "batch_size": (int, 100, "minibatch size"),
    "patience": (int, 10, "early-stopping patience in epochs"),
    "ema_decay": (float, 0.999, "decay of the parameter average"),
    "lr": (float, 1e-3, "Adam learning rate"),
    "stratify_by_s": (_bool, True, "keep s proportions in every batch"),
    "mixing_ratio": (_opt_float, None, "labeled fraction per batch, or 'none'"),
    "beta_grid": (_float_tuple, (0.0, 1.0, 10.0, 100.0), "beta values for select-beta"),
    "workers": (int, 1, "parallel processes for select-beta"),
    "eval_mode": (_choice(("sample", "mean")), "sample", "embedding mode"),
    "seed": (int, 0, "master seed"),
    "out": (str, None, "output directory"),
}
_MODEL_KEYS = {f.name for f in fields(ModelConfig)} - {"x_dim", "n_s", "n_classes", "seed"}
_TRAIN_KEYS = {f.name for f in fields(TrainConfig)} - {"seed"}


def parse_config_file(path: str | Path) -> tuple[dict[str, str], list[str]]:
    """Raw string values and problems (unknown keys, malformed lines)."""
    values, problems = {}, []
    text = Path(path).read_text()
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            problems.append(f"{path}, line {lineno}: expected 'key = value'")
            continue
        key, value = (p.strip() for p in line.split("=", 1))
        if key not in KEYS:
            problems.append(f"{path}, line {lineno}: unknown key {key!r}")
            continue
        values[key] = value
    return values, problems


def write_config_file(values: dict, path: str | Path) -> None:
    lines = []
    for k, v in values.items():
        if isinstance(v, (tuple, list)):
            v = ",".join(str(x) for x in v)
        lines.append(f"{k} = {'none' if v is None else v}")
    Path(path).write_text("\n".join(lines) + "\n")


def resolve_config(flags: dict[str, str], config_path: str | None = None) -> tuple[dict, dict]:
    """Merge defaults, preset, config file and flags; return (values, sources).

    Raises ConfigError listing every problem found.
    """
    problems: list[str] = []
    file_values: dict[str, str] = {}
    if config_path:
        file_values, file_problems = parse_config_file(config_path)
        problems.extend(file_problems)

    values = {k: spec[1] for k, spec in KEYS.items()}
    sources = dict.fromkeys(KEYS, "default")
    preset_name = flags.get("preset", file_values.get("preset"))
    if preset_name is not None and _opt_str(preset_name) is not None:
        try:
            for k, v in get_preset(preset_name).items():
                values[k], sources[k] = v, f"preset:{preset_name}"
        except ValueError as exc:
            problems.append(str(exc))
    for origin, layer in ((f"config:{config_path}", file_values), ("flag", flags)):
        for k, text in layer.items():
            try:
                values[k], sources[k] = KEYS[k][0](text), origin
            except (ValueError, TypeError) as exc:
                problems.append(f"{k} ({origin}): {exc}")
    problems.extend(_validate(values))
    if problems:
        raise ConfigError(problems)
    return values, sources


def _validate(v: dict) -> list[str]:
    out = []
    if not v.get("data"):
        out.append("data: required")
    elif v["data"] != "synthetic" and not v.get("schema"):
        out.append("schema: required for CSV data")
    for k in ("z1_dim", "z2_dim", "epochs", "batch_size", "rff_features", "workers", "synthetic_n"):
        if isinstance(v.get(k), int) and v[k] < 1:
            out.append(f"{k}: must be at least 1, got {v[k]}")
    for k in ("alpha", "beta", "lr"):
        if isinstance(v.get(k), float) and v[k] < 0:
            out.append(f"{k}: must be non-negative, got {v[k]}")
    if isinstance(v.get("ema_decay"), float) and not 0.0 <= v["ema_decay"] < 1.0:
        out.append(f"ema_decay: must lie in [0, 1), got {v['ema_decay']}")
    if v.get("gamma") is not None and v["gamma"] <= 0:
        out.append(f"gamma: must be positive, got {v['gamma']}")
    if v.get("mixing_ratio") is not None and not 0.0 < v["mixing_ratio"] < 1.0:
        out.append(f"mixing_ratio: must lie strictly between 0 and 1, got {v['mixing_ratio']}")
    fr = v.get("split_fractions")
    if fr is not None and (len(fr) != 3 or any(f < 0 for f in fr) or abs(sum(fr) - 1.0) > 1e-9):
        out.append(f"split_fractions: need three non-negative fractions summing to 1, got {fr}")
    try:
        ModelConfig(x_dim=1, n_s=2, n_classes=2, **{k: v[k] for k in _MODEL_KEYS})
    except (ValueError, TypeError) as exc:
        out.append(f"model: {exc}")
    if v.get("batch_size") == 1 and v.get("beta", 0) > 0 and v.get("use_mmd"):
        out.append("batch_size: must be >= 2 when the MMD penalty is active")
    return out


def model_config(values: dict, dataset: D.TabularDataset) -> ModelConfig:
    return ModelConfig(
        x_dim=dataset.x_dim, n_s=dataset.n_s, n_classes=dataset.n_classes, seed=values["seed"],
        **{k: values[k] for k in _MODEL_KEYS},
    )


def train_config(values: dict) -> TrainConfig:
    return TrainConfig(seed=values["seed"], **{k: values[k] for k in _TRAIN_KEYS})


def load_dataset(values: dict) -> D.TabularDataset:
    if values["data"] == "synthetic":
        d = D.generate_synthetic(
            D.SyntheticSpec(
                n=values["synthetic_n"], seed=values["synthetic_seed"],
                correlation=values["synthetic_correlation"], label_noise=values["synthetic_label_noise"],
                fractions=tuple(values["split_fractions"]),
            )
        )
    else:
        spec: dict = {"fractions": values["split_fractions"], "seed": values["split_seed"]}
        if values.get("splits"):
            spec["files"] = {k: Path(values["splits"]) / f"{k}.idx" for k in D.SPLITS}
        d = D.load_csv(values["data"], values["schema"], spec)
    pre = values["preprocess"]
    if pre == "binarize":
        d = D.binarize(d)
    elif pre == "minmax":
        d = D.minmax_scale(d)
    elif pre == "hide_target_labels":
        d = D.hide_labels(d, s_value=1, splits=("train",))
    return d


def _prepare_out(path: str | Path, overwrite: bool, marker: str) -> Path:
    out = Path(path)
    if (out / marker).exists() and not overwrite:
        raise ConfigError([f"{out} already holds a run ({marker}); pass --overwrite to replace it"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_json(obj, path: Path) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=list))


def _resolved_record(command: str, values: dict, sources: dict) -> dict:
    return {"version": CONFIG_VERSION, "command": command, "values": values, "sources": sources}


def _model_factory(cfg: dict, seed: int) -> VFAE:
    return VFAE(ModelConfig.from_dict({**cfg, "seed": seed}))


# -- commands -----------------------------------------------------------------


def cmd_train(values: dict, sources: dict, overwrite: bool = False) -> Path:
    out = _prepare_out(values["out"], overwrite, "config.json")
    _write_json(_resolved_record("train", values, sources), out / "config.json")
    dataset = load_dataset(values)
    mcfg = model_config(values, dataset)
    _write_json(mcfg.to_dict(), out / "model.json")
    model = VFAE(mcfg)
    try:
        result = train(model, dataset, train_config(values))
    except TrainingDiverged as exc:
        if exc.last_good is not None:
            save_parameters(exc.last_good, out / "checkpoint_last_good.ckpt")
        raise
    save_parameters(result.best, out / "checkpoint_best.ckpt")
    save_parameters(result.averaged, out / "checkpoint_final.ckpt")
    save_parameters(model.state_dict(), out / "checkpoint_raw_final.ckpt")
    write_log(result.log, out / "train_log.csv")
    _write_json(
        {"best_epoch": result.best_epoch, "epochs_run": len(result.log), "gamma": result.rff.gamma},
        out / "run.json",
    )
    return out


def checkpoint_diff(model: VFAE, state: dict[str, np.ndarray]) -> list[str]:
    """Unified diff of (name, shape) lines; empty when they agree."""
    expected = [f"{k} {tuple(p.data.shape)}" for k, p in sorted(model.named_parameters().items())]
    found = [f"{k} {tuple(v.shape)}" for k, v in sorted(state.items())]
    if expected == found:
        return []
    return list(difflib.unified_diff(expected, found, "config", "checkpoint", lineterm=""))


def load_run(run: str | Path, checkpoint: str = "best") -> tuple[dict, VFAE]:
    run = Path(run)
    record = json.loads((run / "config.json").read_text())
    mcfg = ModelConfig.from_dict(json.loads((run / "model.json").read_text()))
    model = VFAE(mcfg)
    ck = Path(checkpoint) if checkpoint not in ("best", "final", "raw_final") else run / f"checkpoint_{checkpoint}.ckpt"
    state = load_parameters(ck)
    diff = checkpoint_diff(model, state)
    if diff:
        raise ConfigError([f"checkpoint {ck} does not match the run's model config:"] + diff)
    model.load_state_dict(state)
    return record, model


def _run_values(record: dict, overrides: dict) -> dict:
    values = {k: record["values"].get(k, KEYS[k][1]) for k in KEYS}
    for k, text in overrides.items():
        values[k] = KEYS[k][0](text)
    return values


def _check_dims(model: VFAE, dataset: D.TabularDataset) -> None:
    c = model.config
    got = (dataset.x_dim, dataset.n_s, dataset.n_classes)
    if got != (c.x_dim, c.n_s, c.n_classes):
        raise ConfigError([f"dataset dims (x, s, y) = {got} do not match the model's {(c.x_dim, c.n_s, c.n_classes)}"])


def cmd_evaluate(run, out=None, checkpoint="best", seed=None, mode=None, overwrite=False, overrides=None) -> dict:
    record, model = load_run(run, checkpoint)
    values = _run_values(record, overrides or {})
    dataset = load_dataset(values)
    _check_dims(model, dataset)
    out = _prepare_out(out or Path(run) / "evaluation", overwrite, "report.json")
    seed = values["seed"] if seed is None else seed
    report = evaluate_model(model, dataset, seed=seed, mode=mode or values["eval_mode"], model_id=str(Path(run)))
    report["provenance"]["checkpoint"] = checkpoint
    write_report(report, out / "report.json")
    (out / "report.txt").write_text(format_report(report) + "\n")
    return report


def cmd_embed(run, out, split="test", mode="mean", seed=0, checkpoint="best", overwrite=False, overrides=None) -> Path:
    record, model = load_run(run, checkpoint)
    values = _run_values(record, overrides or {})
    dataset = load_dataset(values)
    _check_dims(model, dataset)
    out = Path(out)
    if out.exists() and not overwrite:
        raise ConfigError([f"{out} exists; pass --overwrite to replace it"])
    d = dataset.subset(split) if split != "all" else dataset
    z = embed(model, d.X, d.s_onehot(), mode=mode, rng=np.random.default_rng(seed))
    y = np.where(d.y_known, d.y, -1) if d.y_known.all() else None
    prov = {"model_id": str(Path(run)), "mode": mode, "seed": seed, "split": split, "checkpoint": checkpoint}
    D.export_embeddings(EmbeddingSet(z, d.s, y, prov), out)
    return out


def read_matrix(path: str | Path) -> np.ndarray:
    """Numeric CSV matrix, with or without a header row."""
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r]
    if rows:
        try:
            [float(v) for v in rows[0]]
        except ValueError:
            rows = rows[1:]
    try:
        M = np.array([[float(v) for v in r] for r in rows], dtype=np.float64)
    except ValueError as exc:
        raise ValueError(f"{path}: {exc}") from None
    return M.reshape(len(rows), -1)


def cmd_mmd_test(path_a, path_b, gamma=None, features=500, convention="standard", seed=0) -> dict:
    A, B = read_matrix(path_a), read_matrix(path_b)
    if A.shape[1] != B.shape[1]:
        raise ConfigError([f"width mismatch: {path_a} has {A.shape[1]} columns, {path_b} has {B.shape[1]}"])
    if gamma is None:
        gamma = median_heuristic_gamma(np.vstack([A, B]))
    exact = mmd_exact(A, B, gamma)
    approx = mmd_rff(A, B, RffProjection(A.shape[1], features, gamma, seed, convention))
    gap = abs(approx - exact) / exact if exact > 0 else abs(approx - exact)
    return {"mmd_exact": exact, "mmd_rff": approx, "features": features, "convention": convention,
            "gamma": gamma, "relative_gap": gap}


def cmd_select_beta(values: dict, sources: dict, overwrite: bool = False) -> dict:
    out = _prepare_out(values["out"], overwrite, "config.json")
    _write_json(_resolved_record("select-beta", values, sources), out / "config.json")
    dataset = load_dataset(values)
    mcfg = model_config(values, dataset).to_dict()
    sel = select_beta(partial(_model_factory, mcfg), dataset, values["beta_grid"], train_config(values))
    with open(out / "beta_table.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(sel.table[0]))
        w.writeheader()
        w.writerows(sel.table)
    result = {"best_beta": sel.best_beta, "table": sel.table}
    _write_json(result, out / "beta_selection.json")
    return result


# -- argument parsing ---------------------------------------------------------


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("configuration keys (also accepted in --config files)")
    for key, (_, default, help_text) in KEYS.items():
        g.add_argument(f"--{key.replace('_', '-')}", dest=f"key_{key}", metavar="VALUE",
                       help=f"{help_text} (default: {default})")
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--overwrite", action="store_true", help="replace an existing run directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vfae", description="Invariant representation learning with VFAEs.")
    sub = parser.add_subparsers(dest="command", required=True)
    _add_config_flags(sub.add_parser("train", help="train a model and write checkpoints"))
    _add_config_flags(sub.add_parser("select-beta", help="train over a beta grid and pick the best"))

    for name in ("evaluate", "embed"):
        p = sub.add_parser(name, help=f"{name} using a trained run directory")
        p.add_argument("--run", required=True, help="run directory written by 'train'")
        p.add_argument("--checkpoint", default="best", help="best, final, raw_final or a checkpoint path")
        p.add_argument("--seed", type=int, default=None if name == "evaluate" else 0)
        p.add_argument("--mode", choices=("sample", "mean"), default=None if name == "evaluate" else "mean")
        p.add_argument("--out", required=name == "embed", help="output directory (evaluate) or CSV path (embed)")
        p.add_argument("--overwrite", action="store_true")
        for key in ("data", "schema", "splits"):
            p.add_argument(f"--{key}", dest=f"key_{key}", help=f"override the run's {key}")
        if name == "embed":
            p.add_argument("--split", default="test", choices=(*D.SPLITS, "all"))

    p = sub.add_parser("mmd-test", help="exact and random-feature MMD between two CSV matrices")
    p.add_argument("a")
    p.add_argument("b")
    p.add_argument("--gamma", type=float, default=None, help="kernel gamma (default: median heuristic)")
    p.add_argument("--features", type=int, default=500)
    p.add_argument("--convention", choices=CONVENTIONS, default="standard")
    p.add_argument("--seed", type=int, default=0)
    return parser


def _flags(args) -> dict[str, str]:
    return {k[4:]: v for k, v in vars(args).items() if k.startswith("key_") and v is not None}


def _dispatch(args) -> int:
    if args.command in ("train", "select-beta"):
        values, sources = resolve_config(_flags(args), args.config)
        if not values.get("out"):
            raise ConfigError(["out: required"])
        if args.command == "train":
            out = cmd_train(values, sources, args.overwrite)
            print(f"wrote run to {out}")
        else:
            res = cmd_select_beta(values, sources, args.overwrite)
            for row in res["table"]:
                print(f"beta={row['beta']:g}  score={row['score']:.4f}  "
                      f"y_acc={row['validation_y_accuracy']:.4f}  s_probe={row['probe_s_accuracy']:.4f}")
            print(f"best beta: {res['best_beta']:g}")
    elif args.command == "evaluate":
        report = cmd_evaluate(args.run, args.out, args.checkpoint, args.seed, args.mode, args.overwrite, _flags(args))
        print(format_report(report))
    elif args.command == "embed":
        path = cmd_embed(args.run, args.out, args.split, args.mode, args.seed, args.checkpoint, args.overwrite,
                         _flags(args))
        print(f"wrote embeddings to {path}")
    else:
        res = cmd_mmd_test(args.a, args.b, args.gamma, args.features, args.convention, args.seed)
        print(f"mmd_exact     {res['mmd_exact']:.6g}")
        print(f"mmd_rff       {res['mmd_rff']:.6g}  (D={res['features']}, convention={res['convention']})")
        print(f"gamma         {res['gamma']:.6g}")
        print(f"relative_gap  {res['relative_gap']:.6g}")
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _dispatch(args)
    except ConfigError as exc:
        print("invalid configuration:", file=sys.stderr)
        for p in exc.problems:
            print(f"  {p}", file=sys.stderr)
        return EXIT_INVALID
    except (TrainingDiverged, NonFiniteError) as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
