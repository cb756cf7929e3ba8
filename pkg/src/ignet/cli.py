"""``ign`` command-line interface.

Commands: generate, train, eval, predict, ablate, inspect. Settings come
from built-in defaults, then an optional flat ``key = value`` config file,
then command-line flags (highest precedence). Every run directory records
the fully resolved settings so the run can be repeated from them alone.

Exit codes: 0 success, 2 usage or schema error, 3 numerical divergence.
"""

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import datasets as ds
from .classification import OneVsAll, one_vs_all, to_pm1
from .classification import predict_proba as binary_proba
from .exceptions import (ContractError, DimensionError, IgnError, NotPositiveDefiniteError,
                         NumericalFailure, SchemaError, TrainingDiverged)
from .metrics import (DEFAULT_M_GRID, ablate, accuracy, is_decreasing_trend,
                      mean_variance_scatter, nearest_exemplars, rmse, scatter_text)
from .model import GROUPS, ModelConfig, initialize
from .persistence import ModelFile, load_model, save_model
from .regression import predict as gp_predict
from .trainer import TrainConfig, train

log = logging.getLogger("ignet")

EXIT_OK, EXIT_USAGE, EXIT_DIVERGED = 0, 2, 3
TASK_CHOICES = ("regression", "classification")


class UsageError(IgnError, ValueError):
    pass


# ---------------------------------------------------------------------------
# config files


def _int_list(text):
    text = str(text).strip().strip("()[]")
    return tuple(int(t) for t in text.replace(" ", "").split(",") if t)


def _bool(text):
    if isinstance(text, bool):
        return text
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


def read_config_file(path):
    """Parse ``key = value`` lines; ``#`` starts a comment. Keys use underscores.

    A value in double quotes is a JSON string, which is how values with
    whitespace or ``#`` (a tab delimiter, say) survive.
    """
    out = {}
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as exc:
        raise UsageError(f"cannot read config file {path}: {exc}") from exc
    for lineno, line in enumerate(lines, 1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key = value")
        key, value = (p.strip() for p in line.split("=", 1))
        if value.startswith('"'):
            try:
                value, _ = json.JSONDecoder().raw_decode(value)
            except json.JSONDecodeError as exc:
                raise UsageError(f"{path}:{lineno}: bad quoted value ({exc})") from exc
        else:
            value = value.split("#", 1)[0].strip()
        out[key.replace("-", "_")] = value
    return out


def write_config_file(path, settings, command=None):
    lines = [f"# ign {command}"] if command else []
    for k in sorted(settings):
        v = settings[k]
        if v is None:
            continue
        if isinstance(v, (list, tuple)):
            v = ",".join(str(x) for x in v)
        v = str(v)
        if v != v.strip() or "#" in v or v.startswith('"'):
            v = json.dumps(v)
        lines.append(f"{k} = {v}")
    Path(path).write_text("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# argument parsing


def _data_args(p):
    g = p.add_argument_group("data source")
    g.add_argument("--gen", choices=sorted(ds.GENERATORS), help="synthetic generator")
    g.add_argument("--n", type=int, default=1000, help="rows to generate")
    g.add_argument("--dim", type=int, default=None, help="input dimension (levy, griewank, blobs)")
    g.add_argument("--noise", type=float, default=None, help="generator noise std")
    g.add_argument("--classes", type=int, default=2, help="blob classes")
    g.add_argument("--separation", type=float, default=6.0, help="distance between blob centres")
    g.add_argument("--data-seed", type=int, default=None, help="generator seed (default: --seed)")
    g.add_argument("--data", help="delimited file with a header row")
    g.add_argument("--target", default=None, help="target column of --data")
    g.add_argument("--delimiter", default=",")


def _model_args(p):
    g = p.add_argument_group("model")
    g.add_argument("--task", choices=TASK_CHOICES, default="regression")
    g.add_argument("--hidden", type=_int_list, default=(128, 128, 128), help="comma-separated widths")
    g.add_argument("--feature-dim", type=int, default=64)
    g.add_argument("--m", type=int, default=512, help="number of inducing points")
    g.add_argument("--kernel", choices=("rbf", "dot"), default="rbf")
    g.add_argument("--gamma", type=float, default=1.0)
    g.add_argument("--freeze-gamma", type=_bool, nargs="?", const=True, default=False)
    g.add_argument("--init-sigma-eps", type=float, default=0.5)
    g.add_argument("--feature-scale", type=float, default=0.1)
    g.add_argument("--init-z", choices=("data", "normal"), default="data")
    g.add_argument("--init-z-from-data", dest="init_z", action="store_const", const="data",
                   help="place inducing points on embedded training rows (default)")


def _train_args(p):
    g = p.add_argument_group("training")
    g.add_argument("--epochs", type=int, default=500)
    g.add_argument("--batch-size", type=int, default=128)
    g.add_argument("--lr", type=float, default=1e-3)
    g.add_argument("--scale-loss-by", choices=("per-batch", "n-over-b"), default="per-batch")
    g.add_argument("--freeze", type=lambda s: tuple(x for x in s.split(",") if x), default=(),
                   help=f"comma-separated parameter groups to freeze: {','.join(GROUPS)}")
    g.add_argument("--checkpoint-every", type=int, default=0)
    g.add_argument("--train-fraction", type=float, default=0.6)
    g.add_argument("--jobs", type=int, default=1, help="worker threads for one-vs-all heads or ablation cells")


def _common(p):
    p.add_argument("--config", help="flat key = value settings file")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser():
    parser = argparse.ArgumentParser(prog="ign", description="Inducing Gaussian process networks.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write a synthetic dataset to a delimited file")
    _common(p)
    _data_args(p)
    p.add_argument("--output", help="output path (default: cache dir)")

    p = sub.add_parser("train", help="train a model and write a run directory")
    _common(p)
    _data_args(p)
    _model_args(p)
    _train_args(p)
    p.add_argument("--out", default="runs/latest", help="run directory")

    p = sub.add_parser("eval", help="evaluate a saved model on a dataset")
    _common(p)
    _data_args(p)
    p.add_argument("--model", required=True)
    p.add_argument("--subset", choices=("all", "train", "test"), default="all",
                   help="rows of the split (using --seed and --train-fraction) to score")
    p.add_argument("--train-fraction", type=float, default=0.6)
    p.add_argument("--raw", action="store_true", help="report RMSE in original target units")
    p.add_argument("--output", help="write metrics JSON here as well")

    p = sub.add_parser("predict", help="predict for rows of a delimited file")
    _common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--delimiter", default=",")
    p.add_argument("--variance", action="store_true", help="add a variance column")
    p.add_argument("--include-noise", action="store_true", help="add noise variance to the variance column")
    p.add_argument("--output", help="output file (default: stdout)")

    p = sub.add_parser("ablate", help="inducing-count ablation of the mean test variance")
    _common(p)
    _data_args(p)
    _model_args(p)
    _train_args(p)
    p.add_argument("--m-grid", type=_int_list, default=DEFAULT_M_GRID)
    p.add_argument("--repeats", type=int, default=3)
    p.add_argument("--out", default="runs/ablation")

    p = sub.add_parser("inspect", help="nearest training rows of each inducing point")
    _common(p)
    _data_args(p)
    p.add_argument("--model", required=True)
    p.add_argument("--k", type=int, default=1)
    p.add_argument("--output", help="write the report JSON here as well")
    p.add_argument("--scatter", help="write mean/variance plot data for the rows here")
    return parser


def parse_args(argv=None):
    """Parse with precedence flags > config file > defaults."""
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        values = read_config_file(args.config)
        sub = _subparser(parser, args.command)
        known = {a.dest: a for a in sub._actions}
        unknown = sorted(set(values) - set(known))
        if unknown:
            raise UsageError(f"unknown config keys: {', '.join(unknown)}")
        defaults = {}
        for key, text in values.items():
            action = known[key]
            if isinstance(action, argparse._StoreConstAction) or action.nargs == "?":
                defaults[key] = _bool(text) if action.type is _bool else text
            else:
                defaults[key] = text  # string defaults go through the action's type
        sub.set_defaults(**defaults)
        args = parser.parse_args(argv)
    return args


def _subparser(parser, name):
    for action in parser._actions:
        if isinstance(action, argparse._SubParsersAction):
            return action.choices[name]
    raise KeyError(name)


# ---------------------------------------------------------------------------
# helpers


def load_source(args, task=None):
    """Dataset from ``--gen`` or ``--data``; returns (Dataset, source description)."""
    if bool(args.gen) == bool(args.data):
        raise UsageError("give exactly one of --gen or --data")
    seed = args.seed if args.data_seed is None else args.data_seed
    if args.gen:
        kw = {"n": args.n, "seed": seed}
        if args.gen == "blobs":
            kw.update(n_classes=args.classes, separation=args.separation)
        if args.dim is not None and args.gen in ("levy", "griewank", "blobs"):
            kw["dim"] = args.dim
        if args.noise is not None and args.gen != "blobs":
            kw["noise_std"] = args.noise
        data = ds.GENERATORS[args.gen](**kw)
        return data, {"gen": args.gen, **{k: v for k, v in kw.items()}}
    if not args.target:
        raise UsageError("--data needs --target")
    kind = "classification" if task == "classification" else "regression"
    data, dropped = ds.load_delimited(args.data, args.target, args.delimiter, kind)
    return data, {"data": str(args.data), "target": args.target, "dropped_rows": dropped}


def _encode_labels(y):
    classes, codes = np.unique(y, return_inverse=True)
    if len(classes) < 2:
        raise SchemaError("classification data needs at least two classes")
    return classes, codes


def _configs(args, input_dim):
    model = ModelConfig(
        input_dim=input_dim, hidden=tuple(args.hidden), feature_dim=args.feature_dim,
        n_inducing=args.m, kernel=args.kernel, gamma=args.gamma,
        train_gamma=not args.freeze_gamma, init_sigma_eps=args.init_sigma_eps,
        feature_scale=args.feature_scale, init_z=args.init_z,
    )
    trainer = TrainConfig(
        epochs=args.epochs, batch_size=args.batch_size, learning_rate=args.lr, seed=args.seed,
        loss_scaling=args.scale_loss_by, frozen=tuple(args.freeze),
        checkpoint_every=args.checkpoint_every,
    )
    return model, trainer


def resolved_settings(args):
    skip = {"config", "verbose", "command"}
    return {k: (list(v) if isinstance(v, tuple) else v) for k, v in vars(args).items() if k not in skip}


def _dump(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _split(args, data):
    from .seeding import subseed
    return ds.split(data, args.train_fraction, subseed(args.seed, "split"))


def _model_predictions(model, Xn):
    """(mean, variance, probabilities) in normalized space for a loaded model."""
    if model.task == "multiclass":
        proba = OneVsAll(model.heads).predict_proba(Xn)
        return None, None, proba
    dist = gp_predict(model.params, Xn, want="diag")
    proba = binary_proba(model.params, Xn) if model.task == "binary-classification" else None
    return dist.mean, dist.variance, proba


def _check_features(model, X):
    if X.shape[1] != model.config.input_dim:
        raise DimensionError(f"data has {X.shape[1]} feature columns, the model expects {model.config.input_dim}")


# ---------------------------------------------------------------------------
# commands


def cmd_generate(args):
    if not args.gen:
        raise UsageError("generate needs --gen")
    data, source = load_source(args)
    out = Path(args.output) if args.output else ds.cache_dir() / f"{args.gen}_{args.n}_{args.seed}.csv"
    ds.save_delimited(data, out)
    print(json.dumps({"path": str(out), "rows": data.n, **source}, sort_keys=True))
    return EXIT_OK


def _train_model(args, train_set, model_cfg, train_cfg, run_dir, classes):
    """Fit one model (or one head per class). Returns (heads, report dict, task)."""
    def checkpoint(head_tag):
        def save(params, epoch, report):
            mf = ModelFile(model_cfg, "regression" if args.task == "regression" else "binary-classification",
                           [params], None, report.to_dict(timing=False), meta={"epoch": epoch, "head": head_tag})
            save_model(run_dir / "checkpoint.json", mf)
        return save

    Xn = train_set.X
    if args.task == "regression":
        params = initialize(model_cfg, Xn, args.seed)
        params, rep = train("regression", params, train_set, train_cfg, checkpoint("regression"))
        return [params], rep.to_dict(timing=False), rep.wall_clock, "regression"
    codes = np.searchsorted(classes, train_set.y)
    if len(classes) == 2:
        params = initialize(model_cfg, Xn, args.seed)
        params, rep = train("binary-classification", params, (Xn, to_pm1(codes)), train_cfg, checkpoint("binary"))
        return [params], rep.to_dict(timing=False), rep.wall_clock, "binary-classification"
    reports = {}

    def fit_head(c, y_pm):
        params = initialize(model_cfg, Xn, args.seed)
        params, reports[c] = train("binary-classification", params, (Xn, y_pm), train_cfg, checkpoint(f"class {c}"))
        return params

    ova = one_vs_all(fit_head, codes, len(classes), jobs=args.jobs)
    report = {"heads": [reports[c].to_dict(timing=False) for c in range(len(classes))]}
    return ova.heads, report, sum(r.wall_clock for r in reports.values()), "multiclass"


def _score(model, data, raw=False):
    """Metrics dict for normalized-space model predictions against ``data`` (raw units)."""
    norm = model.normalizer
    Xn = norm.transform_X(data.X)
    mean, var, proba = _model_predictions(model, Xn)
    out = {"n_test": int(data.n)}
    if model.task == "regression":
        truth = norm.transform_y(data.y)
        out["rmse"] = rmse(mean, truth)
        out["mean_variance"] = float(np.mean(var))
        if raw:
            out["rmse_raw"] = rmse(norm.inverse_y(mean), data.y)
            out["mean_variance_raw"] = float(np.mean(norm.inverse_variance(var)))
        return out
    classes = np.array(model.classes)
    if model.task == "multiclass":
        pred = classes[np.argmax(proba, axis=1)]
        var = np.mean([gp_predict(h, Xn).variance for h in model.heads], axis=0)
    else:
        pred = classes[(proba > 0.5).astype(int)]
    out["accuracy"] = accuracy(pred, data.y)
    out["mean_variance"] = float(np.mean(var))
    return out


def cmd_train(args):
    data, source = load_source(args, args.task)
    run_dir = Path(args.out)
    run_dir.mkdir(parents=True, exist_ok=True)
    train_raw, test_raw = _split(args, data)
    classes = None
    if args.task == "classification":
        classes, _ = _encode_labels(train_raw.y)
        unseen = set(np.unique(test_raw.y)) - set(classes)
        if unseen:
            raise SchemaError(f"test labels {sorted(unseen)} do not occur in the training split")
    norm = ds.Normalizer.fit(train_raw, scale_target=args.task == "regression")
    train_set = norm.apply(train_raw)
    model_cfg, train_cfg = _configs(args, data.n_features)
    settings = resolved_settings(args)
    write_config_file(run_dir / "config.txt", settings, "train")
    _dump(run_dir / "normalizer.json", norm.to_dict())
    try:
        heads, report, wall, task = _train_model(args, train_set, model_cfg, train_cfg, run_dir, classes)
    except TrainingDiverged as exc:
        ckpt = run_dir / "checkpoint.json"
        if exc.checkpoint is not None:
            mf = ModelFile(model_cfg, "regression" if args.task == "regression" else "binary-classification",
                           [exc.checkpoint], norm, None, meta={"diverged": str(exc)})
            save_model(ckpt, mf)
        print(f"training diverged: {exc}; last good parameters in {ckpt}", file=sys.stderr)
        return EXIT_DIVERGED
    meta = {"feature_names": list(data.feature_names), "target_name": data.target_name,
            "source": source, "train_fraction": args.train_fraction, "seed": args.seed}
    model = ModelFile(model_cfg, task, heads, norm, report,
                      [c.item() for c in classes] if classes is not None else [], meta)
    save_model(run_dir / "model.json", model)
    metrics = {"train": _score(model, train_raw), "test": _score(model, test_raw)}
    report_out = dict(report, metrics=metrics)
    _dump(run_dir / "report.json", report_out)
    _dump(run_dir / "timing.json", {"wall_clock_seconds": wall})
    print(json.dumps({"run_dir": str(run_dir), **metrics["test"]}, sort_keys=True))
    return EXIT_OK


def cmd_eval(args):
    model = load_model(args.model)
    task = "regression" if model.task == "regression" else "classification"
    data, _ = load_source(args, task)
    _check_features(model, data.X)
    if args.subset != "all":
        tr, te = _split(args, data)
        data = tr if args.subset == "train" else te
    metrics = _score(model, data, raw=args.raw)
    text = json.dumps(metrics, indent=2, sort_keys=True)
    print(text)
    if args.output:
        Path(args.output).write_text(text + "\n")
    return EXIT_OK


def _read_features(model, path, delimiter):
    import csv
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh, delimiter=delimiter) if r and any(c.strip() for c in r)]
    if not rows:
        raise SchemaError(f"{path}: file is empty")
    header = [h.strip() for h in rows[0]]
    names = model.meta.get("feature_names")
    if names and set(names) <= set(header):
        cols = [header.index(n) for n in names]
    else:
        target = model.meta.get("target_name")
        cols = [i for i, h in enumerate(header) if h != target]
    try:
        X = np.array([[float(r[i]) for i in cols] for r in rows[1:]], dtype=np.float64)
    except (ValueError, IndexError) as exc:
        raise SchemaError(f"{path}: non-numeric or ragged row ({exc})") from exc
    if X.ndim != 2 or X.shape[0] == 0:
        raise SchemaError(f"{path}: no data rows")
    _check_features(model, X)
    return X


def cmd_predict(args):
    model = load_model(args.model)
    X = _read_features(model, args.input, args.delimiter)
    norm = model.normalizer
    Xn = norm.transform_X(X)
    if model.task == "multiclass":
        proba = OneVsAll(model.heads).predict_proba(Xn)
        classes = np.array(model.classes)
        header = ["class"] + [f"p_{c}" for c in classes]
        rows = [[repr(classes[i].item())] + [repr(float(p)) for p in pr]
                for i, pr in zip(np.argmax(proba, axis=1), proba)]
    else:
        dist = gp_predict(model.params, Xn, want="diag", include_noise=args.include_noise)
        mean, var = dist.mean, dist.variance
        if model.task == "regression":
            mean, var = norm.inverse_y(mean), norm.inverse_variance(var)
        header, cols = ["mean"], [mean]
        if args.variance:
            header.append("variance")
            cols.append(var)
        if model.task == "binary-classification":
            header.append("probability")
            cols.append(binary_proba(model.params, Xn))
        rows = [[repr(float(v)) for v in r] for r in zip(*cols)]
    text = args.delimiter.join(header) + "\n" + "".join(args.delimiter.join(r) + "\n" for r in rows)
    if args.output:
        Path(args.output).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_ablate(args):
    if args.task != "regression":
        task = "binary-classification"
    else:
        task = "regression"
    data, source = load_source(args, args.task)
    train_raw, test_raw = _split(args, data)
    if task != "regression":
        classes, _ = _encode_labels(train_raw.y)
        if len(classes) != 2:
            raise UsageError("ablate supports regression and binary classification")
        train_raw = replace(train_raw, y=np.searchsorted(classes, train_raw.y).astype(float))
        test_raw = replace(test_raw, y=np.searchsorted(classes, test_raw.y).astype(float))
    norm = ds.Normalizer.fit(train_raw, scale_target=task == "regression")
    model_cfg, train_cfg = _configs(args, data.n_features)
    result = ablate(task, norm.apply(train_raw), norm.apply(test_raw), model_cfg, args.m_grid,
                    args.repeats, train_cfg, jobs=args.jobs, seeds=[args.seed + r for r in range(args.repeats)])
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_config_file(out / "config.txt", resolved_settings(args), "ablate")
    (out / "ablation.json").write_text(result.to_json() + "\n")
    (out / "ablation.txt").write_text(result.table() + "\n")
    (out / "ablation_plot.csv").write_text(result.plot_data())
    print(result.table())
    print(f"non-increasing trend: {is_decreasing_trend(result.mean_variances())}")
    return EXIT_OK


def cmd_inspect(args):
    model = load_model(args.model)
    task = "regression" if model.task == "regression" else "classification"
    data, _ = load_source(args, task)
    _check_features(model, data.X)
    Xn = model.normalizer.transform_X(data.X)
    reports = []
    for h, params in enumerate(model.heads):
        rep = nearest_exemplars(params, Xn, args.k)
        reports.append(rep.to_dict())
        for j, (idx, kv) in enumerate(zip(rep.indices, rep.kernel_values)):
            prefix = f"head {h} " if len(model.heads) > 1 else ""
            print(f"{prefix}z{j}: rows {' '.join(map(str, idx))} kernel {' '.join(f'{v:.6g}' for v in kv)}")
    if args.output:
        _dump(args.output, {"k": args.k, "heads": reports})
    if args.scatter:
        Path(args.scatter).write_text(scatter_text(mean_variance_scatter(model.params, Xn)))
    return EXIT_OK


COMMANDS = {
    "generate": cmd_generate,
    "train": cmd_train,
    "eval": cmd_eval,
    "predict": cmd_predict,
    "ablate": cmd_ablate,
    "inspect": cmd_inspect,
}


def main(argv=None):
    try:
        args = parse_args(argv)
    except SystemExit as exc:  # argparse usage errors already exit with 2
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    except UsageError as exc:
        print(f"ign: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except TrainingDiverged as exc:
        print(f"ign: training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (NumericalFailure, NotPositiveDefiniteError) as exc:
        print(f"ign: numerical failure: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (SchemaError, DimensionError, ContractError, UsageError, OSError) as exc:
        print(f"ign: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
