"""Batch command line: ``qrfdensity {train,forecast,evaluate,explain,stats}``.

Every flag can also be given in a ``--config`` file of ``key = value`` lines
(``#`` starts a comment); flags on the command line win. Errors print one
line ``error: <Tag>: <message>`` to stderr and exit with 2 (I/O),
3 (data validation) or 4 (numeric failure).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import re
import sys
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from . import forest as forest_mod
from . import kde, metrics, qrf
from .dataset import (
    Dataset,
    NormalizationParams,
    RawTable,
    chronological_split,
    describe,
    knn_impute,
    load_csv,
    min_max_normalize,
    normalize_with,
    parse_table,
    read_csv_rows,
    write_csv,
)
from .errors import (
    DegenerateSample,
    InvalidParameter,
    IoError,
    MissingValue,
    NoOobSamples,
    QRFError,
    SchemaMismatch,
    UnsupportedFormat,
)

log = logging.getLogger("qrfdensity")

OUTPUT_DIR_ENV = "QRFDENSITY_OUTPUT_DIR"
PARAMS_FILE = "normalization.json"
MODEL_FILE = "model.json"


@dataclass
class RunConfig:
    input_csv: str | None = None
    train_fraction: float = 0.8
    knn_k: int = 3
    ntree: int = 500
    mtry: int | None = None
    min_node_size: int = 5
    bootstrap: bool = True
    seed: int = 0
    jobs: int = 1
    confidence_level: float = 0.90
    tau_grid_size: int = 99
    grid_points: int = 512
    output_dir: str = "qrf_output"
    model: str | None = None
    query_csv: str | None = None
    test_csv: str | None = None
    data_csv: str | None = None
    emit_density: bool = False
    top_k: int = 3

    def forest_config(self) -> forest_mod.ForestConfig:
        return forest_mod.ForestConfig(
            ntree=self.ntree, mtry=self.mtry, min_node_size=self.min_node_size,
            bootstrap=self.bootstrap, seed=self.seed,
        )


_BOOL = {"true": True, "1": True, "yes": True, "false": False, "0": False, "no": False}


def _coerce(name: str, raw: str):
    kind = {f.name: f.type for f in fields(RunConfig)}[name]
    raw = raw.strip()
    try:
        if kind == "bool":
            return _BOOL[raw.lower()]
        if "int" in kind:
            return None if raw.lower() in ("", "none", "auto") and "None" in kind else int(raw)
        if "float" in kind:
            return float(raw)
    except (KeyError, ValueError):
        raise InvalidParameter(f"config key {name!r}: cannot parse {raw!r}") from None
    return raw


def read_config_file(path) -> dict:
    known = {f.name for f in fields(RunConfig)}
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise IoError(f"cannot read config {path}: {exc}") from exc
    out = {}
    for lineno, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InvalidParameter(f"{path}:{lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in known:
            raise InvalidParameter(f"{path}:{lineno}: unknown key {key!r}")
        out[key] = _coerce(key, value)
    return out


def build_config(args: argparse.Namespace) -> RunConfig:
    values = {}
    env_dir = os.environ.get(OUTPUT_DIR_ENV)
    if env_dir:
        values["output_dir"] = env_dir
    if args.config:
        values.update(read_config_file(args.config))
    for f in fields(RunConfig):
        v = getattr(args, f.name, None)
        if v is not None:
            values[f.name] = v
    return RunConfig(**values)


# --- small IO helpers -----------------------------------------------------------

def _fmt(v) -> str:
    return "" if v is None or (isinstance(v, float) and np.isnan(v)) else f"{float(v):.6f}"


def _write_csv(path: Path, header, rows) -> None:
    lines = [",".join(header)] + [",".join(r) for r in rows]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def _safe(name: str) -> str:
    return re.sub(r"[^A-Za-z0-9_.-]+", "_", name)


def _out_dir(cfg: RunConfig) -> Path:
    out = Path(cfg.output_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IoError(f"cannot create output dir {out}: {exc}") from exc
    return out


def _require(value, flag: str):
    if value is None:
        raise InvalidParameter(f"missing required option --{flag.replace('_', '-')}")
    return value


def _load_model(cfg: RunConfig):
    model_path = Path(_require(cfg.model, "model"))
    forest = forest_mod.load(model_path)
    params_path = model_path.with_name(PARAMS_FILE)
    try:
        doc = json.loads(params_path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise IoError(f"cannot read {params_path}: {exc}") from exc
    if doc.get("format_version") != 1:
        raise UnsupportedFormat(f"{params_path}: unknown format_version")
    params = NormalizationParams.from_dict(doc["features"])
    return forest, params, doc


def _load_query(path, feature_names, require_target: bool = False) -> tuple[RawTable, bool]:
    header, body = read_csv_rows(path)
    names = list(feature_names)
    if header[1:] == names and not require_target:
        has_target = False
    elif header[1:-1] == names:
        has_target = True
    else:
        raise SchemaMismatch(f"{path}: columns {header[1:]} do not match model features {names}")
    table = parse_table(header, body, has_target=has_target, min_rows=1, source=str(path))
    if has_target and require_target and np.isnan(table.target).any():
        raise MissingValue(f"{path}: target column has missing values")
    return table, has_target


def stats_table(columns: dict) -> str:
    head = f"{'Column':<16}{'Mean':>10}{'Std':>10}{'Min':>10}{'Max':>10}{'Skewness':>10}"
    lines = [head]
    for name, s in columns.items():
        lines.append(f"{name:<16}{s.mean:>10.2f}{s.std:>10.2f}{s.min:>10.2f}{s.max:>10.2f}{s.skewness:>10.2f}")
    return "\n".join(lines) + "\n"


def _raw_stats(table: RawTable) -> dict:
    cols = {table.target_name: describe(table.target)}
    for j, name in enumerate(table.feature_names):
        cols[name] = describe(table.features[:, j])
    return cols


def _write_stats(out: Path, cols: dict) -> str:
    text = stats_table(cols)
    (out / "summary_stats.txt").write_text(text, encoding="utf-8")
    doc = {k: asdict(v) for k, v in cols.items()}
    (out / "summary_stats.json").write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")
    return text


# --- subcommands ----------------------------------------------------------------

def cmd_train(cfg: RunConfig) -> int:
    out = _out_dir(cfg)
    raw = knn_impute(load_csv(_require(cfg.input_csv, "input_csv")), cfg.knn_k)
    ds, params = min_max_normalize(raw)
    train, test = chronological_split(ds, cfg.train_fraction)
    log.info("training on %d rows, holding out %d", train.n_rows, test.n_rows)
    forest = forest_mod.fit(train, cfg.forest_config(), n_jobs=cfg.jobs)

    forest_mod.save(forest, out / MODEL_FILE)
    target = raw.target
    params_doc = {
        "format_version": 1,
        "features": params.to_dict(),
        "target": {"name": raw.target_name, "min": float(target.min()), "max": float(target.max())},
        "target_range": float(target.max() - target.min()),
    }
    (out / PARAMS_FILE).write_text(json.dumps(params_doc, indent=2) + "\n", encoding="utf-8")

    n_train = train.n_rows
    write_csv(out / "train.csv", RawTable(raw.years[:n_train], raw.features[:n_train],
                                          raw.target[:n_train], raw.feature_names, raw.target_name))
    write_csv(out / "test.csv", RawTable(raw.years[n_train:], raw.features[n_train:],
                                         raw.target[n_train:], raw.feature_names, raw.target_name))
    print(_write_stats(out, _raw_stats(raw)), end="")
    print(f"model written to {out / MODEL_FILE} ({n_train} train / {test.n_rows} test rows)")
    return 0


def cmd_forecast(cfg: RunConfig) -> int:
    out = _out_dir(cfg)
    forest, params, _ = _load_model(cfg)
    table, has_target = _load_query(_require(cfg.query_csv, "query_csv"), forest.feature_names)
    X = normalize_with(table, params).features
    taus = qrf.default_taus(cfg.tau_grid_size)
    rows, notes = [], []
    for year, obs, cdf in zip(table.years, table.target, qrf.conditional_cdfs(forest, X)):
        pi = qrf.interval_from_cdf(cdf, cfg.confidence_level)
        median = qrf.quantile(cdf, 0.5)
        rows.append([str(int(year)), _fmt(pi.lower), _fmt(obs if has_target else None),
                     _fmt(median), _fmt(pi.upper)])
        if cfg.emit_density:
            try:
                curve = kde.density_from_cdf(cdf, taus, cfg.grid_points)
            except DegenerateSample:
                notes.append(f"{int(year)}: degenerate density, point mass at {median!r}")
                continue
            curve.to_csv(out / f"density_{int(year)}.csv")
    _write_csv(out / "forecast.csv", ["year", "lower", "observed", "predicted", "upper"], rows)
    if notes:
        (out / "density_notes.txt").write_text("\n".join(notes) + "\n", encoding="utf-8")
    print("year,lower,observed,predicted,upper")
    for r in rows:
        print(",".join(r))
    return 0


def cmd_evaluate(cfg: RunConfig) -> int:
    out = _out_dir(cfg)
    forest, params, doc = _load_model(cfg)
    table, _ = _load_query(_require(cfg.test_csv, "test_csv"), forest.feature_names, require_target=True)
    X = normalize_with(table, params).features
    cdfs = qrf.conditional_cdfs(forest, X)
    predicted = [qrf.quantile(c, 0.5) for c in cdfs]
    intervals = [qrf.interval_from_cdf(c, cfg.confidence_level) for c in cdfs]
    report = metrics.evaluate(table.target, predicted, intervals,
                              target_range=doc["target_range"], level=cfg.confidence_level)
    (out / "evaluation.json").write_text(report.to_json(), encoding="utf-8")
    (out / "evaluation.txt").write_text(report.to_table(), encoding="utf-8")
    print(report.to_table(), end="")
    return 0


def cmd_explain(cfg: RunConfig) -> int:
    out = _out_dir(cfg)
    forest, params, _ = _load_model(cfg)
    if not forest.config.bootstrap:
        raise NoOobSamples("model was trained without bootstrap; no out-of-bag rows")
    names = forest.feature_names
    train = Dataset(forest.train_features, forest.train_targets, names, np.arange(forest.n_train))
    report = forest_mod.permutation_importance(forest, train)

    _write_csv(out / "importance.csv", ["feature", "rank", "pct_inc_mse"],
               [[n, str(r), f"{v:.6f}"] for n, r, v in report.rows()])
    table = [f"{'Feature':<16}{'Rank':>6}{'%IncMSE':>10}"]
    table += [f"{n:<16}{r:>6}{v:>10.3f}" for n, r, v in report.rows()]
    (out / "importance.txt").write_text("\n".join(table) + "\n", encoding="utf-8")
    print("\n".join(table))

    data_table, _ = _load_query(_require(cfg.data_csv, "data_csv"), names)
    data = normalize_with(data_table, params)
    top = [int(j) for j in np.argsort(report.ranks, kind="stable")[: max(0, min(cfg.top_k, len(names)))]]
    lo, span = params.minimum, params.maximum - params.minimum
    for j in top:
        pd = forest_mod.partial_dependence(forest, data, j)
        _write_csv(out / f"pdp_{_safe(names[j])}.csv", [names[j], "normalized", "mean_prediction"],
                   [[_fmt(g * span[j] + lo[j]), _fmt(g), _fmt(p)] for g, p in pd])
    if len(top) >= 2:
        a, b = top[0], top[1]
        ga, gb = forest_mod.default_grid(data, a), forest_mod.default_grid(data, b)
        surface = forest_mod.partial_dependence_2d(forest, data, a, b, ga, gb)
        rows = [[_fmt(ga[i] * span[a] + lo[a]), _fmt(gb[k] * span[b] + lo[b]), _fmt(surface[i, k])]
                for i in range(len(ga)) for k in range(len(gb))]
        _write_csv(out / f"pdp2d_{_safe(names[a])}__{_safe(names[b])}.csv",
                   [names[a], names[b], "mean_prediction"], rows)
    return 0


def cmd_stats(cfg: RunConfig) -> int:
    out = _out_dir(cfg)
    raw = knn_impute(load_csv(_require(cfg.input_csv, "input_csv")), cfg.knn_k)
    print(_write_stats(out, _raw_stats(raw)), end="")
    return 0


COMMANDS = {
    "train": cmd_train,
    "forecast": cmd_forecast,
    "evaluate": cmd_evaluate,
    "explain": cmd_explain,
    "stats": cmd_stats,
}


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value file with defaults for any flag")
    common.add_argument("--output-dir", dest="output_dir",
                        help=f"where reports go (env {OUTPUT_DIR_ENV}, default ./qrf_output)")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="qrfdensity", description="Quantile random forest density forecasting")
    sub = p.add_subparsers(dest="command", required=True)

    train = sub.add_parser("train", parents=[common], help="impute, normalize, split and fit a forest")
    train.add_argument("--input-csv", dest="input_csv")
    train.add_argument("--train-fraction", dest="train_fraction", type=float)
    train.add_argument("--knn-k", dest="knn_k", type=int)
    train.add_argument("--ntree", type=int)
    train.add_argument("--mtry", type=int)
    train.add_argument("--min-node-size", dest="min_node_size", type=int)
    train.add_argument("--bootstrap", dest="bootstrap", action=argparse.BooleanOptionalAction, default=None)
    train.add_argument("--seed", type=int)
    train.add_argument("--jobs", type=int, help="worker processes for tree building")

    fc = sub.add_parser("forecast", parents=[common], help="median, interval and density per query row")
    fc.add_argument("--model")
    fc.add_argument("--query-csv", dest="query_csv")
    fc.add_argument("--level", "--confidence-level", dest="confidence_level", type=float)
    fc.add_argument("--emit-density", dest="emit_density", action="store_true", default=None)
    fc.add_argument("--tau-grid-size", dest="tau_grid_size", type=int)
    fc.add_argument("--grid-points", dest="grid_points", type=int)

    ev = sub.add_parser("evaluate", parents=[common], help="point and interval scores on a test table")
    ev.add_argument("--model")
    ev.add_argument("--test-csv", dest="test_csv")
    ev.add_argument("--level", "--confidence-level", dest="confidence_level", type=float)

    ex = sub.add_parser("explain", parents=[common], help="permutation importance and partial dependence")
    ex.add_argument("--model")
    ex.add_argument("--data-csv", dest="data_csv")
    ex.add_argument("--top-k", dest="top_k", type=int)

    st = sub.add_parser("stats", parents=[common], help="summary statistics of a table")
    st.add_argument("--input-csv", dest="input_csv")
    st.add_argument("--knn-k", dest="knn_k", type=int)
    return p


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = build_config(args)
        return COMMANDS[args.command](cfg)
    except QRFError as exc:
        print(f"error: {exc.tag}: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: IoError: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
