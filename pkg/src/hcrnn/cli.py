"""``hcrnn`` command line.

Every subcommand prints a JSON document on stdout (``fit`` prints its
coefficient table first).  Exit codes: 0 success, 2 usage error, 3 data
error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from contextlib import nullcontext
from dataclasses import dataclass, field, fields

import numpy as np
from threadpoolctl import threadpool_limits

from .basis import features, make_basis
from .density import CalibrationSpec, JointDensityModel, estimate, estimate_missing, log_likelihood
from .experiments import EXPERIMENTS, run_experiment, write_report
from .ibtrain import IbConfig, IbDivergence, config_dict, ib_train, write_trace_csv
from .info import independence_test, mutual_info_approx, mutual_info_corrected, mutual_info_features
from .normalize import Normalizer, fit_marginal, rank_normalize
from .propagate import MomentVector, conditional_density

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4
SCHEMES = ("full", "pairwise", "total")
CALIBRATIONS = ("none", "clamp", "softplus")
MOMENT_NAMES = {1: "mean", 2: "variance", 3: "skewness", 4: "kurtosis"}


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


@dataclass
class RunConfig:
    subcommand: str
    input: str | None = None
    columns: list[str] | None = None
    y_columns: list[str] | None = None
    model: str | None = None
    output: str | None = None
    layer_output: str | None = None
    degree: int = 4
    scheme: str = "full"
    normalizer: str = "empirical"
    calibration: str = "clamp"
    nu: float = 1.0
    floor: float = 0.1
    beta: float = 1.0
    moments_in: int = 2
    moments_out: int | None = None
    lr: float = 1e-2
    eta: float = 0.05
    epochs: int = 100
    batch: int = 256
    hidden: int = 2
    init: str = "uniform-random"
    update_mode: str = "layer-content"
    patience: int = 10
    seed: int = 0
    evidence: list[str] = field(default_factory=list)
    name: str | None = None
    trials: int = 500
    mc_samples: int = 100_000

    def validate(self) -> None:
        if self.scheme not in SCHEMES:
            raise UsageError(f"--scheme must be one of {SCHEMES}")
        if self.calibration not in CALIBRATIONS:
            raise UsageError(f"--calibration must be one of {CALIBRATIONS}")
        if self.normalizer not in ("empirical", "gaussian"):
            raise UsageError("--normalizer must be 'empirical' or 'gaussian'")
        if not 1 <= self.degree <= 30:
            raise UsageError("--degree must lie in 1..30")
        for name in ("epochs", "batch", "hidden", "trials", "moments_in", "patience"):
            if getattr(self, name) < 1:
                raise UsageError(f"--{name.replace('_', '-')} must be >= 1")
        if self.moments_out is not None and self.moments_out < 1:
            raise UsageError("--moments-out must be >= 1")
        needs_input = {"fit", "eval", "mi", "indep", "ib-train"}
        if self.subcommand in needs_input and not self.input:
            raise UsageError(f"{self.subcommand} needs --input")
        if self.subcommand in {"eval", "predict"} and not self.model:
            raise UsageError(f"{self.subcommand} needs --model")
        if self.subcommand == "eval" and self.calibration == "none":
            raise UsageError("eval needs --calibration clamp or softplus")
        if self.subcommand == "experiment" and self.name not in EXPERIMENTS:
            raise UsageError(f"unknown experiment {self.name!r}; choose from {sorted(EXPERIMENTS)}")


CONFIG_KEYS = {f.name for f in fields(RunConfig)} - {"subcommand"}


def load_config(path: str) -> dict:
    """Read a JSON object of RunConfig fields; unknown keys are rejected."""
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from None
    if not isinstance(doc, dict):
        raise UsageError("config must be a JSON object")
    unknown = sorted(set(doc) - CONFIG_KEYS)
    if unknown:
        raise UsageError(f"unknown config key(s): {', '.join(unknown)}")
    return doc


def read_csv(path: str, columns=None) -> tuple[list[str], np.ndarray]:
    """Parse a headed, comma-separated numeric CSV; empty cells become NaN."""
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot open {path}: {exc}") from None
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header:
            raise DataError(f"{path}: missing header row")
        header = [h.strip() for h in header]
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise DataError(f"{path}: line {lineno} has {len(row)} fields, header has {len(header)}")
            values = []
            for name, cell in zip(header, row):
                cell = cell.strip()
                try:
                    values.append(float(cell) if cell else np.nan)
                except ValueError:
                    raise DataError(f"{path}: line {lineno}, column {name!r}: cannot parse {cell!r}") from None
            rows.append(values)
    data = np.array(rows, dtype=float).reshape(len(rows), len(header))
    if columns:
        missing = [c for c in columns if c not in header]
        if missing:
            raise DataError(f"{path}: unknown column(s) {missing}; available: {header}")
        data = data[:, [header.index(c) for c in columns]]
        header = list(columns)
    return header, data


def _normalize_columns(data: np.ndarray, kind: str, names) -> tuple[Normalizer, np.ndarray]:
    """Fit marginals on the finite cells of each column; NaN cells stay NaN."""
    marginals = []
    out = np.full_like(data, np.nan)
    for k in range(data.shape[1]):
        col = data[:, k]
        ok = np.isfinite(col)
        try:
            marginals.append(fit_marginal(col[ok], kind))
        except ValueError as exc:
            raise DataError(f"column {names[k]!r}: {exc}") from None
        out[ok, k] = marginals[-1].forward(col[ok])
    return Normalizer(tuple(marginals), names), out


def moment_label(index, names) -> str:
    parts = []
    for name, p in zip(names, index):
        if p:
            parts.append(f"{name}:{MOMENT_NAMES.get(p, f'order-{p}')}")
    return " x ".join(parts)


def coefficient_table(model: JointDensityModel, names) -> list[dict]:
    rows = [
        {"index": list(j), "coefficient": float(a), "moments": moment_label(j, names)}
        for j, a in zip(model.basis.nontrivial, model.coeffs[1:])
    ]
    rows.sort(key=lambda r: -abs(r["coefficient"]))
    return rows


def _load_model(path: str) -> JointDensityModel:
    try:
        with open(path, encoding="utf-8") as fh:
            model = JointDensityModel.loads(fh.read())
    except (OSError, json.JSONDecodeError, KeyError) as exc:
        raise DataError(f"cannot load model {path}: {exc}") from None
    if model.normalizer is None or model.normalizer.columns is None:
        raise DataError(f"model {path} carries no column normalizers")
    return model


def cmd_fit(cfg: RunConfig, out=None) -> dict:
    out = out or sys.stdout
    names, data = read_csv(cfg.input, cfg.columns)
    if data.shape[0] < 2:
        raise DataError("fit needs at least 2 data rows")
    nz, u = _normalize_columns(data, cfg.normalizer, names)
    basis = make_basis(len(names), cfg.degree, cfg.scheme)
    if np.isnan(u).any():
        model = estimate_missing(basis, u)
        model = model.with_coeffs(model.coeffs, normalizer=nz)
    else:
        model = estimate(basis, u, nz)
    if cfg.output:
        with open(cfg.output, "w", encoding="utf-8") as fh:
            fh.write(model.dumps())
    table = coefficient_table(model, names)
    width = max([len(r["moments"]) for r in table] + [7])
    print(f"{'moments':<{width}}  {'index':<{3 * len(names) + 2}}  coefficient", file=out)
    for r in table:
        print(f"{r['moments']:<{width}}  {str(tuple(r['index'])):<{3 * len(names) + 2}}  {r['coefficient']:+.6f}",
              file=out)
    return {"columns": names, "rows": int(data.shape[0]), "basis_size": len(basis), "output": cfg.output,
            "coefficients": table}


def _calibration(cfg: RunConfig) -> CalibrationSpec:
    return CalibrationSpec(cfg.calibration, floor=cfg.floor, nu=cfg.nu, normalize=True)


def cmd_eval(cfg: RunConfig) -> dict:
    model = _load_model(cfg.model)
    _, data = read_csv(cfg.input, list(model.normalizer.columns))
    if np.isnan(data).any():
        raise DataError("eval needs complete rows")
    u = model.normalizer.transform(data)
    try:
        ll = log_likelihood(model, u, _calibration(cfg))
    except NotImplementedError as exc:
        raise UsageError(str(exc)) from None
    return {"rows": int(data.shape[0]), "calibration": cfg.calibration, "log2_likelihood": ll}


def parse_evidence(specs, names) -> tuple[list, list[int]]:
    """``col=value``, ``col=dist:b1,b2,...`` (normalized moments) or ``col=?``.

    Returns the evidence list in model order (raw values still unnormalized)
    and the target positions.
    """
    ev: list = [None] * len(names)
    targets = []
    for spec in specs:
        for item in filter(None, (s.strip() for s in spec.split(";"))):
            col, sep, value = item.partition("=")
            col = col.strip()
            if not sep:
                raise UsageError(f"evidence {item!r} must look like col=value")
            if col not in names:
                raise UsageError(f"unknown column {col!r}; model columns: {list(names)}")
            k = names.index(col)
            value = value.strip()
            if value == "?":
                targets.append(k)
            elif value.startswith("dist:"):
                try:
                    b = [float(v) for v in value[5:].split(",") if v.strip()]
                    ev[k] = MomentVector(np.array([1.0, *b]))
                except ValueError as exc:
                    raise UsageError(f"bad moment vector for {col!r}: {exc}") from None
            else:
                try:
                    ev[k] = float(value)
                except ValueError:
                    raise UsageError(f"cannot parse value {value!r} for {col!r}") from None
    if not targets:
        raise UsageError("evidence names no unknown column; mark targets with col=?")
    return ev, targets


def cmd_predict(cfg: RunConfig) -> dict:
    model = _load_model(cfg.model)
    names = list(model.normalizer.columns)
    ev, targets = parse_evidence(cfg.evidence, names)
    normed = [
        model.normalizer.forward(k, v) if isinstance(v, float) else v
        for k, v in enumerate(ev)
    ]
    result = {}
    for k in targets:
        local = list(normed)
        local[k] = None
        c = conditional_density(model, local, k)
        mean = c.mean()
        entry = {
            "normalized_mean": mean,
            "prediction": model.normalizer.inverse(k, float(np.clip(mean, 1e-12, 1 - 1e-12))),
        }
        if cfg.moments_out:
            entry["moments"] = c.truncate(min(cfg.moments_out, c.degree)).coeffs.tolist()
        result[names[k]] = entry
    return {"targets": result}


def _blocks(cfg: RunConfig):
    if not cfg.columns or not cfg.y_columns:
        raise UsageError(f"{cfg.subcommand} needs --columns and --y-columns")
    if set(cfg.columns) & set(cfg.y_columns):
        raise UsageError("--columns and --y-columns must be disjoint")
    _, data = read_csv(cfg.input, cfg.columns + cfg.y_columns)
    if np.isnan(data).any():
        raise DataError(f"{cfg.subcommand} needs complete rows")
    k = len(cfg.columns)
    return data[:, :k], data[:, k:]


def cmd_mi(cfg: RunConfig) -> dict:
    x, y = _blocks(cfg)
    ux, uy = rank_normalize(x), rank_normalize(y)
    fx = features(make_basis(x.shape[1], cfg.degree, cfg.scheme), ux)
    fy = features(make_basis(y.shape[1], cfg.degree, cfg.scheme), uy)
    joint = np.column_stack([ux, uy])
    out = {"rows": int(x.shape[0]), "mi_uncorrected": mutual_info_features(fx, fy),
           "mi_corrected": mutual_info_corrected(fx, fy)}
    if cfg.scheme != "full" or joint.shape[1] <= 4:
        model = estimate(make_basis(joint.shape[1], cfg.degree, cfg.scheme), joint)
        out["mi_model"] = mutual_info_approx(model, range(x.shape[1]), range(x.shape[1], joint.shape[1]))
    return out


def cmd_indep(cfg: RunConfig) -> dict:
    x, y = _blocks(cfg)
    rep = independence_test(x, y, degree=cfg.degree, mc_samples=cfg.mc_samples, seed=cfg.seed, scheme=cfg.scheme)
    doc = rep.to_dict()
    doc.pop("zscores")
    return doc


def cmd_ib_train(cfg: RunConfig) -> dict:
    x, y = _blocks(cfg)
    ib = IbConfig(beta=cfg.beta, degree_in=cfg.moments_in, degree_out=cfg.moments_out or cfg.moments_in,
                  alpha=cfg.lr, eta=cfg.eta, epochs=cfg.epochs, batch_size=cfg.batch, seed=cfg.seed,
                  init=cfg.init, update_mode=cfg.update_mode, patience=cfg.patience)
    res = ib_train(rank_normalize(x), rank_normalize(y), cfg.hidden, ib)
    if cfg.output:
        with open(cfg.output, "w", newline="", encoding="utf-8") as fh:
            write_trace_csv(res.trace, fh)
    if cfg.layer_output:
        np.savetxt(cfg.layer_output, res.layer.values, delimiter=",",
                   header=",".join(f"t{k + 1}" for k in range(cfg.hidden)), comments="")
    last = res.trace[-1]
    return {"config": config_dict(ib), "initial": vars(res.initial), "final": vars(last), "trace": cfg.output}


def cmd_experiment(cfg: RunConfig) -> dict:
    kwargs = {"trials": cfg.trials} if cfg.name == "indep-rotation" else {}
    report = run_experiment(cfg.name, seed=cfg.seed, **kwargs)
    if cfg.output:
        write_report(report, cfg.output)
    return report.summary()


COMMANDS = {
    "fit": cmd_fit,
    "eval": cmd_eval,
    "predict": cmd_predict,
    "mi": cmd_mi,
    "indep": cmd_indep,
    "ib-train": cmd_ib_train,
    "experiment": cmd_experiment,
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _csv_list(text: str) -> list[str]:
    return [c.strip() for c in text.split(",") if c.strip()]


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="JSON file of defaults (command-line flags win)")
    common.add_argument("--input")
    common.add_argument("--columns", type=_csv_list)
    common.add_argument("--y-columns", dest="y_columns", type=_csv_list)
    common.add_argument("--model")
    common.add_argument("--output")
    common.add_argument("--degree", type=int)
    common.add_argument("--scheme", choices=SCHEMES)
    common.add_argument("--seed", type=int)

    parser = _Parser(prog="hcrnn", description="Hierarchical correlation reconstruction tools.")
    sub = parser.add_subparsers(dest="subcommand", required=True, parser_class=_Parser)

    p = sub.add_parser("fit", parents=[common], help="estimate a joint density model from CSV")
    p.add_argument("--normalizer", choices=("empirical", "gaussian"))

    p = sub.add_parser("eval", parents=[common], help="mean log2-likelihood of CSV rows")
    p.add_argument("--calibration", choices=CALIBRATIONS)
    p.add_argument("--nu", type=float)
    p.add_argument("--floor", type=float)

    p = sub.add_parser("predict", parents=[common], help="conditional prediction from evidence")
    p.add_argument("--evidence", action="append", help="col=value, col=dist:b1,b2,... or col=?")
    p.add_argument("--moments-out", dest="moments_out", type=int)

    sub.add_parser("mi", parents=[common], help="mutual information between column blocks")

    p = sub.add_parser("indep", parents=[common], help="independence test between column blocks")
    p.add_argument("--mc-samples", dest="mc_samples", type=int)

    p = sub.add_parser("ib-train", parents=[common], help="train a hidden layer with the IB objective")
    p.add_argument("--beta", type=float)
    p.add_argument("--moments-in", dest="moments_in", type=int)
    p.add_argument("--moments-out", dest="moments_out", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--eta", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch", type=int)
    p.add_argument("--hidden", type=int)
    p.add_argument("--init", choices=("uniform-random", "feature-pca"))
    p.add_argument("--update-mode", dest="update_mode", choices=("layer-content", "weight-ema"))
    p.add_argument("--patience", type=int, help="epochs of rising objective tolerated before giving up")
    p.add_argument("--layer-output", dest="layer_output")

    p = sub.add_parser("experiment", parents=[common], help="rerun a synthetic experiment")
    p.add_argument("name")
    p.add_argument("--trials", type=int)
    return parser


def parse_config(argv) -> RunConfig:
    args = vars(build_parser().parse_args(argv))
    config_path = args.pop("config", None)
    merged = load_config(config_path) if config_path else {}
    merged.update({k: v for k, v in args.items() if v is not None and k != "subcommand"})
    try:
        cfg = RunConfig(subcommand=args["subcommand"], **merged)
    except TypeError as exc:
        raise UsageError(str(exc)) from None
    cfg.validate()
    return cfg


def _thread_limit():
    value = os.environ.get("HCR_THREADS")
    if not value:
        return nullcontext()
    try:
        limit = int(value)
    except ValueError:
        raise UsageError(f"HCR_THREADS must be a positive integer, got {value!r}") from None
    if limit < 1:
        raise UsageError("HCR_THREADS must be a positive integer")
    return threadpool_limits(limits=limit)


def main(argv=None) -> int:
    try:
        cfg = parse_config(sys.argv[1:] if argv is None else argv)
        with _thread_limit():
            result = COMMANDS[cfg.subcommand](cfg)
    except UsageError as exc:
        print(f"hcrnn: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, ValueError, OSError) as exc:
        print(f"hcrnn: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (FloatingPointError, ArithmeticError, IbDivergence, np.linalg.LinAlgError) as exc:
        print(f"hcrnn: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    print(json.dumps(result, indent=2, default=float))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
