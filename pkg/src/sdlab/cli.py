"""Deterministic experiment front-end.

Every subcommand resolves its parameters from built-in defaults, then an
optional flat ``key = value`` config file, then command-line flags, in that
order.  Unknown keys are rejected.  Results go to CSV (one record per row)
or JSON; each run also writes a run-record JSON embedding the fully
resolved config and the package version, so outputs are reproducible
byte-for-byte from the record.  Exit codes: 0 success, 1 invalid input,
2 I/O failure, 3 solver failure.  ``SD_LAB_THREADS`` caps sweep
parallelism; results never depend on scheduling because every grid point
derives its own seed via ``mix64(seed, index)``.
"""
from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .exceptions import (
    BracketingError,
    DegenerateDesignError,
    InconsistentSolutionError,
    InvalidInputError,
    SolverError,
    StepSizeError,
)
from .features import load_features
from .gram import GramSpec, gram_table
from .logistic import (
    CorruptionSetting,
    accuracy_row,
    student_advantage_interval,
)
from .probe import (
    CorruptionSpec,
    FeatureDataset,
    ProbeConfig,
    gaussian_clusters,
    xi_sweep,
)
from .ridge import NoiseSpec, SpectralDesign
from .seeding import mix64, stream
from .tuning import (
    error_curve_sweep,
    minimize_reg_error,
    minimize_sd_error,
    optimal_xi,
    powerlaw_design,
    reg_error,
    sd_error,
)

_SOLVER_ERRORS = (SolverError, BracketingError, StepSizeError, InconsistentSolutionError)


# ---------------------------------------------------------------------------
# config resolution
# ---------------------------------------------------------------------------

class _Key:
    def __init__(self, kind, default, help_text):
        self.kind = kind
        self.default = default
        self.help = help_text

    def parse(self, text: str):
        try:
            if self.kind == "float":
                return float(text)
            if self.kind == "int":
                return int(text)
            if self.kind == "floats":
                return [float(part) for part in str(text).split(",") if part.strip() != ""]
            return str(text)
        except ValueError as exc:
            raise InvalidInputError(f"cannot parse {text!r}: {exc}") from exc


_COMMON = {
    "seed": _Key("int", 0, "base seed; grid points derive children via mix64"),
    "out": _Key("str", ".", "output directory"),
    "format": _Key("str", "csv", "output format: csv or json"),
}

_SCHEMAS: dict[str, dict[str, _Key]] = {
    "ridge-sweep": {
        **_COMMON,
        "gamma": _Key("floats", [0.25], "noise levels, one output file each"),
        "dim": _Key("int", 100, "power-law design dimension"),
    },
    "logit-figure1": {
        **_COMMON,
        "r": _Key("floats", [0.2], "dimensionless penalty ratios, one file each"),
        "c": _Key("float", 0.1, "within-class feature correlation"),
        "n": _Key("int", 5000, "samples per class"),
        "p-step": _Key("float", 0.005, "flip-fraction grid step"),
    },
    "gram-table": {
        **_COMMON,
        "dist": _Key("str", "uniform", "factor law: uniform or bernoulli"),
        "n": _Key("int", 1000, "samples per class"),
        "p": _Key("float", 0.45, "flip fraction"),
        "lambda-hat": _Key("float", 0.75, "scaled ridge penalty"),
        "q": _Key("float", 0.8, "bernoulli hit probability"),
        "method": _Key("str", "auto", "dual solver: auto, fixedpoint or newton"),
    },
    "probe-run": {
        **_COMMON,
        "features": _Key("str", "", "feature file (csv or binary); empty = synthetic"),
        "classes": _Key("int", 10, "synthetic class count"),
        "dim": _Key("int", 50, "synthetic feature dimension"),
        "train-per-class": _Key("int", 500, "synthetic training samples per class"),
        "test-per-class": _Key("int", 100, "synthetic test samples per class"),
        "separation": _Key("float", 3.0, "synthetic cluster mean separation"),
        "test-fraction": _Key("float", 0.2, "test share for file-loaded features"),
        "superclass-size": _Key("int", 2, "classes per superclass group"),
        "corruption": _Key("str", "random", "random, hierarchical or adversarial"),
        "level": _Key("float", 0.5, "corruption level in [0, 1]"),
        "k": _Key("int", 5, "hard-class count for adversarial corruption"),
        "xi": _Key("floats", [1.0], "imitation weights"),
        "lam": _Key("float", 1e-3, "L2 penalty"),
        "step-size": _Key("float", 0.1, "gradient-descent step size"),
        "epochs": _Key("int", 300, "full-batch epochs"),
        "batch-size": _Key("int", 0, "mini-batch size; 0 = full batch"),
    },
    "xi-star": {
        **_COMMON,
        "sigma": _Key("floats", [], "singular values; empty = power-law design"),
        "signal": _Key("floats", [], "signal projections; empty = power-law design"),
        "null-mass": _Key("float", 0.0, "unrecoverable signal mass"),
        "dim": _Key("int", 0, "ambient dimension; 0 = automatic"),
        "gamma-sq": _Key("float", 0.0625, "label-noise variance"),
        "lam": _Key("float", 0.0625, "ridge penalty"),
    },
    "lambda-compare": {
        **_COMMON,
        "sigma": _Key("floats", [], "singular values; empty = power-law design"),
        "signal": _Key("floats", [], "signal projections; empty = power-law design"),
        "null-mass": _Key("float", 0.0, "unrecoverable signal mass"),
        "dim": _Key("int", 0, "ambient dimension; 0 = automatic"),
        "gamma": _Key("float", 0.25, "label-noise standard deviation"),
        "bracket-lo": _Key("float", 0.0, "lower penalty bound; 0 = automatic"),
        "bracket-hi": _Key("float", 0.0, "upper penalty bound; 0 = automatic"),
    },
}
_SCHEMAS["probe-sweep"] = dict(_SCHEMAS["probe-run"])
_SCHEMAS["probe-sweep"]["xi"] = _Key("floats", [0.0, 0.5, 1.0, 1.5, 2.0],
                                     "imitation-weight grid")


def _read_config_file(path: str) -> dict[str, str]:
    values = {}
    with open(path) as handle:
        for lineno, raw in enumerate(handle, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise InvalidInputError(f"{path}:{lineno}: expected key = value")
            key, _, value = line.partition("=")
            values[key.strip()] = value.strip()
    return values


def _resolve(command: str, config_path: str | None, overrides: list[str],
             flag_values: dict[str, list[str]]) -> dict:
    schema = _SCHEMAS[command]
    resolved = {key: spec.default for key, spec in schema.items()}
    if config_path:
        for key, text in _read_config_file(config_path).items():
            if key not in schema:
                raise InvalidInputError(f"unknown config key {key!r} for {command}")
            resolved[key] = schema[key].parse(text)
    for item in overrides:
        if "=" not in item:
            raise InvalidInputError(f"override {item!r} must look like key=value")
        key, _, text = item.partition("=")
        key = key.strip()
        if key not in schema:
            raise InvalidInputError(f"unknown key {key!r} for {command}")
        resolved[key] = schema[key].parse(text.strip())
    for key, texts in flag_values.items():
        if not texts:
            continue
        spec = schema[key]
        if spec.kind == "floats":
            # repeated flags accumulate; each occurrence may be a comma list
            merged = []
            for text in texts:
                merged.extend(spec.parse(text))
            resolved[key] = merged
        else:
            resolved[key] = spec.parse(texts[-1])
    return resolved


def _print_config(command: str, resolved: dict) -> None:
    print(f"# {command} resolved config")
    for key in sorted(resolved):
        value = resolved[key]
        if isinstance(value, list):
            value = ",".join(f"{v:g}" for v in value)
        print(f"{key} = {value}")


# ---------------------------------------------------------------------------
# output helpers
# ---------------------------------------------------------------------------

def _cell(value):
    if isinstance(value, float):
        return repr(value)
    return value


def _write_rows(path: Path, header: list[str], rows: list[dict]) -> None:
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle, quoting=csv.QUOTE_MINIMAL)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_cell(row[key]) for key in header])


def _write_json(path: Path, payload: dict) -> None:
    with open(path, "w") as handle:
        json.dump(payload, handle, indent=2, sort_keys=True)
        handle.write("\n")


def _emit(out_dir: Path, stem: str, header: list[str], rows: list[dict],
          fmt: str) -> str:
    if fmt == "json":
        name = f"{stem}.json"
        _write_json(out_dir / name, {"records": rows})
    else:
        name = f"{stem}.csv"
        _write_rows(out_dir / name, header, rows)
    return name


def _run_record(out_dir: Path, command: str, resolved: dict, outputs: list[str]) -> None:
    _write_json(out_dir / f"{command}.run.json", {
        "command": command,
        "version": __version__,
        "config": resolved,
        "outputs": outputs,
    })


def _workers(n_items: int) -> int:
    cap = os.environ.get("SD_LAB_THREADS", "")
    try:
        limit = max(1, int(cap)) if cap else min(4, os.cpu_count() or 1)
    except ValueError:
        limit = 1
    return max(1, min(limit, n_items))


def _parallel_map(fn, items: list):
    workers = _workers(len(items))
    if workers == 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def _design_from(config: dict) -> SpectralDesign:
    if config["sigma"]:
        if not config["signal"]:
            raise InvalidInputError("signal must be given alongside sigma")
        return SpectralDesign(
            sigma=np.asarray(config["sigma"]),
            signal=np.asarray(config["signal"]),
            null_mass=config["null-mass"],
            dim=config["dim"] if config["dim"] else None,
        )
    return powerlaw_design(config["dim"] if config["dim"] else 100)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def _cmd_ridge_sweep(config: dict, out_dir: Path) -> tuple[int, list[str]]:
    design = powerlaw_design(config["dim"])
    outputs = []
    header = ["lambda", "e_reg", "e_sd", "xi_star", "e_sd_prime"]
    for gamma in config["gamma"]:
        records = error_curve_sweep(gamma, design)
        rows = [
            {"lambda": r.lam, "e_reg": r.e_reg, "e_sd": r.e_sd,
             "xi_star": r.xi_star, "e_sd_prime": r.e_sd_prime}
            for r in records
        ]
        outputs.append(_emit(out_dir, f"ridge-sweep-gamma-{gamma:g}", header, rows,
                             config["format"]))
    return 0, outputs


def _cmd_logit_figure1(config: dict, out_dir: Path) -> tuple[int, list[str]]:
    step = config["p-step"]
    if not 0.0 < step < 0.5:
        raise InvalidInputError("p-step must lie in (0, 0.5)")
    p_grid = np.arange(step, 0.5, step)
    outputs, total, solved = [], 0, 0
    header = ["p", "teacher_acc", "student_acc", "bound_lo", "bound_hi", "status"]
    for r in config["r"]:
        interval = student_advantage_interval(r)

        def one(p: float) -> dict:
            row = {"p": float(p), "bound_lo": interval.lo, "bound_hi": interval.hi}
            try:
                setting = CorruptionSetting.from_ratio(r, config["c"], config["n"], float(p))
                solved_row = accuracy_row(setting)
                row.update(teacher_acc=solved_row["teacher_acc"],
                           student_acc=solved_row["student_acc"], status="ok")
            except _SOLVER_ERRORS as exc:
                row.update(teacher_acc="", student_acc="", status=f"solver_error: {exc}")
            return row

        rows = _parallel_map(one, [float(p) for p in p_grid])
        total += len(rows)
        solved += sum(1 for row in rows if row["status"] == "ok")
        outputs.append(_emit(out_dir, f"logit-figure1-r-{r:g}", header, rows,
                             config["format"]))
    code = 0 if total == 0 or solved / total >= 0.95 else 3
    return code, outputs


def _cmd_gram_table(config: dict, out_dir: Path) -> tuple[int, list[str]]:
    spec = GramSpec(n=config["n"], p=config["p"], dist=config["dist"],
                    lambda_hat=config["lambda-hat"], seed=config["seed"],
                    q=config["q"])
    table = gram_table(spec, method=config["method"])
    rows = []
    for record in table:
        for kind in ("avg", "a3"):
            rows.append({
                "model": record["model"],
                "group": record["group"],
                "kind": kind,
                "value": record["avg_pred"] if kind == "avg" else record["a3_pred"],
            })
    outputs = [_emit(out_dir, "gram-table", ["model", "group", "kind", "value"],
                     rows, config["format"])]
    _write_json(out_dir / "gram-table.detail.json", {"rows": table})
    outputs.append("gram-table.detail.json")
    return 0, outputs


def _load_probe_dataset(config: dict) -> FeatureDataset:
    if config["features"]:
        features, labels = load_features(config["features"])
        n_classes = int(labels.max()) + 1
        rng = stream(config["seed"], 3)
        order = rng.permutation(features.shape[0])
        if not 0.0 < config["test-fraction"] < 1.0:
            raise InvalidInputError("test-fraction must lie strictly in (0, 1)")
        n_test = max(1, int(round(config["test-fraction"] * features.shape[0])))
        if n_test >= features.shape[0]:
            raise InvalidInputError("test-fraction leaves no training samples")
        size = config["superclass-size"]
        if size < 1:
            raise InvalidInputError("superclass-size must be positive")
        return FeatureDataset(
            features=features, labels=labels, n_classes=n_classes,
            train_idx=order[n_test:], test_idx=order[:n_test],
            superclass=np.arange(n_classes) // size,
        )
    return gaussian_clusters(
        n_classes=config["classes"], dim=config["dim"],
        train_per_class=config["train-per-class"],
        test_per_class=config["test-per-class"],
        separation=config["separation"], seed=config["seed"],
        superclass_size=config["superclass-size"],
    )


def _cmd_probe(config: dict, out_dir: Path, stem: str) -> tuple[int, list[str]]:
    dataset = _load_probe_dataset(config)
    corruption = CorruptionSpec(kind=config["corruption"], level=config["level"],
                                k=config["k"], seed=mix64(config["seed"], 1))
    probe_config = ProbeConfig(lam=config["lam"], step_size=config["step-size"],
                               epochs=config["epochs"], batch_size=config["batch-size"],
                               seed=config["seed"])
    results = xi_sweep(dataset, corruption, config["xi"], probe_config)
    header = ["xi", "teacher_test_acc", "student_test_acc", "improvement",
              "mean_teacher_variability", "mean_student_variability"]
    rows = []
    for result in results:
        pairs = np.asarray(result.per_class_variability)
        rows.append({
            "xi": result.xi,
            "teacher_test_acc": result.teacher_test_acc,
            "student_test_acc": result.student_test_acc,
            "improvement": result.improvement,
            "mean_teacher_variability": float(pairs[:, 0].mean()),
            "mean_student_variability": float(pairs[:, 1].mean()),
        })
    outputs = [_emit(out_dir, stem, header, rows, config["format"])]
    summary = {
        "results": [
            {
                "xi": result.xi,
                "teacher_test_acc": result.teacher_test_acc,
                "student_test_acc": result.student_test_acc,
                "improvement": result.improvement,
                "teacher_grad_norm": result.teacher_grad_norm,
                "student_grad_norm": result.student_grad_norm,
                "per_class_variability": [list(pair) for pair in
                                          result.per_class_variability],
            }
            for result in results
        ],
    }
    _write_json(out_dir / f"{stem}.summary.json", summary)
    outputs.append(f"{stem}.summary.json")
    return 0, outputs


def _cmd_xi_star(config: dict, out_dir: Path) -> tuple[int, list[str]]:
    design = _design_from(config)
    value = optimal_xi(design, NoiseSpec(gamma_sq=config["gamma-sq"]), config["lam"])
    print(repr(value))
    return 0, []


def _cmd_lambda_compare(config: dict, out_dir: Path) -> tuple[int, list[str]]:
    design = _design_from(config)
    noise = NoiseSpec(gamma_sq=config["gamma"] ** 2)
    bracket = None
    if config["bracket-lo"] > 0 and config["bracket-hi"] > 0:
        bracket = (config["bracket-lo"], config["bracket-hi"])
    best_reg = reg_error(design, noise, minimize_reg_error(design, noise, bracket))
    best_sd = sd_error(design, noise, minimize_sd_error(design, noise, bracket))
    print(f"{best_reg!r} {best_sd!r}")
    return 0, []


_RUNNERS = {
    "ridge-sweep": _cmd_ridge_sweep,
    "logit-figure1": _cmd_logit_figure1,
    "gram-table": _cmd_gram_table,
    "probe-run": lambda config, out: _cmd_probe(config, out, "probe-run"),
    "probe-sweep": lambda config, out: _cmd_probe(config, out, "probe-sweep"),
    "xi-star": _cmd_xi_star,
    "lambda-compare": _cmd_lambda_compare,
}

_NO_FILES = ("xi-star", "lambda-compare")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sdlab",
        description="self-distillation analysis toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for command, schema in _SCHEMAS.items():
        cmd = sub.add_parser(command, help=f"run {command}")
        cmd.add_argument("--config", default=None, help="flat key = value config file")
        cmd.add_argument("--print-config", action="store_true",
                         help="print the resolved config and exit")
        for key, spec in schema.items():
            cmd.add_argument(f"--{key}", dest=f"key_{key.replace('-', '_')}",
                             action="append", metavar="VALUE", help=spec.help)
        cmd.add_argument("overrides", nargs="*", metavar="key=value",
                         help="positional overrides (flags take precedence)")
    return parser


def main(argv=None) -> int:
    try:
        args = _build_parser().parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else 1
    try:
        flag_values = {
            key: getattr(args, f"key_{key.replace('-', '_')}") or []
            for key in _SCHEMAS[args.command]
        }
        resolved = _resolve(args.command, args.config, args.overrides, flag_values)
        if args.print_config:
            _print_config(args.command, resolved)
            return 0
        out_dir = Path(resolved.get("out", "."))
        if args.command not in _NO_FILES:
            out_dir.mkdir(parents=True, exist_ok=True)
        code, outputs = _RUNNERS[args.command](resolved, out_dir)
        if args.command not in _NO_FILES:
            _run_record(out_dir, args.command, resolved, outputs)
        return code
    except (InvalidInputError, DegenerateDesignError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 2
    except _SOLVER_ERRORS as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
