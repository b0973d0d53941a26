"""``tempair`` command-line interface.

    tempair <subcommand> --config <path> [--out <dir>] [--seed <u64>] [--workers <n>]

Subcommands: ``theorem1``, ``kl-temperature``, ``sweep``, ``residuals`` and
``equivariance``.  The config is one JSON document; every section is merged
over the subcommand's defaults and unknown keys are rejected before any
computation starts.

Exit codes: 0 success, 2 configuration error, 3 numerical tolerance
failure, 4 degenerate model.
"""

import argparse
import copy
import datetime
import json
import sys
import time
from pathlib import Path

from . import experiments as ex
from .exceptions import ConfigError, InvalidArgumentError, SingularCovarianceError, TempairError
from .io import write_csv, write_json, write_manifest

EXIT_OK, EXIT_CONFIG, EXIT_TOLERANCE, EXIT_DEGENERATE = 0, 2, 3, 4

_MODEL = {"architecture": "gconv", "group": "p4m", "channels": [4], "kernel_size": 3, "stride": 1,
          "padding": "circular", "bias": False}
_DATA = {"size": 8, "n_train": 16, "n_test": 2000, "noise": 0.1, "contrast": [-3.0, 3.0],
         "labels": "teacher", "label_noise": 0.1, "teacher_channels": 4, "teacher_bias": False}
_OUTPUT = {"directory": None, "formats": ["csv", "json"]}

DEFAULTS = {
    "theorem1": {
        "seed": 0,
        "model": {"n_cases": 100, "max_n": 8, "max_B": 16, "B": None, "sigma_eta_sq": None,
                  "temperature": "optimal", "tolerance": 1e-10},
        "output": _OUTPUT,
    },
    "kl-temperature": {
        "seed": 0,
        "model": {"B": [1, 2, 3, 4, 8, 16, 32], "sigma_eps_sq": [0.5, 1.0, 2.0],
                  "sigma_eta_sq": [0.5, 1.0, 2.0], "tolerance": 1e-6},
        "output": _OUTPUT,
    },
    "sweep": {
        "seed": 0,
        "model": _MODEL,
        "data": _DATA,
        "prior": {"sigma_prior_sq": 2.0},
        "augmentation": {"spec": {"type": "rot90flip", "group": "p4m"}, "B": 16},
        "sampler": {"alpha0": 1.5e-3, "cycle_len": 20, "burn_in": 600, "epochs": 3000, "batch_size": 16,
                    "modes": ["likelihood"], "precondition": False, "schedule": "cyclical",
                    "couple_step_to_temperature": True, "init": "prior"},
        "sweep": {"temperatures": None, "geometric": {"low": 1.0, "high": 64.0, "points": 7},
                  "replicates": 4},
        "output": _OUTPUT,
    },
    "residuals": {
        "seed": 0,
        "model": dict(_MODEL, bias=True),
        "data": dict(_DATA, size=16, labels="pattern", contrast=[0.7, 1.3], noise=0.3),
        "augmentation": {"spec": {"type": "rot90flip", "group": "p4m"}, "B": 5},
        "residuals": {"n_groups": 2000},
        "output": _OUTPUT,
    },
    "equivariance": {
        "seed": 0,
        "equivariance": {
            "groups": ["p4", "p4m"], "strides": [1, 2], "paddings": ["circular", "zeros"],
            "channels": [2, 2], "kernel_size": 3, "size": 8, "n_inputs": 20, "B": 8, "tolerance": 1e-6,
            "augmentations": [
                {"type": "rot90flip", "group": "p4m"},
                {"type": "composition", "specs": [{"type": "rot90flip", "group": "p4m"},
                                                  {"type": "small_rotation", "max_degrees": 10.0}]},
            ],
        },
        "output": _OUTPUT,
    },
}

# keys whose values are free-form (not merged key by key)
_OPAQUE = {"spec", "augmentations", "geometric", "contrast", "channels", "temperatures", "modes", "formats",
           "B", "sigma_eps_sq", "sigma_eta_sq", "groups", "strides", "paddings", "temperature"}


def _merge(defaults, user, path):
    if not isinstance(user, dict):
        raise ConfigError(f"{path or 'config'} must be a JSON object")
    unknown = sorted(set(user) - set(defaults))
    if unknown:
        raise ConfigError(f"unknown key(s) in {path or 'config'}: {', '.join(unknown)}")
    out = copy.deepcopy(defaults)
    for key, value in user.items():
        where = f"{path}.{key}" if path else key
        default = defaults[key]
        if isinstance(default, dict) and key not in _OPAQUE:
            out[key] = _merge(default, value, where)
        elif default is None or key in _OPAQUE or value is None:
            out[key] = value
        elif isinstance(default, bool):
            if not isinstance(value, bool):
                raise ConfigError(f"{where} must be a boolean")
            out[key] = value
        elif isinstance(default, (int, float)):
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise ConfigError(f"{where} must be a number")
            if isinstance(default, int) and not isinstance(value, int):
                raise ConfigError(f"{where} must be an integer")
            out[key] = value
        elif not isinstance(value, type(default)):
            raise ConfigError(f"{where} must be of type {type(default).__name__}")
        else:
            out[key] = value
    return out


def load_config(command, text):
    try:
        user = json.loads(text) if text.strip() else {}
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from None
    return _merge(DEFAULTS[command], user, "")


def _validate(command, cfg):
    """Module-level checks that must pass before any computation."""
    if command == "theorem1":
        m = cfg["model"]
        if m["n_cases"] < 1 or m["max_n"] < 1 or m["max_B"] < 1:
            raise ConfigError("n_cases, max_n and max_B must be >= 1")
        if m["temperature"] != "optimal" and not (isinstance(m["temperature"], (int, float)) and m["temperature"] > 0):
            raise ConfigError("model.temperature must be 'optimal' or a positive number")
        if m["sigma_eta_sq"] is not None and m["sigma_eta_sq"] < 0:
            raise ConfigError("model.sigma_eta_sq must be >= 0")
    elif command == "kl-temperature":
        m = cfg["model"]
        if not (m["B"] and m["sigma_eps_sq"] and m["sigma_eta_sq"]):
            raise ConfigError("kl-temperature grid must be nonempty")
        if any(int(b) != b or b < 1 for b in m["B"]):
            raise ConfigError("grid B values must be integers >= 1")
        if any(v <= 0 for v in m["sigma_eps_sq"]) or any(v < 0 for v in m["sigma_eta_sq"]):
            raise ConfigError("sigma_eps_sq must be > 0 and sigma_eta_sq >= 0")
    elif command in ("sweep", "residuals"):
        from . import augment

        ex.build_model(cfg["model"], cfg["data"]["size"])
        augment.spec_from_config(cfg["augmentation"]["spec"])
        if cfg["augmentation"]["B"] < 1:
            raise ConfigError("augmentation.B must be >= 1")
        if cfg["data"]["labels"] not in ("pattern", "teacher"):
            raise ConfigError("data.labels must be 'pattern' or 'teacher'")
        if command == "sweep":
            ex.temperature_grid(cfg["sweep"])
            if cfg["sweep"]["replicates"] < 1:
                raise ConfigError("sweep.replicates must be >= 1")
            if cfg["sampler"]["init"] not in ("prior", "he"):
                raise ConfigError("sampler.init must be 'prior' or 'he'")
            for mode in cfg["sampler"]["modes"]:
                ex.sampler_config(cfg["sampler"], 1.0, mode, 0)
            if cfg["prior"]["sigma_prior_sq"] <= 0:
                raise ConfigError("prior.sigma_prior_sq must be > 0")
        elif cfg["residuals"]["n_groups"] < 2 or cfg["augmentation"]["B"] < 2:
            raise ConfigError("residuals need n_groups >= 2 and B >= 2")
    elif command == "equivariance":
        from . import augment

        e = cfg["equivariance"]
        for a in e["augmentations"]:
            augment.spec_from_config(a)
        if e["n_inputs"] < 1 or e["B"] < 2:
            raise ConfigError("equivariance needs n_inputs >= 1 and B >= 2")


def _cmd_theorem1(cfg, out):
    rows, report = ex.run_theorem1(cfg["model"], cfg["seed"])
    write_csv(out / "theorem1_cases.csv", ex.THEOREM1_COLUMNS, [[r[c] for c in ex.THEOREM1_COLUMNS] for r in rows])
    write_json(out / "theorem1_report.json", report)
    return (EXIT_OK if report["passed"] else EXIT_TOLERANCE), ["theorem1_cases.csv", "theorem1_report.json"]


def _cmd_kl(cfg, out):
    rows, report = ex.run_kl_grid(cfg["model"])
    write_csv(out / "kl_temperature.csv", ex.KL_COLUMNS, rows)
    write_json(out / "kl_report.json", report)
    code = EXIT_OK if report["all_agree"] else EXIT_TOLERANCE
    return code, ["kl_temperature.csv", "kl_report.json"]


def _cmd_sweep(cfg, out, workers):
    rows, summary, report = ex.run_sweep(cfg, cfg["seed"], workers)
    write_csv(out / "sweep.csv", ex.SWEEP_COLUMNS, rows)
    write_csv(out / "sweep_summary.csv", ex.SWEEP_SUMMARY_COLUMNS, summary)
    write_json(out / "sweep_report.json", report)
    return EXIT_OK, ["sweep.csv", "sweep_summary.csv", "sweep_report.json"]


def _cmd_residuals(cfg, out):
    res_aug, res_iid, report = ex.run_residuals(cfg, cfg["seed"])
    write_csv(out / "residuals_augmented.csv", ex.RESIDUAL_COLUMNS, res_aug.rows())
    write_csv(out / "residuals_unaugmented.csv", ex.RESIDUAL_COLUMNS, res_iid.rows())
    write_json(out / "correlations.json", report)
    return EXIT_OK, ["residuals_augmented.csv", "residuals_unaugmented.csv", "correlations.json"]


def _cmd_equivariance(cfg, out):
    report = ex.run_equivariance(cfg, cfg["seed"])
    write_json(out / "equivariance.json", report)
    return EXIT_OK, ["equivariance.json"]


COMMANDS = ("theorem1", "kl-temperature", "sweep", "residuals", "equivariance")


def build_parser():
    parser = argparse.ArgumentParser(prog="tempair", description="Tempering and augmentation experiments.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="JSON experiment config")
        p.add_argument("--out", help="output directory (overrides output.directory)")
        p.add_argument("--seed", type=int, help="master seed (overrides the config's seed)")
        p.add_argument("--workers", type=int, default=1, help="concurrent sweep points")
    return parser


def run(argv=None):
    """Parse arguments, run a subcommand and return its exit code."""
    args = build_parser().parse_args(argv)
    try:
        raw = Path(args.config).read_text()
        cfg = load_config(args.command, raw)
        if args.seed is not None:
            if not 0 <= args.seed < 2**64:
                raise ConfigError("--seed must be an unsigned 64-bit integer")
            cfg["seed"] = args.seed
        if args.workers < 1:
            raise ConfigError("--workers must be >= 1")
        _validate(args.command, cfg)
    except (ConfigError, InvalidArgumentError, OSError) as exc:
        print(f"tempair: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    out = Path(args.out or cfg["output"]["directory"] or f"tempair-out/{args.command}")
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(raw)
    started = datetime.datetime.now(datetime.timezone.utc).isoformat()
    t0 = time.perf_counter()
    try:
        if args.command == "theorem1":
            code, outputs = _cmd_theorem1(cfg, out)
        elif args.command == "kl-temperature":
            code, outputs = _cmd_kl(cfg, out)
        elif args.command == "sweep":
            code, outputs = _cmd_sweep(cfg, out, args.workers)
        elif args.command == "residuals":
            code, outputs = _cmd_residuals(cfg, out)
        else:
            code, outputs = _cmd_equivariance(cfg, out)
    except SingularCovarianceError as exc:
        print(f"tempair: degenerate model: {exc}", file=sys.stderr)
        write_json(out / "error.json", {"error": "degenerate model", "detail": str(exc)})
        return EXIT_DEGENERATE
    except (ConfigError, InvalidArgumentError) as exc:
        print(f"tempair: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except TempairError as exc:
        print(f"tempair: {exc}", file=sys.stderr)
        return EXIT_DEGENERATE
    write_manifest(out, args.command, json.loads(raw) if raw.strip() else {}, cfg["seed"],
                   outputs + ["config.json"], started, time.perf_counter() - t0)
    if code == EXIT_TOLERANCE:
        print("tempair: numerical tolerance exceeded; see report", file=sys.stderr)
    return code


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
