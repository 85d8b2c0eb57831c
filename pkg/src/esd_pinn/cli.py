"""Command-line entry point: ``esd-pinn {integrate,train,evaluate,run,show-config}``.

Run configuration (JSON)::

    {
      "esd_params":    {"a1": 0.09, ..., "M": 1.8, "N": 1.0},
      "initial_state": [0.82, 0.29, 0.48, 0.1],
      "t_span":        [0.0, 100.0],
      "n_points":      20000,
      "network":  {"hidden_layers": 16, "hidden_width": 100, "seed": 0,
                   "input_scaling": null},
      "training": {"alpha": 10.0, "beta": 1.0, "lr_initial": 8e-05,
                   "lr_floor": 1e-06, "max_epochs": 175000,
                   "epsilon_stop": 1e-07, "adam_beta1": 0.9,
                   "adam_beta2": 0.999, "adam_eps": 1e-08,
                   "optimizer": "adam", "checkpoint_every": 1000,
                   "t_initial": 0.0, "log_every": 1000},
      "rk45":     {"atol": 1e-06, "rtol": 0.001},
      "output":   {"dir": "runs/full", "rk_csv": "rk45.csv",
                   "pinn_csv": "pinn.csv", "history_csv": "history.csv",
                   "checkpoint": "checkpoint.json",
                   "report_json": "report.json"}
    }

Omitted keys take the values above. ``ESD_PINN_THREADS`` sets the number of
training threads (0 or unset: one per CPU). Results do not depend on it.
"""

from __future__ import annotations

import argparse
import copy
import hashlib
import json
import logging
import os
import sys
import time
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

from threadpoolctl import threadpool_limits

from .esd_model import EsdParameters, default_chaotic_params, default_initial_state, validate_params
from .evaluator import GridMismatch, build_report
from .rk45 import IntegrationError, ToleranceSpec, integrate
from .solution import CsvFormatError, SolutionTable
from .trainer import (
    TrainingConfig,
    TrainingDiverged,
    TrainingHistory,
    checkpoint_dict,
    make_grid,
    predict,
    resume_from_dict,
    train,
)

log = logging.getLogger("esd_pinn")

DEFAULTS = {
    "esd_params": default_chaotic_params().to_dict(),
    "initial_state": list(default_initial_state()),
    "t_span": [0.0, 100.0],
    "n_points": 20000,
    "network": {"hidden_layers": 16, "hidden_width": 100, "seed": 0, "input_scaling": None},
    "training": {
        "alpha": 10.0, "beta": 1.0, "lr_initial": 8e-5, "lr_floor": 1e-6,
        "max_epochs": 175000, "epsilon_stop": 1e-7, "adam_beta1": 0.9, "adam_beta2": 0.999,
        "adam_eps": 1e-8, "optimizer": "adam", "checkpoint_every": 1000, "t_initial": 0.0,
        "log_every": 1000,
    },
    "rk45": {"atol": 1e-6, "rtol": 1e-3},
    "output": {
        "dir": "runs/full", "rk_csv": "rk45.csv", "pinn_csv": "pinn.csv",
        "history_csv": "history.csv", "checkpoint": "checkpoint.json",
        "report_json": "report.json",
    },
}

BUNDLED = ("full", "desk")


class ConfigError(ValueError):
    pass


class ConfigMissing(ConfigError):
    pass


@dataclass(frozen=True)
class RunConfig:
    esd_params: EsdParameters
    training: TrainingConfig
    tolerances: ToleranceSpec
    out_dir: Path
    files: dict
    log_every: int
    raw: dict

    @property
    def t_span(self):
        return self.training.t_span

    @property
    def n_points(self):
        return self.training.n_points

    def path(self, key: str) -> Path:
        return self.out_dir / self.files[key]

    def digest(self) -> str:
        canon = json.dumps(self.raw, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()


def _merge(base: dict, override: dict, where: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        path = f"{where}.{key}" if where else key
        if key not in base:
            raise ConfigError(f"{path}: unknown field")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"{path}: expected an object")
            out[key] = _merge(base[key], value, path)
        else:
            out[key] = value
    return out


def parse_config(text: str, source: str = "<config>", seed: int | None = None,
                 out_dir: str | None = None) -> RunConfig:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{source}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{source}: top level must be a JSON object")
    raw = _merge(DEFAULTS, data)
    if seed is not None:
        raw["network"]["seed"] = seed
    if out_dir is not None:
        raw["output"]["dir"] = out_dir

    try:
        params = EsdParameters.from_dict(raw["esd_params"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"esd_params: {exc}") from None
    check = validate_params(params)
    if not check.ok:
        raise ConfigError("esd_params: " + "; ".join(v.message for v in check.violations))

    t_span = raw["t_span"]
    if not (isinstance(t_span, list) and len(t_span) == 2):
        raise ConfigError("t_span: expected [start, end]")
    if not float(t_span[0]) < float(t_span[1]):
        raise ConfigError(f"t_span: start {t_span[0]} must be below end {t_span[1]}")

    training = dict(raw["training"])
    log_every = training.pop("log_every")
    try:
        cfg = TrainingConfig(
            t_span=tuple(t_span),
            n_points=raw["n_points"],
            hidden_layers=raw["network"]["hidden_layers"],
            hidden_width=raw["network"]["hidden_width"],
            seed=raw["network"]["seed"],
            input_scaling=raw["network"]["input_scaling"],
            initial_state=tuple(raw["initial_state"]),
            esd_params=params,
            **training,
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"training: {exc}") from None
    try:
        tol = ToleranceSpec(float(raw["rk45"]["atol"]), float(raw["rk45"]["rtol"]))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"rk45: {exc}") from None
    output = raw["output"]
    files = {k: v for k, v in output.items() if k != "dir"}
    return RunConfig(params, cfg, tol, Path(output["dir"]), files, int(log_every), raw)


def bundled_config_text(name: str) -> str:
    return resources.files("esd_pinn").joinpath("configs", f"{name}.json").read_text()


def load_config(path, seed=None, out_dir=None) -> RunConfig:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigMissing(f"cannot read config {p}: {exc.strerror}") from None
    return parse_config(text, str(p), seed, out_dir)


def worker_count() -> int:
    """Training threads from ``ESD_PINN_THREADS``; 0 or unset means one per CPU."""
    raw = os.environ.get("ESD_PINN_THREADS", "0").strip() or "0"
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"ESD_PINN_THREADS: expected an integer, got {raw!r}") from None
    if n < 0:
        raise ConfigError(f"ESD_PINN_THREADS: must be >= 0, got {n}")
    return n if n > 0 else (os.cpu_count() or 1)


def _ensure_out_dir(rc: RunConfig) -> None:
    rc.out_dir.mkdir(parents=True, exist_ok=True)
    if not os.access(rc.out_dir, os.W_OK):
        raise ConfigError(f"output.dir: {rc.out_dir} is not writable")


def _write_text(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def run_integrate(rc: RunConfig) -> SolutionTable:
    _ensure_out_dir(rc)
    grid = make_grid(rc.t_span, rc.n_points).times
    y0 = rc.training.initial_state
    start = time.perf_counter()
    table = integrate(rc.esd_params, y0, rc.t_span, rc.tolerances, grid)
    elapsed = time.perf_counter() - start
    _write_text(rc.path("rk_csv"), table.to_csv())
    print(f"rk45: {len(table)} grid points in {elapsed:.3f} s -> {rc.path('rk_csv')}")
    return table


def run_train(rc: RunConfig, resume: bool = False) -> SolutionTable:
    _ensure_out_dir(rc)
    cfg = rc.training
    ckpt_path, hist_path = rc.path("checkpoint"), rc.path("history_csv")
    resume_state = None
    previous = TrainingHistory()
    if resume:
        if not ckpt_path.exists():
            raise ConfigError(f"--resume: no checkpoint at {ckpt_path}")
        data = json.loads(ckpt_path.read_text())
        resume_state = resume_from_dict(data)
        if hist_path.exists():
            previous = TrainingHistory.from_csv(hist_path.read_text())
            previous.records = [r for r in previous.records if r.epoch < resume_state.epoch]
        print(f"resuming at epoch {resume_state.epoch}")

    def on_epoch(rec):
        if rc.log_every and rec.epoch % rc.log_every == 0:
            l = rec.losses
            print(f"epoch {rec.epoch:7d}  total {l.total:.6e}  eq {l.eq1:.2e} {l.eq2:.2e} "
                  f"{l.eq3:.2e} {l.eq4:.2e}  init {l.initial:.2e}  lr {rec.lr:.3e}", flush=True)

    def on_checkpoint(model):
        _write_text(ckpt_path, json.dumps(checkpoint_dict(model, cfg)))

    start = time.perf_counter()
    model, history = train(cfg, resume_state, on_epoch, on_checkpoint, workers=worker_count())
    elapsed = time.perf_counter() - start
    previous.records.extend(history.records)
    on_checkpoint(model)
    _write_text(hist_path, previous.to_csv())
    grid = make_grid(cfg.t_span, cfg.n_points).times
    table = predict(model, grid)
    _write_text(rc.path("pinn_csv"), table.to_csv())
    last = history.records[-1].losses.total if history.records else float("nan")
    print(f"train: {model.epochs_run} epochs in {elapsed:.1f} s, final total loss {last:.6e}, "
          f"best {model.best_loss:.6e} at epoch {model.best_epoch}")
    return table


def run_evaluate(rc: RunConfig, rk_table: SolutionTable, pinn_table: SolutionTable):
    _ensure_out_dir(rc)
    meta = {"config_sha256": rc.digest(), "n_points": rc.n_points}
    report = build_report(rk_table, pinn_table, rc.esd_params, meta)
    _write_text(rc.path("report_json"), report.to_json() + "\n")
    print(report.render())
    return report


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", required=True, metavar="PATH", help="run configuration JSON")
    p.add_argument("--out", metavar="DIR", help="override output.dir")
    p.add_argument("--seed", type=int, metavar="N", help="override network.seed")
    p.add_argument("--dry-run", action="store_true", help="validate the config and exit")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="esd-pinn", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("integrate", help="RK45 reference solution to CSV")
    _add_common(p)
    p = sub.add_parser("train", help="train the PINN, write history/checkpoint/prediction")
    _add_common(p)
    p.add_argument("--resume", action="store_true", help="continue from the saved checkpoint")
    p = sub.add_parser("evaluate", help="compare two solution CSVs")
    _add_common(p)
    p.add_argument("--rk", required=True, metavar="CSV", help="reference (RK45) solution")
    p.add_argument("--pinn", required=True, metavar="CSV", help="candidate (PINN) solution")
    p = sub.add_parser("run", help="integrate + train + evaluate")
    _add_common(p)
    p.add_argument("--resume", action="store_true")
    p = sub.add_parser("show-config", help="print a bundled config")
    p.add_argument("name", choices=BUNDLED)
    return parser


def cmd_integrate(args) -> int:
    rc = load_config(args.config, args.seed, args.out)
    if args.dry_run:
        print("config ok")
        return 0
    run_integrate(rc)
    return 0


def cmd_train(args) -> int:
    rc = load_config(args.config, args.seed, args.out)
    if args.dry_run:
        print("config ok")
        return 0
    run_train(rc, resume=args.resume)
    return 0


def cmd_evaluate(args) -> int:
    rc = load_config(args.config, args.seed, args.out)
    if args.dry_run:
        print("config ok")
        return 0
    tables = []
    for label, path in (("rk", args.rk), ("pinn", args.pinn)):
        try:
            tables.append(SolutionTable.read_csv(path))
        except OSError as exc:
            raise ConfigError(f"--{label}: cannot read {path}: {exc.strerror}") from None
        except CsvFormatError as exc:
            raise ConfigError(f"--{label} {path}: {exc}") from None
    run_evaluate(rc, *tables)
    return 0


def cmd_full_run(args) -> int:
    rc = load_config(args.config, args.seed, args.out)
    if args.dry_run:
        print("config ok")
        return 0
    rk = run_integrate(rc)
    pinn = run_train(rc, resume=args.resume)
    report = run_evaluate(rc, rk, pinn)
    r2 = "  ".join(
        f"{k}={'undefined' if m.r_squared is None else format(m.r_squared, '.8f')}"
        for k, m in report.metrics.items())
    print(f"summary R2: {r2}")
    return 0


def cmd_show_config(args) -> int:
    sys.stdout.write(bundled_config_text(args.name))
    return 0


COMMANDS = {
    "integrate": cmd_integrate,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "run": cmd_full_run,
    "show-config": cmd_show_config,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        # single-threaded BLAS keeps every artifact independent of the thread setting
        if args.command != "show-config":
            worker_count()
        with threadpool_limits(limits=1):
            return COMMANDS[args.command](args)
    except ConfigError as exc:
        if isinstance(exc, ConfigMissing):
            parser.print_usage(sys.stderr)
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except GridMismatch as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except IntegrationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    except TrainingDiverged as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 5


if __name__ == "__main__":
    sys.exit(main())
