"""Command-line entry point: ``neuralfield modes | run TASK | analyze KIND``."""

from __future__ import annotations

import argparse
import datetime as _dt
import hashlib
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

from scipy.linalg import LinAlgError

from . import __version__
from .analysis import mac_rate, pulse_response_correlation, spatial_correlation, spatial_record
from .config import ConfigError, ExperimentConfig
from .modeslab import solve_modes
from .neuralpost import OptimizerError
from .readout import IllConditionedError
from .tasks import (load_or_generate_series, mode_bases, run_memory_task, run_phase_task,
                    run_prediction_task)

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL = 0, 2, 3


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass
class RunManifest:
    command: str
    config_hash: str
    tool_version: str = __version__
    started_utc: str = ""
    finished_utc: str = ""
    artifacts: list = field(default_factory=list)
    details: dict = field(default_factory=dict)

    def add(self, paths, out_dir: Path) -> None:
        for p in paths:
            p = Path(p)
            self.artifacts.append({"path": p.relative_to(out_dir).as_posix(), "sha256": _sha256(p),
                                   "bytes": p.stat().st_size})

    def write(self, out_dir: Path) -> Path:
        p = out_dir / "manifest.json"
        doc = {"command": self.command, "config_hash": self.config_hash,
               "tool_version": self.tool_version, "started_utc": self.started_utc,
               "finished_utc": self.finished_utc, "artifacts": self.artifacts, "details": self.details}
        p.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return p


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


def _write_json(path: Path, doc: dict) -> Path:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def cmd_modes(cfg: ExperimentConfig, out: Path, manifest: RunManifest) -> None:
    sim = cfg.sim_config()
    basis = solve_modes(sim.spec, sim.grid_resolution_um)
    table = out / "modes.csv"
    basis.to_csv(table)
    summary = {"n_modes": basis.n_modes, "v_number": sim.spec.v_number,
               "delay_spread_ns": basis.delay_spread_ns, "round_trip_ns": basis.round_trip_ns,
               "min_group_delay_ns": float(basis.group_delay_ns.min()),
               "max_group_delay_ns": float(basis.group_delay_ns.max()),
               "grid_points": int(basis.grid.size), "config_hash": manifest.config_hash}
    manifest.add([table, _write_json(out / "modes_summary.json", summary)], out)


def cmd_run(task: str, cfg: ExperimentConfig, out: Path, manifest: RunManifest) -> None:
    sim = cfg.sim_config()
    readout = cfg.readout_config()
    seed = cfg.seed
    if task == "predict":
        p = cfg.predict
        surrogate = {"sample_every": p.sample_every} if p.source == "mackey_glass" else {}
        ds = load_or_generate_series(p.source, seed=seed, length=p.length, train_len=p.train_len,
                                     test_len=p.test_len, **surrogate)
        report = run_prediction_task(ds, sim, readout, seed, ar_lags=p.ar_lags)
    elif task == "memory":
        m = cfg.memory
        report = run_memory_task(sim, readout, m.max_delay, seed, m.train_len, m.test_len, m.remove_mean)
    elif task == "phase":
        report = run_phase_task(sim, readout, seed, cfg.phase_config())
    else:
        raise ConfigError(f"unknown task {task!r}")
    report.metrics["config_hash"] = manifest.config_hash
    report.metrics["tool_version"] = __version__
    for model in getattr(report.model, "models", [report.model]):
        if hasattr(model, "metadata"):
            model.metadata["config_hash"] = manifest.config_hash
    paths = report.write(out)
    manifest.add(paths, out)
    if report.feature_shape is not None:
        manifest.details["feature_matrix"] = {"rows": report.feature_shape[0],
                                              "columns": report.feature_shape[1]}


def cmd_analyze(kind: str, cfg: ExperimentConfig, out: Path, manifest: RunManifest) -> None:
    sim = cfg.sim_config()
    if kind == "spatial":
        s = cfg.spatial
        rep = spatial_correlation(spatial_record(sim, s.n_symbols, cfg.seed, s.noise_free))
    elif kind == "pulse":
        p = cfg.pulse
        rep = pulse_response_correlation(sim, p.pulse_width_ns, p.pulse_start_ns, p.duration_ns,
                                         p.max_lag_ns, p.noise_free, cfg.seed)
    elif kind == "mac":
        m = cfg.mac
        M = m.M if m.M is not None else mode_bases(sim)[0].n_modes
        N = m.N if m.N is not None else sim.detection.n_probes
        K = m.K if m.K is not None else sim.detection.samples_per_symbol
        est = mac_rate(N, M, K, sim.symbol_period_ns, m.footprint_mm2)
        manifest.add(est.write(out), out)
        return
    else:
        raise ConfigError(f"unknown analysis {kind!r}")
    rep.extra["config_hash"] = manifest.config_hash
    manifest.add(rep.write(out), out)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="experiment JSON (defaults when omitted)")
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("--out", type=Path, help="output directory (overrides output_dir)")
    common.add_argument("--threads", type=int, help="worker cap; results do not depend on it")
    common.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="dotted-path override, e.g. detection.noise_std=0.1")
    ap = argparse.ArgumentParser(prog="neuralfield", description=__doc__)
    ap.add_argument("--version", action="version", version=f"neuralfield {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)
    sub.add_parser("modes", parents=[common], help="solve and export the mode basis")
    run = sub.add_parser("run", parents=[common], help="run a benchmark task")
    run.add_argument("task", choices=["predict", "memory", "phase"])
    an = sub.add_parser("analyze", parents=[common], help="correlation and MAC analyses")
    an.add_argument("kind", choices=["spatial", "pulse", "mac"])
    sub.add_parser("config", parents=[common], help="print the resolved config JSON")
    return ap


def load_config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    for item in args.overrides:
        cfg.override(item)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.threads is not None:
        cfg.threads = args.threads
    if args.out is not None:
        cfg.output_dir = str(args.out)
    cfg.validate()
    return cfg


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args)
        if args.command == "config":
            sys.stdout.write(cfg.to_json())
            return EXIT_OK
        out = Path(cfg.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        label = args.command + (f" {args.task}" if args.command == "run" else "")
        label += f" {args.kind}" if args.command == "analyze" else ""
        manifest = RunManifest(command=label, config_hash=cfg.content_hash(), started_utc=_now())
        cfg_path = out / "config.json"
        cfg_path.write_text(cfg.to_json(), encoding="utf-8")
        manifest.add([cfg_path], out)
        if args.command == "modes":
            cmd_modes(cfg, out, manifest)
        elif args.command == "run":
            cmd_run(args.task, cfg, out, manifest)
        else:
            cmd_analyze(args.kind, cfg, out, manifest)
        manifest.finished_utc = _now()
        manifest.write(out)
    except (IllConditionedError, FloatingPointError, LinAlgError, OptimizerError, ArithmeticError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
