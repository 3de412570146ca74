"""Command-line interface: ``roadsense simulate | fleet | report``.

A run is configured by an optional JSON file with the sections ``fleet``
(fleet settings), ``road`` (road settings) and ``simulate`` (``{"j": ...}``,
the table row used by ``simulate``). Flags override file values. Outputs go
to ``--out``, else ``$ROADSENSE_OUT``, else ``./roadsense_out``, inside a
directory named after a hash of the effective configuration.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import os
import shutil
import sys
import time
from pathlib import Path

import numpy as np

from roadsense.errors import ConfigError, MissingRecord, RoadsenseError, UnstableLoop
from roadsense.fleet import FleetConfig, FleetResults, RecordStore, build_fleet, run_cascade
from roadsense.observer import AgentLog, AgentLoop, run_agent
from roadsense.report import DegenerateFit, convergence_fit, emit_figures, rmse
from roadsense.roads import RoadSpec, generate

CONFIG_SECTIONS = {"fleet", "road", "simulate", "run_id"}
EXIT_CONFIG, EXIT_UNSTABLE, EXIT_MISSING = 2, 3, 4


def _road_from_flag(value, base):
    if value is None:
        return base
    if value == "sinusoid":
        return dataclasses.replace(base, kind="sinusoid")
    if value == "iso-c":
        return dataclasses.replace(base, kind="iso_class_c")
    if value.startswith("file:"):
        return dataclasses.replace(base, kind="from_file", path=value[5:])
    raise ConfigError(f"--road must be sinusoid, iso-c or file:PATH, got {value!r}")


def load_config(args):
    """Merge the config file and command-line overrides."""
    raw = {}
    if args.config is not None:
        path = Path(args.config)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        try:
            raw = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
        if not isinstance(raw, dict):
            raise ConfigError(f"{path}: top level must be an object")
    unknown = set(raw) - CONFIG_SECTIONS
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")

    fleet = dict(raw.get("fleet", {}))
    overrides = {
        "n_agents": args.agents,
        "alpha": args.alpha,
        "uncertainty_bound": args.uncertainty,
        "order_seed": args.seed_order,
        "uncertainty_seed": args.seed_uncertainty,
    }
    fleet.update({k: v for k, v in overrides.items() if v is not None})
    if args.learning is not None:
        fleet["learning_enabled"] = args.learning
    if args.no_dob:
        fleet["use_dob"] = False
    cfg = FleetConfig.from_dict(fleet)

    road_raw = dict(raw.get("road", {}))
    known = {f.name for f in dataclasses.fields(RoadSpec)}
    bad = set(road_raw) - known
    if bad:
        raise ConfigError(f"unknown road keys: {sorted(bad)}")
    road_raw.setdefault("dt", cfg.dt)
    road_raw.setdefault("duration", cfg.duration)
    road = _road_from_flag(args.road, RoadSpec(**road_raw))

    sim = dict(raw.get("simulate", {}))
    if set(sim) - {"j"}:
        raise ConfigError(f"unknown simulate keys: {sorted(set(sim) - {'j'})}")
    return cfg, road, int(sim.get("j", 1)), raw.get("run_id")


def _run_id(kind, cfg, road, extra=None):
    doc = {"kind": kind, "fleet": cfg.to_dict(), "road": dataclasses.asdict(road), "extra": extra}
    return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()[:12]


def _out_root(args):
    return Path(args.out or os.environ.get("ROADSENSE_OUT") or "roadsense_out")


def _load_road(road, cfg):
    trace = generate(road)
    if not np.isclose(trace.dt, cfg.dt, rtol=1e-9):
        raise ConfigError(f"road dt {trace.dt} does not match simulation dt {cfg.dt}")
    return trace


def cmd_simulate(args):
    cfg, road_spec, j, run_id = load_config(args)
    cfg1 = dataclasses.replace(cfg, n_agents=max(j, 1), shuffle=False)
    spec = build_fleet(cfg1)[j - 1]
    road = _load_road(road_spec, cfg)
    loop = AgentLoop(spec.actual, spec.nominal, spec.pid, cfg.q_spec, cfg.dt)
    log = run_agent(loop, road, use_dob=cfg.use_dob)
    run_dir = _out_root(args) / (run_id or f"simulate_{_run_id('simulate', cfg, road_spec, j)}")
    run_dir.mkdir(parents=True, exist_ok=True)
    path = run_dir / "agent_log.csv"
    log.to_csv(path)
    rms_zs = float(np.sqrt(np.mean(log.z_s.samples**2)))
    print(f"log={path}")
    print(f"rms_z_s_m={rms_zs!r}")
    print(f"rmse_mm={rmse(log.z_r_hat, log.z_r, cfg.rmse_skip)!r}")
    return 0


def cmd_fleet(args):
    cfg, road_spec, _, run_id = load_config(args)
    road = _load_road(road_spec, cfg)
    run_id = run_id or f"fleet_{_run_id('fleet', cfg, road_spec)}"
    run_dir = _out_root(args) / run_id
    if run_dir.exists():
        shutil.rmtree(run_dir)
    run_dir.mkdir(parents=True)
    (run_dir / "config.json").write_text(
        json.dumps({"fleet": cfg.to_dict(), "road": dataclasses.asdict(road_spec)}, indent=2, sort_keys=True)
    )
    logs_dir = run_dir / "logs"
    logs_dir.mkdir()
    store = RecordStore(run_dir.parent, run_id)

    def save(spec, log):
        log.to_csv(logs_dir / f"agent_{spec.position}.csv")

    results = run_cascade(cfg, build_fleet(cfg), road, store=store, on_agent=save)
    results.write_summary(run_dir / "summary.csv")
    meta = dict(results.metadata, finished_at=time.strftime("%Y-%m-%dT%H:%M:%S"))
    (run_dir / "metadata.json").write_text(json.dumps(meta, indent=2, sort_keys=True))
    r = results.rmse_mm
    print(f"run_dir={run_dir}")
    print(f"agents={len(r)} first_rmse_mm={r[0]:.4f} final_rmse_mm={r[-1]:.4f}")
    return 0


def load_run(run_dir):
    """Rebuild :class:`FleetResults` from a fleet run directory."""
    run_dir = Path(run_dir)
    cfg_path, summary = run_dir / "config.json", run_dir / "summary.csv"
    if not cfg_path.is_file() or not summary.is_file():
        raise MissingRecord(f"{run_dir} is not a completed fleet run")
    doc = json.loads(cfg_path.read_text())
    cfg = FleetConfig.from_dict(doc["fleet"])
    fleet = build_fleet(cfg)
    rows = np.loadtxt(summary, delimiter=",", skiprows=1, usecols=(0, 1, 2), ndmin=2)
    logs = []
    for spec in fleet:
        path = run_dir / "logs" / f"agent_{spec.position}.csv"
        if not path.is_file():
            raise MissingRecord(f"missing agent log {path}")
        logs.append(AgentLog.from_csv(path))
    return FleetResults(cfg, fleet, logs, rows[:, 2])


def cmd_report(args):
    results = load_run(args.run_dir)
    files = emit_figures(results, Path(args.run_dir) / "figures")
    for f in files:
        print(f"wrote {f}")
    try:
        floor, rate, r2 = convergence_fit(results.rmse_mm)
        print(f"fitted_rate={rate!r} floor_mm={floor!r} r2={r2!r}")
    except (DegenerateFit, ValueError) as exc:
        print(f"fitted_rate=nan ({exc})")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="roadsense", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--agents", type=int)
        p.add_argument("--alpha", type=float)
        p.add_argument("--uncertainty", type=float)
        p.add_argument("--road", help="sinusoid, iso-c or file:PATH")
        p.add_argument("--no-learning", dest="learning", action="store_false", default=None)
        p.add_argument("--learning", dest="learning", action="store_true")
        p.add_argument("--no-dob", action="store_true")
        p.add_argument("--seed-order", type=int)
        p.add_argument("--seed-uncertainty", type=int)
        p.add_argument("--out", help="output root directory")

    common(sub.add_parser("simulate", help="run one vehicle"))
    common(sub.add_parser("fleet", help="run the learning cascade"))
    rep = sub.add_parser("report", help="emit figures for a fleet run")
    rep.add_argument("run_dir")
    return parser


COMMANDS = {"simulate": cmd_simulate, "fleet": cmd_fleet, "report": cmd_report}


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except UnstableLoop as exc:
        print(f"unstable loop: {exc}", file=sys.stderr)
        return EXIT_UNSTABLE
    except (MissingRecord, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except RoadsenseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
