"""Command-line front end: seeded campaigns that write figure-keyed CSV tables, a config echo and a checksum manifest.

Parameters come from built-in defaults, then an optional YAML config, then command-line flags, each layer
overriding the previous one. Every float written to CSV uses 12 significant digits.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import os
import sys
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np
import yaml

from . import __version__
from .analytics import (
    COMPARISON_EPS0,
    DEFAULT_DT_S,
    InsufficientTrials,
    RepeaterOptimizer,
    comparison_curves,
    fit_fidelity_stats,
    generator_metrics,
    loss_budget,
)
from .mesh import PRESETS, HardwareModel, hardware_preset
from .protocol import TreeShape, generate_schedule, photon_count, repetition_boost, required_network_size

THREADS_ENV = "TREEQPNN_THREADS"

GLOBAL_DEFAULTS = {"seed": 0, "out": "results", "preset": "multi", "threads": None, "hardware": {}}

COMMAND_DEFAULTS = {
    "train": {
        "trials": 10,
        "epochs": 1000,
        "b_max": 2,
        "layers": None,
        "basis": "restricted",
        "learning_rate": 0.05,
        "decay": 0.9,
        "decay_period": 100,
        "tree": "2,2",
    },
    "schedule": {"b": "2,2", "dt_s": DEFAULT_DT_S, "sources": 1, "delay_mode": "dynamic"},
    "analyze": {
        "b": "2,2",
        "depth": 8,
        "branch": 2,
        "dt_s": DEFAULT_DT_S,
        "sources": 1,
        "delay_mode": "dynamic",
        "fidelity_stats": None,
    },
    "repeater": {
        "lengths": "50:3000:50",
        "constraint": "both",
        "max_depth": None,
        "max_branch": 4,
        "dt_s": DEFAULT_DT_S,
        "delay_mode": "dynamic",
    },
    "sweep": {
        "kind": "loss-reduction",
        "values": None,
        "depth": 8,
        "branch": 2,
        "trials": 10,
        "epochs": 1000,
        "dt_s": DEFAULT_DT_S,
        "delay_mode": "dynamic",
    },
    "compare": {"depth": 8, "max_branch": 4, "eps0": None, "dt_s": DEFAULT_DT_S},
}

SWEEP_DEFAULT_VALUES = {
    "loss-reduction": "0,0.25,0.5,0.75,0.9,0.95,0.99",
    "dc-sigma": "0.0005,0.0025,0.005",
}


class ConfigError(ValueError):
    pass


def fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return f"{float(value):.12g}"
    return str(value)


def _rounded(obj):
    if isinstance(obj, dict):
        return {str(k): _rounded(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_rounded(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _rounded(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if not math.isfinite(x) else float(f"{x:.12g}")
    return obj


class OutputDir:
    """Collects the files of one run so the manifest can list and hash them."""

    def __init__(self, path: Path):
        self.path = Path(path)
        try:
            self.path.mkdir(parents=True, exist_ok=True)
        except OSError as err:
            raise ConfigError(f"cannot create output directory {self.path}: {err}") from err
        if not os.access(self.path, os.W_OK):
            raise ConfigError(f"output directory {self.path} is not writable")
        self.files: list[str] = []

    def _register(self, name: str) -> Path:
        if name not in self.files:
            self.files.append(name)
        return self.path / name

    def csv(self, name: str, header: Sequence[str], rows: Iterable[Sequence]) -> None:
        with open(self._register(name), "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(header)
            for row in rows:
                writer.writerow([fmt(v) for v in row])

    def json(self, name: str, payload) -> None:
        self.text(name, json.dumps(_rounded(payload), indent=2, sort_keys=True) + "\n")

    def text(self, name: str, body: str) -> None:
        with open(self._register(name), "w", newline="") as fh:
            fh.write(body)


def sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def parse_ints(text) -> tuple[int, ...]:
    if isinstance(text, (list, tuple)):
        return tuple(int(x) for x in text)
    return TreeShape.parse(str(text)).b


def parse_floats(text) -> list[float]:
    if isinstance(text, (list, tuple)):
        return [float(x) for x in text]
    return [float(x) for x in str(text).split(",") if x.strip()]


def parse_lengths(text) -> list[float]:
    """``start:stop:step`` (inclusive) or a comma list of kilometres."""
    if isinstance(text, (list, tuple)):
        return [float(x) for x in text]
    text = str(text)
    if ":" in text:
        start, stop, step = (float(x) for x in text.split(":"))
        if step <= 0 or stop < start:
            raise ConfigError(f"invalid length range {text!r}")
        count = int(math.floor((stop - start) / step + 1e-9)) + 1
        return [start + i * step for i in range(count)]
    return parse_floats(text)


def load_config(path: Optional[str], command: str) -> dict:
    if path is None:
        return {}
    try:
        with open(path) as fh:
            data = yaml.safe_load(fh) or {}
    except OSError as err:
        raise ConfigError(f"cannot read config {path}: {err}") from err
    if not isinstance(data, dict):
        raise ConfigError("the config file must hold a mapping")
    data = {str(k).replace("-", "_"): v for k, v in data.items()}
    if data.pop("command", command) != command:
        raise ConfigError(f"config was written for another command, not {command!r}")
    allowed = set(GLOBAL_DEFAULTS) | set(COMMAND_DEFAULTS[command])
    unknown = sorted(set(data) - allowed)
    if unknown:
        raise ConfigError(f"unknown config keys for {command}: {', '.join(unknown)}")
    hw = data.get("hardware", {}) or {}
    if not isinstance(hw, dict):
        raise ConfigError("hardware overrides must be a mapping")
    bad = sorted(set(hw) - (set(HardwareModel.__dataclass_fields__) - {"name"}))
    if bad:
        raise ConfigError(f"unknown hardware keys: {', '.join(bad)}")
    return data


def resolve(command: str, args: argparse.Namespace) -> dict:
    """Defaults, then config file, then explicitly given flags."""
    cfg = {**GLOBAL_DEFAULTS, **COMMAND_DEFAULTS[command]}
    cfg.update(load_config(args.config, command))
    if cfg.get("threads") is None and os.environ.get(THREADS_ENV):
        cfg["threads"] = int(os.environ[THREADS_ENV])
    for key in cfg:
        value = getattr(args, key, None)
        if value is not None:
            cfg[key] = value
    if cfg["preset"] not in PRESETS:
        raise ConfigError(f"unknown preset {cfg['preset']!r}")
    return cfg


def hardware_from(cfg: dict) -> HardwareModel:
    hw = hardware_preset(cfg["preset"])
    return hw.with_overrides(**cfg["hardware"]) if cfg["hardware"] else hw


def configure_threads(threads: Optional[int]) -> None:
    """Limit numeric library threads; only effective before the first JAX import."""
    if not threads:
        return
    if threads < 1:
        raise ConfigError("threads must be positive")
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ[var] = str(threads)
    if "jax" not in sys.modules:
        flags = os.environ.get("XLA_FLAGS", "")
        os.environ["XLA_FLAGS"] = (flags + f" --xla_cpu_multi_thread_eigen={'true' if threads > 1 else 'false'}"
                                   f" intra_op_parallelism_threads={threads}").strip()


def cmd_train(cfg: dict, out: OutputDir) -> None:
    from .fock import build_training_set, unit_cell_configs
    from .qpnn import TrainingConfig, TrainingDiverged, hinton_data, prepare_training_set, run_trials, \
        success_threshold

    b_max = int(cfg["b_max"])
    if b_max < 1:
        raise ConfigError("b_max must be at least 1")
    size = required_network_size((b_max,))
    m, layers = size.modes, int(cfg["layers"] or size.layers)
    configs = unit_cell_configs(b_max)
    pairs = build_training_set(configs, cfg["basis"])
    tcfg = TrainingConfig(epochs=int(cfg["epochs"]), learning_rate=float(cfg["learning_rate"]),
                          decay=float(cfg["decay"]), decay_period=int(cfg["decay_period"]),
                          trials=int(cfg["trials"]), seed=int(cfg["seed"]), basis_choice=cfg["basis"])
    results = run_trials(m, layers, hardware_from(cfg), prepare_training_set(pairs, m), tcfg)

    ok = [r for r in results if not isinstance(r, TrainingDiverged)]
    trial_rows, traj_rows, op_rows = [], [], []
    for t, r in enumerate(results):
        if isinstance(r, TrainingDiverged):
            trial_rows.append([t, tcfg.trial_seed(t), "diverged"] + [None] * 8)
            continue
        threshold = success_threshold(r.loss_limit, cfg["preset"])
        trial_rows.append([r.trial, r.seed, "ok", r.initial_cost, r.final_cost, r.best_cost, r.best_epoch,
                           r.loss_limit, threshold, r.best_cost <= threshold, r.fidelity])
        traj_rows.append([r.trial, 0, r.initial_cost])
        traj_rows.extend([r.trial, e + 1, c] for e, c in enumerate(r.trajectory))
        op_rows.extend([r.trial, op, f] for op, f in sorted(r.op_fidelities.items()))
    out.csv("trials.csv", ["trial", "seed", "status", "initial_cost", "final_cost", "best_cost", "best_epoch",
                           "loss_limit", "threshold", "converged", "fidelity"], trial_rows)
    out.csv("trajectories.csv", ["trial", "epoch", "cost"], traj_rows)
    out.csv("op_fidelities.csv", ["trial", "operation", "fidelity"], op_rows)
    if not ok:
        out.json("stats.json", {"error": "every trial diverged", "survivors": 0})
        return

    best = min(ok, key=lambda r: (r.best_cost, r.trial))
    payload = best.to_dict()
    payload.pop("trajectory")
    out.json("best.json", payload)
    hinton_rows = []
    for config in configs:
        for basis in ("X", "Z"):
            ins, outs, mat = hinton_data(best.net, config, basis)
            for i, label_in in enumerate(ins):
                for o, label_out in enumerate(outs):
                    z = complex(mat[i, o])
                    hinton_rows.append([config.label, basis, label_in, label_out, z.real, z.imag, abs(z),
                                        math.atan2(z.imag, z.real) if abs(z) > 1e-12 else 0.0])
    out.csv("hinton.csv", ["operation", "basis", "input", "output", "re", "im", "magnitude", "phase"], hinton_rows)
    n_tree = photon_count(parse_ints(cfg["tree"]))
    try:
        stats = fit_fidelity_stats([r.fidelity for r in ok], [r.best_cost for r in ok], [r.loss_limit for r in ok],
                                   cfg["preset"], n_photons=n_tree)
        out.json("stats.json", stats.as_dict())
    except InsufficientTrials as err:
        out.json("stats.json", {"error": str(err), "survivors": err.survivors, "n_photons": n_tree})


def cmd_schedule(cfg: dict, out: OutputDir) -> None:
    b = parse_ints(cfg["b"])
    hw = hardware_from(cfg)
    schedule = generate_schedule(b, float(cfg["dt_s"]), int(cfg["sources"]), cfg["delay_mode"], hw)
    out.text("timetable.csv", schedule.to_csv())
    out.text("timetable.txt", schedule.timetable())
    lay = schedule.layout
    out.json("layout.json", {**lay.summary(), "span_steps": schedule.span, "total_time_s": schedule.total_time,
                             "sources": schedule.sources, "photons": len(schedule.paths)})
    out.csv("delay_lines.csv", ["line", "row", "index", "steps", "seconds", "meters", "loss_db"],
            ([d.line, d.row, d.index, d.steps, d.seconds, d.meters, d.loss_db] for d in lay.lines))
    budgets = loss_budget(schedule, hw)
    keys = list(next(iter(budgets.values())).items)
    out.csv("budgets.csv", ["row", "index", *(f"{k}_db" for k in keys), "total_db", "survival"],
            ([lab[0], lab[1], *(bud.items[k] for k in keys), bud.total_db, bud.survival]
             for lab, bud in sorted(budgets.items())))


METRIC_HEADER = ["preset", "delay_mode", "b", "depth", "n", "total_time_s", "repetition_rate_hz",
                 "generation_rate_hz", "eps0", "eps_eff", "p_ind"]


def _metric_row(preset: str, mode: str, m) -> list:
    return [preset, mode, "-".join(map(str, m.b)), len(m.b), m.n, m.total_time, m.repetition_rate,
            m.generation_rate, m.eps0, m.eps_eff, m.p_ind]


def cmd_analyze(cfg: dict, out: OutputDir) -> None:
    hw, dt, mode, sources = hardware_from(cfg), float(cfg["dt_s"]), cfg["delay_mode"], int(cfg["sources"])
    depth, branch = int(cfg["depth"]), int(cfg["branch"])
    if depth < 1 or branch < 1:
        raise ConfigError("depth and branch must be at least 1")
    b = parse_ints(cfg["b"])
    out.csv("analysis.csv", METRIC_HEADER,
            [_metric_row(cfg["preset"], mode, generator_metrics(b, hw, dt, mode, sources))])
    shapes = [(branch,) * d for d in range(1, depth + 1)]
    out.csv("fig4b.csv", METRIC_HEADER,
            (_metric_row(cfg["preset"], mode, generator_metrics(s, hw, dt, mode, sources)) for s in shapes))
    if cfg["fidelity_stats"]:
        with open(cfg["fidelity_stats"]) as fh:
            stats = json.load(fh)
        if "mean" not in stats:
            raise ConfigError(f"{cfg['fidelity_stats']} holds no fitted statistics")
        rows = []
        for s in shapes:
            n = photon_count(s)
            rows.append([len(s), "-".join(map(str, s)), n, stats["mean"] ** n, stats["ci_low"] ** n,
                         stats["ci_high"] ** n])
        out.csv("fig4a.csv", ["depth", "b", "n", "tree_fidelity", "ci_low", "ci_high"], rows)


def cmd_repeater(cfg: dict, out: OutputDir) -> None:
    hw, lengths = hardware_from(cfg), parse_lengths(cfg["lengths"])
    constraints = ["b2", "free"] if cfg["constraint"] == "both" else [cfg["constraint"]]
    if any(c not in ("b2", "free") for c in constraints):
        raise ConfigError(f"constraint must be b2, free or both, got {cfg['constraint']!r}")
    if any(km < 0 for km in lengths):
        raise ConfigError("channel lengths must be non-negative")
    opt = RepeaterOptimizer(hw, float(cfg["dt_s"]), cfg["delay_mode"])
    rows_a, rows_b = [], []
    for constraint in constraints:
        depth = int(cfg["max_depth"] or (8 if constraint == "b2" else 6))
        for km in lengths:
            try:
                choice = opt.best(km, constraint, int(cfg["max_branch"]), depth)
            except ValueError as err:
                raise ConfigError(str(err)) from err
            m = choice.metrics
            shape = "-".join(map(str, m.b))
            rows_a.append([cfg["preset"], constraint, km, choice.nodes, shape, len(m.b), max(m.b), m.n])
            rows_b.append([cfg["preset"], constraint, km, choice.nodes, shape, m.n, m.communication_rate,
                           m.log10_communication_rate, choice.direct_rate, m.eps0, m.eps_eff, m.total_time])
    out.csv("fig5a.csv", ["preset", "constraint", "length_km", "nodes", "b", "depth", "max_branch", "n"], rows_a)
    out.csv("fig5b.csv", ["preset", "constraint", "length_km", "nodes", "b", "n", "communication_rate_hz",
                          "log10_communication_rate", "direct_rate_hz", "eps0", "eps_eff", "total_time_s"], rows_b)


def cmd_sweep(cfg: dict, out: OutputDir) -> None:
    kind = cfg["kind"]
    if kind not in SWEEP_DEFAULT_VALUES:
        raise ConfigError(f"sweep kind must be one of {sorted(SWEEP_DEFAULT_VALUES)}")
    values = parse_floats(cfg["values"] if cfg["values"] is not None else SWEEP_DEFAULT_VALUES[kind])
    depth, branch = int(cfg["depth"]), int(cfg["branch"])
    shapes = [(branch,) * d for d in range(1, depth + 1)]
    hw = hardware_from(cfg)
    if kind == "loss-reduction":
        if any(not 0 <= v < 1 for v in values):
            raise ConfigError("loss reductions must lie in [0, 1)")
        rows = []
        for v in values:
            scaled = hw.scaled(1 - v)
            for s in shapes:
                schedule = generate_schedule(s, float(cfg["dt_s"]), 1, cfg["delay_mode"], scaled)
                budgets = loss_budget(schedule, scaled).values()
                fiber = sum(bud.items["delay_fiber"] for bud in budgets)
                total = sum(bud.total_db for bud in budgets)
                m = generator_metrics(s, scaled, float(cfg["dt_s"]), cfg["delay_mode"])
                rows.append([v, len(s), "-".join(map(str, s)), m.n, m.generation_rate, total - fiber, fiber,
                             "fiber" if fiber > total - fiber else "chip"])
        out.csv("fig4c.csv", ["loss_reduction", "depth", "b", "n", "generation_rate_hz", "chip_loss_db",
                              "fiber_loss_db", "dominant"], rows)
        return

    from .fock import build_training_set, unit_cell_configs
    from .qpnn import TrainingConfig, TrainingDiverged, prepare_training_set, run_trials

    if any(v < 0 for v in values):
        raise ConfigError("splitting-ratio deviations must be non-negative")
    size = required_network_size((2,))
    pairs = prepare_training_set(build_training_set(unit_cell_configs(2)), size.modes)
    tcfg = TrainingConfig(epochs=int(cfg["epochs"]), trials=int(cfg["trials"]), seed=int(cfg["seed"]))
    rows = []
    for v in values:
        results = run_trials(size.modes, size.layers, hw.with_overrides(dc_split_sigma=v), pairs, tcfg)
        ok = [r for r in results if not isinstance(r, TrainingDiverged)]
        try:
            stats = fit_fidelity_stats([r.fidelity for r in ok], [r.best_cost for r in ok],
                                       [r.loss_limit for r in ok], cfg["preset"])
        except InsufficientTrials as err:
            rows.extend([v, len(s), photon_count(s), err.survivors] + [None] * 6 for s in shapes)
            continue
        for s in shapes:
            n = photon_count(s)
            rows.append([v, len(s), n, stats.survivors, stats.mean, stats.ci[0], stats.ci[1], stats.mean ** n,
                         stats.ci[0] ** n, stats.ci[1] ** n])
    out.csv("figS6.csv", ["dc_sigma", "depth", "n", "survivors", "op_fidelity", "op_ci_low", "op_ci_high",
                          "tree_fidelity", "tree_ci_low", "tree_ci_high"], rows)


def cmd_compare(cfg: dict, out: OutputDir) -> None:
    depth, eps0 = int(cfg["depth"]), float(cfg["eps0"] if cfg["eps0"] is not None else COMPARISON_EPS0)
    if depth < 1 or not 0 <= eps0 <= 1:
        raise ConfigError("depth must be at least 1 and eps0 must lie in [0, 1]")
    curves = []
    for protocol in ("qpnn", "emitter-qd", "emitter-SiV", "emitter-atom"):
        curves.extend(comparison_curves(protocol, eps0, depth, int(cfg["max_branch"]), dt_s_qpnn=float(cfg["dt_s"])))
    out.csv("fig1e.csv", ["protocol", "depth", "b", "n", "eps0", "eps_eff", "marker", "decoherence_modelled"],
            ([r[k] for k in ("protocol", "depth", "b", "n", "eps0", "eps_eff", "marker", "decoherence_modelled")]
             for r in curves))
    out.csv("fig1f.csv", ["protocol", "depth", "b", "n", "total_time_s", "repetition_rate_hz", "marker"],
            ([r[k] for k in ("protocol", "depth", "b", "n", "total_time_s", "repetition_rate_hz", "marker")]
             for r in curves))
    rows = []
    for d in range(1, depth + 1):
        b = (2,) * d
        single = generate_schedule(b, 1.0, 1).span
        triple = generate_schedule(b, 1.0, 3).span
        rows.append([d, "-".join(map(str, b)), photon_count(b), single, triple, repetition_boost(b)])
    out.csv("figS8.csv", ["depth", "b", "n", "single_source_steps", "three_source_steps", "boost"], rows)


COMMANDS = {
    "train": cmd_train,
    "schedule": cmd_schedule,
    "analyze": cmd_analyze,
    "repeater": cmd_repeater,
    "sweep": cmd_sweep,
    "compare": cmd_compare,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML file of parameters; flags override it")
    common.add_argument("--seed", type=int)
    common.add_argument("--out", help="output directory")
    common.add_argument("--preset", choices=sorted(PRESETS))
    common.add_argument("--threads", type=int, help=f"numeric library threads (env {THREADS_ENV})")

    parser = argparse.ArgumentParser(prog="treeqpnn", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"treeqpnn {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", parents=[common], help="train unit-cell networks over seeded trials")
    p.add_argument("--trials", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--b-max", type=int, dest="b_max")
    p.add_argument("--layers", type=int)
    p.add_argument("--basis", choices=["restricted", "full"])
    p.add_argument("--learning-rate", type=float, dest="learning_rate")
    p.add_argument("--decay", type=float)
    p.add_argument("--decay-period", type=int, dest="decay_period")
    p.add_argument("--tree", help="tree whose fidelity is reported in stats.json, e.g. 2,2")

    p = sub.add_parser("schedule", parents=[common], help="timetable and generator layout for one tree")
    p.add_argument("--b")
    p.add_argument("--dt-s", type=float, dest="dt_s")
    p.add_argument("--sources", type=int, choices=[1, 3])
    p.add_argument("--delay-mode", choices=["dynamic", "static"], dest="delay_mode")

    p = sub.add_parser("analyze", parents=[common], help="loss and rate metrics of generated trees")
    p.add_argument("--b")
    p.add_argument("--depth", type=int)
    p.add_argument("--branch", type=int)
    p.add_argument("--dt-s", type=float, dest="dt_s")
    p.add_argument("--sources", type=int, choices=[1, 3])
    p.add_argument("--delay-mode", choices=["dynamic", "static"], dest="delay_mode")
    p.add_argument("--fidelity-stats", dest="fidelity_stats", help="stats.json written by train")

    p = sub.add_parser("repeater", parents=[common], help="optimal trees for one-way repeater chains")
    p.add_argument("--lengths", help="start:stop:step in km (inclusive) or a comma list")
    p.add_argument("--constraint", choices=["b2", "free", "both"])
    p.add_argument("--max-depth", type=int, dest="max_depth")
    p.add_argument("--max-branch", type=int, dest="max_branch")
    p.add_argument("--dt-s", type=float, dest="dt_s")
    p.add_argument("--delay-mode", choices=["dynamic", "static"], dest="delay_mode")

    p = sub.add_parser("sweep", parents=[common], help="loss-reduction or splitting-ratio sweeps")
    p.add_argument("--kind", choices=sorted(SWEEP_DEFAULT_VALUES))
    p.add_argument("--values", help="comma list of sweep values")
    p.add_argument("--depth", type=int)
    p.add_argument("--branch", type=int)
    p.add_argument("--trials", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--dt-s", type=float, dest="dt_s")
    p.add_argument("--delay-mode", choices=["dynamic", "static"], dest="delay_mode")

    p = sub.add_parser("compare", parents=[common], help="effective loss and repetition rate against emitters")
    p.add_argument("--depth", type=int)
    p.add_argument("--max-branch", type=int, dest="max_branch")
    p.add_argument("--eps0", type=float)
    p.add_argument("--dt-s", type=float, dest="dt_s")
    return parser


def run(argv: Optional[Sequence[str]] = None) -> Path:
    """Parse ``argv``, execute the command and return the output directory."""
    args = build_parser().parse_args(argv)
    cfg = resolve(args.command, args)
    configure_threads(cfg["threads"])
    started = datetime.now(timezone.utc).isoformat()
    out = OutputDir(Path(cfg["out"]))
    try:
        COMMANDS[args.command](cfg, out)
    except (KeyError, ValueError) as err:
        if isinstance(err, ConfigError):
            raise
        raise ConfigError(str(err)) from err
    echo = yaml.safe_dump({"command": args.command, **cfg}, sort_keys=True)
    out.text("config.yaml", echo)
    manifest = {
        "tool": "treeqpnn",
        "version": __version__,
        "command": args.command,
        "seed": cfg["seed"],
        "config_sha256": hashlib.sha256(echo.encode()).hexdigest(),
        "started": started,
        "finished": datetime.now(timezone.utc).isoformat(),
        "files": {name: sha256(out.path / name) for name in sorted(out.files)},
    }
    (out.path / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return out.path


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        path = run(argv)
    except ConfigError as err:
        print(f"treeqpnn: error: {err}", file=sys.stderr)
        return 2
    print(f"wrote {path}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
