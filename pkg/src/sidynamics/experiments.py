"""Config-driven experiment sweeps.

An experiment is one TOML file::

    [experiment]
    name = "toy-periodic"
    objective = "toy-rational"
    x0 = [0.01, 1.0]        # optional; drawn from ``seed`` otherwise
    seed = 0
    deltas = [0.01]
    checkpoints = [0, 5000]  # optional

    [optimizer]
    family = "gd"
    steps = 20000

    [sweep]
    eta = [1.0]
    lam = [0.0, 0.01]

A fixed-product sweep replaces the ``eta``/``lam`` lists with ``product``
and ``ratios`` (each ratio is ``eta / lam``).  With ``rescale_init = true``
every point starts from ``c * x0`` where ``c^2`` is its learning rate over
the first point's, which makes all points the same trajectory up to scale.

Each sweep point writes ``trace.csv``, ``jumps.json``, ``periods.json`` and a
``manifest.json`` holding git blob hashes of those files.  Nothing
time-dependent is written, so re-running reproduces identical bytes.
"""

from __future__ import annotations

import json
import math
import os
import re
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .dynamics import FAMILIES, OptimizerConfig, git_blob_hash, run, save_checkpoint
from .jumps import TOY_DELTA, detect_jumps, segment_phases
from .objectives import get_objective

__all__ = ["ConfigError", "ExperimentConfig", "SweepPoint", "load_config", "parse_config", "run_experiment",
           "report", "output_root", "OUTPUT_ENV"]

OUTPUT_ENV = "SIDYNAMICS_OUTPUT_ROOT"
_SECTIONS = {"experiment", "optimizer", "sweep"}
_OPT_KEYS = {"family", "steps", "eta", "lam", "batch_size", "momentum", "betas", "adam_eps", "coupled_wd",
             "target_norm", "record_every"}


class ConfigError(ValueError):
    """Invalid experiment config; ``diagnostics`` holds one ``line N: message`` entry per problem."""

    def __init__(self, diagnostics: list[str], source: str = "<config>"):
        self.diagnostics = diagnostics
        self.source = source
        super().__init__("\n".join(f"{source}: {d}" for d in diagnostics))


def output_root() -> Path:
    return Path(os.environ.get(OUTPUT_ENV, "runs"))


@dataclass(frozen=True)
class SweepPoint:
    index: int
    eta: float
    lam: float
    x0_scale: float = 1.0

    @property
    def name(self) -> str:
        return f"{self.index:03d}_eta{self.eta:.6g}_lam{self.lam:.6g}"


@dataclass
class ExperimentConfig:
    name: str
    objective: str
    optimizer: OptimizerConfig
    points: list[SweepPoint]
    deltas: tuple[float, ...] = (TOY_DELTA,)
    checkpoints: tuple[int, ...] = ()
    x0: tuple[float, ...] | None = None
    seed: int = 0
    output: str | None = None
    source_text: str = field(default="", repr=False)

    def point_config(self, point: SweepPoint) -> OptimizerConfig:
        return replace(self.optimizer, eta=point.eta, lam=point.lam, seed=self.seed)


def _line_of(text: str, table: str, key: str | None) -> int:
    """Line number of ``key`` inside ``[table]`` (or of the table header), 0 if absent."""
    current = None
    header_line = 0
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        m = re.match(r"\[\s*([A-Za-z0-9_.-]+)\s*\]", line)
        if m:
            current = m.group(1)
            if current == table:
                header_line = n
            continue
        if current == table and key is not None and re.match(rf"{re.escape(key)}\s*=", line):
            return n
    return header_line


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError([f"line 0: cannot read config ({exc.strerror})"], str(path)) from exc
    return parse_config(text, str(path))


def parse_config(text: str, source: str = "<config>") -> ExperimentConfig:
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        m = re.search(r"line (\d+)", str(exc))
        raise ConfigError([f"line {m.group(1) if m else 0}: {exc}"], source) from exc

    errors: list[str] = []

    def err(table, key, msg):
        errors.append(f"line {_line_of(text, table, key)}: [{table}] {key or ''}: {msg}".replace(" : ", ": "))

    for extra in sorted(set(doc) - _SECTIONS):
        err(extra, None, "unknown section")
    exp = doc.get("experiment", {})
    opt = dict(doc.get("optimizer", {}))
    sweep = doc.get("sweep", {})
    if "experiment" not in doc:
        errors.append("line 0: missing [experiment] section")
    if "sweep" not in doc:
        errors.append("line 0: missing [sweep] section")

    objective = exp.get("objective")
    if not isinstance(objective, str):
        err("experiment", "objective", "required string")
    else:
        try:
            get_objective(objective)
        except KeyError:
            err("experiment", "objective", f"unregistered objective id {objective!r}")

    for key in sorted(set(opt) - _OPT_KEYS):
        err("optimizer", key, "unknown key")
    family = opt.get("family", "gd")
    if family not in FAMILIES:
        err("optimizer", "family", f"must be one of {', '.join(FAMILIES)}")
    steps = opt.get("steps", 1000)
    if not isinstance(steps, int) or steps < 1:
        err("optimizer", "steps", "must be a positive integer")

    deltas = exp.get("deltas", [TOY_DELTA])
    if not isinstance(deltas, list) or not deltas or not all(isinstance(d, (int, float)) and d > 0 for d in deltas):
        err("experiment", "deltas", "must be a non-empty list of positive numbers")
        deltas = [TOY_DELTA]
    checkpoints = exp.get("checkpoints", [])
    if not isinstance(checkpoints, list) or not all(isinstance(c, int) and c >= 0 for c in checkpoints):
        err("experiment", "checkpoints", "must be a list of non-negative integers")
        checkpoints = []
    x0 = exp.get("x0")
    if x0 is not None and (not isinstance(x0, list) or not x0 or not all(isinstance(v, (int, float)) for v in x0)):
        err("experiment", "x0", "must be a non-empty list of numbers")
        x0 = None
    seed = exp.get("seed", 0)
    if not isinstance(seed, int):
        err("experiment", "seed", "must be an integer")
        seed = 0

    points = _sweep_points(sweep, opt, err)
    if errors:
        raise ConfigError(errors, source)

    opt.pop("eta", None)
    opt.pop("lam", None)
    if "betas" in opt:
        opt["betas"] = tuple(opt["betas"])
    try:
        base = OptimizerConfig(eta=points[0].eta, lam=points[0].lam, seed=seed, **opt)
    except (TypeError, ValueError) as exc:
        raise ConfigError([f"line {_line_of(text, 'optimizer', None)}: [optimizer]: {exc}"], source) from exc
    return ExperimentConfig(
        name=str(exp.get("name", Path(source).stem)), objective=objective, optimizer=base, points=points,
        deltas=tuple(float(d) for d in deltas), checkpoints=tuple(checkpoints),
        x0=tuple(float(v) for v in x0) if x0 is not None else None, seed=seed,
        output=exp.get("output"), source_text=text)


def _number_list(sweep, key, err):
    vals = sweep.get(key)
    if vals is None:
        return None
    if not isinstance(vals, list):
        vals = [vals]
    if not vals:
        err("sweep", key, "sweep axis is empty")
        return []
    if not all(isinstance(v, (int, float)) and not isinstance(v, bool) and v >= 0 for v in vals):
        err("sweep", key, "values must be non-negative numbers")
        return []
    return [float(v) for v in vals]


def _sweep_points(sweep: dict, opt: dict, err) -> list[SweepPoint]:
    points: list[SweepPoint] = []
    if "product" in sweep or "ratios" in sweep:
        product = sweep.get("product")
        ratios = _number_list(sweep, "ratios", err)
        if not isinstance(product, (int, float)) or product <= 0:
            err("sweep", "product", "must be a positive number")
            return points
        if ratios is None:
            err("sweep", "ratios", "sweep axis is missing")
            return points
        rescale = bool(sweep.get("rescale_init", False))
        for i, r in enumerate(ratios):
            if r <= 0:
                err("sweep", "ratios", "ratios must be positive")
                return []
            eta, lam = math.sqrt(product * r), math.sqrt(product / r)
            points.append(SweepPoint(i, eta, lam))
        if rescale and points:
            eta0 = points[0].eta
            points = [replace(p, x0_scale=math.sqrt(p.eta / eta0)) for p in points]
    else:
        etas = _number_list(sweep, "eta", err)
        lams = _number_list(sweep, "lam", err)
        if etas is None:
            etas = [float(opt["eta"])] if "eta" in opt else None
        if lams is None:
            lams = [float(opt.get("lam", 0.0))]
        if etas is None:
            err("sweep", "eta", "sweep axis is missing")
            return points
        i = 0
        for eta in etas:
            for lam in lams:
                points.append(SweepPoint(i, eta, lam))
                i += 1
    for p in points:
        if not p.eta > 0:
            err("sweep", "eta", f"learning rate must be positive (got {p.eta:g})")
        if not p.eta * p.lam < 0.5:
            key = "product" if "product" in sweep else "lam"
            err("sweep", key, f"eta*lam = {p.eta * p.lam:g} violates eta*lam < 0.5")
    return points


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _write(path: Path, text: str) -> str:
    path.write_text(text)
    return git_blob_hash(text.encode())


def _initial_point(cfg: ExperimentConfig, objective) -> np.ndarray:
    if cfg.x0 is not None:
        x0 = np.array(cfg.x0, dtype=float)
    elif hasattr(objective, "init_params"):
        x0 = objective.init_params(cfg.seed)
    else:
        x0 = objective.random_point(np.random.default_rng(cfg.seed))
    return x0


def _run_point(cfg: ExperimentConfig, point: SweepPoint, out_dir: Path) -> dict:
    objective = get_objective(cfg.objective)
    x0 = _initial_point(cfg, objective) * point.x0_scale
    ocfg = cfg.point_config(point)
    traj = run(objective, ocfg, x0, objective_id=cfg.objective, checkpoint_steps=cfg.checkpoints,
               rng=np.random.default_rng(cfg.seed))
    d = out_dir / point.name
    d.mkdir(parents=True, exist_ok=True)
    files = {"trace.csv": _write(d / "trace.csv", traj.to_csv())}
    jumps = {repr(delta): [vars(e) for e in detect_jumps(traj, delta)] for delta in cfg.deltas}
    files["jumps.json"] = _write(d / "jumps.json", _dump(jumps))
    periods = {repr(delta): [p.to_dict() for p in segment_phases(traj, delta)] for delta in cfg.deltas}
    files["periods.json"] = _write(d / "periods.json", _dump(periods))
    for step_index, x in sorted(traj.checkpoints.items()):
        name = f"checkpoint_{step_index:08d}.json"
        save_checkpoint(d / name, step_index, x)
        files[name] = git_blob_hash((d / name).read_bytes())
    manifest = traj.manifest(files["trace.csv"])
    manifest.update({"point": {"index": point.index, "eta": point.eta, "lam": point.lam,
                               "x0_scale": point.x0_scale},
                     "deltas": list(cfg.deltas), "files": files})
    _write(d / "manifest.json", _dump(manifest))
    return {"name": point.name, "truncated": traj.truncated}


def run_experiment(cfg: ExperimentConfig | str | os.PathLike, out_dir=None, workers: int = 1) -> Path:
    """Runs every sweep point; returns the experiment directory.

    A diverging point is kept with ``truncated: true`` in its manifest and
    the sweep continues.  With ``workers > 1`` points run in separate
    processes; results do not depend on the worker count.
    """
    if not isinstance(cfg, ExperimentConfig):
        cfg = load_config(cfg)
    out = Path(out_dir) if out_dir is not None else output_root() / (cfg.output or cfg.name)
    out.mkdir(parents=True, exist_ok=True)
    if workers > 1 and len(cfg.points) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_point, [cfg] * len(cfg.points), cfg.points, [out] * len(cfg.points)))
    else:
        results = [_run_point(cfg, p, out) for p in cfg.points]
    files = {"config.toml": _write(out / "config.toml", cfg.source_text)}
    for r in results:
        files[f"{r['name']}/manifest.json"] = git_blob_hash((out / r["name"] / "manifest.json").read_bytes())
    top = {"experiment": cfg.name, "objective": cfg.objective, "seed": cfg.seed,
           "points": [r["name"] for r in results], "truncated": [r["name"] for r in results if r["truncated"]],
           "files": files}
    _write(out / "manifest.json", _dump(top))
    return out


def _point_summary(d: Path) -> dict:
    manifest = json.loads((d / "manifest.json").read_text())
    cols = _read_trace(d / "trace.csv")
    jumps = json.loads((d / "jumps.json").read_text())
    periods = json.loads((d / "periods.json").read_text())
    row = {"point": d.name, "eta": manifest["point"]["eta"], "lam": manifest["point"]["lam"],
           "steps": manifest["records"], "truncated": manifest["truncated"],
           "final_loss": float(cols["loss"][-1]) if len(cols["loss"]) else float("nan")}
    for delta in sorted(jumps, key=float):
        complete = [p for p in periods[delta] if p["label"] == "ABC"]
        row[f"jumps@{delta}"] = len(jumps[delta])
        row[f"periods@{delta}"] = len(complete)
        row[f"mean_period@{delta}"] = (float(np.mean([p["end"] - p["start"] + 1 for p in complete]))
                                       if complete else None)
    return row


def _read_trace(path: Path) -> dict:
    from .dynamics import Trajectory
    return Trajectory.read_csv(path)


def report(exp_dir) -> dict:
    """Summarises an experiment directory into ``report.json`` and ``report.md``; returns the summary."""
    exp_dir = Path(exp_dir)
    if not (exp_dir / "manifest.json").is_file():
        raise FileNotFoundError(f"{exp_dir} has no manifest.json")
    top = json.loads((exp_dir / "manifest.json").read_text())
    rows = [_point_summary(exp_dir / name) for name in top["points"]]
    summary = {"experiment": top["experiment"], "objective": top["objective"], "points": rows}
    (exp_dir / "report.json").write_text(_dump(summary))
    keys = list(rows[0]) if rows else []
    lines = [f"# {top['experiment']} ({top['objective']})", ""]
    if rows:
        lines.append("| " + " | ".join(keys) + " |")
        lines.append("|" + "---|" * len(keys))
        for r in rows:
            lines.append("| " + " | ".join(_fmt(r[k]) for k in keys) + " |")
    md = "\n".join(lines) + "\n"
    (exp_dir / "report.md").write_text(md)
    top["files"]["report.json"] = git_blob_hash(_dump(summary).encode())
    top["files"]["report.md"] = git_blob_hash(md.encode())
    _write(exp_dir / "manifest.json", _dump(top))
    return summary


def _fmt(v) -> str:
    if isinstance(v, float):
        return f"{v:.4g}"
    return "-" if v is None else str(v)
