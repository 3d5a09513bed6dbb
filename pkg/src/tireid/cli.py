"""Command-line front end: ``tireid simulate | train | identify | eval | pipeline``.

Every command reads one JSON run config (all sections optional, merged over
the defaults below) and writes its artifacts into ``--out``.  Flags win over
the config.  Exit codes: 0 success, 2 bad input or config, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import residual as res
from .dynamics import MIN_VX, AxlePacejka, TireParams
from .errors import ConfigError, ContractError, StageError, TireIdError, TrainingError
from .identify import OuterConfig, SweepConfig, curve_rmse, identify_iterative
from .optimize import NmOptions
from .plant import PlantConfig, TelemetryLog, collect_telemetry, make_maneuver
from .vision import FrictionPrior, aggregate_priors, read_prior_file, warm_start_D

SCHEMA_VERSION = 1
EXIT_OK, EXIT_INPUT, EXIT_NUMERIC = 0, 2, 3
MANEUVER_KINDS = ("sine_sweep", "slalom", "ramp", "triangle")
EVAL_ALPHA_MAX = 0.3
EVAL_POINTS = 601
CURVE_POINTS = 301

TELEMETRY_FILE = "telemetry.csv"
TRUTH_FILE = "truth.json"
CONFIG_FILE = "config.json"
MODEL_FILE = "model.json"
LOSS_FILE = "loss_curve.csv"
TRAIN_SUMMARY_FILE = "train_summary.json"
REPORT_FILE = "report.json"
TIMING_FILE = "timing.json"
CURVES_FILE = "curves.csv"
METRICS_FILE = "metrics.json"


@dataclass(frozen=True)
class ManeuverSpec:
    """Open-loop steering program driven at constant speed ``v_x``."""

    kind: str = "triangle"
    duration: float = 60.0
    amplitude: float = 0.5
    v_x: float = 10.0
    f0: float = 0.1
    f1: float = 1.0
    period: float = 4.0
    dither: float = 0.0

    def __post_init__(self):
        if self.kind not in MANEUVER_KINDS:
            raise ConfigError(f"maneuver.kind must be one of {', '.join(MANEUVER_KINDS)}, "
                              f"got {self.kind!r}")
        if not self.duration > 0:
            raise ConfigError("maneuver.duration must be positive")
        if not self.v_x > MIN_VX:
            raise ConfigError(f"maneuver.v_x must exceed {MIN_VX} m/s")


@dataclass(frozen=True)
class PriorSpec:
    """Where the friction warm start comes from: a manual value, a per-frame file, or nowhere."""

    mu: float | None = None
    file: str | None = None
    basis: str | None = None

    def __post_init__(self):
        if self.mu is not None and self.file is not None:
            raise ConfigError("prior.mu and prior.file are mutually exclusive")
        if self.mu is not None and not (math.isfinite(self.mu) and self.mu > 0):
            raise ConfigError(f"prior.mu must be positive, got {self.mu!r}")

    def resolve(self) -> FrictionPrior | None:
        if self.mu is not None:
            return FrictionPrior(float(self.mu), "manual")
        if self.file is not None:
            try:
                priors, _ = read_prior_file(self.file, self.basis)
            except (OSError, ValueError, KeyError, TypeError) as exc:
                raise ConfigError(f"prior.file {self.file}: {exc}") from exc
            return aggregate_priors(priors)
        return None


def default_plant() -> PlantConfig:
    return PlantConfig(relaxation_length=0.6, noise_std=(0.002, 0.001))


def default_init() -> TireParams:
    axle = AxlePacejka(8.0, 1.5, 0.51, 0.5)
    return TireParams(axle, axle)


@dataclass(frozen=True)
class RunConfig:
    """Everything one run needs.  ``seed`` drives both plant noise and training."""

    plant: PlantConfig = field(default_factory=default_plant)
    maneuver: ManeuverSpec = field(default_factory=ManeuverSpec)
    init: TireParams = field(default_factory=default_init)
    prior: PriorSpec = field(default_factory=PriorSpec)
    train: res.TrainConfig = field(default_factory=lambda: res.TrainConfig(smooth_window=51))
    sweep: SweepConfig = field(default_factory=SweepConfig)
    nm: NmOptions = field(default_factory=NmOptions)
    outer: OuterConfig = field(default_factory=OuterConfig)
    out: str = "run"
    seed: int = 0

    def __post_init__(self):
        if isinstance(self.seed, bool) or not isinstance(self.seed, int) or not 0 <= self.seed < 2 ** 64:
            raise ConfigError(f"seed must be an integer in [0, 2^64), got {self.seed!r}")
        if not self.out:
            raise ConfigError("out must be a non-empty path")
        # the global seed and sample time are authoritative for the nested sections
        object.__setattr__(self, "plant", replace(self.plant, seed=self.seed))
        object.__setattr__(self, "train", replace(self.train, seed=self.seed))
        object.__setattr__(self, "sweep", replace(self.sweep, T_s=self.plant.T_s))


# ---------------------------------------------------------------------------
# config parsing

_NULLABLE = {
    "sweep.v_x_bar": "number",
    "nm.initial_step": "numbers",
    "prior.mu": "number",
    "prior.file": "string",
    "prior.basis": "string",
}
_KIND_NAMES = {"bool": "a boolean", "int": "an integer", "number": "a number",
               "string": "a string", "numbers": "an array of numbers"}


def _is_number(v):
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def _coerce(value, default, path):
    kind = _NULLABLE.get(path)
    if kind is not None and value is None:
        return None
    if kind is None:
        if isinstance(default, bool):
            kind = "bool"
        elif isinstance(default, int):
            kind = "int"
        elif isinstance(default, float):
            kind = "number"
        elif isinstance(default, str):
            kind = "string"
        elif isinstance(default, tuple):
            kind = "numbers"
        else:
            raise ConfigError(f"{path}: expected an object")
    if kind == "bool":
        ok = isinstance(value, bool)
    elif kind == "int":
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif kind == "number":
        ok = _is_number(value)
        value = float(value) if ok else value
    elif kind == "string":
        ok = isinstance(value, str)
    else:
        ok = isinstance(value, list) and all(_is_number(v) for v in value)
        if ok and isinstance(default, tuple) and len(value) != len(default):
            raise ConfigError(f"{path}: expected {len(default)} numbers, got {len(value)}")
        value = tuple(float(v) for v in value) if ok else value
    if not ok:
        raise ConfigError(f"{path}: expected {_KIND_NAMES[kind]}, got {json.dumps(value)}")
    return value


def _section(raw, path, base, skip=(), nested=None):
    """Overlay the JSON object ``raw`` on the dataclass instance ``base``."""
    if not isinstance(raw, dict):
        raise ConfigError(f"{path or 'config'}: expected an object")
    nested = nested or {}
    names = {f.name for f in fields(base)} - set(skip)
    changes = {}
    for key, value in raw.items():
        sub = f"{path}.{key}" if path else key
        if key not in names:
            raise ConfigError(f"{sub}: unknown key")
        current = getattr(base, key)
        if key in nested:
            changes[key] = nested[key](value, sub, current)
        else:
            changes[key] = _coerce(value, current, sub)
    try:
        return replace(base, **changes)
    except (ConfigError, ContractError, ValueError) as exc:
        msg = str(exc)
        if not path or msg.startswith(path):
            raise ConfigError(msg) from exc
        raise ConfigError(f"{path}: {msg}") from exc


def _tires(raw, path, base):
    axle = lambda v, p, b: _section(v, p, b)  # noqa: E731
    return _section(raw, path, base, nested={"front": axle, "rear": axle})


def _plant(raw, path, base):
    return _section(raw, path, base, skip=("seed",),
                    nested={"vehicle": lambda v, p, b: _section(v, p, b), "true_tires": _tires})


def config_from_dict(raw) -> RunConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config: expected a JSON object")
    raw = dict(raw)
    version = raw.pop("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ConfigError(f"schema_version: unsupported value {version!r}, expected {SCHEMA_VERSION}")
    plain = lambda v, p, b: _section(v, p, b)  # noqa: E731
    nested = {
        "plant": _plant,
        "maneuver": plain,
        "init": _tires,
        "prior": plain,
        "train": lambda v, p, b: _section(v, p, b, skip=("seed",)),
        "sweep": lambda v, p, b: _section(v, p, b, skip=("T_s",)),
        "nm": plain,
        "outer": plain,
    }
    return _section(raw, "", RunConfig(), nested=nested)


def load_config(path=None) -> RunConfig:
    if path is None:
        return RunConfig()
    return config_from_dict(_read_json(path, "config"))


def config_to_dict(cfg: RunConfig) -> dict:
    plant = cfg.plant
    return {
        "schema_version": SCHEMA_VERSION,
        "seed": cfg.seed,
        "out": cfg.out,
        "plant": {
            "vehicle": asdict(plant.vehicle),
            "true_tires": plant.true_tires.as_dict(),
            "relaxation_length": plant.relaxation_length,
            "noise_std": list(plant.noise_std),
            "dt_plant": plant.dt_plant,
            "T_s": plant.T_s,
            "steer_limit": plant.steer_limit,
        },
        "maneuver": asdict(cfg.maneuver),
        "init": cfg.init.as_dict(),
        "prior": asdict(cfg.prior),
        "train": {k: v for k, v in asdict(cfg.train).items() if k != "seed"},
        "sweep": {k: v for k, v in asdict(cfg.sweep).items() if k != "T_s"},
        "nm": {k: (list(v) if isinstance(v, tuple) else v) for k, v in asdict(cfg.nm).items()},
        "outer": asdict(cfg.outer),
    }


# ---------------------------------------------------------------------------
# file helpers

def _read_json(path, what):
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read {what} {path}: {exc.strerror or exc}") from exc
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{what} {path} is not valid JSON: {exc}") from exc


def _json_default(o):
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"cannot serialize {type(o).__name__}")


def write_json(path, obj) -> None:
    text = json.dumps(obj, indent=2, ensure_ascii=False, default=_json_default)
    Path(path).write_text(text + "\n", encoding="utf-8", newline="\n")


def _out_dir(path) -> Path:
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"out: cannot create {out}: {exc.strerror or exc}") from exc
    if not out.is_dir():
        raise ConfigError(f"out: {out} is not a directory")
    return out


def read_telemetry(path) -> TelemetryLog:
    try:
        return TelemetryLog.read_csv(path)
    except OSError as exc:
        raise ConfigError(f"cannot read telemetry {path}: {exc.strerror or exc}") from exc
    except (ValueError, IndexError) as exc:
        raise ConfigError(f"telemetry {path}: {exc}") from exc


def tires_from_json(d, where) -> TireParams:
    """Strict ``{front: {B, C, D, E}, rear: {...}}`` parse; anything else is a contract error."""
    if not isinstance(d, dict) or set(d) != {"front", "rear"}:
        raise ContractError(f"{where}: expected exactly the axles front and rear")
    axles = []
    for name in ("front", "rear"):
        c = d[name]
        if not isinstance(c, dict) or set(c) != set("BCDE"):
            raise ContractError(f"{where}.{name}: expected exactly the coefficients B, C, D, E")
        if not all(_is_number(c[k]) for k in "BCDE"):
            raise ContractError(f"{where}.{name}: coefficients must be numbers")
        try:
            axles.append(AxlePacejka(*(float(c[k]) for k in "BCDE")))
        except ValueError as exc:
            raise ContractError(f"{where}.{name}: {exc}") from exc
    return TireParams(*axles)


def read_truth(path) -> TireParams:
    d = _read_json(path, "ground-truth sidecar")
    if not isinstance(d, dict) or d.get("schema_version") != SCHEMA_VERSION:
        raise ContractError(f"ground-truth sidecar {path}: missing or unsupported schema_version")
    return tires_from_json(d.get("true_tires"), "true_tires")


def truth_sidecar(cfg: RunConfig) -> dict:
    p = cfg.plant
    return {
        "schema_version": SCHEMA_VERSION,
        "seed": cfg.seed,
        "true_tires": p.true_tires.as_dict(),
        "vehicle": asdict(p.vehicle),
        "plant": {
            "relaxation_length": p.relaxation_length,
            "noise_std": list(p.noise_std),
            "dt_plant": p.dt_plant,
            "T_s": p.T_s,
            "steer_limit": p.steer_limit,
        },
        "maneuver": asdict(cfg.maneuver),
    }


# ---------------------------------------------------------------------------
# scoring

def compare_to_truth(fitted: TireParams, truth: TireParams) -> dict:
    """Dense-grid normalized-force RMSE and per-coefficient errors, per axle."""
    rmse = {k: curve_rmse(getattr(fitted, k), getattr(truth, k), EVAL_ALPHA_MAX, EVAL_POINTS)
            for k in ("front", "rear")}
    err, pct = {}, {}
    for k in ("front", "rear"):
        f, t = getattr(fitted, k).as_array(), getattr(truth, k).as_array()
        err[k] = dict(zip("BCDE", (f - t).tolist()))
        pct[k] = {c: (100.0 * (fv - tv) / abs(tv) if tv != 0 else None)
                  for c, fv, tv in zip("BCDE", f.tolist(), t.tolist())}
    return {
        "true_tires": truth.as_dict(),
        "fyf_rmse": rmse["front"],
        "fyr_rmse": rmse["rear"],
        "alpha_max": EVAL_ALPHA_MAX,
        "grid_points": EVAL_POINTS,
        "coefficient_error": err,
        "coefficient_error_pct": pct,
    }


def curve_table(fitted: TireParams, truth: TireParams) -> str:
    from .dynamics import pacejka_normalized

    alpha = np.linspace(-EVAL_ALPHA_MAX, EVAL_ALPHA_MAX, CURVE_POINTS)
    cols = [alpha]
    for k in ("front", "rear"):
        cols += [pacejka_normalized(alpha, getattr(fitted, k)), pacejka_normalized(alpha, getattr(truth, k))]
    lines = ["alpha,front_fitted,front_true,rear_fitted,rear_true"]
    lines += [",".join(repr(float(c[i])) for c in cols) for i in range(CURVE_POINTS)]
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# commands

def _nominal_tires(cfg: RunConfig, prior: FrictionPrior | None) -> TireParams:
    if prior is None:
        return cfg.init
    d0 = warm_start_D(prior)
    return TireParams(cfg.init.front.with_D(d0), cfg.init.rear.with_D(d0))


def cmd_simulate(cfg: RunConfig, out=None) -> dict:
    out = _out_dir(out or cfg.out)
    m = cfg.maneuver
    try:
        steering = make_maneuver(m.kind, m.duration, cfg.plant.T_s, m.amplitude, m.f0, m.f1,
                                 m.period, m.dither, cfg.plant.steer_limit)
    except ConfigError as exc:
        raise ConfigError(f"maneuver: {exc}") from exc
    log = collect_telemetry(cfg.plant, m.duration, m.v_x, steering=steering)
    log.write_csv(out / TELEMETRY_FILE)
    write_json(out / TRUTH_FILE, truth_sidecar(cfg))
    write_json(out / CONFIG_FILE, config_to_dict(cfg))
    return {"telemetry": out / TELEMETRY_FILE, "truth": out / TRUTH_FILE, "records": len(log)}


def cmd_train(cfg: RunConfig, telemetry, out=None) -> dict:
    out = _out_dir(out or cfg.out)
    log = read_telemetry(telemetry)
    p = cfg.plant.vehicle
    tires = _nominal_tires(cfg, cfg.prior.resolve())
    t = cfg.train
    try:
        ds = res.build_residual_dataset(log, tires, p, t.window, t.val_fraction,
                                        smooth_window=t.smooth_window)
    except ContractError as exc:
        raise ContractError(f"telemetry {telemetry}: {exc}") from exc
    model, history = res.train(None, ds, t, log.T_s)
    res.save_model(model, out / MODEL_FILE)
    lines = ["step,train_loss,val_loss"]
    lines += [f"{r.step},{r.train_loss!r},{r.val_loss!r}" for r in history]
    (out / LOSS_FILE).write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")
    summary = {
        "schema_version": SCHEMA_VERSION,
        "arch": t.arch,
        "steps": t.steps,
        "nominal_tires": tires.as_dict(),
        "best_val_loss": min(r.val_loss for r in history),
        "final_val_loss": history[-1].val_loss,
        "val_residual_rmse": res.residual_rmse(model, ds, "val"),
        "files": {"model": MODEL_FILE, "loss_curve": LOSS_FILE},
    }
    write_json(out / TRAIN_SUMMARY_FILE, summary)
    write_json(out / CONFIG_FILE, config_to_dict(cfg))
    return {"model": out / MODEL_FILE, "loss_curve": out / LOSS_FILE, "history": history,
            "model_obj": model}


def _load_model(path) -> res.ResidualModel:
    d = _read_json(path, "model")
    try:
        return res.model_from_dict(d)
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"model {path}: {exc}") from exc


def cmd_identify(cfg: RunConfig, telemetry, out=None, model=None, truth=None,
                 progress=None) -> dict:
    """Run the outer loop on a telemetry CSV.

    ``model`` is a path or a loaded model used in place of the first training
    round.  The ground-truth sidecar defaults to ``truth.json`` beside the
    telemetry when present.
    """
    out = _out_dir(out or cfg.out)
    log = read_telemetry(telemetry)
    if isinstance(model, (str, Path)):
        model = _load_model(model)
    if truth is None:
        sibling = Path(telemetry).parent / TRUTH_FILE
        truth = sibling if sibling.is_file() else None
    truth_tires = read_truth(truth) if truth is not None else None
    prior = cfg.prior.resolve()
    sweep_cfg = replace(cfg.sweep, T_s=log.T_s)
    report = identify_iterative(log, cfg.plant.vehicle, cfg.init, prior, cfg.train, sweep_cfg,
                                cfg.nm, cfg.outer, initial_model=model, progress=progress)
    d = report.to_dict(include_wall_time=False)
    sweep_dir = out / "sweeps"
    sweep_dir.mkdir(exist_ok=True)
    names = []
    for k, sweep in enumerate(report.sweeps, start=1):
        name = f"sweeps/sweep_iter{k:02d}.csv"
        (out / name).write_text(sweep.to_csv(), encoding="utf-8", newline="\n")
        names.append(name)
    d["sweep_files"] = names
    if truth_tires is not None:
        d["ground_truth"] = compare_to_truth(report.final, truth_tires)
        (out / CURVES_FILE).write_text(curve_table(report.final, truth_tires), encoding="utf-8",
                                       newline="\n")
    write_json(out / REPORT_FILE, d)
    write_json(out / TIMING_FILE, {"schema_version": SCHEMA_VERSION, "wall_time": report.wall_time})
    write_json(out / CONFIG_FILE, config_to_dict(cfg))
    return {"report": out / REPORT_FILE, "report_obj": report, "dict": d}


def cmd_eval(report, truth, out) -> dict:
    out = _out_dir(out)
    d = _read_json(report, "report")
    if not isinstance(d, dict) or d.get("schema_version") != SCHEMA_VERSION:
        raise ContractError(f"report {report}: missing or unsupported schema_version")
    fitted = tires_from_json(d.get("final"), "final")
    metrics = {"schema_version": SCHEMA_VERSION}
    cmp = compare_to_truth(fitted, read_truth(truth))
    metrics["fyf_rmse"] = cmp.pop("fyf_rmse")
    metrics["fyr_rmse"] = cmp.pop("fyr_rmse")
    metrics["outer_iterations"] = d.get("outer_iterations")
    metrics["nm_iterations_total"] = d.get("nm_iterations_total")
    metrics["converged"] = d.get("converged")
    metrics["fitted_tires"] = fitted.as_dict()
    metrics.update(cmp)
    write_json(out / METRICS_FILE, metrics)
    return metrics


def cmd_pipeline(cfg: RunConfig, out=None, progress=None) -> dict:
    """simulate, train, identify (with the trained model as round one), eval."""
    out = _out_dir(out or cfg.out)
    cmd_simulate(cfg, out)
    trained = cmd_train(cfg, out / TELEMETRY_FILE, out)
    ident = cmd_identify(cfg, out / TELEMETRY_FILE, out, model=trained["model_obj"],
                         truth=out / TRUTH_FILE, progress=progress)
    metrics = cmd_eval(out / REPORT_FILE, out / TRUTH_FILE, out)
    return {"report": ident["report"], "metrics": metrics}


# ---------------------------------------------------------------------------
# argument handling

def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="tireid", description="Tire-curve identification pipeline.")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, prior=True):
        p.add_argument("--config", help="JSON run config (defaults when omitted)")
        p.add_argument("--out", help="output directory (overrides config 'out')")
        p.add_argument("--seed", type=int, help="global seed for plant noise and training")
        p.add_argument("--arch", choices=res.ARCHS, help="residual model architecture")
        if prior:
            g = p.add_mutually_exclusive_group()
            g.add_argument("--mu-prior", type=float, help="manual friction prior")
            g.add_argument("--prior-file", help="per-frame class probabilities CSV")
            p.add_argument("--prior-basis", help="JSON basis sidecar for --prior-file")
        return p

    common(sub.add_parser("simulate", help="drive the plant and write telemetry"), prior=False)
    p = common(sub.add_parser("train", help="train a residual model on telemetry"))
    p.add_argument("--telemetry", required=True)
    p = common(sub.add_parser("identify", help="run the iterative identification"))
    p.add_argument("--telemetry", required=True)
    p.add_argument("--truth", help="ground-truth sidecar (default: truth.json beside the telemetry)")
    g = p.add_mutually_exclusive_group()
    g.add_argument("--model", help="pretrained model JSON used for the first round")
    g.add_argument("--retrain", action="store_true", help="train from scratch every round (default)")
    p = sub.add_parser("eval", help="score a report against the ground truth")
    p.add_argument("--report", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--out", required=True)
    common(sub.add_parser("pipeline", help="simulate, train, identify and eval in one go"))
    return ap


def apply_flags(cfg: RunConfig, args) -> RunConfig:
    changes = {}
    if getattr(args, "seed", None) is not None:
        changes["seed"] = args.seed
    if getattr(args, "out", None):
        changes["out"] = args.out
    if getattr(args, "arch", None):
        changes["train"] = replace(cfg.train, arch=args.arch)
    if getattr(args, "mu_prior", None) is not None:
        changes["prior"] = PriorSpec(mu=args.mu_prior)
    elif getattr(args, "prior_file", None):
        changes["prior"] = PriorSpec(file=args.prior_file, basis=args.prior_basis)
    elif getattr(args, "prior_basis", None):
        changes["prior"] = replace(cfg.prior, basis=args.prior_basis)
    try:
        return replace(cfg, **changes)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _progress(record):
    print(f"iteration {record['iteration']}: sweep_loss {record['sweep_loss']:.3e}, "
          f"max change {record['max_relative_change']:.3e}", file=sys.stderr)


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        if args.command == "eval":
            m = cmd_eval(args.report, args.truth, args.out)
            print(f"fyf_rmse {m['fyf_rmse']:.6f}  fyr_rmse {m['fyr_rmse']:.6f}")
            return EXIT_OK
        cfg = apply_flags(load_config(args.config), args)
        if args.command == "simulate":
            r = cmd_simulate(cfg)
            print(f"wrote {r['records']} records to {r['telemetry']}")
        elif args.command == "train":
            r = cmd_train(cfg, args.telemetry)
            print(f"wrote {r['model']} (best val loss {min(h.val_loss for h in r['history']):.3e})")
        elif args.command == "identify":
            r = cmd_identify(cfg, args.telemetry, model=args.model, truth=args.truth,
                             progress=_progress)
            print(f"wrote {r['report']} ({r['dict']['outer_iterations']} outer iterations)")
        else:
            r = cmd_pipeline(cfg, progress=_progress)
            m = r["metrics"]
            print(f"outer_iterations {m['outer_iterations']}  fyf_rmse {m['fyf_rmse']:.6f}  "
                  f"fyr_rmse {m['fyr_rmse']:.6f}")
    except (ConfigError, ContractError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except TrainingError as exc:
        print(f"error: training failed at step {exc.step}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except TireIdError as exc:
        print(f"error: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
