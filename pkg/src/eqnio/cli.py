"""Command-line entry point: ``eqnio simulate|train|run|eval``.

Every option can also come from ``--config FILE`` (``key = value`` lines,
``#`` comments); explicit flags win over the file.  Failures print a single
``eqnio-error kind=<kind> command=<cmd> message="..."`` line on stderr and
exit nonzero.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from dataclasses import fields, replace
from pathlib import Path

import numpy as np

from .canonical import check_mode
from .ekf import FilterConfig, initial_state, run_filter
from .eqnet.checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .evaluation import MetricsReport, aggregate, compare, mse, network_trajectory, report_csv, report_table
from .imu import (PoseSequence, SimConfig, read_imu_csv, read_pose_csv, simulate_trajectory, write_imu_csv,
                  write_pose_csv)
from .prior.model import ModelConfig, PriorModel
from .prior.train import Adam, AugmentConfig, TrainConfig, TrainingDiverged, build_windows, train, WindowSet
from .so3 import euler_xyz, rot_z

log = logging.getLogger("eqnio")

DATASET_MANIFEST = "dataset.manifest"
DATASET_HEADER = "# eqnio-dataset 1: name imu.csv gt.csv"
EXIT_USAGE, EXIT_FAILURE = 2, 1


class CliError(Exception):
    def __init__(self, kind: str, message: str, code: int = EXIT_FAILURE):
        super().__init__(message)
        self.kind, self.code = kind, code


# ------------------------------------------------------------------ config

_SIM_KEYS = {f.name: f.type for f in fields(SimConfig)}
_MODEL_KEYS = {f.name: f.type for f in fields(ModelConfig)}
_TRAIN_KEYS = {"epochs_mse": "int", "epochs_mle": "int", "lr": "float", "batch": "int", "stride": "int",
               "augment_yaw": "bool", "augment_reflect": "bool", "tilt_deg": "float", "resume": "bool"}
_RUN_KEYS = {"ekf": "onoff", "plot": "bool", "dtype": "str", "update_stride": "int", "cov_scale": "float",
             "sequences": "str"}
_EVAL_KEYS = {"metric_literal": "bool", "rte_window": "float"}
_COMMON = {"seed": "int", "out": "str", "mode": "str", "data": "str"}

ALLOWED = {
    "simulate": {**_COMMON, "count": "int", **_SIM_KEYS},
    "train": {**_COMMON, **_MODEL_KEYS, **_TRAIN_KEYS},
    "run": {**_COMMON, "checkpoint": "str", **_RUN_KEYS},
    "eval": {**_COMMON, "pred": "str", "gt": "str", **_EVAL_KEYS},
}


def _convert(key: str, kind, raw):
    if not isinstance(raw, str):
        return raw
    kind = getattr(kind, "__name__", kind)
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        if kind == "int | None":
            return None if raw.lower() == "none" else int(raw)
        if kind == "bool":
            if raw.lower() not in ("1", "0", "true", "false", "yes", "no", "on", "off"):
                raise ValueError(raw)
            return raw.lower() in ("1", "true", "yes", "on")
        if kind == "onoff":
            if raw not in ("on", "off"):
                raise ValueError(raw)
            return raw
    except ValueError:
        raise CliError("config", f"bad value for {key}: {raw!r}", EXIT_USAGE) from None
    return raw


def read_config(path) -> dict:
    out = {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise CliError("io", f"cannot read config {path}: {exc.strerror}") from None
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise CliError("config", f"{path}:{lineno}: expected key = value", EXIT_USAGE)
        key, value = (s.strip() for s in line.split("=", 1))
        out[key.replace("-", "_")] = value
    return out


def resolve(command: str, args: argparse.Namespace) -> dict:
    """Merge the config file with explicit flags, rejecting unknown keys."""
    allowed = ALLOWED[command]
    cfg = read_config(args.config) if args.config else {}
    unknown = sorted(set(cfg) - set(allowed))
    if unknown:
        raise CliError("config", f"unknown key(s) for {command}: {', '.join(unknown)}", EXIT_USAGE)
    cfg = {k: _convert(k, allowed[k], v) for k, v in cfg.items()}
    for k in allowed:
        v = getattr(args, k, None)
        if v is not None:
            cfg[k] = v
    if "mode" in cfg:
        try:
            cfg["mode"] = check_mode(cfg["mode"])
        except ValueError as exc:
            raise CliError("config", str(exc), EXIT_USAGE) from None
    return cfg


def _need(cfg: dict, key: str):
    if cfg.get(key) in (None, ""):
        raise CliError("usage", f"--{key.replace('_', '-')} is required", EXIT_USAGE)
    return cfg[key]


# ----------------------------------------------------------------- dataset


def write_manifest(directory: Path, rows):
    lines = [DATASET_HEADER] + [" ".join(r) for r in rows]
    (directory / DATASET_MANIFEST).write_text("\n".join(lines) + "\n")


def read_manifest(directory) -> list[tuple[str, Path, Path]]:
    directory = Path(directory)
    path = directory / DATASET_MANIFEST
    if not path.is_file():
        raise CliError("data", f"no {DATASET_MANIFEST} in {directory}")
    rows = []
    for line in path.read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 3:
            raise CliError("data", f"malformed manifest line {line!r}")
        rows.append((parts[0], directory / parts[1], directory / parts[2]))
    if not rows:
        raise CliError("data", f"empty dataset in {directory}")
    return rows


def load_dataset(directory, names=None):
    out = []
    for name, imu_path, gt_path in read_manifest(directory):
        if names and name not in names:
            continue
        try:
            out.append((name, read_imu_csv(imu_path), read_pose_csv(gt_path)))
        except (OSError, ValueError) as exc:
            raise CliError("data", f"{name}: {exc}") from None
    if names and len(out) != len(set(names)):
        missing = sorted(set(names) - {n for n, _, _ in out})
        raise CliError("data", f"sequences not in dataset: {', '.join(missing)}")
    return out


# --------------------------------------------------------------- simulate


def cmd_simulate(cfg: dict) -> int:
    out = Path(_need(cfg, "out"))
    seed = int(cfg.get("seed", 0))
    count = int(cfg.get("count", 1))
    if count < 1:
        raise CliError("config", "count must be >= 1", EXIT_USAGE)
    sim = SimConfig(**{k: v for k, v in cfg.items() if k in _SIM_KEYS})
    try:
        sim.validate()
    except ValueError as exc:
        raise CliError("config", str(exc), EXIT_USAGE) from None
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    print(f"{'sequence':<10} {'samples':>8} {'duration[s]':>11} {'path[m]':>9} {'speed[m/s]':>10}")
    for i in range(count):
        name = f"seq{i:03d}"
        poses, imu = simulate_trajectory(sim, seed * 1000 + i)
        write_imu_csv(out / f"{name}_imu.csv", imu)
        write_pose_csv(out / f"{name}_gt.csv", poses)
        rows.append((name, f"{name}_imu.csv", f"{name}_gt.csv"))
        length = float(np.sum(np.linalg.norm(np.diff(poses.pos, axis=0), axis=1)))
        dur = float(poses.t[-1] - poses.t[0])
        print(f"{name:<10} {len(imu):>8d} {dur:>11.2f} {length:>9.2f} {length / dur:>10.3f}")
    write_manifest(out, rows)
    return 0


# ------------------------------------------------------------------ train

_TRAIN_DEFAULTS = {"epochs_mse": 10, "epochs_mle": 40, "lr": 1e-3, "batch": 64, "stride": 20,
                   "augment_yaw": False, "augment_reflect": False, "tilt_deg": 0.0}


def _train_settings(cfg: dict):
    model_kw = {k: cfg[k] for k in _MODEL_KEYS if k in cfg}
    t = {**_TRAIN_DEFAULTS, **{k: cfg[k] for k in _TRAIN_DEFAULTS if k in cfg}}
    try:
        model_cfg = ModelConfig(**model_kw)
        train_cfg = TrainConfig(t["epochs_mse"], t["epochs_mle"], t["lr"], t["batch"], int(cfg.get("seed", 0)),
                                AugmentConfig(t["augment_yaw"], t["augment_reflect"], t["tilt_deg"]))
    except ValueError as exc:
        raise CliError("config", str(exc), EXIT_USAGE) from None
    if t["stride"] < 1:
        raise CliError("config", "stride must be >= 1", EXIT_USAGE)
    return model_cfg, train_cfg, t


def _settings_strings(model_cfg: ModelConfig, t: dict, seed: int) -> dict:
    out = {f"model.{k}": v for k, v in model_cfg.to_strings().items()}
    out.update({f"train.{k}": str(v) for k, v in sorted(t.items())})
    out["train.seed"] = str(seed)
    return out


def _save_training(out: Path, model: PriorModel, adam: Adam, settings: dict, epochs_done: int, history):
    tensors = {f"param.{k}": v for k, v in model.params.items()}
    tensors.update(adam.state())
    save_checkpoint(out, tensors, {**settings, "epochs_done": epochs_done})
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["epoch", "stage", "loss"])
    for row in history:
        w.writerow([row["epoch"], row["stage"], f"{row['loss']:.17g}"])
    (out / "loss.csv").write_text(buf.getvalue())


def load_model(directory) -> tuple[PriorModel, dict, dict]:
    tensors, config = load_checkpoint(directory)
    model_cfg = ModelConfig.from_strings({k[6:]: v for k, v in config.items() if k.startswith("model.")})
    params = {k[6:]: v for k, v in tensors.items() if k.startswith("param.")}
    if not params:
        raise CheckpointError(f"{directory} holds no model parameters")
    return PriorModel(model_cfg, params), tensors, config


def _read_history(path: Path, upto: int) -> list:
    if not path.is_file():
        return []
    rows = list(csv.DictReader(path.read_text().splitlines()))
    return [{"epoch": int(r["epoch"]), "stage": r["stage"], "loss": float(r["loss"])} for r in rows
            if int(r["epoch"]) < upto]


def cmd_train(cfg: dict) -> int:
    data_dir = _need(cfg, "data")
    out = Path(_need(cfg, "out"))
    seed = int(cfg.get("seed", 0))
    model_cfg, train_cfg, t = _train_settings(cfg)
    settings = _settings_strings(model_cfg, t, seed)

    windows = []
    for q, (name, imu, poses) in enumerate(load_dataset(data_dir)):
        if len(imu) <= model_cfg.window:
            raise CliError("data", f"{name}: {len(imu)} samples, window needs more than {model_cfg.window}")
        windows.append(build_windows(poses, imu, model_cfg.window, t["stride"], q))
    data = WindowSet.concat(windows)
    print(f"training on {len(data)} windows from {len(windows)} sequence(s)")

    model = adam = None
    start, history = 0, []
    if cfg.get("resume") and (out / "model.manifest").is_file():
        model, tensors, config = load_model(out)
        mismatched = sorted(k for k in settings if config.get(k) != settings[k] and not k.startswith("train.epochs"))
        if mismatched:
            raise CliError("checkpoint", f"resume settings differ from checkpoint: {', '.join(mismatched)}")
        adam = Adam(train_cfg.lr)
        adam.load(tensors)
        start = int(config.get("epochs_done", 0))
        history = _read_history(out / "loss.csv", start)
        print(f"resuming at epoch {start}")

    def on_epoch(epoch, m, opt, row):
        history.append(row)
        _save_training(out, m, opt, settings, epoch + 1, history)
        print(f"epoch {epoch:3d} {row['stage']} loss {row['loss']:.6g}")

    try:
        result = train(data, model_cfg, train_cfg, model=model, adam=adam, start_epoch=start, on_epoch=on_epoch)
    except TrainingDiverged as exc:
        raise CliError("diverged", str(exc)) from None
    if start >= train_cfg.epochs:
        # nothing to do (e.g. zero epochs); still leave a checkpoint behind
        _save_training(out, result.model, result.adam, settings, result.epochs_done, history)
    print(f"checkpoint: {out}  parameters: {result.model.n_params()}")
    return 0


# -------------------------------------------------------------------- run


def _write_rows(path: Path, header: list[str], rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([x if isinstance(x, str) else f"{x:.17g}" for x in r])
    path.write_text(buf.getvalue())


WINDOW_HEADER = ["i0", "i1", "dx", "dy", "dz"] + [f"s{i}{j}" for i in range(3) for j in range(3)]


def _network_run(model: PriorModel, imu, poses, dtype):
    n = model.cfg.window

    def predict(accel, gyro):
        out, _, _ = model.predict_many(accel, gyro, dtype=dtype)
        return out.d, out.sigma

    idx, pos, d, sig = network_trajectory(imu, predict, poses.rot, poses.pos[0], n)
    dts = np.diff(imu.t[idx])
    vel = np.vstack([d / dts[:, None], d[-1:] / dts[-1]])
    traj = PoseSequence(imu.t[idx], poses.rot[idx], pos, vel)
    return traj, [(int(idx[q]), int(idx[q + 1]), *d[q], *sig[q].ravel()) for q in range(len(d))]


def _ekf_run(model: PriorModel, imu, poses, dtype, cfg: dict):
    fc = FilterConfig(window=model.cfg.window, update_stride=int(cfg.get("update_stride", 20)),
                      cov_scale=float(cfg.get("cov_scale", 1.0)))
    init = initial_state(poses.rot[0], poses.vel[0], poses.pos[0])
    res = run_filter(imu, model.as_prior(dtype), init, fc)
    rows = []
    for s, k, d, sig, _ in res.measurements:
        Q = rot_z(euler_xyz(res.poses.rot[s])[2])
        rows.append((s, k, *(Q @ d), *(Q @ sig @ Q.T).ravel()))
    print(f"  updates {res.updates}  skipped {res.skipped}")
    return res.poses, rows


def cmd_run(cfg: dict) -> int:
    data_dir = _need(cfg, "data")
    out = Path(_need(cfg, "out"))
    try:
        model, _, _ = load_model(_need(cfg, "checkpoint"))
    except CheckpointError as exc:
        raise CliError("checkpoint", str(exc)) from None
    if "mode" in cfg and cfg["mode"] != model.cfg.mode:
        raise CliError("checkpoint", f"checkpoint is {model.cfg.mode}, --mode asked for {cfg['mode']}")
    try:
        dtype = np.dtype(cfg.get("dtype", "float64"))
    except TypeError:
        raise CliError("config", f"bad dtype {cfg.get('dtype')!r}", EXIT_USAGE) from None
    names = [s for s in str(cfg.get("sequences", "")).split(",") if s]
    out.mkdir(parents=True, exist_ok=True)
    ekf = cfg.get("ekf", "off") == "on"
    for name, imu, poses in load_dataset(data_dir, names):
        if len(imu) <= model.cfg.window:
            raise CliError("checkpoint", f"{name}: {len(imu)} samples but the model window is {model.cfg.window}")
        print(f"{name}: {'ekf' if ekf else 'network'}")
        traj, rows = _ekf_run(model, imu, poses, dtype, cfg) if ekf else _network_run(model, imu, poses, dtype)
        write_pose_csv(out / f"{name}_traj.csv", traj)
        _write_rows(out / f"{name}_windows.csv", WINDOW_HEADER, rows)
        if cfg.get("plot"):
            from .plot import trajectory_svg
            (out / f"{name}.svg").write_text(trajectory_svg(traj, poses, rows))
    if model.degenerate_frames:
        print(f"degenerate frames: {model.degenerate_frames}")
    return 0


# ------------------------------------------------------------------- eval


def _window_mse(path: Path, gt: PoseSequence) -> float:
    if not path.is_file():
        return float("nan")
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if len(data) == 0:
        return float("nan")
    i0, i1 = data[:, 0].astype(int), data[:, 1].astype(int)
    return mse(data[:, 2:5], gt.pos[i1] - gt.pos[i0])


def cmd_eval(cfg: dict) -> int:
    pred, gt = Path(_need(cfg, "pred")), Path(_need(cfg, "gt"))
    literal = bool(cfg.get("metric_literal", False))
    window = float(cfg.get("rte_window", 60.0))
    reports: list[MetricsReport] = []
    try:
        if gt.is_dir():
            for name, _, gt_path in read_manifest(gt):
                traj_path = pred / f"{name}_traj.csv"
                if not traj_path.is_file():
                    continue
                truth = read_pose_csv(gt_path)
                r = compare(name, read_pose_csv(traj_path), truth, window, literal)
                reports.append(replace(r, mse=_window_mse(pred / f"{name}_windows.csv", truth)))
            if not reports:
                raise CliError("data", f"no trajectories in {pred} match the dataset in {gt}")
        else:
            reports.append(compare(pred.stem, read_pose_csv(pred), read_pose_csv(gt), window, literal))
    except (OSError, ValueError) as exc:
        raise CliError("schema", str(exc)) from None
    if len(reports) > 1:
        reports.append(aggregate(reports))
    print(report_table(reports))
    out = cfg.get("out")
    if out:
        out = Path(out)
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(report_csv(reports))
    return 0


# ----------------------------------------------------------------- parser


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError("usage", message, EXIT_USAGE)


def _positive_float(s: str) -> float:
    v = float(s)
    if not v > 0:
        raise argparse.ArgumentTypeError(f"must be positive, got {s}")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="eqnio", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp):
        sp.add_argument("--config", help="key = value file; flags override it")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out")
        sp.add_argument("--mode", choices=("so2", "o2"))

    s = sub.add_parser("simulate", help="write synthetic IMU + ground-truth sequences")
    common(s)
    s.add_argument("--count", type=int)
    s.add_argument("--duration", type=_positive_float)
    s.add_argument("--rate", type=_positive_float)

    t = sub.add_parser("train", help="fit a displacement prior")
    common(t)
    t.add_argument("--data")
    t.add_argument("--frame", choices=("eq", "noneq", "pca", "identity"))
    t.add_argument("--cov", choices=("eq", "invariant", "pearson"))
    t.add_argument("--epochs-mse", dest="epochs_mse", type=int)
    t.add_argument("--epochs-mle", dest="epochs_mle", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--batch", type=int)
    t.add_argument("--stride", type=int)
    t.add_argument("--resume", action="store_true", default=None)

    r = sub.add_parser("run", help="network-only or EKF trajectories")
    common(r)
    r.add_argument("--data")
    r.add_argument("--checkpoint")
    r.add_argument("--ekf", choices=("on", "off"))
    r.add_argument("--plot", action="store_true", default=None)
    r.add_argument("--sequences", help="comma-separated names (default: all)")
    r.add_argument("--dtype", choices=("float32", "float64"))

    e = sub.add_parser("eval", help="trajectory metrics")
    common(e)
    e.add_argument("--pred", help="trajectory CSV or run directory")
    e.add_argument("--gt", help="ground-truth CSV or dataset directory")
    e.add_argument("--metric-literal", dest="metric_literal", action="store_true", default=None)
    e.add_argument("--rte-window", dest="rte_window", type=_positive_float)
    return p


COMMANDS = {"simulate": cmd_simulate, "train": cmd_train, "run": cmd_run, "eval": cmd_eval}


def _fail(kind: str, command: str, message: str, code: int) -> int:
    one_line = " ".join(str(message).split())
    print(f"eqnio-error kind={kind} command={command} message={json.dumps(one_line)}", file=sys.stderr)
    return code


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    command = next((a for a in argv if a in COMMANDS), "-")
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        return COMMANDS[args.command](resolve(args.command, args))
    except CliError as exc:
        return _fail(exc.kind, command, str(exc), exc.code)
    except OSError as exc:
        return _fail("io", command, f"{exc.filename or ''}: {exc.strerror or exc}", EXIT_FAILURE)
    except (CheckpointError, ValueError) as exc:
        return _fail("invalid", command, str(exc), EXIT_FAILURE)


if __name__ == "__main__":
    sys.exit(main())
