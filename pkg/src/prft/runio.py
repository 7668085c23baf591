"""Run persistence: INI configs, manifests, metrics CSV, checkpoints.

Config files are flat key=value INI with [run] and [env] sections; every
key is optional and falls back to the `RunConfig` / `EnvConfig` defaults.
All CSV output is comma-separated, header row, UTF-8, LF line endings,
floats printed with 9 significant digits.

Run directory layout: <out>/{manifest.txt, config.ini, metrics.csv,
checkpoints/, reports/}.
"""

from __future__ import annotations

import configparser
import math
import os
import subprocess
from dataclasses import asdict
from pathlib import Path

from . import nets
from .envs import EnvConfig
from .errors import ConfigError
from .maxent import QFunction
from .pipeline import METRIC_COLUMNS, RunConfig
from .reward_model import RewardPredictor


def fmt(value) -> str:
    """Canonical CSV cell: 9 significant digits for floats."""
    if isinstance(value, float):
        if math.isnan(value):
            return "nan"
        return f"{value:.9g}"
    return str(value)


# ---------------------------------------------------------------------------
# Config files

def _parse_tuple_int(text: str) -> tuple[int, ...]:
    return tuple(int(x) for x in text.replace("x", ",").split(",") if x.strip())


def parse_run_config(path: str | Path, overrides: dict | None = None) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    cp = configparser.ConfigParser()
    try:
        cp.read(path, encoding="utf-8")
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    run = dict(cp["run"]) if cp.has_section("run") else {}
    env = dict(cp["env"]) if cp.has_section("env") else {}
    if overrides:
        run.update({k: str(v) for k, v in overrides.items()})
    return build_run_config(run, env, source=str(path))


def build_run_config(run: dict, env: dict, source: str = "<args>") -> RunConfig:
    try:
        env_kwargs = {}
        if "horizon" in env:
            env_kwargs["horizon"] = int(env["horizon"])
        if "action_step" in env:
            env_kwargs["action_step"] = float(env["action_step"])
        if "image_size" in env:
            size = _parse_tuple_int(env["image_size"])
            env_kwargs["image_size"] = size if len(size) == 2 else (size[0], size[0])
        env_config = EnvConfig(**env_kwargs)

        kwargs = {"env": env_config}
        ints = ("master_seed", "train_steps", "finetune_steps", "eval_episodes",
                "batch_size", "buffer_capacity")
        floats = ("target_intensity", "alpha", "gamma", "tau", "q_lr",
                  "reward_lr", "overlay_lambda_max")
        strs = ("activation", "augmentation", "baseline", "finetune_exploration")
        bools = ("reward_model_on_augmented", "finetune_reset_optimizer")
        for key in ints:
            if key in run:
                kwargs[key] = int(run[key])
        for key in floats:
            if key in run:
                kwargs[key] = float(run[key])
        for key in strs:
            if key in run:
                kwargs[key] = run[key].strip()
        for key in bools:
            if key in run:
                kwargs[key] = run[key].strip().lower() in ("1", "true", "yes")
        if "hidden_sizes" in run:
            kwargs["hidden_sizes"] = _parse_tuple_int(run["hidden_sizes"])
        unknown = set(run) - set(ints) - set(floats) - set(strs) - set(bools) - {"hidden_sizes"}
        if unknown:
            raise ConfigError(f"{source}: unknown run keys {sorted(unknown)}")
        return RunConfig(**kwargs)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"{source}: {exc}") from exc


def serialize_run_config(config: RunConfig) -> str:
    env = config.env
    lines = ["[run]"]
    skip = {"env"}
    for key, value in asdict(config).items():
        if key in skip:
            continue
        if isinstance(value, tuple):
            value = ",".join(str(v) for v in value)
        lines.append(f"{key} = {value}")
    lines += ["", "[env]",
              f"horizon = {env.horizon}",
              f"action_step = {env.action_step}",
              f"image_size = {env.image_size[0]},{env.image_size[1]}",
              ""]
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# Metrics and reports

def write_metrics_csv(path: str | Path, rows: list[dict]) -> None:
    with open(path, "w", newline="\n", encoding="utf-8") as f:
        f.write(",".join(METRIC_COLUMNS) + "\n")
        for row in rows:
            f.write(",".join(fmt(row[c]) for c in METRIC_COLUMNS) + "\n")


def write_csv(path: str | Path, header: list[str], rows: list[list]) -> None:
    with open(path, "w", newline="\n", encoding="utf-8") as f:
        f.write(",".join(header) + "\n")
        for row in rows:
            f.write(",".join(fmt(v) for v in row) + "\n")


def read_csv(path: str | Path) -> tuple[list[str], list[list[str]]]:
    with open(path, encoding="utf-8") as f:
        lines = [ln.rstrip("\n") for ln in f if ln.strip()]
    if not lines:
        raise ConfigError(f"empty CSV: {path}")
    header = lines[0].split(",")
    return header, [ln.split(",") for ln in lines[1:]]


# ---------------------------------------------------------------------------
# Manifest

def code_version() -> str:
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty"],
                             capture_output=True, text=True, timeout=10,
                             cwd=Path(__file__).parent)
        if out.returncode == 0:
            return out.stdout.strip()
    except OSError:
        pass
    return "unknown"


def write_manifest(run_dir: Path, run_id: str, command: str,
                   created_utc: str, extra: dict | None = None) -> Path:
    path = run_dir / "manifest.txt"
    with open(path, "w", newline="\n", encoding="utf-8") as f:
        f.write(f"run_id = {run_id}\n")
        f.write(f"command = {command}\n")
        f.write(f"created_utc = {created_utc}\n")
        f.write(f"code_version = {code_version()}\n")
        f.write("config_file = config.ini\n")
        for key, value in (extra or {}).items():
            f.write(f"{key} = {value}\n")
    return path


def append_manifest(run_dir: Path, entries: dict) -> None:
    with open(run_dir / "manifest.txt", "a", newline="\n", encoding="utf-8") as f:
        for key, value in entries.items():
            f.write(f"{key} = {value}\n")


# ---------------------------------------------------------------------------
# Checkpoints

def save_checkpoint(ckpt_dir: str | Path, q: QFunction, model: RewardPredictor,
                    train_steps: int, idm_spec=None, idm_trunk=None) -> None:
    ckpt_dir = Path(ckpt_dir)
    ckpt_dir.mkdir(parents=True, exist_ok=True)
    nets.save_params(str(ckpt_dir / "q_online.net"), q.spec, q.network)
    nets.save_params(str(ckpt_dir / "q_target.net"), q.spec, q.target_network)
    nets.save_params(str(ckpt_dir / "reward_model.net"), model.spec, model.network)
    if idm_trunk is not None:
        nets.save_params(str(ckpt_dir / "idm_trunk.net"), idm_spec, idm_trunk)
    with open(ckpt_dir / "header.txt", "w", newline="\n", encoding="utf-8") as f:
        f.write(f"alpha = {q.alpha}\n")
        f.write(f"gamma = {q.gamma}\n")
        f.write(f"train_steps = {train_steps}\n")
        f.write(f"action_count = {model.action_count}\n")
        f.write(f"frozen = {str(model.frozen).lower()}\n")


def load_checkpoint(ckpt_dir: str | Path):
    """Returns (QFunction, RewardPredictor, header dict, idm_spec, idm_trunk)."""
    ckpt_dir = Path(ckpt_dir)
    header_path = ckpt_dir / "header.txt"
    if not header_path.is_file():
        raise ConfigError(f"checkpoint not found: {ckpt_dir}")
    header = {}
    for line in header_path.read_text(encoding="utf-8").splitlines():
        if "=" in line:
            key, _, value = line.partition("=")
            header[key.strip()] = value.strip()
    q_spec, q_net = nets.load_params(str(ckpt_dir / "q_online.net"))
    _, q_target = nets.load_params(str(ckpt_dir / "q_target.net"))
    r_spec, r_net = nets.load_params(str(ckpt_dir / "reward_model.net"))
    q = QFunction(spec=q_spec, network=q_net, target_network=q_target,
                  alpha=float(header["alpha"]), gamma=float(header["gamma"]))
    model = RewardPredictor(spec=r_spec, network=r_net,
                            action_count=int(header["action_count"]),
                            frozen=header.get("frozen") == "true")
    idm_spec = idm_trunk = None
    if (ckpt_dir / "idm_trunk.net").is_file():
        idm_spec, idm_trunk = nets.load_params(str(ckpt_dir / "idm_trunk.net"))
    return q, model, header, idm_spec, idm_trunk


def out_root() -> Path:
    return Path(os.environ.get("PRFT_OUT_ROOT", "runs"))
