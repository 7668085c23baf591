"""Command-line harness: train, finetune, sweep, diagnose, plotdata.

Every command writes into a run directory (under --out, or
$PRFT_OUT_ROOT/<run_id> by default) with the layout
{manifest.txt, config.ini, metrics.csv, checkpoints/, reports/}.
The manifest is written before any training work starts; result fields
(reward read counts, final returns) are appended when the command ends.
"""

from __future__ import annotations

import argparse
import configparser
import math
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import analysis, envs, pipeline, runio
from .errors import ConfigError, DivergenceError, PrftError
from .maxent import boltzmann_policy
from .reward_model import linear_fit_diagnostic, predict_batch
from .seeding import stream_rng, stream_seed

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIG = 2
SNAPSHOT_DEFAULT = 5000


def _utc_now() -> str:
    return time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime())


def _prepare_run_dir(out: str | None, run_id: str) -> Path:
    run_dir = Path(out) if out else runio.out_root() / run_id
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "checkpoints").mkdir(exist_ok=True)
    (run_dir / "reports").mkdir(exist_ok=True)
    return run_dir


def _overrides_from_args(args) -> dict:
    overrides = {}
    if getattr(args, "seed", None) is not None:
        overrides["master_seed"] = args.seed
    if getattr(args, "kappa", None) is not None:
        overrides["target_intensity"] = args.kappa
    return overrides


# ---------------------------------------------------------------------------
# train

def cmd_train(args) -> int:
    config = runio.parse_run_config(args.config, _overrides_from_args(args))
    run_id = f"train-s{config.master_seed}"
    run_dir = _prepare_run_dir(args.out, run_id)
    (run_dir / "config.ini").write_text(runio.serialize_run_config(config),
                                        encoding="utf-8", newline="\n")
    runio.write_manifest(run_dir, run_id, "train", _utc_now())

    def snap(steps_done, q_now, model_now):
        runio.save_checkpoint(run_dir / "checkpoints" / f"step-{steps_done}",
                              q_now, model_now, steps_done)

    try:
        result = pipeline.train_source(config, snapshot_every=args.snapshot_every,
                                       on_snapshot=snap)
    except DivergenceError as exc:
        runio.append_manifest(run_dir, {"status": "diverged", "error": str(exc)})
        print(f"training diverged: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    runio.write_metrics_csv(run_dir / "metrics.csv", result.metrics)
    runio.save_checkpoint(run_dir / "checkpoints", result.q, result.model,
                          config.train_steps, result.idm_spec, result.idm_trunk)
    monitor = pipeline.MonitoredEnv(config.env, pipeline.SOURCE_DOMAIN)
    report = pipeline.evaluate(result.q, pipeline.SOURCE_DOMAIN, config,
                               "source", monitor=monitor)
    runio.write_csv(run_dir / "reports" / "eval_source.csv",
                    ["phase", "kappa", "seed", "mean_return", "std_return", "episodes"],
                    [[report.phase, 0.0, config.master_seed, report.mean_return,
                      report.std_return, config.eval_episodes]])
    runio.append_manifest(run_dir, {
        "status": "ok",
        "source_mean_return": runio.fmt(report.mean_return),
        "eval_reward_reads": monitor.reward_reads,
    })
    print(f"train done: source mean return {report.mean_return:.4f} -> {run_dir}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# finetune

def _finetune_run(checkpoint: Path, config: pipeline.RunConfig, run_dir: Path,
                  snapshot_every: int, mode: str) -> dict:
    """Shared driver for PRFT and IDM fine-tuning; returns manifest fields."""
    q, model, _, idm_spec, idm_trunk = runio.load_checkpoint(checkpoint)
    q = replace(q, alpha=config.alpha, gamma=config.gamma)
    target = config.target_domain()
    eval_monitor = pipeline.MonitoredEnv(config.env, target)

    snapshots = []

    def snap(step_done: int, q_now) -> None:
        report = pipeline.evaluate(q_now, target, config, "finetuned",
                                   monitor=eval_monitor)
        snapshots.append((step_done, report))
        runio.save_checkpoint(run_dir / "checkpoints" / f"step-{step_done}",
                              q_now, model, step_done, idm_spec, idm_trunk)

    zero_shot = pipeline.evaluate(q, target, config, "zero_shot",
                                  monitor=eval_monitor)
    snapshots.append((0, zero_shot))

    if mode == "idm":
        q2, metrics = pipeline.finetune_idm_baseline(q, idm_spec, idm_trunk,
                                                     target, config)
        reward_reads = 0
        snap(config.finetune_steps, q2)
        final_model = model
    else:
        result = pipeline.finetune_target(q, model, target, config,
                                          snapshot_every=snapshot_every,
                                          on_snapshot=snap)
        q2, metrics = result.q, result.metrics
        reward_reads = result.reward_reads
        final_model = result.model
        if config.finetune_steps % snapshot_every != 0:
            snap(config.finetune_steps, q2)

    runio.write_metrics_csv(run_dir / "metrics.csv", metrics)
    runio.save_checkpoint(run_dir / "checkpoints", q2, final_model,
                          config.finetune_steps, idm_spec, idm_trunk)
    rows = [[report.phase if step == 0 else "finetuned", step,
             config.target_intensity, config.master_seed,
             report.mean_return, report.std_return, config.eval_episodes]
            for step, report in snapshots]
    runio.write_csv(run_dir / "reports" / "eval_snapshots.csv",
                    ["phase", "step", "kappa", "seed", "mean_return",
                     "std_return", "episodes"], rows)
    final_return = snapshots[-1][1].mean_return
    return {
        "status": "ok",
        "finetune_reward_reads": reward_reads,
        "eval_reward_reads": eval_monitor.reward_reads,
        "zero_shot_mean_return": runio.fmt(zero_shot.mean_return),
        "finetuned_mean_return": runio.fmt(final_return),
    }


def cmd_finetune(args) -> int:
    checkpoint = Path(args.checkpoint)
    base_config = checkpoint.parent / "config.ini"
    config_path = Path(args.config) if args.config else base_config
    config = runio.parse_run_config(config_path, _overrides_from_args(args))
    run_id = f"finetune-s{config.master_seed}-k{config.target_intensity:g}"
    run_dir = _prepare_run_dir(args.out, run_id)
    (run_dir / "config.ini").write_text(runio.serialize_run_config(config),
                                        encoding="utf-8", newline="\n")
    runio.write_manifest(run_dir, run_id, "finetune", _utc_now(),
                         {"checkpoint": str(checkpoint)})
    try:
        fields = _finetune_run(checkpoint, config, run_dir,
                               args.snapshot_every, "prft")
    except DivergenceError as exc:
        runio.append_manifest(run_dir, {"status": "diverged", "error": str(exc)})
        print(f"fine-tuning diverged: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    runio.append_manifest(run_dir, fields)
    print(f"finetune done: zero-shot {fields['zero_shot_mean_return']}, "
          f"finetuned {fields['finetuned_mean_return']} -> {run_dir}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# sweep

def parse_sweep_spec(path: str | Path):
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"sweep spec not found: {path}")
    cp = configparser.ConfigParser()
    cp.read(path, encoding="utf-8")
    if not cp.has_section("sweep"):
        raise ConfigError(f"{path}: missing [sweep] section")
    sweep = cp["sweep"]
    intensities = [float(x) for x in sweep.get("intensities", "0.1,0.2,0.3,0.4,0.5").split(",")]
    seeds = [int(x) for x in sweep.get("seeds", "0,1,2,3").split(",")]
    phases = [p.strip() for p in sweep.get("phases", "zero_shot,prft").split(",")]
    if not intensities or not seeds or not phases:
        raise ConfigError(f"{path}: intensities, seeds, phases must be non-empty")
    valid = {"zero_shot", "prft", "idm", "control"}
    unknown = set(phases) - valid
    if unknown:
        raise ConfigError(f"{path}: unknown phases {sorted(unknown)}")
    run = dict(cp["run"]) if cp.has_section("run") else {}
    env = dict(cp["env"]) if cp.has_section("env") else {}
    base = runio.build_run_config(run, env, source=str(path))
    if "idm" in phases:
        base = replace(base, baseline="idm")
    return base, intensities, seeds, phases


def _sweep_train_job(payload):
    base_ini, seed, out_dir = payload
    config = runio.build_run_config(_ini_to_dicts(base_ini)[0],
                                    _ini_to_dicts(base_ini)[1])
    config = replace(config, master_seed=seed)
    result = pipeline.train_source(config)
    run_dir = Path(out_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "config.ini").write_text(runio.serialize_run_config(config),
                                        encoding="utf-8", newline="\n")
    runio.write_metrics_csv(run_dir / "metrics.csv", result.metrics)
    runio.save_checkpoint(run_dir / "checkpoints", result.q, result.model,
                          config.train_steps, result.idm_spec, result.idm_trunk)
    report = pipeline.evaluate(result.q, pipeline.SOURCE_DOMAIN, config, "source")
    return seed, report.mean_return


def _ini_to_dicts(ini_text: str):
    cp = configparser.ConfigParser()
    cp.read_string(ini_text)
    run = dict(cp["run"]) if cp.has_section("run") else {}
    env = dict(cp["env"]) if cp.has_section("env") else {}
    return run, env


def _sweep_cell_job(payload):
    """One (seed, kappa) cell: zero-shot eval plus requested fine-tune phases."""
    train_dir, seed, kappa, phases = payload
    config = runio.parse_run_config(Path(train_dir) / "config.ini")
    config = replace(config, master_seed=seed, target_intensity=kappa)
    q, model, _, idm_spec, idm_trunk = runio.load_checkpoint(Path(train_dir) / "checkpoints")
    target = config.target_domain() if kappa > 0 else pipeline.SOURCE_DOMAIN
    out = {"seed": seed, "kappa": kappa, "reward_reads": 0}
    zero_shot = pipeline.evaluate(q, target, config, "zero_shot")
    out["zero_shot"] = zero_shot.mean_return
    if "prft" in phases or "control" in phases:
        result = pipeline.finetune_target(q, model, target, config)
        report = pipeline.evaluate(result.q, target, config, "finetuned")
        out["prft"] = report.mean_return
        out["reward_reads"] += result.reward_reads
    if "idm" in phases:
        q_idm, _ = pipeline.finetune_idm_baseline(q, idm_spec, idm_trunk,
                                                  target, config)
        report = pipeline.evaluate(q_idm, target, config, "idm")
        out["idm"] = report.mean_return
    return out


def cmd_sweep(args) -> int:
    base, intensities, seeds, phases = parse_sweep_spec(args.config)
    run_dir = _prepare_run_dir(args.out, "sweep")
    base_ini = runio.serialize_run_config(base)
    (run_dir / "config.ini").write_text(base_ini, encoding="utf-8", newline="\n")
    runio.write_manifest(run_dir, "sweep", "sweep", _utc_now(),
                         {"intensities": ",".join(map(str, intensities)),
                          "seeds": ",".join(map(str, seeds)),
                          "phases": ",".join(phases)})
    workers = max(1, args.workers)
    cells = [(seed, kappa) for seed in seeds for kappa in intensities]
    if "control" in phases:
        cells += [(seed, 0.0) for seed in seeds if 0.0 not in intensities]

    train_dirs = {seed: run_dir / f"train-s{seed}" for seed in seeds}
    failures = []
    with ProcessPoolExecutor(max_workers=workers) as pool:
        train_payloads = [(base_ini, seed, str(train_dirs[seed])) for seed in seeds]
        source_returns = {}
        for seed, ret in pool.map(_sweep_train_job, train_payloads):
            source_returns[seed] = ret
        cell_payloads = [(str(train_dirs[seed]), seed, kappa,
                          [p for p in phases if p != "control" or kappa == 0.0])
                         for seed, kappa in cells]
        results = []
        futures = [pool.submit(_sweep_cell_job, p) for p in cell_payloads]
        for payload, fut in zip(cell_payloads, futures):
            try:
                results.append(fut.result())
            except PrftError as exc:
                failures.append((payload[1], payload[2], str(exc)))

    total_reads = sum(r["reward_reads"] for r in results)
    per_cell_rows = []
    for r in results:
        for phase in ("zero_shot", "prft", "idm"):
            if phase in r:
                per_cell_rows.append([r["kappa"], r["seed"], phase, r[phase]])
    for seed, ret in source_returns.items():
        per_cell_rows.append([0.0, seed, "source", ret])
    runio.write_csv(run_dir / "reports" / "cells.csv",
                    ["kappa", "seed", "phase", "mean_return"], per_cell_rows)

    summary_rows = []
    by_cell = {}
    for r in results:
        by_cell.setdefault(r["kappa"], []).append(r)
    for kappa in sorted(by_cell):
        rs = by_cell[kappa]
        for phase in ("zero_shot", "prft", "idm"):
            vals = [r[phase] for r in rs if phase in r]
            if not vals:
                continue
            rel = math.nan
            if phase in ("prft", "idm"):
                rels = [(r[phase] - r["zero_shot"]) / r["zero_shot"]
                        for r in rs if phase in r and r["zero_shot"] != 0]
                rel = float(np.mean(rels)) if rels else math.nan
            summary_rows.append([kappa, phase, float(np.mean(vals)),
                                 float(np.std(vals)), len(vals), rel])
    runio.write_csv(run_dir / "summary.csv",
                    ["kappa", "phase", "mean_return", "std_return", "n_seeds",
                     "rel_improvement"], summary_rows)
    if failures:
        runio.write_csv(run_dir / "reports" / "failures.csv",
                        ["seed", "kappa", "error"], [list(f) for f in failures])
    runio.append_manifest(run_dir, {
        "status": "partial" if failures else "ok",
        "finetune_reward_reads": total_reads,
        "failed_cells": len(failures),
    })
    print(f"sweep done: {len(results)} cells, {len(failures)} failures -> {run_dir}")
    return EXIT_OK if not failures else EXIT_FAILURE


# ---------------------------------------------------------------------------
# diagnose

def collect_rollout_states(q, config, n_episodes: int, rng):
    """Boltzmann rollouts in the source domain; returns (states, actions)."""
    states, actions = [], []
    for ep in range(n_episodes):
        state, obs = envs.reset(config.env, pipeline.SOURCE_DOMAIN,
                                stream_seed(config.master_seed, "diagnose-episode", ep))
        done = False
        while not done:
            a = pipeline.act(q, obs, "sample", rng)
            state2, obs2, _, done = envs.step(state, a, config.env,
                                              pipeline.SOURCE_DOMAIN)
            states.append(state2)
            actions.append(a)
            state, obs = state2, obs2
    return states, np.array(actions)


def reward_fit_for_domain(model, states, actions, domain, env_cfg):
    obs = np.stack([envs.render(s, domain, env_cfg) for s in states])
    predicted = predict_batch(model, obs, actions)
    true = np.array([envs.true_reward(s, env_cfg) for s in states])
    return linear_fit_diagnostic(predicted, true)


def predicted_reward_table(model, disc: analysis.DiscretizedEnv, domain) -> np.ndarray:
    """phi evaluated at every (cell state, action) render under a domain."""
    n = disc.mdp.n_states
    obs = np.stack([
        envs.render(envs.EnvState(agent_pos=(float(c[0]), float(c[1])),
                                  goal_pos=disc.goal), domain, disc.env_config)
        for c in disc.cell_centers])
    table = np.empty((n, disc.mdp.n_actions))
    for a in range(disc.mdp.n_actions):
        table[:, a] = predict_batch(model, obs, np.full(n, a))
    return table


def cmd_diagnose(args) -> int:
    checkpoint = Path(args.checkpoint)
    # --kappa is a comma-separated list here, not a config override.
    overrides = {"master_seed": args.seed} if args.seed is not None else {}
    config = runio.parse_run_config(checkpoint.parent / "config.ini", overrides)
    q, model, _, _, _ = runio.load_checkpoint(checkpoint)
    kappas = [float(k) for k in args.kappa.split(",")]
    run_dir = _prepare_run_dir(args.out, f"diagnose-s{config.master_seed}")
    (run_dir / "config.ini").write_text(runio.serialize_run_config(config),
                                        encoding="utf-8", newline="\n")
    runio.write_manifest(run_dir, f"diagnose-s{config.master_seed}", "diagnose",
                         _utc_now(), {"kappas": args.kappa})

    rng = stream_rng(config.master_seed, "diagnose-act")
    states, actions = collect_rollout_states(q, config, args.episodes, rng)
    fit_rows, margin_rows = [], []
    disc = analysis.discretize_env(config.env, gamma=config.gamma)
    q_soft = analysis.soft_value_iteration(disc.mdp, alpha=1.0, tol=1e-8)
    policy = boltzmann_policy(q_soft, 1.0)
    for kappa in kappas:
        domain = (pipeline.SOURCE_DOMAIN if kappa == 0.0 else
                  envs.make_domain(kappa, stream_seed(config.master_seed,
                                                      "target-domain")))
        fit = reward_fit_for_domain(model, states, actions, domain, config.env)
        fit_rows.append([kappa, config.master_seed, fit.slope, fit.intercept,
                         fit.r_squared, fit.mse, fit.sample_count])
        r_tilde = predicted_reward_table(model, disc, domain)
        report = analysis.robust_set_margin(
            disc.mdp, r_tilde, policy, n_rollouts=64, horizon=config.env.horizon,
            rng=stream_rng(config.master_seed, "diagnose-margin"))
        margin_rows.append([kappa, config.master_seed, report.margin,
                            report.std_error, config.env.horizon])
    runio.write_csv(run_dir / "reports" / "reward_fit.csv",
                    ["kappa", "seed", "k", "b", "r_squared", "mse", "n"], fit_rows)
    runio.write_csv(run_dir / "reports" / "robust_margin.csv",
                    ["kappa", "seed", "margin", "std_error", "horizon"], margin_rows)
    runio.append_manifest(run_dir, {"status": "ok"})
    print(f"diagnose done -> {run_dir}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# plotdata

LONG_HEADER = ["metric", "kappa", "phase", "mean", "std"]


def cmd_plotdata(args) -> int:
    header, rows = runio.read_csv(args.summary)
    out_path = Path(args.out) if args.out else Path(args.summary).with_suffix(".long.csv")
    if header == LONG_HEADER:  # already tidy; idempotent pass-through
        out_rows = rows
    elif header[:6] == ["kappa", "phase", "mean_return", "std_return", "n_seeds",
                        "rel_improvement"]:
        out_rows = []
        for kappa, phase, mean, std, _n, rel in rows:
            out_rows.append(["return", kappa, phase, mean, std])
            if rel != "nan":
                out_rows.append(["rel_improvement", kappa, phase, rel, "0"])
    else:
        print(f"malformed summary header: {header}", file=sys.stderr)
        return EXIT_CONFIG
    runio.write_csv(out_path, LONG_HEADER, out_rows)
    print(f"plotdata -> {out_path}")
    return EXIT_OK


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="prft",
                                     description="Predicted-reward fine-tuning lab")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="joint source-domain training")
    p.add_argument("--config", required=True)
    p.add_argument("--out")
    p.add_argument("--seed", type=int)
    p.add_argument("--snapshot-every", type=int, default=SNAPSHOT_DEFAULT,
                   help="intermediate checkpoint cadence in steps")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("finetune", help="reward-free target fine-tuning")
    p.add_argument("--checkpoint", required=True,
                   help="checkpoints/ directory of a train run")
    p.add_argument("--kappa", type=float)
    p.add_argument("--config", help="config overriding the checkpoint's")
    p.add_argument("--out")
    p.add_argument("--seed", type=int)
    p.add_argument("--snapshot-every", type=int, default=SNAPSHOT_DEFAULT)
    p.set_defaults(func=cmd_finetune)

    p = sub.add_parser("sweep", help="seed x intensity x phase grid")
    p.add_argument("--config", required=True, help="sweep spec (INI)")
    p.add_argument("--out")
    p.add_argument("--workers", type=int, default=4)
    p.add_argument("--snapshot-every", type=int, default=SNAPSHOT_DEFAULT)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("diagnose", help="reward-fit and robust-margin reports")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--kappa", default="0,0.1,0.2,0.3,0.4,0.5",
                   help="comma-separated intensities")
    p.add_argument("--episodes", type=int, default=10)
    p.add_argument("--out")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_diagnose)

    p = sub.add_parser("plotdata", help="tidy a summary CSV into long format")
    p.add_argument("summary")
    p.add_argument("--out")
    p.set_defaults(func=cmd_plotdata)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except PrftError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
