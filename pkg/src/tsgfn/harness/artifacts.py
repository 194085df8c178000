"""Run artifacts: one directory per training run.

Layout::

    <root>/<label>/
        config.yaml              byte copy of the input config
        resolved_config.json     the fully merged configuration
        metrics.csv              one row per evaluation
        checkpoints/step_*.ckpt
        summary.json
        distribution_target.csv, distribution_empirical.csv   (grid)
        modes.txt, modes_discovered.csv                        (sequences)
"""
from __future__ import annotations

import csv
import hashlib
import json
import logging
import os
import time
from pathlib import Path

import numpy as np

from ..config import RunConfig, config_from_resolved, dump_yaml
from ..environments import GridEnv, SequenceEnv, write_modes
from ..evaluation import (DistributionTable, ModeLedger, SampleWindow, empirical_distribution,
                          exact_policy_distributions, exact_target_distribution, l1_distance,
                          mixture_distribution, update_modes)
from ..nn_core.rng import STREAM_EVAL, RngStream
from ..policy import OnPolicy, rollout_batch, select_members
from ..training import METRIC_COLUMNS, RunResult, latest_checkpoint, restore_state, run_training

log = logging.getLogger(__name__)

OUTPUT_ROOT_ENV = "TSGFN_OUTPUT_ROOT"


class ArtifactError(RuntimeError):
    pass


def output_root(run: RunConfig, override=None) -> Path:
    if override is not None:
        return Path(override)
    env = os.environ.get(OUTPUT_ROOT_ENV)
    return Path(env) if env else Path(run.output_dir)


def metrics_hash(path) -> str:
    """Hash of the metric CSV with the wall-clock column removed."""
    h = hashlib.sha256()
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.reader(fh):
            h.update(",".join(v for c, v in zip(METRIC_COLUMNS, row) if c != "wall_ms").encode())
            h.update(b"\n")
    return h.hexdigest()


def read_metrics(path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def summarize(art_dir: Path, run: RunConfig, result: RunResult | None, wall_s: float) -> dict:
    rows = read_metrics(art_dir / "metrics.csv")
    cfg = run.train
    last = rows[-1] if rows else {}
    metric = "modes" if cfg.env.kind == "sequence" else "l1"

    def num(key):
        v = last.get(key, "")
        return float(v) if v not in ("", None) else None

    state = result.state if result is not None else None
    return {
        "label": run.label,
        "strategy": cfg.strategy.kind,
        "seed": cfg.seed,
        "ensemble_size": cfg.ensemble.size,
        "shared_backward": cfg.ensemble.shared_backward,
        "env_kind": cfg.env.kind,
        "env_hash": cfg.env_hash(),
        "config_hash": cfg.content_hash(),
        "metric": metric,
        "final_metric": num("L1_or_modes"),
        "final_exact_l1_mixture": num("exact_l1_mixture"),
        "final_exact_l1_member0": num("exact_l1_member0"),
        "steps": int(last["step"]) if last else 0,
        "trajectories_seen": int(last["trajectories_seen"]) if last else 0,
        "wall_time_s": wall_s,
        "mean_step_ms": float(np.mean(state.step_ms)) if state is not None and state.step_ms else None,
        "metrics_hash": metrics_hash(art_dir / "metrics.csv"),
        "status": "aborted" if result is not None and result.aborted is not None else "ok",
        "abort": result.aborted.diagnostic if result is not None and result.aborted is not None else None,
    }


def _write_final_tables(art_dir: Path, result: RunResult) -> None:
    state = result.state
    env = state.env
    if isinstance(env, GridEnv):
        target = exact_target_distribution(env)
        target.to_csv(art_dir / "distribution_target.csv", env)
        if len(state.window):
            empirical_distribution(state.window, env).to_csv(art_dir / "distribution_empirical.csv", env)
    if isinstance(env, SequenceEnv):
        write_modes(art_dir / "modes.txt", env.modes)
        with open(art_dir / "modes_discovered.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["mode", "discovered", "first_step"])
            for m, d, s in zip(env.modes.modes, state.ledger.discovered, state.ledger.first_step):
                w.writerow([m, int(d), int(s)])


def train_artifact(run: RunConfig, config_bytes: bytes | None = None, root=None, resume: bool = False,
                   name: str | None = None, progress=None) -> tuple[Path, dict]:
    """Train ``run`` into ``<root>/<name or label>``; returns the directory and its summary."""
    art_dir = output_root(run, root) / (name or run.label)
    if art_dir.exists() and any(art_dir.iterdir()) and not resume:
        raise ArtifactError(f"{art_dir} already exists; pass resume or choose another label")
    art_dir.mkdir(parents=True, exist_ok=True)
    if config_bytes is None:
        config_bytes = dump_yaml(run.to_dict()).encode("utf-8")
    if not resume or not (art_dir / "config.yaml").exists():
        (art_dir / "config.yaml").write_bytes(config_bytes)
    (art_dir / "resolved_config.json").write_text(json.dumps(run.to_dict(), indent=2) + "\n", encoding="utf-8")
    t0 = time.perf_counter()
    result = run_training(run.train, art_dir, resume=resume, progress=progress)
    wall = time.perf_counter() - t0
    if result.state.step > 0:
        _write_final_tables(art_dir, result)
    summary = summarize(art_dir, run, result, wall)
    (art_dir / "summary.json").write_text(json.dumps(summary, indent=2) + "\n", encoding="utf-8")
    return art_dir, summary


def load_artifact_config(art_dir) -> RunConfig:
    path = Path(art_dir) / "resolved_config.json"
    if not path.exists():
        raise ArtifactError(f"{art_dir} is not a run artifact (no resolved_config.json)")
    return config_from_resolved(json.loads(path.read_text(encoding="utf-8")))


def load_summary(art_dir) -> dict:
    path = Path(art_dir) / "summary.json"
    if not path.exists():
        raise ArtifactError(f"{art_dir} has no summary.json")
    return json.loads(path.read_text(encoding="utf-8"))


def evaluate_artifact(art_dir, exact: bool = False, samples: int = 10000, plot: bool = True) -> dict:
    """Re-evaluate the latest checkpoint of an artifact and write ``eval.json``."""
    art_dir = Path(art_dir)
    run = load_artifact_config(art_dir)
    ckpt = latest_checkpoint(art_dir / "checkpoints")
    if ckpt is None:
        raise ArtifactError(f"{art_dir} has no checkpoints")
    state = restore_state(run.train, ckpt)
    env, policy = state.env, state.policy
    out = {"checkpoint": ckpt.name, "step": state.step}
    if exact:
        if not env.spec.enumerable:
            raise ArtifactError("--exact needs an enumerable environment")
        target = exact_target_distribution(env)
        per_member = exact_policy_distributions(policy)
        mix = mixture_distribution(per_member)
        out["exact_l1_mixture"] = l1_distance(mix, target)
        out["exact_l1_member0"] = l1_distance(DistributionTable(per_member[0]), target)
        out["exact_l1_members_mean"] = float(np.mean([l1_distance(DistributionTable(p), target) for p in per_member]))
        if plot and isinstance(env, GridEnv):
            from .plotting import plot_grid_distributions
            plot_grid_distributions(env, target, mix, art_dir / "eval_distribution.png")
    rng = RngStream(run.train.seed, STREAM_EVAL).generator()
    chunk = 256
    window = SampleWindow(samples)
    ledger = ModeLedger(env.mode_array, run.train.env.sequence.radius) if isinstance(env, SequenceEnv) else None
    drawn = 0
    while drawn < samples:
        n = min(chunk, samples - drawn)
        batch = rollout_batch(policy, select_members(policy.K, n, rng), OnPolicy(), rng)
        if ledger is not None:
            update_modes(ledger, batch.terminal_states[:, 1:], drawn)
        else:
            window.extend(batch.terminal_ids)
        drawn += n
    out["samples"] = samples
    if ledger is not None:
        out["sampled_modes"] = ledger.count
    else:
        out["sampled_l1"] = l1_distance(empirical_distribution(window, env), exact_target_distribution(env))
    (art_dir / "eval.json").write_text(json.dumps(out, indent=2) + "\n", encoding="utf-8")
    return out
