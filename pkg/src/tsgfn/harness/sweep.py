"""Cartesian grid sweeps over config keys, one artifact per combination and seed.

Sweep spec (YAML)::

    label: eps-sweep
    base: seq-eps-desk          # preset name, or a path to a config file
    output_dir: sweeps
    seeds: [0, 1]
    overrides:                  # applied to every run
      budget.total_trajectories: 20000
    grid:                       # dotted key -> candidate list
      strategy.epsilon: [0.01, 0.005, 0.001, 0.0005]
"""
from __future__ import annotations

import csv
import itertools
import logging
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import yaml

from ..config import ConfigError, load_run_config, make_run_config, preset_names, set_dotted
from .artifacts import train_artifact

log = logging.getLogger(__name__)

SPEC_KEYS = {"label", "base", "output_dir", "seeds", "overrides", "grid"}


def load_sweep_spec(path) -> dict:
    try:
        spec = yaml.safe_load(Path(path).read_text(encoding="utf-8"))
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return validate_sweep_spec(spec, str(path))


def validate_sweep_spec(spec, source: str = "<sweep>") -> dict:
    if not isinstance(spec, dict):
        raise ConfigError(f"{source}: top level must be a mapping")
    problems = [f"{source}: {k}: unknown key" for k in spec if k not in SPEC_KEYS]
    if "base" not in spec:
        problems.append(f"{source}: base: missing")
    grid = spec.get("grid") or {}
    if not isinstance(grid, dict) or not all(isinstance(v, list) and v for v in grid.values()):
        problems.append(f"{source}: grid: must map keys to non-empty lists")
    seeds = spec.get("seeds", [0])
    if not isinstance(seeds, list) or not seeds or not all(isinstance(s, int) for s in seeds):
        problems.append(f"{source}: seeds: must be a non-empty list of integers")
    if problems:
        raise ConfigError(problems)
    out = dict(spec)
    out.setdefault("label", "sweep")
    out.setdefault("output_dir", "sweeps")
    out["seeds"] = seeds
    out["grid"] = grid
    out["overrides"] = spec.get("overrides") or {}
    return out


def expand(spec: dict) -> list[tuple[str, dict]]:
    """Every (group label, run name, dotted overrides) of the sweep, in a stable order.

    Seeds of one combination share the group label so ``compare`` aggregates them.
    """
    keys = list(spec["grid"])
    runs = []
    for i, combo in enumerate(itertools.product(*(spec["grid"][k] for k in keys))):
        for seed in spec["seeds"]:
            overrides = dict(spec["overrides"])
            overrides.update(zip(keys, combo))
            overrides["seed"] = seed
            runs.append((f"{spec['label']}-c{i}", f"{spec['label']}-c{i}-s{seed}", overrides))
    return runs


def _resolve(spec: dict, label: str, overrides: dict):
    base = spec["base"]
    data = {"label": label}
    for key, val in overrides.items():
        data = set_dotted(data, key, val)
    if base in preset_names():
        data["preset"] = base
        return make_run_config(data, source=label)
    return load_run_config(base, overrides={**overrides, "label": label})


def _run_one(args):
    spec, label, name, overrides, root = args
    try:
        run = _resolve(spec, label, overrides)
        _, summary = train_artifact(run, root=root, name=name)
        return {"run": name, **overrides, "final_metric": summary["final_metric"],
                "metric": summary["metric"], "status": summary["status"], "error": ""}
    except Exception as exc:  # a failed run is recorded, the sweep goes on
        log.error("sweep run %s failed: %s", name, exc)
        return {"run": name, **overrides, "final_metric": None, "metric": "", "status": "failed",
                "error": str(exc)}


def run_sweep(spec: dict, root=None, jobs: int = 1) -> tuple[Path, list[dict]]:
    root = Path(root if root is not None else spec["output_dir"]) / spec["label"]
    root.mkdir(parents=True, exist_ok=True)
    work = [(spec, label, name, ov, root) for label, name, ov in expand(spec)]
    if jobs > 1:
        with ProcessPoolExecutor(jobs) as pool:
            results = list(pool.map(_run_one, work))
    else:
        results = [_run_one(w) for w in work]
    board = leaderboard(results)
    keys = []
    for r in board:
        keys.extend(k for k in r if k not in keys)
    with open(root / "leaderboard.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=keys)
        w.writeheader()
        w.writerows(board)
    return root, board


def leaderboard(results: list[dict]) -> list[dict]:
    """Successful runs first, best metric first (lowest L1, most modes)."""
    def key(r):
        if r["final_metric"] is None:
            return (1, 0.0)
        sign = -1.0 if r["metric"] == "modes" else 1.0
        return (0, sign * r["final_metric"])
    return sorted(results, key=key)
