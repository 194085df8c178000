"""Align metric curves of several artifacts and aggregate them per group across seeds."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .artifacts import ArtifactError, load_summary, read_metrics


class CompareError(ValueError):
    pass


@dataclass
class Curve:
    artifact: str
    group: str
    strategy: str
    seed: int
    x: np.ndarray
    y: np.ndarray
    metric: str


def load_curve(art_dir, group_by: str = "label") -> Curve:
    art_dir = Path(art_dir)
    summary = load_summary(art_dir)
    rows = read_metrics(art_dir / "metrics.csv")
    rows = [r for r in rows if r["L1_or_modes"] != ""]
    if not rows:
        raise ArtifactError(f"{art_dir} has no metric rows")
    x = np.array([float(r["trajectories_seen"]) for r in rows])
    y = np.array([float(r["L1_or_modes"]) for r in rows])
    group = summary["label"] if group_by == "label" else str(art_dir)
    return Curve(str(art_dir), group, summary["strategy"], int(summary["seed"]), x, y, summary["metric"])


def stderr(values: np.ndarray) -> float:
    """Sample standard deviation over ``sqrt(n)``; 0 for a single value."""
    values = np.asarray(values, dtype=np.float64)
    if len(values) < 2:
        return 0.0
    return float(values.std(ddof=1) / np.sqrt(len(values)))


def common_grid(curves: list[Curve], points: int) -> np.ndarray:
    lo = max(c.x[0] for c in curves)
    hi = min(c.x[-1] for c in curves)
    if points <= 1 or hi <= lo:
        return np.array([hi])
    return np.linspace(lo, hi, points)


def compare(art_dirs, out_dir=None, points: int = 50, group_by: str = "label", plot: bool = True) -> dict:
    """Resample each curve onto common checkpoints and aggregate mean/stderr per group.

    Writes ``compare_curves.csv`` (per group and checkpoint), ``compare_final.csv``
    (end-of-budget statistics) and, with ``plot``, ``compare_curves.png``.
    """
    if len(art_dirs) < 2:
        raise CompareError("compare needs at least two artifacts")
    summaries = [load_summary(d) for d in art_dirs]
    env_hashes = {s["env_hash"] for s in summaries}
    if len(env_hashes) != 1:
        raise CompareError("artifacts were trained on different environments")
    metrics = {s["metric"] for s in summaries}
    curves = [load_curve(d, group_by) for d in art_dirs]
    grid = common_grid(curves, points)
    groups: dict[str, list[Curve]] = {}
    for c in curves:
        groups.setdefault(c.group, []).append(c)

    table = []
    reference = None
    agg = {}
    for name, members in groups.items():
        ys = np.stack([np.interp(grid, c.x, c.y) for c in members])
        mean = ys.mean(0)
        err = np.array([stderr(ys[:, i]) for i in range(len(grid))])
        agg[name] = (grid, mean, err)
        if reference is None:
            reference = mean
        for i, x in enumerate(grid):
            table.append({"group": name, "strategy": members[0].strategy, "trajectories_seen": x,
                          "metric_mean": mean[i], "metric_stderr": err[i], "n_seeds": len(members),
                          "diff_vs_reference": mean[i] - reference[i]})

    final = []
    for name, members in groups.items():
        last = np.array([c.y[-1] for c in members])
        final.append({"group": name, "strategy": members[0].strategy, "n_seeds": len(members),
                      "final_mean": float(last.mean()), "final_stderr": stderr(last),
                      "final_median": float(np.median(last)),
                      "seeds": " ".join(str(c.seed) for c in members)})

    result = {"grid": grid, "table": table, "final": final, "aggregates": agg, "metric": metrics.pop()}
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        _write_csv(out / "compare_curves.csv", table)
        _write_csv(out / "compare_final.csv", final)
        if plot:
            from .plotting import plot_curves
            ylabel = "modes discovered" if result["metric"] == "modes" else "L1 to target"
            result["figure"] = plot_curves(agg, out / "compare_curves.png", ylabel)
    return result


def _write_csv(path, rows: list[dict]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(float(v)) if isinstance(v, (float, np.floating)) else v) for k, v in r.items()})


def format_final(final: list[dict], metric: str) -> str:
    head = f"{'group':<32} {'n':>3} {'mean':>10} {'stderr':>10} {'median':>10}"
    lines = [f"final {metric}", head, "-" * len(head)]
    for r in final:
        lines.append(f"{r['group']:<32} {r['n_seeds']:>3} {r['final_mean']:>10.4f} "
                     f"{r['final_stderr']:>10.4f} {r['final_median']:>10.4f}")
    return "\n".join(lines)
