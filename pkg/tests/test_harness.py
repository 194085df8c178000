import csv
import json

import numpy as np
import pytest
import yaml

from tsgfn.cli import main
from tsgfn.config import ConfigError, load_run_config, make_run_config, make_train_config, preset_names
from tsgfn.harness import (ArtifactError, CompareError, compare, evaluate_artifact, expand, load_summary,
                           metrics_hash, run_sweep, train_artifact, validate_sweep_spec)
from tsgfn.harness.compare import stderr

TINY = {"env": {"grid": {"size": 3, "n_terms": 20}}, "model": {"hidden": [8]},
        "budget": {"batch_size": 4, "total_trajectories": 80}, "eval": {"every": 5, "window": 200}}
TINY_DOTTED = {"env.grid.size": 3, "env.grid.n_terms": 20, "model.hidden": [8], "budget.batch_size": 4,
               "budget.total_trajectories": 80, "eval.every": 5, "eval.window": 200}


def write_config(tmp_path, name="run.yaml", **extra):
    data = {"preset": "grid-onpolicy-desk", "label": "tiny", **TINY, **extra}
    path = tmp_path / name
    path.write_text(yaml.safe_dump(data, sort_keys=False), encoding="utf-8")
    return path


# ------------------------------------------------------------------ config


def test_every_preset_resolves():
    for name in preset_names():
        if name != "defaults":
            make_run_config(preset=name)


def test_paper_presets_carry_reported_values():
    g = make_train_config("grid-ts-paper")
    assert (g.optim.model_lr, g.optim.logz_lr) == (0.00266, 0.0976)
    assert (g.ensemble.size, g.ensemble.bootstrap_p, g.ensemble.prior_weight) == (100, 0.274, 12.03)
    assert g.env.grid.size == 64 and g.budget.batch_size == 64
    s = make_train_config("seq-ts-paper")
    assert (s.ensemble.size, s.ensemble.prior_weight, s.ensemble.bootstrap_p) == (50, 4.0, 0.75)
    assert s.env.sequence.length == 120 and s.budget.batch_size == 16


def test_unknown_key_rejected():
    with pytest.raises(ConfigError) as info:
        make_run_config({"optim": {"lr": 0.1}})
    assert any("optim.lr" in p for p in info.value.problems)


@pytest.mark.parametrize("over", [{"budget.batch_size": 0}, {"strategy.kind": "greedy"},
                                  {"ensemble.bootstrap_p": 1.5}, {"model.hidden": "wide"}])
def test_invalid_values_rejected(over):
    with pytest.raises(ConfigError):
        make_run_config(preset="grid-ts-desk", **{k.replace(".", "__"): v for k, v in over.items()})


def test_user_keys_override_preset(tmp_path):
    run = load_run_config(write_config(tmp_path, optim={"model_lr": 0.005}))
    assert run.train.optim.model_lr == 0.005
    assert run.train.strategy.kind == "on_policy" and run.label == "tiny"


def test_content_hash_stable():
    a = make_train_config("grid-ts-desk")
    assert a.content_hash() == make_train_config("grid-ts-desk").content_hash()
    assert a.content_hash() != make_train_config("grid-ts-desk", seed=1).content_hash()
    assert a.env_hash() == make_train_config("grid-ts-desk", seed=1).env_hash()


# ---------------------------------------------------------------- artifacts


def test_artifact_layout(tmp_path):
    path = write_config(tmp_path)
    run = load_run_config(path)
    art, summary = train_artifact(run, path.read_bytes(), root=tmp_path / "out")
    assert (art / "config.yaml").read_bytes() == path.read_bytes()
    for name in ["metrics.csv", "summary.json", "resolved_config.json", "distribution_target.csv",
                 "distribution_empirical.csv"]:
        assert (art / name).exists(), name
    assert summary["status"] == "ok" and summary["steps"] == 20
    assert load_summary(art) == json.loads((art / "summary.json").read_text())
    with pytest.raises(ArtifactError):
        train_artifact(run, root=tmp_path / "out")


def test_metrics_hash_deterministic(tmp_path):
    run = load_run_config(write_config(tmp_path))
    a, _ = train_artifact(run, root=tmp_path / "a")
    b, _ = train_artifact(run, root=tmp_path / "b")
    assert metrics_hash(a / "metrics.csv") == metrics_hash(b / "metrics.csv")


def test_evaluate_artifact(tmp_path):
    run = load_run_config(write_config(tmp_path))
    art, _ = train_artifact(run, root=tmp_path)
    out = evaluate_artifact(art, exact=True, samples=2000, plot=False)
    assert 0.0 <= out["exact_l1_mixture"] <= 2.0
    assert 0.0 <= out["sampled_l1"] <= 2.0


# ------------------------------------------------------------------ compare


def test_stderr_known_values():
    assert stderr(np.array([2.0, 4.0, 4.0, 4.0, 6.0])) == pytest.approx(np.sqrt(2.0) / np.sqrt(5), rel=1e-15)
    assert stderr(np.array([3.0])) == 0.0


def test_compare_identical_artifacts(tmp_path):
    run = load_run_config(write_config(tmp_path))
    a, _ = train_artifact(run, root=tmp_path, name="a")
    b, _ = train_artifact(run, root=tmp_path, name="b")
    res = compare([a, b], tmp_path / "cmp", points=10, group_by="artifact", plot=False)
    assert all(r["diff_vs_reference"] == 0.0 for r in res["table"])
    with open(tmp_path / "cmp" / "compare_final.csv", newline="") as fh:
        final = list(csv.DictReader(fh))
    assert final[0]["final_mean"] == final[1]["final_mean"]


def test_compare_rejects_different_environments(tmp_path):
    a, _ = train_artifact(load_run_config(write_config(tmp_path)), root=tmp_path, name="a")
    other = load_run_config(write_config(tmp_path, name="b.yaml", env={"grid": {"size": 4, "n_terms": 20}}))
    b, _ = train_artifact(other, root=tmp_path, name="b")
    with pytest.raises(CompareError):
        compare([a, b], plot=False)
    with pytest.raises(CompareError):
        compare([a], plot=False)


# -------------------------------------------------------------------- sweep


def sweep_spec(**extra):
    return validate_sweep_spec({"label": "sw", "base": "grid-onpolicy-desk", "overrides": TINY_DOTTED, **extra})


def test_sweep_two_by_two(tmp_path):
    spec = sweep_spec(seeds=[0, 1], grid={"optim.model_lr": [1e-3, 1e-2]})
    root, board = run_sweep(spec, root=tmp_path)
    assert len(board) == 4 and all(r["status"] == "ok" for r in board)
    assert sorted(p.name for p in root.iterdir() if p.is_dir()) == ["sw-c0-s0", "sw-c0-s1", "sw-c1-s0", "sw-c1-s1"]
    l1 = [r["final_metric"] for r in board]
    assert l1 == sorted(l1)
    assert (root / "leaderboard.csv").exists()


def test_sweep_single_run_equals_train(tmp_path):
    root, _ = run_sweep(sweep_spec(seeds=[0]), root=tmp_path / "sweep")
    run = make_run_config({"preset": "grid-onpolicy-desk"}, **{k.replace(".", "__"): v for k, v in TINY_DOTTED.items()})
    art, _ = train_artifact(run, root=tmp_path / "train")
    assert metrics_hash(root / "sw-c0-s0" / "metrics.csv") == metrics_hash(art / "metrics.csv")


def test_epsilon_candidates_expressible():
    spec = validate_sweep_spec({"base": "grid-eps-desk", "seeds": [0, 1, 2],
                                "grid": {"strategy.epsilon": [0.01, 0.005, 0.001, 0.0005]}})
    runs = expand(spec)
    assert len(runs) == 12
    assert {ov["strategy.epsilon"] for _, _, ov in runs} == {0.01, 0.005, 0.001, 0.0005}
    # seeds of one combination share a group label
    assert len({g for g, _, _ in runs}) == 4


def test_failed_run_is_recorded(tmp_path):
    spec = sweep_spec(grid={"ensemble.bootstrap_p": [0.5, 7.0]})
    _, board = run_sweep(spec, root=tmp_path)
    assert [r["status"] for r in board] == ["ok", "failed"]
    assert board[1]["error"]


def test_bad_sweep_spec():
    with pytest.raises(ConfigError):
        validate_sweep_spec({"base": "x", "grid": {"a": 3}})
    with pytest.raises(ConfigError):
        validate_sweep_spec({"grid": {}, "colour": 1})


# ---------------------------------------------------------------------- CLI


def test_cli_train_eval_compare(tmp_path, capsys):
    path = write_config(tmp_path)
    assert main(["train", str(path), "--output-root", str(tmp_path / "o")]) == 0
    art = tmp_path / "o" / "tiny"
    assert main(["eval", str(art), "--exact", "--samples", "500", "--no-plot"]) == 0
    assert main(["train", str(path), "--output-root", str(tmp_path / "o"), "--set", "label=tiny2"]) == 0
    assert main(["compare", str(art), str(tmp_path / "o" / "tiny2"), "--no-plot", "--group-by", "artifact"]) == 0
    assert (tmp_path / "o" / "compare" / "compare_final.csv").exists()


def test_cli_budget_zero(tmp_path):
    path = write_config(tmp_path, budget={"batch_size": 4, "total_trajectories": 0})
    assert main(["train", str(path), "--output-root", str(tmp_path)]) == 0
    with open(tmp_path / "tiny" / "metrics.csv", newline="") as fh:
        assert len(list(csv.reader(fh))) == 1


def test_cli_output_root_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("TSGFN_OUTPUT_ROOT", str(tmp_path / "env-root"))
    assert main(["train", "--preset", "grid-onpolicy-desk", "--label", "p",
                 *sum((["--set", f"{k}={v}"] for k, v in TINY_DOTTED.items()), [])]) == 0
    assert (tmp_path / "env-root" / "p" / "summary.json").exists()


def test_cli_exit_codes(tmp_path, capsys):
    bad = tmp_path / "bad.yaml"
    bad.write_text("preset: grid-ts-desk\nmodle: {}\n", encoding="utf-8")
    assert main(["train", str(bad), "--output-root", str(tmp_path)]) == 1
    assert "modle" in capsys.readouterr().err
    assert main(["train", str(tmp_path / "missing.yaml")]) == 1
    path = write_config(tmp_path)
    assert main(["train", str(path), "--output-root", str(tmp_path)]) == 0
    assert main(["train", str(path), "--output-root", str(tmp_path)]) == 2
    assert main(["eval", str(tmp_path / "nowhere")]) == 2
    assert main(["compare", str(tmp_path / "tiny")]) == 2


def test_cli_aborted_run_exits_2(tmp_path, monkeypatch):
    import tsgfn.training as training
    real = training.loss_and_grads
    calls = []

    def poisoned(policy, batch, mask):
        calls.append(1)
        loss, grads = real(policy, batch, mask)
        if len(calls) == 8:
            grads["logZ"][:] = np.nan
        return loss, grads

    monkeypatch.setattr(training, "loss_and_grads", poisoned)
    path = write_config(tmp_path)
    assert main(["train", str(path), "--output-root", str(tmp_path)]) == 2
    summary = json.loads((tmp_path / "tiny" / "summary.json").read_text())
    assert summary["status"] == "aborted" and summary["abort"]["step"] == 7
    # rows written before the abort survive
    assert summary["steps"] == 5


def test_cli_sweep(tmp_path):
    spec = tmp_path / "sweep.yaml"
    spec.write_text(yaml.safe_dump({"label": "s", "base": "grid-onpolicy-desk", "overrides": TINY_DOTTED,
                                    "grid": {"budget.batch_size": [2, 4]}}), encoding="utf-8")
    assert main(["sweep", str(spec), "--output-root", str(tmp_path)]) == 0
    assert (tmp_path / "s" / "leaderboard.csv").exists()
