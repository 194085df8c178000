"""Trajectory-balance loss, bootstrap-masked ensemble updates, and the training loop."""
from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import TrainConfig
from .environments import ContractViolation, Env, GridEnv, SequenceEnv, Trajectory, make_grid_env, \
    make_sequence_env, read_modes
from .evaluation import (ModeLedger, SampleWindow, empirical_distribution, exact_policy_distributions,
                         exact_target_distribution, l1_distance, mixture_distribution, update_modes)
from .nn_core import autodiff as ad
from .nn_core.autodiff import NonFiniteError
from .nn_core.checkpoint import load_checkpoint, save_checkpoint
from .nn_core.optim import AdamState, adam_update, clip_grad_norm
from .nn_core.rng import (STREAM_ACTIONS, STREAM_BOOTSTRAP, STREAM_MEMBERS, RngStream, generator_state,
                          restore_generator)
from .policy import (EnsemblePolicy, EpsilonNoisy, ExplorationStrategy, OnPolicy, Tempering, ThompsonSampling,
                     TrajectoryBatch, batch_from_trajectories, rollout_batch, select_members)

log = logging.getLogger(__name__)

METRIC_COLUMNS = ["step", "trajectories_seen", "loss", "mean_reward", "L1_or_modes", "wall_ms",
                  "mean_length", "exact_l1_mixture", "exact_l1_member0"]


class TrainingAborted(RuntimeError):
    def __init__(self, message: str, diagnostic: dict):
        super().__init__(message)
        self.diagnostic = diagnostic


# ------------------------------------------------------------------- builders


def build_env(config: TrainConfig) -> Env:
    e = config.env
    if e.kind == "grid":
        g = e.grid
        return make_grid_env(g.size, g.n_terms, g.c, g.d, g.beta, g.floor)
    s = e.sequence
    if s.modes_file is not None:
        modes = read_modes(s.modes_file)
        if modes.n != s.length:
            raise ContractViolation(f"modes file has length {modes.n}, config says {s.length}")
        return make_sequence_env(s.length, modes=modes.modes)
    return make_sequence_env(s.length, s.num_modes, s.mode_seed)


def build_strategy(config: TrainConfig) -> ExplorationStrategy:
    s = config.strategy
    return {
        "on_policy": lambda: OnPolicy(),
        "tempering": lambda: Tempering(s.temperature),
        "epsilon_noisy": lambda: EpsilonNoisy(s.epsilon),
        "thompson": lambda: ThompsonSampling(),
    }[s.kind]()


def build_policy(config: TrainConfig, env: Env) -> EnsemblePolicy:
    return EnsemblePolicy(env, config.model.hidden, ensemble_size=config.ensemble.size,
                          prior_weight=config.ensemble.prior_weight,
                          shared_backward=config.ensemble.shared_backward,
                          activation=config.model.activation,
                          prior_width_ratio=config.model.prior_width_ratio, seed=config.seed)


# ----------------------------------------------------------------------- loss


def sample_bootstrap_mask(batch_size: int, K: int, p: float, rng: np.random.Generator) -> np.ndarray:
    """Bernoulli(p) inclusion of each trajectory in each member's loss, shape ``(B, K)``."""
    return rng.random((batch_size, K)) < p


def balance_residuals(policy: EnsemblePolicy, batch: TrajectoryBatch, params=None) -> ad.Tensor:
    """``logZ_k + log P_F(tau | k) - log R(x) - log P_B(tau)`` for every trajectory and member."""
    params = policy.params if params is None else params
    if not np.isfinite(batch.log_rewards).all():
        raise ContractViolation("trajectory reward must be > 0")
    fwd, bwd = policy.trajectory_logprobs(batch, params)
    delta = ad.sub(ad.add(fwd, params["logZ"]), batch.log_rewards[:, None])
    if bwd is not None:
        delta = ad.sub(delta, bwd)
    return delta


def tb_loss(tau: Trajectory, policy: EnsemblePolicy, k: int, log_z: float | None = None) -> float:
    if not tau.reward > 0:
        raise ContractViolation(f"reward must be > 0, got {tau.reward}")
    batch = batch_from_trajectories(policy.env, [tau])
    delta = balance_residuals(policy, batch).data[0, k]
    if log_z is not None:
        delta = delta - policy.params["logZ"][k] + log_z
    if not np.isfinite(delta):
        raise NonFiniteError("trajectory balance residual", delta)
    return float(delta * delta)


def batch_loss(policy: EnsemblePolicy, batch: TrajectoryBatch, mask: np.ndarray, params=None) -> ad.Tensor:
    """Masked TB loss summed over members and averaged over the batch."""
    mask = np.asarray(mask, dtype=np.float64)
    if mask.shape != (batch.size, policy.K):
        raise ValueError(f"mask shape {mask.shape} != {(batch.size, policy.K)}")
    delta = balance_residuals(policy, batch, params)
    return ad.scale(ad.total(ad.mul(ad.square(delta), mask)), 1.0 / batch.size)


def loss_and_grads(policy: EnsemblePolicy, batch: TrajectoryBatch, mask: np.ndarray):
    leaves = policy.params.leaves()
    loss = batch_loss(policy, batch, mask, leaves)
    ad.backward(loss)
    grads = {name: (t.grad if t.grad is not None else np.zeros_like(t.data)) for name, t in leaves.items()}
    return float(loss.data), grads


# ---------------------------------------------------------------------- state


@dataclass
class TrainState:
    config: TrainConfig
    env: Env
    policy: EnsemblePolicy
    strategy: ExplorationStrategy
    adam: AdamState
    rng_actions: np.random.Generator
    rng_members: np.random.Generator
    rng_bootstrap: np.random.Generator
    window: SampleWindow
    ledger: ModeLedger | None
    step: int = 0
    trajectories_seen: int = 0
    wall_ms: float = 0.0
    step_ms: list = field(default_factory=list)
    pending: list = field(default_factory=list)

    @property
    def is_thompson(self) -> bool:
        return isinstance(self.strategy, ThompsonSampling)


def init_state(config: TrainConfig) -> TrainState:
    env = build_env(config)
    policy = build_policy(config, env)
    o = config.optim
    ledger = None
    if isinstance(env, SequenceEnv):
        ledger = ModeLedger(env.mode_array, config.env.sequence.radius)
    return TrainState(
        config=config, env=env, policy=policy, strategy=build_strategy(config),
        adam=AdamState.for_params(policy.params, o.beta1, o.beta2, o.eps),
        rng_actions=RngStream(config.seed, STREAM_ACTIONS).generator(),
        rng_members=RngStream(config.seed, STREAM_MEMBERS).generator(),
        rng_bootstrap=RngStream(config.seed, STREAM_BOOTSTRAP).generator(),
        window=SampleWindow(config.eval.window), ledger=ledger,
    )


def train_step(config: TrainConfig, state: TrainState, batch_size: int | None = None) -> dict:
    """Roll out a batch, mask it per member, take one Adam step; returns step metrics."""
    t0 = time.perf_counter()
    policy = state.policy
    B = config.budget.batch_size if batch_size is None else batch_size
    if state.is_thompson:
        members = select_members(policy.K, B, state.rng_members)
    else:
        members = np.zeros(B, dtype=np.int64)
    batch = rollout_batch(policy, members, state.strategy, state.rng_actions)
    if state.is_thompson:
        mask = sample_bootstrap_mask(B, policy.K, config.ensemble.bootstrap_p, state.rng_bootstrap)
    else:
        mask = np.ones((B, policy.K), dtype=bool)
    try:
        loss, grads = loss_and_grads(policy, batch, mask)
    except (NonFiniteError, FloatingPointError) as exc:
        raise TrainingAborted(str(exc), {"step": state.step, "error": str(exc),
                                         "logZ": policy.params["logZ"].tolist()}) from exc
    if config.optim.grad_clip is not None:
        clip_grad_norm(grads, config.optim.grad_clip)
    try:
        adam_update(policy.params, grads, state.adam, {"model": config.optim.model_lr, "logz": config.optim.logz_lr})
    except NonFiniteError as exc:
        raise TrainingAborted(str(exc), {"step": state.step, "error": str(exc)}) from exc
    state.step += 1
    state.trajectories_seen += B
    if isinstance(state.env, GridEnv) or state.env.spec.enumerable:
        state.window.extend(batch.terminal_ids)
    if state.ledger is not None:
        update_modes(state.ledger, batch.terminal_states[:, 1:], state.step)
    ms = (time.perf_counter() - t0) * 1000.0
    state.wall_ms += ms
    state.step_ms.append(ms)
    lengths = batch.lengths
    metrics = {
        "loss": loss,
        "mean_reward": float(np.exp(batch.log_rewards).mean()),
        "mean_length": float(lengths.mean()),
        "max_length": int(lengths.max()),
        "wall_ms": ms,
        "members": members,
        "terminal_ids": batch.terminal_ids,
    }
    state.pending.append(metrics)
    return metrics


# ----------------------------------------------------------------- evaluation


def evaluate_state(state: TrainState, exact: bool) -> dict:
    out = {}
    env = state.env
    if state.ledger is not None:
        out["L1_or_modes"] = state.ledger.count
    elif len(state.window):
        target = exact_target_distribution(env)
        out["L1_or_modes"] = l1_distance(empirical_distribution(state.window, env), target)
    if exact and env.spec.enumerable:
        target = exact_target_distribution(env)
        per_member = exact_policy_distributions(state.policy)
        out["exact_l1_mixture"] = l1_distance(mixture_distribution(per_member), target)
        out["exact_l1_member0"] = l1_distance(type(target)(per_member[0]), target)
    return out


def _fmt(v) -> str:
    if v is None or v == "":
        return ""
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def metric_row(state: TrainState) -> dict:
    pending = state.pending
    row = {
        "step": state.step,
        "trajectories_seen": state.trajectories_seen,
        "loss": float(np.mean([m["loss"] for m in pending])) if pending else "",
        "mean_reward": float(np.mean([m["mean_reward"] for m in pending])) if pending else "",
        "mean_length": float(np.mean([m["mean_length"] for m in pending])) if pending else "",
        "wall_ms": state.wall_ms,
    }
    row.update(evaluate_state(state, state.config.eval.exact))
    state.pending = []
    return row


# ----------------------------------------------------------------- checkpoints


def checkpoint_state(state: TrainState, path) -> None:
    arrays = {f"param/{k}": v for k, v in state.policy.params.items()}
    arrays.update({f"prior/{k}": v for k, v in state.policy.prior.items()})
    arrays.update({f"adam_m/{k}": v for k, v in state.adam.m.items()})
    arrays.update({f"adam_v/{k}": v for k, v in state.adam.v.items()})
    arrays["window"] = state.window.contents()
    if state.ledger is not None:
        arrays["modes/discovered"] = state.ledger.discovered.astype(np.int64)
        arrays["modes/first_step"] = state.ledger.first_step
    meta = {
        "step": state.step,
        "trajectories_seen": state.trajectories_seen,
        "wall_ms": state.wall_ms,
        "adam_t": state.adam.t,
        "rng": {
            "actions": generator_state(state.rng_actions),
            "members": generator_state(state.rng_members),
            "bootstrap": generator_state(state.rng_bootstrap),
        },
        "config_hash": state.config.content_hash(),
    }
    save_checkpoint(path, arrays, meta)


def restore_state(config: TrainConfig, path) -> TrainState:
    arrays, meta = load_checkpoint(path)
    if meta.get("config_hash") != config.content_hash():
        raise ContractViolation(f"{path} was written by a different configuration")
    state = init_state(config)
    for name in state.policy.params:
        state.policy.params.assign(name, arrays[f"param/{name}"])
        state.adam.m[name][...] = arrays[f"adam_m/{name}"]
        state.adam.v[name][...] = arrays[f"adam_v/{name}"]
    for name in state.policy.prior:
        state.policy.prior.assign(name, arrays[f"prior/{name}"])
    state.adam.t = meta["adam_t"]
    state.step = meta["step"]
    state.trajectories_seen = meta["trajectories_seen"]
    state.wall_ms = meta["wall_ms"]
    state.rng_actions = restore_generator(meta["rng"]["actions"])
    state.rng_members = restore_generator(meta["rng"]["members"])
    state.rng_bootstrap = restore_generator(meta["rng"]["bootstrap"])
    state.window.extend(arrays["window"])
    if state.ledger is not None:
        state.ledger.discovered[:] = arrays["modes/discovered"].astype(bool)
        state.ledger.first_step[:] = arrays["modes/first_step"]
    return state


# ----------------------------------------------------------------------- loop


@dataclass
class RunResult:
    state: TrainState
    rows: list
    aborted: TrainingAborted | None = None


class MetricWriter:
    """Append-only CSV writer; each row is flushed as soon as it is written."""

    def __init__(self, path, append: bool = False):
        self.path = Path(path)
        exists = self.path.exists() and append
        self._fh = open(self.path, "a" if exists else "w", newline="", encoding="utf-8")
        self._w = csv.writer(self._fh)
        if not exists:
            self._w.writerow(METRIC_COLUMNS)
            self._fh.flush()

    def write(self, row: dict) -> None:
        self._w.writerow([_fmt(row.get(c)) for c in METRIC_COLUMNS])
        self._fh.flush()

    def close(self) -> None:
        self._fh.close()


def truncate_metrics(path, max_step: int) -> None:
    """Drop rows past ``max_step`` so a resumed run continues the file cleanly."""
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    keep = [rows[0]] + [r for r in rows[1:] if int(r[0]) <= max_step]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        csv.writer(fh).writerows(keep)


def latest_checkpoint(ckpt_dir) -> Path | None:
    ckpt_dir = Path(ckpt_dir)
    found = sorted(ckpt_dir.glob("step_*.ckpt"), key=lambda p: int(p.stem.split("_")[1]))
    return found[-1] if found else None


def run_training(config: TrainConfig, out_dir=None, resume: bool = False, progress=None) -> RunResult:
    """Loop :func:`train_step` over the budget, writing metric rows and checkpoints under ``out_dir``."""
    out = Path(out_dir) if out_dir is not None else None
    ckpt_dir = out / "checkpoints" if out is not None else None
    state = None
    if out is not None:
        ckpt_dir.mkdir(parents=True, exist_ok=True)
        if resume and (latest := latest_checkpoint(ckpt_dir)) is not None:
            state = restore_state(config, latest)
            truncate_metrics(out / "metrics.csv", state.step)
            log.info("resumed from %s at step %d", latest, state.step)
    if state is None:
        state = init_state(config)
        resume = False
        if ckpt_dir is not None:
            checkpoint_state(state, ckpt_dir / "step_0.ckpt")
    writer = MetricWriter(out / "metrics.csv", append=resume) if out is not None else None
    rows: list[dict] = []
    total = config.num_steps
    every = config.eval.every
    aborted = None
    try:
        while state.step < total:
            remaining = config.budget.total_trajectories - state.trajectories_seen
            train_step(config, state, min(config.budget.batch_size, remaining))
            if state.step % every == 0 or state.step == total:
                row = metric_row(state)
                rows.append(row)
                if writer is not None:
                    writer.write(row)
                if progress is not None:
                    progress(row)
            ck = config.checkpoint.every
            if ckpt_dir is not None and ck and state.step % ck == 0 and state.step != total:
                checkpoint_state(state, ckpt_dir / f"step_{state.step}.ckpt")
    except TrainingAborted as exc:
        aborted = exc
        log.error("training aborted at step %d: %s", state.step, exc)
    finally:
        if writer is not None:
            writer.close()
    if ckpt_dir is not None and aborted is None and state.step > 0:
        checkpoint_state(state, ckpt_dir / f"step_{state.step}.ckpt")
    return RunResult(state, rows, aborted)
