"""Exact and empirical terminal distributions, the L1 metric, and mode discovery."""
from __future__ import annotations

import csv
import itertools
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .environments import ContractViolation, Env
from .nn_core.functional import masked_softmax

NORMALIZATION_TOL = 1e-12


@dataclass
class DistributionTable:
    """Probability vector over terminal ids ``0 .. len(probs) - 1``."""

    probs: np.ndarray

    def __post_init__(self):
        self.probs = np.asarray(self.probs, dtype=np.float64)
        if (self.probs < 0).any():
            raise ValueError("negative probability")

    @property
    def total(self) -> float:
        return float(self.probs.sum())

    def is_normalized(self, tol: float = NORMALIZATION_TOL) -> bool:
        return abs(self.total - 1.0) <= tol

    def __getitem__(self, tid: int) -> float:
        return float(self.probs[tid]) if 0 <= tid < len(self.probs) else 0.0

    def to_csv(self, path, env: Env | None = None) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["state", "probability"])
            for tid, p in enumerate(self.probs):
                w.writerow([env.terminal_label(tid) if env is not None else tid, repr(float(p))])


def _align(p: np.ndarray, q: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    n = max(len(p), len(q))
    return np.pad(p, (0, n - len(p))), np.pad(q, (0, n - len(q)))


def l1_distance(p: DistributionTable, q: DistributionTable) -> float:
    a, b = _align(p.probs, q.probs)
    return float(np.abs(a - b).sum())


def exact_target_distribution(env: Env) -> DistributionTable:
    if not env.spec.enumerable:
        raise ContractViolation("exact target needs an enumerable environment")
    r = env.reward(np.arange(env.num_terminals))
    return DistributionTable(r / r.sum())


def log_partition(env: Env) -> float:
    return float(np.log(env.reward(np.arange(env.num_terminals)).sum()))


def exact_policy_distributions(policy, env: Env | None = None, probs_fn=None) -> np.ndarray:
    """Terminal distribution of every member by forward DP, shape ``(K, num_terminals)``.

    Mass starts at ``s0`` and is pushed level by level through the
    unmodified forward policy. ``probs_fn(states) -> (N, K, l)`` overrides
    the policy (used by tests with hand-built policies).
    """
    env = policy.env if env is None else env
    if not env.spec.enumerable:
        raise ContractViolation("exact policy distribution needs an enumerable environment")
    probs_fn = policy.action_probs_all if probs_fn is None else probs_fn
    mass = None
    term = None
    for level in env.levels():
        p = probs_fn(level)
        if mass is None:
            K = p.shape[1]
            mass = np.zeros((env.num_interior, K))
            term = np.zeros((env.num_terminals, K))
            mass[env.state_key(level)] = 1.0
        m = mass[env.state_key(level)]
        for a in range(p.shape[2]):
            flow = m * p[:, :, a]
            ok = flow.any(1)
            if not ok.any():
                continue
            child = env.step(level[ok], np.full(ok.sum(), a))
            done = env.is_terminal(child)
            if done.any():
                np.add.at(term, env.terminal_ids(child[done]), flow[ok][done])
            if (~done).any():
                np.add.at(mass, env.state_key(child[~done]), flow[ok][~done])
    return term.T.copy()


def exact_policy_distribution(policy, k: int, env: Env | None = None) -> DistributionTable:
    return DistributionTable(exact_policy_distributions(policy, env)[k])


def mixture_distribution(per_member: np.ndarray) -> DistributionTable:
    """Uniform mixture over members, matching how training draws the acting member."""
    return DistributionTable(per_member.mean(0))


def enumerate_trajectories(env: Env):
    """Yield every complete trajectory as ``(rows, actions, terminal_id)``; small environments only."""
    stack = [(env.initial(1)[0], [], [])]
    while stack:
        state, rows, actions = stack.pop()
        valid = env.valid_actions(state[None, :])[0]
        for a in np.nonzero(valid)[0]:
            child = env.step(state[None, :], np.array([a]))[0]
            r, acts = rows + [state], actions + [int(a)]
            if env.is_terminal(child[None, :])[0]:
                yield np.array(r), np.array(acts), int(env.terminal_ids(child[None, :])[0])
            else:
                stack.append((child, r, acts))


def enumeration_distribution(env: Env, probs_fn, k: int = 0) -> DistributionTable:
    """Terminal distribution by summing ``prod P_F`` over every complete trajectory."""
    out = np.zeros(env.num_terminals)
    for rows, actions, tid in enumerate_trajectories(env):
        p = probs_fn(rows)[np.arange(len(actions)), k, actions]
        out[tid] += np.prod(p)
    return DistributionTable(out)


class SampleWindow:
    """FIFO buffer of the most recent ``capacity`` terminal ids."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError("window capacity must be >= 1")
        self.capacity = int(capacity)
        self._buf: deque[int] = deque(maxlen=self.capacity)

    def extend(self, ids) -> None:
        self._buf.extend(int(i) for i in ids)

    def __len__(self) -> int:
        return len(self._buf)

    def contents(self) -> np.ndarray:
        return np.fromiter(self._buf, dtype=np.int64, count=len(self._buf))


def empirical_distribution(window: SampleWindow, env: Env) -> DistributionTable:
    if len(window) == 0:
        raise ContractViolation("empirical distribution of an empty window")
    counts = np.bincount(window.contents(), minlength=env.num_terminals).astype(np.float64)
    return DistributionTable(counts / len(window))


@dataclass
class ModeLedger:
    modes: np.ndarray  # (M, n) bits
    radius: int
    discovered: np.ndarray = field(default=None)
    first_step: np.ndarray = field(default=None)

    def __post_init__(self):
        self.modes = np.asarray(self.modes, dtype=np.int64)
        if self.discovered is None:
            self.discovered = np.zeros(len(self.modes), dtype=bool)
        if self.first_step is None:
            self.first_step = np.full(len(self.modes), -1, dtype=np.int64)

    @property
    def count(self) -> int:
        return int(self.discovered.sum())


def update_modes(ledger: ModeLedger, samples, step: int) -> tuple[ModeLedger, int]:
    """Flag every mode within ``ledger.radius`` Hamming distance of some sample."""
    samples = np.atleast_2d(np.asarray(samples, dtype=np.int64))
    if samples.size == 0:
        return ledger, ledger.count
    if samples.shape[1] != ledger.modes.shape[1]:
        raise ContractViolation(f"sample length {samples.shape[1]} != mode length {ledger.modes.shape[1]}")
    dist = (samples[:, None, :] != ledger.modes[None, :, :]).sum(-1)
    hit = (dist <= ledger.radius).any(0)
    new = hit & ~ledger.discovered
    ledger.discovered |= hit
    ledger.first_step[new] = step
    return ledger, ledger.count


def all_bit_strings(n: int) -> np.ndarray:
    return np.array(list(itertools.product((0, 1), repeat=n)), dtype=np.int64)


def uniform_probs_fn(env: Env, K: int = 1):
    def fn(states):
        valid = env.valid_actions(states)
        return np.repeat(masked_softmax(np.zeros(valid.shape), valid)[:, None, :], K, axis=1)
    return fn
