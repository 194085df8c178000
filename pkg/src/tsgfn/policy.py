"""Ensemble forward policy with randomized priors, the shared backward policy, and exploration strategies.

The trunk is an MLP shared by every ensemble member and by the backward
policy; on top of it sit a ``K * l`` forward head and a backward head. A
separate, smaller network frozen at initialization contributes
``prior_weight * prior_logits`` to each member's forward logits.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np

from .environments import ContractViolation, Env, EnvState, Trajectory
from .nn_core import autodiff as ad
from .nn_core.functional import masked_softmax
from .nn_core.mlp import MLPShape, ParamStore, init_params, mlp_apply, mlp_forward
from .nn_core.rng import STREAM_INIT, STREAM_PRIOR_INIT, RngStream


@dataclass(frozen=True)
class OnPolicy:
    name = "on_policy"


@dataclass(frozen=True)
class Tempering:
    temperature: float
    name = "tempering"

    def __post_init__(self):
        if not self.temperature > 0:
            raise ValueError("temperature must be > 0")


@dataclass(frozen=True)
class EpsilonNoisy:
    epsilon: float
    name = "epsilon_noisy"

    def __post_init__(self):
        if not 0.0 <= self.epsilon <= 1.0:
            raise ValueError("epsilon must lie in [0, 1]")


@dataclass(frozen=True)
class ThompsonSampling:
    name = "thompson"


ExplorationStrategy = Union[OnPolicy, Tempering, EpsilonNoisy, ThompsonSampling]

# grid prior logits are cached for every state when the state space is this small
PRIOR_CACHE_LIMIT = 1 << 16


@dataclass
class TrajectoryBatch:
    """A batch of complete trajectories flattened to one row per transition.

    Rows are ordered by trajectory, then by time. ``pb_rows`` indexes the rows
    whose source state is not ``s0``; each such state carries a backward
    policy term for the edge that reached it.
    """

    states: np.ndarray  # (N, w) source state of each transition
    actions: np.ndarray  # (N,)
    valid: np.ndarray  # (N, l)
    traj: np.ndarray  # (N,)
    t: np.ndarray  # (N,)
    terminal_states: np.ndarray  # (B, w)
    terminal_ids: np.ndarray  # (B,)
    log_rewards: np.ndarray  # (B,)
    members: np.ndarray  # (B,)
    pb_rows: np.ndarray
    pb_actions: np.ndarray
    pb_valid: np.ndarray

    @property
    def size(self) -> int:
        return len(self.terminal_ids)

    @property
    def lengths(self) -> np.ndarray:
        return np.bincount(self.traj, minlength=self.size)


def _member_head(h: np.ndarray, W: np.ndarray, b: np.ndarray, members: np.ndarray, K: int) -> np.ndarray:
    """Row ``i`` of ``h`` through the head slice of member ``members[i]``."""
    width = h.shape[1]
    n_act = W.shape[1] // K
    Wk = W.reshape(width, K, n_act)[:, members, :]
    return np.einsum("nh,hnl->nl", h, Wk) + b.reshape(K, n_act)[members]


class BackwardPolicy:
    """Distribution over parents, evaluated from the shared trunk features.

    For tree-shaped environments every state has one parent, so the policy is
    the constant 1 and owns no parameters.
    """

    def __init__(self, num_actions: int, num_heads: int, constant: bool):
        self.num_actions = num_actions
        self.num_heads = num_heads
        self.constant = constant

    @property
    def shared(self) -> bool:
        return self.num_heads == 1


class EnsemblePolicy:
    def __init__(self, env: Env, hidden_dims, ensemble_size: int = 1, prior_weight: float = 0.0,
                 shared_backward: bool = True, activation: str = "leaky_relu",
                 prior_width_ratio: float = 0.5, seed: int = 0):
        if ensemble_size < 1:
            raise ValueError("ensemble_size must be >= 1")
        if prior_weight < 0:
            raise ValueError("prior_weight must be >= 0")
        hidden_dims = tuple(int(h) for h in hidden_dims)
        self.env = env
        self.K = int(ensemble_size)
        self.num_actions = env.spec.max_actions
        self.prior_weight = float(prior_weight)
        self.trunk_shape = MLPShape(env.spec.state_encoding_dim, hidden_dims[:-1], hidden_dims[-1], activation)
        prior_hidden = tuple(max(1, int(round(h * prior_width_ratio))) for h in hidden_dims)
        self.prior_shape = MLPShape(env.spec.state_encoding_dim, prior_hidden[:-1], prior_hidden[-1], activation)
        width = hidden_dims[-1]
        kl = self.K * self.num_actions

        init_rng = RngStream(seed, STREAM_INIT).generator()
        self.params = ParamStore()
        init_params(self.trunk_shape, init_rng, prefix="trunk", store=self.params)
        bound = np.sqrt(1.0 / width)
        self.params.add("head.W", init_rng.uniform(-bound, bound, size=(width, kl)))
        self.params.add("head.b", np.zeros(kl))
        pb_heads = 1 if shared_backward else self.K
        self.backward = BackwardPolicy(env.num_backward_actions, pb_heads, constant=env.tree)
        if not env.tree:
            nb = pb_heads * env.num_backward_actions
            self.params.add("pb.W", init_rng.uniform(-bound, bound, size=(width, nb)))
            self.params.add("pb.b", np.zeros(nb))
        self.params.add("logZ", np.zeros(self.K), group="logz")

        prior_rng = RngStream(seed, STREAM_PRIOR_INIT).generator()
        self.prior = ParamStore()
        init_params(self.prior_shape, prior_rng, prefix="prior.trunk", store=self.prior, group="frozen")
        pbound = np.sqrt(1.0 / prior_hidden[-1])
        self.prior.add("prior.head.W", prior_rng.uniform(-pbound, pbound, size=(prior_hidden[-1], kl)), "frozen")
        self.prior.add("prior.head.b", np.zeros(kl), "frozen")
        self._prior_cache = None
        self._prior_cache_checksum = None

    # ----------------------------------------------------------------- features

    def trunk_features(self, states: np.ndarray, params=None) -> ad.Tensor:
        params = self.params if params is None else params
        return mlp_forward(self.trunk_shape, params, self.env.encode(states), prefix="trunk",
                           final_activation=True)

    def prior_logits(self, states: np.ndarray) -> np.ndarray:
        """Frozen prior output, shape ``(N, K * l)``."""
        if self._uses_prior_cache():
            if self._prior_cache is None:
                every = self.env.all_interior_states()
                table = np.zeros((self.env.num_interior, self.K * self.num_actions))
                table[self.env.state_key(every)] = self._prior_forward(every)
                self._prior_cache = table
            return self._prior_cache[self.env.state_key(states)]
        return self._prior_forward(states)

    def _prior_features(self, states: np.ndarray) -> np.ndarray:
        return mlp_apply(self.prior_shape, self.prior, self.env.encode(states), prefix="prior.trunk",
                         final_activation=True)

    def _prior_forward(self, states: np.ndarray) -> np.ndarray:
        return self._prior_features(states) @ self.prior["prior.head.W"] + self.prior["prior.head.b"]

    def _uses_prior_cache(self) -> bool:
        return self.env.spec.enumerable and self.env.num_interior <= PRIOR_CACHE_LIMIT

    # ------------------------------------------------------------------- logits

    def member_logits(self, states: np.ndarray, members: np.ndarray) -> np.ndarray:
        """Effective logits of member ``members[i]`` at ``states[i]``, shape ``(N, l)``."""
        members = np.asarray(members)
        if members.size and (members.min() < 0 or members.max() >= self.K):
            raise IndexError(f"member index out of range [0, {self.K})")
        h = mlp_apply(self.trunk_shape, self.params, self.env.encode(states), prefix="trunk",
                      final_activation=True)
        out = _member_head(h, self.params["head.W"], self.params["head.b"], members, self.K)
        if self.prior_weight != 0.0:
            if self._uses_prior_cache():
                prior = self.prior_logits(states).reshape(len(states), self.K, self.num_actions)
                prior = prior[np.arange(len(states)), members]
            else:
                prior = _member_head(self._prior_features(states), self.prior["prior.head.W"],
                                     self.prior["prior.head.b"], members, self.K)
            out = out + self.prior_weight * prior
        return out

    def all_logits(self, states: np.ndarray, params=None) -> ad.Tensor:
        """Effective logits of every member, shape ``(N, K, l)``; on the tape when ``params`` are leaves."""
        params = self.params if params is None else params
        h = self.trunk_features(states, params)
        logits = ad.add(ad.matmul(h, params["head.W"]), params["head.b"])
        if self.prior_weight != 0.0:
            logits = ad.add(logits, self.prior_weight * self.prior_logits(states))
        return ad.reshape(logits, (len(states), self.K, self.num_actions))

    def action_probs_all(self, states: np.ndarray) -> np.ndarray:
        """Unmodified ``P_F`` of every member at every state, shape ``(N, K, l)``."""
        valid = self.env.valid_actions(states)
        return masked_softmax(self.all_logits(states).data, valid[:, None, :])

    # ---------------------------------------------------------- log-likelihoods

    def trajectory_logprobs(self, batch: TrajectoryBatch, params=None):
        """Per-trajectory summed log ``P_F`` for every member, and summed log ``P_B``.

        Returns ``(forward (B, K), backward (B, H) or None)`` where ``H`` is the
        number of backward heads; ``None`` means the backward term is exactly 0.
        """
        params = self.params if params is None else params
        B = batch.size
        h = self.trunk_features(batch.states, params)
        logits = ad.add(ad.matmul(h, params["head.W"]), params["head.b"])
        if self.prior_weight != 0.0:
            logits = ad.add(logits, self.prior_weight * self.prior_logits(batch.states))
        logits = ad.reshape(logits, (len(batch.states), self.K, self.num_actions))
        logp = ad.masked_log_softmax(logits, batch.valid[:, None, :])
        taken = ad.take_last(logp, batch.actions)
        fwd = ad.segment_sum(taken, batch.traj, B)
        if self.backward.constant or len(batch.pb_rows) == 0:
            return fwd, None
        hb = ad.rows(h, batch.pb_rows, unique=True)
        nb, heads = self.backward.num_actions, self.backward.num_heads
        pbl = ad.reshape(ad.add(ad.matmul(hb, params["pb.W"]), params["pb.b"]), (len(batch.pb_rows), heads, nb))
        logpb = ad.masked_log_softmax(pbl, batch.pb_valid[:, None, :])
        bwd = ad.segment_sum(ad.take_last(logpb, batch.pb_actions), batch.traj[batch.pb_rows], B)
        return fwd, bwd

    def snapshot_checksum(self) -> str:
        return self.params.checksum()


# ------------------------------------------------------------------ strategies


def behavior_probs(logits: np.ndarray, valid: np.ndarray, strategy: ExplorationStrategy) -> np.ndarray:
    if isinstance(strategy, Tempering):
        return masked_softmax(logits / strategy.temperature, valid)
    probs = masked_softmax(logits, valid)
    if isinstance(strategy, EpsilonNoisy):
        uniform = valid / valid.sum(-1, keepdims=True)
        probs = (1.0 - strategy.epsilon) * probs + strategy.epsilon * uniform
    return probs


def forward_logits(policy: EnsemblePolicy, s: EnvState, k: int) -> np.ndarray:
    if s.is_terminal:
        raise ContractViolation("terminal states have no forward policy")
    if not 0 <= k < policy.K:
        raise IndexError(f"member {k} out of range [0, {policy.K})")
    row = policy.env.from_state(s)[None, :]
    return policy.member_logits(row, np.array([k]))[0]


def action_distribution(policy: EnsemblePolicy, s: EnvState, k: int, strategy: ExplorationStrategy) -> np.ndarray:
    row = policy.env.from_state(s)[None, :]
    valid = policy.env.valid_actions(row)
    return behavior_probs(forward_logits(policy, s, k)[None, :], valid, strategy)[0]


def select_member(K: int, rng: np.random.Generator) -> int:
    return 0 if K == 1 else int(rng.integers(K))


def select_members(K: int, n: int, rng: np.random.Generator) -> np.ndarray:
    if K == 1:
        return np.zeros(n, dtype=np.int64)
    return rng.integers(K, size=n).astype(np.int64)


def inverse_cdf(probs: np.ndarray, u: np.ndarray, valid: np.ndarray) -> np.ndarray:
    cdf = np.cumsum(probs, axis=-1)
    a = (cdf <= (u * cdf[:, -1])[:, None]).sum(-1)
    # rounding can push past the end; fall back to the last valid action
    last_valid = valid.shape[1] - 1 - np.argmax(valid[:, ::-1], axis=1)
    return np.minimum(a, last_valid)


def rollout_batch(policy: EnsemblePolicy, members, strategy: ExplorationStrategy,
                  rng: np.random.Generator) -> TrajectoryBatch:
    """Sample one complete trajectory per entry of ``members`` with the behavior policy.

    One uniform is drawn per unfinished trajectory per step, in row order.
    """
    env = policy.env
    members = np.asarray(members, dtype=np.int64)
    B = len(members)
    states = env.initial(B)
    active = np.arange(B)
    rec_s, rec_a, rec_v, rec_b, rec_t = [], [], [], [], []
    t = 0
    while len(active):
        st = states[active]
        valid = env.valid_actions(st)
        probs = behavior_probs(policy.member_logits(st, members[active]), valid, strategy)
        if not np.isfinite(probs).all():
            raise FloatingPointError("non-finite action probabilities during rollout")
        a = inverse_cdf(probs, rng.random(len(active)), valid)
        rec_s.append(st)
        rec_a.append(a)
        rec_v.append(valid)
        rec_b.append(active)
        rec_t.append(np.full(len(active), t))
        nxt = env.step(st, a)
        states[active] = nxt
        active = active[~env.is_terminal(nxt)]
        t += 1
    return _assemble(env, states, members, np.concatenate(rec_s), np.concatenate(rec_a),
                     np.concatenate(rec_v), np.concatenate(rec_b), np.concatenate(rec_t))


def _assemble(env, terminal_states, members, s, a, v, b, t) -> TrajectoryBatch:
    order = np.lexsort((t, b))
    s, a, v, b, t = s[order], a[order], v[order], b[order], t[order]
    pb_rows = np.nonzero(t > 0)[0]
    pb_actions = env.backward_action(a[pb_rows - 1]) if len(pb_rows) else np.zeros(0, dtype=np.int64)
    pb_valid = env.backward_mask(s[pb_rows])
    ids = env.terminal_ids(terminal_states)
    return TrajectoryBatch(s, a, v, b, t, terminal_states, ids, env.log_reward_states(terminal_states), members,
                           pb_rows, pb_actions, pb_valid)


def batch_from_trajectories(env, trajectories: list[Trajectory]) -> TrajectoryBatch:
    s, a, b, t = [], [], [], []
    terms, members = [], []
    for i, tau in enumerate(trajectories):
        for j, (state, action) in enumerate(tau.steps):
            s.append(env.from_state(state))
            a.append(action)
            b.append(i)
            t.append(j)
        terms.append(env.from_state(tau.terminal_state))
        members.append(-1 if tau.member is None else tau.member)
    s = np.array(s, dtype=np.int64).reshape(len(s), env.state_width)
    v = env.valid_actions(s)
    a = np.array(a, dtype=np.int64)
    if not v[np.arange(len(a)), a].all():
        raise ContractViolation("trajectory takes an invalid action")
    return _assemble(env, np.array(terms, dtype=np.int64), np.array(members, dtype=np.int64), s, a, v,
                     np.array(b, dtype=np.int64), np.array(t, dtype=np.int64))


def to_trajectories(env, batch: TrajectoryBatch) -> list[Trajectory]:
    out = []
    starts = np.searchsorted(batch.traj, np.arange(batch.size + 1))
    for i in range(batch.size):
        rows = range(starts[i], starts[i + 1])
        steps = [(env.to_state(batch.states[r]), int(batch.actions[r])) for r in rows]
        term = env.to_state(batch.terminal_states[i])
        m = int(batch.members[i])
        out.append(Trajectory(steps, term, float(np.exp(batch.log_rewards[i])), None if m < 0 else m,
                              float(batch.log_rewards[i])))
    return out


def rollout(policy: EnsemblePolicy, k: int, strategy: ExplorationStrategy, rng: np.random.Generator,
            record_member: bool = True) -> Trajectory:
    batch = rollout_batch(policy, np.array([k]), strategy, rng)
    tau = to_trajectories(policy.env, batch)[0]
    if not record_member:
        tau.member = None
    return tau


def forward_logprob(policy: EnsemblePolicy, tau: Trajectory, k: int) -> float:
    if not 0 <= k < policy.K:
        raise IndexError(f"member {k} out of range [0, {policy.K})")
    batch = batch_from_trajectories(policy.env, [tau])
    probs = policy.action_probs_all(batch.states)[np.arange(len(batch.actions)), k, batch.actions]
    if (probs == 0).any():
        raise ContractViolation("trajectory takes an action of probability zero")
    fwd, _ = policy.trajectory_logprobs(batch)
    return float(fwd.data[0, k])


def backward_logprob(policy: EnsemblePolicy, tau: Trajectory, k: int = 0) -> float:
    """Summed log ``P_B`` along ``tau``; ``k`` only matters for per-member backward heads."""
    if policy.backward.constant:
        return 0.0
    batch = batch_from_trajectories(policy.env, [tau])
    _, bwd = policy.trajectory_logprobs(batch)
    if bwd is None:
        return 0.0
    return float(bwd.data[0, 0 if policy.backward.shared else k])
