"""DAG environments: the hypergrid with a truncated-Fourier reward and fixed-length bit sequences.

Each environment exposes two faces. The scalar functions (``grid_children``,
``fourier_reward``, ``seq_children`` ...) work on small immutable state objects
and are what the tests enumerate exhaustively. The :class:`GridEnv` and
:class:`SequenceEnv` classes hold the same rules in vectorized form over
integer state arrays, which is what rollouts and the DP oracle use.

Batch state layouts:

* grid: ``int64[B, 3]`` with columns ``(x1, x2, done)``
* sequences: ``int64[B, n + 1]``, column 0 is the prefix length and columns
  ``1..n`` hold the bits, ``-1`` for empty slots
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence, Union

import numpy as np


class ContractViolation(ValueError):
    """Raised when an operation is called outside its precondition."""


GRID_INC_X1 = 0
GRID_INC_X2 = 1
GRID_TERMINATE = 2


@dataclass(frozen=True)
class EnvSpec:
    max_actions: int
    state_encoding_dim: int
    enumerable: bool


@dataclass(frozen=True)
class GridState:
    x1: int
    x2: int
    is_terminal: bool = False

    @property
    def coords(self) -> tuple[int, int]:
        return (self.x1, self.x2)


@dataclass(frozen=True)
class SeqState:
    prefix: str
    n: int

    @property
    def is_terminal(self) -> bool:
        return len(self.prefix) == self.n


EnvState = Union[GridState, SeqState]


@dataclass(frozen=True)
class FourierRewardParams:
    size: int
    a1: np.ndarray
    a2: np.ndarray
    b1: np.ndarray
    b2: np.ndarray
    c: float = -0.5
    d: float = 0.5
    beta: float = 1.5
    floor: float = 1e-8

    def __post_init__(self):
        if not self.c < self.d:
            raise ContractViolation(f"need c < d, got c={self.c}, d={self.d}")
        if len(self.a1) < 1:
            raise ContractViolation("n_terms must be >= 1")
        if not (len(self.a1) == len(self.a2) == len(self.b1) == len(self.b2)):
            raise ContractViolation("coefficient arrays must share length")
        if self.beta <= 0 or self.floor <= 0:
            raise ContractViolation("beta and floor must be positive")

    @property
    def n_terms(self) -> int:
        return len(self.a1)

    @classmethod
    def default(cls, size: int = 64, n_terms: int = 1000, c: float = -0.5, d: float = 0.5,
                beta: float = 1.5, floor: float = 1e-8) -> "FourierRewardParams":
        """All four coefficient families set to ``4k / n_terms`` for ``k = 1..n_terms``."""
        k = np.arange(1, n_terms + 1, dtype=np.float64)
        coef = 4.0 * k / n_terms
        return cls(size, coef, coef.copy(), coef.copy(), coef.copy(), c, d, beta, floor)


@dataclass(frozen=True)
class ModeRewardParams:
    modes: tuple[str, ...]
    n: int

    def __post_init__(self):
        if len(self.modes) < 1:
            raise ContractViolation("mode set must be non-empty")
        if len(set(self.modes)) != len(self.modes):
            raise ContractViolation("modes must be distinct")
        for m in self.modes:
            if len(m) != self.n or set(m) - {"0", "1"}:
                raise ContractViolation(f"mode {m!r} is not a bit string of length {self.n}")

    def as_array(self) -> np.ndarray:
        return np.array([[int(ch) for ch in m] for m in self.modes], dtype=np.int64)


@dataclass
class Trajectory:
    """A complete path ``s0 -> ... -> terminal``; ``steps`` holds ``(state, action)`` pairs."""

    steps: list[tuple[EnvState, int]]
    terminal_state: EnvState
    reward: float
    member: int | None = None
    log_reward: float = field(default=float("nan"), repr=False)

    def __len__(self) -> int:
        return len(self.steps)


# --------------------------------------------------------------------------- grid


def grid_children(s: GridState, H: int) -> list[tuple[int, GridState]]:
    if s.is_terminal:
        raise ContractViolation(f"terminal state {s} has no children")
    out = []
    if s.x1 + 1 <= H - 1:
        out.append((GRID_INC_X1, GridState(s.x1 + 1, s.x2)))
    if s.x2 + 1 <= H - 1:
        out.append((GRID_INC_X2, GridState(s.x1, s.x2 + 1)))
    out.append((GRID_TERMINATE, GridState(s.x1, s.x2, True)))
    return out


def grid_parents(s: GridState) -> list[tuple[int, GridState]]:
    """Parents of ``s``, each tagged with the forward action that leads from it to ``s``."""
    if s.is_terminal:
        return [(GRID_TERMINATE, GridState(s.x1, s.x2))]
    if s.x1 == 0 and s.x2 == 0:
        raise ContractViolation("the initial state has no parents")
    out = []
    if s.x1 > 0:
        out.append((GRID_INC_X1, GridState(s.x1 - 1, s.x2)))
    if s.x2 > 0:
        out.append((GRID_INC_X2, GridState(s.x1, s.x2 - 1)))
    return out


def coordinate_map_g(x, params: FourierRewardParams):
    return x * (params.d - params.c) / params.size + params.c


def _fourier_axis_sum(g: np.ndarray, cos_coef: np.ndarray, sin_coef: np.ndarray) -> np.ndarray:
    g = np.asarray(g, dtype=np.float64)
    return (np.cos(2 * np.pi * np.multiply.outer(g, cos_coef)).sum(-1)
            + np.sin(2 * np.pi * np.multiply.outer(g, sin_coef)).sum(-1))


def fourier_raw_table(params: FourierRewardParams) -> np.ndarray:
    """Unclamped series value at every cell, shape ``(H, H)`` indexed ``[x1, x2]``."""
    g = coordinate_map_g(np.arange(params.size, dtype=np.float64), params)
    along_x1 = _fourier_axis_sum(g, params.a1, params.a2)
    along_x2 = _fourier_axis_sum(g, params.b1, params.b2)
    return along_x1[:, None] + along_x2[None, :]


def fourier_reward(s: GridState, params: FourierRewardParams) -> float:
    if not s.is_terminal:
        raise ContractViolation("reward is only defined on terminal states")
    g1 = coordinate_map_g(float(s.x1), params)
    g2 = coordinate_map_g(float(s.x2), params)
    raw = float(_fourier_axis_sum(g1, params.a1, params.a2) + _fourier_axis_sum(g2, params.b1, params.b2))
    return max(raw, params.floor) ** params.beta


# ----------------------------------------------------------------------- sequences


def seq_children(s: SeqState) -> list[tuple[int, SeqState]]:
    if s.is_terminal:
        raise ContractViolation(f"complete sequence {s.prefix!r} has no children")
    return [(0, SeqState(s.prefix + "0", s.n)), (1, SeqState(s.prefix + "1", s.n))]


def seq_parents(s: SeqState) -> list[tuple[int, SeqState]]:
    if not s.prefix:
        raise ContractViolation("the empty prefix has no parents")
    return [(int(s.prefix[-1]), SeqState(s.prefix[:-1], s.n))]


def hamming_distance(x: str, y: str) -> int:
    return sum(a != b for a, b in zip(x, y))


def hamming_reward(x: str, params: ModeRewardParams) -> float:
    if len(x) != params.n:
        raise ContractViolation(f"sequence length {len(x)} != {params.n}")
    dmin = min(hamming_distance(x, m) for m in params.modes)
    return math.exp(1.0 - dmin / params.n)


def sample_mode_set(num_modes: int, n: int, seed: int) -> ModeRewardParams:
    if num_modes > 2 ** n:
        raise ContractViolation(f"cannot draw {num_modes} distinct strings of length {n}")
    rng = np.random.default_rng(seed)
    modes: list[str] = []
    seen = set()
    while len(modes) < num_modes:
        bits = "".join(str(b) for b in rng.integers(0, 2, size=n))
        if bits not in seen:
            seen.add(bits)
            modes.append(bits)
    return ModeRewardParams(tuple(modes), n)


def write_modes(path, params: ModeRewardParams) -> None:
    Path(path).write_text("".join(m + "\n" for m in params.modes), encoding="utf-8")


def read_modes(path) -> ModeRewardParams:
    lines = [ln.strip() for ln in Path(path).read_text(encoding="utf-8").splitlines()]
    modes = tuple(ln for ln in lines if ln)
    if not modes:
        raise ContractViolation(f"no modes in {path}")
    return ModeRewardParams(modes, len(modes[0]))


# ------------------------------------------------------------------- encodings


def encode_state(s: EnvState, spec_or_env) -> np.ndarray:
    env = spec_or_env
    if s.is_terminal:
        raise ContractViolation("terminal states are never fed to the policy")
    return env.encode(env.from_state(s)[None, :])[0]


# ------------------------------------------------------------ vectorized envs


class GridEnv:
    """H x H grid, start (0, 0), actions: increment x1, increment x2, terminate."""

    tree = False
    num_backward_actions = 2

    def __init__(self, params: FourierRewardParams):
        self.params = params
        self.H = params.size
        self.spec = EnvSpec(max_actions=3, state_encoding_dim=2 * self.H, enumerable=True)
        raw = fourier_raw_table(params)
        self.log_reward_table = params.beta * np.log(np.maximum(raw, params.floor)).ravel()
        self.reward_table = np.exp(self.log_reward_table)

    # state plumbing
    @property
    def state_width(self) -> int:
        return 3

    @property
    def num_terminals(self) -> int:
        return self.H * self.H

    @property
    def num_interior(self) -> int:
        return self.H * self.H

    def initial(self, batch: int) -> np.ndarray:
        return np.zeros((batch, 3), dtype=np.int64)

    def is_terminal(self, states: np.ndarray) -> np.ndarray:
        return states[:, 2] == 1

    def valid_actions(self, states: np.ndarray) -> np.ndarray:
        mask = np.ones((len(states), 3), dtype=bool)
        mask[:, 0] = states[:, 0] < self.H - 1
        mask[:, 1] = states[:, 1] < self.H - 1
        return mask

    def step(self, states: np.ndarray, actions: np.ndarray) -> np.ndarray:
        out = states.copy()
        out[:, 0] += actions == GRID_INC_X1
        out[:, 1] += actions == GRID_INC_X2
        out[:, 2] = actions == GRID_TERMINATE
        return out

    def encode(self, states: np.ndarray) -> np.ndarray:
        n = len(states)
        x = np.zeros((n, 2 * self.H))
        rows = np.arange(n)
        x[rows, states[:, 0]] = 1.0
        x[rows, self.H + states[:, 1]] = 1.0
        return x

    def one_hot_columns(self, states: np.ndarray) -> np.ndarray:
        """Column indices of the ones in :meth:`encode`, shape ``(B, 2)``."""
        return np.stack([states[:, 0], self.H + states[:, 1]], axis=1)

    def state_key(self, states: np.ndarray) -> np.ndarray:
        return states[:, 0] * self.H + states[:, 1]

    def terminal_ids(self, states: np.ndarray) -> np.ndarray:
        return states[:, 0] * self.H + states[:, 1]

    def log_reward(self, terminal_ids: np.ndarray) -> np.ndarray:
        return self.log_reward_table[terminal_ids]

    def log_reward_states(self, terminal_states: np.ndarray) -> np.ndarray:
        return self.log_reward_table[self.terminal_ids(terminal_states)]

    def reward(self, terminal_ids: np.ndarray) -> np.ndarray:
        return self.reward_table[terminal_ids]

    def backward_mask(self, states: np.ndarray) -> np.ndarray:
        return np.stack([states[:, 0] > 0, states[:, 1] > 0], axis=1)

    def backward_action(self, forward_actions: np.ndarray) -> np.ndarray:
        # undoing "increment x_i" is "decrement x_i"; same index
        return forward_actions

    def levels(self):
        """Interior states grouped by ``x1 + x2``, a topological order of the DAG."""
        H = self.H
        for s in range(2 * H - 1):
            x1 = np.arange(max(0, s - H + 1), min(s, H - 1) + 1)
            st = np.zeros((len(x1), 3), dtype=np.int64)
            st[:, 0] = x1
            st[:, 1] = s - x1
            yield st

    def all_interior_states(self) -> np.ndarray:
        return np.concatenate(list(self.levels()))

    # object conversion
    def to_state(self, row) -> GridState:
        return GridState(int(row[0]), int(row[1]), bool(row[2]))

    def from_state(self, s: GridState) -> np.ndarray:
        return np.array([s.x1, s.x2, int(s.is_terminal)], dtype=np.int64)

    def terminal_from_id(self, tid: int) -> GridState:
        return GridState(int(tid) // self.H, int(tid) % self.H, True)

    def terminal_label(self, tid: int) -> str:
        x1, x2 = divmod(int(tid), self.H)
        return f"{x1}:{x2}"

    def children(self, s: GridState):
        return grid_children(s, self.H)

    def parents(self, s: GridState):
        return grid_parents(s)

    def reward_of(self, s: GridState) -> float:
        return fourier_reward(s, self.params)


class SequenceEnv:
    """Append one bit per step until length ``n``; rewards by Hamming distance to a mode set."""

    tree = True
    num_backward_actions = 1
    max_enumerable_length = 16

    def __init__(self, modes: ModeRewardParams):
        self.modes = modes
        self.n = modes.n
        self.mode_array = modes.as_array()
        self.spec = EnvSpec(max_actions=2, state_encoding_dim=3 * self.n,
                            enumerable=self.n <= self.max_enumerable_length)
        self._pow = (1 << np.arange(self.n - 1, -1, -1)).astype(np.int64) if self.n < 63 else None

    @property
    def state_width(self) -> int:
        return self.n + 1

    @property
    def num_terminals(self) -> int:
        self._require_enumerable()
        return 1 << self.n

    @property
    def num_interior(self) -> int:
        self._require_enumerable()
        return (1 << self.n) - 1

    def _require_enumerable(self):
        if not self.spec.enumerable:
            raise ContractViolation(f"sequence length {self.n} is too large to enumerate")

    def initial(self, batch: int) -> np.ndarray:
        st = np.full((batch, self.n + 1), -1, dtype=np.int64)
        st[:, 0] = 0
        return st

    def is_terminal(self, states: np.ndarray) -> np.ndarray:
        return states[:, 0] == self.n

    def valid_actions(self, states: np.ndarray) -> np.ndarray:
        return np.ones((len(states), 2), dtype=bool)

    def step(self, states: np.ndarray, actions: np.ndarray) -> np.ndarray:
        out = states.copy()
        rows = np.arange(len(states))
        out[rows, 1 + states[:, 0]] = actions
        out[:, 0] += 1
        return out

    def encode(self, states: np.ndarray) -> np.ndarray:
        bits = states[:, 1:]
        slot = np.where(bits < 0, 2, bits)
        x = np.zeros((len(states), self.n, 3))
        np.put_along_axis(x, slot[:, :, None], 1.0, axis=2)
        return x.reshape(len(states), 3 * self.n)

    def one_hot_columns(self, states: np.ndarray) -> np.ndarray:
        bits = states[:, 1:]
        slot = np.where(bits < 0, 2, bits)
        return 3 * np.arange(self.n)[None, :] + slot

    def state_key(self, states: np.ndarray) -> np.ndarray:
        # heap numbering: prefix of length L with value v -> 2^L - 1 + v
        self._require_enumerable()
        length = states[:, 0]
        bits = np.where(states[:, 1:] < 0, 0, states[:, 1:])
        val = bits @ self._pow
        return (1 << length) - 1 + (val >> (self.n - length))

    def terminal_ids(self, states: np.ndarray) -> np.ndarray:
        if self._pow is None:
            # too long for an integer id; sequences are tracked by mode discovery instead
            return np.full(len(states), -1, dtype=np.int64)
        return states[:, 1:] @ self._pow

    def log_reward_states(self, terminal_states: np.ndarray) -> np.ndarray:
        return 1.0 - self.distances(terminal_states[:, 1:]).min(1) / self.n

    def distances(self, bits: np.ndarray) -> np.ndarray:
        """Hamming distance from each row of ``bits`` to each mode, shape ``(B, |M|)``."""
        return (bits[:, None, :] != self.mode_array[None, :, :]).sum(-1)

    def _ids_to_bits(self, ids: np.ndarray) -> np.ndarray:
        return (np.asarray(ids)[:, None] >> np.arange(self.n - 1, -1, -1)[None, :]) & 1

    def log_reward(self, terminal_ids: np.ndarray) -> np.ndarray:
        bits = self._ids_to_bits(terminal_ids)
        return 1.0 - self.distances(bits).min(1) / self.n

    def reward(self, terminal_ids: np.ndarray) -> np.ndarray:
        return np.exp(self.log_reward(terminal_ids))

    def backward_mask(self, states: np.ndarray) -> np.ndarray:
        return np.ones((len(states), 1), dtype=bool)

    def backward_action(self, forward_actions: np.ndarray) -> np.ndarray:
        return np.zeros_like(forward_actions)

    def levels(self):
        self._require_enumerable()
        for L in range(self.n):
            vals = np.arange(1 << L, dtype=np.int64)
            st = np.full((len(vals), self.n + 1), -1, dtype=np.int64)
            st[:, 0] = L
            if L:
                st[:, 1:1 + L] = (vals[:, None] >> np.arange(L - 1, -1, -1)[None, :]) & 1
            yield st

    def all_interior_states(self) -> np.ndarray:
        return np.concatenate(list(self.levels()))

    def to_state(self, row) -> SeqState:
        L = int(row[0])
        return SeqState("".join(str(int(b)) for b in row[1:1 + L]), self.n)

    def from_state(self, s: SeqState) -> np.ndarray:
        if len(s.prefix) > self.n:
            raise ContractViolation("prefix longer than n")
        row = np.full(self.n + 1, -1, dtype=np.int64)
        row[0] = len(s.prefix)
        row[1:1 + len(s.prefix)] = [int(c) for c in s.prefix]
        return row

    def terminal_from_id(self, tid: int) -> SeqState:
        return SeqState(format(int(tid), f"0{self.n}b"), self.n)

    def terminal_label(self, tid: int) -> str:
        return format(int(tid), f"0{self.n}b")

    def children(self, s: SeqState):
        return seq_children(s)

    def parents(self, s: SeqState):
        return seq_parents(s)

    def reward_of(self, s: SeqState) -> float:
        return hamming_reward(s.prefix, self.modes)


Env = Union[GridEnv, SequenceEnv]


def make_grid_env(size: int, n_terms: int = 1000, c: float = -0.5, d: float = 0.5,
                  beta: float = 1.5, floor: float = 1e-8) -> GridEnv:
    return GridEnv(FourierRewardParams.default(size, n_terms, c, d, beta, floor))


def make_sequence_env(n: int, num_modes: int | None = None, seed: int = 0,
                      modes: Sequence[str] | None = None) -> SequenceEnv:
    if modes is not None:
        return SequenceEnv(ModeRewardParams(tuple(modes), n))
    if num_modes is None:
        raise ContractViolation("either modes or num_modes is required")
    return SequenceEnv(sample_mode_set(num_modes, n, seed))
