"""Hand-sized environments with closed-form answers."""
import numpy as np

from tsgfn.environments import SequenceEnv, make_sequence_env


class TwoLeafTree(SequenceEnv):
    """``s0 -> x1`` or ``s0 -> x2`` (one bit), with rewards 1 and 3."""

    LOG_R = np.log([1.0, 3.0])

    def __init__(self):
        super().__init__(make_sequence_env(1, modes=["0"]).modes)

    def log_reward_states(self, terminal_states):
        return self.LOG_R[terminal_states[:, 1]]

    def log_reward(self, terminal_ids):
        return self.LOG_R[terminal_ids]

    def reward(self, terminal_ids):
        return np.exp(self.LOG_R[terminal_ids])
