"""Non-learning reference policies, pluggable into the same environment.

All policies honor the halt floor implicitly (the environment forces halted
nodes to action 0), but greedy additionally checks it so its declared action
matches what runs.
"""

from __future__ import annotations

import numpy as np


def greedy_policy(node_state, n_actions: int) -> int:
    """Maximum available power unless the battery floor was hit."""
    return 0 if node_state.halted else n_actions - 1


def random_policy(rng: np.random.Generator, n_actions: int) -> int:
    """Arbitrary power each slot, refraining (index 0) included."""
    return int(rng.integers(n_actions))


def ntdma_policy(node_id: int, slot_index: int, n_pairs: int, n_actions: int) -> int:
    """Round-robin slot ownership; owners transmit at maximum power."""
    return n_actions - 1 if slot_index % n_pairs == node_id else 0


class GreedyPolicy:
    def begin_episode(self, observations, env) -> None:
        pass

    def act(self, observations, env) -> list:
        n_actions = len(env.config.power_levels_w)
        return [greedy_policy(env.nodes[i], n_actions)
                for i in range(env.config.n_pairs)]


class RandomPolicy:
    def __init__(self, seed: int = 0):
        self.rng = np.random.default_rng(seed)

    def begin_episode(self, observations, env) -> None:
        pass

    def act(self, observations, env) -> list:
        n_actions = len(env.config.power_levels_w)
        return [random_policy(self.rng, n_actions)
                for _ in range(env.config.n_pairs)]


class NTdmaPolicy:
    def begin_episode(self, observations, env) -> None:
        pass

    def act(self, observations, env) -> list:
        n_actions = len(env.config.power_levels_w)
        return [ntdma_policy(i, env.slot_index, env.config.n_pairs, n_actions)
                for i in range(env.config.n_pairs)]


class TabularQPolicy:
    """Independent per-agent tabular Q-learning sanity baseline.

    Not a replication of any published learner: it discretizes each agent's
    view to (last action, last delivery flag) and runs plain Q-learning on
    the shared reward. Useful only as a learning-signal smoke check.
    """

    def __init__(self, n_pairs: int, n_actions: int, seed: int = 0,
                 lr: float = 0.1, gamma: float = 0.9, epsilon: float = 0.1):
        self.n_pairs = n_pairs
        self.n_actions = n_actions
        self.rng = np.random.default_rng(seed)
        self.lr = lr
        self.gamma = gamma
        self.epsilon = epsilon
        self.q = np.zeros((n_pairs, n_actions * 2, n_actions))
        self.learning = False
        self._last_state = None
        self._last_action = None

    def _state(self, env, i: int) -> int:
        node = env.nodes[i]
        return node.last_action_index * 2 + int(node.last_delivered)

    def begin_episode(self, observations, env) -> None:
        self._last_state = None
        self._last_action = None

    def act(self, observations, env) -> list:
        states = [self._state(env, i) for i in range(self.n_pairs)]
        actions = []
        for i, s in enumerate(states):
            if self.learning and self.rng.random() < self.epsilon:
                actions.append(int(self.rng.integers(self.n_actions)))
            else:
                actions.append(int(np.argmax(self.q[i, s])))
        self._last_state = states
        self._last_action = actions
        return actions

    def observe(self, env, reward: float) -> None:
        """Q-learning backup after env.step; call only while training."""
        if not self.learning or self._last_state is None:
            return
        for i in range(self.n_pairs):
            s, a = self._last_state[i], self._last_action[i]
            s_next = self._state(env, i)
            best = np.max(self.q[i, s_next])
            self.q[i, s, a] += self.lr * (reward + self.gamma * best - self.q[i, s, a])


BASELINE_NAMES = ("greedy", "random", "ntdma")


def make_baseline(name: str, seed: int = 0):
    if name == "greedy":
        return GreedyPolicy()
    if name == "random":
        return RandomPolicy(seed)
    if name == "ntdma":
        return NTdmaPolicy()
    raise ValueError(f"unknown baseline {name!r}; pick one of {BASELINE_NAMES}")
