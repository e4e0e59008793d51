"""Malfunction-rate schedules and periodic checkpoint evaluation.

Three ways to pick the training malfunction rate: a fixed prior ("pls"),
a linear syllabus ("sls"), and a performance-responsive controller ("rls")
that raises the rate while evaluated utility clears a threshold and backs
off otherwise. "none" trains on perfect environments only.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import agent as agent_mod
from .env import PowerAllocationEnv, run_episode
from .world import WorldConfig

PLS = "pls"
SLS = "sls"
RLS = "rls"
NONE = "none"
KINDS = (PLS, SLS, RLS, NONE)


@dataclass(frozen=True)
class CurriculumConfig:
    kind: str = NONE
    eps_fixed: float = 0.1
    eps_upper: float = 0.2
    update_cycle: int = 200
    eval_runs: int = 20
    utility_threshold: float = 1.25
    learning_factor: float = 0.01
    total_episodes: int = 200000

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown curriculum kind {self.kind!r}")
        if not 0.0 <= self.eps_fixed <= 1.0 or not 0.0 <= self.eps_upper <= 1.0:
            raise ValueError("malfunction rates must be in [0, 1]")
        if not 0.0 < self.learning_factor < 1.0:
            raise ValueError("learning factor must be in (0, 1)")
        if self.update_cycle < 1 or self.eval_runs < 1 or self.total_episodes < 1:
            raise ValueError("cycle, runs and episode counts must be >= 1")


def pls_epsilon(cfg: CurriculumConfig) -> float:
    """Fixed prior malfunction rate, every episode."""
    return cfg.eps_fixed


def sls_step_size(cfg: CurriculumConfig) -> float:
    return cfg.eps_upper * cfg.update_cycle / cfg.total_episodes


def sls_epsilon(episode: int, cfg: CurriculumConfig) -> float:
    """Syllabus rate: starts at 0, steps up every update cycle."""
    if episode < 1:
        raise ValueError("episodes are 1-based")
    return sls_step_size(cfg) * (episode // cfg.update_cycle)


def rls_update(eps: float, mean_utility: float, cfg: CurriculumConfig) -> float:
    """Responsive rate update, clamped into [0, eps_upper]."""
    if mean_utility >= cfg.utility_threshold:
        return min(cfg.eps_upper, eps + cfg.learning_factor * (1.0 - eps))
    new = eps + cfg.learning_factor * (0.0 - eps)
    assert new >= 0.0, "decrease branch cannot undershoot zero for factors < 1"
    return new


@dataclass
class EvalEpoch:
    episode: int
    eps: float
    mean_reward: float
    mean_utility: float


def evaluate_checkpoint(params, world_config: WorldConfig, reward_kind: str,
                        eps: float, n_runs: int, seeds) -> tuple:
    """Greedy-policy evaluation over seeded runs.

    Returns (mean episode reward, mean final network utility, results).
    Never mutates the parameters; each run gets its own environment.
    """
    seeds = list(seeds)
    if len(seeds) != n_runs:
        raise ValueError("need one seed per evaluation run")
    results = []
    for run_seed in seeds:
        env = PowerAllocationEnv(world_config.with_malfunction_rate(eps), reward_kind)
        policy = agent_mod.NetPolicy(params, epsilon=0.0)
        result, _ = run_episode(env, policy, seed=run_seed)
        results.append(result)
    mean_reward = float(np.mean([r.episode_reward for r in results]))
    mean_utility = float(np.mean([r.utility for r in results]))
    return mean_reward, mean_utility, results


class Curriculum:
    """Schedule state plus the evaluation hook called every update cycle."""

    def __init__(self, cfg: CurriculumConfig, world_config: WorldConfig,
                 reward_kind: str, master_seed: int = 0):
        self.cfg = cfg
        self.world_config = world_config
        self.reward_kind = reward_kind
        self.master_seed = master_seed
        self._rls_eps = 0.0
        self._epoch = 0
        self.trace: list = []

    @property
    def returns_final_params(self) -> bool:
        """Syllabus training keeps the last parameters; the rest keep the best."""
        return self.cfg.kind == SLS

    def eps_for_episode(self, episode: int) -> float:
        if self.cfg.kind == NONE:
            return 0.0
        if self.cfg.kind == PLS:
            return pls_epsilon(self.cfg)
        if self.cfg.kind == SLS:
            return sls_epsilon(episode, self.cfg)
        return self._rls_eps

    def should_eval(self, episode: int) -> bool:
        return episode % self.cfg.update_cycle == 0

    def eval_seeds(self, epoch: int) -> list:
        return [agent_mod.derive_seed(self.master_seed, 2, epoch, run)
                for run in range(self.cfg.eval_runs)]

    def evaluate(self, episode: int, params) -> EvalEpoch:
        """Run the periodic evaluation and let the responsive rate react."""
        self._epoch += 1
        eps = self.eps_for_episode(episode)
        mean_reward, mean_utility, _ = evaluate_checkpoint(
            params, self.world_config, self.reward_kind, eps,
            self.cfg.eval_runs, self.eval_seeds(self._epoch),
        )
        if self.cfg.kind == RLS:
            self._rls_eps = rls_update(self._rls_eps, mean_utility, self.cfg)
        epoch = EvalEpoch(episode, eps, mean_reward, mean_utility)
        self.trace.append(epoch)
        return epoch

    def trace_rows(self) -> list:
        """CSV-ready (episode, eps, mean_reward, mean_utility) rows."""
        return [(e.episode, e.eps, e.mean_reward, e.mean_utility) for e in self.trace]
