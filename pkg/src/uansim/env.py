"""Decentralized-POMDP wrapper around the world and channel models.

Each step takes one power-level index per transmitter, runs the slot physics
(fresh fading per link, interferer and ambient noise), settles deliveries
against the SINR threshold, charges batteries, and pays a shared team
reward. Episodes end at the configured slot count or as soon as an
intelligent node halts before the required lifetime (with the fixed
termination penalty).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from . import acoustics, metrics, world
from .acoustics import ambient_noise_power, data_rate, sinr
from .metrics import ADAPTIVE, LIFETIME, RunLedger, SlotLedger
from .world import GUARD_SILENT, WorldConfig

FR_LH = "fr-lh"
E_FR_LH = "e-fr-lh"
E_FR_AH = "e-fr-ah"
REWARD_KINDS = (FR_LH, E_FR_LH, E_FR_AH)

TERMINATION_PENALTY = -100.0


def observation_dim(n_pairs: int) -> int:
    """Length of one agent's flattened observation vector."""
    return 14 + n_pairs + 3 * (n_pairs - 1)


def team_reward(kind: str, ledger: RunLedger, at_slot: int) -> float:
    """Shared slot reward: windowed fairness times deliveries, minus waste.

    fr-lh    : lifetime fairness * deliveries
    e-fr-lh  : lifetime fairness * deliveries - failed-send penalty
    e-fr-ah  : adaptive-window fairness * deliveries - failed-send penalty
    """
    if kind not in REWARD_KINDS:
        raise ValueError(f"unknown reward kind {kind!r}")
    slot = ledger.slots[at_slot - 1]
    delivered = sum(slot.delivered)
    if kind == FR_LH:
        return metrics.jain_fairness(ledger, at_slot, LIFETIME) * delivered
    penalty = sum(s - r for s, r in zip(slot.sent, slot.delivered)) / ledger.n
    horizon = LIFETIME if kind == E_FR_LH else ADAPTIVE
    return metrics.jain_fairness(ledger, at_slot, horizon) * delivered - penalty


@dataclass
class StepOutcome:
    next_observations: list
    reward: float
    done: bool
    ledger_slot: SlotLedger
    info: dict


class PowerAllocationEnv:
    """Slotted power-allocation environment for N transmitter-receiver pairs."""

    def __init__(self, config: WorldConfig, reward_kind: str = E_FR_AH,
                 horizon_alpha: int = 0, collect_trace: bool = False):
        if reward_kind not in REWARD_KINDS:
            raise ValueError(f"unknown reward kind {reward_kind!r}")
        self.config = config
        self.reward_kind = reward_kind
        self.horizon_alpha = horizon_alpha or config.n_pairs
        self.collect_trace = collect_trace
        self.trace: list = []
        self.rng: np.random.Generator | None = None

    # -- episode lifecycle -------------------------------------------------

    def reset(self, seed: int | None = None) -> list:
        cfg = self.config
        self.rng = np.random.default_rng(cfg.seed if seed is None else seed)
        wind = max(0.0, self.rng.normal(cfg.wind_mean_mps, cfg.wind_sigma_mps))
        self.channel = replace(cfg.channel, wind_mps=wind)
        self.noise_w = ambient_noise_power(self.channel)
        self.nodes = world.deploy(cfg, self.rng)
        self.entity = world.make_entity(cfg)
        self.slot_duration_s = world.slot_duration(self.nodes, cfg)
        self.ledger = RunLedger(cfg.n_pairs, cfg.tx_duration_s, self.horizon_alpha)
        self.slot_index = 0
        self.lifetime_slots = cfg.n_slots
        self.violated = False
        self._first_halt_seen = False
        self.total_reward = 0.0
        if self.collect_trace:
            self.trace = [self._header_record(seed)]
        self._last_observations = self._observations()
        return self._last_observations

    def step(self, joint_action) -> StepOutcome:
        cfg = self.config
        n = cfg.n_pairs
        if self.rng is None:
            raise RuntimeError("call reset() before step()")
        if len(joint_action) != n:
            raise ValueError("need one action per transmitter")
        if any(not 0 <= a < len(cfg.power_levels_w) for a in joint_action):
            raise ValueError("action index out of range")

        executed = self._resolve_actions(joint_action)
        powers = [cfg.power_levels_w[a] for a in executed]
        if cfg.recompute_slot_duration:
            self.slot_duration_s = world.slot_duration(self.nodes, cfg)

        gains = self._gain_matrix()
        i_s = self._entity_interference()
        sent, delivered, rates, gammas = self._settle_slot(powers, gains, i_s)

        newly_halted = self._charge_energy(powers)
        self._update_histories(executed, sent, delivered, rates)
        self.ledger.append(SlotLedger(tuple(sent), tuple(delivered), tuple(rates)))
        self.slot_index += 1
        t = self.slot_index

        violation = False
        if not self._first_halt_seen and any(
            not self.nodes[i].malfunction for i in newly_halted
        ):
            self._first_halt_seen = True
            self.lifetime_slots = t
            if t < cfg.required_lifetime_slots:
                violation = True
                self.violated = True

        done = violation or t >= cfg.n_slots
        if violation:
            reward = TERMINATION_PENALTY
        else:
            reward = team_reward(self.reward_kind, self.ledger, t)
        self.total_reward += reward

        world.step_mobility(self.nodes, cfg, self.rng, self.slot_duration_s)
        world.advance_entity(self.entity, cfg, self.rng, self.slot_duration_s)

        info = {
            "slot": t,
            "actions_executed": executed,
            "powers_w": powers,
            "i_s_w": i_s,
            "sinr": gammas,
            "violation": violation,
            "lifetime_slots": self.lifetime_slots,
            "newly_halted": newly_halted,
        }
        if self.collect_trace:
            self.trace.append(
                self._slot_record(t, executed, powers, gains, i_s, sent, delivered,
                                  rates, reward, done, violation)
            )
        self._last_observations = self._observations()
        return StepOutcome(self._last_observations, reward, done,
                           self.ledger.slots[-1], info)

    # -- slot mechanics ----------------------------------------------------

    def _resolve_actions(self, joint_action) -> list:
        """Apply halt, malfunction-guard and missing-observation overrides."""
        cfg = self.config
        n_actions = len(cfg.power_levels_w)
        executed = []
        for i, action in enumerate(joint_action):
            node = self.nodes[i]
            if node.halted:
                executed.append(0)
            elif node.malfunction:
                if cfg.guard_policy == GUARD_SILENT:
                    executed.append(0)
                else:
                    executed.append(int(self.rng.integers(n_actions)))
            elif cfg.missing_obs_prob > 0 and self.rng.random() < cfg.missing_obs_prob:
                executed.append(int(self.rng.integers(n_actions)))
            else:
                executed.append(int(action))
        return executed

    def _gain_matrix(self) -> np.ndarray:
        """gains[j, i]: instantaneous gain from transmitter j to receiver i."""
        cfg = self.config
        n = cfg.n_pairs
        tx = np.stack([self.nodes[j].position for j in range(n)])
        rx = np.stack([self.nodes[n + i].position for i in range(n)])
        d_km = np.linalg.norm(tx[:, None, :] - rx[None, :, :], axis=-1) / 1000.0
        alpha = acoustics.thorp_absorption_db_per_km(self.channel.carrier_freq_khz)
        loss = (1000.0 * d_km) ** (-self.channel.spreading_k) * 10.0 ** (
            -(alpha * d_km + self.channel.anomaly_db) / 10.0
        )
        if cfg.fading_enabled:
            rho = acoustics.sample_fading(self.rng, size=(n, n))
            return loss * rho * rho
        return loss

    def _entity_interference(self) -> list:
        cfg = self.config
        n = cfg.n_pairs
        if not self.entity.active:
            return [0.0] * n
        rho = acoustics.sample_fading(self.rng, size=n) if cfg.fading_enabled else np.ones(n)
        return [
            world.entity_interference_w(self.entity, self.nodes[n + i].position, cfg, rho[i])
            for i in range(n)
        ]

    def _settle_slot(self, powers, gains, i_s):
        """Deliveries and rates for one slot given powers and channel draws."""
        cfg = self.config
        n = cfg.n_pairs
        eta0 = self.channel.transducer_eff
        threshold = self.channel.sinr_threshold_linear
        sent, delivered, rates, gammas = [], [], [], []
        for i in range(n):
            s = 1 if powers[i] > 0 else 0
            gamma = sinr(powers, gains[:, i].tolist(), i, i_s[i], self.noise_w, eta0)
            ok = 1 if s and gamma >= threshold else 0
            sent.append(s)
            delivered.append(ok)
            rates.append(data_rate(gamma, self.channel) if ok else 0.0)
            gammas.append(gamma)
        # half-duplex pairing gives each receiver a single intended arrival
        assert all(d <= 1 for d in delivered)
        return sent, delivered, rates, gammas

    def _charge_energy(self, powers) -> list:
        newly_halted = []
        for i in range(self.config.n_pairs):
            node = self.nodes[i]
            was_halted = node.halted
            world.consume_energy(node, powers[i], self.config)
            if node.halted and not was_halted:
                newly_halted.append(i)
        return newly_halted

    def _update_histories(self, executed, sent, delivered, rates) -> None:
        for i in range(self.config.n_pairs):
            node = self.nodes[i]
            node.sent_count += sent[i]
            node.delivered_count += delivered[i]
            node.last_action_index = executed[i]
            node.last_delivered = bool(delivered[i])
            node.last_rate_bps = rates[i]

    # -- observations --------------------------------------------------------

    def _observations(self) -> list:
        return [self._observe(i) for i in range(self.config.n_pairs)]

    def _observe(self, i: int) -> np.ndarray:
        """Flattened local view; layout documented in the README."""
        cfg = self.config
        n = cfg.n_pairs
        node = self.nodes[i]
        rate_norm = cfg.channel.bandwidth_hz * math.log2(1.0 + cfg.rate_norm_gamma_cap)

        parts = [self._norm_pos(node.position)]
        parts.append([
            node.energy_j / cfg.battery_j,
            min(1.0, node.last_rate_bps / rate_norm),
            node.delivered_count / max(1, node.sent_count),
            node.last_action_index / (len(cfg.power_levels_w) - 1),
        ])
        one_hot = [0.0] * n
        one_hot[i] = 1.0
        parts.append(one_hot)
        for j in range(n):
            if j != i:
                parts.append(self._norm_pos(self.nodes[j].position))
        if self.entity.active:
            parts.append(self._norm_pos(self.entity.position))
            i_s = world.entity_interference_w(self.entity, self.nodes[n + i].position, cfg)
            parts.append([i_s / (i_s + self.noise_w)])
        else:
            parts.append([0.0, 0.0, 0.0, 0.0])
        parts.append(self._norm_pos(self.nodes[n + i].position))
        obs = np.concatenate([np.asarray(p, dtype=float) for p in parts])
        assert obs.shape == (observation_dim(n),) and np.all(np.isfinite(obs))
        return obs

    def _norm_pos(self, pos: np.ndarray) -> list:
        return [
            pos[0] / self.config.region_radius_m,
            pos[1] / self.config.region_radius_m,
            pos[2] / self.config.region_height_m,
        ]

    # -- tracing and replay --------------------------------------------------

    def _header_record(self, seed) -> dict:
        cfg = self.config
        return {
            "type": "header",
            "seed": cfg.seed if seed is None else seed,
            "n_pairs": cfg.n_pairs,
            "power_levels_w": list(cfg.power_levels_w),
            "eta0": self.channel.transducer_eff,
            "sinr_threshold_db": self.channel.sinr_threshold_db,
            "bandwidth_hz": self.channel.bandwidth_hz,
            "noise_w": self.noise_w,
            "battery_j": cfg.battery_j,
            "tx_duration_s": cfg.tx_duration_s,
            "required_lifetime_slots": cfg.required_lifetime_slots,
            "episode_slots": cfg.n_slots,
            "reward_kind": self.reward_kind,
            "horizon_alpha": self.horizon_alpha,
            "malfunction": [self.nodes[i].malfunction for i in range(cfg.n_pairs)],
        }

    def _slot_record(self, t, executed, powers, gains, i_s, sent, delivered, rates,
                     reward, done, violation) -> dict:
        return {
            "type": "slot",
            "slot": t,
            "observations": [o.tolist() for o in self._last_observations],
            "actions": list(executed),
            "powers_w": list(powers),
            "gains": gains.tolist(),
            "i_s_w": list(i_s),
            "sent": list(sent),
            "delivered": list(delivered),
            "rates_bps": list(rates),
            "reward": reward,
            "done": done,
            "violation": violation,
        }


def verify_trace(records: list) -> list:
    """Re-derive deliveries, rates and rewards of a logged episode.

    Recomputes each slot's SINR from the logged powers, gains and noise
    through the channel functions, rebuilds the ledger and the energy books,
    and recomputes every reward. Returns one message per mismatching field,
    tagged with the record index.
    """
    if not records:
        return []
    header = records[0]
    if header.get("type") != "header":
        return ["record 0: missing header"]
    n = header["n_pairs"]
    channel_like = acoustics.ChannelParams(
        bandwidth_hz=header["bandwidth_hz"],
        sinr_threshold_db=header["sinr_threshold_db"],
        transducer_eff=header["eta0"],
    )
    threshold = channel_like.sinr_threshold_linear
    noise = header["noise_w"]
    floor = world.HALT_ENERGY_FRACTION * header["battery_j"]
    energy = [header["battery_j"]] * n
    halted = [False] * n
    violated = False
    ledger = RunLedger(n, header["tx_duration_s"], header["horizon_alpha"])
    mismatches = []

    for idx, rec in enumerate(records[1:], start=1):
        if rec.get("type") != "slot":
            mismatches.append(f"record {idx}: unexpected type {rec.get('type')!r}")
            continue
        powers = rec["powers_w"]
        gains = rec["gains"]
        sent, delivered, rates = [], [], []
        for i in range(n):
            s = 1 if powers[i] > 0 else 0
            gamma = sinr(powers, [gains[j][i] for j in range(n)], i,
                         rec["i_s_w"][i], noise, header["eta0"])
            ok = 1 if s and gamma >= threshold else 0
            sent.append(s)
            delivered.append(ok)
            rates.append(data_rate(gamma, channel_like) if ok else 0.0)
        for name, expect, got in (("sent", sent, rec["sent"]),
                                  ("delivered", delivered, rec["delivered"]),
                                  ("rates_bps", rates, rec["rates_bps"])):
            if list(got) != expect:
                mismatches.append(f"record {idx}: {name} logged {got} recomputed {expect}")
        ledger.append(SlotLedger(tuple(rec["sent"]), tuple(rec["delivered"]),
                                 tuple(rec["rates_bps"])))
        t = len(ledger)

        violation = False
        for i in range(n):
            energy[i] = max(0.0, energy[i] - powers[i] * header["tx_duration_s"])
            if energy[i] < floor and not halted[i]:
                halted[i] = True
                if not header["malfunction"][i] and not violated \
                        and t < header["required_lifetime_slots"]:
                    violation = True
                    violated = True
        reward = TERMINATION_PENALTY if violation else team_reward(
            header["reward_kind"], ledger, t)
        if reward != rec["reward"]:
            mismatches.append(f"record {idx}: reward logged {rec['reward']} "
                              f"recomputed {reward}")
        if bool(rec["violation"]) != violation:
            mismatches.append(f"record {idx}: violation flag logged "
                              f"{rec['violation']} recomputed {violation}")
    return mismatches


def run_episode(env: PowerAllocationEnv, policy, seed: int | None = None):
    """Roll one episode under a policy; returns (EpisodeResult, ledger)."""
    observations = env.reset(seed)
    policy.begin_episode(observations, env)
    done = False
    while not done:
        actions = policy.act(observations, env)
        outcome = env.step(actions)
        observations = outcome.next_observations
        done = outcome.done
    result = metrics.episode_result(
        env.ledger,
        env.lifetime_slots,
        env.config.required_lifetime_slots,
        env.total_reward,
    )
    return result, env.ledger
