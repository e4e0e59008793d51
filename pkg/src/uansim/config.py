"""Run configuration: JSON files over defaults, plus a stable content hash.

The default values reproduce the reference scenario; every key can be
overridden from a config file or the CLI.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json

from .acoustics import ChannelParams
from .agent import TrainerConfig
from .curricula import CurriculumConfig
from .world import WorldConfig


def default_config() -> dict:
    return {
        "seed": 0,
        "reward": "e-fr-ah",
        "world": {
            "n_pairs": 3,
            "region_radius_m": 1400.0,
            "region_height_m": 1000.0,
            "battery_j": 5000.0,
            "required_lifetime_slots": 30,
            "tx_duration_s": 5.0,
            "power_levels_w": [0.0, 2.0, 4.0, 8.0, 16.0, 32.0, 64.0],
            "current_speed_mps": 0.1,
            "malfunction_rate": 0.0,
            "mobile_entity_power_w": 2.0,
            "sound_speed_mps": 1500.0,
            "delay_spread_s": 0.0,
            "entity_speed_mps": 3.0,
            "entity_activation_prob": 0.1,
            "entity_enabled": True,
            "heading_sigma_rad": 0.3,
            "wind_mean_mps": 10.0,
            "wind_sigma_mps": 0.1,
            "fading_enabled": True,
            "missing_obs_prob": 0.0,
            "guard_policy": "random",
            "episode_slots": 0,
            "recompute_slot_duration": False,
            "rate_norm_gamma_cap": 1e7,
        },
        "channel": {
            "carrier_freq_khz": 25.0,
            "bandwidth_hz": 5000.0,
            "spreading_k": 1.5,
            "anomaly_db": 0.0,
            "transducer_eff": 0.9,
            "sinr_threshold_db": 10.0,
            "noise_band_hz": 5000.0,
            "shipping": 0.0,
            "wind_mps": 10.0,
        },
        "trainer": {
            "lr": 0.0005,
            "batch": 32,
            "gamma": 0.99,
            "target_sync_episodes": 100,
            "eps_start": 1.0,
            "eps_end": 0.05,
            "eps_anneal_episodes": 100000,
            "total_episodes": 1000,
            "buffer_capacity": 10000,
            "hidden_size": 64,
            "updates_per_episode": 1,
            "recompute_hidden": False,
        },
        "curriculum": {
            "kind": "none",
            "eps_fixed": 0.1,
            "eps_upper": 0.2,
            "update_cycle": 200,
            "eval_runs": 20,
            "utility_threshold": 1.25,
            "learning_factor": 0.01,
        },
    }


def deep_merge(base: dict, override: dict) -> dict:
    merged = dict(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = deep_merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def load_config(path=None, overrides: dict | None = None) -> dict:
    cfg = default_config()
    if path is not None:
        with open(path) as f:
            cfg = deep_merge(cfg, json.load(f))
    if overrides:
        cfg = deep_merge(cfg, overrides)
    return cfg


def config_hash(cfg: dict) -> str:
    canonical = json.dumps(cfg, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()[:12]


def _pick(fields_of, section: dict) -> dict:
    names = {f.name for f in dataclasses.fields(fields_of)}
    unknown = set(section) - names
    if unknown:
        raise ValueError(f"unknown {fields_of.__name__} keys: {sorted(unknown)}")
    return dict(section)


def build_world_config(cfg: dict) -> WorldConfig:
    channel = ChannelParams(**_pick(ChannelParams, cfg.get("channel", {})))
    world_kwargs = _pick(WorldConfig, {**cfg.get("world", {}), "channel": channel})
    world_kwargs["seed"] = cfg.get("seed", 0)
    world_kwargs["power_levels_w"] = tuple(world_kwargs.get(
        "power_levels_w", default_config()["world"]["power_levels_w"]))
    return WorldConfig(**world_kwargs)


def build_trainer_config(cfg: dict) -> TrainerConfig:
    return TrainerConfig(**_pick(TrainerConfig, cfg.get("trainer", {})))


def build_curriculum_config(cfg: dict) -> CurriculumConfig:
    section = dict(cfg.get("curriculum", {}))
    section.setdefault("total_episodes", cfg.get("trainer", {}).get("total_episodes", 1000))
    return CurriculumConfig(**_pick(CurriculumConfig, section))
