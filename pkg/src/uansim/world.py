"""World state: node deployment, drift, energy books, slot timing, interferer.

A world is a flat list of NodeState (N transmitters then N receivers) plus
one MobileEntity. All functions mutate in place and return their argument;
randomness enters only through a passed Generator, so one seed fixes the
whole trajectory.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .acoustics import ChannelParams, LinkGeometry, transmission_loss

HALT_ENERGY_FRACTION = 0.10

GUARD_RANDOM = "random"
GUARD_SILENT = "silent"


@dataclass
class NodeState:
    """One node's kinematic and bookkeeping state."""

    id: int
    position: np.ndarray
    is_transmitter: bool
    partner_id: int
    energy_j: float
    malfunction: bool = False
    halted: bool = False
    sent_count: int = 0
    delivered_count: int = 0
    last_action_index: int = 0
    last_delivered: bool = False
    last_rate_bps: float = 0.0
    heading_rad: float = 0.0

    def to_record(self) -> dict:
        return {
            "id": self.id,
            "position": [float(x) for x in self.position],
            "is_transmitter": self.is_transmitter,
            "partner_id": self.partner_id,
            "energy_j": self.energy_j,
            "malfunction": self.malfunction,
            "halted": self.halted,
        }


@dataclass
class MobileEntity:
    """Transient acoustic interferer crossing the region on a straight path."""

    position: np.ndarray
    waypoints: list
    speed_mps: float
    active: bool = False

    def to_record(self) -> dict:
        return {
            "position": [float(x) for x in self.position],
            "active": self.active,
        }


@dataclass(frozen=True)
class WorldConfig:
    """Scenario parameters. Defaults are the reference desk-scale setup."""

    n_pairs: int = 3
    region_radius_m: float = 1400.0
    region_height_m: float = 1000.0
    battery_j: float = 5000.0
    required_lifetime_slots: int = 30
    tx_duration_s: float = 5.0
    power_levels_w: tuple = (0.0, 2.0, 4.0, 8.0, 16.0, 32.0, 64.0)
    current_speed_mps: float = 0.1
    malfunction_rate: float = 0.0
    mobile_entity_power_w: float = 2.0
    sound_speed_mps: float = 1500.0
    delay_spread_s: float = 0.0
    seed: int = 0
    channel: ChannelParams = field(default_factory=ChannelParams)
    # artifact plumbing below: values the scenario description leaves open
    entity_speed_mps: float = 3.0
    entity_activation_prob: float = 0.1
    entity_enabled: bool = True
    heading_sigma_rad: float = 0.3
    wind_mean_mps: float = 10.0
    wind_sigma_mps: float = 0.1
    fading_enabled: bool = True
    missing_obs_prob: float = 0.0
    guard_policy: str = GUARD_RANDOM
    episode_slots: int = 0  # 0 -> required_lifetime_slots
    recompute_slot_duration: bool = False
    rate_norm_gamma_cap: float = 1e7

    def __post_init__(self):
        if self.n_pairs < 1:
            raise ValueError("need at least one transmitter-receiver pair")
        levels = tuple(self.power_levels_w)
        if levels[0] != 0.0:
            raise ValueError("power level 0 (no transmission) must be first")
        if any(b <= a for a, b in zip(levels, levels[1:])):
            raise ValueError("power levels must be strictly increasing")
        if not 0 <= self.malfunction_rate <= 1:
            raise ValueError("malfunction rate must be in [0, 1]")
        if self.guard_policy not in (GUARD_RANDOM, GUARD_SILENT):
            raise ValueError(f"unknown guard policy {self.guard_policy!r}")

    @property
    def halt_floor_j(self) -> float:
        return HALT_ENERGY_FRACTION * self.battery_j

    @property
    def n_slots(self) -> int:
        return self.episode_slots or self.required_lifetime_slots

    def with_malfunction_rate(self, eps: float) -> "WorldConfig":
        return replace(self, malfunction_rate=eps)


def deploy(config: WorldConfig, rng: np.random.Generator) -> list:
    """Place N pairs: transmitters on the top rim, receivers directly below.

    Even angular spacing with a random rotation; malfunction flags drawn
    Bernoulli(malfunction_rate) per transmitter.
    """
    n = config.n_pairs
    r = config.region_radius_m
    h = config.region_height_m
    phase = rng.uniform(0.0, 2.0 * math.pi)
    nodes = []
    for i in range(n):
        theta = phase + 2.0 * math.pi * i / n
        x, y = r * math.cos(theta), r * math.sin(theta)
        nodes.append(
            NodeState(
                id=i,
                position=np.array([x, y, h], dtype=float),
                is_transmitter=True,
                partner_id=i,
                energy_j=config.battery_j,
                malfunction=bool(rng.random() < config.malfunction_rate),
                heading_rad=rng.uniform(0.0, 2.0 * math.pi),
            )
        )
    for i in range(n):
        tx = nodes[i]
        nodes.append(
            NodeState(
                id=i,
                position=np.array([tx.position[0], tx.position[1], 0.0]),
                is_transmitter=False,
                partner_id=i,
                energy_j=config.battery_j,
                heading_rad=rng.uniform(0.0, 2.0 * math.pi),
            )
        )
    return nodes


def pair_distance_m(nodes: list, pair: int, n_pairs: int) -> float:
    tx, rx = nodes[pair], nodes[n_pairs + pair]
    return float(np.linalg.norm(tx.position - rx.position))


def slot_duration(nodes: list, config: WorldConfig) -> float:
    """Slot length: payload time plus the worst pair's propagation + spread."""
    worst = max(
        pair_distance_m(nodes, i, config.n_pairs) / config.sound_speed_mps
        + config.delay_spread_s
        for i in range(config.n_pairs)
    )
    return config.tx_duration_s + worst


def _clamp_to_cylinder(pos: np.ndarray, config: WorldConfig) -> None:
    radial = math.hypot(pos[0], pos[1])
    if radial > config.region_radius_m:
        scale = config.region_radius_m / radial
        pos[0] *= scale
        pos[1] *= scale
    pos[2] = min(max(pos[2], 0.0), config.region_height_m)


def step_mobility(
    nodes: list, config: WorldConfig, rng: np.random.Generator, slot_duration_s: float
) -> list:
    """Drift every node by current_speed * slot along its wandering heading."""
    step = config.current_speed_mps * slot_duration_s
    for node in nodes:
        node.heading_rad += rng.normal(0.0, config.heading_sigma_rad)
        if step > 0.0:
            node.position[0] += step * math.cos(node.heading_rad)
            node.position[1] += step * math.sin(node.heading_rad)
            _clamp_to_cylinder(node.position, config)
    return nodes


def consume_energy(node: NodeState, power_w: float, config: WorldConfig) -> NodeState:
    """Charge one transmission against the battery and update the halt flag.

    Energy clamps at zero; with the default parameters the 10% halt floor
    exceeds the costliest single transmission, so the clamp never engages.
    """
    if power_w not in config.power_levels_w:
        raise ValueError(f"power {power_w} W not in the available set")
    if power_w > 0.0 and node.halted:
        raise ValueError("transmission attempted while halted")
    node.energy_j = max(0.0, node.energy_j - power_w * config.tx_duration_s)
    if node.energy_j < config.halt_floor_j:
        node.halted = True
    return node


def _random_rim_point(config: WorldConfig, rng: np.random.Generator) -> np.ndarray:
    theta = rng.uniform(0.0, 2.0 * math.pi)
    z = rng.uniform(0.0, config.region_height_m)
    return np.array(
        [
            config.region_radius_m * math.cos(theta),
            config.region_radius_m * math.sin(theta),
            z,
        ]
    )


def make_entity(config: WorldConfig) -> MobileEntity:
    return MobileEntity(
        position=np.zeros(3),
        waypoints=[],
        speed_mps=config.entity_speed_mps,
        active=False,
    )


def advance_entity(
    entity: MobileEntity, config: WorldConfig, rng: np.random.Generator, slot_duration_s: float
) -> MobileEntity:
    """Move the interferer one slot; activate/retire it at region boundaries.

    Inactive entities enter with the configured per-slot probability at a
    random rim point and head for a random exit; reaching the exit
    deactivates them until the next entry draw.
    """
    if not config.entity_enabled:
        entity.active = False
        return entity
    if not entity.active:
        if rng.random() < config.entity_activation_prob:
            entry = _random_rim_point(config, rng)
            exit_point = _random_rim_point(config, rng)
            entity.position = entry
            entity.waypoints = [exit_point]
            entity.active = True
        return entity
    target = entity.waypoints[0]
    to_target = target - entity.position
    dist = float(np.linalg.norm(to_target))
    travel = entity.speed_mps * slot_duration_s
    if travel >= dist:
        entity.position = target.copy()
        entity.waypoints = []
        entity.active = False
    else:
        entity.position = entity.position + to_target * (travel / dist)
    return entity


def entity_interference_w(
    entity: MobileEntity, rx_position: np.ndarray, config: WorldConfig, rho: float = 1.0
) -> float:
    """External interference I_s at a receiver: the entity's power through the channel."""
    if not entity.active:
        return 0.0
    d_km = float(np.linalg.norm(entity.position - rx_position)) / 1000.0
    loss = transmission_loss(LinkGeometry(d_km), config.channel)
    return config.channel.transducer_eff * config.mobile_entity_power_w * loss * rho * rho


def world_snapshot(nodes: list, entity: MobileEntity) -> dict:
    """JSON-ready dump of the full world state for debugging and replay."""
    return {
        "nodes": [n.to_record() for n in nodes],
        "entity": entity.to_record(),
    }
