import math

import numpy as np
import pytest

from uansim.acoustics import LinkGeometry, transmission_loss
from uansim.world import (
    MobileEntity,
    WorldConfig,
    advance_entity,
    consume_energy,
    deploy,
    entity_interference_w,
    make_entity,
    pair_distance_m,
    slot_duration,
    step_mobility,
    world_snapshot,
)


def test_config_validation():
    with pytest.raises(ValueError):
        WorldConfig(power_levels_w=(2.0, 4.0))  # zero level missing
    with pytest.raises(ValueError):
        WorldConfig(power_levels_w=(0.0, 4.0, 4.0))  # not strictly increasing
    with pytest.raises(ValueError):
        WorldConfig(n_pairs=0)
    with pytest.raises(ValueError):
        WorldConfig(guard_policy="panic")


class TestDeploy:
    def test_even_spacing_and_vertical_pairing(self):
        cfg = WorldConfig(n_pairs=3, malfunction_rate=0.0)
        nodes = deploy(cfg, np.random.default_rng(1))
        assert len(nodes) == 6
        assert all(not n.malfunction for n in nodes)
        angles = sorted(math.atan2(n.position[1], n.position[0]) for n in nodes[:3])
        gaps = [angles[1] - angles[0], angles[2] - angles[1]]
        assert all(g == pytest.approx(2 * math.pi / 3, abs=1e-9) for g in gaps)
        for i in range(3):
            assert pair_distance_m(nodes, i, 3) == pytest.approx(1000.0)

    def test_degenerate_bernoulli(self):
        cfg = WorldConfig(n_pairs=6, malfunction_rate=1.0)
        nodes = deploy(cfg, np.random.default_rng(2))
        assert all(n.malfunction for n in nodes[:6])

    def test_malfunction_rate_monte_carlo(self):
        cfg = WorldConfig(n_pairs=6, malfunction_rate=0.2)
        rng = np.random.default_rng(3)
        counts = [sum(n.malfunction for n in deploy(cfg, rng)[:6]) for _ in range(10**5)]
        assert np.mean(counts) == pytest.approx(1.2, abs=0.05)


class TestMobility:
    def test_zero_speed_is_static(self):
        cfg = WorldConfig(n_pairs=2, current_speed_mps=0.0)
        rng = np.random.default_rng(4)
        nodes = deploy(cfg, rng)
        before = [n.position.copy() for n in nodes]
        step_mobility(nodes, cfg, rng, slot_duration_s=20.0)
        for prev, node in zip(before, nodes):
            assert np.array_equal(prev, node.position)

    def test_displacement_magnitude(self):
        cfg = WorldConfig(n_pairs=1, current_speed_mps=0.1, region_radius_m=1e6)
        rng = np.random.default_rng(5)
        nodes = deploy(WorldConfig(n_pairs=1, current_speed_mps=0.1), rng)
        before = [n.position.copy() for n in nodes]
        step_mobility(nodes, cfg, rng, slot_duration_s=20.0)
        for prev, node in zip(before, nodes):
            assert np.linalg.norm(node.position - prev) == pytest.approx(2.0)

    def test_positions_stay_in_cylinder(self):
        cfg = WorldConfig(n_pairs=2, current_speed_mps=5.0)
        rng = np.random.default_rng(6)
        nodes = deploy(cfg, rng)
        for _ in range(1000):
            step_mobility(nodes, cfg, rng, slot_duration_s=10.0)
        for node in nodes:
            assert math.hypot(node.position[0], node.position[1]) <= cfg.region_radius_m + 1e-9
            assert 0.0 <= node.position[2] <= cfg.region_height_m


class TestSlotDuration:
    def test_single_pair(self):
        cfg = WorldConfig(n_pairs=1)
        nodes = deploy(cfg, np.random.default_rng(7))
        assert slot_duration(nodes, cfg) == pytest.approx(5 + 1000 / 1500)

    def test_degenerate_distance(self):
        cfg = WorldConfig(n_pairs=1)
        nodes = deploy(cfg, np.random.default_rng(8))
        nodes[1].position = nodes[0].position.copy()
        assert slot_duration(nodes, cfg) == cfg.tx_duration_s

    def test_delay_spread_is_additive(self):
        cfg = WorldConfig(n_pairs=2)
        spread = WorldConfig(n_pairs=2, delay_spread_s=0.5)
        rng = np.random.default_rng(9)
        nodes = deploy(cfg, rng)
        assert slot_duration(nodes, spread) == pytest.approx(
            slot_duration(nodes, cfg) + 0.5)


class TestEnergy:
    def test_consumption_arithmetic(self):
        cfg = WorldConfig(n_pairs=1)
        node = deploy(cfg, np.random.default_rng(10))[0]
        consume_energy(node, 16.0, cfg)
        assert node.energy_j == 5000.0 - 80.0
        consume_energy(node, 0.0, cfg)
        assert node.energy_j == 5000.0 - 80.0

    def test_halt_after_fifteen_max_power_slots(self):
        cfg = WorldConfig(n_pairs=1)
        node = deploy(cfg, np.random.default_rng(11))[0]
        slots = 0
        while not node.halted:
            consume_energy(node, 64.0, cfg)
            slots += 1
        assert slots == 15
        assert node.energy_j == 200.0

    def test_transmit_while_halted_rejected(self):
        cfg = WorldConfig(n_pairs=1)
        node = deploy(cfg, np.random.default_rng(12))[0]
        node.halted = True
        with pytest.raises(ValueError):
            consume_energy(node, 2.0, cfg)
        consume_energy(node, 0.0, cfg)  # staying silent is always allowed

    def test_unknown_power_level_rejected(self):
        cfg = WorldConfig(n_pairs=1)
        node = deploy(cfg, np.random.default_rng(13))[0]
        with pytest.raises(ValueError):
            consume_energy(node, 3.0, cfg)

    def test_energy_never_increases_and_books_balance(self):
        cfg = WorldConfig(n_pairs=1)
        rng = np.random.default_rng(14)
        node = deploy(cfg, rng)[0]
        spent = 0.0
        for _ in range(30):
            if node.halted:
                break
            p = float(rng.choice(cfg.power_levels_w[:5]))
            prev = node.energy_j
            consume_energy(node, p, cfg)
            assert node.energy_j <= prev
            spent += p * cfg.tx_duration_s
        assert node.energy_j == pytest.approx(cfg.battery_j - spent)


class TestEntity:
    def test_inactive_entity_silent(self):
        cfg = WorldConfig(n_pairs=1)
        entity = make_entity(cfg)
        assert entity_interference_w(entity, np.zeros(3), cfg) == 0.0

    def test_interference_matches_channel_formula(self):
        cfg = WorldConfig(n_pairs=1)
        entity = MobileEntity(position=np.array([1000.0, 0.0, 0.0]),
                              waypoints=[], speed_mps=3.0, active=True)
        rx = np.zeros(3)
        expected = 0.9 * 2.0 * transmission_loss(LinkGeometry(1.0), cfg.channel)
        assert entity_interference_w(entity, rx, cfg) == pytest.approx(expected, rel=1e-12)
        assert entity_interference_w(entity, rx, cfg, rho=2.0) == pytest.approx(
            4 * expected, rel=1e-12)

    def test_entity_retires_at_exit(self):
        cfg = WorldConfig(n_pairs=1, entity_activation_prob=1.0, entity_speed_mps=1e6)
        rng = np.random.default_rng(15)
        entity = make_entity(cfg)
        advance_entity(entity, cfg, rng, slot_duration_s=5.0)
        assert entity.active
        advance_entity(entity, cfg, rng, slot_duration_s=5.0)
        assert not entity.active  # covered the whole segment in one slot

    def test_entity_disabled(self):
        cfg = WorldConfig(n_pairs=1, entity_enabled=False, entity_activation_prob=1.0)
        entity = make_entity(cfg)
        advance_entity(entity, cfg, np.random.default_rng(16), 5.0)
        assert not entity.active


def test_snapshot_round_trips_via_json():
    import json

    cfg = WorldConfig(n_pairs=2)
    rng = np.random.default_rng(17)
    nodes = deploy(cfg, rng)
    snap = world_snapshot(nodes, make_entity(cfg))
    parsed = json.loads(json.dumps(snap))
    assert parsed["nodes"][0]["position"] == [float(x) for x in nodes[0].position]
    assert parsed["entity"]["active"] is False


def test_same_seed_same_world():
    cfg = WorldConfig(n_pairs=4, malfunction_rate=0.3)
    a = deploy(cfg, np.random.default_rng(99))
    b = deploy(cfg, np.random.default_rng(99))
    for na, nb in zip(a, b):
        assert np.array_equal(na.position, nb.position)
        assert na.malfunction == nb.malfunction
