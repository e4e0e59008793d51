"""Network performance measures over per-slot send/delivery ledgers.

Everything here is a pure function of immutable ledgers; windows are
recomputed exactly rather than maintained incrementally.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

LIFETIME = "lifetime"
ADAPTIVE = "adaptive"


@dataclass(frozen=True)
class SlotLedger:
    """One slot's outcome: who sent, who got through, at what rate."""

    sent: tuple
    delivered: tuple
    rates_bps: tuple

    def __post_init__(self):
        if not len(self.sent) == len(self.delivered) == len(self.rates_bps):
            raise ValueError("ledger vectors must have equal length")
        for s, re_, c in zip(self.sent, self.delivered, self.rates_bps):
            if re_ > s:
                raise ValueError("delivery without a send")
            if re_ and c <= 0:
                raise ValueError("delivery implies a positive rate")


@dataclass
class RunLedger:
    """Ordered per-slot ledgers for one episode."""

    n: int
    tx_duration_s: float
    horizon_alpha: int
    slots: list = field(default_factory=list)

    def append(self, slot: SlotLedger) -> None:
        if len(slot.sent) != self.n:
            raise ValueError("slot ledger size mismatch")
        self.slots.append(slot)

    def __len__(self) -> int:
        return len(self.slots)


def jain_index(values) -> float:
    """Jain fairness of nonnegative per-node totals; 0 when all are zero."""
    x = np.asarray(values, dtype=float)
    total = x.sum()
    if total == 0.0:
        return 0.0
    return float(total * total / (x.size * (x * x).sum()))


def _delivery_window_sums(ledger: RunLedger, at_slot: int, window: int) -> np.ndarray:
    if at_slot < 1 or at_slot > len(ledger):
        raise ValueError("at_slot out of range")
    start = max(0, at_slot - window)
    sums = np.zeros(ledger.n)
    for slot in ledger.slots[start:at_slot]:
        sums += np.asarray(slot.delivered, dtype=float)
    return sums


def jain_fairness(ledger: RunLedger, at_slot: int, horizon: str = LIFETIME) -> float:
    """Windowed Jain index over per-node delivery counts.

    horizon "lifetime" spans every slot up to at_slot; "adaptive" uses the
    trailing horizon_alpha slots, falling back to the full history while
    fewer slots than the window exist.
    """
    if horizon == LIFETIME:
        window = at_slot
    elif horizon == ADAPTIVE:
        window = ledger.horizon_alpha
    else:
        raise ValueError(f"unknown horizon {horizon!r}")
    return jain_index(_delivery_window_sums(ledger, at_slot, window))


def network_capacity(ledger: RunLedger) -> float:
    """Total bits moved across all links: sum of rate * payload time."""
    if not ledger.slots:
        raise ValueError("empty ledger")
    return float(
        sum(sum(slot.rates_bps) for slot in ledger.slots) * ledger.tx_duration_s
    )


def avg_reuse(ledger: RunLedger, at_slot: int = 0) -> float:
    """Mean fraction of pairs with an effective communication per slot."""
    t = at_slot or len(ledger)
    if t < 1:
        raise ValueError("empty ledger")
    delivered = sum(sum(slot.delivered) for slot in ledger.slots[:t])
    return delivered / (t * ledger.n)


def waste(ledger: RunLedger, at_slot: int = 0) -> float:
    """Mean fraction of active-but-ineffective links per slot."""
    t = at_slot or len(ledger)
    if t < 1:
        raise ValueError("empty ledger")
    wasted = sum(
        sum(abs(s - r) for s, r in zip(slot.sent, slot.delivered))
        for slot in ledger.slots[:t]
    )
    return wasted / (t * ledger.n)


def network_utility(ledger: RunLedger, at_slot: int = 0) -> float:
    """Fairness utility plus reuse utility, in [0, 2]. Lifetime horizon."""
    t = at_slot or len(ledger)
    return jain_fairness(ledger, t, LIFETIME) + avg_reuse(ledger, t)


def delivery_ratio(ledger: RunLedger) -> float:
    """Delivered over sent across the whole run; 1 when nothing was sent."""
    sent = sum(sum(slot.sent) for slot in ledger.slots)
    if sent == 0:
        return 1.0
    delivered = sum(sum(slot.delivered) for slot in ledger.slots)
    return delivered / sent


def delivery_delay(reuse: float) -> float:
    """Expected slots waited per delivery, (1 - R)/R; NaN when R = 0."""
    if reuse < 0 or reuse > 1:
        raise ValueError("reuse must be in [0, 1]")
    if reuse == 0.0:
        return math.nan
    return (1.0 - reuse) / reuse


def normalize(x: float, x_baseline: float, x_max: float) -> float:
    """Performance relative to a reference method: 0 at baseline, 1 at best."""
    if x_max == x_baseline:
        raise ValueError("degenerate normalization range")
    return (x - x_baseline) / (x_max - x_baseline)


@dataclass(frozen=True)
class EpisodeResult:
    """Metric bundle for one finished episode."""

    capacity_bits: float
    fairness: float
    reuse: float
    waste: float
    utility: float
    delivery_ratio: float
    delivery_delay: float
    lifetime_slots: int
    met_lifetime: bool
    episode_reward: float

    def to_dict(self) -> dict:
        return {
            "capacity_bits": self.capacity_bits,
            "fairness": self.fairness,
            "reuse": self.reuse,
            "waste": self.waste,
            "utility": self.utility,
            "delivery_ratio": self.delivery_ratio,
            "delivery_delay": self.delivery_delay,
            "lifetime_slots": self.lifetime_slots,
            "met_lifetime": self.met_lifetime,
            "episode_reward": self.episode_reward,
        }

    CSV_FIELDS = (
        "capacity_bits",
        "fairness",
        "reuse",
        "waste",
        "utility",
        "delivery_ratio",
        "delivery_delay",
        "lifetime_slots",
        "met_lifetime",
        "episode_reward",
    )


def episode_result(
    ledger: RunLedger,
    lifetime_slots: int,
    required_lifetime: int,
    episode_reward: float,
) -> EpisodeResult:
    """Summarize a finished run ledger into the standard metric bundle."""
    reuse = avg_reuse(ledger)
    return EpisodeResult(
        capacity_bits=network_capacity(ledger),
        fairness=jain_fairness(ledger, len(ledger), LIFETIME),
        reuse=reuse,
        waste=waste(ledger),
        utility=network_utility(ledger),
        delivery_ratio=delivery_ratio(ledger),
        delivery_delay=delivery_delay(reuse),
        lifetime_slots=lifetime_slots,
        met_lifetime=lifetime_slots >= required_lifetime,
        episode_reward=episode_reward,
    )
