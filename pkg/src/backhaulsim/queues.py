"""Queue recursions, arrivals, virtual queues, and delay-slack bookkeeping.

All quantities are bits or bits/slot; time is the integer slot index. The
truncated queue updates never go negative, and served bits beyond the backlog
are simply lost to the max(., 0).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Sequence, Tuple

import numpy as np


# ---- single-step queue recursions ----

def step_mbs_queue(queue: float, served: float, arrived: float) -> float:
    """Gateway queue: drain first, then enqueue new arrivals."""
    if min(queue, served, arrived) < 0.0:
        raise ValueError("queue arguments must be nonnegative")
    return max(queue - served, 0.0) + arrived


def step_scbs_queue(queue: float, served: float, received: float) -> float:
    """Relay queue: drain toward the next hop, then enqueue forwarded bits."""
    if min(queue, served, received) < 0.0:
        raise ValueError("queue arguments must be nonnegative")
    return max(queue - served, 0.0) + received


def step_virtual_queue(y: float, phi: float, x: float) -> float:
    """Auxiliary-rate debt queue; grows when the target phi outruns service x."""
    if y < 0.0 or phi < 0.0 or x < 0.0:
        raise ValueError("virtual queue arguments must be nonnegative")
    return max(y + phi - x, 0.0)


def little_delay(queue_bits: float, mean_rate: float) -> float:
    """Little's-law delay proxy in slots for one node's backlog."""
    if mean_rate <= 0.0:
        raise ValueError("mean rate must be positive")
    if queue_bits < 0.0:
        raise ValueError("negative backlog")
    return queue_bits / mean_rate


# ---- arrivals ----

@dataclass
class ArrivalModel:
    """Poisson packet arrivals, fixed packet size, one stream per flow.

    Draws are deterministic in (seed, slot, flow index): each slot spawns one
    generator keyed by (seed, slot) and draws the flows in index order.
    """
    means_bits_per_slot: Tuple[float, ...]
    packet_bits: int = 12000
    seed: int = 0

    def __post_init__(self) -> None:
        if self.packet_bits <= 0:
            raise ValueError("packet size must be positive")
        if any(m < 0.0 for m in self.means_bits_per_slot):
            raise ValueError("negative arrival mean")
        self._lam = np.asarray(self.means_bits_per_slot) / self.packet_bits

    def sample_arrivals(self, t: int) -> np.ndarray:
        """Arrived bits per flow in slot t."""
        if t < 0:
            raise ValueError("slot index must be nonnegative")
        rng = np.random.default_rng((self.seed, 0x5EED, t))
        return rng.poisson(self._lam).astype(np.float64) * self.packet_bits


def sample_arrivals(model: ArrivalModel, t: int) -> np.ndarray:
    return model.sample_arrivals(t)


# ---- container types used by the scheduler ----

class QueueMatrix:
    """Backlogs keyed by (flow, node); entries exist only where flow routes."""

    def __init__(self) -> None:
        self._q: Dict[Tuple[int, int], float] = {}

    def get(self, flow: int, node: int) -> float:
        return self._q.get((flow, node), 0.0)

    def set(self, flow: int, node: int, bits: float) -> None:
        if bits < 0.0:
            raise ValueError("negative backlog")
        self._q[(flow, node)] = bits

    def pop(self, flow: int, node: int) -> float:
        return self._q.pop((flow, node), 0.0)

    def items(self):
        return self._q.items()

    def flow_total(self, flow: int) -> float:
        return sum(v for (f, _), v in self._q.items() if f == flow)

    def total(self) -> float:
        return sum(self._q.values())


class VirtualQueues:
    """One nonnegative debt counter per flow."""

    def __init__(self, n_flows: int) -> None:
        self.y = np.zeros(n_flows)

    def update(self, phi: np.ndarray, x: np.ndarray) -> None:
        if np.any(phi < 0.0) or np.any(x < 0.0):
            raise ValueError("phi and x must be nonnegative")
        self.y = np.maximum(self.y + phi - x, 0.0)


# ---- delay slack ----

@dataclass
class DelaySlackState:
    """Cumulative served/received bits backing the per-node service floors.

    The MBS floor at slot t is mu*(t - eps*beta) minus everything already
    served; a relay's floor is its cumulative intake minus cumulative output
    minus the mu*eps*beta grace. Realized (not expected) service feeds the
    sums. Relay entries are dropped when a path is deselected.
    """
    epsilon: float
    beta_slots: float
    mbs_served: Dict[int, float] = field(default_factory=dict)
    relay_in: Dict[Tuple[int, int], float] = field(default_factory=dict)
    relay_out: Dict[Tuple[int, int], float] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not 0.0 < self.epsilon < 1.0:
            raise ValueError("epsilon must lie in (0, 1)")
        if self.beta_slots <= 0.0:
            raise ValueError("beta must be positive")

    def record_mbs(self, flow: int, served_bits: float) -> None:
        self.mbs_served[flow] = self.mbs_served.get(flow, 0.0) + served_bits

    def record_relay(self, flow: int, node: int, received_bits: float,
                     served_bits: float) -> None:
        key = (flow, node)
        self.relay_in[key] = self.relay_in.get(key, 0.0) + received_bits
        self.relay_out[key] = self.relay_out.get(key, 0.0) + served_bits

    def drop_relay(self, flow: int, node: int) -> None:
        self.relay_in.pop((flow, node), None)
        self.relay_out.pop((flow, node), None)

    def mbs_slack(self, flow: int, mean_rate: float, t: int) -> float:
        """Bits the MBS must push for this flow in slot t to stay on profile."""
        served = self.mbs_served.get(flow, 0.0)
        return mean_rate * (t - self.epsilon * self.beta_slots) - served

    def relay_slack(self, flow: int, node: int, mean_rate: float) -> float:
        """Net bits (out minus in) the relay must clear this slot."""
        key = (flow, node)
        backlog = self.relay_in.get(key, 0.0) - self.relay_out.get(key, 0.0)
        return backlog - mean_rate * self.epsilon * self.beta_slots


def delay_slack(state: DelaySlackState, flow: int, node: int,
                mean_rate: float, t: int) -> float:
    """Required service floor (bits) for (flow, node) at slot t; node 0 = MBS."""
    if node == 0:
        return state.mbs_slack(flow, mean_rate, t)
    return state.relay_slack(flow, node, mean_rate)
