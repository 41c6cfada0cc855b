"""Radio model primitives: antenna pattern, path loss, link rates, topology.

Distances are in meters, powers in watts, rates in bits/s unless a function
says otherwise. Normalized link gains fold antenna gains, array gain, path
loss and noise, so SNR = p * gain is dimensionless.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

TWO_PI = 2.0 * np.pi


# ---- antenna pattern and path loss ----

def antenna_gain(omega: float, theta: float, eta_lobe: float) -> float:
    """Sectored antenna gain at angle omega off boresight.

    Main lobe of width theta carries everything the sidelobes (level
    eta_lobe < 1) do not; total radiated power over the circle is conserved.
    """
    if not 0.0 < theta < TWO_PI:
        raise ValueError(f"beamwidth must lie in (0, 2*pi), got {theta}")
    if not 0.0 <= eta_lobe < 1.0:
        raise ValueError(f"sidelobe level must lie in [0, 1), got {eta_lobe}")
    if abs(omega) <= theta / 2.0:
        return (TWO_PI - (TWO_PI - theta) * eta_lobe) / theta
    return eta_lobe


def pathloss_los(distance_m: float) -> float:
    """Line-of-sight path loss in dB at 28 GHz (close-in model, 1 m reference)."""
    if distance_m < 1.0:
        raise ValueError(f"distance below 1 m reference: {distance_m}")
    return 61.4 + 20.0 * np.log10(distance_m)


def link_rate(p_watts: float, g_eff: float, bandwidth_hz: float) -> float:
    """Shannon rate in bits/s for transmit power p and normalized gain g_eff."""
    if p_watts < 0.0 or g_eff < 0.0:
        raise ValueError("power and gain must be nonnegative")
    return bandwidth_hz * np.log2(1.0 + p_watts * g_eff)


# ---- per-edge channel description ----

@dataclass
class LinkChannel:
    """Directional mmWave edge: pattern geometry plus normalized gain.

    `gain` is the normalized channel gain (antenna gains x array gain x path
    gain / noise power); `imax` is the interference-margin bound folded into
    the effective gain used by the scheduler.
    """
    tx_beamwidth: float
    rx_beamwidth: float
    tx_offset: float = 0.0
    rx_offset: float = 0.0
    eta_lobe: float = 0.1
    gain: float = 1.0
    imax: float = 0.0
    bandwidth_hz: float = 1e9
    n_antennas: int = 8
    tau: float = 0.0

    def pattern_gain(self) -> float:
        gt = antenna_gain(self.tx_offset, self.tx_beamwidth, self.eta_lobe)
        gr = antenna_gain(self.rx_offset, self.rx_beamwidth, self.eta_lobe)
        return gt * gr

    def effective_gain(self) -> float:
        """Worst-case normalized gain seen by the rate allocator."""
        return self.pattern_gain() * self.gain / (1.0 + self.imax)


def array_gain_samples(n_antennas: int, tau: float, samples: int,
                       seed: int) -> np.ndarray:
    """Monte Carlo draws of the conjugate-beamforming gain |h^H v|^2.

    h = sqrt(Nb) * w with w entries iid CN(0, 1/Nb); the precoder points at
    the estimate hhat = sqrt(Nb) * (sqrt(1-tau^2) w + tau what), unit norm.
    tau=0 gives mean Nb (perfect CSI), tau=1 gives mean 1.
    """
    if not 0.0 <= tau <= 1.0:
        raise ValueError(f"estimation error tau must lie in [0, 1], got {tau}")
    if n_antennas < 1 or samples < 1:
        raise ValueError("need at least one antenna and one sample")
    rng = np.random.default_rng(seed)
    scale = np.sqrt(0.5 / n_antennas)  # CN(0, 1/Nb) entries
    w = scale * (rng.standard_normal((samples, n_antennas))
                 + 1j * rng.standard_normal((samples, n_antennas)))
    what = scale * (rng.standard_normal((samples, n_antennas))
                    + 1j * rng.standard_normal((samples, n_antennas)))
    h = np.sqrt(n_antennas) * w
    hhat = np.sqrt(n_antennas) * (np.sqrt(1.0 - tau * tau) * w + tau * what)
    norms = np.linalg.norm(hhat, axis=1)
    norms[norms == 0.0] = 1.0
    v = hhat / norms[:, None]
    return np.abs(np.sum(np.conj(h) * v, axis=1)) ** 2


def ergodic_rate_mc(link: LinkChannel, p_watts: float,
                    interferers: Sequence[Tuple[float, float]] = (),
                    samples: int = 10000, seed: int = 0) -> float:
    """Monte Carlo ergodic rate in bits/s under beamforming and interference.

    Each interferer is a (power, normalized gain) pair with an independent
    channel and precoder drawn from the same geometry. Noise is normalized
    to 1 by the gains.
    """
    if p_watts < 0.0:
        raise ValueError("negative transmit power")
    bf = array_gain_samples(link.n_antennas, link.tau, samples, seed)
    signal = p_watts * link.pattern_gain() * link.gain * bf
    denom = np.ones(samples)
    for k, (pk, gk) in enumerate(interferers):
        bf_k = array_gain_samples(link.n_antennas, link.tau, samples,
                                  seed + 7919 * (k + 1))
        denom += pk * gk * bf_k
    return float(np.mean(link.bandwidth_hz * np.log2(1.0 + signal / denom)))


# ---- network topology ----

@dataclass(frozen=True)
class Path:
    """Simple path from the MBS to a UE, as a node-id tuple."""
    nodes: Tuple[int, ...]

    @property
    def hops(self) -> int:
        return len(self.nodes) - 1

    @property
    def relays(self) -> Tuple[int, ...]:
        return self.nodes[1:-1]

    def edges(self) -> List[Tuple[int, int]]:
        return list(zip(self.nodes[:-1], self.nodes[1:]))


@dataclass
class Flow:
    """Downlink flow entity: MBS -> one UE over a candidate path set."""
    flow_id: int
    ue: int
    candidates: List[Path]
    mean_rate: float  # mu_bar, bits/slot
    source: int = 0

    def __post_init__(self) -> None:
        if self.mean_rate <= 0.0:
            raise ValueError("mean rate must be positive")
        for path in self.candidates:
            if path.nodes[0] != self.source or path.nodes[-1] != self.ue:
                raise ValueError(f"path {path.nodes} does not join "
                                 f"{self.source} to {self.ue}")


@dataclass
class Topology:
    """Directed graph of the MBS (node 0), SCBS relays, and UEs."""
    n_nodes: int
    edges: Dict[Tuple[int, int], float]  # (i, j) -> distance in meters
    budgets_watts: Dict[int, float] = field(default_factory=dict)

    def __post_init__(self) -> None:
        for (i, j), d in self.edges.items():
            if not (0 <= i < self.n_nodes and 0 <= j < self.n_nodes):
                raise ValueError(f"edge ({i},{j}) outside node range")
            if i == j:
                raise ValueError(f"self loop at node {i}")
            if d < 1.0:
                raise ValueError(f"edge ({i},{j}) shorter than 1 m")

    def neighbors(self, node: int) -> List[int]:
        return sorted(j for (i, j) in self.edges if i == node)


class PowerVector:
    """Per-edge, per-flow transmit powers with per-node budget checks."""

    def __init__(self) -> None:
        self._p: Dict[Tuple[int, int, int], float] = {}

    def set(self, i: int, j: int, flow: int, watts: float) -> None:
        if watts < 0.0:
            raise ValueError("negative power entry")
        self._p[(i, j, flow)] = watts

    def get(self, i: int, j: int, flow: int) -> float:
        return self._p.get((i, j, flow), 0.0)

    def node_total(self, node: int) -> float:
        return sum(w for (i, _, _), w in self._p.items() if i == node)

    def items(self):
        return self._p.items()

    def validate(self, budgets_watts: Dict[int, float],
                 tol: float = 1e-9) -> None:
        for node, cap in budgets_watts.items():
            total = self.node_total(node)
            if total > cap + tol:
                raise ValueError(
                    f"node {node} transmits {total:.6g} W over budget {cap:.6g} W")


def enumerate_disjoint_paths(topo: Topology, src: int, dst: int,
                             max_paths: int) -> List[Path]:
    """Greedy node-disjoint path set, deterministic.

    Candidates are all simple src->dst paths ordered by (hop count, node
    sequence); each is kept iff its interior nodes avoid all kept paths.
    """
    if max_paths < 1:
        raise ValueError("max_paths must be >= 1")
    adj: Dict[int, List[int]] = {}
    for (i, j) in topo.edges:
        adj.setdefault(i, []).append(j)
    for node in adj:
        adj[node].sort()

    simple: List[Tuple[int, ...]] = []
    stack: List[int] = [src]
    seen = {src}

    def dfs(node: int) -> None:
        if node == dst:
            simple.append(tuple(stack))
            return
        for nxt in adj.get(node, ()):
            if nxt not in seen:
                seen.add(nxt)
                stack.append(nxt)
                dfs(nxt)
                stack.pop()
                seen.remove(nxt)

    dfs(src)
    simple.sort(key=lambda nodes: (len(nodes), nodes))

    chosen: List[Path] = []
    used: set[int] = set()
    for nodes in simple:
        interior = set(nodes[1:-1])
        if interior & used:
            continue
        chosen.append(Path(nodes))
        used |= interior
        if len(chosen) == max_paths:
            break
    return chosen
