"""Scenario-driven simulation runs: config, main loop, metrics, export.

The run loop sweeps arrival rates and seeds over the configured policies,
collects per-slot queue/delay/rate samples plus per-epoch strategies, and
writes deterministic CSV/JSON artifacts that downstream reporting consumes
without re-running the simulator.

Throughput is measured with a drain tail: after the arrival window the
sources stop and service continues for a fixed number of slots, so the
delivered count reflects sustainable rate rather than whatever happened to
sit in flight at the cutoff. Delay and violation statistics are sampled
only inside [warmup, slots).
"""
from __future__ import annotations

import csv
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import yaml

from . import __version__
from .model import Topology, enumerate_disjoint_paths
from .scheduler import (CandidateRoute, NetworkModel, SchedulerConfig,
                        SimState, baseline_step, slot_step)

POLICIES = ("proposed", "baseline1", "baseline2", "baseline3", "single-hop")
LEARNING_POLICIES = ("proposed", "baseline1")
MANIFEST_FORMAT = "backhaulsim-run-v1"


class ConfigError(ValueError):
    """Scenario validation failure tagged with the offending field."""

    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field_name = field_name


# ---- scenario sections ----

@dataclass(frozen=True)
class TopologySection:
    n_scbs: int = 8
    distance_range_m: Tuple[float, float] = (50.0, 100.0)


@dataclass(frozen=True)
class FlowSection:
    count: int = 2
    arrival_gbps: Tuple[float, ...] = (4.5,)   # sweep points
    packet_mbit: float = 5.5
    select_count: int = 2


@dataclass(frozen=True)
class RadioSection:
    mbs_power_dbm: float = 43.0
    scbs_power_dbm: float = 30.0
    bandwidth_hz: float = 1.0e9
    carrier_ghz: float = 28.0
    n_antennas: int = 8
    antenna_gain_dbi: float = 5.0
    eta_lobe: float = 0.1
    beamwidth_deg: float = 10.0
    align_tau: float = 0.1


@dataclass(frozen=True)
class ChannelSection:
    """Effective per-watt spectral-efficiency gains of each link class.

    The physical radio quantities above pin budgets and bandwidth; the
    per-link coefficients here absorb pathloss, beamforming gain, and noise
    into one number per link class, which is the granularity the allocator
    actually consumes.
    """
    gateway_gain: float = 1.35
    relay_gain_home: float = 7.0
    relay_gain_away: float = 6.0
    direct_gain: float = 23.0
    direct_los_prob: float = 0.30
    blocked_loss: float = 100.0
    collision_loss: float = 1.25
    fade_prob: float = 0.0
    fade_depth: float = 0.35
    fade_block_slots: int = 450


@dataclass(frozen=True)
class LatencySection:
    beta_ms: float = 10.0
    epsilon: float = 0.05


@dataclass(frozen=True)
class LearningSection:
    kappa: float = 2.0
    epoch_slots: int = 50
    rate_exponents: Tuple[float, float, float] = (0.5, 0.55, 0.6)


@dataclass(frozen=True)
class SchedulerSection:
    nu: float = 4.0e12
    a_max_gbps: float = 8.0
    utility_scale: float = 9.0e9
    policies: Tuple[str, ...] = POLICIES


@dataclass(frozen=True)
class RunSection:
    slots: int = 29000
    warmup_slots: int = 4000
    drain_slots: int = 300
    seeds: Tuple[int, ...] = (1, 2, 3, 4, 5, 6, 7, 8, 9, 10)
    slot_ms: float = 0.1
    ccdf_thresholds_slots: Tuple[float, ...] = (
        1.0, 2.0, 5.0, 10.0, 20.0, 50.0, 100.0, 150.0, 200.0)
    workers: int = 1


_SECTIONS = {
    "topology": TopologySection,
    "flows": FlowSection,
    "radio": RadioSection,
    "channel": ChannelSection,
    "latency": LatencySection,
    "learning": LearningSection,
    "scheduler": SchedulerSection,
    "run": RunSection,
}


@dataclass(frozen=True)
class ScenarioConfig:
    topology: TopologySection = field(default_factory=TopologySection)
    flows: FlowSection = field(default_factory=FlowSection)
    radio: RadioSection = field(default_factory=RadioSection)
    channel: ChannelSection = field(default_factory=ChannelSection)
    latency: LatencySection = field(default_factory=LatencySection)
    learning: LearningSection = field(default_factory=LearningSection)
    scheduler: SchedulerSection = field(default_factory=SchedulerSection)
    run: RunSection = field(default_factory=RunSection)

    # -- derived quantities --
    @property
    def slot_s(self) -> float:
        return self.run.slot_ms * 1e-3

    @property
    def beta_slots(self) -> float:
        return self.latency.beta_ms / self.run.slot_ms

    @property
    def bits_per_nat(self) -> float:
        return self.radio.bandwidth_hz * self.slot_s / np.log(2.0)

    @property
    def packet_bits(self) -> int:
        return int(round(self.flows.packet_mbit * 1e6))

    @property
    def a_max_bits(self) -> float:
        return self.scheduler.a_max_gbps * 1e9 * self.slot_s

    @property
    def n_subflows(self) -> int:
        return self.flows.count * self.flows.select_count

    def mu_subflow(self, arrival_gbps: float) -> float:
        """Offered bits per slot per subflow at one sweep point."""
        return arrival_gbps * 1e9 * self.slot_s / self.flows.select_count

    def validate(self) -> None:
        top, flo, rad = self.topology, self.flows, self.radio
        lat, lea, sch, run_ = self.latency, self.learning, self.scheduler, self.run
        if top.n_scbs < 4 or top.n_scbs % 4 != 0:
            raise ConfigError("topology.n_scbs",
                              "need a multiple of 4 relays (two pairings)")
        lo, hi = top.distance_range_m
        if not 1.0 <= lo <= hi:
            raise ConfigError("topology.distance_range_m",
                              "need 1 <= low <= high")
        if flo.count != 2:
            raise ConfigError("flows.count",
                              "exactly two flows are supported")
        if not flo.arrival_gbps:
            raise ConfigError("flows.arrival_gbps", "need at least one point")
        if any(a < 0.0 for a in flo.arrival_gbps):
            raise ConfigError("flows.arrival_gbps", "rates must be >= 0")
        if flo.packet_mbit <= 0.0:
            raise ConfigError("flows.packet_mbit", "must be positive")
        if flo.select_count != 2:
            raise ConfigError("flows.select_count",
                              "each flow splits over exactly two paths")
        for name in ("bandwidth_hz", "carrier_ghz", "eta_lobe",
                     "beamwidth_deg", "align_tau"):
            if getattr(rad, name) <= 0.0:
                raise ConfigError(f"radio.{name}", "must be positive")
        if rad.n_antennas < 1:
            raise ConfigError("radio.n_antennas", "must be >= 1")
        if not 0.0 < lat.epsilon < 1.0:
            raise ConfigError("latency.epsilon", "must lie in (0, 1)")
        if lat.beta_ms <= 0.0:
            raise ConfigError("latency.beta_ms", "must be positive")
        if lea.kappa <= 0.0:
            raise ConfigError("learning.kappa", "must be positive")
        if lea.epoch_slots < 1:
            raise ConfigError("learning.epoch_slots", "must be >= 1")
        if any(e <= 0.0 for e in lea.rate_exponents):
            raise ConfigError("learning.rate_exponents", "must be positive")
        if sch.nu < 0.0:
            raise ConfigError("scheduler.nu", "must be nonnegative")
        if sch.a_max_gbps <= 0.0:
            raise ConfigError("scheduler.a_max_gbps", "must be positive")
        if sch.utility_scale <= 0.0:
            raise ConfigError("scheduler.utility_scale", "must be positive")
        bad = [p for p in sch.policies if p not in POLICIES]
        if bad:
            raise ConfigError("scheduler.policies", f"unknown: {bad}")
        if not sch.policies:
            raise ConfigError("scheduler.policies", "need at least one")
        if run_.slots < 1:
            raise ConfigError("run.slots", "must be >= 1")
        if not 0 <= run_.warmup_slots < run_.slots:
            raise ConfigError("run.warmup_slots",
                              "must lie in [0, slots)")
        if run_.drain_slots < 0:
            raise ConfigError("run.drain_slots", "must be >= 0")
        if not run_.seeds:
            raise ConfigError("run.seeds", "seed list must be nonempty")
        if run_.slot_ms <= 0.0:
            raise ConfigError("run.slot_ms", "must be positive")
        if run_.workers < 1:
            raise ConfigError("run.workers", "must be >= 1")

    def to_dict(self) -> dict:
        out: dict = {}
        for name, cls in _SECTIONS.items():
            sec = getattr(self, name)
            out[name] = {f.name: _plain(getattr(sec, f.name))
                         for f in fields(cls)}
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "ScenarioConfig":
        if not isinstance(data, dict):
            raise ConfigError("scenario", "top level must be a mapping")
        unknown = set(data) - set(_SECTIONS)
        if unknown:
            raise ConfigError("scenario", f"unknown sections: {sorted(unknown)}")
        kwargs = {}
        for name, sec_cls in _SECTIONS.items():
            raw = data.get(name, {})
            if not isinstance(raw, dict):
                raise ConfigError(name, "section must be a mapping")
            names = {f.name for f in fields(sec_cls)}
            bad = set(raw) - names
            if bad:
                raise ConfigError(name, f"unknown fields: {sorted(bad)}")
            coerced = {k: _coerce(sec_cls, k, v) for k, v in raw.items()}
            kwargs[name] = sec_cls(**coerced)
        scn = cls(**kwargs)
        scn.validate()
        return scn


def _plain(v):
    if isinstance(v, tuple):
        return [_plain(x) for x in v]
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    return v


def _coerce(sec_cls, name: str, value):
    """Coerce a parsed YAML value to the section field's declared type.

    YAML 1.1 reads unsigned exponents like 1.0e9 as strings, so numeric
    fields accept strings and ints and convert explicitly.
    """
    ftype = {f.name: f.type for f in fields(sec_cls)}[name]

    def conv(v, t: str):
        try:
            if t == "int":
                return int(v)
            if t == "float":
                return float(v)
        except (TypeError, ValueError):
            raise ConfigError(name, f"expected {t}, got {v!r}")
        return v

    if isinstance(value, (list, tuple)):
        if "Tuple[int" in ftype:
            inner = "int"
        elif "Tuple[float" in ftype:
            inner = "float"
        else:
            inner = ""
        return tuple(conv(v, inner) for v in value)
    return conv(value, ftype)


def load_scenario(path) -> ScenarioConfig:
    """Parse a scenario file (YAML mapping of sections)."""
    text = Path(path).read_text()
    data = yaml.safe_load(text)
    if data is None:
        data = {}
    return ScenarioConfig.from_dict(data)


def dbm_to_watts(dbm: float) -> float:
    return 10.0 ** ((dbm - 30.0) / 10.0)


# ---- network construction ----

def relay_pairings(n_scbs: int) -> List[List[Tuple[int, int]]]:
    """Two-hop relay pairs per flow over shared cells 1..n.

    Flow 0 chains adjacent cells; flow 1 chains across each quartet, so
    within a flow the chains partition the cells (node-disjoint candidates)
    while between flows any non-complementary joint choice shares a cell.
    """
    f0 = [(2 * i + 1, 2 * i + 2) for i in range(n_scbs // 2)]
    f1 = []
    for q in range(n_scbs // 4):
        b = 4 * q
        f1.extend([(b + 1, b + 3), (b + 2, b + 4)])
    return [f0, f1]


def home_halves(n_scbs: int) -> List[set]:
    half = n_scbs // 2
    return [set(range(1, half + 1)), set(range(half + 1, n_scbs + 1))]


def build_network(scn: ScenarioConfig) -> NetworkModel:
    """Derive candidate routes from the relay graph and attach link gains.

    Distances are drawn once from a fixed-key generator so the geometry is a
    property of the scenario, not of the run seeds; paired-seed comparisons
    then see identical networks.
    """
    top, ch = scn.topology, scn.channel
    n_scbs = top.n_scbs
    n_flows = scn.flows.count
    pairings = relay_pairings(n_scbs)
    homes = home_halves(n_scbs)
    rng = np.random.default_rng((0xD15, n_scbs))
    lo, hi = top.distance_range_m

    def draw() -> float:
        return float(rng.uniform(lo, hi))

    n_nodes = 1 + n_scbs + n_flows
    # each flow steers its own beams, so candidate paths live on a per-flow
    # edge set; flows couple through shared relay nodes, not shared edges
    edges_all: Dict[Tuple[int, int], float] = {}
    flow_edges: List[Dict[Tuple[int, int], float]] = []
    for f in range(n_flows):
        ue = 1 + n_scbs + f
        ef: Dict[Tuple[int, int], float] = {}
        for (r1, r2) in pairings[f]:
            for e in ((0, r1), (r1, r2), (r2, ue)):
                if e not in edges_all:
                    edges_all[e] = draw()
                ef[e] = edges_all[e]
        flow_edges.append(ef)
    budgets = {0: dbm_to_watts(scn.radio.mbs_power_dbm)}
    for s in range(1, n_scbs + 1):
        budgets[s] = dbm_to_watts(scn.radio.scbs_power_dbm)

    routes: List[List[CandidateRoute]] = []
    for f in range(n_flows):
        ue = 1 + n_scbs + f
        topo = Topology(n_nodes=n_nodes, edges=flow_edges[f],
                        budgets_watts=budgets)
        paths = enumerate_disjoint_paths(topo, 0, ue, max_paths=len(pairings[f]))
        want = {(r1, r2) for (r1, r2) in pairings[f]}
        got = {p.relays for p in paths}
        if got != want:
            raise ConfigError("topology.n_scbs",
                              f"flow {f} candidate set {sorted(got)} does not "
                              f"partition the relays as {sorted(want)}")
        cand = []
        for pid, p in enumerate(sorted(paths, key=lambda q: q.relays)):
            g1 = (ch.relay_gain_home if p.relays[0] in homes[f]
                  else ch.relay_gain_away)
            g2 = (ch.relay_gain_home if p.relays[1] in homes[f]
                  else ch.relay_gain_away)
            cand.append(CandidateRoute(path_id=pid, nodes=p.nodes,
                                       gains=(ch.gateway_gain, g1, g2)))
        routes.append(cand)

    return NetworkModel(
        n_flows=n_flows,
        routes=routes,
        budgets=budgets,
        bits_per_nat=scn.bits_per_nat,
        direct_gains=[ch.direct_gain] * n_flows,
        direct_plos=[ch.direct_los_prob] * n_flows,
        blocked_loss=ch.blocked_loss,
        collision_loss=ch.collision_loss,
        fade_prob=ch.fade_prob,
        fade_depth=ch.fade_depth,
        fade_block=ch.fade_block_slots,
    )


def scheduler_config(scn: ScenarioConfig, policy: str,
                     seed: int) -> SchedulerConfig:
    return SchedulerConfig(
        nu=scn.scheduler.nu,
        a_max=scn.a_max_bits,
        epsilon=scn.latency.epsilon,
        beta_slots=scn.beta_slots,
        epoch_slots=scn.learning.epoch_slots,
        policy=policy,
        select_count=scn.flows.select_count,
        kappa=scn.learning.kappa,
        rate_exponents=scn.learning.rate_exponents,
        utility_scale=scn.scheduler.utility_scale,
        packet_bits=scn.packet_bits,
        seed=seed,
    )


# ---- metrics log ----

@dataclass
class RunLog:
    """Per-(policy, seed, sweep point) sample arrays, in slot order."""
    policy: str
    seed: int
    arrival_gbps: float
    slot: np.ndarray
    subflow: np.ndarray
    node: np.ndarray
    queue_bits: np.ndarray
    delay_slots: np.ndarray
    rate_bps: np.ndarray
    strategies: List[Tuple[int, int, Tuple[float, ...]]]
    events: List[Tuple[int, str]]
    arrived_bits: np.ndarray     # per subflow, arrival window only
    delivered_bits: np.ndarray   # per subflow, including the drain tail
    sca_instances: List[dict] = field(default_factory=list)

    def key(self) -> Tuple[float, int, int]:
        return (self.arrival_gbps, POLICIES.index(self.policy), self.seed)


@dataclass
class MetricsLog:
    """Merged, order-independent collection of isolated run logs."""
    scenario: ScenarioConfig
    runs: List[RunLog]

    @classmethod
    def merge(cls, scenario: ScenarioConfig,
              runs: Iterable[RunLog]) -> "MetricsLog":
        ordered = sorted(runs, key=RunLog.key)
        for r in ordered:
            if len(r.slot) and np.any(np.diff(r.slot) < 0):
                raise ValueError("run log slots must be nondecreasing")
        return cls(scenario=scenario, runs=ordered)


def _simulate_one(scn: ScenarioConfig, policy: str, seed: int,
                  arrival_gbps: float) -> RunLog:
    net = build_network(scn)
    cfg = scheduler_config(scn, policy, seed)
    mu = scn.mu_subflow(arrival_gbps)
    state = SimState(net, cfg, [mu] * scn.n_subflows)
    nsf = state.n_subflows
    step = slot_step if policy == "proposed" else baseline_step
    single = policy == "single-hop"
    npos = 1 if single else len(state.route_of(0).nodes) - 1
    total = scn.run.slots + scn.run.drain_slots
    n_rows = total * nsf * npos
    slot_col = np.empty(n_rows, dtype=np.int64)
    sf_col = np.empty(n_rows, dtype=np.int64)
    node_col = np.empty(n_rows, dtype=np.int64)
    q_col = np.empty(n_rows)
    d_col = np.empty(n_rows)
    r_col = np.empty(n_rows)
    strategies: List[Tuple[int, int, Tuple[float, ...]]] = []
    events: List[Tuple[int, str]] = []
    arrived = np.zeros(nsf)
    delivered = np.zeros(nsf)
    slot_s = scn.slot_s
    inv_mu = 1.0 / mu if mu > 0.0 else 0.0
    r = 0
    for t in range(total):
        if t == scn.run.slots:
            state.draining = True
        dec = step(state, t)
        arrived += dec.arrivals
        delivered += dec.delivered
        for sf in range(nsf):
            nodes = (0,) if single else state.route_of(sf).nodes[:npos]
            for k, node in enumerate(nodes):
                slot_col[r] = t
                sf_col[r] = sf
                node_col[r] = node
                q = dec.queues[sf, k]
                q_col[r] = q
                d_col[r] = q * inv_mu
                r_col[r] = dec.served[sf, k] / slot_s
                r += 1
        if dec.events:
            events.extend((t, e) for e in dec.events)
        if policy in LEARNING_POLICIES and t % cfg.epoch_slots == 0:
            for f in range(net.n_flows):
                pi = state.learners[f].pi
                strategies.append((t // cfg.epoch_slots, f,
                                   tuple(float(p) for p in pi)))
    return RunLog(
        policy=policy, seed=seed, arrival_gbps=arrival_gbps,
        slot=slot_col[:r], subflow=sf_col[:r], node=node_col[:r],
        queue_bits=q_col[:r], delay_slots=d_col[:r], rate_bps=r_col[:r],
        strategies=strategies, events=events,
        arrived_bits=arrived, delivered_bits=delivered,
        sca_instances=list(state.sca_trace),
    )


def _simulate_star(args) -> RunLog:
    return _simulate_one(*args)


def run(config: ScenarioConfig, policies: Optional[Sequence[str]] = None,
        seeds: Optional[Sequence[int]] = None) -> MetricsLog:
    """Execute the configured sweep and return the merged metrics log."""
    config.validate()
    pols = tuple(policies) if policies else config.scheduler.policies
    bad = [p for p in pols if p not in POLICIES]
    if bad:
        raise ConfigError("scheduler.policies", f"unknown: {bad}")
    sds = tuple(seeds) if seeds else config.run.seeds
    if not sds:
        raise ConfigError("run.seeds", "seed list must be nonempty")
    specs = [(config, p, s, lam)
             for lam in config.flows.arrival_gbps
             for p in pols
             for s in sds]
    if config.run.workers > 1 and len(specs) > 1:
        with ProcessPoolExecutor(max_workers=config.run.workers) as ex:
            runs = list(ex.map(_simulate_star, specs))
    else:
        runs = [_simulate_one(*spec) for spec in specs]
    return MetricsLog.merge(config, runs)


# ---- aggregation ----

def ccdf(samples: Sequence[float], thresholds: Sequence[float]) -> np.ndarray:
    """Fraction of samples strictly above each threshold."""
    s = np.asarray(samples, dtype=np.float64)
    if s.size == 0:
        raise ValueError("ccdf needs at least one sample")
    s = np.sort(s)
    taus = np.asarray(thresholds, dtype=np.float64)
    idx = np.searchsorted(s, taus, side="right")
    return (s.size - idx) / s.size


def _positions(rl: RunLog, nsf: int) -> Tuple[np.ndarray, int]:
    """Hop position of every sample row.

    Rows are emitted (slot, subflow, position)-major, so position cycles
    fastest; it stays meaningful across path switches where node ids do not
    (position 0 is always the gateway hop).
    """
    size = rl.slot.size
    if size == 0:
        return np.zeros(0, dtype=np.int64), 1
    npos = size // ((int(rl.slot.max()) + 1) * nsf)
    return np.arange(size, dtype=np.int64) % npos, npos


def summarize(log: MetricsLog) -> dict:
    """Per-policy, per-sweep-point delay, throughput, and tail statistics."""
    if not log.runs:
        raise ValueError("metrics log is empty")
    scn = log.scenario
    warm, slots = scn.run.warmup_slots, scn.run.slots
    beta = scn.beta_slots
    taus = list(scn.run.ccdf_thresholds_slots)
    horizon_s = slots * scn.slot_s
    nsf = scn.n_subflows

    groups: Dict[Tuple[str, float], List[RunLog]] = {}
    for r in log.runs:
        groups.setdefault((r.policy, r.arrival_gbps), []).append(r)

    policies: Dict[str, dict] = {}
    for (policy, lam), runs in sorted(
            groups.items(), key=lambda kv: (POLICIES.index(kv[0][0]), kv[0][1])):
        delay_sum = 0.0
        delay_n = 0
        hop_sums: Optional[np.ndarray] = None
        hop_counts: Optional[np.ndarray] = None
        gate_pool: List[np.ndarray] = []
        per_seed: Dict[str, list] = {
            "seed": [], "mean_onehop_delay_slots": [],
            "violation_freq": [], "max_gateway_delay_slots": [],
            "throughput_gbps": [],
        }
        thr_flows = np.zeros(scn.flows.count)
        for rl in sorted(runs, key=lambda r: r.seed):
            pos, npos = _positions(rl, nsf)
            win = (rl.slot >= warm) & (rl.slot < slots)
            d = rl.delay_slots[win]
            delay_sum += float(d.sum())
            delay_n += d.size
            idx = rl.subflow[win] * npos + pos[win]
            if hop_sums is None:
                hop_sums = np.zeros(nsf * npos)
                hop_counts = np.zeros(nsf * npos, dtype=np.int64)
            hop_sums += np.bincount(idx, weights=d, minlength=nsf * npos)
            hop_counts += np.bincount(idx, minlength=nsf * npos)
            gate = d[pos[win] == 0]
            gate_pool.append(gate)
            flows_thr = [
                float(sum(rl.delivered_bits[f * scn.flows.select_count + j]
                          for j in range(scn.flows.select_count)))
                / horizon_s / 1e9
                for f in range(scn.flows.count)
            ]
            thr_flows += np.asarray(flows_thr)
            per_seed["seed"].append(rl.seed)
            per_seed["mean_onehop_delay_slots"].append(
                float(d.mean()) if d.size else 0.0)
            per_seed["violation_freq"].append(
                float((gate > beta).mean()) if gate.size else 0.0)
            per_seed["max_gateway_delay_slots"].append(
                float(gate.max()) if gate.size else 0.0)
            per_seed["throughput_gbps"].append(flows_thr)
        gate_all = np.concatenate(gate_pool) if gate_pool else np.zeros(0)
        n_gate = int(gate_all.size)
        # end-to-end delay: per-subflow sum of per-hop means, then averaged
        if hop_sums is None or not hop_counts.any():
            e2e = 0.0
        else:
            means = np.divide(hop_sums, hop_counts,
                              out=np.zeros_like(hop_sums),
                              where=hop_counts > 0)
            e2e = float(means.reshape(nsf, -1).sum(axis=1).mean())
        point = {
            "n_delay_samples": delay_n,
            "mean_onehop_delay_slots": (delay_sum / delay_n) if delay_n else 0.0,
            "end_to_end_delay_slots": e2e,
            "throughput_gbps": {
                "per_flow": [float(x) for x in thr_flows / max(len(runs), 1)],
                "mean": float(thr_flows.mean() / max(len(runs), 1)),
            },
            "gateway": {
                "n_samples": n_gate,
                "violation_freq": (
                    float((gate_all > beta).mean()) if n_gate else 0.0),
                "max_delay_slots": float(gate_all.max()) if n_gate else 0.0,
                "ccdf": [[float(t), float(p)] for t, p in
                         zip(taus, ccdf(gate_all, taus))] if n_gate else [],
            },
            "per_seed": per_seed,
        }
        policies.setdefault(policy, {"sweep": {}})
        policies[policy]["sweep"][f"{lam:g}"] = point
    return {
        "beta_slots": beta,
        "epsilon": scn.latency.epsilon,
        "warmup_slots": warm,
        "slots": slots,
        "policies": policies,
    }


# ---- export / reload ----

def _fmt(x: float) -> str:
    return repr(float(x))


def export(log: MetricsLog, summary: dict, out_dir) -> Dict[str, Path]:
    """Write samples.csv, summary.json, manifest.json, and side tables."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        paths = {
            "samples": out / "samples.csv",
            "summary": out / "summary.json",
            "manifest": out / "manifest.json",
            "strategy": out / "strategy.csv",
            "events": out / "events.csv",
        }
        with open(paths["samples"], "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["slot", "seed", "policy", "flow", "node",
                        "queue_bits", "delay_slots", "rate_bps"])
            for rl in log.runs:
                for i in range(len(rl.slot)):
                    w.writerow([
                        int(rl.slot[i]), rl.seed, rl.policy,
                        int(rl.subflow[i]), int(rl.node[i]),
                        _fmt(rl.queue_bits[i]), _fmt(rl.delay_slots[i]),
                        _fmt(rl.rate_bps[i]),
                    ])
        with open(paths["strategy"], "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["policy", "seed", "arrival_gbps", "epoch",
                        "flow", "path", "prob"])
            for rl in log.runs:
                for (epoch, flow, pi) in rl.strategies:
                    for path, prob in enumerate(pi):
                        w.writerow([rl.policy, rl.seed, _fmt(rl.arrival_gbps),
                                    epoch, flow, path, _fmt(prob)])
        with open(paths["events"], "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["policy", "seed", "arrival_gbps", "slot", "event"])
            for rl in log.runs:
                for (t, e) in rl.events:
                    w.writerow([rl.policy, rl.seed, _fmt(rl.arrival_gbps),
                                t, e])
        dumps = [
            {"policy": rl.policy, "seed": rl.seed,
             "arrival_gbps": rl.arrival_gbps, **inst}
            for rl in log.runs for inst in rl.sca_instances
        ]
        if dumps:
            paths["sca_dump"] = out / "sca_dump.jsonl"
            with open(paths["sca_dump"], "w") as fh:
                for d in dumps:
                    fh.write(json.dumps(d, sort_keys=True) + "\n")
        with open(paths["summary"], "w") as fh:
            json.dump(summary, fh, indent=2, sort_keys=True)
            fh.write("\n")
        manifest = {
            "format": MANIFEST_FORMAT,
            "version": __version__,
            "scenario": log.scenario.to_dict(),
            "policies": sorted({rl.policy for rl in log.runs},
                               key=POLICIES.index),
            "seeds": sorted({rl.seed for rl in log.runs}),
            "arrival_gbps": sorted({rl.arrival_gbps for rl in log.runs}),
            "delivered_bits": {
                f"{rl.arrival_gbps:g}/{rl.policy}/{rl.seed}":
                    [float(x) for x in rl.delivered_bits]
                for rl in log.runs
            },
        }
        with open(paths["manifest"], "w") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True)
            fh.write("\n")
    except OSError as exc:
        raise IOError(f"export to {out} failed: {exc}") from exc
    return paths


def load_runs(run_dir) -> MetricsLog:
    """Rebuild a MetricsLog from an exported directory.

    The sample CSV does not carry the sweep point, so rows are split back
    into runs by their fixed per-run length (slots x subflows x hops) and
    matched to the manifest's sorted arrival list, mirroring export order.
    """
    out = Path(run_dir)
    man_path = out / "manifest.json"
    if not man_path.exists():
        raise IOError(f"no run manifest under {out}")
    try:
        manifest = json.loads(man_path.read_text())
        scn = ScenarioConfig.from_dict(manifest["scenario"])
        lams = [float(x) for x in manifest["arrival_gbps"]]
        total = scn.run.slots + scn.run.drain_slots
        hops = len(build_network(scn).routes[0][0].nodes) - 1

        def seg_rows(policy: str) -> int:
            return total * scn.n_subflows * (1 if policy == "single-hop"
                                             else hops)

        buckets: Dict[Tuple[str, int], List[dict]] = {}
        seen: Dict[Tuple[str, int], int] = {}
        with open(out / "samples.csv", newline="") as fh:
            rd = csv.reader(fh)
            next(rd)  # header
            for rec in rd:
                slot, seed, policy, sf, node, q, d, rate = rec
                key = (policy, int(seed))
                n = seen.get(key, 0)
                blist = buckets.setdefault(key, [])
                if n % seg_rows(policy) == 0:
                    blist.append({"slot": [], "subflow": [], "node": [],
                                  "queue_bits": [], "delay_slots": [],
                                  "rate_bps": []})
                seen[key] = n + 1
                b = blist[-1]
                b["slot"].append(int(slot))
                b["subflow"].append(int(sf))
                b["node"].append(int(node))
                b["queue_bits"].append(float(q))
                b["delay_slots"].append(float(d))
                b["rate_bps"].append(float(rate))
        runs = []
        for (policy, seed), blist in sorted(buckets.items()):
            if len(blist) != len(lams):
                raise ValueError(
                    f"{policy}/{seed}: {len(blist)} sweep segments in the "
                    f"CSV but {len(lams)} arrival rates in the manifest")
            for lam, b in zip(lams, blist):
                delivered = manifest["delivered_bits"][
                    f"{lam:g}/{policy}/{seed}"]
                runs.append(RunLog(
                    policy=policy, seed=seed, arrival_gbps=lam,
                    slot=np.asarray(b["slot"]),
                    subflow=np.asarray(b["subflow"]),
                    node=np.asarray(b["node"]),
                    queue_bits=np.asarray(b["queue_bits"]),
                    delay_slots=np.asarray(b["delay_slots"]),
                    rate_bps=np.asarray(b["rate_bps"]),
                    strategies=[], events=[],
                    arrived_bits=np.full(scn.n_subflows, np.nan),
                    delivered_bits=np.asarray(delivered),
                ))
    except (OSError, KeyError, ValueError, StopIteration) as exc:
        raise IOError(f"cannot parse run directory {out}: {exc}") from exc
    return MetricsLog.merge(scn, runs)
