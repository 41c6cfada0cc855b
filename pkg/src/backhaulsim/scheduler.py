"""Per-slot scheduling policies over a relayed backhaul network.

The unit of bookkeeping is the subflow: each flow pre-splits its traffic
50/50 onto two selected routes, and every subflow owns its queues, virtual
queue, and delay-slack ledgers. Policies differ along two axes:

* path choice: regret learning (proposed, baseline1) vs uniform random
  (baseline2, baseline3) vs none (single-hop);
* allocation: service-floor enforcement via the convex subproblem
  (proposed, baseline2) vs pure backpressure water-filling (baseline1,
  baseline3) vs a blockage-penalized direct link (single-hop).

Floor-enforcing allocation runs a fast exact path when every relay floor is
vacuous (the problem separates into a gateway water-fill plus best-effort
relay completion) and falls back to the iterative convex solver otherwise.
Infeasible instances degrade along a fixed ladder: drop gateway floors
first, then fall back to backpressure for the slot; every downgrade is
recorded as an event.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .learning import LearnerState, learn_step, sample_paths
from .queues import ArrivalModel, DelaySlackState, QueueMatrix, VirtualQueues
from .ratealloc import (AllocError, ChainSpec, InfeasibleError, ScaProblem,
                        sca_solve, water_fill)

POLICIES = ("proposed", "baseline1", "baseline2", "baseline3", "single-hop")
MODE_FAST = 0
MODE_SCA = 1
MODE_NO_XFLOOR = 2
MODE_BACKPRESSURE = 3

_LEARNING = ("proposed", "baseline1")
_RANDOM_PATHS = ("baseline2", "baseline3")
_FLOORED = ("proposed", "baseline2")


@dataclass(frozen=True)
class CandidateRoute:
    """One gateway-to-UE route: node ids and per-edge effective gains."""
    path_id: int
    nodes: Tuple[int, ...]  # (0, relay..., ue)
    gains: np.ndarray       # len(nodes) - 1, linear SNR per watt

    def __post_init__(self) -> None:
        if len(self.nodes) < 2 or self.nodes[0] != 0:
            raise ValueError("route must start at the gateway node 0")
        object.__setattr__(self, "gains", np.asarray(self.gains, dtype=np.float64))
        if len(self.gains) != len(self.nodes) - 1:
            raise ValueError("need one gain per edge")
        if np.any(self.gains <= 0.0):
            raise ValueError("gains must be positive")

    @property
    def relays(self) -> Tuple[int, ...]:
        return self.nodes[1:-1]


@dataclass
class NetworkModel:
    """Static radio/topology inputs shared by every policy."""
    n_flows: int
    routes: List[List[CandidateRoute]]    # per flow: candidate routes
    budgets: Dict[int, float]             # node id -> watts
    bits_per_nat: float                   # W * slot / ln 2
    direct_gains: np.ndarray = field(default_factory=lambda: np.zeros(0))
    direct_plos: np.ndarray = field(default_factory=lambda: np.zeros(0))
    blocked_loss: float = 100.0           # linear gain divisor when blocked
    collision_loss: float = 1.0           # divisor on edges at relays shared by flows
    fade_prob: float = 0.0                # per-block deep-fade chance per gateway link
    fade_depth: float = 1.0               # gain multiplier while faded
    fade_block: int = 300                 # fade coherence time, slots

    def __post_init__(self) -> None:
        if self.n_flows < 1 or len(self.routes) != self.n_flows:
            raise ValueError("need one candidate list per flow")
        if self.bits_per_nat <= 0.0:
            raise ValueError("bits_per_nat must be positive")


@dataclass
class SchedulerConfig:
    nu: float                     # utility weight in the drift tradeoff
    a_max: float                  # admitted-rate cap, bits/slot per subflow
    epsilon: float
    beta_slots: float
    epoch_slots: int
    policy: str = "proposed"
    select_count: int = 2
    kappa: float = 5.0
    regret_cap: float = 1e6
    rate_exponents: Tuple[float, float, float] = (0.5, 0.55, 0.6)
    utility_scale: float = 1.0
    packet_bits: int = 12000
    seed: int = 0
    gap_tol: float = 1e-6
    sca_tol: float = 1e-5
    sca_max_iter: int = 30
    rehome_on_switch: bool = True
    warm_start: bool = True

    def __post_init__(self) -> None:
        if self.nu < 0.0:
            raise ValueError("nu must be nonnegative")
        if self.epoch_slots < 1:
            raise ValueError("epoch must be at least one slot")
        if self.policy not in POLICIES:
            raise ValueError(f"unknown policy {self.policy!r}")
        if self.select_count < 1:
            raise ValueError("must select at least one route")
        if not 0.0 < self.epsilon < 1.0:
            raise ValueError("epsilon must lie in (0, 1)")
        if self.a_max <= 0.0 or self.beta_slots <= 0.0:
            raise ValueError("a_max and beta must be positive")


@dataclass
class SlotDecision:
    """Everything one slot decided and observed, per subflow."""
    t: int
    mode: int
    paths: np.ndarray        # active candidate index per subflow
    phi: np.ndarray
    x_alloc: np.ndarray      # allocated gateway-edge bits per subflow
    rates: np.ndarray        # allocated bits per (subflow, hop)
    served: np.ndarray       # realized bits per (subflow, hop)
    delivered: np.ndarray    # bits reaching the UE per subflow
    arrivals: np.ndarray
    queues: np.ndarray       # end-of-slot backlog per (subflow, hop position)
    y: np.ndarray            # end-of-slot virtual queues
    events: List[str] = field(default_factory=list)
    sca_iterations: int = 0
    powers: np.ndarray = field(default_factory=lambda: np.zeros(0))
    power_slack: np.ndarray = field(default_factory=lambda: np.zeros(0))
    amax_slack: np.ndarray = field(default_factory=lambda: np.zeros(0))


class SimState:
    """Mutable per-run state; all randomness is keyed by (seed, purpose, t)."""

    def __init__(self, net: NetworkModel, cfg: SchedulerConfig,
                 mean_bits_per_slot: Sequence[float],
                 capture_problems: bool = False):
        if len(mean_bits_per_slot) != net.n_flows * cfg.select_count:
            raise ValueError("need one arrival mean per subflow")
        self.net = net
        self.cfg = cfg
        self.n_subflows = net.n_flows * cfg.select_count
        self.mu = np.asarray(mean_bits_per_slot, dtype=np.float64)
        self.queues = QueueMatrix()
        self.transport = np.zeros(self.n_subflows)
        self.draining = False
        self.sca_trace: List[dict] = []
        self.virtual = VirtualQueues(self.n_subflows)
        self.slack = DelaySlackState(cfg.epsilon, cfg.beta_slots)
        self.arrivals = ArrivalModel(tuple(self.mu), packet_bits=cfg.packet_bits,
                                     seed=cfg.seed)
        self.learners = [
            LearnerState(len(net.routes[f]), kappa=cfg.kappa,
                         regret_cap=cfg.regret_cap,
                         exponents=cfg.rate_exponents)
            for f in range(net.n_flows)
        ]
        self.active = np.zeros(self.n_subflows, dtype=int)
        for sf in range(self.n_subflows):
            self.active[sf] = sf % cfg.select_count
        self.collided: set = set()
        self.epoch_srv0 = np.zeros(self.n_subflows)
        self.epoch_x = np.zeros(self.n_subflows)
        self.epoch_rel = np.zeros(self.n_subflows)
        self.epoch_q0 = np.zeros(self.n_subflows)
        self.epoch_y = np.zeros(self.n_subflows)
        self.epoch_phi = np.zeros(self.n_subflows)
        self.util_baseline: List[Optional[float]] = [None] * net.n_flows
        self.epoch_index = 0
        self.dumps: Optional[List[dict]] = [] if capture_problems else None
        self._gain_cache: Dict[int, np.ndarray] = {}
        self._fade_nodes = sorted({r.relays[0] for routes in net.routes
                                   for r in routes if r.relays})
        self.t_now = 0
        self._refresh_gains()

    # -- helpers --

    def flow_of(self, sf: int) -> int:
        return sf // self.cfg.select_count

    def route_of(self, sf: int) -> CandidateRoute:
        return self.net.routes[self.flow_of(sf)][self.active[sf]]

    def gains_of(self, sf: int) -> np.ndarray:
        return self._gain_cache[sf]

    def _refresh_gains(self) -> None:
        """Apply collision penalties and this epoch's gateway-link fades.

        Fades are drawn for every gateway link in node order so the
        realization depends only on (seed, epoch), not on path selection.
        """
        net = self.net
        fades: Dict[int, float] = {}
        if net.fade_prob > 0.0:
            block = self.t_now // net.fade_block
            rng = np.random.default_rng((self.cfg.seed, 0xFADE, block))
            draws = rng.random(len(self._fade_nodes))
            for node, u in zip(self._fade_nodes, draws):
                fades[node] = net.fade_depth if u < net.fade_prob else 1.0
        for sf in range(self.n_subflows):
            route = self.route_of(sf)
            g = route.gains.astype(np.float64).copy()
            if self.collided:
                for k in range(len(g)):
                    if route.nodes[k] in self.collided:
                        g[k] /= net.collision_loss
            if route.relays and fades:
                g[0] *= fades.get(route.relays[0], 1.0)
            self._gain_cache[sf] = g


# ---- epoch handling: learning, path draws, rehoming ----

def _epoch_update(state: SimState, t: int) -> List[str]:
    cfg = state.cfg
    net = state.net
    events: List[str] = []
    if cfg.policy == "single-hop":
        return events
    ep = state.epoch_index
    if t > 0 and cfg.policy in _LEARNING:
        for f in range(net.n_flows):
            sfs = [f * cfg.select_count + j for j in range(cfg.select_count)]
            T = float(cfg.epoch_slots)
            # every route is priced with the same flow-level drift weights,
            # ridden routes by their realized rates and idle routes by the
            # chain rate they would have offered; identical pricing keeps
            # per-subflow queue history out of the path comparison
            # backlog weight saturates at twice the slack profile: arrival
            # bursts would otherwise swamp the chain-capacity signal
            q0_cap = 2.0 * cfg.epsilon * cfg.beta_slots * state.mu[sfs].mean()
            q0 = min(state.epoch_q0[sfs].mean() / T, q0_cap)
            ybar = state.epoch_y[sfs].mean() / T
            phib = state.epoch_phi[sfs].mean() / T
            xbar = state.epoch_x[sfs].mean() / T
            # own routes are node-disjoint, so only other flows' relays
            # matter for whether a route's chain is degraded
            occupied: set = set()
            for sf in range(state.n_subflows):
                if sf not in sfs:
                    occupied.update(state.route_of(sf).relays)
            ridden = {int(state.active[sf]): sf for sf in sfs}
            per_path = {}
            for m, route in enumerate(net.routes[f]):
                xm = _counterfactual_rate(state, route, occupied)
                # a clean route sees the flow's admission grant; a shared
                # one is throttled to its degraded chain rate
                shared = bool(set(route.relays) & occupied)
                xgw = min(xm, xbar) if shared else xbar
                u = q0 * xm + ybar * (xgw - phib)
                # ridden routes additionally pay for the relay backlog they
                # actually built this epoch
                if m in ridden:
                    u -= state.epoch_rel[ridden[m]] / T
                per_path[m] = u / cfg.utility_scale
            # benchmark is the flow-aggregate utility over its candidate
            # set; unattractive idle paths hold the ridden ones' regret
            # positive, which keeps the strategy from drifting uniform
            realized = sum(per_path.values()) / len(per_path)
            # deviations from a slow running baseline: a constant shift when
            # utilities are stationary (regret-invariant), but keeps load
            # transients from drowning path-relative differences
            if state.util_baseline[f] is None:
                state.util_baseline[f] = realized
            base = state.util_baseline[f]
            signals = {m: u - base for m, u in per_path.items()}
            state.util_baseline[f] += 0.2 * (realized - base)
            learn_step(state.learners[f], set(signals), signals, ep - 1,
                       realized=realized - base)
        state.epoch_srv0[:] = 0.0
        state.epoch_x[:] = 0.0
        state.epoch_rel[:] = 0.0
        state.epoch_q0[:] = 0.0
        state.epoch_y[:] = 0.0
        state.epoch_phi[:] = 0.0
    for f in range(net.n_flows):
        n_cand = len(net.routes[f])
        if cfg.policy in _LEARNING:
            picks = sample_paths(state.learners[f].pi, cfg.select_count,
                                 cfg.seed * 8191 + f, ep)
        else:
            rng = np.random.default_rng((cfg.seed, 0xAB, f, ep))
            picks = [int(m) for m in
                     rng.choice(n_cand, size=cfg.select_count, replace=False)]
        for j, m in enumerate(picks):
            sf = f * cfg.select_count + j
            if m != state.active[sf]:
                moved = _rehome(state, sf, net.routes[f][m])
                if moved > 0.0:
                    events.append(f"rehome sf={sf} bits={moved:.0f}")
                state.active[sf] = m
    # a relay transmitting for more than one active route splits its beam
    # time and leaks interference; penalize its outgoing edges this epoch
    users: Dict[int, int] = {}
    for sf in range(state.n_subflows):
        for node in state.route_of(sf).relays:
            users[node] = users.get(node, 0) + 1
    state.collided = {node for node, n in users.items() if n > 1}
    state.epoch_index += 1
    state._refresh_gains()
    if state.collided:
        events.append(f"collision nodes={sorted(state.collided)}")
    return events


def _counterfactual_rate(state: SimState, route: CandidateRoute,
                         occupied: set) -> float:
    """Chain rate a non-ridden route would offer, from nominal gains.

    Every relay hop the route would share with another flow's active route
    is priced with the same split-plus-interference penalty a real
    collision gets; untouched hops are scored solo.
    """
    net = state.net
    C = net.bits_per_nat
    # gateway hop priced at a fair share of the gateway budget
    share = net.budgets[route.nodes[0]] / max(state.n_subflows, 1)
    x = min(state.cfg.a_max, math.log1p(route.gains[0] * share) * C)
    for k, node in enumerate(route.relays):
        g = route.gains[k + 1]
        if node in occupied:
            g = g * 0.5 / net.collision_loss
        x = min(x, math.log1p(g * net.budgets[node]) * C)
    return x


def _rehome(state: SimState, sf: int, new_route: CandidateRoute) -> float:
    """Pull bits stranded on the abandoned route back to the gateway."""
    old = state.route_of(sf)
    moved = 0.0
    for node in old.relays:
        moved += state.queues.pop(sf, node)
        state.slack.drop_relay(sf, node)
    if moved > 0.0 and state.cfg.rehome_on_switch:
        state.queues.set(sf, 0, state.queues.get(sf, 0) + moved)
    return moved


# ---- allocation: floor-enforcing policies ----

class _FloorPlan:
    """Per-slot floor targets, pre-shaped so the joint solve stays feasible.

    Relay floors cascade backward: a floor can never demand more than the
    downstream hops can carry, so each d is capped at its hop's maximum
    out-rate minus the floors it still has to feed. Gateway floors are then
    capped by the chain throughput and jointly rescaled to the power budget.
    At relay nodes carrying several subflows the caps assume an even budget
    split, a conservative view that keeps the shared problem feasible.
    """

    def __init__(self, state: SimState, t: int):
        cfg = state.cfg
        net = state.net
        C = net.bits_per_nat
        nsf = state.n_subflows
        self.amax_nat = cfg.a_max / C
        self.events: List[str] = []
        users: Dict[int, int] = {}
        for sf in range(nsf):
            for node in state.route_of(sf).relays:
                users[node] = users.get(node, 0) + 1
        self.share = {node: 1.0 / n for node, n in users.items()}
        self.d_used: List[np.ndarray] = []
        self.out_caps: List[np.ndarray] = []
        self.included: List[int] = []
        self.x_caps = np.zeros(nsf)
        self.xfloors = np.zeros(nsf)
        for sf in range(nsf):
            route = state.route_of(sf)
            gains = state.gains_of(sf)
            relays = route.relays
            H = len(relays)
            d = np.empty(H)
            for k, node in enumerate(relays):
                d[k] = state.slack.relay_slack(sf, node, state.mu[sf]) / C
            cap = np.empty(H + 1)  # max out-rate per edge, shared-budget view
            for e in range(1, H + 1):
                node = relays[e - 1]
                b = net.budgets[node] * self.share.get(node, 1.0)
                cap[e] = math.log1p(gains[e] * b)
            allowed = np.zeros(H + 1)
            d_used = d.copy()
            for e in range(H, 0, -1):
                allowed[e] = cap[e] if e == H else min(
                    cap[e], allowed[e + 1] - d_used[e])
                if d_used[e - 1] > allowed[e] - 0.05:
                    d_used[e - 1] = allowed[e] - 0.05
                    self.events.append(
                        f"relay_floor_capped sf={sf} node={relays[e - 1]}")
            self.d_used.append(d_used)
            self.out_caps.append(allowed)
            self.x_caps[sf] = (allowed[1] - d_used[0]) if H else self.amax_nat
            # include the prefix of hops whose floors could bind under any
            # feasible inflow (full in-edge budget: pruning must be safe)
            last = 0
            for k in range(H):
                b_in = net.budgets[route.nodes[k]]
                if d_used[k] + math.log1p(gains[k] * b_in) > 0.0:
                    last = k + 1
            self.included.append(last)
            # gateway floor: tracked service deficit, limited by backlog,
            # the admitted-rate cap, what the chain can carry, and what a
            # bounded power share can push through the current gain (an
            # unbounded catch-up demand through a faded link would starve
            # every other floor once jointly rescaled)
            need = state.slack.mbs_slack(sf, state.mu[sf], t)
            # any backlog above the slack profile must clear within the
            # delay budget, so demand mean rate plus a paced drain of the
            # excess (factor 2 covers inflow while draining)
            mu_f = state.mu[sf]
            excess = (state.queues.get(sf, 0)
                      - cfg.epsilon * cfg.beta_slots * mu_f)
            if excess > 0.0:
                need = max(need, mu_f + 2.5 * excess / cfg.beta_slots)
            xf = max(0.0, min(need, state.queues.get(sf, 0))) / C
            sane = math.log1p(gains[0] * 2.0 * net.budgets[route.nodes[0]] / nsf)
            hard = min(self.amax_nat * 0.999, sane,
                       max(self.x_caps[sf] - 0.01, 0.0))
            if xf > hard:
                xf = hard
                self.events.append(f"xfloor_capped sf={sf}")
            self.xfloors[sf] = xf
        # joint gateway budget check: scale floors down if they overspend
        g0 = np.array([state.gains_of(sf)[0] for sf in range(nsf)])
        p_floor = np.expm1(self.xfloors) / g0
        spend = float(p_floor.sum())
        limit = 0.999 * net.budgets[0]
        if spend > limit:
            self.xfloors = np.log1p(g0 * p_floor * (limit / spend))
            self.events.append("xfloor_scaled")

    @property
    def all_vacuous(self) -> bool:
        return all(h == 0 for h in self.included)


def _gateway_drift_weights(state: SimState) -> np.ndarray:
    """Drift weight of each gateway edge: the virtual-queue pull plus the
    backlog differential the transfer would relieve."""
    w = state.virtual.y.copy()
    for sf in range(state.n_subflows):
        route = state.route_of(sf)
        w[sf] += (state.queues.get(sf, route.nodes[0])
                  - state.queues.get(sf, route.nodes[1]))
    return np.maximum(w, 0.0)


def _gateway_waterfill(state: SimState, xfloors: np.ndarray,
                       x_hi: np.ndarray) -> np.ndarray:
    """Exact gateway allocation: maximize sum(weight * x) with x in
    [floor, x_hi]; raises InfeasibleError when the floors alone
    exceed the budget."""
    nsf = state.n_subflows
    g0 = np.array([state.gains_of(sf)[0] for sf in range(nsf)])
    p_floor = np.expm1(xfloors) / g0
    budget = state.net.budgets[0]
    spend = float(p_floor.sum())
    if spend > budget:
        raise InfeasibleError("gateway floors exceed the power budget",
                              {"floor_watts": spend, "budget": budget})
    w = _gateway_drift_weights(state)
    caps_total = np.expm1(x_hi) / g0
    caps_add = np.maximum(caps_total - p_floor, 0.0)
    g_eff = g0 / (1.0 + g0 * p_floor)
    residual = budget - spend
    if w.sum() <= 0.0 or residual <= 0.0:
        return p_floor
    p_add = water_fill(w, g_eff, residual, p_caps=caps_add)
    return p_floor + p_add


def _relay_completion(state: SimState, solved_powers: Dict[Tuple[int, int], float],
                      solved_rates: Dict[Tuple[int, int], float],
                      plan: Optional[_FloorPlan] = None) -> None:
    """Service for relay hops left out of the solve.

    When a floor plan is given, each hop level first gets the power its
    cascade requirement demands (out-rate >= realized in-rate + slack need,
    computed level by level so realized shortfalls propagate); leftover node
    power is then split by a backlog-weighted water-fill capped at full
    drain. Without a plan it is the pure backlog water-fill.
    """
    net = state.net
    C = net.bits_per_nat
    remaining = dict(net.budgets)
    for (sf, k), p in solved_powers.items():
        node = state.route_of(sf).nodes[k]
        remaining[node] = remaining.get(node, 0.0) - p
    max_h = 0
    todo: List[Tuple[int, int, int, float]] = []  # (k, sf, node, gain)
    for sf in range(state.n_subflows):
        route = state.route_of(sf)
        gains = state.gains_of(sf)
        for k in range(1, len(route.nodes) - 1):
            if (sf, k) in solved_powers:
                continue
            todo.append((k, sf, route.nodes[k], gains[k]))
            max_h = max(max_h, k)
    base: Dict[Tuple[int, int], float] = {}
    # pass 1: per hop level, reserve power for active floor requirements
    if plan is not None:
        for level in range(1, max_h + 1):
            by_node: Dict[int, List[Tuple[int, float, float]]] = {}
            for k, sf, node, g in todo:
                if k != level or plan.included[sf] < k:
                    continue
                need = solved_rates.get((sf, k - 1), 0.0) \
                    + plan.d_used[sf][k - 1] * C
                if need <= 0.0:
                    continue
                by_node.setdefault(node, []).append((sf, g, need))
            for node, entries in by_node.items():
                avail = max(remaining.get(node, 0.0), 0.0)
                p_req = np.array([
                    math.expm1(min(need / C, 30.0)) / g
                    for (_sf, g, need) in entries])
                total = float(p_req.sum())
                if total > avail > 0.0:
                    p_req *= avail / total
                for (sf, g, _need), p in zip(entries, p_req):
                    base[(sf, level)] = float(p)
                    solved_rates[(sf, level)] = math.log1p(g * p) * C
                remaining[node] = avail - float(p_req.sum())
    # pass 2: leftover power chases backlogs, within downstream floor headroom
    pending: Dict[int, List[Tuple[int, int, float, float, float, float]]] = {}
    for k, sf, node, g in todo:
        backlog = state.queues.get(sf, node)
        cap_nat = min(backlog / C, 30.0)
        if plan is not None:
            cap_nat = min(cap_nat, plan.out_caps[sf][k])
        pending.setdefault(node, []).append(
            (sf, k, g, backlog, cap_nat, base.get((sf, k), 0.0)))
    for node, entries in pending.items():
        budget = max(remaining.get(node, 0.0), 0.0)
        total_p = np.array([
            math.expm1(max(cap, 0.0)) / g
            for (_sf, _k, g, _b, cap, _p0) in entries])
        p0 = np.array([p for (*_rest, p) in entries])
        caps = np.maximum(total_p - p0, 0.0)
        weights = np.array([b for (_sf, _k, _g, b, _cap, _p0) in entries])
        gains = np.array([g for (_sf, _k, g, _b, _cap, _p0) in entries])
        if budget > 0.0 and weights.sum() > 0.0 and caps.sum() > 0.0:
            g_eff = gains / (1.0 + gains * p0)
            extra = water_fill(weights, g_eff, budget, p_caps=caps)
        else:
            extra = np.zeros(len(entries))
        for (sf, k, g, _b, _cap, pb), pe in zip(entries, extra):
            p = pb + pe
            if p > 0.0 or (sf, k) not in solved_rates:
                solved_rates[(sf, k)] = math.log1p(g * p) * C


def _seed_point(state: SimState, problem: ScaProblem, plan: _FloorPlan,
                xfloors: np.ndarray) -> np.ndarray:
    """Strictly feasible near-optimal start for the joint solve.

    Relay hops are driven at their shared-budget maximum out-rates (with nat
    margins so every surrogate row starts strictly slack); gateway power then
    comes from the exact capped water-fill against the implied chain caps.
    """
    nsf = state.n_subflows
    v = np.zeros(problem.n_vars)
    g0 = np.array([state.gains_of(sf)[0] for sf in range(nsf)])
    outs: List[np.ndarray] = []
    x_hi = np.empty(nsf)
    for sf in range(nsf):
        h = problem.chains[sf].hops - 1
        d = plan.d_used[sf]
        allowed = plan.out_caps[sf]
        out = np.zeros(h + 1)
        for e in range(h, 0, -1):
            out[e] = allowed[e] if e == h else min(
                allowed[e], out[e + 1] - d[e] - 1e-3)
        outs.append(out)
        x_hi[sf] = min(plan.amax_nat - 1e-6,
                       (out[1] - d[0] - 1e-3) if h else plan.amax_nat)
    p_floor = np.expm1(xfloors + 2e-7) / g0
    caps_add = np.maximum(np.expm1(x_hi) / g0 - p_floor, 0.0)
    g_eff = g0 / (1.0 + g0 * p_floor)
    budget = 0.999 * state.net.budgets[0] - float(p_floor.sum())
    weights = np.maximum(state.virtual.y, 1e-9)
    p0 = p_floor + water_fill(weights, g_eff, budget, p_caps=caps_add)
    x_seed = np.maximum(np.log1p(g0 * p0) - 1e-7, xfloors + 1e-8)
    for sf in range(nsf):
        gains = state.gains_of(sf)
        h = problem.chains[sf].hops - 1
        v[problem.x_idx[sf]] = x_seed[sf]
        p = np.empty(h + 1)
        p[0] = p0[sf]
        for e in range(1, h + 1):
            p[e] = max(np.expm1(outs[sf][e]) / gains[e] * (1.0 - 1e-9), 1e-9)
            v[problem.y_idx[sf][e - 1]] = math.sqrt(
                1.0 + gains[e] * p[e]) * (1.0 - 1e-9)
        v[problem.p_idx[sf]] = p
    return v


def _chains_ok(state: SimState, plan: _FloorPlan,
               rates: Dict[Tuple[int, int], float]) -> bool:
    """True when the fast allocation already satisfies every active floor:
    each hop either out-serves its inflow by the required slack or fully
    drains its backlog."""
    C = state.net.bits_per_nat
    for sf in range(state.n_subflows):
        route = state.route_of(sf)
        for k in range(plan.included[sf]):
            need = rates[(sf, k)] + plan.d_used[sf][k] * C
            out = rates[(sf, k + 1)]
            if out + 1.0 < need and out + 1.0 < state.queues.get(
                    sf, route.nodes[k + 1]):
                return False
    return True


def _floored_allocation(state: SimState, t: int):
    """Allocation for proposed/baseline2.

    The gateway water-fill (with chain-capped rates plus best-effort relay
    completion) solves the slot problem exactly whenever no floor constraint
    couples the subflows; the joint successive-convex solve runs only when
    the fast allocation violates an active floor. Infeasible floors degrade
    down a ladder: drop gateway floors, then fall back to backpressure.
    """
    cfg = state.cfg
    net = state.net
    C = net.bits_per_nat
    plan = _FloorPlan(state, t)
    events = plan.events
    iterations = 0
    x_hi = np.minimum(plan.x_caps, plan.amax_nat)

    def _fast(xf: np.ndarray):
        powers: Dict[Tuple[int, int], float] = {}
        rates: Dict[Tuple[int, int], float] = {}
        p0 = _gateway_waterfill(state, xf, np.maximum(x_hi, xf))
        for sf in range(state.n_subflows):
            powers[(sf, 0)] = float(p0[sf])
            rates[(sf, 0)] = math.log1p(state.gains_of(sf)[0] * p0[sf]) * C
        _relay_completion(state, powers, rates, plan)
        return powers, rates

    def _sca(xf: np.ndarray):
        nonlocal iterations
        powers: Dict[Tuple[int, int], float] = {}
        rates: Dict[Tuple[int, int], float] = {}
        drift_w = _gateway_drift_weights(state)
        chains = []
        for sf in range(state.n_subflows):
            h = plan.included[sf]
            route = state.route_of(sf)
            gains = state.gains_of(sf)
            chains.append(ChainSpec(
                flow=sf, gains=gains[: h + 1],
                nodes=tuple(route.nodes[: h + 1]),
                d_nat=plan.d_used[sf][:h],
                weight=max(drift_w[sf], 1e-9),
                amax_nat=plan.amax_nat, x_floor_nat=float(xf[sf])))
        problem = ScaProblem(chains=chains, budgets=dict(net.budgets))
        if len(state.sca_trace) < 64:  # enough for replay audits, bounded memory
            state.sca_trace.append({"t": int(t), "problem": problem.to_dict()})
        v0 = _seed_point(state, problem, plan, xf) if cfg.warm_start else None
        it = sca_solve(problem, v0=v0, tol=cfg.sca_tol,
                       max_iter=cfg.sca_max_iter, gap_tol=cfg.gap_tol,
                       raise_on_max_iter=False)
        iterations = it.iterations
        if state.dumps is not None:
            state.dumps.append({"t": t, "problem": problem.to_dict(),
                                "objective": it.objective,
                                "x_nat": [float(x) for x in it.x_nat]})
        for ci, ch in enumerate(chains):
            sf = ch.flow
            gains = state.gains_of(sf)
            for k in range(ch.hops):
                powers[(sf, k)] = float(it.powers[ci][k])
                rates[(sf, k)] = math.log1p(gains[k] * it.powers[ci][k]) * C
        _relay_completion(state, powers, rates)
        return powers, rates

    def _attempt(xf: np.ndarray):
        _powers, rates = _fast(xf)
        if plan.all_vacuous or _chains_ok(state, plan, rates):
            return rates, MODE_FAST
        _powers, rates = _sca(xf)
        return rates, MODE_SCA

    try:
        rates, mode = _attempt(plan.xfloors)
    except AllocError:
        events.append("xfloor_dropped")
        try:
            rates, _m = _attempt(np.zeros(state.n_subflows))
            mode = MODE_NO_XFLOOR
        except AllocError:
            events.append("backpressure_fallback")
            return _backpressure_allocation(state), MODE_BACKPRESSURE, 0, events

    full = np.zeros((state.n_subflows, max(len(r.nodes) - 1
                                           for r in _routes(state))))
    for (sf, k), r in rates.items():
        full[sf, k] = r
    return full, mode, iterations, events


def _routes(state: SimState) -> List[CandidateRoute]:
    return [state.route_of(sf) for sf in range(state.n_subflows)]


# ---- allocation: backpressure policies ----

def _backpressure_allocation(state: SimState) -> np.ndarray:
    """Per-node weighted water-fill; gateway weights carry the virtual queue."""
    net = state.net
    C = net.bits_per_nat
    cfg = state.cfg
    amax_nat = cfg.a_max / C
    n_hops = max(len(r.nodes) - 1 for r in _routes(state))
    rates = np.zeros((state.n_subflows, n_hops))
    per_node: Dict[int, List[Tuple[int, int, float, float, float]]] = {}
    for sf in range(state.n_subflows):
        route = state.route_of(sf)
        gains = state.gains_of(sf)
        y = state.virtual.y[sf]
        for k in range(len(route.nodes) - 1):
            node = route.nodes[k]
            q_here = state.queues.get(sf, node) if k > 0 else state.queues.get(sf, 0)
            nxt = route.nodes[k + 1]
            q_next = state.queues.get(sf, nxt) if k + 1 < len(route.nodes) - 1 else 0.0
            w = (y if k == 0 else 0.0) + q_here - q_next
            cap_nat = amax_nat if k == 0 else min(
                max(q_here, 0.0) / C, 30.0)
            per_node.setdefault(node, []).append(
                (sf, k, gains[k], max(w, 0.0), cap_nat))
    for node, entries in per_node.items():
        weights = np.array([e[3] for e in entries])
        gains = np.array([e[2] for e in entries])
        caps = np.expm1(np.array([e[4] for e in entries])) / gains
        if weights.sum() <= 0.0:
            continue
        alloc = water_fill(weights, gains, net.budgets[node], p_caps=caps)
        for (sf, k, g, _w, _c), p in zip(entries, alloc):
            rates[sf, k] = math.log1p(g * p) * C
    return rates


# ---- allocation: single-hop ----

def _single_hop_rates(state: SimState, t: int):
    net = state.net
    cfg = state.cfg
    C = net.bits_per_nat
    rng = np.random.default_rng((cfg.seed, 0xB10C, t))
    blocked = rng.random(net.n_flows) >= net.direct_plos
    gains = net.direct_gains / np.where(blocked, net.blocked_loss, 1.0)
    weights = np.zeros(net.n_flows)
    for f in range(net.n_flows):
        sfs = range(f * cfg.select_count, (f + 1) * cfg.select_count)
        weights[f] = sum(state.virtual.y[sf] + state.queues.get(sf, 0)
                         for sf in sfs)
    rates = np.zeros((state.n_subflows, 1))
    powers = np.zeros((state.n_subflows, 1))
    if weights.sum() <= 0.0:
        return rates, powers
    p = water_fill(weights, gains, net.budgets[0])
    for f in range(net.n_flows):
        link = math.log1p(gains[f] * p[f]) * C
        sfs = list(range(f * cfg.select_count, (f + 1) * cfg.select_count))
        backlogs = np.array([state.queues.get(sf, 0) for sf in sfs])
        if backlogs.sum() > 0.0:
            shares = backlogs / backlogs.sum()
        else:
            shares = np.full(len(sfs), 1.0 / len(sfs))
        # the flow's two subflows time-share one beam; watts split with rate
        for sf, s in zip(sfs, shares):
            rates[sf, 0] = link * s
            powers[sf, 0] = p[f] * s
    return rates, powers


# ---- the slot ----

def _decision_powers(state: SimState, rates: np.ndarray) -> np.ndarray:
    """Transmit watts implied by the allocated per-hop rates."""
    C = state.net.bits_per_nat
    powers = np.zeros_like(rates)
    for sf in range(state.n_subflows):
        g = state.gains_of(sf)
        for k in range(min(rates.shape[1], len(g))):
            if rates[sf, k] > 0.0:
                powers[sf, k] = math.expm1(rates[sf, k] / C) / g[k]
    return powers


def _budget_slack(state: SimState, powers: np.ndarray) -> np.ndarray:
    """Remaining watts per powered node, indexed by node id."""
    net = state.net
    n = max(net.budgets) + 1
    used = np.zeros(n)
    single = state.cfg.policy == "single-hop"
    for sf in range(state.n_subflows):
        nodes = (0,) if single else state.route_of(sf).nodes[:-1]
        for k, node in enumerate(nodes):
            used[node] += powers[sf, k]
    slack = np.full(n, np.nan)
    for node, cap in net.budgets.items():
        slack[node] = cap - used[node]
    return slack


def _apply_transfers(state: SimState, rates: np.ndarray,
                     arrivals: np.ndarray):
    """Store-and-forward service from start-of-slot backlogs, then enqueue."""
    nsf = state.n_subflows
    n_hops = rates.shape[1]
    served = np.zeros((nsf, n_hops))
    delivered = np.zeros(nsf)
    queues_before = np.zeros((nsf, n_hops))
    queues_after = np.zeros((nsf, n_hops))
    single = state.cfg.policy == "single-hop"
    for sf in range(nsf):
        if single:
            nodes: Tuple[int, ...] = (0,)
        else:
            nodes = state.route_of(sf).nodes[:-1]
        backlog = [state.queues.get(sf, 0)] + [
            state.queues.get(sf, n) for n in nodes[1:]]
        serve = [min(backlog[k], rates[sf, k]) for k in range(len(nodes))]
        # gateway: drain then take fresh arrivals
        q0 = max(backlog[0] - serve[0], 0.0) + arrivals[sf]
        state.queues.set(sf, 0, q0)
        queues_before[sf, 0] = backlog[0]
        queues_after[sf, 0] = q0
        state.slack.record_mbs(sf, serve[0])
        for k in range(1, len(nodes)):
            qk = max(backlog[k] - serve[k], 0.0) + serve[k - 1]
            state.queues.set(sf, nodes[k], qk)
            queues_before[sf, k] = backlog[k]
            queues_after[sf, k] = qk
            state.slack.record_relay(sf, nodes[k], serve[k - 1], serve[k])
        served[sf, : len(nodes)] = serve
        delivered[sf] = serve[-1]
    return served, delivered, queues_before, queues_after


def _accumulate_utility(state: SimState, served: np.ndarray,
                        queues_before: np.ndarray, y: np.ndarray,
                        x_alloc: np.ndarray, phi: np.ndarray) -> None:
    """Per-route rate bookkeeping for the epoch's path scores.

    Rates (gateway drain, admitted rate, net relay inflow cost) are kept per
    route so the epoch close can price every route with the same flow-level
    drift weights; pricing realized and idle routes identically keeps the
    comparison free of per-subflow queue history.
    """
    for sf in range(state.n_subflows):
        route = state.route_of(sf)
        state.epoch_srv0[sf] += served[sf, 0]
        state.epoch_x[sf] += x_alloc[sf]
        rel = 0.0
        for k in range(len(route.relays)):
            net_in = served[sf, k] - served[sf, k + 1]
            rel += queues_before[sf, k + 1] * net_in
        state.epoch_rel[sf] += rel
    state.epoch_q0 += queues_before[:, 0]
    state.epoch_y += y
    state.epoch_phi += phi


def slot_step(state: SimState, t: int) -> SlotDecision:
    """One slot of the proposed policy."""
    if state.cfg.policy != "proposed":
        raise ValueError("slot_step drives the proposed policy only")
    return _step(state, t)


def baseline_step(state: SimState, t: int) -> SlotDecision:
    """One slot of a comparison policy."""
    if state.cfg.policy == "proposed":
        raise ValueError("baseline_step requires a non-proposed policy")
    return _step(state, t)


def _step(state: SimState, t: int) -> SlotDecision:
    cfg = state.cfg
    events: List[str] = []
    state.t_now = t
    # the flush phase freezes learning and path choice: re-randomizing mid
    # drain restrands bits on fresh relays and never lets the piles clear
    if t % cfg.epoch_slots == 0 and not state.draining:
        events.extend(_epoch_update(state, t))
    elif state.net.fade_prob > 0.0 and t % state.net.fade_block == 0:
        state._refresh_gains()
    if state.draining:
        arrivals = np.zeros(state.n_subflows)
    else:
        arrivals = state.arrivals.sample_arrivals(t)
    y = state.virtual.y
    # vectorized aux_optimum: phi = clip(nu/Y, 0, a_max), a_max when Y = 0
    phi = np.full(state.n_subflows, cfg.a_max)
    pos = y > 0.0
    phi[pos] = np.minimum(cfg.nu / y[pos], cfg.a_max)
    mode = MODE_BACKPRESSURE
    iterations = 0
    if cfg.policy == "single-hop":
        rates, sh_powers = _single_hop_rates(state, t)
        mode = MODE_FAST
    elif state.draining:
        # flush phase of the measurement protocol: with the sources off,
        # every relayed policy empties its piles with the same max-drain
        # allocator, so delivered totals compare accumulated backlogs only
        rates = _backpressure_allocation(state)
    elif cfg.policy in _FLOORED:
        rates, mode, iterations, ev = _floored_allocation(state, t)
        events.extend(ev)
    else:
        rates = _backpressure_allocation(state)
    if cfg.policy in _FLOORED:
        # ingress gate: admit from the transport buffer only while the
        # rate-credit queue exceeds the gateway backlog, so network queues
        # stay bounded through outages and the deficit drains afterwards
        state.transport += arrivals
        q0 = np.array([state.queues.get(sf, 0)
                       for sf in range(state.n_subflows)])
        # admit only with rate credit to spend and backlog headroom inside
        # the delay budget; throttled bits wait upstream. While draining
        # the gate is moot (no new load to shape), so flush unconditionally
        if state.draining:
            gate = np.ones(state.n_subflows, dtype=bool)
        else:
            gate = (y > q0) & (q0 < 0.8 * cfg.beta_slots * state.mu)
        x_alloc = np.where(gate,
                           np.minimum(state.transport, cfg.a_max), 0.0)
        state.transport -= x_alloc
    else:
        x_alloc = arrivals.astype(np.float64)
    if cfg.policy == "single-hop":
        powers = sh_powers
    else:
        powers = _decision_powers(state, rates)
    served, delivered, queues_before, queues_after = _apply_transfers(
        state, rates, x_alloc)
    if cfg.policy in _LEARNING:
        _accumulate_utility(state, served, queues_before, y, x_alloc, phi)
    state.virtual.update(phi, x_alloc)
    return SlotDecision(
        t=t, mode=mode, paths=state.active.copy(), phi=phi,
        x_alloc=x_alloc, rates=rates, served=served, delivered=delivered,
        arrivals=arrivals, queues=queues_after, y=state.virtual.y.copy(),
        events=events, sca_iterations=iterations, powers=powers,
        power_slack=_budget_slack(state, powers),
        amax_slack=cfg.a_max - x_alloc,
    )
