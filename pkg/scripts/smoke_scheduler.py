"""Quick shakedown of the slot scheduler across all policies.

Two flows share eight small cells. Each flow has four candidate two-relay
routes that are pairwise node-disjoint within the flow, but the two flows
pair the cells differently, so a cell can end up relaying for both flows at
once and splits its beam time. The learners should steer the flows onto
complementary halves of the cell set. Prints throughput accounting,
allocation mode usage, event counts, and per-slot runtime.
"""
import sys
import time
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

import numpy as np

from backhaulsim.scheduler import (
    CandidateRoute,
    NetworkModel,
    SchedulerConfig,
    SimState,
    baseline_step,
    slot_step,
)

BITS_PER_NAT = 1e9 * 1e-4 / np.log(2.0)  # 1 GHz, 0.1 ms slots
G_MBS = 1.35     # MBS -> SCBS effective gain per watt
G_HOME = 7.0     # relay transmit gain on the half nearer the flow's UE
G_AWAY = 6.0     # relay transmit gain on the farther half
G_DIRECT = 23.0  # MBS -> UE line-of-sight gain per watt
MU_FLOW = 4.5e5  # offered bits per slot per flow at the 4.5 Gbps point

# relay pairings per flow over the shared cells 1..8: within a flow the four
# routes are node-disjoint, but the flows pair the cells differently, so any
# joint selection other than complementary halves shares at least one cell
PAIRINGS = [
    [(1, 2), (3, 4), (5, 6), (7, 8)],
    [(1, 3), (2, 4), (5, 7), (6, 8)],
]
HOME_HALF = [{1, 2, 3, 4}, {5, 6, 7, 8}]


def make_net(n_flows: int = 2) -> NetworkModel:
    routes = []
    budgets = {0: 20.0}
    for s in range(1, 9):
        budgets[s] = 1.0
    for f in range(n_flows):
        ue = 9 + f
        cand = []
        for pid, (r1, r2) in enumerate(PAIRINGS[f]):
            g = G_HOME if r1 in HOME_HALF[f] else G_AWAY
            cand.append(CandidateRoute(
                path_id=pid,
                nodes=(0, r1, r2, ue),
                gains=(G_MBS, g, g),
            ))
        routes.append(cand)
    return NetworkModel(
        n_flows=n_flows,
        routes=routes,
        budgets=budgets,
        bits_per_nat=BITS_PER_NAT,
        direct_gains=[G_DIRECT] * n_flows,
        direct_plos=[0.30] * n_flows,
        blocked_loss=100.0,
        collision_loss=1.25,
        fade_prob=0.0,
        fade_depth=0.35,
        fade_block=450,
    )


def run(policy: str, slots: int, seed: int = 3):
    net = make_net()
    cfg = SchedulerConfig(
        nu=4e12,
        a_max=8e5,
        epsilon=0.05,
        beta_slots=100,
        epoch_slots=50,
        policy=policy,
        utility_scale=9e9,
        seed=seed,
        kappa=2.0,
        packet_bits=5_500_000,
    )
    # each flow's traffic is pre-split 50/50 over its two active paths
    mu = [MU_FLOW / 2] * (net.n_flows * cfg.select_count)
    state = SimState(net, cfg, mu)
    step = slot_step if policy == "proposed" else baseline_step
    delivered = np.zeros(state.n_subflows)
    arrived = np.zeros(state.n_subflows)
    modes = {}
    events = {}
    y_max = 0.0
    iters = 0
    t0 = time.perf_counter()
    for t in range(slots):
        dec = step(state, t)
        delivered += dec.delivered
        arrived += dec.arrivals
        modes[dec.mode] = modes.get(dec.mode, 0) + 1
        iters += dec.sca_iterations
        for ev in dec.events:
            key = ev.split()[0]
            events[key] = events.get(key, 0) + 1
        y_max = max(y_max, dec.y.max())
    wall = time.perf_counter() - t0
    backlog = state.queues.total()
    return {
        "policy": policy,
        "delivered": delivered.sum(),
        "arrived": arrived.sum(),
        "backlog": backlog,
        "modes": modes,
        "events": events,
        "y_max": y_max,
        "sca_iters": iters,
        "ms_per_slot": 1e3 * wall / slots,
        "sig": (delivered.sum(), backlog, y_max),
    }


def main():
    slots = int(sys.argv[1]) if len(sys.argv) > 1 else 600
    print(f"slots={slots}")
    for policy in ["proposed", "baseline1", "baseline2", "baseline3", "single-hop"]:
        r1 = run(policy, slots)
        r2 = run(policy, slots)
        det = "ok" if r1["sig"] == r2["sig"] else "MISMATCH"
        frac = r1["delivered"] / r1["arrived"]
        print(
            f"{policy:<11} delivered={r1['delivered']:.3e} ({frac:6.1%}) "
            f"backlog={r1['backlog']:.2e} ymax={r1['y_max']:.2e} "
            f"modes={r1['modes']} iters={r1['sca_iters']} "
            f"{r1['ms_per_slot']:.2f} ms/slot det={det}"
        )
        if r1["events"]:
            print(f"{'':<11} events={r1['events']}")


if __name__ == "__main__":
    main()
