"""Diagnostic probe: per-policy queue/delay/mode statistics over a longer run.

Usage: python3 probe.py [slots] [policy ...]
"""
import sys
import time
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

import numpy as np

from backhaulsim.scheduler import SimState, baseline_step, slot_step
from smoke_scheduler import make_net, BITS_PER_NAT
from backhaulsim.scheduler import SchedulerConfig

MU = 2.25e5          # per-subflow offered bits per slot (flow rate / 2)
BETA = 100


def probe(policy: str, slots: int, seed: int = 3, collision_loss: float = 1.25,
          nu: float = 4e12, epoch: int = 50, kappa: float = 2.0,
          packet_bits: int = 5_500_000):
    net = make_net()
    net.collision_loss = collision_loss
    cfg = SchedulerConfig(
        nu=nu, a_max=8e5, epsilon=0.05, beta_slots=BETA, epoch_slots=epoch,
        policy=policy, utility_scale=9e9, seed=seed, kappa=kappa,
        packet_bits=packet_bits,
    )
    mu = [MU] * (net.n_flows * cfg.select_count)
    state = SimState(net, cfg, mu)
    step = slot_step if policy == "proposed" else baseline_step
    nsf = state.n_subflows
    warm = min(1000, slots // 4)

    delivered = np.zeros(nsf)
    arrived = np.zeros(nsf)
    n_samp = 0
    n_over = 0            # one-hop delay samples > beta (post warmup)
    mbs_sum = 0.0
    relay_sum = 0.0
    relay_max = 0.0
    mbs_max = 0.0
    modes = {}
    mode_tail = {}
    events = {}
    collided_epochs = 0
    epochs = 0
    t0 = time.perf_counter()
    for t in range(slots):
        dec = step(state, t)
        delivered += dec.delivered
        arrived += dec.arrivals
        modes[dec.mode] = modes.get(dec.mode, 0) + 1
        if t >= slots - 1000:
            mode_tail[dec.mode] = mode_tail.get(dec.mode, 0) + 1
        for ev in dec.events:
            key = ev.split()[0]
            events[key] = events.get(key, 0) + 1
            if key == "collision":
                collided_epochs += 1
        if t % cfg.epoch_slots == 0:
            epochs += 1
        if t >= warm and policy != "single-hop":
            # one queue sample per (subflow, position)
            for sf in range(nsf):
                route = state.route_of(sf)
                npos = len(route.nodes) - 1
                for k in range(npos):
                    q = dec.queues[sf, k]
                    n_samp += 1
                    if q / MU > BETA:
                        n_over += 1
                    if k == 0:
                        mbs_sum += q
                        mbs_max = max(mbs_max, q)
                    else:
                        relay_sum += q
                        relay_max = max(relay_max, q)
    wall = time.perf_counter() - t0
    pis = []
    for f in range(net.n_flows):
        if policy in ("proposed", "baseline1"):
            pis.append(np.round(state.learners[f].pi, 3))
    denom = max(n_samp // 3, 1)
    print(f"{policy:<11} thr={delivered.sum()/arrived.sum():6.1%} "
          f"over_beta={n_over}/{n_samp} ({n_over/max(n_samp,1):.4f}) "
          f"mbs_mean={mbs_sum/denom/MU:6.2f}sl mbs_max={mbs_max/MU:6.1f}sl "
          f"rel_mean={relay_sum/(2*denom)/MU:6.2f}sl rel_max={relay_max/MU:6.1f}sl")
    print(f"{'':<11} modes={modes} tail1k={mode_tail} "
          f"coll_ep={collided_epochs}/{2*epochs} ev={events} "
          f"{1e3*wall/slots:.2f} ms/slot")
    for f, pi in enumerate(pis):
        print(f"{'':<11} pi[{f}]={pi}")


def main():
    slots = int(sys.argv[1]) if len(sys.argv) > 1 else 4000
    policies = sys.argv[2:] or ["proposed", "baseline1", "baseline2", "baseline3"]
    print(f"slots={slots}")
    for p in policies:
        probe(p, slots)


if __name__ == "__main__":
    main()
