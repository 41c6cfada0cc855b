"""Slot-level scheduler behavior: conservation, budgets, drain, determinism."""
import numpy as np
import pytest

from backhaulsim.harness import (
    FlowSection,
    ScenarioConfig,
    build_network,
    scheduler_config,
)
from backhaulsim.scheduler import (
    POLICIES,
    SchedulerConfig,
    SimState,
    baseline_step,
    slot_step,
)

FLOORED = ("proposed", "baseline2")


def make_state(policy, seed=3, arrival_gbps=4.5, capture=False):
    scn = ScenarioConfig(flows=FlowSection(arrival_gbps=(arrival_gbps,)))
    net = build_network(scn)
    cfg = scheduler_config(scn, policy, seed=seed)
    mu = [scn.mu_subflow(arrival_gbps)] * net.n_flows * cfg.select_count
    return scn, SimState(net, cfg, mu, capture_problems=capture)


def stepper(policy):
    return slot_step if policy == "proposed" else baseline_step


@pytest.mark.parametrize("policy", POLICIES)
def test_bits_are_conserved(policy):
    scn, state = make_state(policy)
    step = stepper(policy)
    arrived = delivered = 0.0
    changes = 0
    prev = None
    for t in range(1500):
        d = step(state, t)
        arrived += d.arrivals.sum()
        delivered += d.delivered.sum()
        in_network = state.queues.total() + state.transport.sum()
        assert in_network + delivered == pytest.approx(arrived, rel=1e-9)
        if prev is not None and not np.array_equal(d.paths, prev):
            changes += 1
        prev = d.paths.copy()
    if policy != "single-hop":
        # path resampling must have rehomed bits at least once along the way
        assert changes > 0


@pytest.mark.parametrize("policy", POLICIES)
def test_power_budgets_respected(policy):
    scn, state = make_state(policy)
    step = stepper(policy)
    for t in range(400):
        d = step(state, t)
        slack = d.power_slack[~np.isnan(d.power_slack)]
        assert slack.min() > -1e-9
        assert np.all(d.rates >= 0.0)
        assert np.all(d.served >= 0.0)
        assert np.all(d.queues >= 0.0)
        assert np.all(d.y >= 0.0)


@pytest.mark.parametrize("policy", FLOORED)
def test_admitted_rate_respects_cap(policy):
    scn, state = make_state(policy)
    step = stepper(policy)
    for t in range(300):
        d = step(state, t)
        assert np.all(d.x_alloc <= state.cfg.a_max + 1e-9)
        assert np.all(d.phi <= state.cfg.a_max + 1e-9)
        assert np.all(d.amax_slack >= -1e-9)


def test_deterministic_trajectories():
    for policy in ("proposed", "baseline1"):
        _, a = make_state(policy, seed=7)
        _, b = make_state(policy, seed=7)
        step = stepper(policy)
        for t in range(300):
            da = step(a, t)
            db = step(b, t)
            assert np.array_equal(da.queues, db.queues)
            assert np.array_equal(da.delivered, db.delivered)
            assert np.array_equal(da.y, db.y)
            assert np.array_equal(da.paths, db.paths)


def test_drain_freezes_learning_and_flushes():
    scn, state = make_state("proposed")
    for t in range(600):
        slot_step(state, t)
    state.draining = True
    pis = [lr.pi.copy() for lr in state.learners]
    paths = None
    backlog0 = state.queues.total() + state.transport.sum()
    for t in range(600, 600 + scn.run.drain_slots):
        d = slot_step(state, t)
        assert d.arrivals.sum() == 0.0
        assert not d.events
        if paths is None:
            paths = d.paths.copy()
        assert np.array_equal(d.paths, paths)
    for lr, pi in zip(state.learners, pis):
        assert np.array_equal(lr.pi, pi)
    # the flush must actually empty the accumulated piles
    assert state.queues.total() + state.transport.sum() < 1e-6 * backlog0


def test_virtual_queues_stay_sublinear():
    scn, state = make_state("proposed")
    horizon = 3000
    for t in range(horizon):
        d = slot_step(state, t)
    # Y_T / T bounded well below the admitted-rate scale
    assert state.virtual.y.max() / horizon < 0.05 * state.cfg.a_max


def test_single_hop_uses_gateway_only():
    scn, state = make_state("single-hop")
    for t in range(200):
        d = baseline_step(state, t)
        assert np.all(d.rates[:, 1:] == 0.0)
        assert np.all(d.powers[:, 1:] == 0.0)


def test_step_guards():
    _, prop = make_state("proposed")
    _, base = make_state("baseline1")
    with pytest.raises(ValueError):
        baseline_step(prop, 0)
    with pytest.raises(ValueError):
        slot_step(base, 0)


def test_scheduler_config_validation():
    ok = dict(nu=1e12, a_max=8e5, epsilon=0.05, beta_slots=100.0,
              epoch_slots=50)
    SchedulerConfig(**ok)
    with pytest.raises(ValueError):
        SchedulerConfig(**{**ok, "nu": -1.0})
    with pytest.raises(ValueError):
        SchedulerConfig(**{**ok, "epoch_slots": 0})
    with pytest.raises(ValueError):
        SchedulerConfig(**{**ok, "policy": "nonesuch"})
    with pytest.raises(ValueError):
        SchedulerConfig(**{**ok, "epsilon": 1.0})
    with pytest.raises(ValueError):
        SchedulerConfig(**{**ok, "a_max": 0.0})
    with pytest.raises(ValueError):
        SchedulerConfig(**{**ok, "select_count": 0})


def test_sim_state_validates_subflow_count():
    scn = ScenarioConfig()
    net = build_network(scn)
    cfg = scheduler_config(scn, "proposed", seed=1)
    with pytest.raises(ValueError):
        SimState(net, cfg, [1.0, 2.0, 3.0])


def test_sca_capture_bounded():
    scn, state = make_state("proposed", capture=True)
    for t in range(400):
        slot_step(state, t)
    assert state.dumps is not None
    assert len(state.sca_trace) <= 64
