"""Regret-based path selection: strategy maps, learning updates, sampling.

One learner per flow maintains utility estimates uhat, regrets rhat, and a
mixed strategy pi over the candidate path set. Updates run once per epoch on
the previous epoch's observed utility.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, List, Mapping, Sequence, Tuple, Union

import numpy as np

DEFAULT_EXPONENTS = (0.5, 0.55, 0.6)  # uhat, rhat, pi learning-rate decay
DEFAULT_REGRET_CAP = 1e6


# ---- strategy maps ----

def regret_strategy(rhat: np.ndarray) -> np.ndarray:
    """Positive-part regret matching; uniform when nothing is regretted."""
    pos = np.maximum(np.asarray(rhat, dtype=np.float64), 0.0)
    total = pos.sum()
    if total <= 0.0:
        return np.full(len(pos), 1.0 / len(pos))
    return pos / total


def bg_strategy(rhat: np.ndarray, kappa: float,
                regret_cap: float = DEFAULT_REGRET_CAP) -> np.ndarray:
    """Boltzmann-Gibbs smoothing of clipped positive regrets.

    Solves max_pi sum(pi * [r]+) + kappa * H(pi) on the simplex; the softmax
    is computed with a max shift so large regrets cannot overflow.
    """
    if kappa <= 0.0:
        raise ValueError("temperature kappa must be positive")
    pos = np.maximum(np.asarray(rhat, dtype=np.float64), 0.0)
    pos = np.minimum(pos, regret_cap)
    z = pos / kappa
    z -= z.max()
    e = np.exp(z)
    return e / e.sum()


# ---- learner state and updates ----

@dataclass
class LearnerState:
    """Per-flow learning state over Z candidate paths."""
    n_paths: int
    kappa: float = 5.0
    regret_cap: float = DEFAULT_REGRET_CAP
    exponents: Tuple[float, float, float] = DEFAULT_EXPONENTS
    uhat: np.ndarray = field(default=None)  # type: ignore[assignment]
    rhat: np.ndarray = field(default=None)  # type: ignore[assignment]
    pi: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self) -> None:
        if self.n_paths < 1:
            raise ValueError("need at least one candidate path")
        if self.uhat is None:
            self.uhat = np.zeros(self.n_paths)
        if self.rhat is None:
            self.rhat = np.zeros(self.n_paths)
        if self.pi is None:
            self.pi = np.full(self.n_paths, 1.0 / self.n_paths)

    def rates(self, t: int) -> Tuple[float, float, float]:
        """Decaying learning rates at epoch t (t >= 0)."""
        a, b, c = self.exponents
        base = float(t) + 1.0
        return base ** -a, base ** -b, base ** -c


def learn_step(state: LearnerState, chosen: Union[int, Iterable[int]],
               utility: Union[float, Mapping[int, float]], t: int,
               rates: Tuple[float, float, float] | None = None,
               realized: float | None = None) -> None:
    """One epoch of the three coupled updates, in order: uhat, rhat, pi.

    `chosen` is the index (or index set) of the path(s) whose utility
    estimates receive the epoch's observation `utility`. When several paths
    are scored at once, `utility` maps each to its own marginal payoff, so a
    path is credited for its own contribution rather than its partner's.
    `realized` is the flow's observed performance that regrets are measured
    against; it defaults to the (mean) observed utility.
    """
    if rates is None:
        rates = state.rates(t)
    xi, gamma, iota = rates
    if isinstance(chosen, (int, np.integer)):
        chosen_idx = [int(chosen)]
    else:
        chosen_idx = [int(m) for m in chosen]
    for m in chosen_idx:
        if not 0 <= m < state.n_paths:
            raise ValueError(f"chosen path {m} out of range")

    if isinstance(utility, Mapping):
        missing = [m for m in chosen_idx if m not in utility]
        if missing:
            raise ValueError(f"no utility reported for chosen paths {missing}")
        per_path = np.array([float(utility[m]) for m in chosen_idx])
        if realized is None:
            realized = float(per_path.mean())
    else:
        per_path = np.full(len(chosen_idx), float(utility))
        if realized is None:
            realized = float(utility)

    indicator = np.zeros(state.n_paths)
    indicator[chosen_idx] = 1.0
    observed = np.zeros(state.n_paths)
    observed[chosen_idx] = per_path
    state.uhat = state.uhat + xi * indicator * (observed - state.uhat)
    state.rhat = state.rhat + gamma * (state.uhat - realized - state.rhat)
    np.clip(state.rhat, -state.regret_cap, state.regret_cap, out=state.rhat)
    target = bg_strategy(state.rhat, state.kappa, state.regret_cap)
    state.pi = state.pi + iota * (target - state.pi)
    # guard drift from accumulated float error
    state.pi = np.maximum(state.pi, 0.0)
    state.pi /= state.pi.sum()


def sample_paths(pi: np.ndarray, count: int, seed: int, t: int) -> List[int]:
    """Draw `count` distinct path indices by renormalized sampling from pi."""
    pi = np.asarray(pi, dtype=np.float64)
    if count < 1 or count > len(pi):
        raise ValueError(f"cannot draw {count} distinct of {len(pi)} paths")
    if np.any(pi < 0.0) or pi.sum() <= 0.0:
        raise ValueError("pi must be a nonnegative weight vector")
    rng = np.random.default_rng((seed, 0xA7, t))
    weights = pi.copy()
    picks: List[int] = []
    for _ in range(count):
        total = weights.sum()
        if total > 0.0:
            w = weights / total
        else:
            # remaining mass can vanish when pi is degenerate; fall back to
            # uniform over the paths not yet drawn
            free = np.ones(len(weights))
            for m in picks:
                free[m] = 0.0
            w = free / free.sum()
        m = int(rng.choice(len(w), p=w))
        picks.append(m)
        weights[m] = 0.0
    return picks


# ---- observed utility ----

def flow_utility(pi: np.ndarray, q_mbs: float,
                 first_hop_rates: Sequence[float],
                 relay_terms: Sequence[Sequence[Tuple[float, float]]]) -> float:
    """Drift-form path utility for one flow.

    first_hop_rates[m] is the realized MBS-edge rate of candidate m (zero when
    idle); relay_terms[m] lists (backlog, in_rate - out_rate) for each relay
    on candidate m. Congested relays (filling, positive net) pull the utility
    down in proportion to their backlog.
    """
    pi = np.asarray(pi, dtype=np.float64)
    if len(first_hop_rates) != len(pi) or len(relay_terms) != len(pi):
        raise ValueError("per-path inputs must match the strategy length")
    u = q_mbs * float(np.dot(pi, np.asarray(first_hop_rates, dtype=np.float64)))
    for m, terms in enumerate(relay_terms):
        for q_i, net_in in terms:
            u -= pi[m] * q_i * net_in
    return u
