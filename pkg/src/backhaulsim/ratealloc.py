"""Per-slot rate and power allocation.

The admitted-rate subproblem has the closed form aux_optimum. The power/rate
subproblem maximizes sum(Y_f * x_f) over chains MBS -> relays -> UE subject
to per-node power budgets, the MBS-edge rate definition, and relay
net-service floors. Rates are handled in nat units internally
(x = ln(1 + p*g)); callers convert to bits/slot.

The nonconvex relay ratio constraint
    (1 + p_out*g_out) / (1 + p_in*g_in) >= E,   E = e^D
is split into the convex restriction y^2 <= 1 + p_out*g_out plus
y^2/(1 + p_in*g_in) >= E, whose left side is linearized at the current
iterate (a global underestimator, so iterates stay feasible for the
original constraint). The convex subproblems are solved by a dense
log-barrier Newton method written here.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np


# ---- errors ----

class AllocError(Exception):
    """Base class for allocation failures."""


class InfeasibleError(AllocError):
    """No strictly feasible point exists for the subproblem."""

    def __init__(self, message: str, diagnostics: Optional[dict] = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class MaxIterationsExceeded(AllocError):
    """Iteration cap hit; carries the best iterate found so far."""

    def __init__(self, message: str, iterate=None):
        super().__init__(message)
        self.iterate = iterate


class NonMonotoneError(AllocError):
    """Surrogate objective increased between iterations (internal bug)."""


# ---- closed-form auxiliary rate ----

def aux_optimum(y: float, nu: float, a_max: float) -> float:
    """Optimal auxiliary rate phi* = clip(nu / y, 0, a_max); y=0 -> a_max."""
    if y < 0.0:
        raise ValueError("virtual queue must be nonnegative")
    if nu <= 0.0 or a_max <= 0.0:
        raise ValueError("nu and a_max must be positive")
    if y == 0.0:
        return a_max
    return min(max(nu / y, 0.0), a_max)


# ---- problem description ----

@dataclass
class ChainSpec:
    """One subflow's path: edge gains, tx nodes, and relay slack exponents.

    gains[k] is the normalized gain of edge k (edge 0 leaves the MBS);
    nodes[k] is the transmitting node of edge k; d_nat[k-1] is the capped
    nat-domain net-service floor enforced between edge k-1 (in) and edge k
    (out) at relay k. weight is the virtual-queue price on the MBS-edge rate.
    """
    flow: int
    gains: Sequence[float]
    nodes: Sequence[int]
    d_nat: Sequence[float]
    weight: float
    amax_nat: float
    x_floor_nat: float = 0.0

    def __post_init__(self) -> None:
        h = len(self.gains)
        if h < 1 or len(self.nodes) != h or len(self.d_nat) != h - 1:
            raise ValueError("inconsistent chain sizes")
        if any(g <= 0.0 for g in self.gains):
            raise ValueError("gains must be positive")
        if self.weight < 0.0 or self.amax_nat <= 0.0:
            raise ValueError("bad weight or rate cap")
        if not 0.0 <= self.x_floor_nat <= self.amax_nat:
            raise ValueError("x floor outside [0, amax]")

    @property
    def hops(self) -> int:
        return len(self.gains)


@dataclass
class ScaProblem:
    """Joint allocation instance over one or more chains with shared budgets."""
    chains: List[ChainSpec]
    budgets: Dict[int, float]

    def __post_init__(self) -> None:
        if not self.chains:
            raise ValueError("no chains")
        for cap in self.budgets.values():
            if cap <= 0.0:
                raise ValueError("budgets must be positive")
        for ch in self.chains:
            for node in ch.nodes:
                if node not in self.budgets:
                    raise ValueError(f"node {node} has no power budget")
        self._index()

    def _index(self) -> None:
        # variable layout: per chain [x, p_0..p_{H-1}, y_1..y_{H-1}]
        self.x_idx: List[int] = []
        self.p_idx: List[List[int]] = []
        self.y_idx: List[List[int]] = []
        off = 0
        for ch in self.chains:
            h = ch.hops
            self.x_idx.append(off)
            self.p_idx.append(list(range(off + 1, off + 1 + h)))
            self.y_idx.append(list(range(off + 1 + h, off + h + h)))
            off += 2 * h
        self.n_vars = off
        self.node_edges: Dict[int, List[int]] = {}
        for c, ch in enumerate(self.chains):
            for k, node in enumerate(ch.nodes):
                self.node_edges.setdefault(node, []).append(self.p_idx[c][k])

    @property
    def n_mbs_edges(self) -> int:
        return len(self.chains)

    @property
    def n_relay_hops(self) -> int:
        return sum(ch.hops - 1 for ch in self.chains)

    @property
    def n_budget_nodes(self) -> int:
        return len(self.node_edges)

    def constraint_count(self) -> int:
        """MBS-edge defs + (restriction, floor) per relay hop + budgets + rate bounds."""
        return (self.n_mbs_edges + 2 * self.n_relay_hops
                + self.n_budget_nodes + 2 * len(self.chains))

    def to_dict(self) -> dict:
        return {
            "budgets": {str(k): v for k, v in self.budgets.items()},
            "chains": [
                {
                    "flow": ch.flow,
                    "gains": list(map(float, ch.gains)),
                    "nodes": list(map(int, ch.nodes)),
                    "d_nat": list(map(float, ch.d_nat)),
                    "weight": float(ch.weight),
                    "amax_nat": float(ch.amax_nat),
                    "x_floor_nat": float(ch.x_floor_nat),
                }
                for ch in self.chains
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ScaProblem":
        chains = [ChainSpec(**c) for c in d["chains"]]
        budgets = {int(k): float(v) for k, v in d["budgets"].items()}
        return cls(chains, budgets)


# ---- generic dense program for the barrier solver ----

@dataclass
class ConvexProgram:
    """min c.v subject to A v <= b, exp rows, quad rows, and box bounds.

    exp rows: exp(v[xi]) - 1 - g * v[pi] <= 0
    quad rows: v[yi]^2   - 1 - g * v[pi] <= 0
    """
    c: np.ndarray
    a_lin: np.ndarray
    b_lin: np.ndarray
    exp_rows: List[Tuple[int, int, float]] = field(default_factory=list)
    quad_rows: List[Tuple[int, int, float]] = field(default_factory=list)
    lb: Optional[np.ndarray] = None
    ub: Optional[np.ndarray] = None


class _Prepared:
    """Index arrays and static Jacobian rows for one ConvexProgram."""

    def __init__(self, prog: ConvexProgram):
        n = len(prog.c)
        lb = prog.lb if prog.lb is not None else np.full(n, -np.inf)
        ub = prog.ub if prog.ub is not None else np.full(n, np.inf)
        self.lo_i = np.where(np.isfinite(lb))[0]
        self.hi_i = np.where(np.isfinite(ub))[0]
        self.lo_b = lb[self.lo_i]
        self.hi_b = ub[self.hi_i]
        self.m_lin = prog.a_lin.shape[0] if prog.a_lin.size else 0
        self.exp_xi = np.array([r[0] for r in prog.exp_rows], dtype=np.intp)
        self.exp_pi = np.array([r[1] for r in prog.exp_rows], dtype=np.intp)
        self.exp_g = np.array([r[2] for r in prog.exp_rows])
        self.quad_yi = np.array([r[0] for r in prog.quad_rows], dtype=np.intp)
        self.quad_pi = np.array([r[1] for r in prog.quad_rows], dtype=np.intp)
        self.quad_g = np.array([r[2] for r in prog.quad_rows])
        m_exp, m_quad = len(self.exp_xi), len(self.quad_yi)
        self.r0e = self.m_lin
        self.r0q = self.m_lin + m_exp
        self.r0lo = self.r0q + m_quad
        self.r0hi = self.r0lo + self.lo_i.size
        self.m = self.r0hi + self.hi_i.size
        self.erows = self.r0e + np.arange(m_exp)
        self.qrows = self.r0q + np.arange(m_quad)
        jac = np.zeros((self.m, n))
        if self.m_lin:
            jac[: self.m_lin] = prog.a_lin
        if m_exp:
            jac[self.erows, self.exp_pi] = -self.exp_g
        if m_quad:
            jac[self.qrows, self.quad_pi] = -self.quad_g
        jac[self.r0lo + np.arange(self.lo_i.size), self.lo_i] = -1.0
        jac[self.r0hi + np.arange(self.hi_i.size), self.hi_i] = 1.0
        self.jac = jac
        self.prog = prog

    def slacks(self, v: np.ndarray) -> np.ndarray:
        s = np.empty(self.m)
        prog = self.prog
        if self.m_lin:
            s[: self.m_lin] = prog.b_lin - prog.a_lin @ v
        if self.exp_xi.size:
            # clamp the exponent so wild backtracking trials reject cleanly
            s[self.erows] = (1.0 + self.exp_g * v[self.exp_pi]
                             - np.exp(np.minimum(v[self.exp_xi], 500.0)))
        if self.quad_yi.size:
            s[self.qrows] = 1.0 + self.quad_g * v[self.quad_pi] - v[self.quad_yi] ** 2
        if self.lo_i.size:
            s[self.r0lo:self.r0hi] = v[self.lo_i] - self.lo_b
        if self.hi_i.size:
            s[self.r0hi:] = self.hi_b - v[self.hi_i]
        return s


def program_slacks(prog: ConvexProgram, v: np.ndarray) -> np.ndarray:
    """Constraint slacks (positive = strictly feasible) at point v."""
    return _Prepared(prog).slacks(v)


def solve_convex(prog: ConvexProgram, v0: np.ndarray,
                 gap_tol: float = 1e-8, newton_tol: float = 1e-10,
                 max_newton: int = 100, t0: float = 1.0,
                 mu: float = 12.0) -> Tuple[np.ndarray, float, dict]:
    """Log-barrier Newton with backtracking from a strictly feasible v0.

    Returns (v*, objective, info); info carries KKT residuals of the final
    centering. Objective scaling is normalized internally so tolerances are
    meaningful across instances.
    """
    n = len(prog.c)
    v = np.asarray(v0, dtype=np.float64).copy()
    scale = max(np.max(np.abs(prog.c)), 1e-30)
    c = prog.c / scale

    pre = _Prepared(prog)
    m = pre.m
    if m == 0:
        raise ValueError("program has no constraints")
    s = pre.slacks(v)
    if np.any(s <= 0.0):
        raise InfeasibleError("initial point is not strictly feasible",
                              {"min_slack": float(s.min())})

    jac = pre.jac
    diag = n + 1  # stride of hess.flat for diagonal writes
    # exp/quad rows each own a distinct variable, so plain fancy-index adds
    # on the Hessian diagonal are collision-free
    t = t0
    newton_steps = 0
    restarted = False
    while True:
        stalled = False
        while True:
            centered = False
            for _ in range(max_newton):
                s = pre.slacks(v)
                if pre.exp_xi.size:
                    exp_x = np.exp(v[pre.exp_xi])
                    jac[pre.erows, pre.exp_xi] = exp_x
                if pre.quad_yi.size:
                    jac[pre.qrows, pre.quad_yi] = 2.0 * v[pre.quad_yi]
                inv_s = 1.0 / s
                grad = t * c + jac.T @ inv_s
                js = jac * inv_s[:, None]
                hess = js.T @ js
                if pre.exp_xi.size:
                    hess[pre.exp_xi, pre.exp_xi] += exp_x * inv_s[pre.erows]
                if pre.quad_yi.size:
                    hess[pre.quad_yi, pre.quad_yi] += 2.0 * inv_s[pre.qrows]
                hess.flat[::diag] += 1e-13
                try:
                    step = np.linalg.solve(hess, -grad)
                except np.linalg.LinAlgError:
                    step = np.linalg.lstsq(hess, -grad, rcond=None)[0]
                decrement2 = float(-grad @ step)
                if decrement2 / 2.0 <= newton_tol:
                    centered = True
                    break
                base = t * float(c @ v) - float(np.sum(np.log(s)))
                alpha = 1.0
                accepted = False
                for _bt in range(60):
                    trial = v + alpha * step
                    ss = pre.slacks(trial)
                    if np.all(ss > 0.0):
                        val = t * float(c @ trial) - float(np.sum(np.log(ss)))
                        if val <= base - 0.25 * alpha * decrement2:
                            v = trial
                            accepted = True
                            break
                    alpha *= 0.5
                newton_steps += 1
                if not accepted:
                    break
            if not centered:
                stalled = True
                break
            if m / t <= gap_tol:
                break
            t *= mu
        if stalled and t0 > 1.0 and not restarted:
            # aggressive warm t0 failed; replay the full ladder from v0
            v = np.asarray(v0, dtype=np.float64).copy()
            t = 1.0
            restarted = True
            continue
        break

    s = pre.slacks(v)
    if pre.exp_xi.size:
        jac[pre.erows, pre.exp_xi] = np.exp(v[pre.exp_xi])
    if pre.quad_yi.size:
        jac[pre.qrows, pre.quad_yi] = 2.0 * v[pre.quad_yi]
    lam = 1.0 / (t * s)
    info = {
        "stationarity": float(np.max(np.abs(c + jac.T @ lam))),
        "complementarity": float(np.max(lam * s)),
        "min_slack": float(s.min()),
        "barrier_t": t,
        "newton_steps": newton_steps,
        "dual": lam * scale,
    }
    return v, float(prog.c @ v), info


# ---- SCA pipeline ----

@dataclass
class ScaIterate:
    """Converged (or best) SCA point in solver units."""
    v: np.ndarray
    x_nat: np.ndarray            # per chain
    powers: List[np.ndarray]     # per chain, per edge, watts
    y: List[np.ndarray]          # per chain, per relay hop
    objective: float             # sum of -weight * x_nat
    iterations: int
    converged: bool
    original_feasible: bool
    history: List[float] = field(default_factory=list)


def build_subproblem(problem: ScaProblem, y_lin: Sequence[np.ndarray],
                     p_lin: Sequence[np.ndarray]) -> ConvexProgram:
    """Convexified subproblem at linearization point (y_lin, p_lin)."""
    n = problem.n_vars
    c = np.zeros(n)
    exp_rows: List[Tuple[int, int, float]] = []
    quad_rows: List[Tuple[int, int, float]] = []
    a_rows: List[np.ndarray] = []
    b_rows: List[float] = []
    lb = np.full(n, -np.inf)
    ub = np.full(n, np.inf)

    for ci, ch in enumerate(problem.chains):
        xi = problem.x_idx[ci]
        c[xi] = -ch.weight
        lb[xi] = ch.x_floor_nat
        ub[xi] = ch.amax_nat
        exp_rows.append((xi, problem.p_idx[ci][0], ch.gains[0]))
        for k in range(ch.hops - 1):
            p_out = problem.p_idx[ci][k + 1]
            p_in = problem.p_idx[ci][k]
            y_k = problem.y_idx[ci][k]
            g_out = ch.gains[k + 1]
            g_in = ch.gains[k]
            quad_rows.append((y_k, p_out, g_out))
            # linearized floor: E - 2*yh/qh * y + yh^2/qh^2 * (1 + g_in p_in) <= 0
            yh = float(y_lin[ci][k])
            qh = 1.0 + g_in * float(p_lin[ci][k])
            e_d = np.exp(ch.d_nat[k])
            row = np.zeros(n)
            row[y_k] = -2.0 * yh / qh
            row[p_in] = (yh * yh) * g_in / (qh * qh)
            a_rows.append(row)
            b_rows.append(-e_d - (yh * yh) / (qh * qh))
            lb[y_k] = 1e-9
        for j in problem.p_idx[ci]:
            lb[j] = 0.0

    for node, edge_vars in sorted(problem.node_edges.items()):
        row = np.zeros(n)
        row[edge_vars] = 1.0
        a_rows.append(row)
        b_rows.append(problem.budgets[node])

    a_lin = np.vstack(a_rows) if a_rows else np.zeros((0, n))
    b_lin = np.asarray(b_rows)
    return ConvexProgram(c=c, a_lin=a_lin, b_lin=b_lin, exp_rows=exp_rows,
                         quad_rows=quad_rows, lb=lb, ub=ub)


def _cascade_at(problem: ScaProblem, pad: float):
    """Minimal downstream cascade with fractional headroom pad > 0."""
    n = problem.n_vars
    v = np.zeros(n)
    y_list: List[np.ndarray] = []
    p_list: List[np.ndarray] = []
    node_load: Dict[int, float] = {node: 0.0 for node in problem.node_edges}

    for ci, ch in enumerate(problem.chains):
        h = ch.hops
        p = np.zeros(h)
        g0 = ch.gains[0]
        delta = max(min(0.2, 0.25 * (ch.amax_nat - ch.x_floor_nat)) * pad,
                    1e-12)
        p[0] = (np.exp(ch.x_floor_nat + delta) - 1.0) / g0
        p[0] = max(p[0], 1e-9 * problem.budgets[ch.nodes[0]] * pad)
        y = np.zeros(h - 1)
        for k in range(h - 1):
            q_in = 1.0 + ch.gains[k] * p[k]
            e_d = np.exp(ch.d_nat[k])
            need = (1.0 + 0.3 * pad) * e_d * q_in - 1.0
            p[k + 1] = max(need / ch.gains[k + 1],
                           1e-9 * problem.budgets[ch.nodes[k + 1]] * pad)
            y[k] = max(np.sqrt((1.0 + 0.1 * pad) * e_d * q_in), 2e-9)
        for k in range(h):
            node_load[ch.nodes[k]] += p[k]
        x0 = ch.x_floor_nat + 0.5 * delta
        v[problem.x_idx[ci]] = x0
        v[problem.p_idx[ci]] = p
        if h > 1:
            v[problem.y_idx[ci]] = y
        y_list.append(y)
        p_list.append(p)

    overloads = {node: (load, problem.budgets[node])
                 for node, load in node_load.items()
                 if load > (1.0 - 0.05 * pad) * problem.budgets[node]}
    return v, y_list, p_list, overloads


def find_feasible_point(problem: ScaProblem) -> Tuple[np.ndarray, List[np.ndarray], List[np.ndarray]]:
    """Deterministic strictly feasible start: minimal cascade plus headroom.

    Walks each chain downstream, setting each relay's out-power just above
    what its floor requires given the inflow built so far, then verifies the
    per-node budgets with margin. Headroom backs off geometrically when the
    padded cascade does not fit; the unpadded cascade pointwise lower-bounds
    every feasible power profile, so exhausting the ladder certifies
    infeasibility up to the last margin. Raises InfeasibleError with
    per-node diagnostics in that case.
    """
    overloads: Dict = {}
    for pad in (1.0, 0.3, 0.1, 0.03, 0.01, 1e-3, 1e-4, 1e-5):
        v, y_list, p_list, overloads = _cascade_at(problem, pad)
        if not overloads:
            return v, y_list, p_list
    raise InfeasibleError("cascade exceeds node budgets",
                          {"overloads": overloads})


def _extract(problem: ScaProblem, v: np.ndarray):
    x = np.array([v[i] for i in problem.x_idx])
    p = [v[idx].copy() for idx in problem.p_idx]
    y = [v[idx].copy() for idx in problem.y_idx]
    return x, p, y


def original_feasibility(problem: ScaProblem, p: Sequence[np.ndarray],
                         x: np.ndarray, rel_tol: float = 1e-6) -> bool:
    """Check the unlinearized constraints at a candidate point."""
    for ci, ch in enumerate(problem.chains):
        snr0 = 1.0 + ch.gains[0] * p[ci][0]
        if np.exp(x[ci]) > snr0 * (1.0 + rel_tol):
            return False
        for k in range(ch.hops - 1):
            lhs = 1.0 + ch.gains[k + 1] * p[ci][k + 1]
            rhs = np.exp(ch.d_nat[k]) * (1.0 + ch.gains[k] * p[ci][k])
            if lhs < rhs * (1.0 - rel_tol):
                return False
    loads: Dict[int, float] = {}
    for ci, ch in enumerate(problem.chains):
        for k, node in enumerate(ch.nodes):
            loads[node] = loads.get(node, 0.0) + p[ci][k]
    for node, load in loads.items():
        if load > problem.budgets[node] * (1.0 + rel_tol):
            return False
    return True


def sca_solve(problem: ScaProblem, v0: Optional[np.ndarray] = None,
              tol: float = 1e-6, max_iter: int = 50,
              gap_tol: float = 1e-8, raise_on_max_iter: bool = True) -> ScaIterate:
    """Successive convex approximation loop with warm-startable iterates.

    Each round solves the convexified subproblem at the previous point; the
    surrogate underestimates the true relay ratio, so every iterate stays
    feasible for the original problem and the objective is nonincreasing.
    """
    if v0 is not None:
        v = np.asarray(v0, dtype=np.float64).copy()
        x, p_list, y_list = _extract(problem, v)
        prog0 = build_subproblem(problem, y_list, p_list)
        if np.any(program_slacks(prog0, v) <= 1e-12):
            v, y_list, p_list = find_feasible_point(problem)
    else:
        v, y_list, p_list = find_feasible_point(problem)

    history: List[float] = []
    prev_obj = np.inf
    converged = False
    iterations = 0
    for it in range(max_iter):
        iterations = it + 1
        prog = build_subproblem(problem, y_list, p_list)
        v, obj, info = solve_convex(prog, v, gap_tol=gap_tol)
        history.append(obj)
        # allow for inner-solver slack when checking descent
        if obj > prev_obj + max(tol, 10.0 * gap_tol) * (1.0 + abs(prev_obj)):
            raise NonMonotoneError(
                f"surrogate objective rose from {prev_obj:.9g} to {obj:.9g}")
        x, p_list, y_list = _extract(problem, v)
        if it > 0 and prev_obj - obj <= tol * (1.0 + abs(prev_obj)):
            converged = True
            break
        prev_obj = obj

    x, p_list, y_list = _extract(problem, v)
    iterate = ScaIterate(
        v=v, x_nat=x, powers=p_list, y=y_list,
        objective=float(sum(-ch.weight * x[ci] for ci, ch in enumerate(problem.chains))),
        iterations=iterations, converged=converged,
        original_feasible=original_feasibility(problem, p_list, x),
        history=history,
    )
    if not converged and raise_on_max_iter:
        raise MaxIterationsExceeded(
            f"no convergence in {max_iter} SCA iterations", iterate)
    return iterate


# ---- water-filling for the drift (NUM) allocators ----

def water_fill(weights: np.ndarray, gains: np.ndarray, budget: float,
               p_caps: Optional[np.ndarray] = None) -> np.ndarray:
    """maximize sum w_e ln(1 + p_e g_e) s.t. sum p <= budget, 0 <= p <= cap.

    Exact KKT solution: p_e(lam) = clip(w_e/lam - 1/g_e, 0, cap_e). The spend
    curve sum p(lam) is piecewise linear in 1/lam with breakpoints where an
    edge enters (lam = w g) or saturates (lam = w g / (1 + g cap)), so the
    water level is found by a breakpoint sweep rather than bisection.
    """
    w = np.asarray(weights, dtype=np.float64)
    g = np.asarray(gains, dtype=np.float64)
    if np.any(w < 0.0) or np.any(g <= 0.0) or budget <= 0.0:
        raise ValueError("weights >= 0, gains > 0, budget > 0 required")
    caps = np.full(len(w), np.inf) if p_caps is None else np.asarray(p_caps, dtype=np.float64)
    active = (w > 0.0) & (caps > 0.0)
    if not np.any(active):
        return np.zeros(len(w))
    if len(w) == 1:
        return np.array([min(budget, caps[0])])

    full = np.where(active, caps, 0.0)  # water level -> 0
    if np.isfinite(full).all() and full.sum() <= budget:
        return full

    lam_enter = np.where(active, w * g, 0.0)
    lam_sat = np.where(active & np.isfinite(caps),
                       w * g / (1.0 + g * caps), 0.0)
    events = [(le, 0, e) for e, le in enumerate(lam_enter) if active[e]]
    events += [(ls, 1, e) for e, ls in enumerate(lam_sat)
               if active[e] and ls > 0.0]
    events.sort(key=lambda ev: -ev[0])
    # walk lam downward; inside a segment: sum p = sw/lam - sg + scap
    sw = 0.0
    sg = 0.0
    scap = 0.0
    lam = None
    for i, (lam_hi, kind, e) in enumerate(events):
        if kind == 0:
            sw += w[e]
            sg += 1.0 / g[e]
        else:
            sw -= w[e]
            sg -= 1.0 / g[e]
            scap += caps[e]
        lam_lo = events[i + 1][0] if i + 1 < len(events) else 0.0
        den = budget - scap + sg
        if sw <= 0.0 or den <= 0.0:
            continue
        cand = sw / den
        if lam_lo < cand <= lam_hi * (1.0 + 1e-15):
            lam = cand
            break
    if lam is None or lam <= 0.0:  # numerically all capped
        return full
    p = np.where(active, w / lam - 1.0 / g, 0.0)
    return np.clip(p, 0.0, caps)


# ---- exhaustive reference for solver validation ----

def grid_reference(problem: ScaProblem, steps: int = 40,
                   refine: int = 2) -> Tuple[float, List[np.ndarray]]:
    """Reference optimum of a small instance by gridding edge powers.

    Powers are gridded per edge within the node budgets; the largest
    feasible MBS-edge rate per chain is implied pointwise and the best
    objective kept, with local refinement passes around the incumbent.
    Exponential in the edge count, so only small instances are accepted.
    """
    edges = []  # (chain, hop, node, gain)
    for ci, ch in enumerate(problem.chains):
        for k, node in enumerate(ch.nodes):
            edges.append((ci, k, node, float(ch.gains[k])))
    n_edges = len(edges)
    if n_edges > 5:
        raise ValueError("grid reference limited to 5 power edges")

    lo = np.zeros(n_edges)
    hi = np.array([problem.budgets[node] for (_, _, node, _) in edges])

    def evaluate(pts: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        # pts: (n_edges, N) candidate powers
        n = pts.shape[1]
        ok = np.ones(n, dtype=bool)
        loads: Dict[int, np.ndarray] = {}
        for e, (_, _, node, _) in enumerate(edges):
            loads[node] = loads.get(node, 0.0) + pts[e]
        for node, load in loads.items():
            ok &= load <= problem.budgets[node] * (1.0 + 1e-12)
        obj = np.zeros(n)
        for ci, ch in enumerate(problem.chains):
            idx = [e for e, (c, _, _, _) in enumerate(edges) if c == ci]
            for k in range(ch.hops - 1):
                lhs = 1.0 + ch.gains[k + 1] * pts[idx[k + 1]]
                rhs = np.exp(ch.d_nat[k]) * (1.0 + ch.gains[k] * pts[idx[k]])
                ok &= lhs >= rhs * (1.0 - 1e-12)
            x = np.minimum(np.log1p(ch.gains[0] * pts[idx[0]]), ch.amax_nat)
            ok &= x >= ch.x_floor_nat - 1e-9
            obj -= ch.weight * x
        obj[~ok] = np.inf
        return obj, ok

    best_obj = np.inf
    best_p = None
    hi_cap = hi.copy()
    for _ in range(refine + 1):
        axes = [np.linspace(lo[e], hi[e], steps) for e in range(n_edges)]
        mesh = np.meshgrid(*axes, indexing="ij")
        pts = np.stack([m.ravel() for m in mesh])
        obj, ok = evaluate(pts)
        i = int(np.argmin(obj))
        if not np.isfinite(obj[i]):
            break
        if obj[i] < best_obj:
            best_obj = float(obj[i])
            best_p = pts[:, i].copy()
        # the objective is flat along slack power directions, so zoom on the
        # bounding box of every near-optimal point, not a single argmin
        near = pts[:, obj <= obj[i] + 1e-9 * (1.0 + abs(obj[i]))]
        span = (hi - lo) / (steps - 1)
        lo = np.maximum(near.min(axis=1) - 2.0 * span, 0.0)
        hi = np.minimum(near.max(axis=1) + 2.0 * span, hi_cap)
    if best_p is None:
        raise InfeasibleError("no feasible grid point", {})
    powers = []
    for ci, ch in enumerate(problem.chains):
        idx = [e for e, (c, _, _, _) in enumerate(edges) if c == ci]
        powers.append(best_p[idx])
    return best_obj, powers
