"""Fractional optimal transport assignment (FOTA).

Tracks carry mass ``p``, detections mass ``q``; only a fraction ``s`` of the
mass is transported. The cost matrix is extended by one dustbin row and
column so the fractional problem becomes a balanced one, which is then solved
with entropic Sinkhorn-Knopp scaling in the log domain.

The dustbin blocks carry cost ``epsilon`` and the corner ``2*epsilon + max(C)``.
With that layout the interior transported mass is exactly ``s`` for
non-negative costs, so ``s`` (not ``epsilon``) decides how many detections are
matched. :func:`admissible_fraction` picks ``s`` as the largest mass that can be
moved along pairs costing at most ``epsilon``.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

UNMATCHED = -1
MAX_ORACLE_PAIRS = 64
_MAX_ENUMERATION = 250_000
# column error below which Newton steps take over from plain sweeps
NEWTON_SWITCH = 1e-2


class SolverNumericalError(ArithmeticError):
    """The Sinkhorn kernel or plan became non-finite (gamma too small for the cost scale)."""


@dataclass(frozen=True, eq=False)
class TransportProblem:
    cost: np.ndarray
    p: np.ndarray
    q: np.ndarray
    s: float
    epsilon: float = 0.0
    gamma: float = 0.1
    max_iters: int = 50
    tol: float = 1e-6

    def __post_init__(self) -> None:
        cost = np.array(self.cost, dtype=float, ndmin=2)
        p = np.array(self.p, dtype=float).reshape(-1)
        q = np.array(self.q, dtype=float).reshape(-1)
        if cost.size == 0:
            raise ValueError("cost matrix must be non-empty")
        if not np.all(np.isfinite(cost)):
            raise ValueError("cost entries must be finite")
        if cost.shape != (p.size, q.size):
            raise ValueError(f"cost shape {cost.shape} does not match masses ({p.size}, {q.size})")
        if np.any(p <= 0) or np.any(q <= 0):
            raise ValueError("masses must be positive")
        bound = min(p.sum(), q.sum())
        if not 0.0 < self.s <= bound * (1.0 + 1e-12):
            raise ValueError(f"fraction s={self.s} must lie in (0, {bound}]")
        if not (self.epsilon >= 0.0 and math.isfinite(self.epsilon)):
            raise ValueError("epsilon must be finite and >= 0")
        if not self.gamma > 0.0:
            raise ValueError("gamma must be > 0")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if not self.tol > 0.0:
            raise ValueError("tol must be > 0")
        object.__setattr__(self, "cost", cost)
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "s", float(min(self.s, bound)))

    @property
    def shape(self) -> tuple[int, int]:
        return self.cost.shape

    def extended_masses(self) -> tuple[np.ndarray, np.ndarray]:
        P, Q = self.p.sum(), self.q.sum()
        p_bar = np.append(self.p, max(Q - self.s, 0.0))
        q_bar = np.append(self.q, max(P - self.s, 0.0))
        return p_bar, q_bar

    def extended_cost(self) -> np.ndarray:
        return extend_cost(self.cost, self.epsilon)


@dataclass(frozen=True, eq=False)
class TransportPlan:
    plan: np.ndarray
    iterations_used: int
    marginal_error: float
    converged: bool
    error_history: tuple[float, ...] = field(default=(), repr=False)


@dataclass(frozen=True)
class Assignment:
    detection_to_track: tuple[int, ...]
    track_to_detections: tuple[tuple[int, ...], ...]

    def __post_init__(self) -> None:
        seen = [UNMATCHED] * len(self.detection_to_track)
        for i, dets in enumerate(self.track_to_detections):
            for j in dets:
                if seen[j] != UNMATCHED:
                    raise ValueError(f"detection {j} assigned to more than one track")
                seen[j] = i
        if tuple(seen) != tuple(self.detection_to_track):
            raise ValueError("detection_to_track and track_to_detections disagree")

    @classmethod
    def from_detection_map(cls, det_to_track: Sequence[int], num_tracks: int) -> "Assignment":
        per_track: list[list[int]] = [[] for _ in range(num_tracks)]
        for j, i in enumerate(det_to_track):
            if i != UNMATCHED:
                per_track[i].append(j)
        return cls(tuple(int(i) for i in det_to_track), tuple(tuple(t) for t in per_track))

    @classmethod
    def empty(cls, num_tracks: int, num_dets: int) -> "Assignment":
        return cls((UNMATCHED,) * num_dets, ((),) * num_tracks)

    def pairs(self) -> list[tuple[int, int]]:
        return [(i, j) for j, i in enumerate(self.detection_to_track) if i != UNMATCHED]

    def to_dict(self) -> dict:
        return {
            "detection_to_track": list(self.detection_to_track),
            "track_to_detections": [list(t) for t in self.track_to_detections],
        }


def extend_cost(cost: np.ndarray, epsilon: float) -> np.ndarray:
    """[[C, eps*1], [eps*1^T, 2*eps + max(C)]]."""
    C = np.array(cost, dtype=float, ndmin=2)
    if C.size == 0:
        raise ValueError("cost matrix must be non-empty")
    if not np.all(np.isfinite(C)) or not (epsilon >= 0.0 and math.isfinite(epsilon)):
        raise ValueError("cost and epsilon must be finite, epsilon >= 0")
    n, m = C.shape
    out = np.empty((n + 1, m + 1))
    out[:n, :m] = C
    out[:n, m] = epsilon
    out[n, :m] = epsilon
    out[n, m] = 2.0 * epsilon + C.max()
    return out


def _lse(X: np.ndarray, axis: int) -> np.ndarray:
    mx = X.max(axis=axis, keepdims=True)
    if np.isfinite(mx).all():
        return np.log(np.exp(X - mx).sum(axis=axis)) + np.squeeze(mx, axis)
    finite = np.isfinite(mx)
    safe = np.where(finite, mx, 0.0)
    with np.errstate(divide="ignore"):
        out = np.log(np.exp(X - safe).sum(axis=axis)) + np.squeeze(safe, axis)
    return np.where(np.squeeze(finite, axis), out, -np.inf)


def _sweeps(log_w, log_p, log_q, q_bar, f, g, budget, tol, history):
    """Run up to ``budget`` column/row scaling sweeps; returns (f, g, sweeps, err)."""
    err = math.inf
    done = 0
    for it in range(budget + 1):
        lse_cols = _lse(log_w + f[:, None], axis=0)
        if it > 0:
            err = float(np.max(np.abs(np.exp(g + lse_cols) - q_bar)))
            history.append(err)
            if err <= tol or it == budget:
                break
        g = log_q - lse_cols
        f = log_p - _lse(log_w + g[None, :], axis=1)
        done = it + 1
    return f, g, done, err


def _newton(log_w, log_p, log_q, p_bar, q_bar, f, g, budget, tol, history):
    """Damped Newton ascent on the entropic dual in log-potential form.

    Dual (in units of gamma): D(f, g) = <f, p> + <g, q> - sum exp(f + log_w + g),
    concave, with gradient equal to the marginal residuals. Steps are
    backtracked until D increases (Armijo), then rows are rescaled exactly,
    which can only increase D further. Zero-mass rows/columns stay at -inf.
    Returns (f, g, steps, err).
    """
    rows = np.isfinite(log_p)
    cols = np.isfinite(log_q)
    n = int(rows.sum())
    lw = log_w[np.ix_(rows, cols)]
    fr, gc = f[rows].copy(), g[cols].copy()
    pr, qc = p_bar[rows], q_bar[cols]
    lpr = log_p[rows]

    def evaluate(fr, gc):
        with np.errstate(over="ignore"):
            P = np.exp(fr[:, None] + lw + gc[None, :])
        return P, float(fr @ pr + gc @ qc - P.sum())

    P, dual = evaluate(fr, gc)
    err = float(np.max(np.abs(P.sum(axis=0) - qc)))
    steps = 0
    while steps < budget and err > tol:
        rsum, csum = P.sum(axis=1), P.sum(axis=0)
        grad = np.concatenate([pr - rsum, qc - csum])
        J = np.block([[np.diag(rsum), P], [P.T, np.diag(csum)]])
        # J is singular along (1, -1); lstsq returns the minimum-norm step
        delta = np.linalg.lstsq(J, grad, rcond=None)[0]
        slope = float(grad @ delta)
        t = 1.0
        accepted = False
        while t >= 1e-10:
            f_try = fr + t * delta[:n]
            g_try = gc + t * delta[n:]
            P_try, d_try = evaluate(f_try, g_try)
            if np.isfinite(d_try) and d_try >= dual + 1e-4 * t * slope:
                accepted = True
                break
            t *= 0.5
        steps += 1
        if not accepted:
            break
        f_try = lpr - _lse(lw + g_try[None, :], axis=1)
        P, dual = evaluate(f_try, g_try)
        fr, gc = f_try, g_try
        err = float(np.max(np.abs(P.sum(axis=0) - qc)))
        history.append(err)
    f = f.copy()
    g = g.copy()
    f[rows], g[cols] = fr, gc
    return f, g, steps, err


def anneal_schedule(cost_range: float, gamma: float, max_iters: int, factor: float = 0.5) -> list[tuple[float, int]]:
    """Geometric gamma schedule ending at ``gamma``; (gamma_k, sweeps) per stage.

    Half of the budget at most goes to the warm-up stages, so the final
    ``gamma`` always gets at least ``max_iters // 2`` sweeps.
    """
    stages: list[float] = []
    g = cost_range
    while g > gamma * 1.5:
        stages.append(g)
        g *= factor
    if not stages or max_iters < 4:
        return [(gamma, max_iters)]
    per_stage = max(1, min(10, (max_iters // 2) // len(stages)))
    warm = [(gk, per_stage) for gk in stages]
    used = per_stage * len(stages)
    if used > max_iters // 2:
        # too many stages for the budget: keep the finest ones
        keep = max(1, (max_iters // 2) // per_stage)
        warm = warm[-keep:]
        used = per_stage * len(warm)
    return warm + [(gamma, max_iters - used)]


def sinkhorn(problem: TransportProblem, anneal: bool = True, newton: bool = True) -> TransportPlan:
    """Log-domain Sinkhorn-Knopp on the dustbin-extended problem.

    Each sweep rescales columns then rows, so after a sweep the row marginals
    are exact and the reported error is the column deviation. Stops early once
    the error is within ``problem.tol``; otherwise returns the last plan with
    ``converged=False``.

    With ``anneal`` the sweeps start from a coarse regularisation and halve it
    down to ``problem.gamma``, warm-starting the dual potentials; the fixed
    point is the same, but small gammas are reached in far fewer sweeps.
    With ``newton``, once the sweeps have brought the column error under
    ``NEWTON_SWITCH`` the remaining budget is spent on Newton steps on the same
    dual; each step counts as one sweep.
    ``max_iters`` bounds the total number of sweeps either way.
    """
    C_bar = problem.extended_cost()
    p_bar, q_bar = problem.extended_masses()
    with np.errstate(divide="ignore"):
        log_p = np.log(p_bar)
        log_q = np.log(q_bar)
    with np.errstate(over="ignore", invalid="ignore"):
        log_w = -C_bar / problem.gamma
    if not np.all(np.isfinite(log_w)):
        raise SolverNumericalError(f"kernel overflow: gamma={problem.gamma} too small for cost scale {C_bar.max():g}")

    if anneal:
        schedule = anneal_schedule(float(C_bar.max() - C_bar.min()), problem.gamma, problem.max_iters)
    else:
        schedule = [(problem.gamma, problem.max_iters)]
    # dual potentials alpha = gamma * f, beta = gamma * g carry across stages
    alpha = np.zeros(p_bar.size)
    beta = np.zeros(q_bar.size)
    history: list[float] = []
    sweeps = 0
    err = math.inf
    for k, (gk, budget) in enumerate(schedule):
        final = k == len(schedule) - 1
        lw = log_w if final else -C_bar / gk
        stage_hist: list[float] = []
        tol = problem.tol
        if final and newton:
            tol = max(problem.tol, NEWTON_SWITCH)
        f, g, done, err = _sweeps(lw, log_p, log_q, q_bar, alpha / gk, beta / gk, budget,
                                  tol, stage_hist if not final else history)
        sweeps += done
        if final and newton and err > problem.tol and sweeps < problem.max_iters:
            f, g, steps, err = _newton(lw, log_p, log_q, p_bar, q_bar, f, g,
                                       problem.max_iters - sweeps, problem.tol, history)
            sweeps += steps
        alpha = np.where(np.isfinite(f), f * gk, -np.inf)
        beta = np.where(np.isfinite(g), g * gk, -np.inf)
    f, g = alpha / problem.gamma, beta / problem.gamma

    with np.errstate(invalid="ignore"):
        plan = np.exp(f[:, None] + log_w + g[None, :])
    if not np.all(np.isfinite(plan)):
        raise SolverNumericalError("transport plan is not finite")
    marginal_error = float(max(np.max(np.abs(plan.sum(axis=1) - p_bar)), np.max(np.abs(plan.sum(axis=0) - q_bar))))
    return TransportPlan(
        plan=plan,
        iterations_used=sweeps,
        marginal_error=marginal_error,
        converged=marginal_error <= problem.tol,
        error_history=tuple(history),
    )


def extract_assignment(plan: TransportPlan | np.ndarray, min_mass: float = 0.3) -> Assignment:
    """Send each detection column to its heaviest row; the dustbin row or a
    winning mass below ``min_mass`` means unmatched. Ties go to the lower row."""
    P = plan.plan if isinstance(plan, TransportPlan) else np.asarray(plan, dtype=float)
    n, m = P.shape[0] - 1, P.shape[1] - 1
    interior = P[:, :m]
    rows = np.argmax(interior, axis=0)
    best = interior[rows, np.arange(m)]
    det_to_track = [int(r) if (r != n and best[j] >= min_mass) else UNMATCHED for j, r in enumerate(rows)]
    return Assignment.from_detection_map(det_to_track, n)


def admissible_fraction(cost: np.ndarray, p: Sequence[float], q: Sequence[float], epsilon: Optional[float]) -> float:
    """Largest mass transportable using only pairs with cost <= epsilon.

    ``epsilon=None`` admits every pair, giving min(|p|_1, |q|_1).
    """
    C = np.array(cost, dtype=float, ndmin=2)
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    total = float(min(p.sum(), q.sum()))
    if epsilon is None or C.size == 0:
        return total if C.size else 0.0
    ok = C <= epsilon
    if not ok.any():
        return 0.0
    if ok.all():
        return total
    n, m = C.shape
    if np.all(q == 1.0) and np.all(ok.sum(axis=1) <= p):
        # every row can absorb all of its admissible columns at once
        return float(np.count_nonzero(ok.any(axis=0)))
    integral = np.all(p == np.round(p)) and np.all(q == np.round(q))
    if integral:
        from scipy.sparse import csr_matrix
        from scipy.sparse.csgraph import maximum_flow

        src, sink = 0, n + m + 1
        ii, jj = np.nonzero(ok)
        rows = np.concatenate([np.zeros(n, dtype=np.int64), 1 + ii, 1 + n + np.arange(m)])
        cols = np.concatenate([1 + np.arange(n), 1 + n + jj, np.full(m, sink)])
        caps = np.concatenate([p, np.minimum(p[ii], q[jj]), q]).astype(np.int32)
        graph = csr_matrix((caps, (rows, cols)), shape=(n + m + 2, n + m + 2))
        return float(maximum_flow(graph, src, sink).flow_value)
    import networkx as nx

    G = nx.DiGraph()
    for i in range(n):
        G.add_edge("s", ("r", i), capacity=float(p[i]))
    for j in range(m):
        G.add_edge(("c", j), "t", capacity=float(q[j]))
    for i, j in zip(*np.nonzero(ok)):
        G.add_edge(("r", int(i)), ("c", int(j)), capacity=float(min(p[i], q[j])))
    return float(min(nx.maximum_flow_value(G, "s", "t"), total))


def make_problem(
    cost: np.ndarray,
    p: Optional[Sequence[float]] = None,
    q: Optional[Sequence[float]] = None,
    s: Optional[float] = None,
    epsilon: Optional[float] = None,
    gamma: float = 0.1,
    max_iters: int = 50,
    tol: float = 1e-6,
) -> TransportProblem:
    """Build a problem with unit masses and ``s`` chosen by
    :func:`admissible_fraction` unless given. Returns ``None`` when nothing is
    admissible (s would be 0)."""
    C = np.array(cost, dtype=float, ndmin=2)
    n, m = C.shape
    p = np.ones(n) if p is None else np.asarray(p, dtype=float)
    q = np.ones(m) if q is None else np.asarray(q, dtype=float)
    if s is None:
        s = admissible_fraction(C, p, q, epsilon)
        if s <= 0.0:
            return None  # type: ignore[return-value]
    eps = float(C.max()) if epsilon is None else float(epsilon)
    return TransportProblem(C, p, q, s, eps, gamma, max_iters, tol)


def solve_with_plan(problem: TransportProblem, min_mass: float = 0.3, anneal: bool = True,
                    newton: bool = True) -> tuple[TransportPlan, Assignment]:
    plan = sinkhorn(problem, anneal=anneal, newton=newton)
    return plan, extract_assignment(plan, min_mass)


def solve(problem: TransportProblem, min_mass: float = 0.3, anneal: bool = True, newton: bool = True) -> Assignment:
    """extend -> sinkhorn -> extract."""
    return solve_with_plan(problem, min_mass, anneal, newton)[1]


def transport_cost(problem: TransportProblem, plan: np.ndarray) -> float:
    """<C_bar, plan> on the extended problem."""
    return float(np.sum(problem.extended_cost() * np.asarray(plan)))


def lp_oracle(problem: TransportProblem) -> tuple[np.ndarray, float]:
    """Exact optimum of the extended (unregularised) transport problem.

    Integral masses with unit detections are solved by enumerating every
    placement of each detection onto a track row or the dustbin; anything
    else goes to an exact LP solve. Desk scale only.
    """
    n, m = problem.shape
    if n * m > MAX_ORACLE_PAIRS:
        raise ValueError(f"instance too large for the oracle ({n}x{m} > {MAX_ORACLE_PAIRS} pairs)")
    p, q, s = problem.p, problem.q, problem.s
    integral = np.all(p == np.round(p)) and np.all(q == 1.0) and s == round(s)
    if integral and (n + 1) ** m <= _MAX_ENUMERATION:
        return _enumerate(problem)
    return _linprog(problem)


def _enumerate(problem: TransportProblem) -> tuple[np.ndarray, float]:
    n, m = problem.shape
    C_bar = problem.extended_cost()
    p = problem.p
    Q = problem.q.sum()
    s = problem.s
    eps = problem.epsilon
    corner = C_bar[n, m]
    dust_cap = Q - s

    placements = np.array(list(itertools.product(range(n + 1), repeat=m)), dtype=np.int64)
    interior = C_bar[placements, np.arange(m)[None, :]].sum(axis=1)
    loads = np.stack([(placements == i).sum(axis=1) for i in range(n + 1)], axis=1)
    d = loads[:, n]
    feasible = (d <= dust_cap + 1e-9) & np.all(loads[:, :n] <= p[None, :] + 1e-9, axis=1)
    leftover = (p[None, :] - loads[:, :n]).sum(axis=1)
    total = interior + eps * leftover + corner * (dust_cap - d)
    total = np.where(feasible, total, np.inf)
    best = int(np.argmin(total))
    if not np.isfinite(total[best]):
        raise ValueError("no feasible integral placement")

    plan = np.zeros((n + 1, m + 1))
    for j, i in enumerate(placements[best]):
        plan[i, j] = 1.0
    plan[:n, m] = p - loads[best, :n]
    plan[n, m] = dust_cap - d[best]
    return plan, float(np.sum(C_bar * plan))


def _linprog(problem: TransportProblem) -> tuple[np.ndarray, float]:
    from scipy.optimize import linprog

    C_bar = problem.extended_cost()
    p_bar, q_bar = problem.extended_masses()
    n1, m1 = C_bar.shape
    A_eq = np.zeros((n1 + m1, n1 * m1))
    for i in range(n1):
        A_eq[i, i * m1:(i + 1) * m1] = 1.0
    for j in range(m1):
        A_eq[n1 + j, j::m1] = 1.0
    b_eq = np.concatenate([p_bar, q_bar])
    res = linprog(C_bar.ravel(), A_eq=A_eq, b_eq=b_eq, bounds=(0, None), method="highs-ds")
    if not res.success:
        raise ValueError(f"LP oracle failed: {res.message}")
    plan = np.maximum(res.x.reshape(n1, m1), 0.0)
    return plan, float(np.sum(C_bar * plan))
