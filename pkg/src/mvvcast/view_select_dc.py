"""
View selection on the mean-channel approximation.

The binary utilization matrix is relaxed to [0, 1], the integrality is
restored by the exact penalty ``rho * sum y (1 - y)``, and the resulting
difference-of-convex program is solved by linearizing the (concave) penalty
around the previous iterate. Each linearized problem is an exponential-cone
program handed to cvxpy/Clarabel.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import cvxpy as cp
import numpy as np
from scipy.optimize import brentq
from scipy.special import lambertw

from .model import (SystemParams, ViewLattice, ViewSelection, neighborhood_indices,
                    validate_selection)

log = logging.getLogger(__name__)

LN2 = np.log(2.0)
SNAP = 1e-7
NUDGE = 1e-2


class SubproblemError(RuntimeError):
    """The conic solver did not return an optimal point."""


@dataclass
class ContinuousSelection:
    y: np.ndarray
    L: np.ndarray


@dataclass(frozen=True)
class MeanChannel:
    Hbar: np.ndarray

    def __post_init__(self):
        h = np.asarray(self.Hbar, dtype=float).ravel()
        if h.size == 0 or not np.all(h > 0):
            raise ValueError("mean channel gains must be positive")
        object.__setattr__(self, "Hbar", h)


@dataclass(frozen=True)
class DCConfig:
    """Penalized DC settings.

    ``rho=None`` starts the penalty at ``rho_scale * (E_b + beta * max E_u)``.
    A start below the energy scale lets binary random starts move before the
    penalty locks them in; escalation then restores integrality.
    """

    rho: float | None = None
    rho_scale: float = 0.1
    rho_growth: float = 2.0
    max_escalations: int = 20
    max_outer: int = 100
    starts: int = 10
    tol_obj: float = 1e-6
    tol_penalty: float | None = None
    subproblem_tol: float = 1e-8
    L_floor: float = 1e-6

    def __post_init__(self):
        if self.rho is not None and not self.rho > 0:
            raise ValueError("rho must be positive")
        if not self.rho_scale > 0:
            raise ValueError("rho_scale must be positive")
        if not self.rho_growth > 1:
            raise ValueError("rho_growth must exceed 1")
        if self.starts < 1 or self.max_outer < 1 or self.max_escalations < 0:
            raise ValueError("starts and max_outer must be at least 1")
        for name in ("tol_obj", "subproblem_tol", "L_floor"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.tol_penalty is not None and not self.tol_penalty > 0:
            raise ValueError("tol_penalty must be positive")

    def initial_rho(self, params: SystemParams) -> float:
        if self.rho is not None:
            return self.rho
        rho = self.rho_scale * (params.E_b + params.beta * float(params.user_energies.max()))
        return rho if rho > 0 else 1e-4

    def penalty_tol(self, params: SystemParams) -> float:
        return self.tol_penalty if self.tol_penalty is not None else 1e-6 * params.K


@dataclass
class DCTrace:
    """Penalized objective after every accepted step, with the rho in force."""

    values: list = field(default_factory=list)
    rhos: list = field(default_factory=list)
    solves: int = 0
    penalty: float = np.inf
    converged: bool = False

    def segments(self) -> list[np.ndarray]:
        """Values grouped by constant rho."""
        out, cur, last = [], [], None
        for v, r in zip(self.values, self.rhos):
            if last is not None and r != last:
                out.append(np.array(cur))
                cur = []
            cur.append(v)
            last = r
        if cur:
            out.append(np.array(cur))
        return out


def _hbar(Hbar) -> np.ndarray:
    return Hbar.Hbar if isinstance(Hbar, MeanChannel) else MeanChannel(Hbar).Hbar


# smooth part --------------------------------------------------------------

def exp_term(y, L, hbar, params: SystemParams):
    """n0 T L / hbar * (2^(y R / (L B)) - 1), elementwise, for L > 0."""
    c = params.R / params.B
    y, L, hbar = np.broadcast_arrays(*map(np.asarray, (y, L, hbar)))
    return params.n0 * params.T * L / hbar * np.expm1(LN2 * c * y / L)


def exp_term_grad(y, L, hbar, params: SystemParams):
    """Partial derivatives of ``exp_term`` with respect to y and L."""
    c = params.R / params.B
    y, L, hbar = np.broadcast_arrays(*map(np.asarray, (y, L, hbar)))
    a = LN2 * c * y / L
    scale = params.n0 * params.T / hbar
    dy = scale * LN2 * c * np.exp(a)
    dL = scale * (np.expm1(a) - a * np.exp(a))
    return dy, dL


def transmission_term(y, L, params: SystemParams, Hbar) -> float:
    hbar = _hbar(Hbar)
    y = np.asarray(y, dtype=float)
    L = np.asarray(L, dtype=float)
    total = 0.0
    with np.errstate(over="ignore"):
        for v in range(y.shape[1]):
            col = y[:, v]
            if not np.any(col > 0):
                continue
            if L[v] <= 0:
                return np.inf
            total += float(np.max(exp_term(col, L[v], hbar, params)))
    return total


def approx_objective(cs: ContinuousSelection, params: SystemParams, Hbar, lattice: ViewLattice) -> float:
    """Mean-channel energy per slot (transmission + weighted synthesis), no penalty."""
    y = np.asarray(cs.y, dtype=float)
    tx = transmission_term(y, cs.L, params, Hbar)
    server = params.E_b * float(y[:, lattice.synthetic_mask].max(axis=0, initial=0.0).sum())
    req = [lattice.index(r) for r in params.requests]
    users = float(np.dot(1.0 - y[np.arange(params.K), req], params.user_energies))
    return tx + server + params.beta * users


def penalty(y) -> float:
    y = np.asarray(y, dtype=float)
    return float(np.sum(y * (1.0 - y)))


# subcarrier split for a fixed support -------------------------------------

def optimal_split(weights, N: float, c: float) -> np.ndarray:
    """Minimize sum_v w_v L_v (2^(c/L_v) - 1) subject to sum L = N.

    Stationarity gives L_v = c ln2 / x_v with e^x (x - 1) + 1 = nu / w_v, and
    the common multiplier nu is found by a 1-D root search.
    """
    w = np.asarray(weights, dtype=float)
    if w.size == 0:
        return w.copy()
    if w.size == 1:
        return np.array([float(N)])

    def lengths(lognu):
        r = np.exp(lognu) / w
        x = 1.0 + np.real(lambertw((r - 1.0) / np.e))
        return c * LN2 / x

    def excess(lognu):
        return np.log(lengths(lognu).sum() / N)

    # equal split as a reference point for the bracket
    x0 = c * LN2 * w.size / N
    ref = np.log(np.max(w)) + np.log(np.exp(x0) * (x0 - 1.0) + 1.0)
    lo, hi = ref - 5.0, ref + 5.0
    while excess(lo) < 0:
        lo -= 10.0
    while excess(hi) > 0:
        hi += 10.0
    lognu = brentq(excess, lo, hi, xtol=1e-14, rtol=1e-15, maxiter=500)
    L = lengths(lognu)
    return L * (N / L.sum())


def binary_split(y, params: SystemParams, Hbar) -> np.ndarray:
    """Optimal fractional subcarrier counts for a binary ``y`` (zeros for idle views)."""
    hbar = _hbar(Hbar)
    y = np.asarray(y) > 0.5
    L = np.zeros(y.shape[1])
    active = np.flatnonzero(y.any(axis=0))
    if active.size:
        weights = np.array([np.max(1.0 / hbar[y[:, v]]) for v in active])
        L[active] = optimal_split(weights, params.N, params.R / params.B)
    return L


def binary_objective(y, params: SystemParams, Hbar, lattice: ViewLattice) -> float:
    """approx_objective of a binary selection with its optimal split."""
    y = (np.asarray(y) > 0.5).astype(float)
    return approx_objective(ContinuousSelection(y, binary_split(y, params, Hbar)), params, Hbar, lattice)


# convex subproblem ---------------------------------------------------------

class ConvexSubproblem:
    """Linearized-penalty subproblem for one instance, compiled once.

    Variables are the admissible utilization entries ``z`` (user, view in the
    user's window), fractional counts ``L`` and epigraphs ``t`` (transmission,
    per view) and ``s`` (max over users, synthetic views). The objective is
    scaled by ``n0 T / min(Hbar)`` to keep the conic solver near unit scale.
    """

    def __init__(self, params: SystemParams, Hbar, lattice: ViewLattice, L_floor: float = 1e-6,
                 tol: float = 1e-8):
        hbar = _hbar(Hbar)
        if hbar.size != params.K:
            raise ValueError(f"need {params.K} mean gains, got {hbar.size}")
        self.params, self.hbar, self.lattice, self.tol = params, hbar, lattice, tol
        K, nv = params.K, len(lattice)
        self.windows = neighborhood_indices(params, lattice)
        pairs = []
        for k, (r, left, right) in enumerate(self.windows):
            for v in sorted({r, *left, *right}):
                pairs.append((k, v))
        self.pairs = np.array(pairs, dtype=int)
        self.views = np.unique(self.pairs[:, 1])
        col = {v: i for i, v in enumerate(self.views)}
        pos = {p: i for i, p in enumerate(pairs)}
        self.pos = pos
        ent_view = np.array([col[v] for _, v in pairs])
        ent_user = self.pairs[:, 0]
        synth = [v for v in self.views if lattice.synthetic_mask[v]]
        nz, nu = len(pairs), len(self.views)

        self.unit = params.n0 * params.T / hbar.min()
        c = params.R / params.B
        z = cp.Variable(nz)
        L = cp.Variable(nu)
        t = cp.Variable(nu)
        self.coef = cp.Parameter(nz)
        cons = [z >= 0, z <= 1, cp.sum(L) <= params.N]
        for k, (r, left, right) in enumerate(self.windows):
            rk = pos[(k, r)]
            cons.append(z[rk] + sum((z[pos[(k, a)]] for a in left), 0) == 1)
            cons.append(z[rk] + sum((z[pos[(k, b)]] for b in right), 0) == 1)
        gain = hbar[ent_user] / hbar.min()
        cons.append(cp.constraints.ExpCone(LN2 * c * z, L[ent_view], L[ent_view] + cp.multiply(gain, t[ent_view])))
        counts = np.zeros((nu, nz))
        counts[ent_view, np.arange(nz)] = 1.0
        cons.append(L >= (L_floor / K) * (counts @ z))
        obj = cp.sum(t) + self.coef @ z
        if synth:
            s = cp.Variable(len(synth))
            srow = {v: i for i, v in enumerate(synth)}
            sel = [(srow[v], i) for i, (_, v) in enumerate(pairs) if v in srow]
            si = np.array([a for a, _ in sel])
            zi = np.array([b for _, b in sel])
            cons.append(s[si] >= z[zi])
            obj = obj + (params.E_b / self.unit) * cp.sum(s)
        # direct-reception reward (the constant beta * sum E_u is dropped)
        self.lin0 = np.zeros(nz)
        for k, (r, _, _) in enumerate(self.windows):
            self.lin0[pos[(k, r)]] = -params.beta * params.user_energies[k] / self.unit
        self.z, self.L = z, L
        self.problem = cp.Problem(cp.Minimize(obj), cons)
        self.nv = nv

    def gather(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        return y[self.pairs[:, 0], self.pairs[:, 1]]

    def solve(self, anchor_y, rho: float) -> ContinuousSelection:
        a = self.gather(anchor_y)
        self.coef.value = self.lin0 + (rho / self.unit) * (1.0 - 2.0 * a)
        tol = self.tol
        try:
            with warnings.catch_warnings():
                # inaccurate solves are accepted and guarded by the descent check
                warnings.simplefilter("ignore", UserWarning)
                self.problem.solve(solver=cp.CLARABEL, tol_gap_abs=tol, tol_gap_rel=tol, tol_feas=tol,
                                   tol_ktratio=min(1e-6, tol), max_iter=500)
        except cp.error.SolverError as exc:
            raise SubproblemError(str(exc)) from exc
        if self.problem.status not in (cp.OPTIMAL, cp.OPTIMAL_INACCURATE) or self.z.value is None:
            raise SubproblemError(f"conic solver status {self.problem.status}")
        if self.problem.status == cp.OPTIMAL_INACCURATE:
            log.debug("subproblem solved inaccurately")
        z = np.clip(self.z.value, 0.0, 1.0)
        z[z < SNAP] = 0.0
        z[z > 1.0 - SNAP] = 1.0
        y = np.zeros((self.params.K, self.nv))
        y[self.pairs[:, 0], self.pairs[:, 1]] = z
        L = np.zeros(self.nv)
        L[self.views] = np.maximum(self.L.value, 0.0)
        # keep the perspective finite wherever some utilization survives
        need = y.max(axis=0) > 0
        L[need & (L <= 0)] = SNAP
        return ContinuousSelection(y, L)


def solve_convex_subproblem(anchor_y, rho: float, params: SystemParams, Hbar, lattice: ViewLattice,
                            subproblem_tol: float = 1e-8, L_floor: float = 1e-6) -> ContinuousSelection:
    """One majorize-minimize step: minimize the objective plus the linearized penalty at ``anchor_y``."""
    return ConvexSubproblem(params, Hbar, lattice, L_floor, subproblem_tol).solve(anchor_y, rho)


def penalized_value(cs: ContinuousSelection, rho: float, params, Hbar, lattice) -> float:
    return approx_objective(cs, params, Hbar, lattice) + rho * penalty(cs.y)


def dc_iterate(start: ContinuousSelection, cfg: DCConfig, params: SystemParams, Hbar, lattice: ViewLattice,
               model: ConvexSubproblem | None = None) -> tuple[ContinuousSelection, DCTrace]:
    """Penalized DC iterations with rho escalation until the iterate is binary.

    A step that would raise the penalized objective (solver noise) is
    rejected, so each constant-rho segment of the trace is non-increasing.
    """
    if model is None:
        model = ConvexSubproblem(params, Hbar, lattice, cfg.L_floor, cfg.subproblem_tol)
    rho = cfg.initial_rho(params)
    tol_pen = cfg.penalty_tol(params)
    cur = ContinuousSelection(np.asarray(start.y, dtype=float), np.asarray(start.L, dtype=float))
    trace = DCTrace()
    value = penalized_value(cur, rho, params, Hbar, lattice)
    trace.values.append(value)
    trace.rhos.append(rho)
    for esc in range(cfg.max_escalations + 1):
        anchor, nudged = cur.y, False
        for _ in range(cfg.max_outer):
            new = model.solve(anchor, rho)
            trace.solves += 1
            new_value = penalized_value(new, rho, params, Hbar, lattice)
            drop = value - new_value
            if drop >= 0:
                cur, value = new, new_value
                trace.values.append(value)
                trace.rhos.append(rho)
                if drop > cfg.tol_obj * abs(value):
                    anchor, nudged = cur.y, False
                    continue
            # Stalled. Entries at 1/2 give the linearized penalty zero slope, so a
            # symmetric fractional point can be stationary for every rho; move
            # the linearization point slightly toward the rounded selection once.
            if nudged or penalty(cur.y) <= tol_pen:
                break
            nudged = True
            target = round_and_repair(cur, params, Hbar, lattice).y
            anchor = cur.y + NUDGE * (target - cur.y)
        trace.penalty = penalty(cur.y)
        if trace.penalty <= tol_pen:
            trace.converged = True
            break
        if esc == cfg.max_escalations:
            log.info("penalty %.3g still above %.3g after %d escalations", trace.penalty, tol_pen, esc)
            break
        rho *= cfg.rho_growth
        value = penalized_value(cur, rho, params, Hbar, lattice)
        trace.values.append(value)
        trace.rhos.append(rho)
    return cur, trace


# starts and rounding --------------------------------------------------------

def _supports(params: SystemParams, lattice: ViewLattice):
    """Per user: list of admissible supports, direct first, then anchor pairs."""
    out = []
    for r, left, right in neighborhood_indices(params, lattice):
        out.append([(r,)] + [(a, b) for a in left for b in right])
    return out


def _binary_from(choice, supports, K: int, nv: int) -> np.ndarray:
    y = np.zeros((K, nv))
    for k, j in enumerate(choice):
        y[k, list(supports[k][j])] = 1.0
    return y


def _proportional_L(y, N: int) -> np.ndarray:
    x = y.max(axis=0)
    return N * x / x.sum()


def random_feasible_start(params: SystemParams, lattice: ViewLattice, rng) -> ContinuousSelection:
    """Binary start with each user's support drawn uniformly; L split evenly over used views."""
    supports = _supports(params, lattice)
    choice = [int(rng.integers(len(s))) for s in supports]
    y = _binary_from(choice, supports, params.K, len(lattice))
    return ContinuousSelection(y, _proportional_L(y, params.N))


def round_and_repair(cs: ContinuousSelection, params: SystemParams, Hbar, lattice: ViewLattice) -> ViewSelection:
    """Binarize by per-user largest support mass; ties are settled by objective."""
    y = np.asarray(cs.y, dtype=float)
    supports = _supports(params, lattice)
    K, nv = params.K, len(lattice)
    tied = []
    for k, opts in enumerate(supports):
        mass = np.array([y[k, list(s)].mean() for s in opts])
        tied.append(np.flatnonzero(mass >= mass.max() - 1e-9))
    choice = [int(t[0]) for t in tied]
    for k, cands in enumerate(tied):
        if cands.size < 2:
            continue
        best, best_val = choice[k], np.inf
        for j in cands:
            choice[k] = int(j)
            val = binary_objective(_binary_from(choice, supports, K, nv), params, Hbar, lattice)
            if val < best_val:
                best, best_val = int(j), val
        choice[k] = best
    sel = ViewSelection.from_y(_binary_from(choice, supports, K, nv))
    assert validate_selection(sel, params, lattice).ok
    return sel


@dataclass
class SelectionResult:
    selection: ViewSelection
    objective: float
    traces: list = field(default_factory=list)


def multi_start_select(cfg: DCConfig, params: SystemParams, Hbar, lattice: ViewLattice, rng) -> SelectionResult:
    """Best binary selection over ``cfg.starts`` DC runs from random feasible starts."""
    params.check_lattice(lattice)
    model = ConvexSubproblem(params, Hbar, lattice, cfg.L_floor, cfg.subproblem_tol)
    best, best_val, traces = None, np.inf, []
    for _ in range(cfg.starts):
        start = random_feasible_start(params, lattice, rng)
        try:
            cs, trace = dc_iterate(start, cfg, params, Hbar, lattice, model)
        except SubproblemError as exc:
            log.warning("DC run abandoned: %s", exc)
            cs, trace = start, DCTrace()
        traces.append(trace)
        sel = round_and_repair(cs, params, Hbar, lattice)
        val = binary_objective(sel.y, params, Hbar, lattice)
        if val < best_val:
            best, best_val = sel, val
    return SelectionResult(best, best_val, traces)
