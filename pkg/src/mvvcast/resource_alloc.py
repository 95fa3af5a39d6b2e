"""
Per-slot minimum-energy power and subcarrier allocation.

For a fixed view selection every transmitted view is a multicast group
whose effective gain on subcarrier n is the weakest member's gain. The
relaxed (time-sharing) problem is convex; its Lagrangian dual has one
multiplier per active view. We maximize the dual by exact coordinate
ascent, read the subcarrier assignment off the per-subcarrier score
argmax, and then water-fill each view's subcarriers so its rate is exactly
R. A short local search over single reassignments and pairwise swaps
cleans up the cases where the relaxation is not tight.

Water levels are handled internally as ``w = lambda * B / ln 2`` (Watts):
the per-subcarrier power is ``max(0, w - n0/H)``.
"""

from __future__ import annotations

import heapq
import logging
from dataclasses import dataclass
from itertools import product

import numpy as np

from . import _kernels as kern
from .model import SystemParams, ViewSelection

log = logging.getLogger(__name__)

LN2 = np.log(2.0)
EPS_RATE = 1e-9
ENUM_GUARD = 10**6


class InfeasibleAllocation(ValueError):
    """More active views than subcarriers: no integral assignment exists."""


class OracleGuardExceeded(ValueError):
    pass


@dataclass
class SlotAllocation:
    mu: np.ndarray          # N x |views|, one-hot rows over active views
    P: np.ndarray           # N x |views| powers, W
    rates: np.ndarray       # |views| achieved rates, bits/s
    energy: float           # T * sum(P), J
    dual: np.ndarray        # |views| multipliers lambda_v (J/bit)
    dual_bound: float = 0.0  # T * dual function at `dual`, J
    ties: int = 0
    nodes: int = 0

    @property
    def gap(self) -> float:
        if self.energy == 0.0:
            return 0.0
        if self.dual_bound <= 0.0:
            return np.inf
        return (self.energy - self.dual_bound) / self.dual_bound


def water_levels_of(alloc: SlotAllocation, params: SystemParams) -> np.ndarray:
    """Per-view water levels in W (``lambda * B / ln 2``)."""
    return alloc.dual * params.B / LN2


def _check_channel(h, params: SystemParams) -> np.ndarray:
    h = np.asarray(h, dtype=float)
    if h.shape != (params.N, params.K):
        raise ValueError(f"channel shape {h.shape} does not match N={params.N}, K={params.K}")
    if not np.all(h > 0) or not np.all(np.isfinite(h)):
        raise ValueError("channel gains must be finite and strictly positive")
    return h


def min_group_channel(h, y_v) -> np.ndarray:
    """Per-subcarrier gain of the weakest user in the multicast group ``y_v``."""
    h = np.asarray(h, dtype=float)
    members = np.flatnonzero(np.asarray(y_v))
    if members.size == 0:
        raise ValueError("empty multicast group")
    return h[:, members].min(axis=1)


def water_power(lam: float, H: float, params: SystemParams) -> float:
    """Power minimizing ``P - lam * B * log2(1 + P H / n0)`` over P >= 0."""
    return max(0.0, lam * params.B / LN2 - params.n0 / H)


def _fill(d: np.ndarray, R: float, B: float) -> tuple[np.ndarray, float]:
    """Minimum total power meeting rate R on channels with noise-to-gain ratios ``d``.

    Closed form: with the m best channels active the level is
    ``2^(R/(mB)) * geomean(d_1..d_m)``; m is the largest count for which the
    m-th channel still sits below the level.
    """
    if R <= 0:
        return np.zeros_like(d), 0.0
    order = np.argsort(d, kind="stable")
    ds = d[order]
    m = np.arange(1, ds.size + 1)
    levels = np.exp((R / B * LN2 + np.cumsum(np.log(ds))) / m)
    ok = levels > ds
    # ok is a prefix; the largest valid m is the answer
    count = int(np.flatnonzero(ok)[-1]) + 1
    w = levels[count - 1]
    p = np.zeros_like(d)
    p[order[:count]] = w - ds[:count]
    return p, w


def meet_rate_on_subcarriers(gains, R_target: float, params: SystemParams) -> tuple[np.ndarray, float]:
    """Minimum-power vector reaching ``R_target`` bits/s over the given gains.

    Returns ``(powers, lam)`` with ``lam`` the rate multiplier in J/bit.
    """
    gains = np.asarray(gains, dtype=float)
    if gains.size == 0:
        raise ValueError("need at least one subcarrier")
    if not np.all(gains > 0):
        raise ValueError("gains must be strictly positive")
    p, w = _fill(params.n0 / gains, R_target, params.B)
    return p, w * LN2 / params.B


def _score(w: np.ndarray, d: np.ndarray) -> np.ndarray:
    """W(w) = max_p [ (w ln 2 / B) * B log2(1 + p/d) - p ] = w ln(w/d) - w + d for w > d."""
    with np.errstate(divide="ignore", invalid="ignore"):
        s = w * np.log(w / d) - w + d
    return np.where(w > d, s, 0.0)


def _assign(w: np.ndarray, d: np.ndarray) -> tuple[np.ndarray, int]:
    scores = _score(w[None, :], d)
    best = scores.max(axis=1, keepdims=True)
    winners = np.isclose(scores, best, rtol=1e-12, atol=0) & (best > 0)
    ties = int((winners.sum(axis=1) > 1).sum())
    assign = np.argmax(scores, axis=1)  # first max = smallest view index
    # subcarriers nobody wants at these levels go to the view closest to using them
    idle = best[:, 0] <= 0
    if idle.any():
        assign[idle] = np.argmax(w[None, :] / d[idle], axis=1)
    return assign, ties


def _ensure_nonempty(assign: np.ndarray, w: np.ndarray, d: np.ndarray) -> None:
    A = d.shape[1]
    scores = _score(w[None, :], d)
    for v in range(A):
        if np.any(assign == v):
            continue
        counts = np.bincount(assign, minlength=A)
        donors = np.flatnonzero(counts[assign] > 1)
        loss = scores[donors, assign[donors]] - scores[donors, v]
        n = donors[np.lexsort((d[donors, v], loss))[0]]
        assign[n] = v


def _polish(assign: np.ndarray, d: np.ndarray, target: float, swaps: bool) -> tuple[np.ndarray, float]:
    assign = np.ascontiguousarray(assign, dtype=np.int64)
    total = kern.local_search(assign, np.ascontiguousarray(d), target, swaps, 10_000)
    return assign, total


def _active(sel: ViewSelection, params: SystemParams) -> np.ndarray:
    if params.R <= 0:
        return np.zeros(0, dtype=int)
    return np.flatnonzero(np.asarray(sel.x))


def _group_gains(h: np.ndarray, sel: ViewSelection, active: np.ndarray) -> np.ndarray:
    y = np.asarray(sel.y)
    if not active.size:
        return np.zeros((h.shape[0], 0))
    return np.column_stack([min_group_channel(h, y[:, v]) for v in active])


def _package(assign: np.ndarray, d: np.ndarray, active: np.ndarray, n_views: int,
             params: SystemParams) -> SlotAllocation:
    N = d.shape[0]
    mu = np.zeros((N, n_views), dtype=np.int8)
    P = np.zeros((N, n_views))
    rates = np.zeros(n_views)
    lam = np.zeros(n_views)
    for j, v in enumerate(active):
        idx = np.flatnonzero(assign == j)
        p, w = _fill(d[idx, j], params.R, params.B)
        mu[idx, v] = 1
        P[idx, v] = p
        rates[v] = params.B * np.log2(1.0 + p / d[idx, j]).sum()
        lam[v] = w * LN2 / params.B
    energy = params.T * float(P.sum())
    return SlotAllocation(mu=mu, P=P, rates=rates, energy=energy, dual=lam)


def _empty(N: int, n_views: int) -> SlotAllocation:
    return SlotAllocation(mu=np.zeros((N, n_views), dtype=np.int8), P=np.zeros((N, n_views)),
                          rates=np.zeros(n_views), energy=0.0, dual=np.zeros(n_views))


def _smoothed_value(w, d, mask, c, tau) -> float:
    with np.errstate(divide="ignore", invalid="ignore"):
        S = np.where(w[None, :] > d, w * np.log(w / d) - w + d, 0.0)
    S = np.where(mask, S, -np.inf)
    top = S.max(axis=1, keepdims=True)
    Z = np.exp((S - top) / tau).sum(axis=1)
    return c * w.sum() - float((top[:, 0] + tau * np.log(Z)).sum())


def _smoothed_dual(w, d, mask, c, tau):
    """Log-sum-exp smoothing of the dual (maximized), with gradient and negated Hessian."""
    with np.errstate(divide="ignore", invalid="ignore"):
        active = w[None, :] > d
        S1 = np.where(active, np.log(w / d), 0.0)
        S = np.where(active, w * S1 - w + d, 0.0)
        S2 = np.where(active, 1.0 / w, 0.0)
    S = np.where(mask, S, -np.inf)
    top = S.max(axis=1, keepdims=True)
    E = np.exp((S - top) / tau)
    Z = E.sum(axis=1, keepdims=True)
    pi = E / Z
    F = c * w.sum() - float((top[:, 0] + tau * np.log(Z[:, 0])).sum())
    q = pi * S1
    grad = c - q.sum(axis=0)
    H = -(q.T @ q) / tau
    H[np.diag_indices_from(H)] += (pi * S2).sum(axis=0) + (q * S1).sum(axis=0) / tau
    return F, grad, H, pi


def _max_dual(w0, d, mask, c, rel_acc: float = 1e-12, max_newton: int = 50):
    """Maximize the relaxed dual over water levels; returns (w, exact dual value, shares).

    Newton's method on a log-sum-exp smoothing, with the temperature driven
    down until the smoothing error is negligible next to the dual value.
    """
    N, A = d.shape
    w = np.maximum(np.asarray(w0, dtype=float), 1e-300)
    if np.all(mask.sum(axis=1) == 1):
        # fully assigned: each view water-fills its own subcarriers
        assign = np.argmax(mask, axis=1)
        for j in range(A):
            w[j] = _fill(d[assign == j, j], c / LN2, 1.0)[1]
        return w, _restricted_dual(w, d, mask, c), mask.astype(float)
    logA = np.log(max(mask.sum(axis=1).max(), 2))
    tau = 0.1 * float(w.mean())
    best_w, best_g = w.copy(), _restricted_dual(w, d, mask, c)
    while True:
        final = tau * N * logA <= rel_acc * max(abs(best_g), 1e-300)
        for _ in range(max_newton):
            F, grad, H, pi = _smoothed_dual(w, d, mask, c, tau)
            H[np.diag_indices_from(H)] += 1e-12 * np.trace(H) / A + 1e-300
            try:
                step = np.linalg.solve(H, grad)
            except np.linalg.LinAlgError:
                step = grad
            dec = float(grad @ step)
            if dec <= (1e-14 if final else 1e-8) * max(abs(F), 1e-300):
                break
            # keep each level within a factor of 4 of its current value
            t = min(1.0, float(np.min(np.where(step < 0, 0.75 * w / np.maximum(-step, 1e-300),
                                                 3.0 * w / np.maximum(step, 1e-300)))))
            slack = 1e-14 * abs(F)
            for _ in range(30):
                w_new = w + t * step
                if _smoothed_value(w_new, d, mask, c, tau) >= F + 0.25 * t * dec - slack:
                    break
                t *= 0.5
            else:
                break
            w = w_new
        g = _restricted_dual(w, d, mask, c)
        if g > best_g:
            best_w, best_g = w.copy(), g
        if final:
            break
        tau *= 0.05
    pi = _smoothed_dual(best_w, d, mask, c, tau)[3]
    return best_w, best_g, pi


def _restricted_dual(w, d, mask, c) -> float:
    S = np.where(mask, _score(w[None, :], d), -np.inf)
    return float(c * w.sum() - S.max(axis=1).sum())


def _round(pi, w, d, mask) -> np.ndarray:
    assign = np.argmax(np.where(mask, pi, -1.0), axis=1)
    useless = ~np.any(mask & (w[None, :] > d), axis=1)
    if useless.any():
        ratio = np.where(mask, w[None, :] / d, -np.inf)
        assign[useless] = np.argmax(ratio[useless], axis=1)
    return assign


def _assignment_cost(assign, d, target) -> float:
    A = d.shape[1]
    total = 0.0
    for j in range(A):
        vals = d[assign == j, j]
        if vals.size == 0:
            return np.inf
        total += kern.fill(np.ascontiguousarray(vals), target)[0]
    return total


def _narrowest_margin(w, d, mask) -> int:
    """Subcarrier (with a choice left) whose two best scores are closest; -1 if none."""
    S = np.where(mask, _score(w[None, :], d), -np.inf)
    choice = mask.sum(axis=1) > 1
    if not choice.any():
        return -1
    top2 = -np.sort(-S, axis=1)[:, :2]
    with np.errstate(invalid="ignore"):
        margin = (top2[:, 0] - top2[:, 1]) / (np.abs(top2[:, 0]) + np.abs(top2[:, 1]) + 1e-300)
    return int(np.argmin(np.where(choice, margin, np.inf)))


def _branch_and_bound(d, target, w0, assign, total, tol, max_nodes, swaps):
    """Best-first search over subcarrier restrictions.

    Node bounds come from the relaxed dual restricted to the allowed
    (subcarrier, view) pairs; every node also proposes a rounded, polished
    assignment. Returns (best assignment, its total power, lower bound, nodes).
    """
    N, A = d.shape
    scale = float(np.exp(np.log(d).mean()))
    ds = d / scale
    acc = 1e-3 * tol
    full = np.ones((N, A), bool)
    w_root, g_root, pi_root = _max_dual(w0 / scale, ds, full, target, acc)
    best = [assign, total]

    def offer(pi, w, mask):
        cand = _round(pi, w, ds, mask)
        _ensure_nonempty(cand, w, ds)
        cand, cost = _polish(cand, d, target, swaps)
        if cost < best[1]:
            best[0], best[1] = cand, cost

    offer(pi_root, w_root, full)
    heap = [(g_root, 0, full, w_root, pi_root)]
    counter = 0
    closed = np.inf
    nodes = 0
    while heap:
        if best[1] - heap[0][0] * scale <= tol * heap[0][0] * scale or nodes >= max_nodes:
            break
        g, _, mask, w, pi = heapq.heappop(heap)
        nodes += 1
        top = np.where(mask, pi, 0.0).max(axis=1)
        frac = top < 1 - 1e-7
        if frac.any():
            n = int(np.argmax(np.where(frac, 1 - top, -1)))
            share = np.where(mask[n], pi[n], 0.0)
        else:
            # one-hot shares only certify the node if the rounding meets the bound
            if _assignment_cost(_round(pi, w, ds, mask), ds, target) - g <= tol * g:
                closed = min(closed, g * scale)
                continue
            n = _narrowest_margin(w, ds, mask)
            if n < 0:
                closed = min(closed, g * scale)
                continue
            share = np.zeros(A)
            share[np.argmax(np.where(mask[n], _score(w, ds[n]), -np.inf))] = 1.0
        groups = [[v] for v in np.flatnonzero(share > 1e-9)]
        rest = [v for v in np.flatnonzero(mask[n]) if share[v] <= 1e-9]
        if rest:
            groups.append(rest)
        for group in groups:
            child = mask.copy()
            child[n] = False
            child[n, group] = True
            if not child.any(axis=0).all():
                continue
            wc, gc, pic = _max_dual(w, ds, child, target, acc)
            offer(pic, wc, child)
            if best[1] - gc * scale <= tol * gc * scale:
                closed = min(closed, gc * scale)
                continue
            counter += 1
            heapq.heappush(heap, (gc, counter, child, wc, pic))
    open_bound = heap[0][0] * scale if heap else np.inf
    return best[0], best[1], min(open_bound, closed, best[1]), nodes


def solve_slot_allocation(h, sel: ViewSelection, params: SystemParams, tol: float = 1e-6,
                          max_sweeps: int = 10_000, max_nodes: int = 2000) -> SlotAllocation:
    """Minimum-energy subcarrier assignment and powers for one channel state.

    Exact coordinate ascent on the dual gives water levels and a first
    assignment (score argmax, ties to the smallest view index), polished by
    local search. If the dual bound does not already certify the result
    within relative ``tol``, the relaxation is not tight and a
    branch-and-bound over the fractionally shared subcarriers closes the
    gap, with smoothed-Newton dual maximization for the node bounds.
    ``dual_bound`` is always a valid lower bound on the optimum energy;
    ``max_nodes`` caps the search, after which ``gap`` may exceed ``tol``.
    """
    h = _check_channel(h, params)
    n_views = np.asarray(sel.x).size
    active = _active(sel, params)
    N = params.N
    if active.size == 0:
        return _empty(N, n_views)
    if active.size > N:
        raise InfeasibleAllocation(f"{active.size} active views but only {N} subcarriers")
    d = np.ascontiguousarray(params.n0 / _group_gains(h, sel, active))
    target = params.R * LN2 / params.B
    A = active.size

    # each view owning every subcarrier alone: a lower bound on its level
    w = np.array([_fill(d[:, j], params.R, params.B)[1] for j in range(A)])
    bound, _ = kern.coordinate_ascent(w, d, target, max_sweeps, 1e-4 * tol)

    assign, ties = _assign(w, d)
    if ties:
        log.debug("score ties on %d subcarrier(s); broken toward the smallest view index", ties)
    _ensure_nonempty(assign, w, d)
    swaps = N <= 32
    assign, total = _polish(assign, d, target, swaps)
    nodes = 0
    if total - bound > tol * bound:
        assign, total, bb_bound, nodes = _branch_and_bound(d, target, w, assign, total, tol,
                                                           max_nodes, swaps)
        bound = max(bound, bb_bound)
    alloc = _package(assign, d, active, n_views, params)
    alloc.dual_bound = params.T * min(bound, total)
    alloc.ties = ties
    alloc.nodes = nodes
    return alloc


def recover_primal(alloc: SlotAllocation, h, sel: ViewSelection, params: SystemParams) -> tuple[np.ndarray, np.ndarray]:
    """Per-(subcarrier, view) powers and rates of the original formulation."""
    h = np.asarray(h, dtype=float)
    mu = np.asarray(alloc.mu)
    p = np.where(mu == 1, alloc.P, 0.0)
    c = np.zeros_like(p)
    for v in np.flatnonzero(mu.any(axis=0)):
        Hmin = min_group_channel(h, np.asarray(sel.y)[:, v])
        on = mu[:, v] == 1
        c[on, v] = params.B * np.log2(1.0 + p[on, v] * Hmin[on] / params.n0)
    return p, c


def enumerate_assignment_allocation(h, sel: ViewSelection, params: SystemParams,
                                    guard: int = ENUM_GUARD) -> SlotAllocation:
    """Exact optimum by trying every subcarrier-to-view assignment."""
    h = _check_channel(h, params)
    n_views = np.asarray(sel.x).size
    active = _active(sel, params)
    N = params.N
    if active.size == 0:
        return _empty(N, n_views)
    if active.size > N:
        raise InfeasibleAllocation(f"{active.size} active views but only {N} subcarriers")
    A = active.size
    if A**N > guard:
        raise OracleGuardExceeded(f"{A}^{N} assignments exceed the guard of {guard}")
    d = params.n0 / _group_gains(h, sel, active)
    best, best_assign = np.inf, None
    for assign in product(range(A), repeat=N):
        assign = np.array(assign)
        if np.unique(assign).size < A:
            continue
        total = sum(_fill(d[assign == j, j], params.R, params.B)[0].sum() for j in range(A))
        if total < best:
            best, best_assign = total, assign
    alloc = _package(best_assign, d, active, n_views, params)
    alloc.dual_bound = alloc.energy
    return alloc
