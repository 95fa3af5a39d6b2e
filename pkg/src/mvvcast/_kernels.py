"""Compiled inner loops for the slot allocator.

Everything works on noise-to-gain ratios ``d = n0 / H`` and water levels
``w`` in Watts; ``target = R * ln 2 / B`` is the rate demand in nats per
subcarrier-use.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def fill(vals, target):
    """Minimum total power (and level) reaching ``target`` on channels ``vals``."""
    n = vals.size
    if n == 0:
        return np.inf, np.inf
    s = np.sort(vals)
    logsum = 0.0
    w = 0.0
    m = 0
    for i in range(n):
        logsum += np.log(s[i])
        w = np.exp((target + logsum) / (i + 1))
        m = i + 1
        if i + 1 == n or w <= s[i + 1]:
            break
    p = 0.0
    for i in range(m):
        p += w - s[i]
    return p, w


@njit(cache=True)
def score(w, d):
    if w <= d:
        return 0.0
    return w * np.log(w / d) - w + d


@njit(cache=True)
def threshold(c, d):
    """Smallest w > d with score(w, d) >= c (c > 0)."""
    # with w = d e^x: e^x (x - 1) + 1 = c / d, increasing and convex for x >= 0
    r = c / d
    x = 1.0 + np.log1p(r)
    for _ in range(100):
        ex = np.exp(x)
        g = ex * (x - 1.0) + 1.0 - r
        step = g / (x * ex)
        x -= step
        if abs(step) <= 1e-15 * max(1.0, abs(x)):
            break
    return d * np.exp(x)


@njit(cache=True)
def dual_value(w, d, target):
    N, A = d.shape
    total = 0.0
    for j in range(A):
        total += target * w[j]
    for n in range(N):
        best = 0.0
        for j in range(A):
            s = score(w[j], d[n, j])
            if s > best:
                best = s
        total -= best
    return total


@njit(cache=True)
def coordinate_level(target, d_col, rivals):
    N = d_col.size
    thr = np.empty(N)
    for n in range(N):
        thr[n] = threshold(rivals[n], d_col[n]) if rivals[n] > 0 else d_col[n]
    order = np.argsort(thr)
    logsum = 0.0
    for m in range(N):
        logsum += np.log(d_col[order[m]])
        w = np.exp((target + logsum) / (m + 1))
        if w < thr[order[m]]:
            return thr[order[m]]
        if m + 1 == N or w <= thr[order[m + 1]]:
            return w
    return thr[order[N - 1]]


@njit(cache=True)
def coordinate_ascent(w, d, target, max_sweeps, stall_rtol):
    """Exact per-view maximization of the dual, sweep after sweep (in place).

    Returns (best dual value, sweeps used).
    """
    N, A = d.shape
    bound = dual_value(w, d, target)
    rivals = np.zeros(N)
    sweeps = 0
    for sweep in range(max_sweeps):
        sweeps = sweep + 1
        moved = 0.0
        for j in range(A):
            for n in range(N):
                best = 0.0
                for u in range(A):
                    if u != j:
                        s = score(w[u], d[n, u])
                        if s > best:
                            best = s
                rivals[n] = best
            new = coordinate_level(target, d[:, j], rivals)
            moved = max(moved, abs(new - w[j]) / w[j])
            w[j] = new
        value = dual_value(w, d, target)
        stalled = value - bound <= stall_rtol * abs(value)
        if value > bound:
            bound = value
        if stalled or moved <= 1e-12:
            break
    return bound, sweeps


@njit(cache=True)
def _view_cost(d, assign, v, exclude, include, target, buf):
    k = 0
    for n in range(assign.size):
        if assign[n] == v and n != exclude:
            buf[k] = d[n, v]
            k += 1
    if include >= 0:
        buf[k] = d[include, v]
        k += 1
    return fill(buf[:k], target)


@njit(cache=True)
def local_search(assign, d, target, swaps, max_rounds):
    """Reassign / swap subcarriers while total power strictly drops (in place)."""
    N, A = d.shape
    buf = np.empty(N + 1)
    power = np.empty(A)
    level = np.empty(A)
    count = np.zeros(A, dtype=np.int64)
    for n in range(N):
        count[assign[n]] += 1
    for v in range(A):
        power[v], level[v] = _view_cost(d, assign, v, -1, -1, target, buf)
    rtol = 1e-13
    for _ in range(max_rounds):
        improved = False
        base = power.sum()
        for n in range(N):
            a = assign[n]
            if count[a] == 1:
                continue
            cost_a, lev_a = _view_cost(d, assign, a, n, -1, target, buf)
            for b in range(A):
                if b == a or d[n, b] >= level[b]:
                    continue
                cost_b, lev_b = _view_cost(d, assign, b, -1, n, target, buf)
                if cost_a + cost_b - power[a] - power[b] < -rtol * base:
                    assign[n] = b
                    count[a] -= 1
                    count[b] += 1
                    power[a], level[a] = cost_a, lev_a
                    power[b], level[b] = cost_b, lev_b
                    improved = True
                    break
        if improved:
            continue
        if not swaps:
            break
        for n in range(N):
            a = assign[n]
            for m in range(n + 1, N):
                b = assign[m]
                if a == b:
                    continue
                assign[n] = b
                assign[m] = a
                cost_a, lev_a = _view_cost(d, assign, a, -1, -1, target, buf)
                cost_b, lev_b = _view_cost(d, assign, b, -1, -1, target, buf)
                if cost_a + cost_b - power[a] - power[b] < -rtol * base:
                    power[a], level[a] = cost_a, lev_a
                    power[b], level[b] = cost_b, lev_b
                    improved = True
                    a = assign[n]
                else:
                    assign[n] = a
                    assign[m] = b
        if not improved:
            break
    return power.sum()
