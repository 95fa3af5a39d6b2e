"""Brute-force ground truth for small instances."""

from __future__ import annotations

from dataclasses import dataclass
from itertools import product
from typing import Callable, Sequence

import numpy as np

from .model import (SystemParams, ViewLattice, ViewSelection, as_fraction, synthesis_energy,
                    synthesis_neighborhoods)
from .resource_alloc import (ENUM_GUARD, InfeasibleAllocation, OracleGuardExceeded,
                             enumerate_assignment_allocation, solve_slot_allocation)


def selection_count(requests: Sequence, deltas, lattice: ViewLattice) -> int:
    """Closed-form size of the feasible set: prod_k (1 + |left| |right|)."""
    count = 1
    for r, d in zip(requests, _per_user(deltas, len(requests))):
        left, right = synthesis_neighborhoods(r, d, lattice)
        count *= 1 + len(left) * len(right)
    return count


def _per_user(deltas, K: int) -> list:
    return list(deltas) if isinstance(deltas, (list, tuple, np.ndarray)) else [deltas] * K


def enumerate_feasible_selections(requests: Sequence, deltas, lattice: ViewLattice,
                                  guard: int = ENUM_GUARD) -> list[ViewSelection]:
    """All binary selections meeting the request constraints, users varying slowest-first."""
    K = len(requests)
    n = selection_count(requests, deltas, lattice)
    if n > guard:
        raise OracleGuardExceeded(f"{n} feasible selections exceed the guard of {guard}")
    options = []
    for r, d in zip(requests, _per_user(deltas, K)):
        left, right = synthesis_neighborhoods(r, d, lattice)
        opts = [(lattice.index(as_fraction(r)),)]
        opts += [(lattice.index(a), lattice.index(b)) for a in left for b in right]
        options.append(opts)
    out = []
    for combo in product(*options):
        y = np.zeros((K, len(lattice)), dtype=np.int8)
        for k, views in enumerate(combo):
            y[k, list(views)] = 1
        out.append(ViewSelection.from_y(y))
    return out


@dataclass(frozen=True)
class EnergyBreakdown:
    """Sample-average energy per slot of one selection and its parts."""

    total: float
    transmission: float
    server_synth: float
    user_synth_weighted: float


def average_energy(sel: ViewSelection, params: SystemParams, lattice: ViewLattice, channels,
                   allocate: Callable | None = None) -> EnergyBreakdown:
    """Channel-averaged transmission energy plus the weighted synthesis terms."""
    if allocate is None:
        allocate = solve_slot_allocation
    tx = float(np.mean([allocate(h, sel, params).energy for h in channels]))
    syn = synthesis_energy(sel, params, lattice)
    user = params.beta * syn.users
    return EnergyBreakdown(tx + syn.server + user, tx, syn.server, user)


@dataclass
class OracleResult:
    selection: ViewSelection
    energy: EnergyBreakdown
    n_selections: int
    n_infeasible: int


def brute_force_optimum(params: SystemParams, lattice: ViewLattice, channel_samples,
                        guard: int = ENUM_GUARD) -> OracleResult:
    """Exact minimizer of the sample-average objective over every feasible selection.

    Selections with more transmitted views than subcarriers admit no
    allocation and are skipped (counted in ``n_infeasible``).
    """
    channels = list(channel_samples)
    if not channels:
        raise ValueError("at least one channel sample is required")
    sels = enumerate_feasible_selections(params.requests, params.deltas, lattice, guard)

    def exact(h, sel, p):
        return enumerate_assignment_allocation(h, sel, p, guard)

    best, best_energy, skipped = None, None, 0
    for sel in sels:
        try:
            e = average_energy(sel, params, lattice, channels, exact)
        except InfeasibleAllocation:
            skipped += 1
            continue
        if best_energy is None or e.total < best_energy.total:
            best, best_energy = sel, e
    if best is None:
        raise InfeasibleAllocation("no feasible selection fits in the available subcarriers")
    return OracleResult(best, best_energy, len(sels), skipped)
