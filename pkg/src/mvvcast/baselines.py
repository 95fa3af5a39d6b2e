"""Comparison view-selection policies: server-only and user-only synthesis."""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np

from .model import ViewLattice, ViewSelection, as_fraction


class InfeasibleSelection(ValueError):
    """A policy cannot serve some request under its rule."""


def baseline1_selection(requests: Sequence, lattice: ViewLattice) -> ViewSelection:
    """Every user receives its requested view directly (synthesized at the server if needed)."""
    y = np.zeros((len(requests), len(lattice)), dtype=np.int8)
    for k, r in enumerate(requests):
        y[k, lattice.index(r)] = 1
    return ViewSelection.from_y(y)


def baseline2_selection(requests: Sequence, deltas, lattice: ViewLattice) -> ViewSelection:
    """Originals only: synthetic requests are synthesized by the user from floor(r) and ceil(r)."""
    K = len(requests)
    deltas = list(deltas) if isinstance(deltas, (list, tuple, np.ndarray)) else [deltas] * K
    y = np.zeros((K, len(lattice)), dtype=np.int8)
    for k, (r, delta) in enumerate(zip(requests, deltas)):
        r, delta = as_fraction(r), as_fraction(delta)
        i = lattice.index(r)
        if r.denominator == 1:
            y[k, i] = 1
            continue
        lo, hi = math.floor(r), math.ceil(r)
        if r - lo > delta or hi - r > delta:
            raise InfeasibleSelection(
                f"user {k}: request {r} cannot be synthesized from views {lo} and {hi} with delta {delta}")
        y[k, lattice.index(lo)] = 1
        y[k, lattice.index(hi)] = 1
    return ViewSelection.from_y(y)
