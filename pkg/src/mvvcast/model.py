"""
Multi-view video system model.

View lattice, per-user synthesis windows, view-selection feasibility and
synthesis energy accounting. View indices are exact ``Fraction`` values so
that lattice membership and original-vs-synthetic tests never depend on
floating point rounding.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np


def as_fraction(value) -> Fraction:
    """Convert an int/float/str/Fraction to an exact rational.

    Floats go through their shortest decimal repr, so ``0.3`` becomes
    ``3/10`` rather than the nearest binary double.
    """
    if isinstance(value, Fraction):
        return value
    if isinstance(value, float):
        return Fraction(repr(value))
    return Fraction(value)


@dataclass(frozen=True)
class ViewLattice:
    V: int
    Q: int
    views: tuple[Fraction, ...] = field(repr=False)

    def __len__(self) -> int:
        return len(self.views)

    def index(self, view) -> int:
        """Position of ``view`` in the lattice; raises ``ValueError`` if off-lattice."""
        v = as_fraction(view)
        m = (v - 1) * self.Q
        if m.denominator != 1 or not 0 <= m <= (self.V - 1) * self.Q:
            raise ValueError(f"view {view} is not on the lattice (V={self.V}, Q={self.Q})")
        return int(m)

    def contains(self, view) -> bool:
        try:
            self.index(view)
        except ValueError:
            return False
        return True

    @property
    def is_original(self) -> np.ndarray:
        return np.array([v.denominator == 1 for v in self.views])

    @property
    def synthetic_mask(self) -> np.ndarray:
        return ~self.is_original


def build_lattice(V: int, Q: int) -> ViewLattice:
    """Views ``1, 1 + 1/Q, ..., V`` as exact rationals.

    ``Q = 1`` is accepted and yields the originals-only lattice.
    """
    if int(V) != V or V < 2:
        raise ValueError(f"need at least two original views, got V={V}")
    if int(Q) != Q or Q < 1:
        raise ValueError(f"subdivision Q must be a positive integer, got Q={Q}")
    V, Q = int(V), int(Q)
    views = tuple(1 + Fraction(m, Q) for m in range((V - 1) * Q + 1))
    return ViewLattice(V=V, Q=Q, views=views)


@dataclass(frozen=True)
class UserProfile:
    request: Fraction
    delta: Fraction = Fraction(1)
    synth_energy: float = 1e-3

    def __post_init__(self):
        object.__setattr__(self, "request", as_fraction(self.request))
        object.__setattr__(self, "delta", as_fraction(self.delta))
        if self.delta < 0:
            raise ValueError(f"synthesis radius must be nonnegative, got {self.delta}")
        if self.synth_energy < 0:
            raise ValueError(f"user synthesis energy must be nonnegative, got {self.synth_energy}")


@dataclass(frozen=True)
class SystemParams:
    """Scalar system constants plus the user population.

    Units: ``R`` bits/s, ``B`` Hz per subcarrier, ``T`` seconds, ``n0`` W,
    ``E_b`` and per-user synthesis energies in Joules per slot.
    """

    R: float
    B: float
    N: int
    T: float
    n0: float
    E_b: float
    beta: float
    users: tuple[UserProfile, ...]

    def __post_init__(self):
        object.__setattr__(self, "users", tuple(self.users))
        for name in ("R", "B", "T", "n0"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if int(self.N) != self.N or self.N < 1:
            raise ValueError(f"N must be a positive integer, got {self.N}")
        if self.E_b < 0:
            raise ValueError(f"E_b must be nonnegative, got {self.E_b}")
        if self.beta < 1:
            raise ValueError(f"beta must be at least 1, got {self.beta}")
        if not self.users:
            raise ValueError("at least one user is required")

    @property
    def K(self) -> int:
        return len(self.users)

    @property
    def requests(self) -> list[Fraction]:
        return [u.request for u in self.users]

    @property
    def deltas(self) -> list[Fraction]:
        return [u.delta for u in self.users]

    @property
    def user_energies(self) -> np.ndarray:
        return np.array([u.synth_energy for u in self.users], dtype=float)

    def check_lattice(self, lattice: ViewLattice) -> None:
        for k, u in enumerate(self.users):
            if not lattice.contains(u.request):
                raise ValueError(f"user {k} requests off-lattice view {u.request}")


def make_params(requests: Sequence, *, R: float, B: float, N: int, T: float, n0: float,
                E_b: float, beta: float, delta=1, E_u=1e-3) -> SystemParams:
    """Build ``SystemParams`` from a request list with shared or per-user delta/E_u."""
    K = len(requests)
    deltas = list(delta) if isinstance(delta, (list, tuple)) else [delta] * K
    energies = list(E_u) if isinstance(E_u, (list, tuple, np.ndarray)) else [E_u] * K
    if len(deltas) != K or len(energies) != K:
        raise ValueError("per-user delta / E_u lists must have one entry per request")
    users = tuple(UserProfile(r, d, float(e)) for r, d, e in zip(requests, deltas, energies))
    return SystemParams(R=R, B=B, N=int(N), T=T, n0=n0, E_b=E_b, beta=beta, users=users)


@dataclass(frozen=True)
class ViewSelection:
    """Binary utilization matrix ``y`` (K x |views|) and transmission vector ``x``."""

    y: np.ndarray
    x: np.ndarray

    @classmethod
    def from_y(cls, y) -> "ViewSelection":
        y = np.asarray(y)
        y = (y > 0.5).astype(np.int8)
        return cls(y=y, x=induced_transmission(y))

    @property
    def active_views(self) -> np.ndarray:
        return np.flatnonzero(self.x)

    @property
    def n_transmitted(self) -> int:
        return int(self.x.sum())


def synthesis_neighborhoods(v, delta, lattice: ViewLattice) -> tuple[list[Fraction], list[Fraction]]:
    """Views usable as left / right anchors for synthesizing ``v``.

    left = lattice views in ``[v - delta, v)``, right = views in ``(v, v + delta]``.
    """
    v = as_fraction(v)
    delta = as_fraction(delta)
    left = [x for x in lattice.views if v - delta <= x < v]
    right = [x for x in lattice.views if v < x <= v + delta]
    return left, right


def neighborhood_indices(params: SystemParams, lattice: ViewLattice) -> list[tuple[int, list[int], list[int]]]:
    """Per user: (request index, left anchor indices, right anchor indices)."""
    out = []
    for u in params.users:
        left, right = synthesis_neighborhoods(u.request, u.delta, lattice)
        out.append((lattice.index(u.request),
                    [lattice.index(a) for a in left],
                    [lattice.index(b) for b in right]))
    return out


def induced_transmission(y) -> np.ndarray:
    """x_v = max_k y_{k,v}."""
    y = np.asarray(y)
    if y.ndim != 2:
        raise ValueError(f"y must be a K x |views| matrix, got shape {y.shape}")
    if y.shape[0] == 0:
        return np.zeros(y.shape[1], dtype=np.int8)
    return y.max(axis=0).astype(np.int8)


@dataclass
class ValidityReport:
    ok: bool
    violations: list[tuple[str, int, Fraction | None]]

    def __bool__(self) -> bool:
        return self.ok


def validate_selection(sel: ViewSelection, params: SystemParams, lattice: ViewLattice) -> ValidityReport:
    """Check the request-satisfaction constraints for every user.

    Each violation is ``(constraint, user, view)`` with constraint one of
    ``"binary"``, ``"(3)"`` (left anchor sum), ``"(4)"`` (right anchor
    sum), ``"(5)"`` (utilization outside the window) or ``"(6)"``
    (a used view that is not transmitted). ``view`` is None for the
    anchor-sum violations.
    """
    y = np.asarray(sel.y)
    x = np.asarray(sel.x)
    if y.shape != (params.K, len(lattice)) or x.shape != (len(lattice),):
        raise ValueError(
            f"selection shape y={y.shape}, x={x.shape} does not match K={params.K}, |views|={len(lattice)}")
    violations: list[tuple[str, int, Fraction | None]] = []
    for k, v in zip(*np.nonzero((y != 0) & (y != 1))):
        violations.append(("binary", int(k), lattice.views[v]))
    for k, (r, left, right) in enumerate(neighborhood_indices(params, lattice)):
        row = y[k]
        if not np.isclose(row[r] + row[left].sum(), 1):
            violations.append(("(3)", k, None))
        if not np.isclose(row[r] + row[right].sum(), 1):
            violations.append(("(4)", k, None))
        allowed = set(left) | set(right) | {r}
        for v in np.flatnonzero(row):
            if int(v) not in allowed:
                violations.append(("(5)", k, lattice.views[v]))
    for k, v in zip(*np.nonzero(y > x[None, :])):
        violations.append(("(6)", int(k), lattice.views[v]))
    return ValidityReport(ok=not violations, violations=violations)


@dataclass(frozen=True)
class SynthesisEnergy:
    server: float
    users: float
    weighted: float


def synthesis_energy(sel: ViewSelection, params: SystemParams, lattice: ViewLattice) -> SynthesisEnergy:
    """Per-slot synthesis energy at the server, at the users, and the weighted sum."""
    server = params.E_b * float(np.asarray(sel.x)[lattice.synthetic_mask].sum())
    req = [lattice.index(r) for r in params.requests]
    direct = np.asarray(sel.y)[np.arange(params.K), req]
    users = float(np.dot(1 - direct, params.user_energies))
    return SynthesisEnergy(server=server, users=users, weighted=server + params.beta * users)
