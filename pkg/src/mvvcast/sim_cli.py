"""
Monte Carlo harness and command line.

Random streams: every draw comes from its own ``numpy.random.Philox``
generator seeded by ``SeedSequence(seed, spawn_key=(purpose, ...))``:

    requests  (0, realization, user)            one uniform per user
    channels  (1, realization, draw, user)       N exponentials per user
    dc starts (2, realization, K, round(1e6 * gamma))

Keying channels and requests per user keeps draws common across the K and
gamma sweeps (a larger K only appends users), and no stream depends on the
order in which schemes or sweep points are evaluated.
"""

from __future__ import annotations

import argparse
import csv
import io
import logging
import math
import sys
import time
from dataclasses import MISSING, dataclass, fields
from pathlib import Path

import numpy as np

from .baselines import InfeasibleSelection, baseline1_selection, baseline2_selection
from .model import SystemParams, ViewLattice, build_lattice, make_params
from .oracle import average_energy, brute_force_optimum
from .resource_alloc import InfeasibleAllocation, OracleGuardExceeded, solve_slot_allocation
from .view_select_dc import DCConfig, MeanChannel, multi_start_select

log = logging.getLogger(__name__)

SCHEMES = ("algorithm1", "baseline1", "baseline2")
CSV_HEADER = ["scheme", "K", "gamma", "realization", "avg_energy_J", "tx_energy_J", "server_synth_J",
              "user_synth_weighted_J", "views_transmitted", "infeasible", "wall_ms"]
REQ, CHAN, DC = 0, 1, 2


class ConfigError(ValueError):
    pass


def stream(seed: int, *key: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=tuple(key))))


# sampling -------------------------------------------------------------------

def sample_channel(rng: np.random.Generator, params: SystemParams, channel_mean) -> np.ndarray:
    """N x K exponential gains; ``channel_mean`` is a scalar or one mean per user."""
    mean = np.broadcast_to(np.asarray(channel_mean, dtype=float), (params.K,))
    if not np.all(mean > 0):
        raise ValueError("channel_mean must be positive")
    return rng.exponential(size=(params.N, params.K)) * mean


def zipf_probabilities(n: int, gamma: float) -> np.ndarray:
    if gamma < 0:
        raise ValueError("gamma must be nonnegative")
    w = np.arange(1, n + 1, dtype=float) ** -gamma
    return w / w.sum()


def sample_requests(rng: np.random.Generator, K: int, gamma: float, lattice: ViewLattice,
                    rank_permutation=None) -> list:
    """K i.i.d. Zipf requests; rank i goes to lattice position ``rank_permutation[i]``."""
    n = len(lattice)
    order = np.arange(n) if rank_permutation is None else np.asarray(rank_permutation, dtype=int)
    if sorted(order.tolist()) != list(range(n)):
        raise ValueError(f"rank_permutation must be a permutation of 0..{n - 1}")
    cdf = np.cumsum(zipf_probabilities(n, gamma))
    ranks = np.minimum(np.searchsorted(cdf, rng.random(K), side="right"), n - 1)
    return [lattice.views[order[i]] for i in ranks]


# configuration --------------------------------------------------------------

def _floats(s: str) -> list[float]:
    return [float(x) for x in s.split(",") if x.strip()]


def _ints(s: str) -> list[int]:
    return [int(x) for x in s.split(",") if x.strip()]


def _opt_float(s: str):
    return None if s.strip().lower() in ("", "none", "auto") else float(s)


def _scalar_or_list(s: str):
    v = _floats(s)
    return v[0] if len(v) == 1 else tuple(v)


@dataclass
class ExperimentConfig:
    R: float
    B: float
    N: int
    T: float
    n0: float
    E_b: float
    beta: float
    V: int
    Q: int
    E_u: float = 1e-3
    delta: float = 1.0
    K: int = 5
    channel_mean: float | tuple = 1e-6
    zipf_gamma: float = 0.5
    rank_permutation: tuple | None = None
    n_request_realizations: int = 100
    n_channel_realizations: int = 500
    schemes: tuple = SCHEMES
    seed: int = 0
    sweep_k: tuple | None = None
    sweep_gamma: tuple | None = None
    output: str = "results.csv"
    alloc_tol: float = 1e-6
    alloc_max_nodes: int = 0
    dc_rho: float | None = None
    dc_rho_scale: float = 0.1
    dc_rho_growth: float = 2.0
    dc_max_escalations: int = 20
    dc_max_outer: int = 100
    dc_starts: int = 10
    dc_tol_obj: float = 1e-6
    dc_tol_penalty: float | None = None
    dc_subproblem_tol: float = 1e-8
    dc_L_floor: float = 1e-6

    def __post_init__(self):
        if self.n_request_realizations < 1 or self.n_channel_realizations < 1:
            raise ConfigError("realization counts must be at least 1")
        if not np.all(np.asarray(self.channel_mean, dtype=float) > 0):
            raise ConfigError("channel_mean must be positive")
        gammas = [self.zipf_gamma] + list(self.sweep_gamma or [])
        if min(gammas) < 0:
            raise ConfigError("zipf_gamma must be nonnegative")
        if min([self.K] + list(self.sweep_k or [])) < 1:
            raise ConfigError("K must be at least 1")
        bad = [s for s in self.schemes if s not in SCHEMES]
        if bad or not self.schemes:
            raise ConfigError(f"unknown scheme(s) {bad}; choose from {', '.join(SCHEMES)}")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        if isinstance(self.channel_mean, tuple) and len(self.channel_mean) < max(self.k_values()):
            raise ConfigError("per-user channel_mean list is shorter than the largest K")
        try:
            self.dc_config()
            self.system_params([1] * max(self.k_values()))
            build_lattice(self.V, self.Q)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def k_values(self) -> list[int]:
        return list(self.sweep_k) if self.sweep_k else [self.K]

    def gamma_values(self) -> list[float]:
        return list(self.sweep_gamma) if self.sweep_gamma else [self.zipf_gamma]

    def dc_config(self) -> DCConfig:
        return DCConfig(rho=self.dc_rho, rho_scale=self.dc_rho_scale, rho_growth=self.dc_rho_growth, max_escalations=self.dc_max_escalations,
                        max_outer=self.dc_max_outer, starts=self.dc_starts, tol_obj=self.dc_tol_obj,
                        tol_penalty=self.dc_tol_penalty, subproblem_tol=self.dc_subproblem_tol,
                        L_floor=self.dc_L_floor)

    def system_params(self, requests) -> SystemParams:
        return make_params(requests, R=self.R, B=self.B, N=self.N, T=self.T, n0=self.n0, E_b=self.E_b,
                           beta=self.beta, delta=self.delta, E_u=self.E_u)


_PARSERS = {
    "N": int, "V": int, "Q": int, "K": int, "seed": int, "n_request_realizations": int,
    "n_channel_realizations": int, "alloc_max_nodes": int, "dc_max_escalations": int,
    "dc_max_outer": int, "dc_starts": int,
    "channel_mean": _scalar_or_list,
    "rank_permutation": lambda s: tuple(_ints(s)),
    "schemes": lambda s: tuple(x.strip() for x in s.split(",") if x.strip()),
    "sweep_k": lambda s: tuple(_ints(s)) or None,
    "sweep_gamma": lambda s: tuple(_floats(s)) or None,
    "output": str,
    "dc_rho": _opt_float, "dc_tol_penalty": _opt_float,
}
REQUIRED = [f.name for f in fields(ExperimentConfig) if f.default is MISSING]


def parse_config_text(text: str, **overrides) -> ExperimentConfig:
    """Parse ``key = value`` lines (``#`` starts a comment) into a config."""
    known = {f.name for f in fields(ExperimentConfig)}
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw.strip()!r}")
        key, val = (s.strip() for s in line.split("=", 1))
        if key not in known:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        try:
            values[key] = _PARSERS.get(key, float)(val)
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: bad value for {key}: {exc}") from exc
    values.update({k: v for k, v in overrides.items() if v is not None})
    missing = [k for k in REQUIRED if k not in values]
    if missing:
        raise ConfigError(f"missing required key(s): {', '.join(missing)}")
    return ExperimentConfig(**values)


def load_config(path, **overrides) -> ExperimentConfig:
    return parse_config_text(Path(path).read_text(), **overrides)


def mean_channel_of(config: ExperimentConfig, K: int | None = None) -> MeanChannel:
    """Per-user mean gains seen by view selection (first K entries for a list)."""
    K = config.K if K is None else K
    m = config.channel_mean
    hbar = np.array(m[:K], dtype=float) if isinstance(m, tuple) else np.full(K, float(m))
    return MeanChannel(hbar)


# experiment -----------------------------------------------------------------

@dataclass
class ExperimentRow:
    scheme: str
    K: int
    gamma: float
    realization: int
    avg_energy: float
    tx_energy: float
    server_synth: float
    user_synth_weighted: float
    views_transmitted: int
    infeasible: bool
    wall_ms: float

    def csv_fields(self, timing: bool = True) -> list[str]:
        def g(x):
            return "nan" if not math.isfinite(x) else f"{x:.12g}"
        return [self.scheme, str(self.K), f"{self.gamma:.12g}", str(self.realization), g(self.avg_energy),
                g(self.tx_energy), g(self.server_synth), g(self.user_synth_weighted),
                str(self.views_transmitted), str(int(self.infeasible)),
                f"{self.wall_ms:.3f}" if timing else "0"]


def _channel(config: ExperimentConfig, realization: int, draw: int, K: int) -> np.ndarray:
    hbar = mean_channel_of(config, K).Hbar
    cols = [stream(config.seed, CHAN, realization, draw, k).exponential(size=config.N) * hbar[k]
            for k in range(K)]
    return np.column_stack(cols)


def _requests(config: ExperimentConfig, lattice: ViewLattice, realization: int, K: int, gamma: float) -> list:
    return [sample_requests(stream(config.seed, REQ, realization, k), 1, gamma, lattice,
                            config.rank_permutation)[0] for k in range(K)]


def _select(scheme: str, config: ExperimentConfig, params: SystemParams, lattice: ViewLattice,
            realization: int, gamma: float):
    if scheme == "baseline1":
        return baseline1_selection(params.requests, lattice)
    if scheme == "baseline2":
        return baseline2_selection(params.requests, params.deltas, lattice)
    rng = stream(config.seed, DC, realization, params.K, round(gamma * 1e6))
    return multi_start_select(config.dc_config(), params, mean_channel_of(config, params.K), lattice, rng).selection


def run_point(config: ExperimentConfig, lattice: ViewLattice, K: int, gamma: float, realization: int,
              channels: list[np.ndarray] | None = None) -> list[ExperimentRow]:
    """Rows for every scheme at one (K, gamma, request realization)."""
    params = config.system_params(_requests(config, lattice, realization, K, gamma))
    if channels is None:
        channels = [_channel(config, realization, j, K) for j in range(config.n_channel_realizations)]

    def allocate(h, sel, p):
        return solve_slot_allocation(h, sel, p, tol=config.alloc_tol, max_nodes=config.alloc_max_nodes)

    memo = {}
    rows = []
    for scheme in config.schemes:
        t0 = time.perf_counter()
        try:
            sel = _select(scheme, config, params, lattice, realization, gamma)
            key = sel.y.tobytes()
            if key not in memo:
                memo[key] = average_energy(sel, params, lattice, channels, allocate)
            e = memo[key]
            row = ExperimentRow(scheme, K, gamma, realization, e.total, e.transmission, e.server_synth,
                                e.user_synth_weighted, sel.n_transmitted, False, 0.0)
        except (InfeasibleSelection, InfeasibleAllocation) as exc:
            log.info("%s infeasible at K=%d gamma=%g realization %d: %s", scheme, K, gamma, realization, exc)
            nan = float("nan")
            row = ExperimentRow(scheme, K, gamma, realization, nan, nan, nan, nan, 0, True, 0.0)
        row.wall_ms = 1e3 * (time.perf_counter() - t0)
        rows.append(row)
    return rows


def run_experiment(config: ExperimentConfig, output=None, timing: bool = True,
                   progress: bool = False) -> list[ExperimentRow]:
    """All sweep points x request realizations x schemes; writes the CSV if ``output`` is set."""
    lattice = build_lattice(config.V, config.Q)
    rows = []
    for K in config.k_values():
        for gamma in config.gamma_values():
            for i in range(config.n_request_realizations):
                rows.extend(run_point(config, lattice, K, gamma, i))
            if progress:
                print(f"K={K} gamma={gamma:g} done", file=sys.stderr)
    if output is not None:
        write_csv(rows, output, timing)
    return rows


def write_csv(rows, path, timing: bool = True) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for r in rows:
        w.writerow(r.csv_fields(timing))
    Path(path).write_text(buf.getvalue())


def summarize(rows, by: str) -> dict:
    """{(scheme, other sweep value): [(x, mean, stderr), ...]} over feasible rows."""
    other = "gamma" if by == "K" else "K"
    groups: dict = {}
    for r in rows:
        if not r.infeasible:
            groups.setdefault((r.scheme, getattr(r, other), getattr(r, by)), []).append(r.avg_energy)
    out: dict = {}
    for (scheme, o, x), vals in sorted(groups.items()):
        v = np.asarray(vals)
        se = v.std(ddof=1) / np.sqrt(v.size) if v.size > 1 else 0.0
        out.setdefault((scheme, o), []).append((x, float(v.mean()), float(se)))
    return out


def write_plotdata(rows, config: ExperimentConfig, directory) -> list[Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    by = "gamma" if config.sweep_gamma and not config.sweep_k else "K"
    other = "K" if by == "gamma" else "gamma"
    paths = []
    for (scheme, o), series in summarize(rows, by).items():
        p = directory / f"{scheme}_vs_{by}_{other}{o:g}.csv"
        lines = ["x,y_mean,y_stderr"] + [f"{x:.12g},{m:.12g},{s:.12g}" for x, m, s in series]
        p.write_text("\n".join(lines) + "\n")
        paths.append(p)
    return paths


# command line -----------------------------------------------------------------

def _u64(s: str) -> int:
    v = int(s, 0)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must fit in 64 unsigned bits")
    return v


def _build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="mvvcast", description="Multi-view multicast energy simulator")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="cmd", required=True)

    run = sub.add_parser("run", help="run a sweep and write CSV rows")
    run.add_argument("--config", required=True)
    run.add_argument("--output")
    run.add_argument("--seed", type=_u64)
    run.add_argument("--sweep-k", type=lambda s: tuple(_ints(s)))
    run.add_argument("--sweep-gamma", type=lambda s: tuple(_floats(s)))
    run.add_argument("--schemes", type=lambda s: tuple(x for x in s.split(",") if x))
    run.add_argument("--emit-plotdata", metavar="DIR")
    run.add_argument("--no-timing", action="store_true", help="write 0 in the wall_ms column")
    run.add_argument("--progress", action="store_true")

    orc = sub.add_parser("oracle", help="brute-force optimum of a small instance")
    orc.add_argument("--config", required=True)
    orc.add_argument("--requests", type=lambda s: _floats(s), help="comma-separated requested views")
    orc.add_argument("--samples", type=int, default=5)
    orc.add_argument("--seed", type=_u64)
    orc.add_argument("--realization", type=int, default=0)

    val = sub.add_parser("validate-config", help="parse and check a config file")
    val.add_argument("--config", required=True)
    return ap


def _oracle(args) -> int:
    config = load_config(args.config, seed=args.seed)
    lattice = build_lattice(config.V, config.Q)
    if args.requests:
        requests = args.requests
    else:
        requests = _requests(config, lattice, args.realization, config.K, config.zipf_gamma)
    params = config.system_params(requests)
    params.check_lattice(lattice)
    channels = [_channel(config, args.realization, j, params.K) for j in range(args.samples)]
    res = brute_force_optimum(params, lattice, channels)
    views = [str(lattice.views[v]) for v in res.selection.active_views]
    print(f"requests: {' '.join(str(r) for r in params.requests)}")
    print(f"selections: {res.n_selections} ({res.n_infeasible} exceed N)")
    print(f"transmitted: {' '.join(views)}")
    e = res.energy
    print(f"energy_J: {e.total:.12g} tx_J: {e.transmission:.12g} server_J: {e.server_synth:.12g} "
          f"user_weighted_J: {e.user_synth_weighted:.12g}")
    return 0


def cli_main(argv=None) -> int:
    ap = _build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    try:
        if args.cmd == "validate-config":
            config = load_config(args.config)
            print(f"ok: {len(config.k_values()) * len(config.gamma_values())} sweep point(s), "
                  f"schemes {','.join(config.schemes)}")
            return 0
        if args.cmd == "oracle":
            return _oracle(args)
        config = load_config(args.config, seed=args.seed, sweep_k=args.sweep_k, sweep_gamma=args.sweep_gamma,
                             schemes=args.schemes, output=args.output)
        rows = run_experiment(config, config.output, timing=not args.no_timing, progress=args.progress)
        if args.emit_plotdata:
            write_plotdata(rows, config, args.emit_plotdata)
        return 0
    except (ConfigError, OracleGuardExceeded, InfeasibleAllocation, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(cli_main())
