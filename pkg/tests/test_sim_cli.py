import csv
from fractions import Fraction

import numpy as np
import pytest

from mvvcast.model import build_lattice, make_params
from mvvcast.resource_alloc import solve_slot_allocation
from mvvcast.sim_cli import (CSV_HEADER, ConfigError, cli_main, mean_channel_of, parse_config_text,
                             run_experiment, sample_channel, sample_requests, zipf_probabilities)

BASE = """
R = 1e6
B = 312500
N = 8
T = 0.1
n0 = 1e-9
E_b = 1e-4
E_u = 1e-4
beta = 2
V = 3
Q = 2
K = 2
channel_mean = 1e-6
n_request_realizations = 2
n_channel_realizations = 3
seed = 11
"""


@pytest.fixture
def cfg_path(tmp_path):
    p = tmp_path / "small.cfg"
    p.write_text(BASE)
    return p


def test_channel_moments_and_determinism():
    p = make_params([1], **dict(R=1, B=1, N=100000, T=1, n0=1, E_b=0, beta=1))
    h = sample_channel(np.random.default_rng(0), p, 1e-6)
    assert h.shape == (100000, 1) and np.all(h > 0)
    assert h.mean() == pytest.approx(1e-6, rel=0.02)
    assert h.var() == pytest.approx(1e-12, rel=0.05)
    assert np.array_equal(h, sample_channel(np.random.default_rng(0), p, 1e-6))


def test_zipf_requests():
    lat = build_lattice(3, 2)
    rng = np.random.default_rng(1)
    r = sample_requests(rng, 100000, 0.0, lat)
    counts = np.array([r.count(v) for v in lat.views])
    chi2 = ((counts - 20000) ** 2 / 20000).sum()
    assert chi2 < 18.47  # 99.9% quantile, 4 degrees of freedom
    assert set(sample_requests(rng, 1000, 50.0, lat)) == {Fraction(1)}
    for g in (0.5, 1.0, 2.0):
        pr = zipf_probabilities(5, g)
        assert pr[0] / pr[1] == pytest.approx(2 ** g)
    r = sample_requests(rng, 50000, 1.0, lat)
    assert r.count(1) / r.count(Fraction(3, 2)) == pytest.approx(2.0, rel=0.05)
    perm = [4, 3, 2, 1, 0]
    assert set(sample_requests(rng, 100, 50.0, lat, perm)) == {Fraction(3)}
    with pytest.raises(ValueError):
        sample_requests(rng, 1, 1.0, lat, [0, 0, 1, 2, 3])


def test_mean_channel_hook():
    cfg = parse_config_text(BASE)
    assert mean_channel_of(cfg, 3).Hbar.tolist() == [1e-6] * 3
    cfg = parse_config_text(BASE + "channel_mean = 1e-6, 2e-6\n")
    assert mean_channel_of(cfg).Hbar.tolist() == [1e-6, 2e-6]


def test_config_errors():
    with pytest.raises(ConfigError, match="R"):
        parse_config_text(BASE.replace("R = 1e6", ""))
    with pytest.raises(ConfigError, match="unknown key"):
        parse_config_text(BASE + "colour = 3\n")
    with pytest.raises(ConfigError):
        parse_config_text(BASE + "schemes = algorithm2\n")
    with pytest.raises(ConfigError):
        parse_config_text(BASE + "zipf_gamma = -1\n")
    with pytest.raises(ConfigError, match="line"):
        parse_config_text(BASE + "N 8\n")


def _rows(path):
    with open(path) as f:
        return list(csv.DictReader(f))


def test_run_rows_and_identity(tmp_path, cfg_path):
    out = tmp_path / "out.csv"
    assert cli_main(["run", "--config", str(cfg_path), "--output", str(out), "--sweep-k", "1,3",
                     "--emit-plotdata", str(tmp_path / "plot")]) == 0
    assert out.read_text().splitlines()[0] == ",".join(CSV_HEADER)
    rows = _rows(out)
    assert len(rows) == 2 * 2 * 3
    for r in rows:
        parts = [float(r[k]) for k in ("tx_energy_J", "server_synth_J", "user_synth_weighted_J")]
        assert float(r["avg_energy_J"]) == pytest.approx(sum(parts), rel=1e-9)
        assert min(parts) >= 0 and r["infeasible"] == "0"
    files = sorted(p.name for p in (tmp_path / "plot").iterdir())
    assert files == ["algorithm1_vs_K_gamma0.5.csv", "baseline1_vs_K_gamma0.5.csv", "baseline2_vs_K_gamma0.5.csv"]
    lines = (tmp_path / "plot" / "baseline1_vs_K_gamma0.5.csv").read_text().splitlines()
    assert lines[0] == "x,y_mean,y_stderr" and len(lines) == 3


def test_scheme_order_and_rerun_are_byte_stable(tmp_path, cfg_path):
    a, b, c = (tmp_path / n for n in ("a.csv", "b.csv", "c.csv"))
    base = ["run", "--config", str(cfg_path), "--sweep-gamma", "0,2", "--no-timing"]
    assert cli_main(base + ["--output", str(a)]) == 0
    assert cli_main(base + ["--output", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()
    assert cli_main(base + ["--output", str(c), "--schemes", "baseline2,algorithm1,baseline1"]) == 0
    assert sorted(a.read_text().splitlines()) == sorted(c.read_text().splitlines())


def test_single_original_view_baseline(tmp_path):
    cfg = parse_config_text(BASE + "zipf_gamma = 60\nschemes = baseline1\nK = 3\n")
    rows = run_experiment(cfg)
    lat = build_lattice(3, 2)
    p = cfg.system_params([1, 1, 1])
    from mvvcast.baselines import baseline1_selection
    from mvvcast.sim_cli import _channel
    sel = baseline1_selection([1, 1, 1], lat)
    for row in rows:
        assert row.server_synth == 0 and row.user_synth_weighted == 0 and row.views_transmitted == 1
        expect = np.mean([solve_slot_allocation(_channel(cfg, row.realization, j, 3), sel, p).energy
                          for j in range(3)])
        assert row.tx_energy == pytest.approx(expect, rel=1e-12)


def test_infeasible_baseline2_is_flagged(tmp_path):
    cfg = parse_config_text(BASE + "delta = 0.25\nzipf_gamma = 0\nschemes = baseline2\nn_request_realizations = 6\n")
    rows = run_experiment(cfg)
    flagged = [r for r in rows if r.infeasible]
    assert flagged and all(np.isnan(r.avg_energy) for r in flagged)


def test_cli_diagnostics(tmp_path, cfg_path, capsys):
    bad = tmp_path / "bad.cfg"
    bad.write_text(BASE.replace("R = 1e6", ""))
    assert cli_main(["validate-config", "--config", str(bad)]) != 0
    assert "R" in capsys.readouterr().err
    assert cli_main(["validate-config", "--config", str(cfg_path)]) == 0
    assert cli_main(["run", "--config", str(cfg_path), "--bogus"]) != 0
    big = tmp_path / "big.cfg"
    big.write_text(BASE.replace("V = 3", "V = 5").replace("Q = 2", "Q = 5").replace("K = 2", "K = 8"))
    assert cli_main(["oracle", "--config", str(big), "--requests", "3,3,3,3,3,3,3,3"]) != 0
    assert "guard" in capsys.readouterr().err


def test_cli_oracle_small(cfg_path, capsys):
    assert cli_main(["oracle", "--config", str(cfg_path), "--requests", "1.5,2", "--samples", "2"]) == 0
    out = capsys.readouterr().out
    assert "selections: 15" in out and "energy_J" in out
