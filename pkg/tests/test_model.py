from fractions import Fraction

import numpy as np
import pytest

from mvvcast.model import (ViewSelection, as_fraction, build_lattice, induced_transmission, make_params,
                           neighborhood_indices, synthesis_energy, synthesis_neighborhoods,
                           validate_selection)

from conftest import SMALL


def test_lattice_views_are_exact():
    lat = build_lattice(5, 5)
    assert len(lat) == 21
    assert lat.views[1] == Fraction(6, 5)
    assert lat.index(Fraction(17, 5)) == 12
    assert lat.index(3.4) == 12
    assert lat.is_original.sum() == 5
    assert lat.synthetic_mask.sum() == 16


def test_lattice_rejects_off_grid_and_bad_sizes():
    lat = build_lattice(3, 2)
    with pytest.raises(ValueError):
        lat.index(1.25)
    with pytest.raises(ValueError):
        lat.index(4)
    assert not lat.contains(0.5)
    with pytest.raises(ValueError):
        build_lattice(1, 2)
    with pytest.raises(ValueError):
        build_lattice(3, 0)


def test_originals_only_lattice():
    lat = build_lattice(4, 1)
    assert lat.views == tuple(Fraction(v) for v in (1, 2, 3, 4))
    assert not lat.synthetic_mask.any()


def test_float_delta_uses_decimal_value():
    assert as_fraction(0.3) == Fraction(3, 10)
    lat = build_lattice(5, 10)
    left, right = synthesis_neighborhoods(2, 0.3, lat)
    assert left == [Fraction(17, 10), Fraction(18, 10), Fraction(19, 10)]
    assert right == [Fraction(21, 10), Fraction(22, 10), Fraction(23, 10)]


def test_neighborhoods_at_edges_and_zero_delta():
    lat = build_lattice(5, 2)
    assert synthesis_neighborhoods(1, 1, lat) == ([], [Fraction(3, 2), Fraction(2)])
    assert synthesis_neighborhoods(Fraction(7, 2), 1, lat) == (
        [Fraction(5, 2), Fraction(3)], [Fraction(4), Fraction(9, 2)])
    assert synthesis_neighborhoods(3, 0, lat) == ([], [])


def test_params_validation():
    with pytest.raises(ValueError):
        make_params([1], **dict(SMALL, beta=0.5))
    with pytest.raises(ValueError):
        make_params([1], **dict(SMALL, R=0))
    with pytest.raises(ValueError):
        make_params([], **SMALL)
    with pytest.raises(ValueError):
        make_params([1, 2], delta=[1], **SMALL)
    p = make_params([1, 2.5], delta=[1, 0.5], E_u=[1e-3, 2e-3], **SMALL)
    assert p.K == 2 and p.deltas == [1, Fraction(1, 2)]
    assert np.allclose(p.user_energies, [1e-3, 2e-3])


def test_induced_transmission_is_column_max():
    y = np.array([[1, 0, 0], [0, 0, 1], [1, 0, 0]])
    assert induced_transmission(y).tolist() == [1, 0, 1]
    assert induced_transmission(np.zeros((0, 3))).tolist() == [0, 0, 0]


def _sel(lat, K, used):
    y = np.zeros((K, len(lat)), dtype=np.int8)
    for k, views in enumerate(used):
        for v in views:
            y[k, lat.index(v)] = 1
    return ViewSelection.from_y(y)


def test_validate_accepts_direct_and_anchor_pairs():
    lat = build_lattice(5, 2)
    p = make_params([3.5, 2], **SMALL)
    assert validate_selection(_sel(lat, 2, [[3.5], [2]]), p, lat).ok
    assert validate_selection(_sel(lat, 2, [[3, 4.5], [1.5, 2.5]]), p, lat).ok


def test_validate_reports_each_constraint():
    lat = build_lattice(5, 2)
    p = make_params([3.5], **SMALL)
    rep = validate_selection(_sel(lat, 1, [[3]]), p, lat)
    assert ("(4)", 0, None) in rep.violations and not rep
    rep = validate_selection(_sel(lat, 1, [[3.5, 5]]), p, lat)
    assert ("(5)", 0, Fraction(5)) in rep.violations
    rep = validate_selection(_sel(lat, 1, [[3.5, 3, 4]]), p, lat)
    assert {v[0] for v in rep.violations} == {"(3)", "(4)"}
    sel = _sel(lat, 1, [[3.5]])
    rep = validate_selection(ViewSelection(sel.y, np.zeros_like(sel.x)), p, lat)
    assert ("(6)", 0, Fraction(7, 2)) in rep.violations
    y = sel.y.astype(float) * 0.5
    rep = validate_selection(ViewSelection(y, sel.x), p, lat)
    assert rep.violations[0][0] == "binary"
    with pytest.raises(ValueError):
        validate_selection(ViewSelection(sel.y[:, :3], sel.x), p, lat)


def test_synthesis_energy_accounting():
    lat = build_lattice(5, 2)
    p = make_params([3.5, 3.5, 2], E_u=[1e-3, 2e-3, 5e-3], **SMALL)
    # user 0 direct (synthetic view at the server), user 1 from (3, 4), user 2 direct
    sel = _sel(lat, 3, [[3.5], [3, 4], [2]])
    e = synthesis_energy(sel, p, lat)
    assert e.server == pytest.approx(SMALL["E_b"])
    assert e.users == pytest.approx(2e-3)
    assert e.weighted == pytest.approx(SMALL["E_b"] + 2 * 2e-3)


def test_neighborhood_indices_match_fraction_lists():
    lat = build_lattice(3, 2)
    p = make_params([2, 1], **SMALL)
    assert neighborhood_indices(p, lat) == [(2, [0, 1], [3, 4]), (0, [], [1, 2])]
