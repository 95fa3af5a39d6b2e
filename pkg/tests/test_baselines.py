import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mvvcast.baselines import InfeasibleSelection, baseline1_selection, baseline2_selection
from mvvcast.model import build_lattice, make_params, synthesis_energy, validate_selection

from conftest import SMALL


def test_baseline1_examples():
    lat = build_lattice(5, 2)
    assert baseline1_selection([3, 3, 3], lat).n_transmitted == 1
    sel = baseline1_selection([3, 3.5], lat)
    assert sel.x[lat.index(3)] == sel.x[lat.index(3.5)] == 1 and sel.n_transmitted == 2
    p = make_params([3, 3.5], **SMALL)
    assert synthesis_energy(sel, p, lat).server == pytest.approx(SMALL["E_b"])
    assert baseline1_selection([1, 2, 4.5, 5], lat).n_transmitted == 4


def test_baseline2_examples():
    lat = build_lattice(5, 2)
    sel = baseline2_selection([3.5], 1, lat)
    assert np.flatnonzero(sel.y[0]).tolist() == [lat.index(3), lat.index(4)]
    assert np.array_equal(baseline2_selection([1, 3, 5], 1, lat).y, baseline1_selection([1, 3, 5], lat).y)
    sel = baseline2_selection([1.5, 2.5], 1, lat)
    assert np.flatnonzero(sel.x).tolist() == [lat.index(1), lat.index(2), lat.index(3)]


def test_baseline2_needs_wide_enough_window():
    lat = build_lattice(5, 5)
    with pytest.raises(InfeasibleSelection):
        baseline2_selection([2.4], 0.4, lat)
    assert baseline2_selection([2.4], 0.6, lat).n_transmitted == 2
    with pytest.raises(InfeasibleSelection):
        baseline2_selection([2.4, 3.2], [1, 0.1], lat)


@settings(max_examples=50, deadline=None)
@given(idx=st.lists(st.integers(0, 20), min_size=1, max_size=8))
def test_baselines_are_valid(idx):
    lat = build_lattice(5, 5)
    req = [lat.views[i] for i in idx]
    p = make_params(req, **SMALL)
    s1 = baseline1_selection(req, lat)
    s2 = baseline2_selection(req, 1, lat)
    assert validate_selection(s1, p, lat).ok and validate_selection(s2, p, lat).ok
    assert synthesis_energy(s1, p, lat).users == 0
    assert s1.n_transmitted <= len(req)
    assert not s2.x[lat.synthetic_mask].any()
    assert synthesis_energy(s2, p, lat).server == 0
