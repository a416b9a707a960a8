from __future__ import annotations

import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wemiscreen.measurement import (
    ComplexSweep,
    FrequencyGrid,
    RealSweep,
    SweepFormatError,
    SweepPath,
    load_sweep,
    save_sweep,
    stack_real,
    unstack_real,
)

CSV_FIXTURE = (
    "# omegas_rad_s: 1.0,10.0\n"
    "easting,northing,re_1,im_1,re_2,im_2\n"
    "500000.0,4200000.0,1.5,-2.25,3.0,4.0\n"
    "500000.1,4200000.0,0.5,0.25,-1.0,2.0\n"
)


def _sweep(k=3, n=5, seed=0):
    rng = np.random.default_rng(seed)
    grid = FrequencyGrid(np.geomspace(0.5, 20.0, k))
    path = SweepPath(np.column_stack([np.arange(n) * 0.02 + 5e5, np.full(n, 4.2e6)]))
    data = rng.standard_normal((k, n)) + 1j * rng.standard_normal((k, n))
    return ComplexSweep(grid, path, data)


def test_stack_real_places_real_above_imaginary():
    grid = FrequencyGrid([1.0, 2.0])
    sweep = ComplexSweep(grid, SweepPath([[0.0, 0.0]]), np.array([[3 + 4j], [0j]]))
    np.testing.assert_array_equal(stack_real(sweep).data[:, 0], [3.0, 0.0, 4.0, 0.0])


def test_purely_real_sweep_has_zero_bottom_block():
    s = _sweep()
    real = ComplexSweep(s.grid, s.path, s.data.real.astype(complex))
    assert np.all(stack_real(real).data[s.grid.k:] == 0)


def test_stack_unstack_roundtrip_k2_n3():
    s = _sweep(k=2, n=3, seed=4)
    back = unstack_real(stack_real(s))
    np.testing.assert_array_equal(back.data, s.data)
    assert back.grid == s.grid and back.path == s.path


@settings(max_examples=50, deadline=None)
@given(st.integers(2, 12), st.integers(1, 30), st.integers(0, 2**32 - 1))
def test_stacking_preserves_frobenius_norm(k, n, seed):
    s = _sweep(k, n, seed)
    r = stack_real(s)
    assert r.data.shape == (2 * k, n)
    assert np.linalg.norm(r.data) == pytest.approx(np.sqrt(np.sum(np.abs(s.data) ** 2)), rel=1e-14)
    np.testing.assert_array_equal(unstack_real(r).data, s.data)


def test_realsweep_row_count_enforced():
    s = _sweep()
    with pytest.raises(ValueError):
        RealSweep(s.grid, s.path, np.zeros((s.grid.k, s.path.n)))


def test_grid_invariants():
    with pytest.raises(ValueError):
        FrequencyGrid([1.0])
    with pytest.raises(ValueError):
        FrequencyGrid([2.0, 1.0])
    with pytest.raises(ValueError):
        FrequencyGrid([0.0, 1.0])


def test_empty_path_rejected():
    with pytest.raises(ValueError):
        SweepPath(np.zeros((0, 2)))


def test_load_csv_fixture():
    s = load_sweep(CSV_FIXTURE.encode())
    assert s.data[0, 0] == 1.5 - 2.25j
    assert s.data[1, 0] == 3.0 + 4.0j
    np.testing.assert_array_equal(s.grid.omegas, [1.0, 10.0])
    assert s.path.n == 2


def test_csv_wrong_arity_names_row():
    bad = CSV_FIXTURE.replace("0.5,0.25,-1.0,2.0", "0.5,0.25,-1.0")
    with pytest.raises(SweepFormatError) as err:
        load_sweep(bad)
    assert err.value.row == 4
    assert "row 4" in str(err.value)


def test_csv_non_finite_names_location():
    bad = CSV_FIXTURE.replace("3.0,4.0", "nan,4.0")
    with pytest.raises(SweepFormatError) as err:
        load_sweep(bad)
    assert err.value.row == 3 and err.value.column == 5


def test_csv_malformed_header():
    with pytest.raises(SweepFormatError):
        load_sweep(CSV_FIXTURE.replace("re_2", "real_2"))


def test_json_fixture_equals_csv_fixture():
    obj = {
        "omegas_rad_s": [1.0, 10.0],
        "positions": [[500000.0, 4200000.0], [500000.1, 4200000.0]],
        "data": [[[1.5, -2.25], [3.0, 4.0]], [[0.5, 0.25], [-1.0, 2.0]]],
    }
    assert load_sweep(json.dumps(obj), format="json") == load_sweep(CSV_FIXTURE)


def test_json_dimension_mismatch_rejected():
    obj = {"omegas_rad_s": [1.0, 10.0], "positions": [[0.0, 0.0]], "data": [[[1.0, 0.0]]]}
    with pytest.raises(SweepFormatError):
        load_sweep(json.dumps(obj), format="json")


def test_roundtrip_3x5_both_formats():
    s = _sweep(3, 5, seed=11)
    for fmt in ("csv", "json"):
        assert load_sweep(save_sweep(s, fmt), format=fmt) == s
    # cross-format: csv -> object -> json -> object
    via = load_sweep(save_sweep(load_sweep(save_sweep(s, "csv")), "json"), format="json")
    assert via == s


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_roundtrip_is_bit_exact(seed):
    rng = np.random.default_rng(seed)
    s = _sweep(4, 6, seed)
    # awkward magnitudes exercise repr round-tripping
    s = ComplexSweep(s.grid, s.path, s.data * 10.0 ** rng.uniform(-200, 200))
    assert load_sweep(save_sweep(s)).data.tobytes() == s.data.tobytes()


def test_arrays_are_read_only():
    s = _sweep()
    with pytest.raises(ValueError):
        s.data[0, 0] = 1.0
