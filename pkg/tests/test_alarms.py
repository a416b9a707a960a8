from __future__ import annotations

import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from wemiscreen.alarms import (
    Alarm,
    DegenerateMapWarning,
    MeanShiftParams,
    alarm_confidence,
    alarms_from_csv,
    alarms_to_csv,
    generate_alarms,
    mean_shift,
    quantize_alarms,
    shift_confidences,
)
from wemiscreen.detect import ConfidenceMap

P = MeanShiftParams()


def _grid(half=1.5, step=0.02, offset=(0.0, 0.0)):
    g = np.arange(-half, half + step / 2, step)
    xx, yy = np.meshgrid(g, g)
    return np.column_stack([xx.ravel(), yy.ravel()]) + np.asarray(offset)


def _blob_map(centers, width=0.1, half=1.5, step=0.02, offset=(0.0, 0.0)):
    pts = _grid(half, step, offset)
    c = sum(np.exp(-0.5 * np.sum((pts - np.asarray(m)) ** 2, axis=1) / width**2) for m in centers)
    return ConfidenceMap(pts, c, "magnitude")


def test_params_must_be_positive():
    for name in ("sigma", "tau", "epsilon", "conf_radius", "max_iters"):
        with pytest.raises(ValueError):
            MeanShiftParams(**{name: 0})
    with pytest.raises(ValueError):
        MeanShiftParams(weighting="cubic")
    with pytest.raises(ValueError):
        Alarm((0.0, 0.0), 1.0, 0)


def test_single_point_converges_in_one_step():
    r = mean_shift([[3.0, -2.0]], [0.7])
    np.testing.assert_allclose(r.positions, [[3.0, -2.0]])
    assert r.iterations[0] == 1 and not r.capped[0]


def test_two_close_points_meet_at_midpoint():
    pts = np.array([[0.0, 0.0], [0.01, 0.0]])
    r = mean_shift(pts, [1.0, 1.0])
    np.testing.assert_allclose(r.positions, [[0.005, 0.0]] * 2, atol=P.tau)
    # independent scalar iteration of the same update
    for seed in pts:
        z = tuple(seed)
        for _ in range(P.max_iters):
            nz = oracles.mean_shift_step(z, pts, [1.0, 1.0], P.sigma)
            done = math.hypot(nz[0] - z[0], nz[1] - z[1]) <= P.tau
            z = nz
            if done:
                break
        assert math.hypot(z[0] - 0.005, z[1]) <= P.tau


def test_update_matches_scalar_oracle():
    rng = np.random.default_rng(0)
    pts = rng.uniform(-0.5, 0.5, (30, 2))
    c = rng.uniform(0.0, 1.0, 30)
    one = MeanShiftParams(max_iters=1)
    r = mean_shift(pts, c, one)
    for j in range(30):
        np.testing.assert_allclose(r.positions[j], oracles.mean_shift_step(pts[j], pts, c, P.sigma), atol=1e-12)


# grid nodes kept off the symmetry line between the two modes (see the saddle test)
OFF = (0.013, 0.007)


def test_two_blobs_separate():
    m = _blob_map([(-1.0, 0.0), (1.0, 0.0)], half=1.6, step=0.05, offset=OFF)
    r = mean_shift(m.positions, m.confidences)
    left = r.positions[m.positions[:, 0] < -0.5]
    right = r.positions[m.positions[:, 0] > 0.5]
    assert np.linalg.norm(np.median(left, axis=0) - np.median(right, axis=0)) >= 1.9


def test_utm_offsets_do_not_matter():
    local = _blob_map([(0.3, -0.2)], half=0.6, step=0.05)
    utm = ConfidenceMap(local.positions + [512345.0, 4209876.0], local.confidences, "magnitude")
    a = mean_shift(local.positions, local.confidences)
    b = mean_shift(utm.positions, utm.confidences)
    np.testing.assert_allclose(b.positions - [512345.0, 4209876.0], a.positions, atol=1e-6)


def test_iterates_stay_in_convex_hull_and_approach_single_mode():
    m = _blob_map([(0.0, 0.0)], width=0.3, half=0.5, step=0.1)
    prev = np.linalg.norm(m.positions, axis=1)
    for n_steps in range(1, 21):
        z = mean_shift(m.positions, m.confidences, MeanShiftParams(max_iters=n_steps, tau=1e-12)).positions
        d = np.linalg.norm(z, axis=1)
        assert np.all(d <= prev + 1e-12)
        assert np.all(np.abs(z) <= 0.5 + 1e-12)
        prev = d


def test_all_zero_confidence_is_flagged():
    pts = np.array([[0.0, 0.0], [1.0, 1.0]])
    r = mean_shift(pts, [0.0, 0.0])
    assert r.degenerate
    np.testing.assert_array_equal(r.positions, pts)


def test_shift_confidences():
    np.testing.assert_array_equal(shift_confidences([-0.5, 0.5]), [0.0, 1.0])
    np.testing.assert_array_equal(shift_confidences([0.2, 0.5]), [0.2, 0.5])


def test_quantize_chain_and_split():
    chain = np.column_stack([np.arange(10) * 0.009, np.zeros(10)])
    labels, centers = quantize_alarms(chain, 0.01)
    assert set(labels) == {0}
    two = np.array([[0.0, 0.0], [0.001, 0.0], [0.1, 0.0]])
    labels, centers = quantize_alarms(two, 0.01, weights=[1.0, 3.0, 1.0])
    assert list(labels) == [0, 0, 1]
    np.testing.assert_allclose(centers[0], [0.00075, 0.0])
    with pytest.raises(ValueError):
        quantize_alarms(two, 0.0)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 60), st.floats(0.01, 0.3))
def test_quantize_matches_union_find(seed, n, eps):
    pts = np.random.default_rng(seed).uniform(0.0, 1.0, (n, 2))
    labels, centers = quantize_alarms(pts, eps)
    got = sorted((frozenset(np.flatnonzero(labels == k).tolist()) for k in set(labels)), key=min)
    assert got == oracles.union_find_partition(pts.tolist(), eps)
    assert centers.shape[0] == len(got) <= n


def test_alarm_confidence_examples():
    assert alarm_confidence((0.0, 0.0), [[0.0, 0.0]] * 3, [0.4, 0.4, 0.4]) == pytest.approx(0.4)
    assert alarm_confidence((0.0, 0.0), [[0.0, 0.0], [0.25, 0.0]], [1.0, 0.0]) == 1.0
    assert alarm_confidence((0.0, 0.0), [[1.0, 0.0]], [1.0]) is None
    pts = [[0.05, 0.0], [0.0, 0.1], [0.2, 0.0], [0.3, 0.0]]
    c = [2.0, 1.0, 4.0, 9.0]
    w = [0.8, 0.6, 0.2]
    want = (0.8 * 2.0 + 0.6 * 1.0 + 0.2 * 4.0) / sum(w)
    assert alarm_confidence((0.0, 0.0), pts, c) == pytest.approx(want)
    wi = [1 / (d + 0.0025) for d in (0.05, 0.1, 0.2)]
    want_inv = (wi[0] * 2.0 + wi[1] * 1.0 + wi[2] * 4.0) / sum(wi)
    assert alarm_confidence((0.0, 0.0), pts, c, weighting="inverse") == pytest.approx(want_inv)


def test_one_sharp_blob_gives_one_alarm():
    m = _blob_map([(0.13, -0.21)], width=0.08, half=0.8, step=0.04)
    alarms = generate_alarms(m)
    assert len(alarms) == 1
    assert math.dist(alarms[0].position, (0.13, -0.21)) <= 0.05
    assert alarms[0].support_count >= 1


def test_two_mode_map_gives_two_alarms_at_modes():
    m = _blob_map([(-1.0, 0.0), (1.0, 0.0)], half=1.6, step=0.05, offset=OFF)
    alarms = generate_alarms(m)
    assert len(alarms) == 2
    for mode in ((-1.0, 0.0), (1.0, 0.0)):
        assert min(math.dist(a.position, mode) for a in alarms) <= 0.05


def test_seeds_on_exact_symmetry_line_stay_at_saddle():
    # a seed on the mirror line has a zero gradient across it, so it stalls at
    # the saddle between the modes; the resulting alarm carries ~0 confidence
    m = _blob_map([(-1.0, 0.0), (1.0, 0.0)], half=1.6, step=0.05)
    alarms = generate_alarms(m)
    assert len(alarms) == 3
    assert math.dist(alarms[-1].position, (0.0, 0.0)) <= 1e-6
    assert alarms[-1].confidence < 1e-10


def test_alarms_sorted_and_deterministic():
    rng = np.random.default_rng(1)
    pts = rng.uniform(0.0, 2.0, (300, 2))
    m = ConfidenceMap(pts, rng.uniform(-1.0, 1.0, 300), "ace")
    a, b = generate_alarms(m), generate_alarms(m)
    assert alarms_to_csv(a) == alarms_to_csv(b)
    conf = [x.confidence for x in a]
    assert conf == sorted(conf, reverse=True)
    assert len(a) <= 300
    assert sum(x.support_count for x in a) == 300
    # confidences stay on the original (unshifted) scale
    assert min(conf) >= -1.0 and max(conf) <= 1.0


def test_uniform_map_warns():
    m = ConfidenceMap(_grid(0.2, 0.05), np.full(81, 0.5), "magnitude")
    with pytest.warns(DegenerateMapWarning):
        generate_alarms(m)
    with warnings.catch_warnings(record=True) as rec:
        warnings.simplefilter("always")
        generate_alarms(ConfidenceMap(_grid(0.2, 0.05), np.zeros(81), "magnitude"))
    assert any(issubclass(w.category, DegenerateMapWarning) for w in rec)


def test_alarm_csv_roundtrip():
    alarms = [Alarm((512000.123456789, 4200000.5), 0.1 + 0.2, 7), Alarm((1.0, 2.0), -3e-17, 1)]
    back = alarms_from_csv(alarms_to_csv(alarms))
    assert back == alarms
    with pytest.raises(ValueError):
        alarms_from_csv(b"x,y\n")
