from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from wemiscreen.alarms import Alarm
from wemiscreen.score import SUBSETS, RocCurve, match_alarms, pd_at_far, roc
from wemiscreen.synthgen import GroundTruthTable, TruthEntry

ONE = GroundTruthTable((TruthEntry((0.0, 0.0), "MT", 0.25),))


def _alarm(x, y, c):
    return Alarm((float(x), float(y)), float(c), 1)


def _scored(hit_c, fa_c, n_targets, area=10.0):
    from wemiscreen.score import ScoredAlarmSet
    return ScoredAlarmSet(tuple((_alarm(0, 0, c), i) for i, c in enumerate(hit_c)),
                          tuple(_alarm(9, 9, c) for c in fa_c), n_targets, area)


def test_one_alarm_in_halo_is_a_hit():
    s = match_alarms([_alarm(0.1, 0.0, 1.0)], ONE, 5.0)
    assert len(s.hits) == 1 and not s.false_alarms and s.hits[0][1] == 0


def test_two_alarms_in_one_halo():
    s = match_alarms([_alarm(0.1, 0.0, 0.5), _alarm(-0.05, 0.0, 0.9)], ONE, 5.0)
    assert len(s.hits) == 1 and len(s.false_alarms) == 1
    assert s.hits[0][0].confidence == 0.9


def test_halo_boundary_is_inclusive():
    assert len(match_alarms([_alarm(0.25, 0.0, 1.0)], ONE, 1.0).hits) == 1
    assert len(match_alarms([_alarm(0.2501, 0.0, 1.0)], ONE, 1.0).hits) == 0


def test_clutter_never_hits():
    truth = GroundTruthTable((TruthEntry((0.0, 0.0), "CL"),))
    s = match_alarms([_alarm(0.0, 0.0, 1.0)], truth, 1.0)
    assert not s.hits and len(s.false_alarms) == 1 and s.n_targets == 0


def test_unscored_target_alarms_are_set_aside():
    truth = GroundTruthTable((TruthEntry((0.0, 0.0), "MT"), TruthEntry((3.0, 0.0), "LMT")))
    alarms = [_alarm(0.0, 0.0, 1.0), _alarm(3.0, 0.0, 0.8), _alarm(6.0, 0.0, 0.7)]
    s = match_alarms(alarms, truth, 1.0, classes=SUBSETS["MT"])
    assert len(s.hits) == 1 and len(s.false_alarms) == 1 and len(s.ignored) == 1
    assert s.n_targets == 1
    every = match_alarms(alarms, truth, 1.0)
    assert len(every.hits) + len(every.false_alarms) == len(alarms) and not every.ignored


def test_tie_broken_by_distance():
    # equal confidence: the nearer alarm claims the target
    s = match_alarms([_alarm(0.2, 0.0, 0.5), _alarm(0.05, 0.0, 0.5)], ONE, 1.0)
    assert s.hits[0][0].position == (0.05, 0.0)


def test_area_must_be_positive():
    with pytest.raises(ValueError):
        match_alarms([], ONE, 0.0)


def _random_case(rng):
    n_t = int(rng.integers(0, 8))
    labels = rng.choice(["MT", "LMT", "NMT", "CL"], n_t)
    truth = GroundTruthTable(tuple(
        TruthEntry(tuple(rng.uniform(0, 5, 2)), str(lab), float(rng.uniform(0.1, 0.6))) for lab in labels))
    n_a = int(rng.integers(0, 25))
    conf = rng.integers(0, 6, n_a) / 5.0  # deliberate ties
    alarms = [_alarm(*rng.uniform(0, 5, 2), c) for c in conf]
    return truth, alarms


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from(sorted(SUBSETS)))
def test_matching_equals_greedy_oracle(seed, subset):
    truth, alarms = _random_case(np.random.default_rng(seed))
    classes = SUBSETS[subset]
    s = match_alarms(alarms, truth, 7.0, classes)
    hits, fas, n_t = oracles.greedy_match(
        [(a.position[0], a.position[1], a.confidence) for a in alarms],
        [(e.position[0], e.position[1], e.label, e.halo_m) for e in truth.entries], classes)
    index = {id(a): i for i, a in enumerate(alarms)}
    assert sorted(index[id(a)] for a, _ in s.hits) == hits
    assert sorted(index[id(a)] for a in s.false_alarms) == fas
    assert s.n_targets == n_t
    assert len(s.hits) + len(s.false_alarms) + len(s.ignored) == len(alarms)
    assert len({k for _, k in s.hits}) == len(s.hits)
    if subset == "all":
        assert len(s.hits) + len(s.false_alarms) == len(alarms)


def test_roc_all_hits_reaches_full_pd_at_zero_far():
    c = roc(_scored([0.9, 0.4, 0.1], [], 3))
    assert c.pd[-1] == 1.0 and c.far[-1] == 0.0


def test_roc_no_alarms_is_origin():
    c = roc(_scored([], [], 2))
    assert c.points == [(0.0, 0.0)]
    assert np.isinf(c.thresholds[0])


def test_roc_five_step_staircase():
    hit_c, fa_c = [0.9, 0.6, 0.3], [0.8, 0.5]
    c = roc(_scored(hit_c, fa_c, 4, area=2.0))
    want = oracles.roc_by_enumeration(hit_c, fa_c, 4, 2.0)
    assert len(c.far) == 6
    got = list(zip(c.thresholds.tolist(), c.far.tolist(), c.pd.tolist()))
    assert got == want


def test_roc_needs_targets():
    with pytest.raises(ValueError):
        roc(_scored([], [0.3], 0))


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_roc_rank_invariance_and_monotone(seed):
    rng = np.random.default_rng(seed)
    n_t = int(rng.integers(1, 10))
    hit_c = rng.integers(-20, 20, int(rng.integers(0, n_t + 1))) / 7.0
    fa_c = rng.integers(-20, 20, int(rng.integers(0, 15))) / 7.0
    base = roc(_scored(hit_c, fa_c, n_t, 3.0))
    assert np.all(np.diff(base.far) >= 0) and np.all(np.diff(base.pd) >= 0)
    assert np.all((base.pd >= 0) & (base.pd <= 1))
    for f in (np.exp, lambda v: 3.0 * v + 11.0, np.arctan):
        other = roc(_scored(f(hit_c), f(fa_c), n_t, 3.0))
        assert np.array_equal(other.far, base.far) and np.array_equal(other.pd, base.pd)
    want = oracles.roc_by_enumeration(hit_c.tolist(), fa_c.tolist(), n_t, 3.0)
    np.testing.assert_array_equal(base.far, [p[1] for p in want])
    np.testing.assert_array_equal(base.pd, [p[2] for p in want])


def test_pd_at_far_examples():
    c = roc(_scored([0.9, 0.6, 0.3], [0.8, 0.5], 3, area=1.0))
    assert pd_at_far(c, 100.0) == 1.0
    assert pd_at_far(c, 0.0) == pytest.approx(1 / 3)  # zero-FA prefix above 0.8
    all_fa = roc(_scored([0.5], [0.9], 1, area=1.0))
    assert pd_at_far(all_fa, 0.0) == 0.0
    with pytest.raises(ValueError):
        pd_at_far(c, -1.0)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.0, 5.0))
def test_pd_at_far_equals_linear_scan(seed, budget):
    rng = np.random.default_rng(seed)
    c = roc(_scored(rng.uniform(0, 1, 4), rng.uniform(0, 1, 6), 5, area=1.5))
    best = 0.0
    for f, p in c.points:
        if f <= budget:
            best = max(best, p)
    assert pd_at_far(c, budget) == best


def test_roc_csv():
    c = roc(_scored([0.9], [0.1], 1, area=4.0))
    lines = c.to_csv().decode().splitlines()
    assert lines[0] == "threshold,far_per_m2,pd"
    assert lines[1] == "inf,0.0,0.0"
    assert isinstance(c, RocCurve) and len(lines) == 4
