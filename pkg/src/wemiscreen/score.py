"""Halo-based alarm matching and PD-versus-FAR ROC curves.

FAR is reported in false alarms per square meter of swept area.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np

from .alarms import Alarm
from .synthgen import GroundTruthTable

__all__ = ["ScoredAlarmSet", "RocCurve", "match_alarms", "roc", "pd_at_far", "SUBSETS"]

# scoring subsets: which classes count as targets
SUBSETS = {"MT": ("MT",), "LMT": ("LMT",), "all": ("MT", "LMT", "NMT")}


@dataclass(frozen=True)
class ScoredAlarmSet:
    """``hits`` pairs an alarm with the index of the truth entry it matched."""

    hits: tuple[tuple[Alarm, int], ...]
    false_alarms: tuple[Alarm, ...]
    n_targets: int
    swept_area: float
    ignored: tuple[Alarm, ...] = field(default=())


@dataclass(frozen=True)
class RocCurve:
    far: np.ndarray
    pd: np.ndarray
    thresholds: np.ndarray

    @property
    def points(self) -> list[tuple[float, float]]:
        return list(zip(self.far.tolist(), self.pd.tolist()))

    def to_csv(self) -> bytes:
        buf = io.StringIO()
        buf.write("threshold,far_per_m2,pd\n")
        for t, f, p in zip(self.thresholds, self.far, self.pd):
            buf.write(f"{float(t)!r},{float(f)!r},{float(p)!r}\n")
        return buf.getvalue().encode("utf-8")


def match_alarms(alarms, truth: GroundTruthTable, swept_area: float,
                 classes=("MT", "LMT", "NMT")) -> ScoredAlarmSet:
    """Greedy halo matching, highest confidence first.

    An alarm inside the halo of a still-unmatched target of a scored class
    becomes a hit (nearest such target); every other alarm is a false alarm,
    clutter (CL) halos included.  Alarms that fall in the halo of a target
    whose class is real but not scored in this subset are set aside as
    ``ignored`` rather than counted either way.  Equal-confidence alarms are
    processed nearest-to-a-target first.
    """
    if not swept_area > 0:
        raise ValueError("swept_area must be > 0")
    entries = truth.entries
    xy = truth.positions
    halos = np.array([e.halo_m for e in entries], dtype=float)
    scored = np.array([e.label in classes for e in entries], dtype=bool)
    nonscored_target = np.array([e.label != "CL" and e.label not in classes for e in entries], dtype=bool)

    def dists(a):
        if not entries:
            return np.empty(0)
        return np.linalg.norm(xy - np.asarray(a.position), axis=1)

    def tie_key(a):
        d = dists(a)
        return float(d[scored].min()) if np.any(scored) else np.inf

    order = sorted(alarms, key=lambda a: (-a.confidence, tie_key(a)))
    matched = np.zeros(len(entries), dtype=bool)
    hits, fas, ignored = [], [], []
    for a in order:
        d = dists(a)
        inside = d <= halos if entries else np.zeros(0, dtype=bool)
        cand = np.flatnonzero(inside & scored & ~matched)
        if cand.size:
            k = int(cand[np.argmin(d[cand])])
            matched[k] = True
            hits.append((a, k))
        elif np.any(inside & nonscored_target):
            ignored.append(a)
        else:
            fas.append(a)
    return ScoredAlarmSet(tuple(hits), tuple(fas), int(scored.sum()), float(swept_area), tuple(ignored))


def roc(scored: ScoredAlarmSet) -> RocCurve:
    """PD and FAR at every distinct alarm confidence, swept from high to low.

    The curve starts at (0, 0) with threshold +inf.
    """
    if scored.n_targets < 1:
        raise ValueError("ROC needs at least one target")
    hit_c = np.array([a.confidence for a, _ in scored.hits], dtype=float)
    fa_c = np.array([a.confidence for a in scored.false_alarms], dtype=float)
    levels = np.unique(np.concatenate([hit_c, fa_c]))[::-1]
    hit_sorted = np.sort(hit_c)
    fa_sorted = np.sort(fa_c)
    n_hits = hit_sorted.size - np.searchsorted(hit_sorted, levels, side="left")
    n_fas = fa_sorted.size - np.searchsorted(fa_sorted, levels, side="left")
    far = np.concatenate([[0.0], n_fas / scored.swept_area])
    pd = np.concatenate([[0.0], n_hits / scored.n_targets])
    thresholds = np.concatenate([[np.inf], levels])
    return RocCurve(far, pd, thresholds)


def pd_at_far(curve: RocCurve, far_budget: float) -> float:
    """Best PD among curve points whose FAR does not exceed the budget."""
    if far_budget < 0:
        raise ValueError("far_budget must be >= 0")
    ok = curve.far <= far_budget
    return float(curve.pd[ok].max()) if np.any(ok) else 0.0
