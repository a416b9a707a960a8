"""Multiple-instance target concept learning (MI-SMF and MI-ACE).

Training works in the whitened background space ``x_w = W (x - mu)``.  The
learned signature is a unit vector there, and both statistics become inner
products with it (ACE additionally normalizes each instance).  Alternating
between picking the best instance of every positive bag and refitting the
signature never decreases the objective, because for a fixed candidate set
the objective is linear in the unit signature and the refit is its maximizer.
"""

from __future__ import annotations

import json
import logging
import warnings
from dataclasses import dataclass, field

import numpy as np

from .detect import BackgroundModel
from .synthgen import GroundTruthTable

__all__ = [
    "Bag",
    "MilModel",
    "make_bags",
    "mil_objective",
    "train_mi",
    "detect_with_model",
    "lane_folds",
]

log = logging.getLogger(__name__)

POSITIVE_CLASSES = ("MT", "LMT", "NMT")


@dataclass(frozen=True, eq=False)
class Bag:
    """A labelled multiset of instances; ``instances`` is M x n."""

    positive: bool
    instances: np.ndarray
    provenance: str = ""

    def __post_init__(self):
        x = np.asarray(self.instances, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        if x.ndim != 2 or x.shape[1] == 0:
            raise ValueError("a bag needs at least one instance")
        x.setflags(write=False)
        object.__setattr__(self, "instances", x)

    @property
    def label(self) -> str:
        return "positive" if self.positive else "negative"

    def __len__(self):
        return self.instances.shape[1]


def _dist_to_truth(positions: np.ndarray, truth_xy: np.ndarray) -> np.ndarray:
    if truth_xy.size == 0:
        return np.full(positions.shape[0], np.inf)
    d = np.linalg.norm(positions[:, None, :] - truth_xy[None, :, :], axis=2)
    return d.min(axis=1)


def _chunks(idx: np.ndarray, size: int | None):
    if size is None or size >= idx.size:
        return [idx]
    return [idx[i: i + size] for i in range(0, idx.size, size)]


def make_bags(sweeps, truth: GroundTruthTable, halo_m: float = 0.25, blanks=(),
              blank_bag_size: int | None = None, far_factor: float = 3.0,
              positive_classes=POSITIVE_CLASSES) -> list[Bag]:
    """Build positive bags around truth entries and negative bags elsewhere.

    ``sweeps`` and ``blanks`` are objects with ``positions`` (N x 2), ``data``
    (M x N) and ``sweep_id`` (feature maps or real sweeps).  Each positive
    truth entry yields one bag of every column within ``halo_m`` of it.
    Columns farther than ``far_factor * halo_m`` from every truth entry form
    one negative bag per sweep; blank collections form negative bags of
    ``blank_bag_size`` columns (whole sweep by default), with the same guard
    band applied.
    """
    if not halo_m > 0:
        raise ValueError("halo_m must be > 0")
    sweeps = list(sweeps)
    truth_xy = truth.positions
    bags = []
    for t_idx, entry in enumerate(truth.entries):
        if entry.label not in positive_classes:
            continue
        parts = []
        ids = []
        for sw in sweeps:
            d = np.linalg.norm(np.asarray(sw.positions) - np.asarray(entry.position), axis=1)
            hit = np.flatnonzero(d <= halo_m)
            if hit.size:
                parts.append(np.asarray(sw.data)[:, hit])
                ids.append(f"{sw.sweep_id}[{hit[0]}:{hit[-1] + 1}]")
        if not parts:
            warnings.warn(f"truth entry {t_idx} at {entry.position} has no samples within "
                          f"{halo_m} m; skipped", stacklevel=2)
            continue
        bags.append(Bag(True, np.hstack(parts), f"target{t_idx}:" + ",".join(ids)))

    guard = far_factor * halo_m
    for sw, blank in [(s, False) for s in sweeps] + [(b, True) for b in blanks]:
        far = np.flatnonzero(_dist_to_truth(np.asarray(sw.positions), truth_xy) > guard)
        if far.size == 0:
            continue
        for chunk in _chunks(far, blank_bag_size if blank else None):
            tag = "blank" if blank else "far"
            bags.append(Bag(False, np.asarray(sw.data)[:, chunk],
                            f"{tag}:{sw.sweep_id}[{chunk[0]}:{chunk[-1] + 1}]"))
    return bags


class _Prepared:
    """Whitened (and, for ACE, unit-normalized) bag contents."""

    def __init__(self, bags, bg: BackgroundModel, kind: str):
        if kind not in ("smf", "ace"):
            raise ValueError(f"kind must be 'smf' or 'ace', got {kind!r}")
        pos = [b for b in bags if b.positive]
        neg = [b for b in bags if not b.positive]
        if not pos or not neg:
            raise ValueError("training needs at least one positive and one negative bag")
        self.kind = kind
        self.positives = [self._map(b.instances, bg) for b in pos]
        # the statistic is linear in each (prepared) instance, so a negative
        # bag only enters through its mean
        self.negative_mean = np.mean([self._map(b.instances, bg).mean(axis=1) for b in neg], axis=0)

    def _map(self, x, bg):
        xw = bg.whiten(x)
        if self.kind == "ace":
            n = np.linalg.norm(xw, axis=0)
            xw = np.divide(xw, n, out=np.zeros_like(xw), where=n > 0)
        return xw

    def select(self, s: np.ndarray) -> tuple[int, ...]:
        # np.argmax returns the lowest index among ties
        return tuple(int(np.argmax(s @ x)) for x in self.positives)

    def objective(self, s: np.ndarray, selection=None) -> float:
        if selection is None:
            pos = np.mean([np.max(s @ x) for x in self.positives])
        else:
            pos = np.mean([s @ x[:, i] for x, i in zip(self.positives, selection)])
        return float(pos - s @ self.negative_mean)

    def objectives(self, cands: np.ndarray) -> np.ndarray:
        """Objective for every column of a matrix of unit signatures."""
        pos = np.mean([np.max(cands.T @ x, axis=1) for x in self.positives], axis=0)
        return pos - cands.T @ self.negative_mean

    def update(self, selection) -> np.ndarray | None:
        d = np.mean([x[:, i] for x, i in zip(self.positives, selection)], axis=0) - self.negative_mean
        n = np.linalg.norm(d)
        return d / n if n > 0 else None


def _unit(s):
    s = np.asarray(s, dtype=float)
    n = np.linalg.norm(s)
    if n == 0:
        raise ValueError("signature is zero")
    return s / n


def mil_objective(s, bags, bg: BackgroundModel, kind: str) -> float:
    """Mean best-instance statistic over positive bags minus the mean
    statistic over negative bags (each bag averaged over its instances).

    ``s`` is a signature in whitened coordinates; it is normalized here.
    """
    return _Prepared(bags, bg, kind).objective(_unit(s))


@dataclass(frozen=True, eq=False)
class MilModel:
    signature: np.ndarray
    statistic_kind: str
    background: BackgroundModel
    objective_trace: tuple[float, ...] = ()
    converged: bool = True
    selection: tuple[int, ...] = field(default=())

    def __post_init__(self):
        s = _unit(self.signature)
        s.setflags(write=False)
        object.__setattr__(self, "signature", s)
        object.__setattr__(self, "objective_trace", tuple(float(v) for v in self.objective_trace))
        if self.statistic_kind not in ("smf", "ace"):
            raise ValueError("statistic_kind must be 'smf' or 'ace'")
        if s.size != self.background.dim:
            raise ValueError("signature and background dimensions differ")

    @property
    def unwhitened_signature(self) -> np.ndarray:
        """Signature ``s`` in data space with ``W s`` equal to the learned one."""
        return np.linalg.solve(self.background.whitener, self.signature)

    def score(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Statistic for each column of ``x`` and a mask of columns at the background mean."""
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        xw = self.background.whiten(x)
        stat = self.signature @ xw
        n = np.linalg.norm(xw, axis=0)
        degenerate = n == 0
        if self.statistic_kind == "ace":
            stat = np.clip(np.divide(stat, n, out=np.zeros_like(stat), where=~degenerate), -1.0, 1.0)
        return stat, degenerate

    def to_json(self) -> bytes:
        obj = {
            "signature_whitened": [float(v) for v in self.signature],
            "statistic_kind": self.statistic_kind,
            "background_hash": self.background.digest(),
            "objective_trace": list(self.objective_trace),
            "converged": self.converged,
        }
        return (json.dumps(obj, indent=2) + "\n").encode("utf-8")

    @classmethod
    def from_json(cls, source, background: BackgroundModel) -> "MilModel":
        obj = json.loads(source)
        if obj["background_hash"] != background.digest():
            raise ValueError("model was trained against a different background model")
        return cls(np.asarray(obj["signature_whitened"]), obj["statistic_kind"], background,
                   tuple(obj["objective_trace"]), bool(obj["converged"]))


def train_mi(bags, bg: BackgroundModel, kind: str = "ace", max_iters: int = 100,
             restarts: int = 0, seed: int = 0) -> MilModel:
    """Learn a single target signature by alternating optimization.

    Initialization uses the positive instance whose (normalized whitened)
    direction scores the best objective.  ``restarts`` adds random positive
    instances as extra starting points; the run with the highest final
    objective wins.  If ``max_iters`` is exhausted the best-so-far model is
    returned with ``converged=False``.
    """
    prep = _Prepared(bags, bg, kind)
    cands = np.hstack(prep.positives)
    norms = np.linalg.norm(cands, axis=0)
    usable = np.flatnonzero(norms > 0)
    if usable.size == 0:
        raise ValueError("every positive instance sits at the background mean")
    cands = cands[:, usable] / norms[usable]
    scores = prep.objectives(cands)
    starts = [int(np.argmax(scores))]
    if restarts:
        rng = np.random.default_rng(seed)
        starts += [int(i) for i in rng.choice(cands.shape[1], size=min(restarts, cands.shape[1]), replace=False)]

    best = None
    for start in starts:
        s = cands[:, start]
        sel = prep.select(s)
        trace = [prep.objective(s, sel)]
        converged = False
        for _ in range(max_iters):
            s_new = prep.update(sel)
            if s_new is None:
                converged = True
                break
            sel_new = prep.select(s_new)
            trace.append(prep.objective(s_new, sel_new))
            s = s_new
            if sel_new == sel:
                converged = True
                break
            sel = sel_new
        if not converged:
            log.warning("MI-%s training hit max_iters=%d before the candidate set settled",
                        kind.upper(), max_iters)
        if best is None or trace[-1] > best[1][-1]:
            best = (s, trace, converged, sel)
    s, trace, converged, sel = best
    return MilModel(s, kind, bg, tuple(trace), converged, sel)


def detect_with_model(x, model: MilModel) -> float:
    x = np.asarray(x, dtype=float)
    if x.shape != (model.background.dim,):
        raise ValueError(f"expected a {model.background.dim}-vector, got shape {x.shape}")
    return float(model.score(x)[0][0])


def lane_folds(lanes, k: int) -> list[tuple[tuple, tuple]]:
    """Split distinct lane ids into ``k`` contiguous folds: (train, test) pairs."""
    uniq = sorted(set(lanes))
    if not 1 <= k <= len(uniq):
        raise ValueError(f"cannot make {k} folds from {len(uniq)} lanes")
    if k == 1:
        return [(tuple(uniq), tuple(uniq))]
    groups = np.array_split(np.arange(len(uniq)), k)
    out = []
    for g in groups:
        test = tuple(uniq[i] for i in g)
        train = tuple(l for l in uniq if l not in test)
        out.append((train, test))
    return out
