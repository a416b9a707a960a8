"""Alarm generation: confidence-weighted mean-shift, then connected components."""

from __future__ import annotations

import io
import warnings
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree
from scipy.special import logsumexp

__all__ = [
    "DegenerateMapWarning",
    "MeanShiftParams",
    "Alarm",
    "MeanShiftResult",
    "shift_confidences",
    "mean_shift",
    "quantize_alarms",
    "alarm_confidence",
    "generate_alarms",
    "alarms_to_csv",
    "alarms_from_csv",
]


_BLOCK = 1024


class DegenerateMapWarning(UserWarning):
    """The confidence map carries no mode information (e.g. all values equal)."""


@dataclass(frozen=True)
class MeanShiftParams:
    """``sigma`` divides the squared distance in the kernel exponent (m^2)."""

    sigma: float = 0.075
    tau: float = 0.001
    epsilon: float = 0.01
    conf_radius: float = 0.25
    max_iters: int = 500
    weighting: str = "linear"  # or "inverse"

    def __post_init__(self):
        for name in ("sigma", "tau", "epsilon", "conf_radius", "max_iters"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0")
        if self.weighting not in ("linear", "inverse"):
            raise ValueError("weighting must be 'linear' or 'inverse'")


@dataclass(frozen=True)
class Alarm:
    position: tuple[float, float]
    confidence: float
    support_count: int

    def __post_init__(self):
        if self.support_count < 1:
            raise ValueError("an alarm needs support_count >= 1")


class MeanShiftResult(NamedTuple):
    positions: np.ndarray   # converged location for every seed
    iterations: np.ndarray
    capped: np.ndarray      # seeds that hit max_iters
    degenerate: bool        # all weights zero; inputs returned unchanged


def shift_confidences(c: np.ndarray) -> np.ndarray:
    """Make confidences non-negative by subtracting the minimum when it is negative."""
    c = np.asarray(c, dtype=float)
    m = c.min() if c.size else 0.0
    return c - m if m < 0 else c.copy()


def mean_shift(positions, confidences, params: MeanShiftParams = MeanShiftParams()) -> MeanShiftResult:
    """Move every map point uphill on the confidence-weighted RBF density.

    Each iterate becomes ``sum_i p(i|p) p_i`` with
    ``p(i|p) ~ c_i exp(-0.5 ||p - p_i||^2 / sigma)`` until the step is at most
    ``tau``.  Weights are evaluated in the log domain so far-away seeds do
    not underflow.
    """
    pts = np.asarray(positions, dtype=float).reshape(-1, 2)
    c = shift_confidences(confidences)
    if pts.shape[0] == 0:
        raise ValueError("empty confidence map")
    if c.size != pts.shape[0]:
        raise ValueError("positions and confidences differ in length")
    n = pts.shape[0]
    if not np.any(c > 0):
        return MeanShiftResult(pts.copy(), np.zeros(n, dtype=int), np.zeros(n, dtype=bool), True)

    with np.errstate(divide="ignore"):
        logc = np.log(c)
    # work relative to the centroid; UTM offsets would swamp the distances
    origin = pts.mean(axis=0)
    local = pts - origin
    sq = np.sum(local**2, axis=1)
    z = local.copy()
    iters = np.zeros(n, dtype=int)
    active = np.ones(n, dtype=bool)
    for _ in range(params.max_iters):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        for block in np.array_split(idx, max(1, idx.size // _BLOCK)):
            zi = z[block]
            d2 = np.sum(zi**2, axis=1)[:, None] + sq[None, :] - 2.0 * zi @ local.T
            logw = logc[None, :] - 0.5 * np.maximum(d2, 0.0) / params.sigma
            w = np.exp(logw - logsumexp(logw, axis=1, keepdims=True))
            new = w @ local
            step = np.linalg.norm(new - zi, axis=1)
            z[block] = new
            iters[block] += 1
            active[block[step <= params.tau]] = False
    return MeanShiftResult(z + origin, iters, active.copy(), False)


def quantize_alarms(converged, epsilon: float, weights=None) -> tuple[np.ndarray, np.ndarray]:
    """Group converged points whose epsilon-balls chain together.

    Returns ``(labels, centers)``: a component label per point (numbered in
    order of first appearance) and each component's weighted mean position.
    """
    if not epsilon > 0:
        raise ValueError("epsilon must be > 0")
    z = np.asarray(converged, dtype=float).reshape(-1, 2)
    n = z.shape[0]
    pairs = cKDTree(z).query_pairs(epsilon, output_type="ndarray")
    graph = coo_matrix((np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])), shape=(n, n))
    _, raw = connected_components(graph, directed=False)
    _, first = np.unique(raw, return_index=True)
    order = np.argsort(first)
    remap = np.empty(order.size, dtype=int)
    remap[raw[first[order]]] = np.arange(order.size)
    labels = remap[raw]
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=float)
    centers = np.empty((order.size, 2))
    for k in range(order.size):
        members = labels == k
        wk = w[members]
        centers[k] = (np.average(z[members], axis=0, weights=wk) if wk.sum() > 0
                      else z[members].mean(axis=0))
    return labels, centers


def alarm_confidence(center, positions, confidences, conf_radius: float = 0.25,
                     weighting: str = "linear") -> float | None:
    """Distance-weighted mean confidence of map points within ``conf_radius``.

    Linear weighting uses ``1 - d / conf_radius``; inverse weighting uses
    ``1 / (d + 0.01 * conf_radius)``.  Returns None for an empty neighbourhood.
    """
    pts = np.asarray(positions, dtype=float).reshape(-1, 2)
    c = np.asarray(confidences, dtype=float)
    d = np.linalg.norm(pts - np.asarray(center, dtype=float), axis=1)
    inside = d <= conf_radius
    if not np.any(inside):
        return None
    if weighting == "linear":
        w = np.clip(1.0 - d[inside] / conf_radius, 0.0, None)
    else:
        w = 1.0 / (d[inside] + 0.01 * conf_radius)
    if w.sum() <= 0:
        # every neighbour sits exactly on the boundary
        return float(c[inside].mean())
    return float(np.average(c[inside], weights=w))


def generate_alarms(conf_map, params: MeanShiftParams = MeanShiftParams()) -> list[Alarm]:
    """Mean-shift, connected components and distance-weighted confidence.

    Alarms are sorted by descending confidence.  Maps whose confidences are
    all equal (or all non-positive after shifting) trigger a
    DegenerateMapWarning.
    """
    pts = np.asarray(conf_map.positions, dtype=float)
    c = np.asarray(conf_map.confidences, dtype=float)
    if c.size >= 2 and np.ptp(c) == 0:
        warnings.warn("confidence map is uniform; alarms carry no mode information",
                      DegenerateMapWarning, stacklevel=2)
    ms = mean_shift(pts, c, params)
    if ms.degenerate:
        warnings.warn("confidence map has no positive weight; mean-shift skipped",
                      DegenerateMapWarning, stacklevel=2)
    if np.any(ms.capped):
        warnings.warn(f"{int(ms.capped.sum())} mean-shift seeds hit max_iters", RuntimeWarning, stacklevel=2)
    labels, centers = quantize_alarms(ms.positions, params.epsilon, shift_confidences(c))
    alarms = []
    dropped = 0
    for k, center in enumerate(centers):
        conf = alarm_confidence(center, pts, c, params.conf_radius, params.weighting)
        if conf is None:
            dropped += 1
            continue
        alarms.append(Alarm((float(center[0]), float(center[1])), conf, int(np.sum(labels == k))))
    if dropped:
        warnings.warn(f"{dropped} alarms had no map points within {params.conf_radius} m and were dropped",
                      RuntimeWarning, stacklevel=2)
    alarms.sort(key=lambda a: (-a.confidence, a.position))
    return alarms


def alarms_to_csv(alarms) -> bytes:
    buf = io.StringIO()
    buf.write("easting,northing,confidence,support_count\n")
    for a in alarms:
        buf.write(f"{a.position[0]!r},{a.position[1]!r},{float(a.confidence)!r},{int(a.support_count)}\n")
    return buf.getvalue().encode("utf-8")


def alarms_from_csv(source) -> list[Alarm]:
    text = source.decode("utf-8") if isinstance(source, (bytes, bytearray)) else source
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or lines[0].strip() != "easting,northing,confidence,support_count":
        raise ValueError("alarm CSV header must be 'easting,northing,confidence,support_count'")
    out = []
    for ln in lines[1:]:
        e, n, c, k = ln.split(",")
        out.append(Alarm((float(e), float(n)), float(c), int(k)))
    return out
