"""Untrained prescreeners: magnitude, SMF, ACE and two-tap JOMP.

SMF and ACE are evaluated against every dictionary atom and the maximum is
kept.  Both use a global background model (mean, regularized covariance,
whitening transform) estimated in one pass from blank data.
"""

from __future__ import annotations

import hashlib
import io
import json
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .filters import FeatureMap, Preprocessing, preprocess, project_atoms, window_features
from .measurement import ComplexSweep, RealSweep, stack_real

__all__ = [
    "STATISTIC_KINDS",
    "BackgroundModel",
    "fit_background",
    "smf",
    "ace",
    "magnitude",
    "MPResult",
    "matching_pursuit",
    "joint_pursuit_residuals",
    "jomp_confidence",
    "jomp_map",
    "statistic_map",
    "dict_max_statistic",
    "ConfidenceMap",
    "PrescreenerConfig",
    "detector_features",
    "run_prescreener",
    "score_features",
]

STATISTIC_KINDS = ("magnitude", "smf", "ace", "jomp", "mi_smf", "mi_ace")


@dataclass(frozen=True, eq=False)
class BackgroundModel:
    mu: np.ndarray
    sigma: np.ndarray
    sigma_inv: np.ndarray
    whitener: np.ndarray
    regularization: float

    @property
    def dim(self) -> int:
        return self.mu.size

    def whiten(self, x: np.ndarray) -> np.ndarray:
        """``W (x - mu)`` for a vector or for the columns of a matrix."""
        x = np.asarray(x, dtype=float)
        if x.shape[0] != self.dim:
            raise ValueError(f"dimension mismatch: background is {self.dim}-D, data is {x.shape[0]}-D")
        if x.ndim == 1:
            return self.whitener @ (x - self.mu)
        return self.whitener @ (x - self.mu[:, None])

    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.mu, dtype="<f8").tobytes())
        h.update(np.ascontiguousarray(self.sigma, dtype="<f8").tobytes())
        return h.hexdigest()[:16]


def fit_background(samples: np.ndarray, epsilon: float | None = None) -> BackgroundModel:
    """Global background statistics from an M x B matrix of samples.

    ``epsilon`` is added to the covariance diagonal; by default it is
    ``1e-6 * trace(cov) / M``.  The whitener is ``D^{-1/2} U^T`` from the
    eigendecomposition ``cov = U D U^T``.
    """
    x = np.asarray(samples, dtype=float)
    if x.ndim != 2 or x.shape[1] < 2:
        raise ValueError("need an M x B sample matrix with B >= 2")
    m = x.shape[0]
    mu = x.mean(axis=1)
    centered = x - mu[:, None]
    cov = centered @ centered.T / (x.shape[1] - 1)
    if epsilon is None:
        epsilon = 1e-6 * np.trace(cov) / m
    sigma = cov + epsilon * np.eye(m)
    sigma = 0.5 * (sigma + sigma.T)
    evals, evecs = np.linalg.eigh(sigma)
    if not evals[0] > 0 or not np.all(np.isfinite(evals)):
        raise ValueError("background covariance is not positive definite after regularization")
    whitener = (evecs / np.sqrt(evals)).T
    sigma_inv = (evecs / evals) @ evecs.T
    sigma_inv = 0.5 * (sigma_inv + sigma_inv.T)
    for a in (mu, sigma, sigma_inv, whitener):
        a.setflags(write=False)
    return BackgroundModel(mu, sigma, sigma_inv, whitener, float(epsilon))


def smf(x, s, bg: BackgroundModel) -> float:
    """Spectral matched filter ``s^T S^-1 (x - mu) / sqrt(s^T S^-1 s)``."""
    x = np.asarray(x, dtype=float)
    s = np.asarray(s, dtype=float)
    if not np.any(s):
        raise ValueError("target signature is zero")
    si = bg.sigma_inv @ s
    return float(si @ (x - bg.mu) / np.sqrt(s @ si))


def ace(x, s, bg: BackgroundModel) -> float:
    """Adaptive cosine estimator; whitened cosine in [-1, 1].

    Returns 0 when ``x`` equals the background mean.
    """
    x = np.asarray(x, dtype=float)
    s = np.asarray(s, dtype=float)
    if not np.any(s):
        raise ValueError("target signature is zero")
    d = x - bg.mu
    si = bg.sigma_inv @ s
    xx = d @ bg.sigma_inv @ d
    if xx <= 0:
        return 0.0
    val = si @ d / (np.sqrt(s @ si) * np.sqrt(xx))
    return float(np.clip(val, -1.0, 1.0))


def magnitude(x) -> float:
    return float(np.linalg.norm(x))


def _atoms(dictionary) -> np.ndarray:
    a = np.asarray(getattr(dictionary, "atoms_real", dictionary), dtype=float)
    if a.ndim == 1:
        a = a[:, None]
    return a


class MPResult(NamedTuple):
    indices: np.ndarray
    weights: np.ndarray
    residual: np.ndarray
    residual_norms: np.ndarray


def matching_pursuit(x, dictionary, p: int) -> MPResult:
    """Greedy matching pursuit with ``p`` iterations over unit-norm atoms.

    ``residual_norms[i]`` is the norm of the residual after i selections,
    so ``residual_norms[0] == ||x||``.
    """
    a = _atoms(dictionary)
    if not 1 <= p <= a.shape[1]:
        raise ValueError(f"p must lie in [1, {a.shape[1]}]")
    r = np.array(x, dtype=float)
    idx = np.empty(p, dtype=int)
    w = np.empty(p)
    norms = [np.linalg.norm(r)]
    for i in range(p):
        g = a.T @ r
        k = int(np.argmax(np.abs(g)))
        idx[i], w[i] = k, g[k]
        r = r - g[k] * a[:, k]
        norms.append(np.linalg.norm(r))
    return MPResult(idx, w, r, np.asarray(norms))


def joint_pursuit_residuals(x1: np.ndarray, x2: np.ndarray, dictionary, p: int,
                            orthogonal: bool = False) -> tuple[np.ndarray, np.ndarray]:
    """Squared residual norms after ``p`` jointly selected atoms.

    ``x1`` and ``x2`` are M x C (or M-vectors).  At each step the atom
    maximizing ``|<r1, g>| + |<r2, g>|`` is taken for both signals; each
    signal keeps its own weight.  ``orthogonal=True`` refits both signals by
    least squares on the selected atoms after every step.
    """
    a = _atoms(dictionary)
    if not 1 <= p <= a.shape[1]:
        raise ValueError(f"p must lie in [1, {a.shape[1]}]")
    x1 = np.asarray(x1, dtype=float)
    x2 = np.asarray(x2, dtype=float)
    vec = x1.ndim == 1
    x1 = x1.reshape(x1.shape[0], -1)
    x2 = x2.reshape(x2.shape[0], -1)
    r1, r2 = x1.copy(), x2.copy()
    cols = np.arange(x1.shape[1])
    chosen = np.empty((p, x1.shape[1]), dtype=int)
    for step in range(p):
        g1 = a.T @ r1
        g2 = a.T @ r2
        k = np.argmax(np.abs(g1) + np.abs(g2), axis=0)
        chosen[step] = k
        if orthogonal:
            for c in cols:
                sub = a[:, chosen[: step + 1, c]]
                coef, *_ = np.linalg.lstsq(sub, np.column_stack([x1[:, c], x2[:, c]]), rcond=None)
                fit = sub @ coef
                r1[:, c] = x1[:, c] - fit[:, 0]
                r2[:, c] = x2[:, c] - fit[:, 1]
        else:
            r1 -= a[:, k] * g1[k, cols]
            r2 -= a[:, k] * g2[k, cols]
    e1 = np.sum(r1 * r1, axis=0)
    e2 = np.sum(r2 * r2, axis=0)
    return (e1[0], e2[0]) if vec else (e1, e2)


def _unit_columns(x: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(x, axis=0)
    return np.divide(x, n, out=np.zeros_like(x), where=n > 0)


def jomp_map(data: np.ndarray, ell: int, p: int, dictionary, orthogonal: bool = False,
             normalize: bool = True) -> np.ndarray:
    """Two-tap JOMP confidence ``1 / (1 + (r_- + r_+) / 2)`` for every column.

    Columns closer than ``ell`` to either end reuse the nearest valid tap
    pair.  With ``normalize`` each tap is scaled to unit norm before the
    pursuit, which bounds the confidence to [0.5, 1].
    """
    data = np.asarray(data, dtype=float)
    n = data.shape[1]
    if ell < 1:
        raise ValueError("tap offset ell must be >= 1")
    if n < 2 * ell + 1:
        raise ValueError(f"sweep of {n} positions is too short for taps at +/-{ell}")
    centers = np.arange(ell, n - ell)
    x1 = data[:, centers - ell]
    x2 = data[:, centers + ell]
    if normalize:
        x1, x2 = _unit_columns(x1), _unit_columns(x2)
    e1, e2 = joint_pursuit_residuals(x1, x2, dictionary, p, orthogonal)
    conf = 1.0 / (1.0 + 0.5 * (e1 + e2))
    return conf[np.clip(np.arange(n), ell, n - 1 - ell) - ell]


def jomp_confidence(sweep, i: int, ell: int, p: int, dictionary, orthogonal: bool = False,
                    normalize: bool = True) -> float:
    """JOMP confidence for position ``i`` using taps ``i - ell`` and ``i + ell``."""
    data = np.asarray(getattr(sweep, "data", sweep), dtype=float)
    n = data.shape[1]
    if i - ell < 0 or i + ell >= n:
        raise IndexError(f"taps {i - ell}, {i + ell} fall outside [0, {n - 1}]")
    x1, x2 = data[:, i - ell], data[:, i + ell]
    if normalize:
        x1, x2 = _unit_columns(x1[:, None])[:, 0], _unit_columns(x2[:, None])[:, 0]
    e1, e2 = joint_pursuit_residuals(x1, x2, dictionary, p, orthogonal)
    return float(1.0 / (1.0 + 0.5 * (e1 + e2)))


def statistic_map(x: np.ndarray, dictionary, bg: BackgroundModel, kind: str,
                  ) -> tuple[np.ndarray, np.ndarray]:
    """Max-over-atoms SMF or ACE for every column of ``x``.

    Returns the statistics and a mask of columns equal to the background
    mean (ACE is set to 0 there).
    """
    if kind not in ("smf", "ace"):
        raise ValueError(f"kind must be 'smf' or 'ace', got {kind!r}")
    a = _atoms(dictionary)
    if a.shape[1] == 0:
        raise ValueError("dictionary is empty")
    x = np.asarray(x, dtype=float)
    xw = bg.whiten(x if x.ndim == 2 else x[:, None])
    sw = bg.whitener @ a
    snorm = np.linalg.norm(sw, axis=0)
    if np.any(snorm == 0):
        raise ValueError("target signature is zero")
    stat = (sw / snorm).T @ xw
    xnorm = np.linalg.norm(xw, axis=0)
    degenerate = xnorm == 0
    if kind == "ace":
        stat = np.clip(np.divide(stat, xnorm, out=np.zeros_like(stat), where=~degenerate), -1.0, 1.0)
    return stat.max(axis=0), degenerate


def dict_max_statistic(x, dictionary, bg: BackgroundModel, kind: str) -> float:
    vals, _ = statistic_map(np.asarray(x, dtype=float)[:, None], dictionary, bg, kind)
    return float(vals[0])


@dataclass(frozen=True, eq=False)
class ConfidenceMap:
    positions: np.ndarray
    confidences: np.ndarray
    statistic_kind: str
    flags: np.ndarray = field(default=None)
    sweep_id: str = ""

    def __post_init__(self):
        if self.statistic_kind not in STATISTIC_KINDS:
            raise ValueError(f"unknown statistic kind {self.statistic_kind!r}")
        p = np.asarray(self.positions, dtype=float).reshape(-1, 2)
        c = np.asarray(self.confidences, dtype=float).ravel()
        if p.shape[0] != c.size:
            raise ValueError("positions and confidences differ in length")
        f = np.zeros(c.size, dtype=bool) if self.flags is None else np.asarray(self.flags, dtype=bool)
        for name, a in (("positions", p), ("confidences", c), ("flags", f)):
            a.setflags(write=False)
            object.__setattr__(self, name, a)

    def __len__(self):
        return self.confidences.size

    def to_csv(self) -> bytes:
        buf = io.StringIO()
        buf.write("easting,northing,confidence\n")
        for (e, n), c in zip(self.positions, self.confidences):
            buf.write(f"{float(e)!r},{float(n)!r},{float(c)!r}\n")
        return buf.getvalue().encode("utf-8")

    def metadata(self, config_hash: str = "") -> bytes:
        meta = {
            "statistic_kind": self.statistic_kind,
            "config_hash": config_hash,
            "sweep_id": self.sweep_id,
            "flagged_indices": [int(i) for i in np.flatnonzero(self.flags)],
        }
        return (json.dumps(meta, indent=2, sort_keys=True) + "\n").encode("utf-8")

    @classmethod
    def from_csv(cls, source, statistic_kind: str, sweep_id: str = "") -> "ConfidenceMap":
        text = source.decode("utf-8") if isinstance(source, (bytes, bytearray)) else source
        lines = [ln for ln in text.splitlines() if ln.strip()]
        if not lines or lines[0].strip() != "easting,northing,confidence":
            raise ValueError("confidence CSV header must be 'easting,northing,confidence'")
        rows = np.array([[float(v) for v in ln.split(",")] for ln in lines[1:]]).reshape(-1, 3)
        return cls(rows[:, :2], rows[:, 2], statistic_kind, None, sweep_id)


@dataclass(frozen=True, eq=False)
class PrescreenerConfig:
    """Everything a prescreener needs besides the sweep itself.

    ``dictionary`` is required for smf/ace/jomp, ``background`` for smf/ace
    (fit on blank data preprocessed the same way), and ``model`` (a trained
    MilModel) for the mi_* kinds.
    """

    kind: str
    preprocessing: Preprocessing = Preprocessing()
    dictionary: object = None
    background: BackgroundModel | None = None
    model: object = None
    ell: int = 2
    p: int = 3
    orthogonal: bool = False
    normalize_taps: bool = True

    def __post_init__(self):
        if self.kind not in STATISTIC_KINDS:
            raise ValueError(f"unknown detector kind {self.kind!r}")


def detector_features(sweep: RealSweep, config: PrescreenerConfig) -> FeatureMap:
    """Preprocessed per-position vectors the configured detector consumes."""
    prep = config.preprocessing
    if config.kind in ("mi_smf", "mi_ace") and prep.mode == "dct+soil_projection":
        return window_features(sweep, prep)
    return preprocess(sweep, prep)


def run_prescreener(sweep: RealSweep | ComplexSweep, config: PrescreenerConfig) -> ConfidenceMap:
    """Preprocess ``sweep`` and assign one confidence per position."""
    if isinstance(sweep, ComplexSweep):
        sweep = stack_real(sweep)
    kind = config.kind
    if kind in ("smf", "ace", "jomp") and config.dictionary is None:
        raise ValueError(f"detector {kind!r} requires a dictionary")
    if kind in ("smf", "ace") and config.background is None:
        raise ValueError(f"detector {kind!r} requires a fitted background model")
    if kind in ("mi_smf", "mi_ace") and config.model is None:
        raise ValueError(f"detector {kind!r} requires a trained model")

    return score_features(detector_features(sweep, config), config)


def score_features(fm: FeatureMap, config: PrescreenerConfig) -> ConfidenceMap:
    """Assign one confidence per column of already-preprocessed features."""
    kind = config.kind
    prep = config.preprocessing
    x = fm.data
    flags = np.asarray(fm.flags).copy()
    atoms = None
    if config.dictionary is not None and kind in ("smf", "ace", "jomp"):
        atoms = _atoms(config.dictionary)
        if prep.mode == "dct+soil_projection" and atoms.shape[0] != x.shape[0]:
            atoms = project_atoms(atoms, prep.soil)
        if atoms.shape[0] != x.shape[0]:
            raise ValueError(f"dictionary atoms have {atoms.shape[0]} rows but features have {x.shape[0]}")

    if kind == "magnitude":
        conf = np.linalg.norm(x, axis=0)
    elif kind in ("smf", "ace"):
        if config.background.dim != x.shape[0]:
            raise ValueError(f"background model is {config.background.dim}-dimensional, features are {x.shape[0]}")
        conf, degenerate = statistic_map(x, atoms, config.background, kind)
        flags |= degenerate
    elif kind == "jomp":
        conf = jomp_map(x, config.ell, config.p, atoms, config.orthogonal, config.normalize_taps)
        flags |= np.linalg.norm(x, axis=0) == 0
    else:
        expected = "smf" if kind == "mi_smf" else "ace"
        if config.model.statistic_kind != expected:
            raise ValueError(f"model statistic {config.model.statistic_kind!r} does not match {kind!r}")
        if config.model.background.dim != x.shape[0]:
            raise ValueError(f"model is {config.model.background.dim}-dimensional, features are {x.shape[0]}")
        conf, degenerate = config.model.score(x)
        flags |= degenerate
    return ConfidenceMap(fm.positions, conf, kind, flags, fm.sweep_id)
