"""Interference removal and windowed SVD features.

Self-response removal projects each frequency row onto a band of DCT-II
spatial frequencies that excludes DC.  Soil removal projects each column
onto the part of the DSRF span that is orthogonal to the two-dimensional
soil subspace.  Both can be combined on sliding windows, whose leading
left singular vectors make the per-position features.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.fft

from .dsrf import DsrfDictionary, stack_columns
from .measurement import RealSweep
from .synthgen import soil_basis

__all__ = [
    "dct_basis",
    "default_band",
    "DowntrackProjector",
    "make_downtrack_projector",
    "apply_downtrack",
    "SoilProjector",
    "make_soil_projector",
    "project_atoms",
    "apply_joint_projection",
    "WindowSpec",
    "svd_features",
    "FeatureMap",
    "sweep_to_features",
    "Preprocessing",
    "preprocess",
    "window_features",
    "feature_map_to_csv",
    "feature_map_from_csv",
]


def dct_basis(n: int) -> np.ndarray:
    """Orthonormal DCT-II basis; column k is the k-th cosine (column 0 is DC)."""
    if n < 2:
        raise ValueError("DCT basis needs n >= 2")
    # scipy's dct applied to the identity gives the analysis matrix C (rows = basis)
    return scipy.fft.dct(np.eye(n), norm="ortho", axis=0).T


def default_band(n: int, fraction: float = 0.5) -> tuple[int, ...]:
    """Indices 1..ceil(fraction * n): drops DC and the top spatial frequencies."""
    hi = min(n - 1, int(math.ceil(fraction * n)))
    return tuple(range(1, hi + 1))


@dataclass(frozen=True, eq=False)
class DowntrackProjector:
    n: int
    kept_band: tuple[int, ...]
    projector: np.ndarray

    @property
    def rank(self) -> int:
        return len(self.kept_band)


def make_downtrack_projector(n: int, kept_band=None, allow_dc: bool = False) -> DowntrackProjector:
    """Symmetric projector ``D I_S D^T`` onto the kept cosine band."""
    band = default_band(n) if kept_band is None else tuple(sorted({int(k) for k in kept_band}))
    if not band:
        raise ValueError("kept band is empty")
    if band[0] < 0 or band[-1] >= n:
        raise ValueError(f"kept band indices must lie in [0, {n - 1}]")
    if 0 in band and not allow_dc:
        raise ValueError("kept band includes DC (index 0); pass allow_dc=True to keep it")
    d = dct_basis(n)[:, list(band)]
    p = d @ d.T
    p = 0.5 * (p + p.T)
    p.setflags(write=False)
    return DowntrackProjector(n, band, p)


def _subtract_mean(data: np.ndarray, k: int, mean_rows: str) -> np.ndarray:
    if mean_rows == "none":
        return data
    rows = slice(0, k) if mean_rows == "real" else slice(None)
    if mean_rows not in ("real", "all"):
        raise ValueError(f"mean_rows must be 'real', 'all' or 'none', got {mean_rows!r}")
    out = data.copy()
    out[rows] -= out[rows].mean(axis=1, keepdims=True)
    return out


def apply_downtrack(sweep: RealSweep, proj: DowntrackProjector, mean_rows: str = "real") -> RealSweep:
    """Filter every frequency row with ``proj`` then remove the across-position mean.

    ``mean_rows='real'`` subtracts the mean column over the real block only;
    ``'all'`` does every row and ``'none'`` skips the step.
    """
    if proj.n != sweep.path.n:
        raise ValueError(f"projector size {proj.n} != sweep length {sweep.path.n}")
    data = sweep.data @ proj.projector
    return sweep.with_data(_subtract_mean(data, sweep.grid.k, mean_rows))


@dataclass(frozen=True, eq=False)
class SoilProjector:
    """Orthonormal split of R^{2K} into DSRF-signal, DSRF-noise and soil blocks.

    ``u_signal`` spans the soil-orthogonal part of the dictionary whose
    singular values reach ``snr_threshold``; ``u_noise`` completes the
    soil-orthogonal complement; ``u_soil`` spans the real-stacked soil basis.
    """

    psi: np.ndarray
    u_signal: np.ndarray
    u_noise: np.ndarray
    u_soil: np.ndarray
    singular_values: np.ndarray
    snr_threshold: float

    @property
    def basis(self) -> np.ndarray:
        return np.hstack([self.u_signal, self.u_noise, self.u_soil])

    @property
    def transform(self) -> np.ndarray:
        """Full orthogonal map; rows ordered signal, noise, soil."""
        return self.basis.T

    @property
    def signal_projector(self) -> np.ndarray:
        """The signal block of the transform, r x 2K."""
        return self.u_signal.T

    @property
    def soil_projector(self) -> np.ndarray:
        """``Psi (Psi^T Psi)^-1 Psi^T``."""
        return self.u_soil @ self.u_soil.T

    @property
    def rank(self) -> int:
        return self.u_signal.shape[1]


def make_soil_projector(dictionary: DsrfDictionary, psi_hat=None, lambda_threshold=None,
                        lambda_rel: float = 1e-6) -> SoilProjector:
    """Build the soil-removal transform from a DSRF dictionary.

    The real-stacked soil basis Psi defines the soil projector; the
    dictionary atoms are projected onto the orthogonal complement and
    decomposed by SVD.  Left singular vectors whose singular value is at
    least ``lambda_threshold`` (default ``lambda_rel`` times the largest)
    form the signal block, the remainder of the complement the noise block.
    """
    if psi_hat is None:
        psi_hat = soil_basis(dictionary.grid)
    psi = stack_columns(np.asarray(psi_hat, dtype=complex))
    m = psi.shape[0]
    if dictionary.atoms_real.shape[0] != m:
        raise ValueError("soil basis and dictionary disagree on 2K")
    sv = np.linalg.svd(psi, compute_uv=False)
    if sv.size < 2 or sv[-1] <= 1e-12 * sv[0]:
        raise ValueError("soil basis Psi is rank deficient")
    q, _ = np.linalg.qr(psi, mode="complete")
    u_soil, q_perp = q[:, :2], q[:, 2:]

    coeffs = q_perp.T @ dictionary.atoms_real
    u, s, _ = np.linalg.svd(coeffs, full_matrices=True)
    s_full = np.zeros(q_perp.shape[1])
    s_full[: s.size] = s
    if lambda_threshold is None:
        lambda_threshold = lambda_rel * (s_full[0] if s_full.size else 0.0)
    if not lambda_threshold > 0:
        raise ValueError("lambda threshold must be > 0")
    r = int(np.sum(s_full >= lambda_threshold))
    u_perp = q_perp @ u
    out = [u_perp[:, :r], u_perp[:, r:], u_soil, s_full]
    for a in out:
        a.setflags(write=False)
    psi.setflags(write=False)
    return SoilProjector(psi, out[0], out[1], out[2], out[3], float(lambda_threshold))


def project_atoms(atoms, soil: SoilProjector) -> np.ndarray:
    """Map atoms into soil-signal coordinates and renormalize them."""
    atoms = getattr(atoms, "atoms_real", atoms)
    proj = soil.signal_projector @ atoms
    norms = np.linalg.norm(proj, axis=0)
    if np.any(norms <= 1e-12):
        raise ValueError("an atom lies entirely inside the soil/noise subspace")
    return proj / norms


def apply_joint_projection(window: np.ndarray, soil: SoilProjector, down: DowntrackProjector) -> np.ndarray:
    """``P_GS M P_R^T`` for one 2K x W window: soil-free, self-response-free block."""
    window = np.asarray(window, dtype=float)
    if window.shape != (soil.psi.shape[0], down.n):
        raise ValueError(
            f"window shape {window.shape} incompatible with 2K={soil.psi.shape[0]}, W={down.n}"
        )
    return soil.signal_projector @ window @ down.projector.T


@dataclass(frozen=True)
class WindowSpec:
    width: int = 11
    stride: int = 1
    n_singular_vectors: int = 3
    ratio_power: float = 0.5  # 0.5: sqrt(sigma_i / sigma_1); 1.0: plain ratio

    def __post_init__(self):
        if self.width < 3 or self.width % 2 == 0:
            raise ValueError("window width must be an odd count >= 3")
        if self.stride < 1:
            raise ValueError("stride must be >= 1")
        if self.n_singular_vectors < 1:
            raise ValueError("n_singular_vectors must be >= 1")


def _canonical_signs(u: np.ndarray) -> np.ndarray:
    idx = np.argmax(np.abs(u), axis=0)
    signs = np.sign(u[idx, np.arange(u.shape[1])])
    signs[signs == 0] = 1.0
    return u * signs


def svd_features(window: np.ndarray, spec: WindowSpec = WindowSpec()) -> np.ndarray:
    """Concatenate the leading left singular vectors, each scaled by
    ``(sigma_i / sigma_1) ** spec.ratio_power``.

    Singular vectors are sign-canonicalized (largest-magnitude entry
    positive).  An all-zero window yields the zero vector.
    """
    window = np.asarray(window, dtype=float)
    rows = window.shape[0]
    n = spec.n_singular_vectors
    out = np.zeros((rows, n))
    u, s, _ = np.linalg.svd(window, full_matrices=False)
    if s.size == 0 or s[0] <= 0:
        return out.ravel(order="F")
    take = min(n, s.size)
    u = _canonical_signs(u[:, :take])
    scale = (s[:take] / s[0]) ** spec.ratio_power
    # singular values at round-off level carry arbitrary directions
    scale[s[:take] <= s[0] * 1e-12] = 0.0
    out[:, :take] = u * scale
    return out.ravel(order="F")


@dataclass(frozen=True, eq=False)
class FeatureMap:
    """Per-position feature vectors: ``data`` is D x C, one column per position."""

    positions: np.ndarray
    data: np.ndarray
    flags: np.ndarray = field(default=None)
    sweep_id: str = ""

    def __post_init__(self):
        p = np.asarray(self.positions, dtype=float).reshape(-1, 2)
        d = np.asarray(self.data, dtype=float)
        if d.ndim != 2 or d.shape[1] != p.shape[0]:
            raise ValueError(f"feature data shape {d.shape} does not match {p.shape[0]} positions")
        f = np.zeros(p.shape[0], dtype=bool) if self.flags is None else np.asarray(self.flags, dtype=bool)
        for name, a in (("positions", p), ("data", d), ("flags", f)):
            a.setflags(write=False)
            object.__setattr__(self, name, a)

    @property
    def dim(self) -> int:
        return self.data.shape[0]

    def __len__(self):
        return self.positions.shape[0]


def _window_centers(n: int, width: int, stride: int, edge: str) -> np.ndarray:
    half = width // 2
    if edge == "valid":
        if n < width:
            raise ValueError(f"sweep of {n} positions is shorter than the {width}-wide window")
        return np.arange(half, n - half, stride)
    if edge == "mirror":
        if n < half + 1:
            raise ValueError(f"sweep of {n} positions is too short to mirror a {width}-wide window")
        return np.arange(0, n, stride)
    raise ValueError(f"edge must be 'valid' or 'mirror', got {edge!r}")


def sweep_to_features(sweep: RealSweep, soil: SoilProjector, down: DowntrackProjector | None = None,
                      spec: WindowSpec = WindowSpec(), edge: str = "valid") -> FeatureMap:
    """Windowed soil/self-response projection followed by SVD features.

    ``edge='valid'`` places centers only where a full window fits;
    ``edge='mirror'`` mirror-pads the sweep so every stride-th position is a
    center.  All-zero projected windows are flagged.
    """
    w = spec.width
    if down is None:
        down = make_downtrack_projector(w)
    if down.n != w:
        raise ValueError("downtrack projector size must equal the window width")
    n = sweep.path.n
    centers = _window_centers(n, w, spec.stride, edge)
    half = w // 2
    data = sweep.data
    if edge == "mirror":
        data = np.pad(data, ((0, 0), (half, half)), mode="symmetric")
        offset = half
    else:
        offset = 0
    feats = np.empty((spec.n_singular_vectors * soil.rank, centers.size))
    flags = np.zeros(centers.size, dtype=bool)
    for c, j in enumerate(centers):
        lo = j + offset - half
        block = apply_joint_projection(data[:, lo: lo + w], soil, down)
        if not np.any(block):
            flags[c] = True
        feats[:, c] = svd_features(block, spec)
    return FeatureMap(sweep.positions[centers], feats, flags, sweep.sweep_id)


@dataclass(frozen=True, eq=False)
class Preprocessing:
    """Column preprocessing applied before the prescreeners.

    ``mode='dct'`` returns the downtrack-filtered 2K-row columns.
    ``mode='dct+soil_projection'`` additionally maps each filtered column into
    the soil-free signal coordinates (``soil`` required).
    """

    mode: str = "dct"
    kept_band: tuple[int, ...] | None = None
    band_fraction: float = 0.5
    mean_rows: str = "real"
    soil: SoilProjector | None = None
    window: WindowSpec = WindowSpec()

    def __post_init__(self):
        if self.mode not in ("dct", "dct+soil_projection"):
            raise ValueError(f"unknown preprocessing mode {self.mode!r}")
        if self.mode == "dct+soil_projection" and self.soil is None:
            raise ValueError("soil projection preprocessing needs a SoilProjector")


def _downtrack_for(n: int, prep: Preprocessing) -> DowntrackProjector:
    band = prep.kept_band if prep.kept_band is not None else default_band(n, prep.band_fraction)
    return make_downtrack_projector(n, band)


def preprocess(sweep: RealSweep, prep: Preprocessing = Preprocessing()) -> FeatureMap:
    filtered = apply_downtrack(sweep, _downtrack_for(sweep.path.n, prep), prep.mean_rows)
    data = filtered.data
    if prep.mode == "dct+soil_projection":
        data = prep.soil.signal_projector @ data
    return FeatureMap(sweep.positions, data, None, sweep.sweep_id)


def window_features(sweep: RealSweep, prep: Preprocessing) -> FeatureMap:
    """One SVD feature vector per position (mirror-padded windows)."""
    if prep.soil is None:
        raise ValueError("windowed SVD features need a SoilProjector")
    w = prep.window.width
    down = make_downtrack_projector(w, default_band(w, prep.band_fraction))
    spec = WindowSpec(w, 1, prep.window.n_singular_vectors, prep.window.ratio_power)
    return sweep_to_features(sweep, prep.soil, down, spec, edge="mirror")


def feature_map_to_csv(fm: FeatureMap, value_names=None) -> bytes:
    """``easting,northing,f_1,...,f_D`` (or custom value column names)."""
    names = value_names or [f"f_{i}" for i in range(1, fm.dim + 1)]
    if len(names) != fm.dim:
        raise ValueError("value_names length must equal the feature dimension")
    buf = io.StringIO()
    buf.write(",".join(["easting", "northing", *names]) + "\n")
    for j in range(len(fm)):
        vals = [fm.positions[j, 0], fm.positions[j, 1], *fm.data[:, j]]
        buf.write(",".join(repr(float(v)) for v in vals) + "\n")
    return buf.getvalue().encode("utf-8")


def feature_map_from_csv(source, sweep_id: str = "") -> FeatureMap:
    text = source.decode("utf-8") if isinstance(source, (bytes, bytearray)) else source
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise ValueError("empty feature CSV")
    header = lines[0].split(",")
    if header[:2] != ["easting", "northing"]:
        raise ValueError("feature CSV must start with 'easting,northing'")
    rows = np.array([[float(v) for v in ln.split(",")] for ln in lines[1:]], dtype=float)
    rows = rows.reshape(-1, len(header))
    if not np.all(np.isfinite(rows)):
        raise ValueError("non-finite value in feature CSV")
    return FeatureMap(rows[:, :2], rows[:, 2:].T, None, sweep_id)
