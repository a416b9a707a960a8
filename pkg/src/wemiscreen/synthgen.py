"""Synthetic WEMI sweeps from the four-component measurement model.

Each column is the superposition of buried-target responses, a soil response
living in the two-dimensional soil subspace, a position-independent sensor
self-response, and i.i.d. Gaussian noise.  Sites are laid out as lanes of
square grid cells, each swept with a sinusoidal path, plus blank collections
between the cells.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import gaussian_filter1d

from ._rng import derive_seed, stream
from .dsrf import stack_columns
from .measurement import ComplexSweep, FrequencyGrid, SweepPath

__all__ = [
    "CLASS_LABELS",
    "CLASS_AMPLITUDE",
    "TargetSpec",
    "SoilComponent",
    "SoilSpec",
    "SceneSpec",
    "TruthEntry",
    "GroundTruthTable",
    "sinusoidal_path",
    "soil_basis",
    "simulate",
    "blank_collection",
    "SiteSpec",
    "Collection",
    "Site",
    "make_site",
]

CLASS_LABELS = ("MT", "LMT", "NMT", "CL")
# multiples of SiteSpec.amplitude_base
CLASS_AMPLITUDE = {"MT": 10.0, "LMT": 1.0, "NMT": 0.1, "CL": 1.0}
DEFAULT_HALO_M = 0.25


@dataclass(frozen=True)
class TargetSpec:
    center: tuple[float, float]
    zetas: tuple[float, ...]
    mix_weights: tuple[float, ...]
    amplitude: float
    spatial_sigma: float
    label: str = "MT"
    halo_m: float = DEFAULT_HALO_M

    def __post_init__(self):
        object.__setattr__(self, "center", tuple(float(v) for v in self.center))
        object.__setattr__(self, "zetas", tuple(float(v) for v in self.zetas))
        object.__setattr__(self, "mix_weights", tuple(float(v) for v in self.mix_weights))
        if len(self.zetas) != len(self.mix_weights) or not self.zetas:
            raise ValueError("zetas and mix_weights must be non-empty and equally long")
        if any(z <= 0 for z in self.zetas):
            raise ValueError("relaxation frequencies must be positive")
        if not self.amplitude > 0:
            raise ValueError("amplitude must be > 0")
        if not self.spatial_sigma > 0:
            raise ValueError("spatial_sigma must be > 0")
        if self.label not in CLASS_LABELS:
            raise ValueError(f"unknown class label {self.label!r}")
        if not self.halo_m > 0:
            raise ValueError("halo radius must be > 0")

    def spectrum(self, grid: FrequencyGrid) -> np.ndarray:
        """Complex K-vector: weighted sum of unnormalized relaxation atoms."""
        jw = 1j * grid.omegas[:, None]
        z = np.asarray(self.zetas)[None, :]
        atoms = (jw / z) / (1.0 + jw * z)
        return atoms @ np.asarray(self.mix_weights)


@dataclass(frozen=True)
class SoilComponent:
    """Generator for one soil strength along the path.

    kind ``constant``: ``level``; ``linear``: ``level + slope * s`` with s
    the arc length in meters; ``random_walk``: ``level + scale * W(s)``
    where W is a Brownian path in arc length smoothed with a Gaussian of
    width ``smoothing_m``.
    """

    kind: str = "constant"
    level: float = 0.0
    slope: float = 0.0
    scale: float = 0.0
    smoothing_m: float = 0.1

    def __post_init__(self):
        if self.kind not in ("constant", "linear", "random_walk"):
            raise ValueError(f"unknown soil generator kind {self.kind!r}")
        for name in ("level", "slope", "scale", "smoothing_m"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"soil {name} must be finite")
        if self.smoothing_m < 0:
            raise ValueError("smoothing_m must be >= 0")

    def evaluate(self, path: SweepPath, rng: np.random.Generator) -> np.ndarray:
        n = path.n
        if self.kind == "constant":
            return np.full(n, self.level)
        s = path.arc_length()
        if self.kind == "linear":
            return self.level + self.slope * s
        ds = np.diff(s, prepend=0.0)
        walk = np.cumsum(rng.standard_normal(n) * np.sqrt(ds))
        if self.smoothing_m > 0 and n > 1:
            mean_step = s[-1] / (n - 1) if s[-1] > 0 else 1.0
            walk = gaussian_filter1d(walk, self.smoothing_m / mean_step, mode="nearest")
        return self.level + self.scale * walk


@dataclass(frozen=True)
class SoilSpec:
    xi1: SoilComponent = field(default_factory=SoilComponent)
    xi2: SoilComponent = field(default_factory=SoilComponent)


@dataclass(frozen=True, eq=False)
class SceneSpec:
    grid: FrequencyGrid
    targets: tuple[TargetSpec, ...] = ()
    soil: SoilSpec = field(default_factory=SoilSpec)
    self_response: np.ndarray | None = None
    noise_sigma: float = 0.0
    rng_seed: int = 0
    support_sigmas: float = 3.0

    def __post_init__(self):
        object.__setattr__(self, "targets", tuple(self.targets))
        r = np.zeros(self.grid.k, dtype=complex) if self.self_response is None else self.self_response
        r = np.array(r, dtype=complex).ravel()
        if r.size != self.grid.k:
            raise ValueError(f"self_response length {r.size} != K={self.grid.k}")
        r.setflags(write=False)
        object.__setattr__(self, "self_response", r)
        if not (self.noise_sigma >= 0 and math.isfinite(self.noise_sigma)):
            raise ValueError("noise_sigma must be finite and >= 0")
        if not self.support_sigmas > 0:
            raise ValueError("support_sigmas must be > 0")

    def replace(self, **changes) -> "SceneSpec":
        kw = {f: getattr(self, f) for f in
              ("grid", "targets", "soil", "self_response", "noise_sigma", "rng_seed", "support_sigmas")}
        kw.update(changes)
        return SceneSpec(**kw)

    # JSON-friendly form -------------------------------------------------
    def to_dict(self) -> dict:
        return {
            "omegas_rad_s": [float(w) for w in self.grid.omegas],
            "targets": [
                {
                    "center": list(t.center),
                    "zetas": list(t.zetas),
                    "mix_weights": list(t.mix_weights),
                    "amplitude": t.amplitude,
                    "spatial_sigma": t.spatial_sigma,
                    "label": t.label,
                    "halo_m": t.halo_m,
                }
                for t in self.targets
            ],
            "soil": {
                name: vars(getattr(self.soil, name)).copy() for name in ("xi1", "xi2")
            },
            "self_response": [[float(v.real), float(v.imag)] for v in self.self_response],
            "noise_sigma": self.noise_sigma,
            "rng_seed": int(self.rng_seed),
            "support_sigmas": self.support_sigmas,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SceneSpec":
        soil = d.get("soil", {})
        return cls(
            grid=FrequencyGrid(np.asarray(d["omegas_rad_s"], dtype=float)),
            targets=tuple(
                TargetSpec(
                    center=tuple(t["center"]),
                    zetas=tuple(t["zetas"]),
                    mix_weights=tuple(t["mix_weights"]),
                    amplitude=t["amplitude"],
                    spatial_sigma=t["spatial_sigma"],
                    label=t.get("label", "MT"),
                    halo_m=t.get("halo_m", DEFAULT_HALO_M),
                )
                for t in d.get("targets", [])
            ),
            soil=SoilSpec(
                xi1=SoilComponent(**soil.get("xi1", {})),
                xi2=SoilComponent(**soil.get("xi2", {})),
            ),
            self_response=np.array([complex(a, b) for a, b in d["self_response"]])
            if d.get("self_response") is not None else None,
            noise_sigma=d.get("noise_sigma", 0.0),
            rng_seed=d.get("rng_seed", 0),
            support_sigmas=d.get("support_sigmas", 3.0),
        )


@dataclass(frozen=True)
class TruthEntry:
    position: tuple[float, float]
    label: str
    halo_m: float = DEFAULT_HALO_M

    def __post_init__(self):
        object.__setattr__(self, "position", (float(self.position[0]), float(self.position[1])))
        if self.label not in CLASS_LABELS:
            raise ValueError(f"unknown class label {self.label!r}")
        if not self.halo_m > 0:
            raise ValueError("halo radius must be > 0")


@dataclass(frozen=True)
class GroundTruthTable:
    entries: tuple[TruthEntry, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "entries", tuple(self.entries))

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def __add__(self, other: "GroundTruthTable") -> "GroundTruthTable":
        return GroundTruthTable(self.entries + other.entries)

    @property
    def positions(self) -> np.ndarray:
        return np.array([e.position for e in self.entries], dtype=float).reshape(-1, 2)

    def to_csv(self) -> bytes:
        buf = io.StringIO()
        buf.write("easting,northing,class,halo_m\n")
        for e in self.entries:
            buf.write(f"{e.position[0]!r},{e.position[1]!r},{e.label},{float(e.halo_m)!r}\n")
        return buf.getvalue().encode("utf-8")

    @classmethod
    def from_csv(cls, source) -> "GroundTruthTable":
        text = source.decode("utf-8") if isinstance(source, (bytes, bytearray)) else source
        reader = csv.DictReader(io.StringIO(text))
        if reader.fieldnames != ["easting", "northing", "class", "halo_m"]:
            raise ValueError("truth CSV header must be 'easting,northing,class,halo_m'")
        entries = []
        for lineno, row in enumerate(reader, start=2):
            try:
                entries.append(TruthEntry(
                    (float(row["easting"]), float(row["northing"])),
                    row["class"], float(row["halo_m"]),
                ))
            except (TypeError, ValueError) as exc:
                raise ValueError(f"truth CSV line {lineno}: {exc}") from None
        return cls(tuple(entries))


def sinusoidal_path(extent, spacing: float, step: float) -> SweepPath:
    """Sinusoidal sweep over ``extent = (xmin, ymin, xmax, ymax)``.

    The sensor swings across the full x-width once every ``spacing`` meters
    of forward (y) progress, starting at the (xmin, ymin) corner.  Points
    are spaced at equal arc length no larger than ``step``.
    """
    xmin, ymin, xmax, ymax = (float(v) for v in extent)
    width, height = xmax - xmin, ymax - ymin
    if not (width > 0 and height > 0):
        raise ValueError(f"degenerate sweep rectangle {extent}")
    if not (spacing > 0 and step > 0):
        raise ValueError("spacing and step must be > 0")
    slope = math.hypot(1.0, math.pi * width / (2.0 * spacing))
    n_fine = int(math.ceil(8.0 * height * slope / step)) + 2
    y = np.linspace(0.0, height, n_fine)
    x = 0.5 * width * (1.0 - np.cos(np.pi * y / spacing))
    seg = np.hypot(np.diff(x), np.diff(y))
    s = np.concatenate([[0.0], np.cumsum(seg)])
    total = s[-1]
    n_out = int(math.ceil(total / step - 1e-9)) + 1
    targets = np.linspace(0.0, total, n_out)
    px = np.clip(np.interp(targets, s, x), 0.0, width)
    py = np.clip(np.interp(targets, s, y), 0.0, height)
    return SweepPath(np.column_stack([xmin + px, ymin + py]))


def soil_basis(grid: FrequencyGrid) -> np.ndarray:
    """K x 2 complex soil basis: a constant column and ``log(w / w_c) + j pi/2``."""
    col2 = np.log(grid.omegas / grid.center) + 0.5j * np.pi
    return np.column_stack([np.ones(grid.k, dtype=complex), col2])


def target_envelope(target: TargetSpec, positions: np.ndarray, support_sigmas: float = 3.0) -> np.ndarray:
    d2 = np.sum((positions - np.asarray(target.center)) ** 2, axis=1)
    env = np.exp(-0.5 * d2 / target.spatial_sigma**2)
    env[d2 > (support_sigmas * target.spatial_sigma) ** 2] = 0.0
    return env


def simulate(scene: SceneSpec, path: SweepPath, sweep_id: str = "") -> tuple[ComplexSweep, GroundTruthTable]:
    """Draw one sweep ``S + G + R + E`` along ``path``.

    The target envelope is a Gaussian in ground distance truncated at
    ``scene.support_sigmas`` footprint radii.  Random draws happen in a fixed
    order (xi1, xi2, noise) from ``scene.rng_seed``, so the soil and noise
    realizations do not depend on the target list.
    """
    grid = scene.grid
    pos = path.positions
    data = np.zeros((grid.k, path.n), dtype=complex)
    for t in scene.targets:
        env = target_envelope(t, pos, scene.support_sigmas)
        data += t.amplitude * np.outer(t.spectrum(grid), env)

    rng = stream(scene.rng_seed)
    xi = np.column_stack([scene.soil.xi1.evaluate(path, rng), scene.soil.xi2.evaluate(path, rng)])
    data += soil_basis(grid) @ xi.T
    data += scene.self_response[:, None]
    noise = rng.standard_normal((2, grid.k, path.n)) * scene.noise_sigma
    data += noise[0] + 1j * noise[1]

    truth = GroundTruthTable(tuple(TruthEntry(t.center, t.label, t.halo_m) for t in scene.targets))
    return ComplexSweep(grid, path, data, sweep_id=sweep_id), truth


def blank_collection(scene: SceneSpec, path: SweepPath, sweep_id: str = "") -> ComplexSweep:
    """Simulate a background-only collection; scenes with targets are rejected."""
    if scene.targets:
        raise ValueError("blank collections cannot contain targets")
    return simulate(scene, path, sweep_id=sweep_id)[0]


# ---------------------------------------------------------------------------
# Site layout


@dataclass(frozen=True)
class SiteSpec:
    """Layout and signal levels for a synthetic test site.

    ``classes`` lists one target class per grid cell.  Cells are arranged in
    ``n_lanes`` rows; blank cells sit in an extra row south of the lanes.
    Setting ``shared_zeta`` gives every target the same single-relaxation
    spectrum, which makes the planted signature known exactly.
    """

    classes: tuple[str, ...] = ("MT",) * 10
    omega_min: float = 0.1
    omega_max: float = 10.0
    n_freq: int = 9
    n_lanes: int = 2
    cell_size: float = 1.5
    cell_gap: float = 0.5
    path_spacing: float = 0.25
    path_step: float = 0.02
    target_margin: float = 0.35
    spatial_sigma: float = 0.12
    amplitude_base: float = 1.0
    max_components: int = 2
    soil_scale: float = 0.1
    soil_level: float = 1.0
    soil_smoothing_m: float = 0.1
    self_response_level: float = 20.0
    noise_sigma: float = 0.3
    n_blanks: int = 4
    halo_m: float = DEFAULT_HALO_M
    shared_zeta: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "classes", tuple(self.classes))
        if self.shared_zeta is not None and not self.shared_zeta > 0:
            raise ValueError("shared_zeta must be > 0")
        for c in self.classes:
            if c not in CLASS_LABELS:
                raise ValueError(f"unknown class label {c!r}")
        if self.n_lanes < 1 or self.n_freq < 2 or self.n_blanks < 0:
            raise ValueError("n_lanes >= 1, n_freq >= 2 and n_blanks >= 0 required")
        if not 0 <= 2 * self.target_margin < self.cell_size:
            raise ValueError("target_margin must leave room inside the cell")
        if self.max_components < 1:
            raise ValueError("max_components must be >= 1")

    @property
    def grid(self) -> FrequencyGrid:
        return FrequencyGrid.logspaced(self.omega_min, self.omega_max, self.n_freq)


@dataclass(frozen=True, eq=False)
class Collection:
    sweep_id: str
    lane: int
    scene: SceneSpec
    path: SweepPath
    extent: tuple[float, float, float, float]
    blank: bool = False

    @property
    def area(self) -> float:
        x0, y0, x1, y1 = self.extent
        return (x1 - x0) * (y1 - y0)


@dataclass(frozen=True, eq=False)
class Site:
    spec: SiteSpec
    collections: tuple[Collection, ...]
    blanks: tuple[Collection, ...]

    @property
    def truth(self) -> GroundTruthTable:
        return GroundTruthTable(tuple(
            TruthEntry(t.center, t.label, t.halo_m)
            for c in self.collections for t in c.scene.targets
        ))

    @property
    def swept_area(self) -> float:
        return float(sum(c.area for c in self.collections))


def _unit_spectrum_weights(grid, zetas, raw_weights):
    """Scale mix weights so the real-stacked spectrum has unit norm."""
    probe = TargetSpec((0.0, 0.0), zetas, raw_weights, 1.0, 1.0)
    norm = np.linalg.norm(stack_columns(probe.spectrum(grid)))
    return tuple(w / norm for w in raw_weights)


def make_site(spec: SiteSpec, seed: int) -> Site:
    """Lay out cells, targets, soil and noise for a site, reproducibly from ``seed``."""
    grid = spec.grid
    pitch = spec.cell_size + spec.cell_gap
    n_cells = len(spec.classes)
    per_lane = max(1, math.ceil(n_cells / spec.n_lanes))
    layout_rng = stream(seed, 0)
    self_response = spec.self_response_level * (
        1.0 + 0.3 * np.log(grid.omegas / grid.center)
        + 1j * (0.5 + 0.1 * layout_rng.standard_normal(grid.k))
    )
    lo, hi = math.log(spec.omega_min), math.log(spec.omega_max)

    def soil():
        walk = dict(kind="random_walk", scale=spec.soil_scale, smoothing_m=spec.soil_smoothing_m)
        return SoilSpec(
            xi1=SoilComponent(level=spec.soil_level, **walk),
            xi2=SoilComponent(level=0.5 * spec.soil_level, **walk),
        )

    collections = []
    for i, label in enumerate(spec.classes):
        lane, col = divmod(i, per_lane)
        x0, y0 = col * pitch, lane * pitch
        extent = (x0, y0, x0 + spec.cell_size, y0 + spec.cell_size)
        rng = stream(seed, 1, i)
        center = (
            x0 + spec.target_margin + rng.random() * (spec.cell_size - 2 * spec.target_margin),
            y0 + spec.target_margin + rng.random() * (spec.cell_size - 2 * spec.target_margin),
        )
        n_comp = int(rng.integers(1, spec.max_components + 1))
        zetas = tuple(float(np.exp(rng.uniform(lo, hi))) for _ in range(n_comp))
        raw_weights = tuple(rng.uniform(0.5, 1.0, n_comp))
        if spec.shared_zeta is not None:
            zetas, raw_weights = (float(spec.shared_zeta),), (1.0,)
        weights = _unit_spectrum_weights(grid, zetas, raw_weights)
        target = TargetSpec(
            center=center, zetas=zetas, mix_weights=weights,
            amplitude=CLASS_AMPLITUDE[label] * spec.amplitude_base,
            spatial_sigma=spec.spatial_sigma, label=label, halo_m=spec.halo_m,
        )
        scene = SceneSpec(grid, (target,), soil(), self_response, spec.noise_sigma,
                          rng_seed=derive_seed(seed, 2, i))
        path = sinusoidal_path(extent, spec.path_spacing, spec.path_step)
        collections.append(Collection(f"lane{lane}_cell{col}", lane, scene, path, extent))

    blanks = []
    for b in range(spec.n_blanks):
        x0, y0 = b * pitch, -pitch
        extent = (x0, y0, x0 + spec.cell_size, y0 + spec.cell_size)
        scene = SceneSpec(grid, (), soil(), self_response, spec.noise_sigma,
                          rng_seed=derive_seed(seed, 3, b))
        path = sinusoidal_path(extent, spec.path_spacing, spec.path_step)
        blanks.append(Collection(f"blank{b}", -1, scene, path, extent, blank=True))
    return Site(spec, tuple(collections), tuple(blanks))
