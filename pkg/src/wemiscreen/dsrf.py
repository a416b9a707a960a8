"""Discrete spectrum of relaxation frequencies (DSRF) dictionary."""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np

from .measurement import FrequencyGrid

__all__ = ["DsrfDictionary", "dsrf_atom", "build_dsrf", "stack_columns", "export_dictionary_csv"]


def dsrf_atom(grid: FrequencyGrid, zeta: float) -> np.ndarray:
    """Relaxation response ``(j w / zeta) / (1 + j w zeta)`` at each grid frequency."""
    if not zeta > 0:
        raise ValueError("relaxation frequency must be positive")
    jw = 1j * grid.omegas
    return (jw / zeta) / (1.0 + jw * zeta)


def stack_columns(z: np.ndarray) -> np.ndarray:
    """Real-stack a complex K-vector or K x P matrix into 2K rows."""
    z = np.asarray(z)
    return np.concatenate([z.real, z.imag], axis=0)


@dataclass(frozen=True, eq=False)
class DsrfDictionary:
    """Dictionary of relaxation atoms on a frequency grid.

    ``atoms_complex`` keeps the physical (unnormalized) responses used by the
    simulator; ``atoms_real`` holds the real-stacked atoms scaled to unit
    Euclidean norm, which is what the detectors search over.
    """

    grid: FrequencyGrid
    zetas: np.ndarray
    atoms_complex: np.ndarray
    atoms_real: np.ndarray

    @property
    def n_atoms(self) -> int:
        return self.zetas.size

    def __len__(self):
        return self.n_atoms


def build_dsrf(grid: FrequencyGrid, n_atoms: int = 100, zeta_min: float | None = None,
               zeta_max: float | None = None, margin: tuple[float, float] = (0.9, 1.1)) -> DsrfDictionary:
    """Build a log-spaced DSRF dictionary.

    By default the relaxation frequencies run from ``0.9 * min(omega)`` to
    ``1.1 * max(omega)`` (endpoints included).
    """
    if zeta_min is None:
        zeta_min = margin[0] * float(grid.omegas[0])
    if zeta_max is None:
        zeta_max = margin[1] * float(grid.omegas[-1])
    if not (0 < zeta_min < zeta_max):
        raise ValueError(f"invalid relaxation range [{zeta_min}, {zeta_max}]")
    if n_atoms < 2:
        raise ValueError("n_atoms must be >= 2")
    zetas = np.geomspace(zeta_min, zeta_max, n_atoms)
    jw = 1j * grid.omegas[:, None]
    atoms = (jw / zetas[None, :]) / (1.0 + jw * zetas[None, :])
    real = stack_columns(atoms)
    real = real / np.linalg.norm(real, axis=0, keepdims=True)
    for a in (zetas, atoms, real):
        a.setflags(write=False)
    return DsrfDictionary(grid, zetas, atoms, real)


def export_dictionary_csv(d: DsrfDictionary) -> bytes:
    """One row per atom: ``zeta,a_1,...,a_2K`` (unit-norm real-stacked atom)."""
    buf = io.StringIO()
    m = d.atoms_real.shape[0]
    buf.write("zeta," + ",".join(f"a_{i}" for i in range(1, m + 1)) + "\n")
    for k in range(d.n_atoms):
        vals = [d.zetas[k], *d.atoms_real[:, k]]
        buf.write(",".join(repr(float(v)) for v in vals) + "\n")
    return buf.getvalue().encode("utf-8")
