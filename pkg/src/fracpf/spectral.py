"""Periodic uniform 2-D grids, fields, and FFT-based differential operators.

Arrays are stored with shape ``(ny, nx)`` in C order, so x varies fastest.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np

__all__ = [
    "Grid",
    "Field",
    "SingularSymbolError",
    "laplacian",
    "biharmonic",
    "gradient",
    "divergence",
    "invert_symbol",
    "integrate",
    "mean",
    "write_snapshot",
    "read_snapshot",
    "SNAPSHOT_FORMAT_VERSION",
]

SNAPSHOT_FORMAT_VERSION = 1


class SingularSymbolError(ArithmeticError):
    pass


@dataclass(frozen=True)
class Grid:
    nx: int
    ny: int
    lx: float
    ly: float

    def __post_init__(self):
        for name in ("nx", "ny"):
            n = getattr(self, name)
            if int(n) != n or n < 4 or n % 2:
                raise ValueError(f"{name} must be an even integer >= 4, got {n}")
        if not (self.lx > 0 and self.ly > 0):
            raise ValueError("domain lengths must be positive")

    @property
    def shape(self) -> tuple[int, int]:
        return (self.ny, self.nx)

    @property
    def area(self) -> float:
        return self.lx * self.ly

    @cached_property
    def kx(self) -> np.ndarray:
        """Signed x wavenumbers in standard FFT ordering."""
        return 2 * np.pi * np.fft.fftfreq(self.nx, d=self.lx / self.nx)

    @cached_property
    def ky(self) -> np.ndarray:
        return 2 * np.pi * np.fft.fftfreq(self.ny, d=self.ly / self.ny)

    @cached_property
    def coords(self) -> tuple[np.ndarray, np.ndarray]:
        x = np.arange(self.nx) * (self.lx / self.nx)
        y = np.arange(self.ny) * (self.ly / self.ny)
        return np.meshgrid(x, y, indexing="xy")

    # half-spectrum arrays for rfft2 over axes (0, 1); the last axis is x
    @cached_property
    def _kx_half(self) -> np.ndarray:
        return 2 * np.pi * np.fft.rfftfreq(self.nx, d=self.lx / self.nx)

    @cached_property
    def k2(self) -> np.ndarray:
        return self.ky[:, None] ** 2 + self._kx_half[None, :] ** 2

    @cached_property
    def k4(self) -> np.ndarray:
        return self.k2**2

    @cached_property
    def ikx(self) -> np.ndarray:
        k = self._kx_half.copy()
        k[-1] = 0.0  # Nyquist column of an odd derivative
        return (1j * k)[None, :]

    @cached_property
    def iky(self) -> np.ndarray:
        k = self.ky.copy()
        k[self.ny // 2] = 0.0
        return (1j * k)[:, None]

    @cached_property
    def dealias_mask(self) -> np.ndarray:
        """True on modes kept by the 2/3 rule."""
        jx = np.arange(self._kx_half.size)
        jy = np.abs(np.fft.fftfreq(self.ny) * self.ny)
        return (jy[:, None] < self.ny / 3.0) & (jx[None, :] < self.nx / 3.0)

    def fft(self, a: np.ndarray) -> np.ndarray:
        return np.fft.rfft2(a)

    def ifft(self, a_hat: np.ndarray) -> np.ndarray:
        return np.fft.irfft2(a_hat, s=self.shape)


@dataclass
class Field:
    """Real samples of a periodic function on ``grid``."""

    grid: Grid
    data: np.ndarray

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=float)
        if self.data.shape != self.grid.shape:
            raise ValueError(f"data shape {self.data.shape} does not match grid {self.grid.shape}")
        if not np.all(np.isfinite(self.data)):
            raise ValueError("field contains non-finite values")

    @classmethod
    def from_function(cls, grid: Grid, fn) -> "Field":
        x, y = grid.coords
        return cls(grid, np.broadcast_to(fn(x, y), grid.shape).copy())

    def copy(self) -> "Field":
        return Field(self.grid, self.data.copy())


def laplacian(f: Field) -> Field:
    g = f.grid
    return Field(g, g.ifft(-g.k2 * g.fft(f.data)))


def biharmonic(f: Field) -> Field:
    g = f.grid
    return Field(g, g.ifft(g.k4 * g.fft(f.data)))


def gradient(f: Field) -> tuple[Field, Field]:
    g = f.grid
    fh = g.fft(f.data)
    return Field(g, g.ifft(g.ikx * fh)), Field(g, g.ifft(g.iky * fh))


def divergence(fx: Field, fy: Field) -> Field:
    g = fx.grid
    return Field(g, g.ifft(g.ikx * g.fft(fx.data) + g.iky * g.fft(fy.data)))


def invert_symbol(rhs: Field, c0: float, c2: float, c4: float, pin_zero_mode: bool = True) -> Field:
    """Solve ``(c0 - c2*Lap + c4*Lap^2) u = rhs`` mode by mode.

    With ``c0 == 0`` the zero mode is singular.  By default it is passed
    through unchanged, so the output keeps the mean of ``rhs``; with
    ``pin_zero_mode=False`` a nonzero-mean right-hand side is rejected.
    """
    g = rhs.grid
    sym = c0 + c2 * g.k2 + c4 * g.k4
    rh = g.fft(rhs.data)
    scale = abs(c0) + abs(c2) * g.k2.max() + abs(c4) * g.k4.max()
    tiny = 1e-14 * scale if scale > 0 else 1e-300
    singular = np.abs(sym) <= tiny
    zero_singular = bool(singular[0, 0])
    singular[0, 0] = False
    if singular.any():
        idx = np.argwhere(singular)[0]
        raise SingularSymbolError(f"operator symbol vanishes at nonzero mode {tuple(idx)}")
    if zero_singular:
        if not pin_zero_mode and abs(rh[0, 0].real) > 1e-12 * max(1.0, np.abs(rh).max()):
            raise SingularSymbolError("zero mode is singular and rhs has nonzero mean")
        sym = sym.copy()
        sym[0, 0] = 1.0
    return Field(g, g.ifft(rh / sym))


def integrate(f: Field) -> float:
    """Rectangle rule, which is exact for trigonometric polynomials on a periodic grid."""
    return float(f.data.mean() * f.grid.area)


def mean(f: Field) -> float:
    return float(f.data.mean())


def write_snapshot(stem, field: Field, header: dict) -> tuple[Path, Path]:
    """Write ``<stem>.raw`` (little-endian float64, row-major) and ``<stem>.json``."""
    stem = Path(stem)
    g = field.grid
    meta = {"nx": g.nx, "ny": g.ny, "lx": g.lx, "ly": g.ly, "format_version": SNAPSHOT_FORMAT_VERSION}
    meta.update(header)
    raw = stem.with_suffix(".raw")
    side = stem.with_suffix(".json")
    field.data.astype("<f8").tofile(raw)
    side.write_text(json.dumps(meta, indent=2, sort_keys=True))
    return raw, side


def read_snapshot(stem) -> tuple[Field, dict]:
    stem = Path(stem)
    meta = json.loads(stem.with_suffix(".json").read_text())
    grid = Grid(int(meta["nx"]), int(meta["ny"]), float(meta["lx"]), float(meta["ly"]))
    data = np.fromfile(stem.with_suffix(".raw"), dtype="<f8").reshape(grid.shape)
    return Field(grid, data), meta
