"""Roughness, mass and energy time series, and log-log power-law fits."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_consistent_length, check_is_fitted

from .spectral import Field, integrate

__all__ = [
    "TimeSeries",
    "PowerLawFit",
    "PowerLawRegressor",
    "FitError",
    "roughness",
    "mass",
    "fit_power_law",
    "log_subsample",
    "read_series_csv",
    "write_series_csv",
    "format_fit_report",
    "parse_fit_report",
    "CHANNELS",
]

CHANNELS = ("energy", "roughness")
_CSV_HEADER = ["t", "energy", "roughness", "mass"]


class FitError(ValueError):
    pass


def roughness(phi: Field) -> float:
    """Root-mean-square deviation of ``phi`` from its spatial mean."""
    dev = phi.data - phi.data.mean()
    return math.sqrt(float(np.mean(dev * dev)))


def mass(phi: Field) -> float:
    return integrate(phi)


@dataclass
class TimeSeries:
    t: np.ndarray
    energy: np.ndarray
    roughness: np.ndarray
    mass: np.ndarray

    def __post_init__(self):
        for name in _CSV_HEADER:
            setattr(self, name, np.asarray(getattr(self, name), dtype=float).reshape(-1))
        check_consistent_length(self.t, self.energy, self.roughness, self.mass)
        if np.any(np.diff(self.t) <= 0):
            raise ValueError("time samples must be strictly increasing")
        for name in _CSV_HEADER:
            if not np.all(np.isfinite(getattr(self, name))):
                raise ValueError(f"non-finite entries in {name}")

    @classmethod
    def empty(cls) -> "TimeSeries":
        return cls([], [], [], [])

    def __len__(self) -> int:
        return int(self.t.size)

    def channel(self, name: str) -> np.ndarray:
        if name not in CHANNELS:
            raise ValueError(f"unknown channel {name!r}; expected one of {CHANNELS}")
        return getattr(self, name)


class _Recorder:
    """Append-only builder; avoids re-validating the arrays on every sample."""

    def __init__(self):
        self.rows: list[tuple[float, float, float, float]] = []

    def append(self, t, energy, rough, m):
        self.rows.append((float(t), float(energy), float(rough), float(m)))

    def series(self) -> TimeSeries:
        if not self.rows:
            return TimeSeries.empty()
        return TimeSeries(*np.array(self.rows).T)


class PowerLawRegressor(RegressorMixin, BaseEstimator):
    """Least-squares fit of ``log10 y = intercept + exponent * log10 t``.

    Parameters
    ----------
    base : float
        Logarithm base used for the intercept.

    Attributes
    ----------
    exponent_ : float
        Signed slope on log-log axes (negative for decay).
    intercept_ : float
        ``log_base`` of the prefactor.
    rms_residual_ : float
        Root-mean-square residual in log units.
    n_points_ : int
    """

    def __init__(self, base: float = 10.0):
        self.base = base

    def _log(self, a):
        return np.log(a) / math.log(self.base)

    def fit(self, t, y):
        t = np.asarray(t, dtype=float).reshape(-1)
        y = np.asarray(y, dtype=float).reshape(-1)
        check_consistent_length(t, y)
        if t.size < 3:
            raise FitError(f"fewer than 3 points ({t.size}) to fit")
        if np.any(t <= 0) or np.any(y <= 0) or not np.all(np.isfinite(y)):
            raise FitError("power-law fit needs strictly positive, finite data")
        x, z = self._log(t), self._log(y)
        design = np.column_stack([np.ones_like(x), x])
        coef, *_ = np.linalg.lstsq(design, z, rcond=None)
        self.intercept_, self.exponent_ = float(coef[0]), float(coef[1])
        resid = z - design @ coef
        self.rms_residual_ = float(np.sqrt(np.mean(resid**2)))
        self.n_points_ = int(t.size)
        return self

    def predict(self, t):
        check_is_fitted(self, "exponent_")
        t = np.asarray(t, dtype=float)
        return self.base ** (self.intercept_ + self.exponent_ * self._log(t))


@dataclass(frozen=True)
class PowerLawFit:
    channel: str
    slope: float
    decay: bool
    intercept: float
    t_min: float
    t_max: float
    rms_residual: float
    n_points: int

    @property
    def exponent(self) -> float:
        return -self.slope if self.decay else self.slope


def log_subsample(t: np.ndarray, n_target: int = 60) -> np.ndarray:
    """Indices of ``t`` closest to ``n_target`` log-spaced times, duplicates dropped."""
    if t.size <= n_target:
        return np.arange(t.size)
    targets = np.geomspace(t[0], t[-1], n_target)
    idx = np.searchsorted(t, targets)
    idx = np.clip(idx, 1, t.size - 1)
    left_closer = np.abs(t[idx - 1] - targets) <= np.abs(t[idx] - targets)
    idx = np.where(left_closer, idx - 1, idx)
    return np.unique(idx)


def fit_power_law(series: TimeSeries, channel: str, window=None, n_target: int | None = 60) -> PowerLawFit:
    """Fit ``channel`` of ``series`` against time on log10-log10 axes.

    ``window`` defaults to ``[t_end / 15, t_end]``, raised to the first sample if needed.  Samples inside the window
    are thinned to roughly log-uniform spacing (``n_target`` of them) before
    the least-squares solve; pass ``n_target=None`` to use every sample.
    """
    values = series.channel(channel)
    if len(series) < 3:
        raise FitError(f"fewer than 3 points ({len(series)}) in series")
    t_end = float(series.t[-1])
    if window is None:
        lo, hi = max(t_end / 15.0, float(series.t[0])), t_end
    else:
        lo, hi = float(window[0]), float(window[1])
    if not lo < hi:
        raise FitError(f"fit window [{lo}, {hi}] is empty")
    if lo < series.t[0] or hi > t_end or lo <= 0:
        raise FitError(
            f"fit window [{lo}, {hi}] lies outside the data range [{series.t[0]}, {t_end}]"
        )
    sel = (series.t >= lo) & (series.t <= hi)
    t_w, y_w = series.t[sel], values[sel]
    if t_w.size < 3:
        raise FitError(f"fewer than 3 points ({t_w.size}) in window [{lo}, {hi}]")
    if np.any(y_w <= 0):
        raise FitError(f"nonpositive {channel} values in window [{lo}, {hi}]; log undefined")
    if n_target is not None:
        keep = log_subsample(t_w, n_target)
        t_w, y_w = t_w[keep], y_w[keep]
    reg = PowerLawRegressor().fit(t_w, y_w)
    return PowerLawFit(
        channel=channel,
        slope=abs(reg.exponent_),
        decay=reg.exponent_ < 0,
        intercept=reg.intercept_,
        t_min=lo,
        t_max=hi,
        rms_residual=reg.rms_residual_,
        n_points=reg.n_points_,
    )


def write_series_csv(series: TimeSeries, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(_CSV_HEADER)
        for row in zip(series.t, series.energy, series.roughness, series.mass):
            w.writerow([f"{v:.17g}" for v in row])


def read_series_csv(path) -> TimeSeries:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: empty file") from None
        if [h.strip() for h in header] != _CSV_HEADER:
            raise ValueError(f"{path}: expected header {','.join(_CSV_HEADER)}, got {','.join(header)}")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 4:
                raise ValueError(f"{path}:{lineno}: expected 4 columns, got {len(row)}")
            try:
                rows.append([float(v) for v in row])
            except ValueError:
                raise ValueError(f"{path}:{lineno}: non-numeric entry") from None
    if not rows:
        return TimeSeries.empty()
    return TimeSeries(*np.array(rows).T)


def format_fit_report(fit: PowerLawFit) -> str:
    lines = [
        f"channel = {fit.channel}",
        f"slope = {fit.slope:.17g}",
        f"direction = {'decay' if fit.decay else 'growth'}",
        f"intercept = {fit.intercept:.17g}",
        f"t_min = {fit.t_min:.17g}",
        f"t_max = {fit.t_max:.17g}",
        f"rms_residual = {fit.rms_residual:.17g}",
        f"n_points = {fit.n_points}",
    ]
    return "\n".join(lines) + "\n"


def parse_fit_report(text: str) -> list[PowerLawFit]:
    """Parse one or more reports separated by blank lines."""
    fits = []
    for block in text.strip().split("\n\n"):
        kv = {}
        for line in block.strip().splitlines():
            key, _, value = line.partition("=")
            kv[key.strip()] = value.strip()
        fits.append(
            PowerLawFit(
                channel=kv["channel"],
                slope=float(kv["slope"]),
                decay=kv["direction"] == "decay",
                intercept=float(kv["intercept"]),
                t_min=float(kv["t_min"]),
                t_max=float(kv["t_max"]),
                rms_residual=float(kv["rms_residual"]),
                n_points=int(kv["n_points"]),
            )
        )
    return fits
