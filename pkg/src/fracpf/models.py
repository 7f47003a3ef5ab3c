"""Free energies, mobilities and semi-implicit time steppers.

Two stabilized linear schemes are implemented on top of the fast Caputo
evaluator.  ``step_fmbe`` handles the gradient-flow form
``D^a phi = lam [L phi + S Lap(phi - phi_bar) - dE/dphi(phi_bar)]`` (epitaxy
models, Allen-Cahn, and a linear relaxation test model).  ``step_fch``
handles the conserved form with a possibly phase-dependent mobility.  In both,
``phi_bar = 2 phi^n - phi^{n-1}`` except on the very first step, where it is
``phi^0``.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace

import numpy as np

from .caputo import CaputoState, caputo_coefficients, history_advance
from .spectral import Field, Grid

__all__ = [
    "ModelKind",
    "Mobility",
    "ModelSpec",
    "SimState",
    "DivergenceError",
    "ch_energy",
    "ch_chemical_potential",
    "mobility",
    "mbe_energy",
    "mbe_force",
    "model_energy",
    "initial_field",
    "start",
    "step",
    "step_fch",
    "step_fmbe",
    "RNG_ALGORITHM",
]

RNG_ALGORITHM = "numpy.PCG64"


class ModelKind(str, enum.Enum):
    FCH = "FCH"
    FMBE_SLOPE = "FMBE_SLOPE"
    FMBE_NOSLOPE = "FMBE_NOSLOPE"
    FAC = "FAC"
    # D^a phi = -m_coef * phi; exists for checking against Mittag-Leffler solutions
    LINEAR = "LINEAR"


class Mobility(str, enum.Enum):
    CONSTANT = "CONSTANT"
    TWO_SIDED = "TWO_SIDED"
    ONE_SIDED = "ONE_SIDED"


class DivergenceError(FloatingPointError):
    def __init__(self, step: int, time: float):
        self.step = step
        self.time = time
        super().__init__(
            f"field became non-finite at step {step} (t={time:.6g}); "
            "try larger stabilizers or a smaller dt"
        )


@dataclass(frozen=True)
class ModelSpec:
    kind: ModelKind = ModelKind.FCH
    alpha: float = 1.0
    eps: float = 0.05
    lambda0: float = 0.02
    mobility_kind: Mobility = Mobility.CONSTANT
    m_coef: float = 1.0
    s_stab: float | None = None
    s0_stab: float | None = None
    s1_stab: float | None = None
    dt: float = 1e-2
    t_end: float = 150.0
    dealias: bool = False

    def __post_init__(self):
        object.__setattr__(self, "kind", ModelKind(self.kind))
        object.__setattr__(self, "mobility_kind", Mobility(self.mobility_kind))
        if not 0.0 < self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in (0, 1], got {self.alpha}")
        if not self.eps > 0:
            raise ValueError("eps must be positive")
        if not self.lambda0 > 0:
            raise ValueError("lambda0 must be positive")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.t_end < 0:
            raise ValueError("t_end must be nonnegative")
        for name in ("s_stab", "s0_stab", "s1_stab"):
            v = getattr(self, name)
            if v is not None and v < 0:
                raise ValueError(f"{name} must be nonnegative")

    @property
    def stabilizer(self) -> float:
        """Gradient-flow stabilizer S; defaults to ``min(2/eps^2, 20)``."""
        return self.s_stab if self.s_stab is not None else min(2.0 / self.eps**2, 20.0)

    @property
    def stabilizers_ch(self) -> tuple[float, float]:
        # defaults scale with the largest mobility, which is lambda0 for every kind on [0, 1]
        s0 = self.s0_stab if self.s0_stab is not None else self.lambda0 * self.eps**2
        s1 = self.s1_stab if self.s1_stab is not None else 2.0 * self.lambda0
        return s0, s1

    @property
    def n_steps(self) -> int:
        return int(round(self.t_end / self.dt))


@dataclass
class SimState:
    phi: Field
    caputo: CaputoState
    time: float = 0.0
    step: int = 0
    extras: dict = field(default_factory=dict, repr=False)


# -- energies and potentials -------------------------------------------------

def _grad(grid: Grid, a_hat: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    return grid.ifft(grid.ikx * a_hat), grid.ifft(grid.iky * a_hat)


def _div_hat(grid: Grid, fx: np.ndarray, fy: np.ndarray) -> np.ndarray:
    return grid.ikx * grid.fft(fx) + grid.iky * grid.fft(fy)


def _double_well_prime(phi: np.ndarray) -> np.ndarray:
    return phi * (1.0 - phi) * (0.5 - phi)


def ch_energy(phi: Field, eps: float) -> float:
    """``int eps^2/2 |grad phi|^2 + phi^2 (1-phi)^2 / 4``."""
    g = phi.grid
    gx, gy = _grad(g, g.fft(phi.data))
    u = phi.data
    dens = 0.5 * eps**2 * (gx**2 + gy**2) + 0.25 * u**2 * (1.0 - u) ** 2
    return float(dens.mean() * g.area)


def ch_chemical_potential(phi: Field, eps: float) -> Field:
    g = phi.grid
    lap = g.ifft(-g.k2 * g.fft(phi.data))
    return Field(g, -(eps**2) * lap + _double_well_prime(phi.data))


def _mobility_array(kind: Mobility, u: np.ndarray, lambda0: float) -> np.ndarray:
    kind = Mobility(kind)
    if kind is Mobility.CONSTANT:
        return np.full_like(u, lambda0)
    if kind is Mobility.TWO_SIDED:
        return lambda0 * np.abs(1.0 - u**2)
    return 0.5 * lambda0 * np.abs(1.0 + u)


def mobility(kind, phi: Field, lambda0: float) -> Field:
    """Constant ``lambda0``, two-sided ``lambda0|1-phi^2|`` or one-sided ``lambda0/2 |1+phi|``."""
    return Field(phi.grid, _mobility_array(kind, phi.data, lambda0))


def _slope_selection(variant) -> bool:
    variant = ModelKind(variant)
    if variant not in (ModelKind.FMBE_SLOPE, ModelKind.FMBE_NOSLOPE):
        raise ValueError(f"not an epitaxy variant: {variant}")
    return variant is ModelKind.FMBE_SLOPE


def mbe_energy(phi: Field, eps: float, variant) -> float:
    """``int eps^2/2 (Lap phi)^2 + f(grad phi)``.

    ``f = (|grad phi|^2 - 1)^2 / 4`` with slope selection and
    ``f = -ln(1 + |grad phi|^2) / 2`` without.
    """
    g = phi.grid
    ph = g.fft(phi.data)
    lap = g.ifft(-g.k2 * ph)
    gx, gy = _grad(g, ph)
    q = gx**2 + gy**2
    bulk = 0.25 * (q - 1.0) ** 2 if _slope_selection(variant) else -0.5 * np.log1p(q)
    return float((0.5 * eps**2 * lap**2 + bulk).mean() * g.area)


def _mbe_nonlinear_flux(gx: np.ndarray, gy: np.ndarray, slope: bool):
    # the vector field whose divergence enters the force with a + sign
    q = gx**2 + gy**2
    if slope:
        return (q - 1.0) * gx, (q - 1.0) * gy
    return -gx / (1.0 + q), -gy / (1.0 + q)


def mbe_force(phi: Field, eps: float, m_coef: float, variant) -> Field:
    """Right-hand side of the epitaxy equation.

    Slope selection: ``-M (eps^2 Lap^2 phi - div((|grad phi|^2 - 1) grad phi))``.
    No slope selection: ``-M (eps^2 Lap^2 phi + div(grad phi / (1 + |grad phi|^2)))``.
    """
    g = phi.grid
    ph = g.fft(phi.data)
    gx, gy = _grad(g, ph)
    fx, fy = _mbe_nonlinear_flux(gx, gy, _slope_selection(variant))
    out_hat = m_coef * (-(eps**2) * g.k4 * ph + _div_hat(g, fx, fy))
    return Field(g, g.ifft(out_hat))


def model_energy(phi: Field, spec: ModelSpec) -> float:
    if spec.kind in (ModelKind.FMBE_SLOPE, ModelKind.FMBE_NOSLOPE):
        return mbe_energy(phi, spec.eps, spec.kind)
    if spec.kind is ModelKind.LINEAR:
        return float(0.5 * spec.m_coef * (phi.data**2).mean() * phi.grid.area)
    return ch_energy(phi, spec.eps)


# -- initial data and stepping -----------------------------------------------

def initial_field(grid: Grid, seed: int, amplitude: float = 1e-3, mean: float = 0.0) -> Field:
    """``mean + amplitude * U(-1, 1)`` drawn from a seeded PCG64 stream."""
    rng = np.random.Generator(np.random.PCG64(seed))
    return Field(grid, mean + amplitude * rng.uniform(-1.0, 1.0, size=grid.shape))


def start(phi0: Field, spec: ModelSpec, eps_soe: float | None = None) -> SimState:
    t_max = max(spec.t_end, 2.0 * spec.dt)
    cap = CaputoState.start(spec.alpha, phi0.data, spec.dt, t_max, eps_soe)
    return SimState(phi0.copy(), cap)


def _prepare(state: SimState, spec: ModelSpec):
    cap = state.caputo
    u_n = cap.phi_prev
    if cap.step_index >= 1:
        u_bar = 2.0 * u_n - cap.phi_prev2
        history_advance(cap, spec.dt)
    else:
        u_bar = u_n
    c, rhs_hist = caputo_coefficients(cap, spec.dt)
    return u_bar, c, rhs_hist


def _finish(state: SimState, spec: ModelSpec, new: np.ndarray) -> SimState:
    if not np.all(np.isfinite(new)):
        raise DivergenceError(state.step + 1, state.time + spec.dt)
    state.caputo.push(new, spec.dt)
    state.phi = Field(state.phi.grid, new)
    state.step += 1
    state.time = state.step * spec.dt
    return state


def _mask(grid: Grid, a_hat: np.ndarray, spec: ModelSpec) -> np.ndarray:
    return a_hat * grid.dealias_mask if spec.dealias else a_hat


def step_fch(state: SimState, spec: ModelSpec) -> SimState:
    """Advance the conserved (Cahn-Hilliard) model by one step; mutates ``state``.

    With constant mobility the surface term ``-lam0 eps^2 Lap^2`` is implicit.
    With a phase-dependent mobility the whole flux is taken at the
    extrapolated state, and only ``S0 Lap^2 - S1 Lap`` stays implicit.
    """
    g = state.phi.grid
    u_bar, c, rhs_hist = _prepare(state, spec)
    s0, s1 = spec.stabilizers_ch
    bar_hat = g.fft(u_bar)
    rhs_hat = -g.fft(rhs_hist) + (s0 * g.k4 + s1 * g.k2) * bar_hat
    sym = c + s0 * g.k4 + s1 * g.k2
    if spec.mobility_kind is Mobility.CONSTANT:
        fp_hat = _mask(g, g.fft(_double_well_prime(u_bar)), spec)
        rhs_hat -= spec.lambda0 * g.k2 * fp_hat
        sym = sym + spec.lambda0 * spec.eps**2 * g.k4
    else:
        fp_hat = _mask(g, g.fft(_double_well_prime(u_bar)), spec)
        mu_hat = spec.eps**2 * g.k2 * bar_hat + fp_hat
        mx, my = _grad(g, mu_hat)
        lam = _mobility_array(spec.mobility_kind, u_bar, spec.lambda0)
        rhs_hat += _mask(g, _div_hat(g, lam * mx, lam * my), spec)
    return _finish(state, spec, g.ifft(rhs_hat / sym))


def step_fmbe(state: SimState, spec: ModelSpec) -> SimState:
    """Advance a gradient-flow model (epitaxy, Allen-Cahn, linear test) by one step; mutates ``state``."""
    g = state.phi.grid
    u_bar, c, rhs_hist = _prepare(state, spec)
    kind = spec.kind
    if kind is ModelKind.LINEAR:
        return _finish(state, spec, -rhs_hist / (c + spec.m_coef))

    bar_hat = g.fft(u_bar)
    rhs_hat = -g.fft(rhs_hist)
    if kind is ModelKind.FAC:
        lam, s = spec.lambda0, spec.stabilizer
        sym = c + lam * (spec.eps**2 + s) * g.k2
        fp_hat = _mask(g, g.fft(_double_well_prime(u_bar)), spec)
        rhs_hat += lam * (s * g.k2 * bar_hat - fp_hat)
    else:
        lam, s = spec.m_coef, spec.stabilizer
        sym = c + lam * (spec.eps**2 * g.k4 + s * g.k2)
        gx, gy = _grad(g, bar_hat)
        fx, fy = _mbe_nonlinear_flux(gx, gy, kind is ModelKind.FMBE_SLOPE)
        rhs_hat += lam * (s * g.k2 * bar_hat + _mask(g, _div_hat(g, fx, fy), spec))
    return _finish(state, spec, g.ifft(rhs_hat / sym))


def step(state: SimState, spec: ModelSpec) -> SimState:
    if spec.kind is ModelKind.FCH:
        return step_fch(state, spec)
    return step_fmbe(state, spec)


def with_alpha(spec: ModelSpec, alpha: float) -> ModelSpec:
    return replace(spec, alpha=alpha)
