"""Fast evaluation of the Caputo time-fractional derivative.

The power-law kernel is compressed into a sum of exponentials (SOE) so that
the convolution history can be carried forward with a fixed number of
accumulators per degree of freedom.  A direct O(N^2) L1 quadrature and a few
closed-form oracles live here too; the tests lean on them.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.special import gammainccinv, roots_jacobi

from ._kernels import soe_history_update

__all__ = [
    "SoeKernel",
    "SoeConstructionError",
    "build_soe",
    "soe_eval",
    "write_kernel_csv",
    "read_kernel_csv",
    "caputo_monomial_oracle",
    "mittag_leffler",
    "l1_caputo",
    "CaputoState",
    "history_advance",
    "caputo_coefficients",
    "fast_caputo",
    "default_eps",
]

_MAX_ORDER = 64
_N_DESIGN_SAMPLES = 400
_N_CERTIFY_SAMPLES = 10_000


class SoeConstructionError(RuntimeError):
    """The requested residual could not be met by the quadrature."""


@dataclass(frozen=True)
class SoeKernel:
    """Sum-of-exponentials approximation of ``t**-beta`` on ``[delta, t_max]``."""

    beta: float
    delta: float
    t_max: float
    eps_target: float
    nodes: np.ndarray
    weights: np.ndarray
    max_residual: float = float("nan")

    @property
    def k_exp(self) -> int:
        return int(self.nodes.size)

    def __call__(self, t):
        return soe_eval(self, t)


def soe_eval(kernel: SoeKernel, t):
    """Evaluate ``sum_i w_i exp(-s_i t)``; vectorized over ``t``."""
    t_arr = np.asarray(t, dtype=float)
    out = np.exp(-np.multiply.outer(t_arr, kernel.nodes)) @ kernel.weights
    return float(out) if out.ndim == 0 else out


def _gauss_jacobi(n: int, b: float, beta: float):
    # int_0^b s^(beta-1) g(s) ds with the singular weight folded into the rule
    x, w = roots_jacobi(n, 0.0, beta - 1.0)
    s = 0.5 * b * (1.0 + x)
    return s, w * (0.5 * b) ** beta


def _gauss_legendre(n: int, a: float, b: float, beta: float):
    x, w = leggauss(n)
    s = 0.5 * (b - a) * x + 0.5 * (a + b)
    return s, 0.5 * (b - a) * w * s ** (beta - 1.0)


def _minimal_rule(rule, budget: float, t_samples: np.ndarray):
    """Smallest-order rule whose sampled error against a high-order reference is within budget."""
    s_ref, w_ref = rule(_MAX_ORDER + 16)
    ref = np.exp(-np.multiply.outer(t_samples, s_ref)) @ w_ref
    # below a few ulps of the panel value the comparison is pure round-off
    tol = np.maximum(budget, 8.0 * np.finfo(float).eps * np.abs(ref))
    for n in range(1, _MAX_ORDER + 1):
        s, w = rule(n)
        approx = np.exp(-np.multiply.outer(t_samples, s)) @ w
        if np.all(np.abs(approx - ref) <= tol):
            return s, w
    raise SoeConstructionError(
        f"quadrature order exhausted at {_MAX_ORDER} nodes per panel; "
        "relax eps or shrink [delta, t_max]"
    )


def build_soe(beta: float, delta: float, t_max: float, eps: float) -> SoeKernel:
    """Build a certified SOE approximation of ``t**-beta`` on ``[delta, t_max]``.

    Uses ``t**-beta = 1/Gamma(beta) * int_0^inf s**(beta-1) exp(-s t) ds``.
    The integral is cut at the point where the upper incomplete gamma tail
    drops below the budget, split into a Gauss-Jacobi panel at small ``s``
    and dyadic Gauss-Legendre panels above it, and the order of every panel
    is chosen adaptively.  Nodes whose largest contribution on the interval
    is negligible are then pruned, and the result is certified by dense
    log-spaced sampling.

    Raises
    ------
    ValueError
        For ``beta`` outside (0, 2), ``delta >= t_max`` or ``eps <= 0``.
    SoeConstructionError
        If the sampled residual exceeds ``eps`` after pruning.
    """
    if not 0.0 < beta < 2.0:
        raise ValueError(f"beta must lie in (0, 2), got {beta}")
    if not 0.0 < delta < t_max:
        raise ValueError(f"need 0 < delta < t_max, got delta={delta}, t_max={t_max}")
    if not eps > 0.0:
        raise ValueError(f"eps must be positive, got {eps}")

    # work in the un-normalized integral; divide by Gamma(beta) at the end
    gamma_beta = math.gamma(beta)
    budget = 0.25 * eps * gamma_beta
    t_samples = np.geomspace(delta, t_max, _N_DESIGN_SAMPLES)

    # tail: int_{s_max}^inf s^(beta-1) e^(-s t) ds <= Gamma(beta) Q(beta, s_max delta) delta^-beta
    tail_q = 0.25 * eps * delta**beta
    s_max = float(gammainccinv(beta, tail_q)) / delta if tail_q < 1.0 else 1.0 / delta
    a = min(1.0 / t_max, 0.5 * s_max)

    edges = [a]
    while edges[-1] < s_max:
        edges.append(min(2.0 * edges[-1], s_max))
    n_panels = len(edges) - 1

    nodes, weights = [], []
    s, w = _minimal_rule(lambda n: _gauss_jacobi(n, a, beta), budget, t_samples)
    nodes.append(s)
    weights.append(w)
    for lo, hi in zip(edges[:-1], edges[1:]):
        live = t_samples[lo * t_samples < 800.0]
        if live.size == 0:
            continue
        s, w = _minimal_rule(
            lambda n, lo=lo, hi=hi: _gauss_legendre(n, lo, hi, beta),
            budget / math.sqrt(max(n_panels, 1)),
            live,
        )
        nodes.append(s)
        weights.append(w)

    s_all = np.concatenate(nodes)
    w_all = np.concatenate(weights) / gamma_beta
    order = np.argsort(s_all)
    s_all, w_all = s_all[order], w_all[order]

    # prune the smallest contributors while the dropped mass stays within eps/4
    bound = w_all * np.exp(-s_all * delta)
    drop_order = np.argsort(bound)
    dropped = np.cumsum(bound[drop_order])
    n_drop = int(np.searchsorted(dropped, 0.25 * eps, side="right"))
    keep = np.ones(s_all.size, dtype=bool)
    keep[drop_order[:n_drop]] = False
    s_all, w_all = s_all[keep], w_all[keep]

    kernel = SoeKernel(beta, delta, t_max, eps, s_all, w_all)
    t_check = np.geomspace(delta, t_max, _N_CERTIFY_SAMPLES)
    resid = float(np.max(np.abs(t_check**-beta - soe_eval(kernel, t_check))))
    if not resid <= eps:
        raise SoeConstructionError(
            f"sampled residual {resid:.3e} exceeds eps={eps:.3e} "
            f"with {s_all.size} nodes (quadrature resolution exhausted)"
        )
    return SoeKernel(beta, delta, t_max, eps, s_all, w_all, resid)


def write_kernel_csv(kernel: SoeKernel, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["s", "omega"])
        for s, w in zip(kernel.nodes, kernel.weights):
            writer.writerow([f"{s:.17g}", f"{w:.17g}"])


def read_kernel_csv(path) -> tuple[np.ndarray, np.ndarray]:
    data = np.loadtxt(Path(path), delimiter=",", skiprows=1, ndmin=2)
    return data[:, 0].copy(), data[:, 1].copy()


def caputo_monomial_oracle(gamma: float, alpha: float, t: float) -> float:
    """Exact Caputo derivative of ``t**gamma``."""
    if gamma == 0:
        return 0.0
    return math.gamma(gamma + 1) / math.gamma(gamma + 1 - alpha) * t ** (gamma - alpha)


def mittag_leffler(alpha: float, z: float, tol: float = 1e-17, max_terms: int = 2000) -> float:
    """Truncated power series ``sum z**n / Gamma(alpha n + 1)``.

    Only meant as a reference for moderate ``|z|``; cancellation ruins it
    well before ``|z| ~ 10``.
    """
    total = 0.0
    for n in range(max_terms):
        arg = alpha * n + 1.0
        if arg > 170.0:
            break
        term = z**n / math.gamma(arg)
        total += term
        if n > 2 and abs(term) < tol * max(1.0, abs(total)):
            break
    return total


def l1_caputo(values, times, alpha: float) -> float:
    """L1 quadrature of the Caputo derivative at the last time.

    The integrand's derivative is taken piecewise constant between samples,
    giving ``1/Gamma(2-alpha) sum_j (dphi_j/dt_j)((t_N-t_j)^(1-a) - (t_N-t_{j+1})^(1-a))``.
    Nonuniform grids are fine.
    """
    v = np.asarray(values, dtype=float)
    t = np.asarray(times, dtype=float)
    if v.shape != t.shape or t.ndim != 1 or t.size < 2:
        raise ValueError("values and times must be 1-D of equal length >= 2")
    if t[0] != 0.0:
        raise ValueError("time grid must start at 0")
    dt = np.diff(t)
    if np.any(dt <= 0):
        raise ValueError("time grid must be strictly increasing")
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    tn = t[-1]
    w = (tn - t[:-1]) ** (1 - alpha) - (tn - t[1:]) ** (1 - alpha)
    return float(np.sum(np.diff(v) / dt * w) / math.gamma(2 - alpha))


def default_eps(alpha: float, dt: float) -> float:
    return max(1e-9, 1e-12 * dt ** -(1.0 + alpha))


@dataclass
class CaputoState:
    """Running state of the fast Caputo evaluator for one field.

    ``u_hist`` holds one accumulator per exponential per degree of freedom.
    The accumulated quantity is ``phi - phi_zero``; subtracting the initial
    value analytically annihilates constants, so a constant history costs
    nothing and the SOE error never multiplies the mean.
    """

    alpha: float
    kernel: SoeKernel | None
    phi_zero: np.ndarray
    phi_prev: np.ndarray
    phi_prev2: np.ndarray | None = None
    u_hist: np.ndarray | None = None
    t_now: float = 0.0
    dt_prev: float = 0.0
    step_index: int = 0
    _hist_sum: np.ndarray | None = field(default=None, repr=False)

    @classmethod
    def start(cls, alpha: float, phi0, dt: float, t_max: float, eps: float | None = None) -> "CaputoState":
        """Fresh state at ``t = 0``; builds the kernel for ``t**-(1+alpha)`` on ``[dt, t_max]``.

        With ``eps=None`` the absolute kernel tolerance is
        ``max(1e-9, 1e-12 * dt**-(1+alpha))``: an absolute 1e-9 is below
        double round-off once the kernel value at the cutoff gets large.
        """
        if not 0.0 < alpha <= 1.0:
            raise ValueError(f"alpha must lie in (0, 1], got {alpha}")
        phi0 = np.array(phi0, dtype=float)
        if alpha == 1.0:
            return cls(alpha, None, phi0, phi0.copy())
        if eps is None:
            eps = default_eps(alpha, dt)
        kernel = build_soe(1.0 + alpha, dt, max(t_max, 2.0 * dt), eps)
        u = np.zeros((kernel.k_exp,) + phi0.shape)
        return cls(alpha, kernel, phi0, phi0.copy(), u_hist=u, _hist_sum=np.zeros_like(phi0))

    def push(self, phi_new, dt: float) -> None:
        """Record the accepted value at ``t_now + dt``."""
        self.phi_prev2 = self.phi_prev
        self.phi_prev = np.array(phi_new, dtype=float)
        self.t_now += dt
        self.dt_prev = dt
        self.step_index += 1


def _phi1(x: np.ndarray) -> np.ndarray:
    # (e^-x - 1 + x) / x^2, series below 1e-3 to dodge cancellation
    out = np.empty_like(x)
    small = x < 1e-3
    xs = x[small]
    out[small] = 0.5 - xs / 6 + xs**2 / 24 - xs**3 / 120
    xl = x[~small]
    out[~small] = (np.expm1(-xl) + xl) / xl**2
    return out


def _phi2(x: np.ndarray) -> np.ndarray:
    # (1 - e^-x - x e^-x) / x^2
    out = np.empty_like(x)
    small = x < 1e-3
    xs = x[small]
    out[small] = 0.5 - xs / 3 + xs**2 / 8 - xs**3 / 30
    xl = x[~small]
    out[~small] = (-np.expm1(-xl) - xl * np.exp(-xl)) / xl**2
    return out


def history_advance(state: CaputoState, dt_next: float) -> CaputoState:
    """Carry the exponential accumulators from ``t_n`` to ``t_{n+1}``.

    Adds the integral over ``[t_{n-1}, t_n]`` of the linear interpolant of the
    stored field against ``exp(-s_i (t_{n+1} - tau))``.  Mutates ``state``.
    """
    if state.kernel is None:
        return state
    if state.step_index < 1 or state.phi_prev2 is None:
        raise ValueError("history_advance needs two stored field values (step_index >= 1)")
    if not dt_next > 0:
        raise ValueError("dt_next must be positive")
    s = state.kernel.nodes
    h = state.dt_prev
    decay = np.exp(-s * dt_next)
    coef_new = decay * h * _phi1(s * h)
    coef_old = decay * h * _phi2(s * h)
    state._hist_sum = soe_history_update(
        state.u_hist.reshape(s.size, -1),
        decay,
        coef_new,
        coef_old,
        state.kernel.weights,
        (state.phi_prev - state.phi_zero).ravel(),
        (state.phi_prev2 - state.phi_zero).ravel(),
    ).reshape(state.phi_zero.shape)
    return state


def caputo_coefficients(state: CaputoState, dt_next: float):
    """Return ``(c_impl, rhs_hist)`` so that the discrete derivative is ``c_impl*phi_new + rhs_hist``.

    Assumes :func:`history_advance` was already called for this step (no-op
    on the first step, when the history is empty).
    """
    if not dt_next > 0:
        raise ValueError("dt_next must be positive")
    if state.alpha == 1.0:
        c = 1.0 / dt_next
        return c, -c * state.phi_prev
    if dt_next < state.kernel.delta * (1 - 1e-12):
        raise ValueError(
            f"dt_next={dt_next} is below the kernel cutoff delta={state.kernel.delta}"
        )
    a = state.alpha
    c = 1.0 / (dt_next**a * math.gamma(2 - a))
    if state.step_index == 0:
        hist = 0.0
    else:
        hist = (state.phi_prev - state.phi_zero) / dt_next**a - a * state._hist_sum
    return c, -c * state.phi_prev + hist / math.gamma(1 - a)


def fast_caputo(values, times, alpha: float, eps: float | None = None) -> np.ndarray:
    """Fast-evaluator Caputo derivative of a sampled series at every time after the first.

    ``values`` may carry trailing dimensions (one trajectory per degree of freedom).
    """
    v = np.asarray(values, dtype=float)
    t = np.asarray(times, dtype=float)
    dt = np.diff(t)
    if np.any(dt <= 0):
        raise ValueError("time grid must be strictly increasing")
    state = CaputoState.start(alpha, v[0], float(dt.min()), float(t[-1]), eps)
    out = np.empty((t.size - 1,) + v.shape[1:])
    for n, h in enumerate(dt):
        if state.step_index >= 1:
            history_advance(state, h)
        c, rhs = caputo_coefficients(state, h)
        out[n] = c * v[n + 1] + rhs
        state.push(v[n + 1], h)
    return out
