"""Experiment configuration, single runs, alpha sweeps and artifact persistence."""
from __future__ import annotations

import dataclasses
import json
import logging
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .caputo import write_kernel_csv
from .models import (
    RNG_ALGORITHM,
    ModelKind,
    ModelSpec,
    initial_field,
    model_energy,
    start,
    step,
)
from .observables import (
    FitError,
    PowerLawFit,
    TimeSeries,
    _Recorder,
    fit_power_law,
    format_fit_report,
    mass,
    read_series_csv,
    roughness,
    write_series_csv,
)
from .plotting import loglog_svg, scatter_fit_svg
from .spectral import Grid, write_snapshot

__all__ = [
    "ConfigError",
    "OutputExistsError",
    "RunConfig",
    "RunResult",
    "SweepResult",
    "load_config",
    "run",
    "sweep",
    "refit",
    "MANIFEST_VERSION",
]

log = logging.getLogger(__name__)

MANIFEST_VERSION = 1

_FCH_SNAPSHOTS = (5.0, 25.0, 50.0, 100.0, 125.0, 145.0)
_MBE_SNAPSHOTS = (5.0, 25.0, 50.0, 100.0, 150.0, 200.0)


class ConfigError(ValueError):
    def __init__(self, field_name: str, message: str):
        self.field = field_name
        super().__init__(f"config field '{field_name}': {message}")


class OutputExistsError(FileExistsError):
    pass


def _is_mbe(model: str) -> bool:
    return model in ("FMBE_SLOPE", "FMBE_NOSLOPE")


@dataclass
class RunConfig:
    """Everything a run needs.  ``None`` entries take model-dependent defaults in :meth:`resolved`.

    Cahn-Hilliard and Allen-Cahn defaults: domain ``[0, 4 pi]^2``, ``eps=0.05``,
    ``lambda0=0.02``, ``t_end=150``, initial mean 0.5.  Epitaxy defaults:
    ``[0, 10 pi]^2``, ``eps=0.1``, ``M=1``, ``t_end=200``, initial mean 0.
    """

    model: str = "FCH"
    alpha: float = 1.0
    alphas: list | None = None
    eps: float | None = None
    lambda0: float = 0.02
    mobility: str = "CONSTANT"
    m_coef: float = 1.0
    s_stab: float | None = None
    s0_stab: float | None = None
    s1_stab: float | None = None
    dt: float = 1e-2
    t_end: float | None = None
    nx: int = 128
    ny: int = 128
    lx: float | None = None
    ly: float | None = None
    seed: int = 20180313
    init_amplitude: float = 1e-3
    init_mean: float | None = None
    paper_literal_init: bool = False
    soe_eps: float | None = None
    snapshot_times: list | None = None
    fit_window: list | None = None
    fit_channels: list | None = None
    record_every: int = 10
    dealias: bool = False
    emit_svg: bool = False
    workers: int = 1
    progress: bool = True

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        for key in data:
            if key not in names:
                raise ConfigError(key, "unknown key")
        cfg = cls(**data)
        cfg.validate()
        return cfg

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def validate(self) -> None:
        if self.model not in ModelKind.__members__:
            raise ConfigError("model", f"expected one of {sorted(ModelKind.__members__)}, got {self.model!r}")
        if self.mobility not in ("CONSTANT", "TWO_SIDED", "ONE_SIDED"):
            raise ConfigError("mobility", f"unknown mobility {self.mobility!r}")
        alphas = self.alphas if self.alphas is not None else [self.alpha]
        if not isinstance(alphas, (list, tuple)) or not alphas:
            raise ConfigError("alphas", "must be a nonempty list")
        for a in [self.alpha, *alphas]:
            if not isinstance(a, (int, float)) or not 0.0 < a <= 1.0:
                raise ConfigError("alpha", f"fractional order must lie in (0, 1], got {a!r}")
        positive = ["lambda0", "m_coef", "dt", "init_amplitude"]
        optional_positive = ["eps", "lx", "ly", "soe_eps"]
        for name in positive:
            v = getattr(self, name)
            if not isinstance(v, (int, float)) or not v > 0:
                raise ConfigError(name, f"must be a positive number, got {v!r}")
        for name in optional_positive:
            v = getattr(self, name)
            if v is not None and (not isinstance(v, (int, float)) or not v > 0):
                raise ConfigError(name, f"must be a positive number, got {v!r}")
        for name in ("s_stab", "s0_stab", "s1_stab"):
            v = getattr(self, name)
            if v is not None and (not isinstance(v, (int, float)) or v < 0):
                raise ConfigError(name, f"must be nonnegative, got {v!r}")
        if self.t_end is not None and (not isinstance(self.t_end, (int, float)) or self.t_end < 0):
            raise ConfigError("t_end", f"must be nonnegative, got {self.t_end!r}")
        for name in ("nx", "ny"):
            v = getattr(self, name)
            if not isinstance(v, int) or v < 4 or v % 2:
                raise ConfigError(name, f"must be an even integer >= 4, got {v!r}")
        if not isinstance(self.seed, int) or not 0 <= self.seed < 2**64:
            raise ConfigError("seed", "must be an unsigned 64-bit integer")
        if not isinstance(self.record_every, int) or self.record_every < 1:
            raise ConfigError("record_every", "must be a positive integer")
        if not isinstance(self.workers, int) or self.workers < 1:
            raise ConfigError("workers", "must be a positive integer")
        if self.fit_window is not None:
            w = self.fit_window
            if len(w) != 2 or not 0 < w[0] < w[1]:
                raise ConfigError("fit_window", f"need [t_min, t_max] with 0 < t_min < t_max, got {w!r}")
        if self.fit_channels is not None:
            for ch in self.fit_channels:
                if ch not in ("energy", "roughness"):
                    raise ConfigError("fit_channels", f"unknown channel {ch!r}")
        if self.snapshot_times is not None:
            if any(not isinstance(s, (int, float)) or s < 0 for s in self.snapshot_times):
                raise ConfigError("snapshot_times", "times must be nonnegative numbers")

    def resolved(self) -> "RunConfig":
        """Copy with every model-dependent default filled in."""
        mbe = _is_mbe(self.model)
        r = dataclasses.replace(self)
        if r.eps is None:
            r.eps = 0.1 if mbe else 0.05
        if r.lx is None:
            r.lx = 10 * math.pi if mbe else 4 * math.pi
        if r.ly is None:
            r.ly = r.lx
        if r.t_end is None:
            r.t_end = 200.0 if mbe else 150.0
        if r.init_mean is None:
            r.init_mean = 0.0 if (mbe or r.paper_literal_init or r.model == "LINEAR") else 0.5
        if r.alphas is None:
            r.alphas = [r.alpha]
        if r.snapshot_times is None:
            r.snapshot_times = list(_MBE_SNAPSHOTS if mbe else _FCH_SNAPSHOTS)
        if r.fit_window is None:
            r.fit_window = [r.t_end / 15.0, r.t_end]
        if r.fit_channels is None:
            r.fit_channels = {
                "FMBE_SLOPE": ["energy", "roughness"],
                "FMBE_NOSLOPE": ["roughness"],
            }.get(r.model, ["energy"])
        if r.model == "FCH":
            lam_max = r.lambda0
            r.s0_stab = lam_max * r.eps**2 if r.s0_stab is None else r.s0_stab
            r.s1_stab = 2 * lam_max if r.s1_stab is None else r.s1_stab
        elif r.s_stab is None:
            r.s_stab = min(2.0 / r.eps**2, 20.0)
        return r

    def model_spec(self, alpha: float | None = None) -> ModelSpec:
        r = self.resolved()
        return ModelSpec(
            kind=r.model,
            alpha=r.alpha if alpha is None else alpha,
            eps=r.eps,
            lambda0=r.lambda0,
            mobility_kind=r.mobility,
            m_coef=r.m_coef,
            s_stab=r.s_stab,
            s0_stab=r.s0_stab,
            s1_stab=r.s1_stab,
            dt=r.dt,
            t_end=r.t_end,
            dealias=r.dealias,
        )

    def grid(self) -> Grid:
        r = self.resolved()
        return Grid(r.nx, r.ny, r.lx, r.ly)


def load_config(path) -> RunConfig:
    """Read a JSON config, or a run manifest (whose ``config`` block is replayed)."""
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError("<file>", f"{path} is not valid JSON: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError("<file>", "top level must be a JSON object")
    if "manifest_version" in data:
        data = data["config"]
    return RunConfig.from_dict(data)


@dataclass
class RunResult:
    out_dir: Path
    series: TimeSeries
    fits: dict[str, PowerLawFit] = field(default_factory=dict)
    k_exp: int = 0
    steps: int = 0


@dataclass
class SweepResult:
    out_dir: Path
    runs: dict[float, RunResult]
    regression: dict[str, tuple[float, float]] = field(default_factory=dict)


def _prepare_out(out_dir, force: bool) -> Path:
    out = Path(out_dir)
    if out.exists() and any(out.iterdir()) and not force:
        raise OutputExistsError(f"output directory {out} exists and is not empty; pass --force to overwrite")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _fmt_time(t: float) -> str:
    return f"{t:g}".replace(".", "p")


def run(config: RunConfig, out_dir, force: bool = False, alpha: float | None = None) -> RunResult:
    """Simulate one configuration from ``t=0`` to ``t_end`` and write its artifacts.

    Produces ``series.csv``, ``fit.txt``, ``manifest.json``, snapshot pairs
    under ``snapshots/``, ``kernel.csv`` for fractional orders, and optional
    SVG plots.
    """
    config.validate()
    cfg = config.resolved()
    if alpha is not None:
        cfg.alpha = alpha
        cfg.alphas = [alpha]
    spec = cfg.model_spec()
    grid = cfg.grid()
    out = _prepare_out(out_dir, force)
    snap_dir = out / "snapshots"
    snap_dir.mkdir(exist_ok=True)

    n_steps = spec.n_steps
    snap_steps = {int(round(ts / cfg.dt)): ts for ts in cfg.snapshot_times if ts <= cfg.t_end + 1e-12}
    phi0 = initial_field(grid, cfg.seed, cfg.init_amplitude, cfg.init_mean)
    state = start(phi0, spec, cfg.soe_eps) if n_steps > 0 else None
    k_exp = state.caputo.kernel.k_exp if state is not None and state.caputo.kernel is not None else 0

    rec = _Recorder()
    header_base = {"model": cfg.model, "alpha": cfg.alpha, "seed": cfg.seed, "rng_algorithm": RNG_ALGORITHM}

    def record(phi, t, n):
        rec.append(t, model_energy(phi, spec), roughness(phi), mass(phi))
        if n in snap_steps:
            write_snapshot(snap_dir / f"phi_t{_fmt_time(snap_steps[n])}", phi, {**header_base, "time": t, "step": n})

    record(phi0, 0.0, 0)
    report_every = max(1, n_steps // 20)
    for n in range(1, n_steps + 1):
        step(state, spec)
        if n % cfg.record_every == 0 or n == n_steps or n in snap_steps:
            record(state.phi, state.time, n)
        if cfg.progress and n % report_every == 0:
            print(f"[{cfg.model} alpha={cfg.alpha:g}] {100 * n / n_steps:3.0f}% t={state.time:.4g}", file=sys.stderr, flush=True)

    series = rec.series()
    write_series_csv(series, out / "series.csv")
    if state is not None and state.caputo.kernel is not None:
        write_kernel_csv(state.caputo.kernel, out / "kernel.csv")

    fits = {}
    for ch in cfg.fit_channels:
        try:
            fits[ch] = fit_power_law(series, ch, cfg.fit_window)
        except FitError as exc:
            log.warning("skipping %s fit: %s", ch, exc)
    (out / "fit.txt").write_text("\n".join(format_fit_report(f) for f in fits.values()))
    if cfg.emit_svg:
        for ch, f in fits.items():
            loglog_svg(
                out / f"plot_{ch}.svg",
                [(f"alpha={cfg.alpha:g}", series.t[1:], series.channel(ch)[1:])],
                [(f.t_min, f.t_max, f.intercept, f.exponent)],
                channel=ch,
                title=f"{cfg.model} alpha={cfg.alpha:g}",
            )

    manifest = {
        "manifest_version": MANIFEST_VERSION,
        "code_version": __version__,
        "config": cfg.to_dict(),
        "rng_algorithm": RNG_ALGORITHM,
        "soe": None if not k_exp else {
            "beta": state.caputo.kernel.beta,
            "k_exp": k_exp,
            "eps": state.caputo.kernel.eps_target,
            "max_residual": state.caputo.kernel.max_residual,
        },
        "steps": n_steps,
        "artifacts": sorted(str(p.relative_to(out)) for p in out.rglob("*") if p.is_file()),
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return RunResult(out, series, fits, k_exp, n_steps)


def _run_one(args):
    config, out_dir, force, alpha = args
    return alpha, run(config, out_dir, force=force, alpha=alpha)


def sweep(config: RunConfig, out_dir, force: bool = False) -> SweepResult:
    """Run every alpha in ``config.alphas`` and tabulate the fitted exponents.

    Writes ``summary.csv`` (first fit channel) and ``summary_<channel>.csv``
    with columns ``alpha,slope,residual``.  With three or more orders the
    least-squares slope of exponent against alpha goes to ``regression.txt``.
    """
    config.validate()
    cfg = config.resolved()
    out = _prepare_out(out_dir, force)
    jobs = [(cfg, out / f"alpha_{a:g}", force, float(a)) for a in cfg.alphas]
    if cfg.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=min(cfg.workers, len(jobs))) as pool:
            results = dict(pool.map(_run_one, jobs))
    else:
        results = dict(map(_run_one, jobs))

    alphas = [float(a) for a in cfg.alphas]
    regression = {}
    for i, ch in enumerate(cfg.fit_channels):
        rows = [(a, results[a].fits[ch]) for a in alphas if ch in results[a].fits]
        lines = ["alpha,slope,residual"] + [f"{a:.17g},{f.slope:.17g},{f.rms_residual:.17g}" for a, f in rows]
        text = "\n".join(lines) + "\n"
        (out / f"summary_{ch}.csv").write_text(text)
        if i == 0:
            (out / "summary.csv").write_text(text)
        if len(rows) >= 3:
            x = np.array([a for a, _ in rows])
            y = np.array([f.slope for _, f in rows])
            coef = np.polyfit(x, y, 1)
            regression[ch] = (float(coef[0]), float(coef[1]))
        if cfg.emit_svg and rows:
            scatter_fit_svg(
                out / f"summary_{ch}.svg",
                [a for a, _ in rows],
                [f.slope for _, f in rows],
                regression.get(ch),
                title=f"{cfg.model} {ch} exponent vs alpha",
            )
            curves = [(f"alpha={a:g}", results[a].series.t[1:], results[a].series.channel(ch)[1:]) for a, _ in rows]
            fits = [(f.t_min, f.t_max, f.intercept, f.exponent) for _, f in rows]
            loglog_svg(out / f"plot_{ch}.svg", curves, fits, channel=ch, title=f"{cfg.model} {ch}")
    if regression:
        (out / "regression.txt").write_text(
            "".join(f"channel = {ch}\nslope = {s:.17g}\nintercept = {b:.17g}\n\n" for ch, (s, b) in regression.items())
        )
    return SweepResult(out, results, regression)


def refit(series_path, channel: str, window=None) -> PowerLawFit:
    series = read_series_csv(series_path)
    return fit_power_law(series, channel, window)
