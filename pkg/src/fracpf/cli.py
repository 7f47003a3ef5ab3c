"""Command-line entry point: ``fracpf run|sweep|fit|plot``.

Exit codes: 0 success, 2 invalid configuration or input file, 3 numerical
divergence, 4 I/O failure (including refusing to overwrite an output directory).
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .models import DivergenceError
from .observables import FitError, format_fit_report, read_series_csv
from .plotting import PlotError, loglog_svg, scatter_fit_svg
from .runner import ConfigError, RunConfig, load_config, refit, run, sweep

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED, EXIT_IO = 0, 2, 3, 4


def _alpha_list(text: str) -> list[float]:
    try:
        return [float(a) for a in text.split(",") if a.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated list of numbers: {text!r}") from None


def _u64(text: str) -> int:
    v = int(text)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fracpf", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def sim_flags(sp):
        sp.add_argument("--config", type=Path, help="JSON config or a previous run's manifest.json")
        sp.add_argument("--out", type=Path, required=True, help="output directory")
        sp.add_argument("--seed", type=_u64)
        sp.add_argument("--alpha", type=_alpha_list, help="fractional order(s), comma separated")
        sp.add_argument("--force", action="store_true", help="reuse a non-empty output directory")
        sp.add_argument("--emit-svg", action="store_true")
        sp.add_argument("--dealias", action="store_true", help="2/3-rule filtering of nonlinear terms")
        sp.add_argument("--paper-literal-init", action="store_true", help="zero-mean initial noise for FCH")
        sp.add_argument("--quiet", action="store_true", help="no progress lines on stderr")

    sim_flags(sub.add_parser("run", help="simulate one configuration"))
    sim_flags(sub.add_parser("sweep", help="simulate several fractional orders"))

    fp = sub.add_parser("fit", help="re-fit a stored series.csv")
    fp.add_argument("series", type=Path)
    fp.add_argument("--channel", choices=["energy", "roughness"], default="energy")
    fp.add_argument("--window", type=float, nargs=2, metavar=("T_MIN", "T_MAX"))

    pp = sub.add_parser("plot", help="SVG plot of a series.csv or a sweep summary csv")
    pp.add_argument("csv", type=Path)
    pp.add_argument("--channel", choices=["energy", "roughness"], default="energy")
    pp.add_argument("--window", type=float, nargs=2, metavar=("T_MIN", "T_MAX"))
    pp.add_argument("--out", type=Path, required=True)
    return p


def _config_from_args(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    if args.seed is not None:
        cfg.seed = args.seed
    if args.alpha:
        cfg.alpha = args.alpha[0]
        cfg.alphas = list(args.alpha)
    cfg.emit_svg = cfg.emit_svg or args.emit_svg
    cfg.dealias = cfg.dealias or args.dealias
    cfg.paper_literal_init = cfg.paper_literal_init or args.paper_literal_init
    if args.quiet:
        cfg.progress = False
    cfg.validate()
    return cfg


def _summary_json(result) -> dict:
    return {
        "out_dir": str(result.out_dir),
        "steps": result.steps,
        "records": len(result.series),
        "k_exp": result.k_exp,
        "fits": {ch: {"slope": f.slope, "direction": "decay" if f.decay else "growth",
                      "rms_residual": f.rms_residual} for ch, f in result.fits.items()},
    }


def _cmd_run(args) -> int:
    cfg = _config_from_args(args)
    result = run(cfg, args.out, force=args.force)
    print(json.dumps(_summary_json(result), sort_keys=True))
    return EXIT_OK


def _cmd_sweep(args) -> int:
    cfg = _config_from_args(args)
    result = sweep(cfg, args.out, force=args.force)
    summary = {
        "out_dir": str(result.out_dir),
        "runs": {f"{a:g}": _summary_json(r) for a, r in result.runs.items()},
        "regression": {ch: {"slope": s, "intercept": b} for ch, (s, b) in result.regression.items()},
    }
    print(json.dumps(summary, sort_keys=True))
    return EXIT_OK


def _cmd_fit(args) -> int:
    try:
        fit = refit(args.series, args.channel, args.window)
    except ValueError as exc:
        print(f"fracpf fit: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    sys.stdout.write(format_fit_report(fit))
    return EXIT_OK


def _cmd_plot(args) -> int:
    header = args.csv.read_text().splitlines()[:1]
    try:
        if header and header[0].strip() == "alpha,slope,residual":
            data = np.loadtxt(args.csv, delimiter=",", skiprows=1, ndmin=2)
            if data.size == 0:
                raise PlotError("nothing to plot: empty summary")
            line = tuple(np.polyfit(data[:, 0], data[:, 1], 1)) if data.shape[0] >= 3 else None
            scatter_fit_svg(args.out, data[:, 0], data[:, 1], line)
        else:
            series = read_series_csv(args.csv)
            if len(series) == 0:
                raise PlotError("nothing to plot: empty series")
            fits = []
            if len(series) >= 3:
                f = refit(args.csv, args.channel, args.window)
                fits.append((f.t_min, f.t_max, f.intercept, f.exponent))
            t, y = series.t, series.channel(args.channel)
            keep = t > 0
            loglog_svg(args.out, [(args.channel, t[keep], y[keep])], fits, channel=args.channel)
    except (PlotError, FitError, ValueError) as exc:
        print(f"fracpf plot: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    args = _build_parser().parse_args(argv)
    handler = {"run": _cmd_run, "sweep": _cmd_sweep, "fit": _cmd_fit, "plot": _cmd_plot}[args.command]
    try:
        return handler(args)
    except ConfigError as exc:
        print(f"fracpf: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DivergenceError as exc:
        print(f"fracpf: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except OSError as exc:
        print(f"fracpf: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
