import json
import math
import re

import numpy as np
import pytest

from fracpf.cli import main
from fracpf.models import ModelSpec, model_energy
from fracpf.observables import parse_fit_report, read_series_csv, roughness
from fracpf.runner import ConfigError, OutputExistsError, RunConfig, load_config, refit, run, sweep
from fracpf.spectral import read_snapshot

SMALL = dict(nx=16, ny=16, dt=0.01, t_end=1.5, snapshot_times=[0.5, 1.5], progress=False)


def small_config(**kw):
    return RunConfig.from_dict({**SMALL, **kw})


@pytest.fixture(scope="module")
def frac_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("run") / "out"
    return run(small_config(model="FMBE_SLOPE", alpha=0.6, emit_svg=True, fit_window=[0.2, 1.5]), out)


class TestConfig:
    def test_unknown_key(self):
        with pytest.raises(ConfigError) as info:
            RunConfig.from_dict({"modle": "FCH"})
        assert info.value.field == "modle"

    @pytest.mark.parametrize(
        "kw,field",
        [(dict(alpha=1.5), "alpha"), (dict(nx=15), "nx"), (dict(dt=0), "dt"), (dict(model="XYZ"), "model"),
         (dict(fit_window=[5, 1]), "fit_window"), (dict(seed=-1), "seed"), (dict(mobility="both"), "mobility")],
    )
    def test_invalid_fields(self, kw, field):
        with pytest.raises(ConfigError) as info:
            small_config(**kw)
        assert info.value.field == field

    def test_model_defaults(self):
        ch = RunConfig().resolved()
        assert (ch.eps, ch.lx, ch.t_end, ch.init_mean) == (0.05, 4 * math.pi, 150.0, 0.5)
        assert ch.fit_channels == ["energy"] and ch.fit_window == [10.0, 150.0]
        mbe = RunConfig(model="FMBE_NOSLOPE").resolved()
        assert (mbe.eps, mbe.lx, mbe.t_end, mbe.init_mean) == (0.1, 10 * math.pi, 200.0, 0.0)
        assert mbe.fit_channels == ["roughness"] and mbe.s_stab == 20.0
        assert RunConfig(paper_literal_init=True).resolved().init_mean == 0.0

    def test_model_spec(self):
        spec = RunConfig(model="FMBE_SLOPE").model_spec(0.4)
        assert isinstance(spec, ModelSpec) and spec.alpha == 0.4 and spec.eps == 0.1

    def test_bad_json(self, tmp_path):
        p = tmp_path / "c.json"
        p.write_text("{not json")
        with pytest.raises(ConfigError):
            load_config(p)


class TestRun:
    def test_artifacts(self, frac_run):
        out = frac_run.out_dir
        for name in ("series.csv", "fit.txt", "manifest.json", "kernel.csv", "plot_energy.svg", "plot_roughness.svg"):
            assert (out / name).is_file(), name
        assert sorted(p.name for p in (out / "snapshots").iterdir()) == [
            "phi_t0p5.json", "phi_t0p5.raw", "phi_t1p5.json", "phi_t1p5.raw"
        ]
        assert frac_run.steps == 150 and frac_run.k_exp > 0
        assert set(frac_run.fits) == {"energy", "roughness"}

    def test_series_sampling(self, frac_run):
        s = read_series_csv(frac_run.out_dir / "series.csv")
        np.testing.assert_allclose(s.t, np.arange(16) * 0.1, atol=1e-12)
        assert np.ptp(s.mass) < 1e-9

    def test_manifest(self, frac_run):
        m = json.loads((frac_run.out_dir / "manifest.json").read_text())
        assert m["manifest_version"] == 1
        assert m["rng_algorithm"] == "numpy.PCG64"
        assert m["config"]["seed"] == 20180313 and m["config"]["eps"] == 0.1
        assert m["soe"]["k_exp"] == frac_run.k_exp
        assert m["soe"]["beta"] == pytest.approx(1.6)
        assert "series.csv" in m["artifacts"] and "snapshots/phi_t1p5.raw" in m["artifacts"]

    def test_snapshot_matches_series(self, frac_run):
        out = frac_run.out_dir
        s = read_series_csv(out / "series.csv")
        phi, meta = read_snapshot(out / "snapshots" / "phi_t0p5")
        assert meta["step"] == 50 and meta["alpha"] == 0.6
        i = int(np.argmin(np.abs(s.t - 0.5)))
        spec = RunConfig.from_dict(json.loads((out / "manifest.json").read_text())["config"]).model_spec()
        assert abs(model_energy(phi, spec) - s.energy[i]) <= 1e-12 * max(1.0, abs(s.energy[i]))
        assert abs(roughness(phi) - s.roughness[i]) <= 1e-12

    def test_fit_file(self, frac_run):
        fits = parse_fit_report((frac_run.out_dir / "fit.txt").read_text())
        assert [f.channel for f in fits] == ["energy", "roughness"]
        assert fits[0] == frac_run.fits["energy"]

    def test_svg_structure(self, frac_run):
        text = (frac_run.out_dir / "plot_energy.svg").read_text()
        assert text.startswith("<svg")
        assert len(re.findall(r'class="data"', text)) == 1
        assert len(re.findall(r'class="fit"', text)) == 1

    def test_deterministic_and_replayable(self, frac_run, tmp_path):
        again = run(small_config(model="FMBE_SLOPE", alpha=0.6, emit_svg=True, fit_window=[0.2, 1.5]), tmp_path / "a")
        ref = (frac_run.out_dir / "series.csv").read_bytes()
        assert (again.out_dir / "series.csv").read_bytes() == ref
        replay = run(load_config(frac_run.out_dir / "manifest.json"), tmp_path / "b")
        assert (replay.out_dir / "series.csv").read_bytes() == ref
        a, _ = read_snapshot(frac_run.out_dir / "snapshots" / "phi_t1p5")
        b, _ = read_snapshot(replay.out_dir / "snapshots" / "phi_t1p5")
        np.testing.assert_array_equal(a.data, b.data)

    def test_refuses_existing_output(self, frac_run):
        with pytest.raises(OutputExistsError):
            run(small_config(), frac_run.out_dir)

    def test_force_overwrites(self, tmp_path):
        out = tmp_path / "o"
        run(small_config(t_end=0.2, snapshot_times=[]), out)
        res = run(small_config(t_end=0.3, snapshot_times=[]), out, force=True)
        assert read_series_csv(out / "series.csv").t[-1] == pytest.approx(0.3)
        assert res.steps == 30

    def test_seed_changes_result(self, tmp_path):
        a = run(small_config(t_end=0.2, seed=1), tmp_path / "a").series
        b = run(small_config(t_end=0.2, seed=2), tmp_path / "b").series
        assert not np.array_equal(a.roughness, b.roughness)

    def test_zero_length_run(self, tmp_path):
        res = run(small_config(t_end=0.0, snapshot_times=[0.0]), tmp_path / "z")
        assert len(res.series) == 1 and res.fits == {}
        assert (tmp_path / "z" / "snapshots" / "phi_t0.raw").is_file()

    def test_refit(self, frac_run):
        fit = refit(frac_run.out_dir / "series.csv", "roughness", (0.2, 1.5))
        assert fit == frac_run.fits["roughness"]


def test_single_alpha_sweep_has_no_regression(tmp_path):
    res = sweep(small_config(alphas=[1.0], t_end=0.3, snapshot_times=[], fit_window=[0.1, 0.3]), tmp_path / "one")
    assert len((res.out_dir / "summary.csv").read_text().splitlines()) == 2
    assert res.regression == {}
    assert not (res.out_dir / "regression.txt").exists()


def test_sweep(tmp_path):
    cfg = small_config(model="FMBE_SLOPE", alphas=[0.5, 0.75, 1.0], t_end=0.6, fit_window=[0.1, 0.6],
                       snapshot_times=[], emit_svg=True)
    res = sweep(cfg, tmp_path / "sw")
    out = res.out_dir
    assert sorted(p.name for p in out.iterdir() if p.is_dir()) == ["alpha_0.5", "alpha_0.75", "alpha_1"]
    lines = (out / "summary.csv").read_text().splitlines()
    assert lines[0] == "alpha,slope,residual" and len(lines) == 4
    assert (out / "summary_roughness.csv").is_file()
    assert set(res.regression) == {"energy", "roughness"}
    assert "slope =" in (out / "regression.txt").read_text()
    svg = (out / "summary_energy.svg").read_text()
    assert len(re.findall(r'class="marker"', svg)) == 3
    plot = (out / "plot_energy.svg").read_text()
    assert len(re.findall(r'class="data"', plot)) == 3 and len(re.findall(r'class="fit"', plot)) == 3


@pytest.mark.slow
def test_sweep_workers_do_not_change_results(tmp_path):
    kw = dict(model="FMBE_SLOPE", alphas=[0.5, 0.9], t_end=0.3, snapshot_times=[], fit_window=[0.1, 0.3])
    serial = sweep(small_config(**kw), tmp_path / "s")
    pooled = sweep(small_config(workers=2, **kw), tmp_path / "p")
    for a in (0.5, 0.9):
        name = f"alpha_{a:g}/series.csv"
        assert (serial.out_dir / name).read_bytes() == (pooled.out_dir / name).read_bytes()


class TestCli:
    def write_config(self, tmp_path, **kw):
        p = tmp_path / "cfg.json"
        p.write_text(json.dumps({**SMALL, "t_end": 0.3, "snapshot_times": [], **kw}))
        return p

    def test_run_prints_summary(self, tmp_path, capsys):
        cfg = self.write_config(tmp_path, model="FMBE_SLOPE", fit_window=[0.1, 0.3])
        code = main(["run", "--config", str(cfg), "--out", str(tmp_path / "o"), "--alpha", "0.8", "--seed", "5"])
        assert code == 0
        summary = json.loads(capsys.readouterr().out)
        assert summary["steps"] == 30 and summary["k_exp"] > 0
        manifest = json.loads((tmp_path / "o" / "manifest.json").read_text())
        assert manifest["config"]["alpha"] == 0.8 and manifest["config"]["seed"] == 5

    def test_config_error_exit_2(self, tmp_path, capsys):
        cfg = self.write_config(tmp_path, alpha=3.0)
        assert main(["run", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2
        assert "alpha" in capsys.readouterr().err

    def test_existing_output_exit_4(self, tmp_path):
        cfg = self.write_config(tmp_path)
        out = tmp_path / "o"
        assert main(["run", "--config", str(cfg), "--out", str(out)]) == 0
        assert main(["run", "--config", str(cfg), "--out", str(out)]) == 4
        assert main(["run", "--config", str(cfg), "--out", str(out), "--force"]) == 0

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_divergence_exit_3(self, tmp_path, capsys):
        cfg = self.write_config(tmp_path, model="FMBE_SLOPE", s_stab=0.0, dt=5.0, t_end=500.0, init_amplitude=5.0)
        assert main(["run", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 3
        assert "non-finite" in capsys.readouterr().err

    def test_fit_and_plot(self, tmp_path, capsys):
        cfg = self.write_config(tmp_path, model="FMBE_SLOPE")
        out = tmp_path / "o"
        main(["run", "--config", str(cfg), "--out", str(out)])
        capsys.readouterr()
        assert main(["fit", str(out / "series.csv"), "--channel", "roughness", "--window", "0.1", "0.3"]) == 0
        (fit,) = parse_fit_report(capsys.readouterr().out)
        assert fit.channel == "roughness" and fit.t_min == 0.1
        svg = tmp_path / "p.svg"
        assert main(["plot", str(out / "series.csv"), "--channel", "roughness", "--out", str(svg)]) == 0
        text = svg.read_text()
        assert text.count('class="data"') == 1 and text.count('class="fit"') == 1

    def test_degenerate_run_refuses_fit(self, tmp_path, capsys):
        cfg = self.write_config(tmp_path, t_end=0.0)
        out = tmp_path / "o"
        assert main(["run", "--config", str(cfg), "--out", str(out), "--quiet"]) == 0
        assert len(read_series_csv(out / "series.csv")) == 1
        capsys.readouterr()
        assert main(["fit", str(out / "series.csv")]) == 2
        assert "fewer than 3 points" in capsys.readouterr().err

    def test_fit_window_outside_data(self, tmp_path, capsys):
        cfg = self.write_config(tmp_path)
        out = tmp_path / "o"
        main(["run", "--config", str(cfg), "--out", str(out)])
        capsys.readouterr()
        assert main(["fit", str(out / "series.csv"), "--window", "0.1", "50"]) == 2
        assert "[0.1, 50.0]" in capsys.readouterr().err

    def test_plot_empty_series_writes_nothing(self, tmp_path):
        empty = tmp_path / "empty.csv"
        empty.write_text("t,energy,roughness,mass\n")
        svg = tmp_path / "e.svg"
        assert main(["plot", str(empty), "--out", str(svg)]) == 2
        assert not svg.exists()

    def test_plot_summary(self, tmp_path):
        summary = tmp_path / "summary.csv"
        summary.write_text("alpha,slope,residual\n0.5,0.17,0.01\n0.7,0.24,0.01\n0.9,0.3,0.01\n")
        svg = tmp_path / "s.svg"
        assert main(["plot", str(summary), "--out", str(svg)]) == 0
        text = svg.read_text()
        assert text.count('class="marker"') == 3 and text.count('class="fit"') == 1

    def test_malformed_csv_exit_2(self, tmp_path):
        bad = tmp_path / "bad.csv"
        bad.write_text("t,energy\n1,2\n")
        assert main(["fit", str(bad)]) == 2
        assert main(["plot", str(bad), "--out", str(tmp_path / "x.svg")]) == 2

    def test_missing_series_exit_4(self, tmp_path):
        assert main(["fit", str(tmp_path / "nope.csv")]) == 4
