import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from fracpf.observables import (
    FitError,
    PowerLawRegressor,
    TimeSeries,
    fit_power_law,
    format_fit_report,
    log_subsample,
    mass,
    parse_fit_report,
    read_series_csv,
    roughness,
    write_series_csv,
)
from fracpf.spectral import Field, Grid

G = Grid(16, 16, 2 * math.pi, 2 * math.pi)


def power_series(c, p, t=None):
    t = np.linspace(0.1, 150, 1500) if t is None else t
    y = c * t**p
    return TimeSeries(t, y, y, np.zeros_like(t))


def test_roughness_of_sine():
    f = Field.from_function(G, lambda x, y: 3.0 + np.sin(x))
    assert roughness(f) == pytest.approx(1 / math.sqrt(2), rel=1e-14)
    assert roughness(Field(G, np.full(G.shape, 4.0))) == 0.0


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, (16, 16), elements=st.floats(-100, 100)))
def test_roughness_variance_identity(a):
    f = Field(G, a)
    w2 = np.mean(a**2) - np.mean(a) ** 2
    assert roughness(f) ** 2 == pytest.approx(max(w2, 0.0), rel=1e-9, abs=1e-9 * (1 + np.mean(a**2)))
    assert mass(f) == pytest.approx(np.mean(a) * G.area, rel=1e-12, abs=1e-10)


class TestFit:
    def test_exact_decay(self):
        fit = fit_power_law(power_series(2.0, -1 / 3), "energy")
        assert fit.slope == pytest.approx(1 / 3, abs=1e-12)
        assert fit.decay and fit.exponent == pytest.approx(-1 / 3, abs=1e-12)
        assert fit.intercept == pytest.approx(math.log10(2.0), abs=1e-12)
        assert fit.rms_residual < 1e-12
        assert (fit.t_min, fit.t_max) == (10.0, 150.0)

    def test_exact_growth(self):
        fit = fit_power_law(power_series(0.5, 0.45), "roughness", window=(20, 100))
        assert fit.slope == pytest.approx(0.45, abs=1e-12)
        assert not fit.decay
        assert fit.t_min == 20 and fit.t_max == 100

    def test_log_subsampling_is_optional(self):
        s = power_series(1.0, -0.2)
        a = fit_power_law(s, "energy")
        b = fit_power_law(s, "energy", n_target=None)
        assert a.n_points <= 60 < b.n_points
        assert a.slope == pytest.approx(b.slope, abs=1e-12)

    def test_too_few_points(self):
        s = power_series(1.0, 1.0, t=np.array([1.0, 2.0]))
        with pytest.raises(FitError, match="fewer than 3"):
            fit_power_law(s, "energy")

    def test_window_outside_data(self):
        with pytest.raises(FitError, match="outside"):
            fit_power_law(power_series(1.0, 1.0), "energy", window=(1.0, 500.0))

    def test_sparse_window(self):
        with pytest.raises(FitError, match="fewer than 3"):
            fit_power_law(power_series(1.0, 1.0), "energy", window=(10.0, 10.1))

    def test_nonpositive_values(self):
        t = np.linspace(1, 10, 50)
        s = TimeSeries(t, -t, t, t)
        with pytest.raises(FitError, match="nonpositive"):
            fit_power_law(s, "energy")

    def test_unknown_channel(self):
        with pytest.raises(ValueError):
            fit_power_law(power_series(1.0, 1.0), "mass")


@settings(max_examples=50, deadline=None)
@given(
    c=st.floats(1e-3, 1e3),
    p=st.floats(-2, 2),
    scale=st.floats(1e-3, 1e3),
)
def test_fit_recovers_exponent_and_is_scale_invariant(c, p, scale):
    s = power_series(c, p)
    base = fit_power_law(s, "energy")
    scaled = fit_power_law(TimeSeries(s.t, scale * s.energy, s.roughness, s.mass), "energy")
    assert base.exponent == pytest.approx(p, abs=1e-9)
    assert scaled.exponent == pytest.approx(base.exponent, abs=1e-9)
    assert scaled.intercept - base.intercept == pytest.approx(math.log10(scale), abs=1e-9)


class TestRegressor:
    def test_sklearn_protocol(self):
        reg = PowerLawRegressor()
        assert reg.get_params() == {"base": 10.0}
        assert clone(reg).base == 10.0
        with pytest.raises(NotFittedError):
            reg.predict([1.0])
        t = np.geomspace(1, 100, 20)
        reg.fit(t, 3 * t**0.25)
        np.testing.assert_allclose(reg.predict(t), 3 * t**0.25, rtol=1e-12)
        assert reg.score(t, 3 * t**0.25) == pytest.approx(1.0)

    def test_natural_log_base(self):
        t = np.geomspace(1, 100, 20)
        reg = PowerLawRegressor(base=math.e).fit(t, 5 * t**-1.5)
        assert reg.exponent_ == pytest.approx(-1.5)
        assert reg.intercept_ == pytest.approx(math.log(5))


def test_log_subsample():
    t = np.linspace(1, 1000, 10_000)
    idx = log_subsample(t, 60)
    assert 50 <= idx.size <= 60
    assert np.all(np.diff(idx) > 0)
    ratios = t[idx][1:] / t[idx][:-1]
    assert ratios.max() / ratios.min() < 1.2
    np.testing.assert_array_equal(log_subsample(t[:10], 60), np.arange(10))


def test_series_validation():
    with pytest.raises(ValueError):
        TimeSeries([0, 1], [1, 2], [1], [1, 2])
    with pytest.raises(ValueError):
        TimeSeries([1, 0], [1, 2], [1, 2], [1, 2])
    with pytest.raises(ValueError):
        TimeSeries([0, 1], [1, np.inf], [1, 2], [1, 2])
    assert len(TimeSeries.empty()) == 0


def test_series_csv_round_trip(tmp_path):
    t = np.linspace(0, 1, 11)
    s = TimeSeries(t, np.exp(-t) / 3, np.sqrt(t) * math.pi, np.full_like(t, 1 / 7))
    path = tmp_path / "series.csv"
    write_series_csv(s, path)
    assert path.read_text().splitlines()[0] == "t,energy,roughness,mass"
    back = read_series_csv(path)
    for name in ("t", "energy", "roughness", "mass"):
        np.testing.assert_array_equal(getattr(back, name), getattr(s, name))


@pytest.mark.parametrize(
    "text,msg",
    [("", "empty"), ("a,b\n", "header"), ("t,energy,roughness,mass\n1,2,3\n", "4 columns"),
     ("t,energy,roughness,mass\n1,2,x,4\n", "non-numeric")],
)
def test_series_csv_malformed(tmp_path, text, msg):
    path = tmp_path / "bad.csv"
    path.write_text(text)
    with pytest.raises(ValueError, match=msg):
        read_series_csv(path)


def test_fit_report_round_trip():
    fit = fit_power_law(power_series(2.0, -0.3), "energy")
    text = format_fit_report(fit)
    assert "direction = decay" in text
    (back,) = parse_fit_report(text)
    assert back == fit
    two = parse_fit_report(text + "\n" + format_fit_report(fit))
    assert len(two) == 2
