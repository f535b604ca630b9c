import json
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays
from numba import njit

from flockstab.analysis import ScenarioConfig, make_scenario
from flockstab.integrate import (
    IntegrationError, IntegratorConfig, Trajectory, content_hash, integrate, read_csv, sample_times, write_csv,
    write_metadata,
)
from flockstab.model import main_vec


@njit(cache=True)
def harmonic(t, z, p):
    out = np.empty(2)
    out[0] = -z[1]
    out[1] = z[0]
    return out


@njit(cache=True)
def logistic(t, z, p):
    out = np.empty(1)
    out[0] = 2 * (1 - z[0]) * z[0]
    return out


@njit(cache=True)
def blowup(t, z, p):
    out = np.empty(1)
    out[0] = z[0] * z[0]
    return out


def test_harmonic_period():
    tr = integrate(harmonic, [1.0, 0.0], IntegratorConfig(t_end=2 * np.pi, sample_stride=0.1, rtol=1e-10, atol=1e-12))
    assert np.hypot(*(tr.states[-1] - [1.0, 0.0])) < 1e-8
    assert tr.times[-1] == 2 * np.pi


def test_logistic_speed_law():
    tr = integrate(logistic, [0.25], IntegratorConfig(t_end=10.0, sample_stride=0.5, rtol=1e-10, atol=1e-12))
    exact = 1 / (1 + 3 * np.exp(-2 * tr.times))
    assert np.abs(tr.states[:, 0] - exact).max() < 1e-8


def test_rk4_order():
    st_ = make_scenario(ScenarioConfig("translating-perturbed", 3, 0.3, seed=0))
    ref = integrate(main_vec, st_.to_vector(), IntegratorConfig(method="rk4", t_end=2.0, sample_stride=1.0, dt=1e-4))
    errs = []
    for dt in (0.04, 0.02):
        tr = integrate(main_vec, st_.to_vector(), IntegratorConfig(method="rk4", t_end=2.0, sample_stride=1.0, dt=dt))
        errs.append(np.abs(tr.states[-1] - ref.states[-1]).max())
    assert 12 < errs[0] / errs[1] < 20


def test_python_rhs_matches_compiled():
    cfg = IntegratorConfig(t_end=3.0, sample_stride=0.5)
    a = integrate(harmonic, [1.0, 0.0], cfg)
    b = integrate(lambda t, z, p: np.array([-z[1], z[0]]), [1.0, 0.0], cfg)
    assert np.allclose(a.states, b.states, atol=1e-14)


def test_python_rhs_domain_error():
    def rhs(t, z, p):
        if t > 0.5:
            raise ValueError("outside the domain")
        return -z

    with pytest.raises(IntegrationError, match="domain") as exc:
        integrate(rhs, [1.0], IntegratorConfig(t_end=1.0))
    # reported at the stage time that hit the bad region
    assert 0.5 < exc.value.t < 0.6


def test_blowup_reports_time():
    with pytest.raises(IntegrationError) as exc:
        integrate(blowup, [1.0], IntegratorConfig(t_end=2.0))
    assert 0.9 < exc.value.t < 1.0


def test_step_budget():
    with pytest.raises(IntegrationError, match="budget"):
        integrate(harmonic, [1.0, 0.0], IntegratorConfig(t_end=100.0, max_steps=5))


def test_rejects_bad_input():
    with pytest.raises(IntegrationError):
        integrate(harmonic, [np.nan, 0.0], IntegratorConfig())
    for kw in ({"method": "euler"}, {"t_end": 0.0}, {"sample_stride": 0.0}, {"method": "rk4", "dt": 0.0},
               {"rtol": 0.0}):
        with pytest.raises(ValueError):
            IntegratorConfig(**kw)


def test_sample_times():
    ts = sample_times(0.0, 1.0, 0.3)
    assert np.allclose(ts, [0, 0.3, 0.6, 0.9, 1.0])
    ts = sample_times(0.0, 1.0, 0.1)
    assert ts.size == 11 and ts[-1] == 1.0


def test_trajectory_validation():
    with pytest.raises(ValueError):
        Trajectory([0.0, 1.0], np.zeros((3, 2)))
    with pytest.raises(ValueError):
        Trajectory([1.0, 0.0], np.zeros((2, 2)))
    tr = Trajectory([0.0, 1.0, 2.0], np.zeros((3, 1)))
    assert list(tr.window(0.5, 2.0)) == [False, True, True]


def test_deterministic():
    cfg = IntegratorConfig(t_end=5.0, sample_stride=0.1)
    z0 = make_scenario(ScenarioConfig("translating-perturbed", 4, 0.1, seed=3)).to_vector()
    a, b = integrate(main_vec, z0, cfg), integrate(main_vec, z0, cfg)
    assert np.array_equal(a.states, b.states)


@given(vals=arrays(float, 5, elements=st.floats(allow_nan=False, allow_infinity=False, width=64)))
def test_csv_roundtrip_is_lossless(vals, tmp_path_factory):
    path = tmp_path_factory.mktemp("csv") / "x.csv"
    write_csv(path, np.arange(5.0), {"v": vals})
    back = read_csv(path)
    assert np.array_equal(back["v"], vals) and list(back) == ["t", "v"]


def test_metadata_hash(tmp_path):
    cfg = IntegratorConfig(t_end=2.0)
    m1 = write_metadata(tmp_path / "a.json", cfg, seed=1, inputs={"n": 3})
    m2 = write_metadata(tmp_path / "b.json", cfg, seed=1, inputs={"n": 3})
    m3 = write_metadata(tmp_path / "c.json", cfg, seed=2, inputs={"n": 3})
    assert m1["input_hash"] == m2["input_hash"] != m3["input_hash"]
    assert json.loads((tmp_path / "a.json").read_text())["seed"] == 1
    assert content_hash(np.zeros(3)) != content_hash(np.ones(3))


def test_sample_grid_is_exact():
    cfg = IntegratorConfig(t_end=1.0, sample_stride=0.25)
    tr = integrate(harmonic, [1.0, 0.0], cfg)
    assert np.array_equal(tr.times, [0.0, 0.25, 0.5, 0.75, 1.0])
    assert np.allclose(tr.states[:, 0], np.cos(tr.times), atol=1e-8)
    assert tr.stats["steps"] > 0 and math.isfinite(tr.states.sum())
