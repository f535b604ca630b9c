import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from flockstab import reduced as rd
from flockstab.analysis import central_vs_frame_gap
from flockstab.integrate import IntegratorConfig, integrate
from flockstab.manifold import QuadraticMeans, manifold_map, solve_manifold_coeffs


def test_coefficient_values():
    assert abs(rd.coeff_A(0.0) + 17 / 25) < 1e-15
    assert abs(rd.coeff_E(0.0) - 43 / 100) < 1e-15
    assert abs(rd.coeff_E(np.pi / 2) - 57 / 100) < 1e-15
    th = np.linspace(0, 2 * np.pi, 10_000)
    assert rd.coeff_A(th).max() <= 0
    assert np.allclose(rd.coeff_A(th + np.pi), rd.coeff_A(th))


def test_s_k_zero():
    assert rd.s_k(0.0, 0.0, QuadraticMeans(0.0, 0.0, 0.0)) == 0.0


def test_s_k_matches_manifold():
    # s = 1 - u^2 - w^2 on the manifold is -2 Z_k - w_k^2 to quadratic order
    rng = np.random.default_rng(5)
    c = solve_manifold_coeffs()
    for _ in range(20):
        w, y = rng.normal(size=(2, 4))
        _, Z, _ = manifold_map(c, w, y)
        sig = QuadraticMeans.from_wy(w, y)
        for k in range(4):
            assert abs(rd.s_k(w[k], y[k], sig) - (-2 * Z[k] - w[k] ** 2)) < 1e-14
        printed = [rd.s_k(w[k], y[k], sig, printed=True) for k in range(4)]
        assert max(abs(p + 2 * Z[k] + w[k] ** 2) for k, p in enumerate(printed)) > 1e-3


def test_means():
    assert abs(rd.mean_value(rd.coeff_A, np.pi) + 0.295) < 1e-12
    assert abs(rd.mean_value(rd.coeff_E, np.pi) - 0.5) < 1e-12
    assert abs(rd.mean_value(rd.quarter_square, np.pi) - 0.273125) < 1e-12
    assert abs(rd.mean_value(rd.coeff_A, window=200 * np.pi) + 0.295) < 1e-6


def test_antiderivatives():
    th = np.linspace(0, np.pi, 1000, endpoint=False)
    h = 1e-5
    dB = (rd.antideriv_B(th + h) - rd.antideriv_B(th - h)) / (2 * h)
    dC = (rd.antideriv_C(th + h) - rd.antideriv_C(th - h)) / (2 * h)
    assert np.abs(dB - rd.coeff_A(th) - 59 / 200).max() < 1e-6
    assert np.abs(dC - rd.quarter_square(th) + 437 / 1600).max() < 1e-6
    g = np.linspace(0, np.pi, 10_000)
    assert rd.antideriv_B(g).min() > 0 and rd.antideriv_C(g).min() > 0


def test_printed_C_misses_a_term():
    th = np.linspace(0, np.pi, 1000)
    diff = rd.antideriv_C(th) - rd.antideriv_C_short(th)
    assert np.allclose(diff, 43 / 400 * np.sin(2 * th), atol=1e-14)


def test_positive_antiderivative():
    F, mu = rd.positive_antiderivative(rd.coeff_A, np.pi)
    assert abs(mu + 0.295) < 1e-12
    th = np.linspace(0, np.pi, 500)
    h = 1e-5
    assert np.abs((F(th + h) - F(th - h)) / (2 * h) - (rd.coeff_A(th) - mu)).max() < 1e-7
    assert abs(F(np.linspace(0, np.pi, 4096, endpoint=False)).min() - 1.0) < 1e-12


def test_central_fixed_point_and_mirror():
    dw, dy, m = rd.central_rhs(np.zeros(4), np.zeros(4))
    assert not dw.any() and not dy.any() and m == 0
    w = np.array([0.02, -0.01, -0.02, 0.01])
    y = np.array([0.01, 0.03, -0.01, -0.03])
    assert rd.central_m(w, y)[0] == 0.0
    assert rd.central_rhs(w, y)[2] == 0.0


def test_central_tracks_frame():
    g1 = central_vs_frame_gap(n=4, a0=1e-2)
    g2 = central_vs_frame_gap(n=4, a0=2e-2)
    assert g1 < 1e-6
    # the gap is a higher-order effect: doubling a0 multiplies it by about 2^4
    assert 8 < g2 / g1 < 40


def test_polar_chain_rule():
    n = 5
    a = np.full(n, 0.03)
    th = 2 * np.pi * np.arange(n) / n + 0.2
    da, dth, mask = rd.polar_rhs(rd.PolarState(0.0, a, th))
    w, y = rd.central_from_polar(a, th)
    dw, dy, _ = rd.central_rhs(w, y)
    assert np.abs(a * da - (w * dw + y * dy)).max() < 1e-10
    assert np.abs(a**2 * dth - (w * dy - y * dw)).max() < 1e-10
    assert not mask.any()


def test_polar_zero_and_symmetry():
    da, _, mask = rd.polar_rhs(rd.PolarState(0.0, np.zeros(3), np.zeros(3)))
    assert not da.any() and mask.all()
    a = np.array([0.02, -0.01, 0.015])
    th = np.array([0.3, 2.0, 4.0])
    z1 = rd.polar_vec(0.0, np.r_[a, th], np.empty(0))
    z2 = rd.polar_vec(0.0, np.r_[-a, th + np.pi], np.empty(0))
    assert np.allclose(z1[:3], -z2[:3], atol=1e-15) and np.allclose(z1[3:], z2[3:], atol=1e-15)


def test_pair_amplitudes_stay_equal():
    z0 = np.array([0.05, 0.05, 0.4, 0.4 + np.pi])
    tr = integrate(rd.polar_vec, z0, IntegratorConfig(t_end=50.0, sample_stride=0.5))
    assert np.abs(tr.states[:, 0] - tr.states[:, 1]).max() < 1e-12


def test_degenerate_mask():
    a = np.array([0.1, 1e-9, 0.05])
    assert list(rd.degenerate_mask(a)) == [False, True, False]


def test_normalize_polar():
    Z = rd.normalize_polar([[-0.1, 0.2, 1.0, 2.0]])
    assert np.allclose(Z, [[0.1, 0.2, 1.0 + np.pi, 2.0]])


def test_extract_polar_circle():
    t = np.arange(0, 20, 0.01)
    a, th = rd.extract_polar(t, np.cos(t)[:, None], np.sin(t)[:, None])
    assert np.allclose(th[:, 0], t, atol=1e-12) and np.allclose(a, 1)


def test_extract_polar_passage_through_origin():
    t = np.linspace(-1, 1, 201)
    w, y = t, t - t**2
    a, th = rd.extract_polar(t, w[:, None], y[:, None])
    i0 = np.argmin(np.abs(t))
    jump = th[i0 + 1, 0] - th[i0 - 1, 0]
    assert abs(abs(jump) - np.pi) < 0.05
    assert np.abs(np.diff(np.cos(2 * th[:, 0]))).max() < 0.1
    assert np.abs(np.diff(np.sin(2 * th[:, 0]))).max() < 0.1


def test_extract_polar_refuses_coarse_samples():
    t = np.array([0.0, 1.0, 2.0])
    w = np.array([1.0, -0.2, -1.0])
    y = np.array([0.0, 1.0, 0.3])
    with pytest.raises(rd.RefinementRequired):
        rd.extract_polar(t, w[:, None], y[:, None])


def test_extract_polar_zero_agent():
    t = np.linspace(0, 1, 5)
    _, th = rd.extract_polar(t, np.zeros((5, 1)), np.zeros((5, 1)))
    assert np.allclose(th[:, 0], t)


def test_amplitude_lipschitz_along_trajectory():
    rng = np.random.default_rng(2)
    w0, y0 = rng.uniform(-0.05, 0.05, (2, 4))
    w0 -= w0.mean()
    y0 -= y0.mean()
    tr = integrate(rd.central_vec, np.r_[w0, y0], IntegratorConfig(t_end=60.0, sample_stride=0.05))
    a, th = rd.extract_polar(tr.times, tr.states[:, :4], tr.states[:, 4:])
    aM = a.max(axis=1)
    rate = np.array([np.abs(rd.polar_vec(0.0, np.r_[ai, ti], np.empty(0))[:4]).max() for ai, ti in zip(a, th)])
    quot = np.abs(np.diff(aM)) / np.diff(tr.times)
    assert np.all(quot <= np.maximum(rate[:-1], rate[1:]) * 1.05 + 1e-12)


def test_T_norm_and_weights():
    assert rd.T_norm(0.5) == 0.25 and rd.T_norm(2.0) == 1.0
    Tk, large, small = rd.weight_T(np.full(4, 0.01))
    assert np.all(Tk == 1) and large == (0, 1, 2, 3) and small == ()
    with pytest.raises(ValueError):
        rd.weight_T(np.zeros(3))


@given(arrays(float, st.integers(2, 8), elements=st.floats(0, 1)))
@settings(max_examples=200)
def test_weight_bound(a):
    if a.max() == 0:
        return
    Tk, large, small = rd.weight_T(a)
    assert np.all(a**2 * (1 - Tk) <= a.max() ** 5.5 * (1 + 1e-12))
    assert sorted(large + small) == list(range(a.size))


def test_lyapunov_small_equal_amplitudes():
    eps = 1e-3
    th = np.array([0.1, 1.2, 2.5, 4.0])
    K = 2 * max(rd.antideriv_B(th) + np.mean(rd.antideriv_C(th)))
    W = rd.lyapunov_W(np.full(4, eps), th).W
    assert eps**2 / (1 + K * eps**2) <= W <= eps**2


@given(arrays(float, st.integers(2, 6), elements=st.floats(0, 0.05)), arrays(float, 6, elements=st.floats(0, 6.3)))
@settings(max_examples=100)
def test_lyapunov_vs_amplitude(a, th):
    if a.max() == 0:
        return
    aM = a.max()
    W = rd.lyapunov_W(a, th[:a.size]).W
    assert W <= aM**2
    assert aM**2 <= a.size * W * (1 + 10 * aM**2 + 1e-12)


def test_lyapunov_decreases_along_polar_flow():
    rng = np.random.default_rng(11)
    w0, y0 = rng.uniform(-1, 1, (2, 4))
    w0 -= w0.mean()
    y0 -= y0.mean()
    s = 0.05 / np.hypot(w0, y0).max()
    a0, th0 = rd.polar_from_central(s * w0, s * y0)
    tr = integrate(rd.polar_vec, np.r_[a0, th0], IntegratorConfig(t_end=3000.0, sample_stride=0.5))
    a, th = tr.states[:, :4], tr.states[:, 4:]
    W = rd.lyapunov_W_path(a, th)
    late = tr.times >= 2 * np.pi
    assert np.all(np.diff(W[late]) <= 1e-12 * W[late][:-1])
    k, b = np.polyfit(tr.times[late], 1 / W[late], 1)
    fit = k * tr.times[late] + b
    assert k > 0 and np.sqrt(np.mean((1 / W[late] - fit) ** 2)) < 0.05 * np.ptp(1 / W[late])


def test_cubic_scalar_closed_form():
    spec = rd.CubicSystemSpec(1, lambda t: -1.0, lambda t: 0.0, lambda t: 0.0)
    x0 = 0.7
    tr = integrate(spec.rhs(), [x0], IntegratorConfig(t_end=50.0, sample_stride=1.0, rtol=1e-11, atol=1e-13))
    assert np.abs(tr.states[:, 0] - x0 / np.sqrt(1 + 2 * x0**2 * tr.times)).max() < 1e-6
    zero = integrate(rd.phased_spec([0.0, 1.0, 2.0]).rhs(), np.zeros(3), IntegratorConfig(t_end=5.0))
    assert not zero.states.any()


@given(arrays(float, st.integers(1, 6), elements=st.floats(0, 6.3)))
@settings(max_examples=20, deadline=None)
def test_stability_margin_is_phase_independent(ph):
    m = rd.stability_margin(rd.phased_spec(ph), np.pi)
    assert np.allclose(m, -7 / 320, atol=1e-12)


def test_cubic_spec_validation():
    with pytest.raises(ValueError):
        rd.CubicSystemSpec(2, [lambda t: 0.0], lambda t: 0.0, lambda t: 0.0)


@given(st.integers(1, 30).flatmap(lambda d: st.tuples(*[arrays(float, d, elements=st.floats(0, 100))] * 3)))
@settings(max_examples=200)
def test_fancy_ineq(pqr):
    lhs, rhs = rd.fancy_ineq(*pqr)
    assert lhs <= rhs * (1 + 1e-12) + 1e-300


def test_fancy_ineq_rejects_negative():
    with pytest.raises(ValueError):
        rd.fancy_ineq([1.0], [-1.0], [1.0])


def test_lyapunov_generic():
    W, Wk = rd.lyapunov_W_generic([0.1, 0.2], [1.0, 1.0], [0.5, 0.5])
    assert np.allclose(Wk, np.array([0.01, 0.04]) / (2 * np.array([0.01, 0.04]) * 1.5 + 1))
