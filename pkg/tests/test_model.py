import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from flockstab.analysis import ScenarioConfig, frame_to_swarm, make_scenario, rotating_exact, translating_exact
from flockstab.integrate import IntegrationError, IntegratorConfig, integrate
from flockstab.model import (
    FrameState, SingularFrameError, SwarmState, comp, conserved_quantities, cumulative_integral, equal_av_rhs,
    equal_v_fixed_points, equal_v_rhs, frame_m_s, frame_rhs, frame_vec, helix_exact, helix_residual, main_rhs,
    main_rhs_3d, main_vec, ort, perp, reconstruct_flow, sigmav_rhs, swarm_to_sigmav, theta_drift_bound,
    to_moving_frame, velocity_acc_rhs,
)

finite = st.floats(-2, 2, allow_nan=False)


def swarms(n_min=2, n_max=6):
    return st.integers(n_min, n_max).flatmap(
        lambda n: st.tuples(arrays(float, (n, 2), elements=finite), arrays(float, (n, 2), elements=finite)))


def test_vector_helpers():
    a, b = np.array([3.0, 4.0]), np.array([1.0, 0.0])
    assert np.allclose(perp(a), [-4.0, 3.0])
    e = np.array([0.6, 0.8])
    assert np.allclose(comp(a, e) * e + ort(a, e) * perp(e), a)
    assert comp(a, b) == 3.0 and ort(a, b) == 4.0


def test_state_validation():
    with pytest.raises(ValueError):
        SwarmState(0.0, np.zeros((3, 2)), np.zeros((2, 2)))
    with pytest.raises(ValueError):
        SwarmState(0.0, np.full((2, 2), np.nan), np.zeros((2, 2)))


@given(swarms())
def test_flat_roundtrip(rv):
    r, v = rv
    s = SwarmState(1.5, r, v)
    back = SwarmState.from_vector(1.5, s.to_vector())
    assert np.array_equal(back.positions, r) and np.array_equal(back.velocities, v)


def test_translating_has_zero_acceleration():
    st_ = translating_exact(5, 0.8, (1.0, 2.0))(3.0)
    _, acc = main_rhs(st_)
    assert np.abs(acc).max() == 0.0


def test_rotating_residual_exact():
    for n in (3, 4, 7):
        st_ = rotating_exact(2 * np.pi * np.arange(n) / n, (0.3, -1.0))(0.7)
        _, acc = main_rhs(st_)
        assert np.abs(acc + (st_.positions - np.array([0.3, -1.0]))).max() < 1e-14


def test_flocking_collapse_acceleration():
    V = np.array([0.3, -0.4])
    st_ = SwarmState(0.0, np.ones((4, 2)), np.tile(V, (4, 1)))
    _, acc = main_rhs(st_)
    assert np.allclose(acc, (1 - V @ V) * V, atol=0)


def test_velocity_acc_fixed_points():
    for V0 in ([0.3, 0.1], [np.cos(1.0), np.sin(1.0)]):
        v = np.tile(V0, (4, 1))
        assert np.abs(velocity_acc_rhs(v, np.zeros_like(v))).max() == 0.0


def test_velocity_acc_matches_differentiated_trajectory():
    st_ = make_scenario(ScenarioConfig("translating-perturbed", 3, 0.2, seed=1))
    h = 1e-3
    cfg = IntegratorConfig(method="rk4", t_end=4 * h, sample_stride=h, dt=h / 10)
    tr = integrate(main_vec, st_.to_vector(), cfg)
    n = 3
    v = tr.states[:, 2 * n:].reshape(-1, n, 2)
    vdot = np.array([main_rhs(SwarmState.from_vector(t, z))[1] for t, z in zip(tr.times, tr.states)])
    fd = (vdot[3] - vdot[1]) / (2 * h)
    assert np.abs(fd - velocity_acc_rhs(v[2], vdot[2])).max() < 1e-5


def test_equal_v_fixed_points():
    for c0 in (-0.2, -1e-3, 0.0, 0.1):
        for vx, vy, c in equal_v_fixed_points(c0):
            assert abs(vx * (1 - vx**2) + c0) < 1e-12
            assert np.abs(equal_v_rhs(vx, vy, c)).max() < 1e-12
    for phi in np.linspace(0, 2 * np.pi, 17):
        assert np.abs(equal_v_rhs(np.cos(phi), np.sin(phi), 0.0)).max() < 1e-15


@given(st.tuples(*[st.floats(-1.5, 1.5)] * 4))
@settings(max_examples=50)
def test_conserved_quantities_are_first_integrals(z):
    # d/dt q along the flow: q' = a' - g' v - g a with g = 1 - |v|^2
    vx, vy, ax, ay = z
    _, _, dax, day = equal_av_rhs(vx, vy, ax, ay)
    g = 1 - vx**2 - vy**2
    dg = -2 * (vx * ax + vy * ay)
    assert abs(dax - dg * vx - g * ax) < 1e-12
    assert abs(day - dg * vy - g * ay) < 1e-12
    qx, qy = conserved_quantities(vx, vy, ax, ay)
    assert np.isfinite(qx) and np.isfinite(qy)


def test_sigmav_matches_main_flow():
    st_ = make_scenario(ScenarioConfig("translating-perturbed", 4, 0.1, seed=2))
    z = st_.to_vector()
    h = 1e-6
    d = main_vec(0.0, z, np.empty(0))
    plus = swarm_to_sigmav(SwarmState.from_vector(0, z + h * d))
    minus = swarm_to_sigmav(SwarmState.from_vector(0, z - h * d))
    assert np.abs((plus - minus) / (2 * h) - sigmav_rhs(swarm_to_sigmav(st_))).max() < 1e-8


def test_translating_maps_to_fixed_point():
    fs, mf, _ = to_moving_frame(translating_exact(4, 1.1, (2.0, 3.0))(5.0))
    assert np.allclose(fs.to_vector(), FrameState.fixed_point(4).to_vector(), atol=1e-15)
    assert abs(mf.m) < 1e-30 and abs(mf.speed - 1) < 1e-15


@given(swarms(2, 5))
@settings(max_examples=60)
def test_frame_geometry_and_roundtrip(rv):
    r, v = rv
    v = v + np.array([2.5, 0.0])
    st_ = SwarmState(0.0, r, v)
    fs, mf, R = to_moving_frame(st_)
    assert np.allclose(fs.x_full**2 + fs.y**2, ((r - st_.R) ** 2).sum(axis=1), atol=1e-12)
    pos, vel, _, _ = reconstruct_flow([0.0], [fs.to_vector()], mf.Theta, R)
    assert np.abs(pos[0] - r).max() < 1e-12 and np.abs(vel[0] - v).max() < 1e-12


def test_singular_frame():
    with pytest.raises(SingularFrameError):
        to_moving_frame(SwarmState(0.0, np.zeros((2, 2)), np.array([[1.0, 0.0], [-1.0, 0.0]])))


def test_frame_rhs_zero_at_fixed_point():
    d = frame_rhs(FrameState.fixed_point(5))
    assert np.abs(d.to_vector()).max() == 0.0


def test_mirror_symmetric_m_vanishes():
    w = np.array([0.03, -0.01, -0.03, 0.01])
    y = np.array([0.02, 0.05, -0.02, -0.05])
    u = np.array([0.99, 0.98, 0.99, 0.98])
    m, _ = frame_m_s(w, y, u)
    assert m == 0.0


def test_frame_domain_abort_names_singularity():
    fs = FrameState(0.0, np.zeros(3), np.zeros(3), np.zeros(2), np.zeros(3))
    with pytest.raises(IntegrationError, match="singular moving frame"):
        integrate(frame_vec, fs.to_vector(), IntegratorConfig(t_end=1.0))


def test_reconstruct_translating():
    t = np.linspace(0, 5, 51)
    Z = np.tile(FrameState.fixed_point(3).to_vector(), (t.size, 1))
    pos, vel, Theta, R = reconstruct_flow(t, Z)
    assert np.allclose(pos[:, :, 0], t[:, None]) and np.allclose(pos[:, :, 1], 0)
    assert np.allclose(vel, [1.0, 0.0]) and np.all(Theta == 0)
    assert theta_drift_bound(t, Z) == 0.0


def test_reconstruct_follows_main_system():
    st_ = make_scenario(ScenarioConfig("translating-perturbed", 3, 0.05, seed=4))
    fs, mf, R = to_moving_frame(st_)
    cfg = IntegratorConfig(t_end=10.0, sample_stride=0.02, rtol=1e-11, atol=1e-13)
    tf = integrate(frame_vec, fs.to_vector(), cfg)
    tm = integrate(main_vec, st_.to_vector(), cfg)
    pos, vel, Theta, _ = reconstruct_flow(tf.times, tf.states, mf.Theta, R)
    assert np.abs(pos.reshape(len(tf), -1) - tm.states[:, :6]).max() < 1e-7
    assert abs(Theta[-1] - Theta[0]) <= theta_drift_bound(tf.times, tf.states) + 1e-12


def test_cumulative_integral():
    t = np.linspace(0, 3, 301)
    assert np.abs(cumulative_integral(t, np.cos(t)) - np.sin(t)).max() < 1e-9
    assert np.allclose(cumulative_integral(t[:3], np.ones(3)), t[:3])


def test_helix():
    for eps in (0.5, 0.1, 1e-4):
        h = helix_exact(4, eps)
        for t in (0.0, 1.3, 7.0):
            s = h(t)
            R = s.positions.mean(axis=0)
            assert np.allclose(np.linalg.norm(s.positions - R, axis=1), eps)
            assert helix_residual(4, eps, t=t) < 1e-15
    s = helix_exact(3, 1e-9)(2.0)
    assert np.allclose(s.velocities, [0, 0, 1], atol=1e-8)
    with pytest.raises(ValueError):
        helix_exact(3, 0.2, [0.0, 0.1, 0.2])


def test_planar_3d_agree():
    fs = make_scenario(ScenarioConfig("random-near-Zf", 3, 0.1, seed=0))
    st2 = frame_to_swarm(fs)
    from flockstab.model import SwarmState3D
    st3 = SwarmState3D(0.0, np.c_[st2.positions, np.zeros(3)], np.c_[st2.velocities, np.zeros(3)])
    assert np.allclose(main_rhs_3d(st3)[1][:, :2], main_rhs(st2)[1], atol=1e-15)
