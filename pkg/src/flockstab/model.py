"""State types, right-hand sides and coordinate changes for the planar swarm

    r_k'' = (1 - |r_k'|^2) r_k' - (r_k - R),    R = mean(r)

together with its velocity, equal-velocity, sigma-v and moving-frame forms.

Flat vector layouts used by the compiled kernels (all kernels have the
signature ``f(t, y, p)`` expected by :func:`flockstab.integrate.integrate`):

* main:   [r_1x, r_1y, ..., r_nx, r_ny, v_1x, v_1y, ..., v_nx, v_ny]
* frame:  [w_1..w_n, y_1..y_n, x_1..x_{n-1}, u_1..u_n]   (x_n = -sum x_k)
* sigmav: [sx_1..sx_{n-1}, sy_1..sy_{n-1}, vx_1..vx_{n-1}, vy_1..vy_{n-1}, vx_n, vy_n]
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit
from scipy.integrate import cumulative_trapezoid
from scipy.interpolate import CubicSpline

from .integrate import register_domain_check

FRAME_EPS = 1e-8


class SingularFrameError(ValueError):
    """Mean velocity too small for the moving frame to be defined."""


def _as_planar(a, name):
    a = np.array(a, dtype=float)
    if a.ndim != 2 or a.shape[1] != 2:
        raise ValueError(f"{name} must have shape (n, 2), got {a.shape}")
    return a


def perp(a):
    """a -> a_perp = (-a_2, a_1), row-wise."""
    a = np.asarray(a, dtype=float)
    return np.stack([-a[..., 1], a[..., 0]], axis=-1)


def comp(a, b):
    """Component of a along b."""
    b = np.asarray(b, dtype=float)
    return np.asarray(a, dtype=float) @ b / np.linalg.norm(b)


def ort(a, b):
    """Component of a along b_perp."""
    b = np.asarray(b, dtype=float)
    return np.asarray(a, dtype=float) @ perp(b) / np.linalg.norm(b)


@dataclass(frozen=True)
class SwarmState:
    t: float
    positions: np.ndarray
    velocities: np.ndarray

    def __post_init__(self):
        r = _as_planar(self.positions, "positions")
        v = _as_planar(self.velocities, "velocities")
        if r.shape != v.shape:
            raise ValueError("positions and velocities differ in length")
        if r.shape[0] < 2:
            raise ValueError("need at least two agents")
        if not (np.all(np.isfinite(r)) and np.all(np.isfinite(v))):
            raise ValueError("non-finite entries in swarm state")
        object.__setattr__(self, "positions", r)
        object.__setattr__(self, "velocities", v)

    @property
    def n(self):
        return self.positions.shape[0]

    @property
    def R(self):
        return self.positions.mean(axis=0)

    @property
    def V(self):
        return self.velocities.mean(axis=0)

    def to_vector(self):
        return np.concatenate([self.positions.ravel(), self.velocities.ravel()])

    @classmethod
    def from_vector(cls, t, vec):
        vec = np.asarray(vec, dtype=float)
        n = vec.size // 4
        return cls(t, vec[: 2 * n].reshape(n, 2), vec[2 * n:].reshape(n, 2))


@dataclass(frozen=True)
class SwarmState3D:
    t: float
    positions: np.ndarray
    velocities: np.ndarray

    def __post_init__(self):
        r = np.array(self.positions, dtype=float)
        v = np.array(self.velocities, dtype=float)
        if r.ndim != 2 or r.shape[1] != 3 or r.shape != v.shape:
            raise ValueError("3D state needs matching (n, 3) arrays")
        if not (np.all(np.isfinite(r)) and np.all(np.isfinite(v))):
            raise ValueError("non-finite entries in swarm state")
        object.__setattr__(self, "positions", r)
        object.__setattr__(self, "velocities", v)

    @property
    def n(self):
        return self.positions.shape[0]

    def to_vector(self):
        return np.concatenate([self.positions.ravel(), self.velocities.ravel()])

    @classmethod
    def from_vector(cls, t, vec):
        vec = np.asarray(vec, dtype=float)
        n = vec.size // 6
        return cls(t, vec[: 3 * n].reshape(n, 3), vec[3 * n:].reshape(n, 3))


@dataclass(frozen=True)
class MeanField:
    V: np.ndarray
    speed: float
    Theta: float
    s: float
    m: float


@dataclass(frozen=True)
class FrameState:
    t: float
    w: np.ndarray
    y: np.ndarray
    x: np.ndarray
    u: np.ndarray

    def __post_init__(self):
        w, y, x, u = (np.array(a, dtype=float).ravel() for a in (self.w, self.y, self.x, self.u))
        n = w.size
        if n < 2 or y.size != n or u.size != n or x.size != n - 1:
            raise ValueError(f"frame state sizes w={w.size} y={y.size} x={x.size} u={u.size}")
        for name, a in zip("wyxu", (w, y, x, u)):
            object.__setattr__(self, name, a)

    @property
    def n(self):
        return self.w.size

    @property
    def x_full(self):
        return np.append(self.x, -self.x.sum())

    def to_vector(self):
        return np.concatenate([self.w, self.y, self.x, self.u])

    @classmethod
    def from_vector(cls, t, vec):
        vec = np.asarray(vec, dtype=float)
        n = (vec.size + 1) // 4
        return cls(t, vec[:n], vec[n:2 * n], vec[2 * n:3 * n - 1], vec[3 * n - 1:])

    @classmethod
    def fixed_point(cls, n, t=0.0):
        return cls(t, np.zeros(n), np.zeros(n), np.zeros(n - 1), np.ones(n))


# ---------------------------------------------------------------- main system

@njit(cache=True)
def main_vec(t, z, p):
    n = z.size // 4
    out = np.empty_like(z)
    Rx = 0.0
    Ry = 0.0
    for k in range(n):
        Rx += z[2 * k]
        Ry += z[2 * k + 1]
    Rx /= n
    Ry /= n
    o = 2 * n
    for k in range(n):
        vx = z[o + 2 * k]
        vy = z[o + 2 * k + 1]
        g = 1.0 - vx * vx - vy * vy
        out[2 * k] = vx
        out[2 * k + 1] = vy
        out[o + 2 * k] = g * vx - (z[2 * k] - Rx)
        out[o + 2 * k + 1] = g * vy - (z[2 * k + 1] - Ry)
    return out


@njit(cache=True)
def main3d_vec(t, z, p):
    n = z.size // 6
    out = np.empty_like(z)
    R = np.zeros(3)
    for k in range(n):
        for d in range(3):
            R[d] += z[3 * k + d]
    R /= n
    o = 3 * n
    for k in range(n):
        g = 1.0
        for d in range(3):
            g -= z[o + 3 * k + d] ** 2
        for d in range(3):
            out[3 * k + d] = z[o + 3 * k + d]
            out[o + 3 * k + d] = g * z[o + 3 * k + d] - (z[3 * k + d] - R[d])
    return out


def main_rhs(state: SwarmState):
    """Returns (velocities, accelerations) as (n, 2) arrays."""
    d = main_vec(state.t, state.to_vector(), np.empty(0))
    n = state.n
    return d[: 2 * n].reshape(n, 2), d[2 * n:].reshape(n, 2)


def main_rhs_3d(state: SwarmState3D):
    d = main3d_vec(state.t, state.to_vector(), np.empty(0))
    n = state.n
    return d[: 3 * n].reshape(n, 3), d[3 * n:].reshape(n, 3)


def velocity_acc_rhs(v, vdot):
    """Second derivative of the velocities, obtained by differentiating the main system."""
    v = _as_planar(v, "v")
    vdot = _as_planar(vdot, "vdot")
    if v.shape != vdot.shape:
        raise ValueError("v and vdot must have the same length")
    V = v.mean(axis=0)
    sq = (v * v).sum(axis=1, keepdims=True)
    dot = (v * vdot).sum(axis=1, keepdims=True)
    return (1 - sq) * vdot - 2 * dot * v - (v - V)


@njit(cache=True)
def velocity_acc_vec(t, z, p):
    # [v (n,2) flat, vdot (n,2) flat]
    n = z.size // 4
    out = np.empty_like(z)
    o = 2 * n
    Vx = 0.0
    Vy = 0.0
    for k in range(n):
        Vx += z[2 * k]
        Vy += z[2 * k + 1]
    Vx /= n
    Vy /= n
    for k in range(n):
        vx, vy = z[2 * k], z[2 * k + 1]
        ax, ay = z[o + 2 * k], z[o + 2 * k + 1]
        g = 1.0 - vx * vx - vy * vy
        d = vx * ax + vy * ay
        out[2 * k] = ax
        out[2 * k + 1] = ay
        out[o + 2 * k] = g * ax - 2 * d * vx - (vx - Vx)
        out[o + 2 * k + 1] = g * ay - 2 * d * vy - (vy - Vy)
    return out


# ------------------------------------------------------ equal-velocity class

@njit(cache=True)
def equal_av_vec(t, z, p):
    vx, vy, ax, ay = z[0], z[1], z[2], z[3]
    out = np.empty(4)
    out[0] = ax
    out[1] = ay
    out[2] = (1 - 3 * vx * vx - vy * vy) * ax - 2 * vx * vy * ay
    out[3] = (1 - vx * vx - 3 * vy * vy) * ay - 2 * vx * vy * ax
    return out


@njit(cache=True)
def equal_v_vec(t, z, p):
    vx, vy, c0 = z[0], z[1], z[2]
    g = 1 - vx * vx - vy * vy
    out = np.empty(3)
    out[0] = g * vx + c0
    out[1] = g * vy
    out[2] = 0.0
    return out


def equal_av_rhs(v_x, v_y, a_x, a_y):
    return tuple(equal_av_vec(0.0, np.array([v_x, v_y, a_x, a_y], float), np.empty(0)))


def equal_v_rhs(v_x, v_y, c0):
    return tuple(equal_v_vec(0.0, np.array([v_x, v_y, c0], float), np.empty(0)))


def conserved_quantities(v_x, v_y, a_x, a_y):
    """(q_x, q_y) with q = a - (1 - |v|^2) v, constant along the equal-velocity flow."""
    g = 1 - v_x**2 - v_y**2
    return a_x - g * v_x, a_y - g * v_y


def equal_v_fixed_points(c0):
    """Real fixed points (v, 0, c0) of the equal-velocity system: v (1 - v^2) = -c0.

    For c0 = 0 the whole unit circle is fixed as well; only the axis points
    (-1, 0, 1) are returned here.
    """
    roots = np.roots([-1.0, 0.0, 1.0, c0])
    real = np.sort(roots[np.abs(roots.imag) < 1e-9].real)
    return [(float(v), 0.0, float(c0)) for v in real]


# ------------------------------------------------------------- sigma-v system

def _sigmav_split(z):
    n = (z.size + 2) // 4
    k = n - 1
    return n, z[:k], z[k:2 * k], z[2 * k:3 * k], z[3 * k:4 * k], z[4 * k], z[4 * k + 1]


@njit(cache=True)
def sigmav_vec(t, z, p):
    n = (z.size + 2) // 4
    k1 = n - 1
    out = np.empty_like(z)
    vxn = z[4 * k1]
    vyn = z[4 * k1 + 1]
    mvx = vxn
    mvy = vyn
    ssx = 0.0
    ssy = 0.0
    for k in range(k1):
        mvx += z[2 * k1 + k]
        mvy += z[3 * k1 + k]
        ssx += z[k]
        ssy += z[k1 + k]
    mvx /= n
    mvy /= n
    for k in range(k1):
        vx = z[2 * k1 + k]
        vy = z[3 * k1 + k]
        g = 1.0 - vx * vx - vy * vy
        out[k] = vx - mvx
        out[k1 + k] = vy - mvy
        out[2 * k1 + k] = g * vx - z[k]
        out[3 * k1 + k] = g * vy - z[k1 + k]
    # the last agent uses its own speed factor in both rows
    g = 1.0 - vxn * vxn - vyn * vyn
    out[4 * k1] = g * vxn + ssx
    out[4 * k1 + 1] = g * vyn + ssy
    return out


def swarm_to_sigmav(state: SwarmState):
    s = state.positions - state.R
    v = state.velocities
    return np.concatenate([s[:-1, 0], s[:-1, 1], v[:-1, 0], v[:-1, 1], v[-1]])


def sigmav_rhs(z):
    return sigmav_vec(0.0, np.asarray(z, dtype=float), np.empty(0))


# -------------------------------------------------------------- moving frame

@njit(cache=True)
def frame_vec(t, z, p):
    n = (z.size + 1) // 4
    out = np.empty_like(z)
    w = z[:n]
    y = z[n:2 * n]
    xs = z[2 * n:3 * n - 1]
    u = z[3 * n - 1:]
    Vm = 0.0
    for k in range(n):
        Vm += u[k]
    Vm /= n
    if Vm <= FRAME_EPS:
        out[:] = np.nan
        return out
    x = np.empty(n)
    xn = 0.0
    for k in range(n - 1):
        x[k] = xs[k]
        xn -= xs[k]
    x[n - 1] = xn
    num = 0.0
    for k in range(n):
        num += (1.0 - u[k] * u[k] - w[k] * w[k]) * w[k]
    m = num / n / Vm
    for k in range(n):
        g = 1.0 - u[k] * u[k] - w[k] * w[k]
        out[k] = g * w[k] - y[k] - m * u[k]
        out[n + k] = w[k] - m * x[k]
        out[3 * n - 1 + k] = g * u[k] - x[k] + m * w[k]
    for k in range(n - 1):
        out[2 * n + k] = u[k] - Vm + m * y[k]
    return out


def _frame_domain(z):
    n = (z.size + 1) // 4
    mu = float(np.mean(z[3 * n - 1:]))
    if mu <= FRAME_EPS:
        return f"singular moving frame: mean(u) = {mu:.3g} <= {FRAME_EPS:g}"
    return None


register_domain_check(frame_vec, _frame_domain)


def frame_m_s(w, y, u):
    """Heading rate m and speed rate s = d|V|/dt from frame variables."""
    w = np.asarray(w, dtype=float)
    u = np.asarray(u, dtype=float)
    Vm = u.mean(axis=-1)
    g = 1 - u**2 - w**2
    s = (g * u).mean(axis=-1)
    with np.errstate(divide="ignore", invalid="ignore"):
        m = (g * w).mean(axis=-1) / Vm
    return m, s


def frame_rhs(fs: FrameState):
    """Time derivative of a frame state, returned as a FrameState with the same t."""
    if fs.u.mean() <= FRAME_EPS:
        raise SingularFrameError(f"mean(u) = {fs.u.mean():.3g}")
    return FrameState.from_vector(fs.t, frame_vec(fs.t, fs.to_vector(), np.empty(0)))


def to_moving_frame(state: SwarmState):
    """Project a swarm state onto the frame of its mean velocity.

    Returns (FrameState, MeanField, R).
    """
    V = state.V
    speed = float(np.hypot(*V))
    if speed <= FRAME_EPS:
        raise SingularFrameError(f"|V| = {speed:.3g}, frame undefined")
    e = V / speed
    ep = perp(e)
    d = state.positions - state.R
    x = d @ e
    y = d @ ep
    u = state.velocities @ e
    w = state.velocities @ ep
    fs = FrameState(state.t, w, y, x[:-1], u)
    m, s = frame_m_s(w, y, u)
    mf = MeanField(V=V, speed=speed, Theta=float(np.arctan2(V[1], V[0])), s=float(s), m=float(m))
    return fs, mf, state.R


def cumulative_integral(times, values):
    """Running integral of sampled values, fourth order on smooth data.

    Uses the antiderivative of a not-a-knot cubic spline through the samples,
    which matches the accuracy of the integrators' dense output.
    """
    times = np.asarray(times, dtype=float)
    values = np.asarray(values, dtype=float)
    if times.ndim != 1 or times.size < 2:
        raise ValueError("need at least two samples")
    if np.any(np.diff(times) <= 0):
        raise ValueError("time samples must be strictly increasing")
    if times.size < 4:
        return cumulative_trapezoid(values, times, axis=0, initial=0.0)
    return CubicSpline(times, values, axis=0).antiderivative()(times)


def reconstruct_flow(times, frame_states, Theta0=0.0, c0=(0.0, 0.0)):
    """Rebuild physical positions and velocities from a sampled frame trajectory.

    frame_states is an array of flat frame vectors, one row per sample.
    Returns (positions (T, n, 2), velocities (T, n, 2), Theta (T,), R (T, 2)).
    """
    times = np.asarray(times, dtype=float)
    Z = np.atleast_2d(np.asarray(frame_states, dtype=float))
    if Z.shape[0] != times.size:
        raise ValueError("one frame state per time sample")
    if times.size > 1 and np.any(np.diff(times) <= 0):
        raise ValueError("time samples must be strictly increasing")
    n = (Z.shape[1] + 1) // 4
    w, y = Z[:, :n], Z[:, n:2 * n]
    xs, u = Z[:, 2 * n:3 * n - 1], Z[:, 3 * n - 1:]
    x = np.concatenate([xs, -xs.sum(axis=1, keepdims=True)], axis=1)
    speed = u.mean(axis=1)
    if np.any(speed <= FRAME_EPS):
        raise SingularFrameError("mean(u) not positive along the path")
    m, _ = frame_m_s(w, y, u)
    if times.size > 1:
        Theta = Theta0 + cumulative_integral(times, m)
    else:
        Theta = np.array([float(Theta0)])
    e = np.stack([np.cos(Theta), np.sin(Theta)], axis=1)
    ep = perp(e)
    V = speed[:, None] * e
    R = np.asarray(c0, dtype=float)[None, :] + (cumulative_integral(times, V) if times.size > 1 else 0.0)
    pos = R[:, None, :] + x[..., None] * e[:, None, :] + y[..., None] * ep[:, None, :]
    vel = u[..., None] * e[:, None, :] + w[..., None] * ep[:, None, :]
    return pos, vel, Theta, R


def theta_drift_bound(times, frame_states):
    """Integral of |m| over the sampled window, the a priori bound on |Theta - Theta0|."""
    Z = np.atleast_2d(np.asarray(frame_states, dtype=float))
    n = (Z.shape[1] + 1) // 4
    m, _ = frame_m_s(Z[:, :n], Z[:, n:2 * n], Z[:, 3 * n - 1:])
    return float(cumulative_integral(times, np.abs(m))[-1])


# ---------------------------------------------------------------- helix (3D)

def helix_exact(n, epsilon, theta_list=None):
    """Exact 3D helix solution; returns a callable t -> SwarmState3D.

    The phases must satisfy sum exp(i theta_k) = 0; they default to equally spaced.
    """
    if not 0 < epsilon < 1:
        raise ValueError("epsilon must lie in (0, 1)")
    th = np.arange(n) * 2 * np.pi / n if theta_list is None else np.asarray(theta_list, dtype=float)
    if th.size != n or n < 2:
        raise ValueError("need n >= 2 phases")
    if abs(np.exp(1j * th).sum()) > 1e-12 * n:
        raise ValueError("phases must satisfy sum exp(i theta_k) = 0")
    lift = np.sqrt(1 - epsilon**2)

    def at(t):
        c = np.cos(t + th)
        s = np.sin(t + th)
        pos = np.stack([epsilon * c, epsilon * s, np.full(n, t * lift)], axis=1)
        vel = np.stack([-epsilon * s, epsilon * c, np.full(n, lift)], axis=1)
        return SwarmState3D(t, pos, vel)

    return at


def helix_residual(n, epsilon, theta_list=None, t=0.0):
    """Max |r'' - rhs| on the helix, using the exact second derivative."""
    st = helix_exact(n, epsilon, theta_list)(t)
    _, acc = main_rhs_3d(st)
    exact = st.positions.copy()
    exact[:, :2] *= -1.0
    exact[:, 2] = 0.0
    return float(np.abs(acc - exact).max())
