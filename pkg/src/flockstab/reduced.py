"""Central-manifold flow, its polar form, and the Lyapunov machinery built on it.

State layouts for the compiled kernels:

* central: [w_1..w_n, y_1..y_n]
* polar:   [a_1..a_n, theta_1..theta_n]

The polar flow is invariant under (a_k, theta_k) -> (-a_k, theta_k + pi), so
integration may carry negative amplitudes; :func:`normalize_polar` folds them
back to a >= 0.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import math

import numpy as np
from numba import njit

from .manifold import QuadraticMeans

# s_k = -(S_W w^2 + S_WY w y + S_Y y^2) + (S_SWW s_ww + S_SWY s_wy + S_SYY s_yy)
S_LOCAL = (17 / 25, -12 / 25, 8 / 25)
S_MEANS = (43 / 100, 2 / 100, 57 / 100)
# halved sigma weights, a variant kept for comparison; it does not satisfy s = -2Z - w^2
S_MEANS_PRINTED = (43 / 200, 1 / 100, 57 / 200)

MU_A = -59 / 200
MU_E = 1 / 2
MU_QUARTER_SQ = 437 / 1600
DEGENERACY_FACTOR = 1e-3
T_POWER = 2.75


class RefinementRequired(ValueError):
    """Sampling too coarse to follow a phase continuously."""


# ------------------------------------------------------- periodic coefficients

@njit(cache=True)
def _A(th):
    c = np.cos(th)
    s = np.sin(th)
    return -c * c * (17 / 25 * c * c - 12 / 25 * s * c + 8 / 25 * s * s)


@njit(cache=True)
def _E(th):
    c = np.cos(th)
    s = np.sin(th)
    return 43 / 100 * c * c + 2 / 100 * s * c + 57 / 100 * s * s


def coeff_A(theta):
    th = np.asarray(theta, dtype=float)
    c, s = np.cos(th), np.sin(th)
    return -c**2 * (17 / 25 * c**2 - 12 / 25 * s * c + 8 / 25 * s**2)


def coeff_E(theta):
    th = np.asarray(theta, dtype=float)
    c, s = np.cos(th), np.sin(th)
    return 43 / 100 * c**2 + 2 / 100 * s * c + 57 / 100 * s**2


def s_k(w_k, y_k, sigmas: QuadraticMeans, printed=False):
    """Tangential speed factor of agent k on the central manifold.

    printed=True swaps in the halved sigma weights (S_MEANS_PRINTED); the
    default uses the weights that follow from -2 Z_k - w_k^2.
    """
    a, b, c = S_LOCAL
    p, q, r = S_MEANS_PRINTED if printed else S_MEANS
    w_k = np.asarray(w_k, dtype=float)
    y_k = np.asarray(y_k, dtype=float)
    return -(a * w_k**2 + b * w_k * y_k + c * y_k**2) + (
        p * sigmas.sigma_ww + q * sigmas.sigma_wy + r * sigmas.sigma_yy)


def antideriv_B(theta):
    """Positive pi-periodic antiderivative of A + 59/200."""
    th = np.asarray(theta, dtype=float)
    return -17 / 100 * np.sin(2 * th) - 9 / 800 * np.sin(4 * th) - 3 / 25 * np.cos(th)**4 + 1


def antideriv_C_short(theta):
    """A shorter closed form for C, kept for comparison.

    It lacks the 43/400 sin(2 theta) term, so its derivative is off by
    0.215 cos(2 theta); see antideriv_C.
    """
    th = np.asarray(theta, dtype=float)
    return 1 + 231 / 40000 * np.sin(4 * th) - 1 / 400 * np.cos(2 * th) - 43 / 160000 * np.cos(4 * th)


def antideriv_C(theta):
    """Positive pi-periodic antiderivative of (cos^2/2 + E/2)^2 - 437/1600."""
    th = np.asarray(theta, dtype=float)
    return antideriv_C_short(th) + 43 / 400 * np.sin(2 * th)


def quarter_square(theta):
    """(cos^2/2 + E/2)^2, the coupling integrand."""
    th = np.asarray(theta, dtype=float)
    return (0.5 * np.cos(th)**2 + 0.5 * coeff_E(th))**2


# --------------------------------------------------------------- central flow

@njit(cache=True)
def _s_all(w, y):
    n = w.size
    sww = 0.0
    swy = 0.0
    syy = 0.0
    for k in range(n):
        sww += w[k] * w[k]
        swy += w[k] * y[k]
        syy += y[k] * y[k]
    sww /= n
    swy /= n
    syy /= n
    glob = 43 / 100 * sww + 2 / 100 * swy + 57 / 100 * syy
    s = np.empty(n)
    for k in range(n):
        s[k] = glob - (17 / 25 * w[k] * w[k] - 12 / 25 * w[k] * y[k] + 8 / 25 * y[k] * y[k])
    return s


@njit(cache=True)
def central_vec(t, z, p):
    n = z.size // 2
    w = z[:n]
    y = z[n:]
    s = _s_all(w, y)
    m = 0.0
    for k in range(n):
        m += s[k] * w[k]
    m /= n
    out = np.empty_like(z)
    for k in range(n):
        out[k] = -y[k] - m + w[k] * s[k]
        out[n + k] = w[k]
    return out


def central_m(w, y):
    w = np.asarray(w, dtype=float)
    y = np.asarray(y, dtype=float)
    s = _s_all(w, y)
    # fsum keeps mirror-paired terms cancelling exactly
    return math.fsum(s * w) / w.size, s


def central_rhs(w, y):
    """Returns (w_dot, y_dot, m)."""
    w = np.asarray(w, dtype=float)
    y = np.asarray(y, dtype=float)
    if w.shape != y.shape:
        raise ValueError("w and y must have the same length")
    d = central_vec(0.0, np.concatenate([w, y]), np.empty(0))
    m, _ = central_m(w, y)
    n = w.size
    return d[:n], d[n:], m


# ----------------------------------------------------------------- polar flow

@dataclass(frozen=True)
class PolarState:
    t: float
    a: np.ndarray
    theta: np.ndarray

    def __post_init__(self):
        a = np.array(self.a, dtype=float).ravel()
        th = np.array(self.theta, dtype=float).ravel()
        if a.shape != th.shape:
            raise ValueError("a and theta must have the same length")
        if np.any(a < 0):
            raise ValueError("amplitudes must be nonnegative")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "theta", th)

    @property
    def a_M(self):
        return float(self.a.max())

    @property
    def w(self):
        return self.a * np.cos(self.theta)

    @property
    def y(self):
        return self.a * np.sin(self.theta)

    def constraint(self):
        """sum a_k cos theta_k, zero on the H slice."""
        return float(np.sum(self.a * np.cos(self.theta)))

    def to_vector(self):
        return np.concatenate([self.a, self.theta])


@njit(cache=True)
def polar_vec(t, z, p):
    n = z.size // 2
    a = z[:n]
    th = z[n:]
    w = np.empty(n)
    y = np.empty(n)
    aM = 0.0
    for k in range(n):
        w[k] = a[k] * np.cos(th[k])
        y[k] = a[k] * np.sin(th[k])
        if abs(a[k]) > aM:
            aM = abs(a[k])
    s = _s_all(w, y)
    m = 0.0
    coup = 0.0
    for k in range(n):
        m += s[k] * w[k]
        coup += a[k] * a[k] * _E(th[k])
    m /= n
    coup /= n
    floor = 1e-3 * aM ** 2.75
    out = np.empty_like(z)
    for k in range(n):
        c = np.cos(th[k])
        sn = np.sin(th[k])
        out[k] = -m * c + a[k] ** 3 * _A(th[k]) + a[k] * c * c * coup
        if abs(a[k]) < floor or aM == 0.0:
            out[n + k] = 1.0
        else:
            out[n + k] = 1.0 + m / a[k] * sn - s[k] * sn * c
    return out


def degenerate_mask(a):
    """Agents whose amplitude is below the phase-freezing floor 1e-3 a_M^2.75."""
    a = np.abs(np.asarray(a, dtype=float))
    aM = a.max(axis=-1, keepdims=True)
    return (a < DEGENERACY_FACTOR * aM**T_POWER) | (aM == 0)


def polar_rhs(ps: PolarState):
    """Returns (a_dot, theta_dot, degenerate) where degenerate flags frozen phases."""
    d = polar_vec(ps.t, ps.to_vector(), np.empty(0))
    n = ps.a.size
    return d[:n], d[n:], degenerate_mask(ps.a)


def normalize_polar(states):
    """Fold negative amplitudes: (a, th) -> (-a, th + pi), row-wise."""
    Z = np.array(states, dtype=float, copy=True)
    n = Z.shape[-1] // 2
    neg = Z[..., :n] < 0
    Z[..., :n] = np.abs(Z[..., :n])
    Z[..., n:] = Z[..., n:] + np.pi * neg
    return Z


def extract_polar(times, w_path, y_path, near_origin=0.25):
    """Amplitudes and continuously unwrapped phases from sampled (w, y) paths.

    w_path and y_path have shape (T, n). Returns (a, theta), both (T, n).
    Between consecutive samples the phase moves by the wrapped angle
    difference; a difference of pi/2 or more is accepted only when the chord
    between the samples passes within near_origin * max amplitude of the
    origin (a passage through zero, where theta jumps by pi). Otherwise
    RefinementRequired is raised. Identically zero agents get theta = t.
    """
    times = np.asarray(times, dtype=float)
    W = np.atleast_2d(np.asarray(w_path, dtype=float))
    Y = np.atleast_2d(np.asarray(y_path, dtype=float))
    if W.ndim == 2 and W.shape[0] != times.size:
        W, Y = W.T, Y.T
    if W.shape != Y.shape or W.shape[0] != times.size:
        raise ValueError("w_path and y_path must be (T, n) and match times")
    a = np.hypot(W, Y)
    raw = np.arctan2(Y, W)
    theta = np.empty_like(raw)
    for k in range(W.shape[1]):
        if np.all(a[:, k] == 0):
            theta[:, k] = times
            continue
        rk = raw[:, k].copy()
        # the phase is undefined on the origin: carry the neighbouring one
        zero = np.nonzero(a[:, k] == 0)[0]
        first = int(np.argmax(a[:, k] > 0))
        for i in zero:
            rk[i] = rk[i - 1] if i > first else rk[first]
        d = np.diff(rk)
        d = (d + np.pi) % (2 * np.pi) - np.pi
        d[d == -np.pi] = np.pi
        big = np.abs(d) >= np.pi / 2
        if np.any(big):
            idx = np.nonzero(big)[0]
            p0 = np.stack([W[idx, k], Y[idx, k]], axis=1)
            p1 = np.stack([W[idx + 1, k], Y[idx + 1, k]], axis=1)
            seg = p1 - p0
            L2 = (seg**2).sum(axis=1)
            lam = np.clip(-(p0 * seg).sum(axis=1) / np.where(L2 > 0, L2, 1), 0, 1)
            dist = np.hypot(*(p0 + lam[:, None] * seg).T)
            scale = np.maximum(a[idx, k], a[idx + 1, k])
            bad = dist > near_origin * scale
            # a sample landing exactly on the origin is always a passage
            bad &= (a[idx, k] > 0) & (a[idx + 1, k] > 0)
            if np.any(bad):
                i = int(idx[np.argmax(bad)])
                raise RefinementRequired(
                    f"agent {k}: phase step {d[i]:.3f} rad between t={times[i]:.6g} and "
                    f"t={times[i + 1]:.6g}; refine the sampling")
        theta[0, k] = rk[0]
        theta[1:, k] = rk[0] + np.cumsum(d)
    return a, theta


# ------------------------------------------------------- weights and Lyapunov

def T_norm(r):
    r = np.asarray(r, dtype=float)
    return np.minimum(np.abs(r), 1.0) ** 2


@dataclass(frozen=True)
class LyapunovSample:
    W: float
    Wk: np.ndarray
    Tk: np.ndarray
    largeSet: tuple
    smallSet: tuple


def _scaled(a, aM):
    # a / aM^2.75 in log space; aM^2.75 underflows long before a does
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        r = np.exp(np.log(a) - T_POWER * np.log(aM))
    return np.where((a > 0) & (aM > 0), r, 0.0)


def weight_T(a):
    """Influence weights T_k = T_norm(a_k / a_M^2.75) and the large/small index sets."""
    a = np.abs(np.asarray(a, dtype=float))
    aM = a.max()
    if aM <= 0:
        raise ValueError("weights undefined when every amplitude is zero")
    r = _scaled(a, aM)
    Tk = T_norm(r)
    large = tuple(int(k) for k in np.nonzero(r >= 1)[0])
    small = tuple(int(k) for k in np.nonzero(r < 1)[0])
    return Tk, large, small


def lyapunov_W(a, theta, B=antideriv_B, C=antideriv_C):
    """Weighted Lyapunov function of the polar flow at one instant."""
    a = np.abs(np.asarray(a, dtype=float))
    theta = np.asarray(theta, dtype=float)
    Tk, large, small = weight_T(a)
    cmean = np.mean(Tk * C(theta))
    Wk = a**2 / (2 * a**2 * (B(theta) + cmean) + 1)
    return LyapunovSample(float(Wk.mean()), Wk, Tk, large, small)


def lyapunov_W_path(a, theta, B=antideriv_B, C=antideriv_C):
    """W along a sampled path; a and theta have shape (T, n)."""
    a = np.abs(np.asarray(a, dtype=float))
    theta = np.asarray(theta, dtype=float)
    aM = a.max(axis=1, keepdims=True)
    Tk = T_norm(_scaled(a, aM))
    cmean = np.mean(Tk * C(theta), axis=1, keepdims=True)
    Wk = a**2 / (2 * a**2 * (B(theta) + cmean) + 1)
    return Wk.mean(axis=1)


def lyapunov_W_generic(x, Bk, Cl):
    """Unweighted variant for the generic cubic system: Bk, Cl are values at the current time."""
    x = np.asarray(x, dtype=float)
    Bk = np.asarray(Bk, dtype=float)
    Cl = np.asarray(Cl, dtype=float)
    Wk = x**2 / (2 * x**2 * (Bk + Cl.mean()) + 1)
    return float(Wk.mean()), Wk


# ------------------------------------------------------ generic cubic system

def _as_fn_list(fns, n):
    if callable(fns):
        return lambda t: np.broadcast_to(np.asarray(fns(t), dtype=float), (n,))
    fns = list(fns)
    if len(fns) != n:
        raise ValueError(f"expected {n} coefficient functions, got {len(fns)}")
    return lambda t: np.array([f(t) for f in fns], dtype=float)


@dataclass
class CubicSystemSpec:
    """x_k' = b_k(t) x_k^3 + c_k(t) x_k mean_l(d_l(t) x_l^2) + remainder(x, t).

    b, c, d are either one vectorized callable t -> (n,) or a list of n scalar callables.
    """
    n: int
    b: object
    c: object
    d: object
    remainder: Optional[Callable] = None
    _b: Callable = field(init=False, repr=False)
    _c: Callable = field(init=False, repr=False)
    _d: Callable = field(init=False, repr=False)

    def __post_init__(self):
        self._b = _as_fn_list(self.b, self.n)
        self._c = _as_fn_list(self.c, self.n)
        self._d = _as_fn_list(self.d, self.n)

    def coefficients(self, t):
        return self._b(t), self._c(t), self._d(t)

    def rhs(self):
        """Callable f(t, x, p) for the integrator."""
        return lambda t, x, p=None: cubic_system_rhs(self, x, t)


def cubic_system_rhs(spec: CubicSystemSpec, x, t):
    x = np.asarray(x, dtype=float)
    b, c, d = spec.coefficients(t)
    out = b * x**3 + c * x * np.mean(d * x**2)
    if spec.remainder is not None:
        out = out + np.asarray(spec.remainder(x, t), dtype=float)
    return out


def phased_spec(phases):
    """The cubic system with b_k = A(t+phi_k), c_k = cos^2(t+phi_k), d_k = E(t+phi_k)."""
    ph = np.asarray(phases, dtype=float)
    return CubicSystemSpec(
        ph.size,
        lambda t: coeff_A(t + ph),
        lambda t: np.cos(t + ph)**2,
        lambda t: coeff_E(t + ph),
    )


def mean_value(f, period=None, window=None, t0=0.0, points=4096):
    """Mean of f over one period (periodic trapezoid rule) or over a long window.

    Without a period, the window defaults to 1000 * 2 pi.
    """
    if period is not None:
        t = t0 + period * np.arange(points) / points
        return float(np.mean(f(t)))
    T = 1000 * 2 * np.pi if window is None else window
    npts = max(points, int(T * 20))
    t = np.linspace(t0, t0 + T, npts + 1)
    v = f(t)
    return float(np.trapezoid(v, t) / T)


def positive_antiderivative(f, period, points=4096, floor=1.0):
    """Periodic antiderivative of f - mean(f), shifted so its minimum equals floor.

    Built from the Fourier coefficients of f on one period, so it is exact
    for trigonometric polynomials. Returns (F, mean).
    """
    t = period * np.arange(points) / points
    coef = np.fft.rfft(f(t)) / points
    mu = float(coef[0].real)
    k = np.arange(coef.size)
    omega = 2 * np.pi * k / period
    anti = np.zeros_like(coef)
    anti[1:] = coef[1:] / (1j * omega[1:])
    if points % 2 == 0:
        anti[-1] = 0.0

    def F_raw(x):
        x = np.asarray(x, dtype=float)
        ph = np.exp(1j * np.multiply.outer(x, omega[1:]))
        return 2 * np.real(ph @ anti[1:])

    shift = floor - F_raw(t).min()
    return (lambda x: F_raw(x) + shift), mu


def stability_margin(spec: CubicSystemSpec, period, points=4096):
    """mu(b_k) + mean_l mu((c_l + d_l)^2 / 4) for each k; negative means stable."""
    t = period * np.arange(points) / points
    B = np.array([spec.coefficients(s)[0] for s in t])
    Cc = np.array([spec.coefficients(s)[1] for s in t])
    D = np.array([spec.coefficients(s)[2] for s in t])
    mu_b = B.mean(axis=0)
    mu_q = (0.25 * (Cc + D)**2).mean(axis=0)
    return mu_b + mu_q.mean()


def fancy_ineq(p, q, r):
    """(lhs, rhs) of (sum p q)(sum p r) <= (sum p^2)(sum ((q + r)/2)^2)."""
    p, q, r = (np.asarray(v, dtype=float) for v in (p, q, r))
    if np.any(p < 0) or np.any(q < 0) or np.any(r < 0):
        raise ValueError("inputs must be nonnegative")
    return float((p * q).sum() * (p * r).sum()), float((p * p).sum() * (0.25 * (q + r)**2).sum())


def polar_from_central(w, y):
    a = np.hypot(w, y)
    return a, np.arctan2(y, w)


def central_from_polar(a, theta):
    return a * np.cos(theta), a * np.sin(theta)


def sample_sigmas(w: Sequence[float], y: Sequence[float]) -> QuadraticMeans:
    return QuadraticMeans.from_wy(w, y)
