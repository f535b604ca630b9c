"""Scenario generators, decay fits and the verification harnesses.

Most experiments run the moving-frame system directly: the quantities of
interest (amplitudes, speed gap, heading rate) are frame quantities, and the
frame keeps the state bounded over long horizons. Physical coordinates are
rebuilt with :func:`flockstab.model.reconstruct_flow` where needed.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .integrate import IntegratorConfig, Trajectory, integrate
from .manifold import ManifoldCoeffs, manifold_map, solve_manifold_coeffs
from .model import (
    FrameState,
    SwarmState,
    SwarmState3D,
    cumulative_integral,
    equal_av_vec,
    equal_v_fixed_points,
    equal_v_vec,
    frame_m_s,
    frame_vec,
    helix_exact,
    main3d_vec,
    main_rhs,
    main_vec,
    reconstruct_flow,
)
from .reduced import lyapunov_W_path

SCENARIO_KINDS = (
    "translating-perturbed",
    "rotating",
    "flocking-collapse",
    "p-fold-symmetric",
    "mirror-symmetric",
    "identical-block",
    "helix-3D",
    "random-near-Zf",
)

_COEFFS: ManifoldCoeffs | None = None


def coeffs() -> ManifoldCoeffs:
    global _COEFFS
    if _COEFFS is None:
        _COEFFS = solve_manifold_coeffs()
    return _COEFFS


# ------------------------------------------------------------------ scenarios

@dataclass(frozen=True)
class ScenarioConfig:
    kind: str
    n: int = 4
    amplitude: float = 0.0
    seed: int = 0
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in SCENARIO_KINDS:
            raise ValueError(f"unknown scenario kind {self.kind!r}")
        if self.n < 2:
            raise ValueError("need n >= 2")
        if self.amplitude < 0:
            raise ValueError("amplitude must be nonnegative")


def on_manifold(w, y, t=0.0):
    """Frame state over (w, y) lifted by the quadratic manifold map."""
    w = np.asarray(w, dtype=float)
    y = np.asarray(y, dtype=float)
    X, Z, _ = manifold_map(coeffs(), w, y)
    return FrameState(t, w, y, X, 1.0 + Z)


def frame_to_swarm(fs: FrameState, Theta0=0.0, c0=(0.0, 0.0)):
    pos, vel, _, _ = reconstruct_flow([fs.t], [fs.to_vector()], Theta0, c0)
    return SwarmState(fs.t, pos[0], vel[0])


def hypotheses_hold(state: SwarmState, delta):
    """Pair distances, speed of V and velocity spread all within delta."""
    r, v = state.positions, state.velocities
    pair = np.max(np.linalg.norm(r[:, None, :] - r[None, :, :], axis=-1))
    V0 = v.mean(axis=0)
    sp = np.linalg.norm(V0)
    spread = np.max(np.linalg.norm(v - V0, axis=1))
    return bool(pair < delta and 1 - delta < sp < 1 + delta and spread < delta)


def _random_wy(n, amplitude, rng):
    w = rng.uniform(-1, 1, n)
    y = rng.uniform(-1, 1, n)
    w -= w.mean()
    y -= y.mean()
    scale = np.hypot(w, y).max()
    return amplitude * w / scale, amplitude * y / scale


def make_scenario(cfg: ScenarioConfig):
    """Build the initial state of a scenario.

    Returns SwarmState for the physical kinds, SwarmState3D for helix-3D, and
    FrameState for the frame kinds (random-near-Zf, mirror-symmetric,
    identical-block).
    """
    n, amp, P = cfg.n, cfg.amplitude, cfg.params
    rng = np.random.default_rng(cfg.seed)
    Theta0 = P.get("Theta0", 0.0)
    e0 = np.array([math.cos(Theta0), math.sin(Theta0)])
    c0 = np.asarray(P.get("c0", (0.0, 0.0)), dtype=float)

    if cfg.kind == "translating-perturbed":
        r = c0 + amp * rng.uniform(-1, 1, (n, 2))
        v = e0 + amp * rng.uniform(-1, 1, (n, 2))
        return SwarmState(0.0, r, v)

    if cfg.kind == "rotating":
        th = np.asarray(P.get("angles", 2 * np.pi * np.arange(n) / n), dtype=float)
        if th.size != n or abs(np.exp(1j * th).sum()) > 1e-12 * n:
            raise ValueError("rotating state needs n angles with sum exp(i theta) = 0")
        sense = P.get("sense", 1)
        z = np.exp(1j * th)
        r = np.stack([z.real, z.imag], axis=1) + c0
        dz = 1j * sense * z
        return SwarmState(0.0, r, np.stack([dz.real, dz.imag], axis=1))

    if cfg.kind == "flocking-collapse":
        speed = P.get("speed", 0.5)
        r = np.tile(c0, (n, 1))
        return SwarmState(0.0, r, np.tile(speed * e0, (n, 1)))

    if cfg.kind == "p-fold-symmetric":
        return symmetric_configuration(P.get("p", n), n, P.get("perturbation", amp),
                                       collapsed=P.get("collapsed", False), c0=c0)

    if cfg.kind == "helix-3D":
        eps = P.get("epsilon", amp if amp > 0 else 0.1)
        return helix_exact(n, eps, P.get("angles"))(0.0)

    if cfg.kind == "mirror-symmetric":
        if n % 2:
            raise ValueError("mirror-symmetric scenario needs an even n")
        h = n // 2
        w, y = _random_wy(h, 1.0, rng)
        w = np.concatenate([w, -w])
        y = np.concatenate([y, -y])
        scale = np.hypot(w, y).max()
        return on_manifold(amp * w / scale if scale else w, amp * y / scale if scale else y)

    if cfg.kind == "identical-block":
        if n < 3:
            raise ValueError("identical-block scenario needs n >= 3")
        phase = P.get("phase", 0.0)
        a1 = amp / (n - 1)
        w = np.full(n, a1 * math.cos(phase))
        y = np.full(n, a1 * math.sin(phase))
        w[-1] = -(n - 1) * w[0]
        y[-1] = -(n - 1) * y[0]
        return on_manifold(w, y)

    # random-near-Zf; explicit w, y parameters replace the random draw
    if "w" in P or "y" in P:
        w = np.asarray(P.get("w", np.zeros(n)), dtype=float)
        y = np.asarray(P.get("y", np.zeros(n)), dtype=float)
        if w.shape != (n,) or y.shape != (n,):
            raise ValueError(f"explicit w and y need {n} entries each")
        if abs(w.sum()) > 1e-12 or abs(y.sum()) > 1e-12:
            raise ValueError("explicit w and y must each sum to zero")
        return on_manifold(w, y)
    w, y = _random_wy(n, amp, rng) if amp > 0 else (np.zeros(n), np.zeros(n))
    delta = P.get("hypotheses_delta")
    fs = on_manifold(w, y)
    if delta is not None and amp > 0:
        # shrink until the smallness conditions hold at delta
        for _ in range(200):
            if hypotheses_hold(frame_to_swarm(fs, Theta0, c0), delta):
                break
            w, y = 0.9 * w, 0.9 * y
            fs = on_manifold(w, y)
        else:
            raise RuntimeError("could not satisfy the hypotheses at the requested delta")
    return fs


def symmetric_configuration(p, n, perturbation=0.0, collapsed=False, c0=(0.0, 0.0)):
    """A p-fold rotationally symmetric swarm about c0 with zero mean velocity.

    Agents come in rings of p; n - p*(n // p) leftover agents sit at the
    center at rest. Ring q has radius 1 + perturbation*q and tangential unit
    speed plus a radial velocity of size perturbation, so every ring is a
    rotating state when perturbation = 0. collapsed=True stacks every agent
    at c0 with a common unit velocity instead (a flocking state).
    """
    if not 3 <= p <= n:
        raise ValueError("need 3 <= p <= n")
    c0 = np.asarray(c0, dtype=float)
    if collapsed:
        return SwarmState(0.0, np.tile(c0, (n, 1)), np.tile([1.0, 0.0], (n, 1)))
    rings = n // p
    zs, dzs = [], []
    for q in range(rings):
        rad = 1.0 + perturbation * q
        z = rad * np.exp(1j * (2 * np.pi * np.arange(p) / p + 0.3 * q))
        zs.append(z)
        dzs.append(1j * z / rad + perturbation * z / rad)
    z = np.concatenate(zs + [np.zeros(n - rings * p)])
    dz = np.concatenate(dzs + [np.zeros(n - rings * p)])
    return SwarmState(0.0, np.stack([z.real, z.imag], 1) + c0, np.stack([dz.real, dz.imag], 1))


def scenario_residual(state, t=0.0):
    """Max |r'' - rhs| of a closed-form scenario at time t, using its exact second derivative.

    Translating: r'' = 0. Rotating (counterclockwise, unit radius): r'' = -(r - c).
    Flocking collapse: r'' = (1 - |V|^2) V along the logistic solution. Helix: see model.
    """
    if isinstance(state, SwarmState3D):
        from .model import main_rhs_3d
        _, acc = main_rhs_3d(state)
        exact = state.positions - state.positions.mean(axis=0)
        exact = -exact
        exact[:, 2] = 0.0
        return float(np.abs(acc - exact).max())
    _, acc = main_rhs(state)
    v = state.velocities
    if np.allclose(state.positions, state.positions[0]) and np.allclose(v, v[0]):
        g = 1 - (v[0] ** 2).sum()
        exact = np.tile(g * v[0], (state.n, 1))
    else:
        exact = -(state.positions - state.R)
    return float(np.abs(acc - exact).max())


# ---------------------------------------------------------- exact solutions

def translating_exact(n, Theta0=0.0, c0=(0.0, 0.0)):
    e = np.array([math.cos(Theta0), math.sin(Theta0)])
    c0 = np.asarray(c0, dtype=float)
    return lambda t: SwarmState(t, np.tile(c0 + t * e, (n, 1)), np.tile(e, (n, 1)))


def rotating_exact(angles, c=(0.0, 0.0), sense=1):
    th = np.asarray(angles, dtype=float)
    c = np.asarray(c, dtype=float)

    def at(t):
        z = np.exp(1j * (th + sense * t))
        dz = 1j * sense * z
        return SwarmState(t, np.stack([z.real, z.imag], 1) + c, np.stack([dz.real, dz.imag], 1))
    return at


def flocking_exact(n, speed0, Theta0=0.0, c0=(0.0, 0.0)):
    """Collapsed swarm: |V|^2 solves the logistic equation, direction fixed."""
    e = np.array([math.cos(Theta0), math.sin(Theta0)])
    c0 = np.asarray(c0, dtype=float)
    b = 1 / speed0**2 - 1

    def speed(t):
        return 1 / np.sqrt(1 + b * np.exp(-2 * t))

    def pos(t):
        # integral of 1/sqrt(1 + b e^{-2s}) from 0 to t
        return np.log((np.exp(t) + np.sqrt(np.exp(2 * t) + b)) / (1 + np.sqrt(1 + b)))

    def at(t):
        return SwarmState(t, np.tile(c0 + pos(t) * e, (n, 1)), np.tile(speed(t) * e, (n, 1)))
    at.speed = speed
    at.c_inf = float(-np.log((1 + np.sqrt(1 + b)) / 2)) * e + c0
    return at


def exact_drift(kind, n=4, t_end=100.0, rtol=1e-10, atol=1e-12, stride=1.0, **kw):
    """Integrate a closed-form scenario and return (residual at t=0, max state error)."""
    cfg = IntegratorConfig(t_end=t_end, sample_stride=stride, rtol=rtol, atol=atol)
    if kind == "translating":
        ex = translating_exact(n, kw.get("Theta0", 0.3), kw.get("c0", (1.0, -2.0)))
        rhs = main_vec
    elif kind == "rotating":
        ex = rotating_exact(kw.get("angles", 2 * np.pi * np.arange(n) / n), kw.get("c0", (0.5, 0.5)))
        rhs = main_vec
    elif kind == "flocking-collapse":
        ex = flocking_exact(n, kw.get("speed", 0.5), kw.get("Theta0", 0.7))
        rhs = main_vec
    elif kind == "helix-3D":
        ex = helix_exact(n, kw.get("epsilon", 0.3), kw.get("angles"))
        rhs = main3d_vec
    else:
        raise ValueError(kind)
    s0 = ex(0.0)
    res0 = scenario_residual(s0)
    traj = integrate(rhs, s0.to_vector(), cfg)
    err = max(np.abs(traj.states[i] - ex(t).to_vector()).max() for i, t in enumerate(traj.times))
    return res0, float(err)


# ------------------------------------------------------------------ fitting

@dataclass(frozen=True)
class DecayFit:
    slope: float
    intercept: float
    window: tuple
    rms_residual: float
    samples: int = 0

    def __post_init__(self):
        if not self.window[0] < self.window[1]:
            raise ValueError("window must satisfy t_lo < t_hi")


def fit_power_law(times, values, window=None, min_samples=20):
    """Least-squares line through (log t, log value) restricted to the window."""
    t = np.asarray(times, dtype=float)
    v = np.asarray(values, dtype=float)
    lo, hi = window if window is not None else (t[0], t[-1])
    sel = (t >= lo) & (t <= hi)
    t, v = t[sel], v[sel]
    if t.size < min_samples:
        raise ValueError(f"only {t.size} samples in window, need {min_samples}")
    if np.any(v <= 0) or np.any(t <= 0):
        raise ValueError("power-law fit needs positive times and values")
    X, Y = np.log(t), np.log(v)
    slope, icpt = np.polyfit(X, Y, 1)
    rms = float(np.sqrt(np.mean((Y - (slope * X + icpt)) ** 2)))
    return DecayFit(float(slope), float(icpt), (float(lo), float(hi)), rms, int(t.size))


def fit_exponential_rate(times, values, window=None, min_samples=20):
    """Slope of log(value) against t."""
    t = np.asarray(times, dtype=float)
    v = np.asarray(values, dtype=float)
    lo, hi = window if window is not None else (t[0], t[-1])
    sel = (t >= lo) & (t <= hi)
    t, v = t[sel], v[sel]
    if t.size < min_samples:
        raise ValueError(f"only {t.size} samples in window, need {min_samples}")
    if np.any(v <= 0):
        raise ValueError("exponential fit needs positive values")
    Y = np.log(v)
    slope, icpt = np.polyfit(t, Y, 1)
    rms = float(np.sqrt(np.mean((Y - (slope * t + icpt)) ** 2)))
    return DecayFit(float(slope), float(icpt), (float(lo), float(hi)), rms, int(t.size))


def log_resample(times, values, window, points=200):
    """Values interpolated at log-spaced times inside the window."""
    tq = np.geomspace(window[0], window[1], points)
    return tq, np.interp(tq, times, values)


def window_mean(times, values, width=2 * np.pi):
    """Trailing moving average over a fixed time width (uniform sampling assumed)."""
    t = np.asarray(times, dtype=float)
    v = np.asarray(values, dtype=float)
    dt = np.median(np.diff(t))
    k = min(v.size, max(1, int(round(width / dt))))
    c = np.cumsum(np.insert(v, 0, 0.0))
    out = np.full_like(v, np.nan)
    out[k:] = (c[k + 1:] - c[1:-k]) / k
    out[:k] = c[1:k + 1] / np.arange(1, k + 1)
    return out


# -------------------------------------------------------- frame diagnostics

def frame_series(traj: Trajectory):
    """Per-sample frame diagnostics: speed |V|, m, s, Theta (from 0), a (T, n), a_M, W."""
    Z = traj.states
    n = (Z.shape[1] + 1) // 4
    w, y = Z[:, :n], Z[:, n:2 * n]
    xs, u = Z[:, 2 * n:3 * n - 1], Z[:, 3 * n - 1:]
    m, s = frame_m_s(w, y, u)
    a = np.hypot(w, y)
    aM = a.max(axis=1)
    theta = np.arctan2(y, w)
    with np.errstate(divide="ignore", invalid="ignore"):
        W = np.where(aM > 0, lyapunov_W_path(a, theta), 0.0)
    x = np.concatenate([xs, -xs.sum(axis=1, keepdims=True)], axis=1)
    out = {
        "speed": u.mean(axis=1),
        "m": m,
        "s": s,
        "Theta": cumulative_integral(traj.times, m),
        "a": a,
        "a_M": aM,
        "W": W,
        "dev": np.max(np.hypot(x, y) + np.hypot(u - u.mean(axis=1, keepdims=True), w), axis=1),
    }
    traj.diagnostics.update(out)
    return out


def run_frame(fs: FrameState, t_end, stride=0.1, rtol=1e-9, atol=1e-12):
    cfg = IntegratorConfig(t_end=t_end, sample_stride=stride, rtol=rtol, atol=atol)
    return integrate(frame_vec, fs.to_vector(), cfg)


@dataclass(frozen=True)
class HeadingAccount:
    Theta: np.ndarray
    Theta_inf: float
    tail_abs_m: float
    envelope: DecayFit | None
    scaled_max_early: float
    scaled_max_late: float


def heading_account(traj: Trajectory, window=(1e2, 1e4), tail_fraction=0.1):
    """Heading Theta(t) = int m, its limit estimate and the tail of int |m|.

    Theta_inf is the mean of Theta over the final tail_fraction of samples.
    The tail of int |m| beyond t_end is bounded with a power-law envelope
    fitted to per-period maxima of |m|. scaled_max_early/late are the maxima
    of sqrt(t)|Theta - Theta_inf| over the first and last decade of the window.
    """
    d = traj.diagnostics if "Theta" in traj.diagnostics else frame_series(traj)
    t, Th, m = traj.times, d["Theta"], d["m"]
    k = max(1, int(tail_fraction * t.size))
    Th_inf = float(Th[-k:].mean())
    env = None
    tail = float("nan")
    try:
        tq, mq = _period_max(t, np.abs(m), window)
        env = fit_power_law(tq, mq, window)
        p = -env.slope
        if p > 1:
            C = math.exp(env.intercept)
            tail = C * t[-1] ** (1 - p) / (p - 1)
    except ValueError:
        pass
    lo, hi = window
    mid = math.sqrt(lo * hi) if hi / lo > 10 else lo * 10
    scaled = np.sqrt(t) * np.abs(Th - Th_inf)
    early = (t >= lo) & (t <= mid)
    late = (t > mid) & (t <= hi)
    return HeadingAccount(Th, Th_inf, tail, env,
                          float(scaled[early].max()) if early.any() else float("nan"),
                          float(scaled[late].max()) if late.any() else float("nan"))


def heading_envelope_fit(traj: Trajectory, window=(1e2, 1e4)):
    """Power-law fit of per-period maxima of |Theta - Theta_inf|.

    Only the first half of the window is used; Theta_inf comes from the
    tail, which biases the envelope towards zero near the end.
    """
    acc = heading_account(traj, window)
    lo, hi = window
    tq, vq = _period_max(traj.times, np.abs(acc.Theta - acc.Theta_inf), (lo, hi / 2))
    return fit_power_law(tq, vq, (lo, hi / 2))


def _period_max(t, v, window, period=2 * np.pi):
    """Maxima of v over consecutive periods inside the window, at the period midpoints."""
    lo, hi = window
    edges = np.arange(lo, hi + 1e-9, period)
    idx = np.searchsorted(t, edges)
    tm, vm = [], []
    for i0, i1, e in zip(idx[:-1], idx[1:], edges[:-1]):
        if i1 > i0:
            tm.append(e + period / 2)
            vm.append(v[i0:i1].max())
    tm, vm = np.array(tm), np.array(vm)
    keep = vm > 0
    return tm[keep], vm[keep]


@dataclass(frozen=True)
class SpeedGapAccount:
    fit: DecayFit
    lag: np.ndarray


def speed_gap_account(traj: Trajectory, window=(1e2, 1e4), points=200):
    """Power-law fit of 1 - |V| over the window and the cumulative lag int (1 - |V|)."""
    d = traj.diagnostics if "speed" in traj.diagnostics else frame_series(traj)
    gap = 1 - d["speed"]
    lag = cumulative_integral(traj.times, gap)
    gm = window_mean(traj.times, gap)
    tq, gq = log_resample(traj.times, gm, window, points)
    return SpeedGapAccount(fit_power_law(tq, gq, window), lag)


def amplitude_fit(traj: Trajectory, window=(1e2, 1e4), points=200):
    d = traj.diagnostics if "a_M" in traj.diagnostics else frame_series(traj)
    tq, aq = log_resample(traj.times, d["a_M"], window, points)
    return fit_power_law(tq, aq, window)


@dataclass(frozen=True)
class DecayReport:
    n: int
    seed: int
    amplitude: float
    a_M: DecayFit
    gap: DecayFit
    heading: HeadingAccount
    steps: int

    @property
    def heading_bounded(self):
        return self.heading.scaled_max_late <= 2 * self.heading.scaled_max_early

    def passes(self, a_band=(-0.55, -0.45), gap_band=(-1.15, -0.85)):
        return {
            "a_M": a_band[0] <= self.a_M.slope <= a_band[1],
            "gap": gap_band[0] <= self.gap.slope <= gap_band[1],
            "heading": bool(self.heading_bounded),
        }


def decay_run(n, seed, amplitude=0.05, t_end=1e4, window=(1e2, 1e4), stride=0.1, rtol=1e-9):
    """Random on-manifold start, frame integration, and the three decay fits."""
    fs = make_scenario(ScenarioConfig("random-near-Zf", n, amplitude, seed))
    traj = run_frame(fs, t_end, stride=stride, rtol=rtol)
    frame_series(traj)
    return DecayReport(n, seed, amplitude, amplitude_fit(traj, window), speed_gap_account(traj, window).fit,
                       heading_account(traj, window), traj.stats["steps"]), traj


def inverse_square_fit(traj: Trajectory, window):
    """Linear fit of 1/a_M^2 against t: slope, intercept and relative rms.

    The averaged amplitude law a' ~ -K a^3 integrates to 1/a^2 = 1/a0^2 + 2 K t,
    which is affine in t at every time scale, unlike log a_M against log t.
    """
    d = traj.diagnostics if "a_M" in traj.diagnostics else frame_series(traj)
    t = traj.times
    sel = (t >= window[0]) & (t <= window[1])
    yv = 1 / window_mean(t, d["a_M"])[sel] ** 2
    k, b = np.polyfit(t[sel], yv, 1)
    rel = float(np.sqrt(np.mean((yv - (k * t[sel] + b)) ** 2)) / np.ptp(yv))
    return float(k), float(b), rel


# ------------------------------------------------- sharpness (identical block)

@dataclass(frozen=True)
class SharpnessReport:
    c: float
    threshold: float
    excursions: int
    window: tuple


def sharpness_run(n=3, amplitude=0.1, t_end=1e4, window=(1e2, 1e4), stride=0.05, phase=0.0):
    """Count windows where m(t) t^{3/2} exceeds 0.05 c in the identical-block scenario.

    c = (n-1)(n-2) min over the window of (a_1 sqrt(t))^3, the amplitude
    constant of the block's leading-order heading rate.
    """
    fs = make_scenario(ScenarioConfig("identical-block", n, amplitude, params={"phase": phase}))
    traj = run_frame(fs, t_end, stride=stride)
    d = frame_series(traj)
    t = traj.times
    sel = (t >= window[0]) & (t <= window[1])
    a1 = d["a"][:, 0]
    c = (n - 1) * (n - 2) * float(np.min(a1[sel] * np.sqrt(t[sel])) ** 3)
    thr = 0.05 * c
    above = (d["m"] * t**1.5 > thr) & sel
    starts = np.count_nonzero(above[1:] & ~above[:-1]) + int(above[0])
    return SharpnessReport(c, thr, int(starts), tuple(window)), traj


# -------------------------------------------------------------- stability

@dataclass(frozen=True)
class StabilityReport:
    runs: int
    violations: int
    worst: dict
    delta: float
    eps: float


def stability_run(n, seed, delta=1e-2, eps=0.1, t_end=1e3, stride=0.1):
    """Integrate the physical system from a delta-admissible start; return the three sup-margins."""
    fs = make_scenario(ScenarioConfig("random-near-Zf", n, delta, seed, {"hypotheses_delta": delta}))
    st = frame_to_swarm(fs)
    assert hypotheses_hold(st, delta)
    cfg = IntegratorConfig(t_end=t_end, sample_stride=stride, rtol=1e-9, atol=1e-12)
    traj = integrate(main_vec, st.to_vector(), cfg)
    Z = traj.states
    r = Z[:, :2 * n].reshape(-1, n, 2)
    v = Z[:, 2 * n:].reshape(-1, n, 2)
    V0 = st.V
    pair = 0.0
    for i in range(n):
        for j in range(i + 1, n):
            pair = max(pair, float(np.linalg.norm(r[:, i] - r[:, j], axis=1).max()))
    sp = np.linalg.norm(v.mean(axis=1), axis=1)
    return {
        "pair": pair,
        "speed": float(np.abs(sp - 1).max()),
        "vel": float(np.linalg.norm(v - V0, axis=2).max()),
    }


def stability_probe(ns=(3, 4, 8), runs=200, delta=1e-2, eps=0.1, t_end=1e3, seed0=0, workers=1):
    jobs = [(ns[i % len(ns)], seed0 + i) for i in range(runs)]
    if workers > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(workers) as ex:
            res = list(ex.map(_stability_job, [(n, s, delta, eps, t_end) for n, s in jobs]))
    else:
        res = [stability_run(n, s, delta, eps, t_end) for n, s in jobs]
    viol = sum(1 for r in res if max(r.values()) >= eps)
    worst = {k: max(r[k] for r in res) for k in ("pair", "speed", "vel")}
    return StabilityReport(runs, viol, worst, delta, eps)


def _stability_job(args):
    return stability_run(*args)


def lower_bound_probe(n, seed, amplitude=0.05, t_end=1e4, window=(1e2, 1e4), stride=0.5):
    """min over the window of sqrt(t) max_k(|r_k - R| + |v_k - V|)."""
    fs = make_scenario(ScenarioConfig("random-near-Zf", n, amplitude, seed))
    traj = run_frame(fs, t_end, stride=stride)
    d = frame_series(traj)
    t = traj.times
    sel = (t >= window[0]) & (t <= window[1])
    return float(np.min(np.sqrt(t[sel]) * d["dev"][sel]))


# ---------------------------------------------------------- flocking limit

@dataclass(frozen=True)
class FlockingReport:
    c_inf: np.ndarray
    tail_bound: float
    gap_at: float
    gap: float
    rate: DecayFit


def flocking_asymptote(state: SwarmState, t_end=40.0, gap_time=20.0, stride=0.01, fit_window=(1.0, 8.0)):
    """c_inf = int_0^inf (V - e^{i Theta0}) and the gap |R - c_inf - t e^{i Theta0}| at gap_time."""
    r, v = state.positions, state.velocities
    if not (np.allclose(r, r[0], atol=0) and np.allclose(v, v[0], atol=0)):
        raise ValueError("flocking asymptote needs a collapsed start")
    V0 = v[0]
    sp0 = float(np.linalg.norm(V0))
    if sp0 == 0:
        raise ValueError("zero velocity: no direction")
    e = V0 / sp0
    cfg = IntegratorConfig(t_end=t_end, sample_stride=stride, rtol=1e-11, atol=1e-13)
    traj = integrate(main_vec, state.to_vector(), cfg)
    n = state.n
    t = traj.times
    R = traj.states[:, :2 * n].reshape(-1, n, 2).mean(axis=1)
    V = traj.states[:, 2 * n:].reshape(-1, n, 2).mean(axis=1)
    speed = np.linalg.norm(V, axis=1)
    dev = 1 - speed
    if abs(1 - sp0) < 1e-12:
        # already at unit speed; dev is rounding noise
        rate = DecayFit(float("-inf"), 0.0, tuple(fit_window), 0.0)
        tail = 0.0
    else:
        rate = fit_exponential_rate(t, np.abs(dev), fit_window)
        C = math.exp(rate.intercept)
        lam = -rate.slope
        tail = C * math.exp(-lam * t[-1]) / lam if lam > 0 else float("inf")
    integ = cumulative_integral(t, V - e)
    c_inf = r[0] + integ[-1]
    i = int(np.argmin(np.abs(t - gap_time)))
    gap = float(np.linalg.norm(R[i] - c_inf - t[i] * e))
    return FlockingReport(c_inf, tail, float(t[i]), gap, rate)


# -------------------------------------------------- appendix lemma, symmetry

@dataclass(frozen=True)
class AppLemmaReport:
    alpha: complex
    beta: complex
    residual: float
    equation_residual: float


def verify_app_lemma(m: complex, p: int):
    """Check the forced values of (alpha, beta) in beta = z_k (alpha - |z_k|^2), z_k = m + e^{-i theta_k}.

    The p equations are linear in (alpha, beta). Their plain mean and their
    e^{i theta_k}-weighted mean are two consequences that pin (alpha, beta)
    down; both are evaluated numerically over the roots and compared with
    2|m|^2 + 1 and m(|m|^2 - 1) (``residual``). ``equation_residual`` is the
    misfit of the p equations at those values, zero only when the system
    is actually solvable (e.g. m = 0).
    """
    if p < 3:
        raise ValueError("p must be at least 3")
    m = complex(m)
    e = np.exp(1j * 2 * np.pi * np.arange(p) / p)
    z = m + e.conj()
    zz = z * np.abs(z) ** 2
    alpha = complex(np.mean(e * zz))
    beta = complex(m * alpha - np.mean(zz))
    a_form = 2 * abs(m) ** 2 + 1
    b_form = m * (abs(m) ** 2 - 1)
    res = max(abs(alpha - a_form), abs(beta - b_form))
    eq = float(np.abs(b_form - z * (a_form - np.abs(z) ** 2)).max())
    return AppLemmaReport(alpha, beta, float(res), eq)


def symmetry_defect(state: SwarmState, p):
    """Max deviation of the first p agents from p-fold symmetry about R."""
    R = state.R
    z = (state.positions[:p] - R) @ np.array([1, 1j])
    dz = state.velocities[:p] @ np.array([1, 1j])
    V = state.V @ np.array([1, 1j])
    rot = np.exp(2j * np.pi * np.arange(p) / p)
    return float(max(np.abs(z - rot * z[0]).max(), np.abs((dz - V) - rot * (dz[0] - V)).max()))


@dataclass(frozen=True)
class DichotomyReport:
    classification: str
    max_pair: float
    final_speed: float
    max_defect: float
    R_drift: float


def symmetric_dichotomy_probe(p, n, perturbation=0.0, collapsed=False, t_end=300.0, stride=0.1):
    """Which branch of the symmetric-swarm dichotomy a trajectory approaches.

    collapse: the p symmetric agents coincide (max pairwise distance < 1e-6).
    stationary-center: |V| < 1e-3 over the final 100 time units.
    violated: neither.
    """
    st = symmetric_configuration(p, n, perturbation, collapsed=collapsed)
    if symmetry_defect(st, p) > 1e-12:
        raise ValueError("initial configuration is not p-fold symmetric")
    cfg = IntegratorConfig(t_end=t_end, sample_stride=stride, rtol=1e-10, atol=1e-12)
    traj = integrate(main_vec, st.to_vector(), cfg)
    Z = traj.states
    r = Z[:, :2 * n].reshape(-1, n, 2)
    v = Z[:, 2 * n:].reshape(-1, n, 2)
    pair = max(float(np.linalg.norm(r[-1, i] - r[-1, j])) for i in range(p) for j in range(i + 1, p))
    sp = np.linalg.norm(v.mean(axis=1), axis=1)
    tail = traj.times >= t_end - 100
    defect = max(symmetry_defect(SwarmState(t, r[i], v[i]), p) for i, t in enumerate(traj.times[::50]))
    R = r.mean(axis=1)
    drift = float(np.linalg.norm(R - R[0], axis=1).max())
    if pair < 1e-6:
        cls = "collapse"
    elif sp[tail].max() < 1e-3:
        cls = "stationary-center"
    else:
        cls = "violated"
    return DichotomyReport(cls, pair, float(sp[-1]), defect, drift)


# ------------------------------------------------ equal-velocity subsystems

def conserved_drift(state0=(1.02, 0.03, -0.01, 0.02), t_end=100.0, dt=1e-3):
    """Max drift of (q_x, q_y) along an RK4 trajectory of the equal-acceleration system."""
    from .model import conserved_quantities
    cfg = IntegratorConfig(method="rk4", t_end=t_end, sample_stride=0.5, dt=dt)
    traj = integrate(equal_av_vec, np.asarray(state0, float), cfg)
    q = np.array(conserved_quantities(*traj.states.T))
    return float(np.abs(q - q[:, :1]).max())


@dataclass(frozen=True)
class InstabilityReport:
    c0: float
    fixed_point: tuple
    escape_time: float
    circle_max_speed: float


def equal_v_instability_probe(c0=-1e-3, eps=0.05, offset=1e-2, t_end=1e4):
    """Escape from the eps-ball around (1, 0) near the saddle for c0 < 0.

    Start at the fixed point near (1, 0) displaced by offset along the unit
    circle; report the first time the state leaves the eps-ball, and the
    largest vector-field magnitude on the unit circle when c0 = 0.
    """
    vs = [fp for fp in equal_v_fixed_points(c0) if abs(fp[0] - 1) < 0.1][0]
    r0 = vs[0]
    z0 = np.array([r0 * math.cos(offset), r0 * math.sin(offset), c0])
    cfg = IntegratorConfig(t_end=t_end, sample_stride=1.0, rtol=1e-10, atol=1e-12)
    traj = integrate(equal_v_vec, z0, cfg)
    dist = np.hypot(traj.states[:, 0] - 1, traj.states[:, 1])
    out = np.nonzero(dist > eps)[0]
    esc = float(traj.times[out[0]]) if out.size else float("inf")
    phi = np.linspace(0, 2 * np.pi, 361)
    circ = max(np.abs(equal_v_vec(0.0, np.array([math.cos(f), math.sin(f), 0.0]), np.empty(0))).max()
               for f in phi)
    return InstabilityReport(c0, vs, esc, float(circ))


# ------------------------------------------------------------- reduction fidelity

def central_vs_frame_gap(n=4, a0=1e-2, seed=0, periods=1):
    """Sup gap in (w, y) between the central flow and the full frame flow over some periods."""
    from .reduced import central_vec
    fs = make_scenario(ScenarioConfig("random-near-Zf", n, a0, seed))
    t_end = 2 * np.pi * periods
    cfg = IntegratorConfig(t_end=t_end, sample_stride=t_end / 100, rtol=1e-12, atol=1e-15)
    full = integrate(frame_vec, fs.to_vector(), cfg)
    red = integrate(central_vec, np.concatenate([fs.w, fs.y]), cfg)
    return float(np.abs(full.states[:, :2 * n] - red.states).max())
