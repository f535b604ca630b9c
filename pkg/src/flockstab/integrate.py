"""Deterministic time stepping for the autonomous systems in this package.

Two methods are provided:

* ``rk4``  -- classical fixed-step Runge-Kutta, steps clipped so every
  requested sample time is hit exactly.
* ``dp45`` -- Dormand-Prince 5(4) embedded pair with PI step-size control
  and the standard quartic dense output, used for the long-horizon runs.

Right-hand sides follow the signature ``rhs(t, y, p) -> dy/dt`` where ``p``
is a float64 parameter array (possibly empty). When ``rhs`` is a numba
``njit`` dispatcher the stepping loop is compiled as well; any other
callable runs through the pure-Python version of the same loop.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from numba import njit
from numba.core.registry import CPUDispatcher

__all__ = [
    "IntegratorConfig",
    "Trajectory",
    "IntegrationError",
    "integrate",
    "sample_times",
    "write_csv",
    "read_csv",
    "write_metadata",
    "content_hash",
]

OK, NON_FINITE, UNDERFLOW, MAX_STEPS = 0, 1, 2, 3
_REASONS = {
    NON_FINITE: "non-finite state",
    UNDERFLOW: "step-size underflow",
    MAX_STEPS: "step budget exhausted",
}

# Dormand-Prince 5(4) tableau
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = np.array(
    [
        [0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
        [1 / 5, 0.0, 0.0, 0.0, 0.0, 0.0],
        [3 / 40, 9 / 40, 0.0, 0.0, 0.0, 0.0],
        [44 / 45, -56 / 15, 32 / 9, 0.0, 0.0, 0.0],
        [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729, 0.0, 0.0],
        [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656, 0.0],
        [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
    ]
)
_B = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_E = np.array(
    [-71 / 57600, 0.0, 71 / 16695, -71 / 1920, 17253 / 339200, -22 / 525, 1 / 40]
)
# dense output: y(t + th) = y + h * K^T P [th, th^2, th^3, th^4]
_P = np.array(
    [
        [1.0, -8048581381 / 2820520608, 8663915743 / 2820520608, -12715105075 / 11282082432],
        [0.0, 0.0, 0.0, 0.0],
        [0.0, 131558114200 / 32700410799, -68118460800 / 10900136933, 87487479700 / 32700410799],
        [0.0, -1754552775 / 470086768, 14199869525 / 1410260304, -10690763975 / 1880347072],
        [0.0, 127303824393 / 49829197408, -318862633887 / 49829197408, 701980252875 / 199316789632],
        [0.0, -282668133 / 205662961, 2019193451 / 616988883, -1453857185 / 822651844],
        [0.0, 40617522 / 29380423, -110615467 / 29380423, 69997945 / 29380423],
    ]
)


@dataclass(frozen=True)
class IntegratorConfig:
    """Integration settings.

    ``dt`` is used by ``rk4``; ``rtol``/``atol`` by ``dp45``. Samples are
    emitted every ``sample_stride`` time units and always at ``t_end``.
    """

    method: str = "dp45"
    t_end: float = 10.0
    sample_stride: float = 0.1
    dt: float = 1e-2
    rtol: float = 1e-9
    atol: float = 1e-12
    t0: float = 0.0
    max_steps: int = 50_000_000
    h_min: float = 1e-14

    def __post_init__(self):
        if self.method not in ("rk4", "dp45"):
            raise ValueError(f"unknown method {self.method!r} (expected 'rk4' or 'dp45')")
        if not self.t_end > self.t0:
            raise ValueError("t_end must exceed t0")
        if not self.sample_stride > 0:
            raise ValueError("sample_stride must be positive")
        if self.method == "rk4" and not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.method == "dp45" and not (self.rtol > 0 and self.atol > 0):
            raise ValueError("rtol and atol must be positive")


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray
    config: IntegratorConfig | None = None
    diagnostics: dict = field(default_factory=dict)
    stats: dict = field(default_factory=dict)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.states = np.asarray(self.states, dtype=float)
        if self.states.shape[0] != self.times.size:
            raise ValueError("times and states differ in length")
        if self.times.size > 1 and np.any(np.diff(self.times) <= 0):
            raise ValueError("trajectory times must be strictly increasing")

    def __len__(self):
        return self.times.size

    def window(self, t_lo, t_hi):
        """Boolean mask of samples with ``t_lo <= t <= t_hi``."""
        return (self.times >= t_lo) & (self.times <= t_hi)


class IntegrationError(RuntimeError):
    """Integration aborted; ``t`` is the time of the last accepted state."""

    def __init__(self, reason, t, state=None):
        super().__init__(f"{reason} at t={t:.17g}")
        self.reason = reason
        self.t = t
        self.state = state


def sample_times(t0, t_end, stride):
    n = int(math.floor((t_end - t0) / stride + 1e-9))
    ts = t0 + stride * np.arange(n + 1)
    if t_end - ts[-1] > 1e-9 * max(1.0, abs(t_end)):
        ts = np.append(ts, t_end)
    else:
        ts[-1] = t_end
    return ts


@njit(cache=True)
def _all_finite(v):
    for x in v:
        if not math.isfinite(x):
            return False
    return True


@njit
def _rk4_loop(rhs, y0, ts, dt, p, max_steps, h_min):
    d = y0.size
    out = np.empty((ts.size, d))
    out[0] = y0
    t = ts[0]
    y = y0.copy()
    steps = 0
    for j in range(1, ts.size):
        target = ts[j]
        while t < target:
            h = dt
            if t + h >= target - 1e-12 * dt:
                h = target - t
            if h < h_min:
                return UNDERFLOW, t, out, steps, 0, y
            k1 = rhs(t, y, p)
            k2 = rhs(t + 0.5 * h, y + 0.5 * h * k1, p)
            k3 = rhs(t + 0.5 * h, y + 0.5 * h * k2, p)
            k4 = rhs(t + h, y + h * k3, p)
            y_new = y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            if not _all_finite(y_new):
                return NON_FINITE, t, out, steps, 0, y
            y = y_new
            t = target if h == target - t else t + h
            steps += 1
            if steps >= max_steps:
                return MAX_STEPS, t, out, steps, 0, y
        out[j] = y
    return OK, t, out, steps, 0, y


@njit
def _dp45_loop(rhs, y0, ts, rtol, atol, p, max_steps, h_min):
    d = y0.size
    out = np.empty((ts.size, d))
    out[0] = y0
    t = ts[0]
    t_end = ts[-1]
    y = y0.copy()
    K = np.empty((7, d))
    f = rhs(t, y, p)
    if not _all_finite(f):
        return NON_FINITE, t, out, 0, 0, y
    K[0] = f

    # initial step (Hairer, Norsett & Wanner, II.4)
    scale = atol + rtol * np.abs(y)
    d0 = math.sqrt(np.mean((y / scale) ** 2))
    d1 = math.sqrt(np.mean((f / scale) ** 2))
    h0 = 1e-6 if (d0 < 1e-5 or d1 < 1e-5) else 0.01 * d0 / d1
    y1 = y + h0 * f
    f1 = rhs(t + h0, y1, p)
    d2 = math.sqrt(np.mean(((f1 - f) / scale) ** 2)) / h0
    if max(d1, d2) <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** 0.2
    h = min(100.0 * h0, h1, t_end - t)

    j = 1
    steps = 0
    rejected = 0
    err_prev = 1e-4
    while j < ts.size:
        if steps + rejected >= max_steps:
            return MAX_STEPS, t, out, steps, rejected, y
        if h < h_min * max(1.0, abs(t)):
            return UNDERFLOW, t, out, steps, rejected, y
        last = False
        if t + h >= t_end:
            h = t_end - t
            last = True
        for s in range(1, 6):
            ys = y.copy()
            for r in range(s):
                ys += h * _A[s, r] * K[r]
            K[s] = rhs(t + _C[s] * h, ys, p)
        y_new = y.copy()
        for r in range(6):
            y_new += h * _B[r] * K[r]
        t_new = t_end if last else t + h
        f_new = rhs(t_new, y_new, p)
        K[6] = f_new
        err = np.zeros(d)
        for r in range(7):
            err += h * _E[r] * K[r]
        sc = atol + rtol * np.maximum(np.abs(y), np.abs(y_new))
        err_norm = math.sqrt(np.mean((err / sc) ** 2))
        if not (math.isfinite(err_norm) and _all_finite(y_new)):
            rejected += 1
            h *= 0.25
            if h < h_min * max(1.0, abs(t)):
                return NON_FINITE, t, out, steps, rejected, y
            continue
        if err_norm <= 1.0:
            Q = K.T @ _P
            while j < ts.size and ts[j] <= t_new:
                if ts[j] == t_new:
                    out[j] = y_new
                else:
                    th = (ts[j] - t) / h
                    out[j] = y + h * (Q[:, 0] * th + Q[:, 1] * th**2 + Q[:, 2] * th**3 + Q[:, 3] * th**4)
                j += 1
            e = max(err_norm, 1e-10)
            fac = 0.9 * e ** (-0.7 / 5.0) * err_prev ** (0.4 / 5.0)
            fac = min(10.0, max(0.2, fac))
            err_prev = max(err_norm, 1e-4)
            t = t_new
            y = y_new
            K[0] = f_new
            h *= fac
            steps += 1
        else:
            rejected += 1
            h *= max(0.2, 0.9 * err_norm ** (-0.2))
    return OK, t, out, steps, rejected, y


# python-level checks run when a compiled rhs produced a non-finite value,
# so the abort can name the domain violation (e.g. a singular frame)
_DOMAIN_CHECKS = {}


def register_domain_check(rhs, check):
    """Attach ``check(y) -> str | None`` to a compiled rhs for error reporting."""
    _DOMAIN_CHECKS[id(rhs)] = check


def integrate(rhs, y0, config: IntegratorConfig, params=None) -> Trajectory:
    """Integrate ``dy/dt = rhs(t, y, p)`` from ``config.t0`` to ``config.t_end``.

    Raises :class:`IntegrationError` on step-size underflow, non-finite
    states, or a domain error raised by the right-hand side; the error
    carries the time of the last accepted state.
    """
    y0 = np.array(y0, dtype=float).ravel()
    if not np.all(np.isfinite(y0)):
        raise IntegrationError("non-finite state", config.t0, y0)
    p = np.zeros(0) if params is None else np.asarray(params, dtype=float)
    ts = sample_times(config.t0, config.t_end, config.sample_stride)

    compiled = isinstance(rhs, CPUDispatcher)
    if config.method == "rk4":
        loop = _rk4_loop
        args = (y0, ts, float(config.dt), p, int(config.max_steps), float(config.h_min))
    else:
        loop = _dp45_loop
        args = (y0, ts, float(config.rtol), float(config.atol), p, int(config.max_steps), float(config.h_min))

    if compiled:
        status, t_fail, out, steps, rejected, y_last = loop(rhs, *args)
    else:
        seen = {"t": config.t0}

        def tracked(t, y, pp):
            seen["t"] = t
            return np.asarray(rhs(t, y, pp), dtype=float)

        try:
            status, t_fail, out, steps, rejected, y_last = loop.py_func(tracked, *args)
        except (ArithmeticError, ValueError) as exc:
            raise IntegrationError(f"rhs domain error ({exc})", seen["t"]) from exc

    if status != OK:
        reason = _REASONS[status]
        check = _DOMAIN_CHECKS.get(id(rhs))
        if status == NON_FINITE and check is not None:
            msg = check(y_last)
            if msg:
                reason = f"rhs domain error ({msg})"
        raise IntegrationError(reason, float(t_fail), y_last)

    return Trajectory(
        times=ts,
        states=out,
        config=config,
        stats={"steps": int(steps), "rejected": int(rejected)},
    )


def write_csv(path, times, columns: dict):
    """Write one row per sample; floats use 17 significant digits."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    names = ["t", *columns.keys()]
    cols = [np.asarray(times, dtype=float)] + [np.asarray(v, dtype=float) for v in columns.values()]
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(names)
        for i in range(cols[0].size):
            w.writerow([format(c[i], ".17g") for c in cols])
    return path


def read_csv(path):
    with Path(path).open(newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], np.array(rows[1:], dtype=float)
    return {name: body[:, i] for i, name in enumerate(header)}


def content_hash(*payloads) -> str:
    h = hashlib.sha256()
    for item in payloads:
        if isinstance(item, np.ndarray):
            h.update(np.ascontiguousarray(item, dtype=float).tobytes())
        else:
            h.update(json.dumps(item, sort_keys=True, default=str).encode())
    return h.hexdigest()[:16]


def write_metadata(path, config: IntegratorConfig, seed=None, inputs=None, extra=None):
    meta = {
        "integrator": asdict(config),
        "seed": seed,
        "input_hash": content_hash(inputs if inputs is not None else {}, asdict(config), seed),
    }
    if extra:
        meta.update(extra)
    Path(path).write_text(json.dumps(meta, indent=2, sort_keys=True, default=str) + "\n")
    return meta
