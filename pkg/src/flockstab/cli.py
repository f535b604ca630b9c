"""Command-line front end: simulate, reduce, verify, sweep.

Exit codes: 0 success, 1 check failure, 2 usage or config error,
3 numerical abort.
"""
from __future__ import annotations

import argparse
import configparser
import csv
import json
import math
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import __version__
from . import analysis as an
from . import checks
from .integrate import (IntegrationError, IntegratorConfig, Trajectory, integrate, sample_times, write_csv,
                        write_metadata)
from .manifold import SPEED_GAP_CONSTANT, manifold_map, solve_manifold_coeffs
from .model import (FrameState, SingularFrameError, SwarmState, SwarmState3D, frame_vec, main3d_vec, main_vec,
                    to_moving_frame)
from .reduced import S_LOCAL, S_MEANS, central_from_polar, central_vec, polar_from_central, polar_vec

EXIT_OK, EXIT_CHECK, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2, 3

MODELS = ("main", "frame", "central", "polar")


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------- config

# section -> key -> type; "floats"/"ints" are comma-separated lists
SCHEMA = {
    "system": {"model": str},
    "scenario": {"kind": str, "n": int, "amplitude": float, "seed": int},
    "integrator": {"method": str, "t_end": float, "sample_stride": float, "dt": float,
                   "rtol": float, "atol": float, "t0": float, "max_steps": int, "h_min": float},
    "output": {"window_mean": "names"},
    "sweep": {"ns": "ints", "amplitudes": "floats", "seeds": "ints", "t_end": float,
              "window": "floats", "stride": float},
}

PRESETS = {
    "figure2": """
        [system]
        model = frame
        [scenario]
        kind = random-near-Zf
        n = 4
        amplitude = 0.1
        seed = 0
        [integrator]
        t_end = 300
        sample_stride = 0.05
        [output]
        window_mean = m
    """,
    "figure6": """
        [system]
        model = frame
        [scenario]
        kind = random-near-Zf
        n = 3
        amplitude = 0.1
        seed = 0
        ; agent 3 starts an order of magnitude below the other two
        w = 0.1, -0.09, -0.01
        y = 0.02, -0.025, 0.005
        [integrator]
        t_end = 3000
        sample_stride = 0.25
        [output]
        window_mean = a_1, a_3
    """,
    "decay-sweep": """
        [sweep]
        ns = 3, 4, 8
        amplitudes = 0.02, 0.05
        seeds = 0, 1, 2, 3, 4
        t_end = 10000
        window = 100, 10000
        stride = 0.1
    """,
}


def _locate(text, section, key):
    cur = None
    for i, line in enumerate(text.splitlines(), 1):
        s = line.strip()
        if s.startswith("[") and s.endswith("]"):
            cur = s[1:-1].strip()
            if key is None and cur == section:
                return i
        elif cur == section and s.split("=", 1)[0].split(":", 1)[0].strip().lower() == key:
            return i
    return None


def _convert(kind, raw):
    if kind is str:
        return raw.strip()
    if kind is int:
        return int(raw)
    if kind is float:
        return float(raw)
    parts = [p.strip() for p in raw.split(",") if p.strip()]
    if kind == "ints":
        return [int(p) for p in parts]
    if kind == "floats":
        return [float(p) for p in parts]
    return parts


def _param_value(raw):
    raw = raw.strip()
    if raw.lower() in ("true", "false"):
        return raw.lower() == "true"
    parts = [p.strip() for p in raw.split(",")]
    try:
        vals = [float(p) for p in parts]
    except ValueError:
        raise ConfigError(f"scenario parameter {raw!r} is not numeric") from None
    return vals if len(vals) > 1 or raw.endswith(",") else vals[0]


def parse_config(text, source="<config>"):
    """Parse INI text into {section: {key: typed value}}; extra scenario keys become parameters."""
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"), interpolation=None)
    try:
        cp.read_string(_dedent(text), source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from None
    out = {}
    for sec in cp.sections():
        if sec not in SCHEMA:
            raise ConfigError(f"{source}:{_locate(_dedent(text), sec, None) or '?'}: unknown section [{sec}]")
        d = {}
        for key, raw in cp.items(sec):
            line = _locate(_dedent(text), sec, key)
            kind = SCHEMA[sec].get(key)
            try:
                if kind is None:
                    if sec != "scenario":
                        raise ConfigError(f"unknown key {key!r}")
                    d.setdefault("params", {})[key] = _param_value(raw)
                else:
                    d[key] = _convert(kind, raw)
            except (ValueError, ConfigError) as exc:
                raise ConfigError(f"{source}:{line}: [{sec}] {key}: {exc}") from None
        out[sec] = d
    _validate(out, source)
    return out


def _validate(cfg, source):
    sysm = cfg.get("system", {}).get("model")
    if sysm is not None and sysm not in MODELS:
        raise ConfigError(f"{source}: [system] model must be one of {', '.join(MODELS)}")
    kind = cfg.get("scenario", {}).get("kind")
    if kind is not None and kind not in an.SCENARIO_KINDS:
        raise ConfigError(f"{source}: [scenario] kind {kind!r} unknown")
    sw = cfg.get("sweep")
    if sw and "window" in sw and len(sw["window"]) != 2:
        raise ConfigError(f"{source}: [sweep] window needs two values")


def _dedent(text):
    return "\n".join(line.strip() for line in text.splitlines())


def _fmt(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (list, tuple)):
        return ", ".join(_fmt(x) for x in v)
    return str(v)


def canonical_config(cfg):
    """Sorted sections and keys, one normalized value each; parse(canonical) round-trips."""
    lines = []
    for sec in sorted(cfg):
        lines.append(f"[{sec}]")
        items = dict(cfg[sec])
        params = items.pop("params", {})
        for key in sorted({**items, **params}):
            lines.append(f"{key} = {_fmt(items[key] if key in items else params[key])}")
        lines.append("")
    return "\n".join(lines)


def load_config(path=None, preset=None):
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError(f"unknown preset {preset!r}; choose from {', '.join(PRESETS)}")
        return parse_config(PRESETS[preset], f"preset:{preset}")
    if path is None:
        raise ConfigError("give --config PATH or --preset NAME")
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from None
    return parse_config(text, str(path))


# -------------------------------------------------------------- manifest

@dataclass
class RunManifest:
    command: str
    config: str = ""
    seed: int | None = None
    version: str = __version__
    outputs: list = field(default_factory=list)
    duration: float = 0.0
    status: str = "running"
    error: str | None = None
    summary: dict = field(default_factory=dict)

    def write(self, out_dir):
        path = Path(out_dir) / "manifest.json"
        path.parent.mkdir(parents=True, exist_ok=True)
        listed = sorted({str(p) for p in self.outputs} | {str(path)})
        body = {**asdict(self), "outputs": listed}
        path.write_text(json.dumps(body, indent=2, sort_keys=True, default=_jsonable) + "\n")
        return path


def _jsonable(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    return str(o)


# -------------------------------------------------------------- simulate

def _scenario(cfg, seed):
    sc = cfg.get("scenario", {})
    kind = sc.get("kind", "random-near-Zf")
    n = sc.get("n", 4)
    params = dict(sc.get("params", {}))
    if "c0" in params and not isinstance(params["c0"], list):
        raise ConfigError("[scenario] c0 needs two values")
    return an.make_scenario(an.ScenarioConfig(kind, n, sc.get("amplitude", 0.0), seed, params)), params


def _integrator(cfg):
    return IntegratorConfig(**cfg.get("integrator", {"t_end": 100.0}))


def _planar_columns(times, frames, Theta, cfg_int):
    """Shared diagnostics from a sequence of frame states (rows of the frame layout)."""
    tr = Trajectory(times, frames, cfg_int)
    d = an.frame_series(tr)
    cols = {"speed": d["speed"], "Theta": Theta, "m": d["m"], "s": d["s"], "a_M": d["a_M"], "W": d["W"]}
    for k in range(d["a"].shape[1]):
        cols[f"a_{k + 1}"] = d["a"][:, k]
    return cols


# Theta and the 2 pi window means are quadratures of oscillating series;
# they are computed on a grid at least this fine and then subsampled
QUAD_STRIDE = 0.05


def simulate(cfg, seed):
    """Run the configured system; return (times, columns) at the configured stride."""
    icfg = _integrator(cfg)
    k = max(1, math.ceil(icfg.sample_stride / QUAD_STRIDE - 1e-9))
    times, cols = _simulate(cfg, seed, replace(icfg, sample_stride=icfg.sample_stride / k))
    for name in cfg.get("output", {}).get("window_mean", []):
        if name not in cols:
            raise ConfigError(f"[output] window_mean: no column {name!r}")
        cols[f"{name}_mean2pi"] = an.window_mean(times, cols[name])
    want = sample_times(icfg.t0, icfg.t_end, icfg.sample_stride)
    keep = np.clip(np.searchsorted(times, want - 1e-9 * icfg.sample_stride), 0, times.size - 1)
    return times[keep], {name: v[keep] for name, v in cols.items()}


def _simulate(cfg, seed, icfg):
    model = cfg.get("system", {}).get("model", "frame")
    start, params = _scenario(cfg, seed)
    Theta0 = float(params.get("Theta0", 0.0))
    c0 = params.get("c0", (0.0, 0.0))

    if isinstance(start, SwarmState3D):
        if model != "main":
            raise ConfigError("helix-3D runs only with model = main")
        tr = integrate(main3d_vec, start.to_vector(), icfg)
        n = start.n
        r = tr.states[:, :3 * n].reshape(-1, n, 3)
        v = tr.states[:, 3 * n:].reshape(-1, n, 3)
        cols = {}
        for k in range(n):
            for j, ax in enumerate("xyz"):
                cols[f"r{k + 1}_{ax}"] = r[:, k, j]
            for j, ax in enumerate("xyz"):
                cols[f"v{k + 1}_{ax}"] = v[:, k, j]
        cols["speed"] = np.linalg.norm(v.mean(axis=1), axis=1)
        nan = np.full(tr.times.size, np.nan)
        cols.update(Theta=nan, m=nan, s=nan, a_M=nan, W=nan)
        return tr.times, cols

    if model == "main":
        st = start if isinstance(start, SwarmState) else an.frame_to_swarm(start, Theta0, c0)
        tr = integrate(main_vec, st.to_vector(), icfg)
        n = st.n
        frames, Theta = [], []
        for t, z in zip(tr.times, tr.states):
            try:
                fs, mfld, _ = to_moving_frame(SwarmState.from_vector(t, z))
                frames.append(fs.to_vector())
                Theta.append(mfld.Theta)
            except SingularFrameError:
                frames.append(np.full(4 * n - 1, np.nan))
                Theta.append(np.nan)
        Theta = np.unwrap(np.array(Theta))
        cols = {}
        for k in range(n):
            cols[f"r{k + 1}_x"] = tr.states[:, 2 * k]
            cols[f"r{k + 1}_y"] = tr.states[:, 2 * k + 1]
        for k in range(n):
            cols[f"v{k + 1}_x"] = tr.states[:, 2 * n + 2 * k]
            cols[f"v{k + 1}_y"] = tr.states[:, 2 * n + 2 * k + 1]
        with np.errstate(invalid="ignore"):
            cols.update(_planar_columns(tr.times, np.array(frames), Theta, icfg))
        return tr.times, cols

    fs = start if isinstance(start, FrameState) else to_moving_frame(start)[0]
    n = fs.n
    if model == "frame":
        tr = integrate(frame_vec, fs.to_vector(), icfg)
        frames = tr.states
    else:
        w0, y0 = fs.w, fs.y
        if model == "central":
            tr = integrate(central_vec, np.concatenate([w0, y0]), icfg)
            W, Y = tr.states[:, :n], tr.states[:, n:]
        else:
            a0, th0 = polar_from_central(w0, y0)
            tr = integrate(polar_vec, np.concatenate([a0, th0]), icfg)
            W, Y = central_from_polar(tr.states[:, :n], tr.states[:, n:])
        frames = np.array([an.on_manifold(w, y).to_vector() for w, y in zip(W, Y)])
    d_tr = Trajectory(tr.times, frames, icfg)
    d = an.frame_series(d_tr)
    cols = {}
    if model == "frame":
        x = np.concatenate([frames[:, 2 * n:3 * n - 1], -frames[:, 2 * n:3 * n - 1].sum(axis=1, keepdims=True)], 1)
        for k in range(n):
            cols[f"w{k + 1}"] = frames[:, k]
            cols[f"y{k + 1}"] = frames[:, n + k]
            cols[f"x{k + 1}"] = x[:, k]
            cols[f"u{k + 1}"] = frames[:, 3 * n - 1 + k]
    elif model == "central":
        for k in range(n):
            cols[f"w{k + 1}"] = tr.states[:, k]
            cols[f"y{k + 1}"] = tr.states[:, n + k]
    else:
        for k in range(n):
            cols[f"a{k + 1}"] = tr.states[:, k]
            cols[f"theta{k + 1}"] = tr.states[:, n + k]
    cols.update({"speed": d["speed"], "Theta": Theta0 + d["Theta"], "m": d["m"], "s": d["s"],
                 "a_M": d["a_M"], "W": d["W"]})
    for k in range(n):
        cols[f"a_{k + 1}"] = d["a"][:, k]
    return tr.times, cols


def cmd_simulate(args, cfg, man):
    seed = args.seed if args.seed is not None else cfg.get("scenario", {}).get("seed", 0)
    man.seed = seed
    times, cols = simulate(cfg, seed)
    out = Path(args.out)
    csv_path = write_csv(out / "trajectory.csv", times, cols)
    meta_path = out / "trajectory.meta.json"
    write_metadata(meta_path, _integrator(cfg), seed, inputs=canonical_config(cfg),
                   extra={"columns": ["t", *cols]})
    man.outputs += [csv_path, meta_path]
    man.summary = {"samples": int(times.size), "columns": len(cols) + 1}
    print(f"wrote {csv_path} ({times.size} rows, {len(cols) + 1} columns)")
    return EXIT_OK


# ---------------------------------------------------------------- reduce

def cmd_reduce(args, cfg, man):
    c = solve_manifold_coeffs()
    frac = {name: [str(v) for v in getattr(c, name)] for name in ("cX", "cZ", "cbar")}
    body = {
        "coefficients": frac,
        "basis": "w_k^2, w_k y_k, y_k^2 | sigma_ww, sigma_wy, sigma_yy",
        "s_local": list(S_LOCAL),
        "s_means": list(S_MEANS),
        "speed_gap_constant": SPEED_GAP_CONSTANT,
    }
    for name, vals in frac.items():
        print(f"{name:5s} = ({', '.join(vals)})")
    if cfg.get("scenario"):
        seed = args.seed if args.seed is not None else cfg["scenario"].get("seed", 0)
        man.seed = seed
        start, _ = _scenario(cfg, seed)
        fs = start if isinstance(start, FrameState) else to_moving_frame(start)[0]
        X, Z, Zbar = manifold_map(c, fs.w, fs.y)
        body["map"] = {"w": fs.w, "y": fs.y, "X": X, "Z": Z, "Zbar": Zbar}
        print(f"mapped {fs.n} agents: Zbar = {Zbar:.6g}")
    path = Path(args.out) / "reduce.json"
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(body, indent=2, default=_jsonable) + "\n")
    man.outputs.append(path)
    return EXIT_OK


# ---------------------------------------------------------------- verify

def cmd_verify(args, cfg, man):
    results = checks.run_suite(args.suite, workers=args.workers)
    rows = []
    for r in results:
        print(r.line())
        rows.append({"name": r.name, "passed": bool(r.passed), "summary": r.summary, "seconds": r.seconds})
    ok = all(r["passed"] for r in rows)
    path = Path(args.out) / "verify.json"
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps({"suite": args.suite, "passed": ok, "checks": rows}, indent=2) + "\n")
    man.outputs.append(path)
    man.summary = {"passed": ok, "failed": [r["name"] for r in rows if not r["passed"]]}
    return EXIT_OK if ok else EXIT_CHECK


# ----------------------------------------------------------------- sweep

SWEEP_FIELDS = ["seed", "n", "amplitude", "slope_a_M", "slope_gap", "slope_heading", "heading_ratio",
                "pass_a_M", "pass_gap", "pass_heading", "pass_all"]


def sweep_row(n, seed, amplitude, t_end, window, stride):
    rep, traj = an.decay_run(n, seed, amplitude, t_end=t_end, window=window, stride=stride)
    flags = rep.passes()
    try:
        env = an.heading_envelope_fit(traj, window).slope
    except ValueError:
        env = math.nan
    h = rep.heading
    return {
        "seed": seed, "n": n, "amplitude": amplitude,
        "slope_a_M": rep.a_M.slope, "slope_gap": rep.gap.slope, "slope_heading": env,
        "heading_ratio": h.scaled_max_late / h.scaled_max_early,
        "pass_a_M": int(flags["a_M"]), "pass_gap": int(flags["gap"]), "pass_heading": int(flags["heading"]),
        "pass_all": int(all(flags.values())),
    }


def _write_rows(path, rows):
    with Path(path).open("w", newline="") as fh:
        w = csv.DictWriter(fh, SWEEP_FIELDS)
        w.writeheader()
        for r in rows:
            w.writerow({k: format(v, ".17g") if isinstance(v, float) else v for k, v in r.items()})


def _sweep_job(job):
    n, seed, amp, t_end, window, stride, path = job
    _write_rows(path, [sweep_row(n, seed, amp, t_end, window, stride)])
    return str(path)


def cmd_sweep(args, cfg, man):
    sw = cfg.get("sweep")
    if not sw:
        raise ConfigError("sweep needs a [sweep] section")
    ns, amps = sw.get("ns", [3, 4, 8]), sw.get("amplitudes", [0.05])
    seeds = sw.get("seeds", list(range(5)))
    if args.seed is not None:
        seeds = [args.seed]
    t_end = sw.get("t_end", 1e4)
    window = tuple(sw.get("window", (1e2, t_end)))
    stride = sw.get("stride", 0.1)
    out = Path(args.out)
    (out / "runs").mkdir(parents=True, exist_ok=True)
    jobs = [(n, s, a, t_end, window, stride, out / "runs" / f"n{n}_a{a:g}_s{s}.csv")
            for n in ns for a in amps for s in seeds]
    man.summary = {"grid": {"ns": ns, "amplitudes": amps, "seeds": seeds, "t_end": t_end,
                            "window": list(window), "stride": stride}, "runs": len(jobs)}
    if args.workers > 1:
        with ProcessPoolExecutor(args.workers) as ex:
            paths = list(ex.map(_sweep_job, jobs))
    else:
        paths = [_sweep_job(j) for j in jobs]
    man.outputs += paths
    # sequential reduce in grid order
    rows = []
    for p in paths:
        with open(p, newline="") as fh:
            rows += list(csv.DictReader(fh))
    agg = out / "sweep.csv"
    _write_rows(agg, rows)
    man.outputs.append(agg)
    passed = sum(int(r["pass_all"]) for r in rows)
    man.summary["passed_runs"] = passed
    print(f"wrote {agg} ({len(rows)} runs, {passed} pass all bands)")
    return EXIT_OK


# ------------------------------------------------------------------ main

def build_parser():
    p = argparse.ArgumentParser(prog="flockstab", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"flockstab {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config=True):
        if config:
            sp.add_argument("--config", metavar="PATH")
            sp.add_argument("--preset", metavar="NAME", choices=sorted(PRESETS))
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out", metavar="DIR", default="flockstab-out")
        sp.add_argument("--workers", type=int, default=1, metavar="N")

    common(sub.add_parser("simulate", help="integrate one configured scenario to CSV"))
    common(sub.add_parser("reduce", help="manifold coefficients and the map of a scenario"))
    v = sub.add_parser("verify", help="run acceptance checks")
    v.add_argument("suite", choices=sorted(checks.SUITES))
    common(v, config=False)
    common(sub.add_parser("sweep", help="decay fits over a grid of n, amplitude and seed"))
    return p


COMMANDS = {"simulate": cmd_simulate, "reduce": cmd_reduce, "verify": cmd_verify, "sweep": cmd_sweep}


def main(argv=None):
    args = build_parser().parse_args(argv)
    if args.workers < 1:
        print("flockstab: --workers must be at least 1", file=sys.stderr)
        return EXIT_USAGE
    man = RunManifest(command=" ".join(["flockstab", *(sys.argv[1:] if argv is None else argv)]), seed=args.seed)
    t0 = time.perf_counter()
    code = EXIT_USAGE
    try:
        cfg = {}
        # reduce without a config prints the coefficients only
        if args.command != "verify" and not (args.command == "reduce" and args.config is None
                                             and args.preset is None):
            cfg = load_config(args.config, args.preset)
            man.config = canonical_config(cfg)
        code = COMMANDS[args.command](args, cfg, man)
        man.status = "ok" if code == EXIT_OK else "check-failed"
    except ConfigError as exc:
        man.status, man.error = "usage-error", str(exc)
        print(f"flockstab: {exc}", file=sys.stderr)
        code = EXIT_USAGE
    except (IntegrationError, SingularFrameError) as exc:
        man.status, man.error = "numerical-abort", str(exc)
        print(f"flockstab: numerical abort: {exc}", file=sys.stderr)
        code = EXIT_NUMERIC
    except ValueError as exc:
        man.status, man.error = "usage-error", str(exc)
        print(f"flockstab: {exc}", file=sys.stderr)
        code = EXIT_USAGE
    finally:
        man.duration = time.perf_counter() - t0
        if man.status == "running":
            man.status, man.error = "error", "interrupted"
        man.write(args.out)
    return code


if __name__ == "__main__":
    sys.exit(main())
