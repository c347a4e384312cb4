"""Command-line front end.

Commands: ``drive``, ``trace``, ``hcap``, ``bubbles`` and ``experiment``.
Settings come from an optional flat ``key = value`` config file, overridden
by flags.  Every run that gets past parsing writes a manifest next to its
artifacts with the resolved config, library versions and SHA-256 checksums.

Exit codes: 0 success, 1 computational failure, 2 usage error.
"""
from __future__ import annotations

import argparse
import configparser
import hashlib
import json
import math
import os
import platform
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .errors import ParameterError, Refusal

EXIT_OK, EXIT_FAILURE, EXIT_USAGE = 0, 1, 2
COMMANDS = ("drive", "trace", "hcap", "bubbles", "experiment")
FORMATS = ("csv", "json", "svg", "pgm")
THREADS_ENV = "SLE_LAB_THREADS"

# config-file keys and their types; lists accept comma-separated values
_KEYS = {
    "kappa": "floats", "rho": "floats", "at": "floats", "steps": int, "dt": float, "T": float, "seed": int,
    "samples": int, "threads": int, "out": str, "format": str, "experiment": str, "fixture": str,
    "height": float, "pixel": float, "input": str, "route": str, "geometry": str, "theta0": float,
    "radius": float, "raw": "bool",
}


class UsageError(Exception):
    pass


@dataclass
class RunConfig:
    """Resolved command configuration."""

    command: str
    params: dict = field(default_factory=dict)
    seed: int = 0
    out: Optional[str] = None
    threads: int = 1

    @property
    def kappa(self):
        k = self.params.get("kappa")
        return k[0] if k and len(k) == 1 else k

    @property
    def steps(self):
        return self.params.get("steps")

    def echo(self) -> dict:
        return {"command": self.command, "seed": self.seed, "out": self.out,
                "params": {k: v for k, v in sorted(self.params.items())}}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="slelab", description="Numerical laboratory for Schramm-Loewner evolutions.")
    p.add_argument("--version", action="version", version=f"slelab {__version__}")
    sub = p.add_subparsers(dest="command", metavar="command")
    for name, help_ in [("drive", "simulate a driving function"), ("trace", "compute a Loewner trace"),
                        ("hcap", "Monte-Carlo half-plane capacity of a hull"),
                        ("bubbles", "bubbles cut off by a trace before it leaves the unit disk"),
                        ("experiment", "run a named Monte-Carlo experiment")]:
        s = sub.add_parser(name, help=help_, description=help_)
        s.error = p.error  # type: ignore[method-assign]
        s.add_argument("--config", help="flat key = value file; flags override it")
        s.add_argument("--kappa", type=float, action="append", help="SLE parameter (repeatable for experiments)")
        s.add_argument("--rho", type=float, action="append", help="force-point weight (repeatable)")
        s.add_argument("--at", type=float, action="append", help="force-point position, paired with --rho")
        s.add_argument("--steps", type=int, help="number of time steps")
        s.add_argument("--dt", type=float, help="time step")
        s.add_argument("--T", type=float, help="time horizon")
        s.add_argument("--seed", type=int)
        s.add_argument("--samples", type=int, help="samples (walkers for hcap)")
        s.add_argument("--threads", type=int, help=f"worker threads (default ${THREADS_ENV} or 1)")
        s.add_argument("--out", help="output file (directory for experiment)")
        s.add_argument("--format", choices=FORMATS)
        s.add_argument("--experiment", help="experiment name")
        s.add_argument("--param", action="append", default=[], metavar="KEY=VALUE",
                       help="experiment parameter (repeatable)")
        s.add_argument("--fixture", help="bundled hull for hcap: slit, half_disk, rectangle, disk, annulus")
        s.add_argument("--height", type=float, help="fixture size (slit height, disk radius)")
        s.add_argument("--pixel", type=float, help="raster pixel size")
        s.add_argument("--input", help="PGM hull raster for hcap/bubbles")
        s.add_argument("--route", choices=("euler", "bessel"), help="force-point construction")
        s.add_argument("--geometry", choices=("chordal", "radial"))
        s.add_argument("--theta0", type=float, help="initial radial angle in (0, 2 pi)")
        s.add_argument("--radius", type=float, help="stop radius for bubbles")
        s.add_argument("--raw", action="store_true", default=None, help="write per-sample CSV")
    return p


def _read_config(path) -> dict:
    text = Path(path).read_text()
    cp = configparser.ConfigParser(interpolation=None, delimiters=("=",))
    cp.optionxform = str
    if not text.lstrip().startswith("["):
        text = "[run]\n" + text
    cp.read_string(text)
    out = {}
    for section in cp.sections():
        for key, raw in cp.items(section):
            if key.startswith("param."):
                out.setdefault("param", {})[key[6:]] = _parse_value(raw)
                continue
            if key not in _KEYS:
                raise UsageError(f"unknown config key {key!r}")
            kind = _KEYS[key]
            try:
                if kind == "floats":
                    out[key] = [float(x) for x in raw.replace(",", " ").split()]
                elif kind == "bool":
                    out[key] = raw.strip().lower() in ("1", "true", "yes", "on")
                else:
                    out[key] = kind(raw.strip())
            except ValueError:
                raise UsageError(f"bad value for {key!r}: {raw!r}") from None
    return out


def _parse_value(raw: str):
    raw = raw.strip()
    try:
        return json.loads(raw)
    except ValueError:
        return raw


def parse_args(argv) -> RunConfig:
    """Validate arguments into a :class:`RunConfig`; raises :class:`UsageError`."""
    ns = _build_parser().parse_args(argv)
    if ns.command is None:
        raise UsageError("missing command")
    vals = {}
    if ns.config:
        try:
            vals.update(_read_config(ns.config))
        except OSError as exc:
            raise UsageError(f"cannot read config: {exc}") from None
        except configparser.Error as exc:
            raise UsageError(f"malformed config: {exc}") from None
    for key in _KEYS:
        v = getattr(ns, key, None)
        if v is not None:
            vals[key] = v
    params = dict(vals.pop("param", {}))
    for item in ns.param:
        if "=" not in item:
            raise UsageError(f"--param expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        params[k.strip()] = _parse_value(v)

    threads = vals.pop("threads", None)
    if threads is None:
        env = os.environ.get(THREADS_ENV)
        try:
            threads = int(env) if env else 1
        except ValueError:
            raise UsageError(f"{THREADS_ENV} must be an integer") from None
    if threads < 1:
        raise UsageError("threads must be at least 1")
    seed = vals.pop("seed", 0)
    out = vals.pop("out", None)
    cmd = ns.command

    kappas = vals.get("kappa")
    if kappas is not None:
        if any(not math.isfinite(k) or k < 0 for k in kappas):
            raise UsageError("kappa must be a nonnegative number")
        if cmd != "experiment" and len(kappas) > 1:
            raise UsageError("conflicting flags: several --kappa values outside an experiment")
    rho, at = vals.get("rho") or [], vals.get("at") or []
    if at and len(at) != len(rho):
        raise UsageError("conflicting flags: --at must be given once per --rho")
    steps, dt, T = vals.get("steps"), vals.get("dt"), vals.get("T")
    if steps is not None and steps < 1:
        raise UsageError("steps must be positive")
    for name, v in (("dt", dt), ("T", T)):
        if v is not None and not v > 0:
            raise UsageError(f"{name} must be positive")
    if steps is not None and dt is not None and T is not None and not math.isclose(steps * dt, T, rel_tol=1e-9):
        raise UsageError("conflicting flags: steps * dt != T")
    if vals.get("samples") is not None and vals["samples"] < 1:
        raise UsageError("samples must be positive")

    if cmd in ("drive", "trace") and kappas is None:
        raise UsageError(f"{cmd} requires --kappa")
    if cmd == "experiment":
        if not vals.get("experiment"):
            raise UsageError("experiment requires --experiment NAME")
        from .experiments import EXPERIMENTS
        if vals["experiment"] not in EXPERIMENTS:
            raise UsageError(f"unknown experiment {vals['experiment']!r}; choose from {', '.join(sorted(EXPERIMENTS))}")
        if kappas and any(k == 0 for k in kappas):
            raise UsageError("experiment kappas must be positive")
    elif params:
        raise UsageError("--param is only valid for experiment")
    if cmd == "hcap" and vals.get("fixture") and vals.get("input"):
        raise UsageError("conflicting flags: --fixture and --input")
    fmt = vals.get("format")
    allowed = {"drive": ("csv", "json", "svg"), "trace": FORMATS, "hcap": ("json", "csv"),
               "bubbles": ("json", "csv", "pgm", "svg"), "experiment": ("json",)}[cmd]
    if fmt is not None and fmt not in allowed:
        raise UsageError(f"format {fmt!r} not available for {cmd}")
    if params:
        vals["param"] = params
    return RunConfig(cmd, vals, seed, out, threads)


# -- execution -------------------------------------------------------------

def _time_grid(p: dict, default_T: float = 1.0, default_dt: float = 1e-3):
    steps, dt, T = p.get("steps"), p.get("dt"), p.get("T")
    if steps is not None:
        if dt is None:
            T = default_T if T is None else T
            dt = T / steps
        T = steps * dt
    else:
        dt = default_dt if dt is None else dt
        T = default_T if T is None else T
    return T, dt


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _versions() -> dict:
    import matplotlib
    import numba
    import numpy
    import scipy
    return {"slelab": __version__, "python": platform.python_version(), "numpy": numpy.__version__,
            "scipy": scipy.__version__, "numba": numba.__version__, "matplotlib": matplotlib.__version__}


def _default_out(cfg: RunConfig, fmt: str) -> str:
    if cfg.command == "experiment":
        return f"{cfg.params['experiment']}_out"
    return f"{cfg.command}.{fmt}"


def _drive(cfg: RunConfig):
    from .bessel_sde import sample_brownian
    from .driving import (ForcePointConfig, chordal_sle_driving, radial_sle_driving,
                          sle_kappa_rho_driving_bessel, sle_kappa_rho_driving_euler)

    p = cfg.params
    T, dt = _time_grid(p)
    noise = sample_brownian(T, dt, cfg.seed)
    kappa = p["kappa"][0]
    rho = p.get("rho") or []
    at = p.get("at") or [0.0] * len(rho)
    if p.get("geometry") == "radial":
        if len(rho) > 1:
            raise ParameterError("radial drives take a single force point")
        return radial_sle_driving(kappa, rho[0] if rho else 0.0, p.get("theta0", math.pi), noise)
    if not rho:
        return chordal_sle_driving(kappa, noise)
    if p.get("route") == "bessel":
        if len(rho) != 1:
            raise ParameterError("the Bessel route takes a single force point")
        return sle_kappa_rho_driving_bessel(kappa, rho[0], abs(at[0]), "left" if at[0] < 0 else "right", noise)
    left = [(x, r) for x, r in zip(at, rho) if x < 0]
    right = [(x, r) for x, r in zip(at, rho) if x >= 0]
    return sle_kappa_rho_driving_euler(kappa, ForcePointConfig(tuple(left), tuple(right)), noise)


def _run_drive(cfg: RunConfig, out: Path, fmt: str):
    drive = _drive(cfg)
    if fmt == "csv":
        drive.to_csv(out)
    elif fmt == "json":
        data = drive.metadata()
        data["W"] = [[w.real, w.imag] for w in drive.W] if drive.geometry == "radial" else drive.W.tolist()
        data["V"] = drive.V.tolist()
        out.write_text(json.dumps(data, indent=1, sort_keys=True) + "\n")
    else:
        from .plotting import plot_driving
        plot_driving(drive, out)
    return [out], {"threshold_index": drive.threshold_index}


def _run_trace(cfg: RunConfig, out: Path, fmt: str):
    from . import geometry as geo
    from . import loewner

    drive = _drive(cfg)
    if drive.geometry != "chordal":
        raise ParameterError("traces are computed for chordal drives")
    trace = loewner.compute_trace(drive)
    if fmt == "csv":
        trace.to_csv(out)
    elif fmt == "json":
        out.write_text(json.dumps({"kappa": trace.kappa, "dt": trace.dt, "parameterization": trace.parameterization,
                                   "t": trace.times.tolist(), "re": trace.points.real.tolist(),
                                   "im": trace.points.imag.tolist()}, sort_keys=True) + "\n")
    elif fmt == "svg":
        trace.to_svg(out)
    else:
        geo.rasterize_polyline(trace.points, cfg.params.get("pixel")).to_pgm(out)
    return [out], {"points": len(trace)}


def _hull_from_cfg(cfg: RunConfig):
    from . import geometry as geo
    from . import loewner

    p = cfg.params
    if p.get("fixture"):
        return geo.fixture(p["fixture"], p.get("height", 1.0), p.get("pixel"))
    if p.get("input"):
        return geo.HullRaster.from_pgm(p["input"], 0j, p.get("pixel", 1.0))
    if not p.get("kappa"):
        raise ParameterError("hcap needs --fixture, --input or --kappa")
    trace = loewner.compute_trace(_drive(cfg))
    return geo.fill_hull(geo.rasterize_polyline(trace.points, p.get("pixel")))


def _run_hcap(cfg: RunConfig, out: Path, fmt: str):
    from . import geometry as geo

    hull = _hull_from_cfg(cfg)
    est = geo.estimate_hcap(hull, n=cfg.params.get("samples", 10_000), seed=cfg.seed, threads=cfg.threads)
    if fmt == "csv":
        out.write_text("value,stderr,n_samples,seed,lost\n"
                       f"{est.value!r},{float(est.stderr)!r},{est.n_samples},{est.seed},{est.lost}\n")
    else:
        out.write_text(json.dumps({k: (float(v) if isinstance(v, float) else v) for k, v in est.to_dict().items()},
                                  indent=2, sort_keys=True) + "\n")
    return [out], {"hcap": est.value, "stderr": float(est.stderr)}


def _run_bubbles(cfg: RunConfig, out: Path, fmt: str):
    from . import geometry as geo
    from . import loewner

    p = cfg.params
    if p.get("input"):
        raster = geo.HullRaster.from_pgm(p["input"], 0j, p.get("pixel", 1.0))
    else:
        if not p.get("kappa"):
            raise ParameterError("bubbles needs --input or --kappa")
        trace = loewner.compute_trace(_drive(cfg), stop_radius=p.get("radius", 1.0))
        pixel = p.get("pixel", 1 / 512)
        step = float(np.median(np.abs(np.diff(trace.points)))) if len(trace) > 1 else 0.0
        raster = geo.close_gaps(geo.rasterize_polyline(trace.points, pixel), math.ceil(0.5 * step / pixel))
    report = geo.bubbles(raster)
    if fmt == "json":
        out.write_text(report.to_json() + "\n")
    elif fmt == "csv":
        lines = ["pixel_count,diameter,center_re,center_im,radius,radius_px2,touches_real_line"]
        for b in report.components:
            lines.append(f"{b.pixel_count},{b.diameter!r},{b.center.real!r},{b.center.imag!r},{b.radius!r},"
                         f"{b.radius_px2},{int(b.touches_real_line)}")
        out.write_text("\n".join(lines) + "\n")
    elif fmt == "pgm":
        raster.to_pgm(out)
    else:
        from .plotting import plot_raster
        plot_raster(raster, out)
    return [out], {"components": len(report.components), "max_radius": report.max_radius}


def _run_experiment(cfg: RunConfig, out: Path, fmt: str):
    from .experiments import ExperimentConfig, run_experiment

    p = cfg.params
    kw = {}
    for key in ("samples", "dt", "T"):
        if key in p:
            kw[key] = p[key]
    if "steps" in p:
        kw["T"], kw["dt"] = _time_grid(p)
    ecfg = ExperimentConfig(name=p["experiment"], kappas=tuple(p.get("kappa") or ()), seed=cfg.seed,
                            out_dir=str(out), threads=cfg.threads, params=dict(p.get("param", {})), **kw)
    report = run_experiment(ecfg)
    files = report.save(out, raw=bool(p.get("raw")))
    summary = {"passed": report.passed, "criteria": {k: bool(v) for k, v in report.criteria.items()},
               "wall_clock": report.wall_clock}
    if not report.passed:
        summary["failure"] = "criteria not met or fit censored"
    return list(files.values()), summary


_RUNNERS = {"drive": _run_drive, "trace": _run_trace, "hcap": _run_hcap, "bubbles": _run_bubbles,
            "experiment": _run_experiment}
_DEFAULT_FORMAT = {"drive": "csv", "trace": "csv", "hcap": "json", "bubbles": "json", "experiment": "json"}


def run(cfg: RunConfig) -> int:
    """Execute a parsed config, write artifacts and the manifest, return the exit code."""
    fmt = cfg.params.get("format", _DEFAULT_FORMAT[cfg.command])
    out = Path(cfg.out or _default_out(cfg, fmt))
    manifest_path = (out / "manifest.json") if cfg.command == "experiment" else out.with_name(out.name + ".manifest.json")
    t0 = time.perf_counter()
    code, message, files, summary = EXIT_OK, None, [], {}
    try:
        if cfg.command == "experiment":
            out.mkdir(parents=True, exist_ok=True)
        elif not out.parent.exists():
            raise OSError(f"output directory {out.parent} does not exist")
        files, summary = _RUNNERS[cfg.command](cfg, out, fmt)
        if summary.get("passed") is False:
            code, message = EXIT_FAILURE, summary["failure"]
    except (Refusal, ParameterError, OSError, ValueError, RuntimeError) as exc:
        code, message = EXIT_FAILURE, f"{type(exc).__name__}: {exc}"
    manifest = {"config": cfg.echo(), "threads": cfg.threads, "format": fmt, "versions": _versions(),
                "exit_code": code, "message": message, "summary": summary,
                "wall_clock": time.perf_counter() - t0,
                "artifacts": {Path(f).name: _sha256(f) for f in files if Path(f).exists()}}
    try:
        manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True, default=str) + "\n")
    except OSError as exc:
        print(f"slelab: could not write manifest: {exc}", file=sys.stderr)
    if message:
        print(f"slelab: {message}", file=sys.stderr)
    return code


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = _build_parser()
    if not argv:
        parser.print_help()
        return EXIT_OK
    try:
        cfg = parse_args(argv)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"slelab: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return run(cfg)


if __name__ == "__main__":
    sys.exit(main())
