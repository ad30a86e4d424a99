"""``diskbot`` command line.

Exit codes: 0 success (including an expected failure that was observed),
1 runtime divergence or a failed behavioural metric, 2 usage or config error.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from . import scenarios as sc
from .config import DEFAULT_OUT, DEFAULTS, OUT_ENV, load_config, parse_flag_value, write_manifest
from .errors import ConfigError, DiskbotError
from .linmodel import (PDGains, analyse_gains, closed_loop_tf, hurwitz_test, q_factor,
                       stable_gain_region)
from .magnetics import (PRESETS, STANDARD_GRAVITY, GapForceParams, coupling_force,
                        default_link, flux_profile, gap_force_discrepancy, preset_array)
from .svg import heatmap, line_plot

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# helpers


def _out_dir(args) -> Path:
    base = args.out or os.environ.get(OUT_ENV) or DEFAULT_OUT
    path = Path(base)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _overrides(pairs) -> dict:
    out = {}
    for item in pairs or ():
        key, sep, text = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key = key.strip()
        out[key] = parse_flag_value(key, text.strip())
    return out


def _config(args, extra=None):
    overrides = _overrides(args.set)
    overrides.update(extra or {})
    return load_config(args.config, overrides)


def _write(path: Path, text: str) -> Path:
    path.write_text(text)
    return path


# ---------------------------------------------------------------------------
# magnet


def cmd_magnet_presets(args) -> int:
    for name in PRESETS:
        arr = preset_array(name)
        pol = "".join("+" if c.polarity > 0 else "-" for c in arr.cells)
        print(f"{name}\t{len(arr.cells)} cells\tpolarities {pol}")
    return EXIT_OK


def cmd_magnet_flux(args) -> int:
    if not 0 < args.from_mm < args.to_mm:
        raise UsageError("need 0 < --from-mm < --to-mm")
    if args.samples < 2:
        raise UsageError("--samples must be at least 2")
    prof = flux_profile(preset_array(args.preset), args.from_mm * 1e-3, args.to_mm * 1e-3, args.samples)
    out = _out_dir(args)
    stem = f"flux_{args.preset}"
    csv_path = prof.to_csv(out / f"{stem}.csv")
    svg = line_plot([(prof.distances * 1e3, prof.flux_magnitude, args.preset)],
                    title=f"|B| on the axis of preset {args.preset}",
                    xlabel="distance from array centre (mm)", ylabel="|B| (T)")
    svg_path = _write(out / f"{stem}.svg", svg)
    print(f"max |B| {prof.flux_magnitude.max():.6g} T over [{args.from_mm:g}, {args.to_mm:g}] mm")
    print(f"wrote {csv_path}")
    print(f"wrote {svg_path}")
    return EXIT_OK


def cmd_magnet_force(args) -> int:
    rec = gap_force_discrepancy(GapForceParams(), STANDARD_GRAVITY)
    if args.gap_mm is not None:
        if args.gap_mm < 0:
            raise UsageError("--gap-mm must be non-negative")
        link = default_link(args.preset)
        gap = args.gap_mm * 1e-3
        a = preset_array(args.preset)
        raw = -float(coupling_force(a, a.negated(), gap + link.standoff)[2])
        print(f"preset {args.preset}: array standoff {link.standoff * 1e3:.3f} mm at shell contact")
        print(f"coupling force at shell gap {args.gap_mm:g} mm: {float(link.force(gap)):.6g} N "
              f"(array model {raw:.6g} N)")
    print(f"pole-face formula mu0*H^2*A/2: {rec['computed_force_N']:.4f} N")
    print(f"reported reference force:      {rec['reported_force_N']:.2f} N")
    print(f"ratio computed/reported: {rec['ratio_computed_to_reported']:.4f}")
    print(f"note: {rec['note']}")
    if args.json:
        print(json.dumps(rec, indent=2))
    return EXIT_OK


# ---------------------------------------------------------------------------
# gains


def _module_from_args(args, cfg):
    p = cfg.module_params()
    kw = {k: getattr(args, k) for k in ("M", "m", "l", "I", "b", "g") if getattr(args, k) is not None}
    return p.with_(**kw) if kw else p


def cmd_gains_check(args) -> int:
    cfg = _config(args)
    p = _module_from_args(args, cfg)
    gains = PDGains(cfg["gains.kp"] if args.kp is None else args.kp,
                    cfg["gains.kd"] if args.kd is None else args.kd)
    res = analyse_gains(p, gains)
    c = res.conditions
    print(f"module: M={p.M:g} m={p.m:g} l={p.l:g} I={p.I:g} b={p.b:g} g={p.g:g}  q={q_factor(p):.6g}")
    print(f"gains: kp={gains.kp:g} kd={gains.kd:g}")
    print(f"condition 1  b(I+ml^2) + kd*l*m > 0 : {'TRUE' if c.damping_ok else 'FALSE'}  "
          f"margin {c.damping_margin:.6g}")
    print(f"condition 2  kp*l*m - (M+m)*m*g*l > 0 : {'TRUE' if c.stiffness_ok else 'FALSE'}  "
          f"margin {c.stiffness_margin:.6g}  (kp threshold (M+m)g = {c.kp_min:.4f})")
    for w in c.warnings:
        print(f"warning: {w}")
    den = " ".join(f"{v + 0.0:.6g}" for v in res.denominator[::-1])
    print(f"closed-loop denominator (descending): {den}")
    print(f"constant term -b*g*l*m/q = {res.constant_term + 0.0:.6g}")
    print(f"full Hurwitz: {res.hurwitz.verdict} (first column sign changes {res.hurwitz.sign_changes})")
    if res.constant_term == 0.0:
        reduced = closed_loop_tf(p, gains).cancel_origin()
        if reduced.denominator.degree() >= 1:
            print(f"after cancelling the s=0 pole-zero pair: {hurwitz_test(reduced.denominator).verdict}")
    poles = ", ".join(f"{z.real:.6g}{z.imag:+.6g}j" for z in np.sort_complex(res.poles))
    print(f"closed-loop poles: {poles}")
    return EXIT_OK


def cmd_gains_sweep(args) -> int:
    if args.n < 2:
        raise UsageError("--n must be at least 2")
    cfg = _config(args)
    p = _module_from_args(args, cfg)
    region = stable_gain_region(p, args.kp_range, args.kd_range, args.n, cancel_origin=args.cancel_origin)
    out = _out_dir(args)
    csv_path = region.to_csv(out / "gain_region.csv")
    svg = heatmap(region.stable, region.kp, region.kd, title="closed-loop stability (green = stable)",
                  xlabel="kp", ylabel="kd")
    svg_path = _write(out / "gain_region.svg", svg)
    print(f"{int(region.stable.sum())} of {region.stable.size} cells stable")
    print(f"wrote {csv_path}")
    print(f"wrote {svg_path}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# sim


def _sim_overrides(args) -> dict:
    extra = {}
    name = args.scenario
    if getattr(args, "duration", None) is not None:
        extra[f"scenario.{name}.duration_s"] = args.duration
    if getattr(args, "dt", None) is not None:
        extra["sim.dt_s"] = args.dt
    return extra


def _check_scenario(name: str) -> None:
    if name not in sc.BUILDERS:
        raise UsageError(f"unknown scenario {name!r}; choose from {', '.join(sc.BUILDERS)}")


def run_one(name: str, cfg, out: Path) -> sc.MetricReport:
    """Run scenario ``name`` under ``cfg`` and write every artefact into ``out``."""
    out.mkdir(parents=True, exist_ok=True)
    scenario = cfg.scenario(name)
    logs, report = sc.run_scenario(scenario)
    files = []
    for label, log in logs.items():
        stem = "trajectory" if len(logs) == 1 else f"trajectory_{label}"
        log.to_csv(out / f"{stem}.csv")
        files.append(f"{stem}.csv")
        ang = [(log.t, np.degrees(log.column("theta", i)), f"theta[{i}]") for i in range(log.n_modules)]
        phi = [(log.t, np.degrees(log.column("phi", i)), f"phi[{i}]") for i in range(log.n_modules)]
        suffix = "" if len(logs) == 1 else f"_{label}"
        _write(out / f"theta{suffix}.svg", line_plot(ang, f"{name} {label}: pendulum angle",
                                                     "t (s)", "theta (deg)"))
        _write(out / f"phi{suffix}.svg", line_plot(phi, f"{name} {label}: shell angle",
                                                   "t (s)", "phi (deg)"))
        files += [f"theta{suffix}.svg", f"phi{suffix}.svg"]
        if log.status == "failed":
            files.append(f"{stem}.csv (partial: {log.message})")
    _write(out / "report.txt", report.to_text() + "\n")
    _write(out / "report.json", report.to_json() + "\n")
    extra = {"scenario": name, "outcome": report.outcome,
             "runs": {k: {"status": v.status, "message": v.message} for k, v in logs.items()},
             "files": files + ["report.txt", "report.json"]}
    write_manifest(cfg.manifest(out, extra), out / "manifest.json")
    return report


def _report_exit(report: sc.MetricReport) -> int:
    return EXIT_OK if report.passed else EXIT_RUNTIME


def cmd_sim_run(args) -> int:
    _check_scenario(args.scenario)
    cfg = _config(args, _sim_overrides(args))
    out = _out_dir(args) / args.scenario
    report = run_one(args.scenario, cfg, out)
    print(report.to_text())
    print(f"outputs in {out}")
    return _report_exit(report)


def _pool_job(job):
    name, cfg, out = job
    return run_one(name, cfg, Path(out))


def _run_jobs(jobs, workers: int):
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(min(workers, len(jobs))) as pool:
            return list(pool.map(_pool_job, jobs))
    return [_pool_job(j) for j in jobs]


def cmd_sim_all(args) -> int:
    cfg = _config(args)
    base = _out_dir(args)
    jobs = [(name, cfg, str(base / name)) for name in sc.BUILDERS]
    reports = _run_jobs(jobs, args.workers)
    lines = []
    for rep in reports:
        print(rep.to_text())
        lines.append(f"{rep.scenario}: {rep.outcome}")
    flag = sc.suite_flag(reports)
    lines.append("suite: " + ("all behavioural metrics pass" if flag == 0 else "FAILED"))
    _write(base / "summary.txt", "\n".join(lines) + "\n")
    print(lines[-1])
    return flag


def _sweep_values(args) -> list:
    if args.values:
        return [parse_flag_value(args.param, v.strip()) for v in args.values.split(",") if v.strip()]
    if args.range is None:
        raise UsageError("give --values or --range START STOP N")
    start, stop, n = args.range
    if n < 1 or n != int(n):
        raise UsageError("--range N must be a positive integer")
    return [float(v) for v in np.linspace(start, stop, int(n))]


def cmd_sim_sweep(args) -> int:
    _check_scenario(args.scenario)
    if args.param not in DEFAULTS:
        raise ConfigError(f"unknown configuration key: {args.param}")
    values = _sweep_values(args)
    base = _out_dir(args) / f"sweep_{args.scenario}_{args.param}"
    jobs = []
    for k, v in enumerate(values):
        extra = _sim_overrides(args)
        extra[args.param] = v
        cfg = _config(args, extra)
        jobs.append((args.scenario, cfg, str(base / f"{k:03d}_{v}")))
    reports = _run_jobs(jobs, args.workers)
    lines = [f"{args.param}\toutcome\tdirectory"]
    for (_, _, d), v, rep in zip(jobs, values, reports):
        lines.append(f"{v}\t{rep.outcome}\t{Path(d).name}")
    _write(base / "summary.tsv", "\n".join(lines) + "\n")
    print("\n".join(lines))
    return sc.suite_flag(reports)


# ---------------------------------------------------------------------------
# parser


def _common(add_defaults: bool) -> argparse.ArgumentParser:
    sup = None if add_defaults else argparse.SUPPRESS
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", default=sup, help="TOML configuration file")
    p.add_argument("--out", default=sup, help=f"output directory (default ${OUT_ENV} or {DEFAULT_OUT})")
    p.add_argument("--set", action="append", default=sup, metavar="KEY=VALUE",
                   help="override one configuration key; repeatable")
    return p


def _module_args(p):
    for name in ("M", "m", "l", "I", "b", "g"):
        p.add_argument(f"--{name}", type=float, default=None, help=f"override module {name} (SI)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="diskbot", parents=[_common(True)],
                                     description="Magnet, gain and simulation tools for coupled disk modules.")
    parser.add_argument("--version", action="version", version=f"diskbot {__version__}")
    leaf = _common(False)
    top = parser.add_subparsers(dest="group", required=True)

    mag = top.add_parser("magnet", help="magnet array analysis").add_subparsers(dest="cmd", required=True)
    p = mag.add_parser("flux", parents=[leaf], help="|B| along the array axis, CSV + SVG")
    p.add_argument("--preset", default="H")
    p.add_argument("--from-mm", type=float, default=5.0)
    p.add_argument("--to-mm", type=float, default=20.0)
    p.add_argument("--samples", type=int, default=50)
    p.set_defaults(func=cmd_magnet_flux)
    p = mag.add_parser("force", parents=[leaf], help="coupling force and pole-face formula")
    p.add_argument("--gap-mm", type=float, default=None)
    p.add_argument("--preset", default="H-reversed")
    p.add_argument("--eq1", action="store_true", help="only the pole-face formula comparison")
    p.add_argument("--json", action="store_true", help="also print the discrepancy record as JSON")
    p.set_defaults(func=cmd_magnet_force)
    p = mag.add_parser("presets", parents=[leaf], help="list array layouts")
    p.set_defaults(func=cmd_magnet_presets)

    gains = top.add_parser("gains", help="PD gain analysis").add_subparsers(dest="cmd", required=True)
    p = gains.add_parser("check", parents=[leaf], help="inequalities, Hurwitz verdict and poles")
    p.add_argument("--kp", type=float, default=None)
    p.add_argument("--kd", type=float, default=None)
    _module_args(p)
    p.set_defaults(func=cmd_gains_check)
    p = gains.add_parser("sweep", parents=[leaf], help="stability grid, CSV + SVG heatmap")
    p.add_argument("--n", type=int, default=21)
    p.add_argument("--kp-range", type=float, nargs=2, default=(0.0, 6.0), metavar=("LO", "HI"))
    p.add_argument("--kd-range", type=float, nargs=2, default=(0.0, 1.0), metavar=("LO", "HI"))
    p.add_argument("--cancel-origin", action="store_true",
                   help="judge the angle channel after cancelling the s=0 pole-zero pair")
    _module_args(p)
    p.set_defaults(func=cmd_gains_sweep)

    sim = top.add_parser("sim", help="scenario simulation").add_subparsers(dest="cmd", required=True)
    p = sim.add_parser("run", parents=[leaf], help="run one scenario")
    p.add_argument("--scenario", required=True)
    p.add_argument("--duration", type=float, default=None, help="seconds")
    p.add_argument("--dt", type=float, default=None, help="seconds")
    p.set_defaults(func=cmd_sim_run)
    p = sim.add_parser("all", parents=[leaf], help="run the five-scenario suite")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_sim_all)
    p = sim.add_parser("sweep", parents=[leaf], help="vary one configuration key")
    p.add_argument("--scenario", required=True)
    p.add_argument("--param", required=True, help="dotted configuration key")
    p.add_argument("--values", default=None, help="comma separated values")
    p.add_argument("--range", type=float, nargs=3, default=None, metavar=("START", "STOP", "N"))
    p.add_argument("--duration", type=float, default=None)
    p.add_argument("--dt", type=float, default=None)
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_sim_sweep)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (UsageError, DiskbotError) as exc:
        # DiskbotError here means bad parameter values from the command line
        msg = exc.args[0] if exc.args else str(exc)
        print(f"diskbot: error: {msg}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
