"""Experiment runner: configuration, execution, persistence, plotting.

Every subcommand writes its tables as CSV and its nested reports as JSON
into the output directory, renders the relevant matplotlib figure next to
them, and finishes by writing a MANIFEST.json with the SHA-256 of every
artifact.  File headers carry the package version, the full configuration
and the seed, and contain nothing time-dependent, so a rerun with the same
configuration is bit-identical.

Configuration can come from a key=value file (--config) overridden by
flags; the default output directory comes from MAGLORENTZ_OUT.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__, coupling, figures, legs_green, limit_process, markovized
from . import physical_mlp, stats
from .environment import ScattererField, condition_start_free
from .randomness import RandomStream


# ---------------------------------------------------------------------------
# persistence helpers

def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return str(v)


def header_lines(config: dict):
    items = ", ".join(f"{k}={_fmt(v)}" for k, v in sorted(config.items()))
    return [f"# maglorentz {__version__}", f"# config: {items}",
            f"# seed: {config.get('seed')}"]


def write_csv(path: Path, config: dict, columns, rows):
    with open(path, "w") as fh:
        for line in header_lines(config):
            fh.write(line + "\n")
        fh.write(",".join(columns) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")
    return path


def write_json(path: Path, config: dict, payload: dict):
    doc = {"meta": {"version": __version__, "config": config,
                    "seed": config.get("seed")}}
    doc.update(payload)
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1, default=_json_default)
        fh.write("\n")
    return path


def _json_default(obj):
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if dataclasses.is_dataclass(obj):
        return dataclasses.asdict(obj)
    raise TypeError(f"not JSON-serializable: {type(obj)}")


def write_manifest(out_dir: Path, artifacts, complete: bool, config: dict):
    entries = {}
    for p in artifacts:
        p = Path(p)
        entries[p.name] = hashlib.sha256(p.read_bytes()).hexdigest()
    doc = {"version": __version__, "complete": complete, "config": config,
           "artifacts": entries}
    with open(out_dir / "MANIFEST.json", "w") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")


class Runner:
    """Collects artifacts so the manifest can mark partial results."""

    def __init__(self, out_dir: Path, config: dict):
        self.out = Path(out_dir)
        self.out.mkdir(parents=True, exist_ok=True)
        self.config = config
        self.artifacts = []

    def csv(self, name, columns, rows):
        self.artifacts.append(write_csv(self.out / name, self.config, columns, rows))
        return self.artifacts[-1]

    def json(self, name, payload):
        self.artifacts.append(write_json(self.out / name, self.config, payload))
        return self.artifacts[-1]

    def add(self, path):
        self.artifacts.append(Path(path))
        return self.artifacts[-1]

    def finish(self, complete=True):
        write_manifest(self.out, self.artifacts, complete, self.config)


# ---------------------------------------------------------------------------
# configuration

def load_config_file(path):
    out = {}
    for raw in Path(path).read_text().splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise SystemExit(f"config line without '=': {raw!r}")
        k, v = (s.strip() for s in line.split("=", 1))
        out[k] = v
    return out


def _common(parser):
    parser.add_argument("--seed", type=int, default=1)
    parser.add_argument("--out", type=str,
                        default=os.environ.get("MAGLORENTZ_OUT", "out"))
    parser.add_argument("--config", type=str, default=None,
                        help="key=value file; flags override it")
    parser.add_argument("--format", choices=("svg", "png"), default="svg")


def build_parser():
    ap = argparse.ArgumentParser(prog="maglorentz",
                                 description="magnetic Lorentz gas laboratory")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("limit", help="limit-process discrete run and trajectory dump")
    _common(p)
    p.add_argument("--steps", type=int, default=1000)

    p = sub.add_parser("markovized", help="eps-flight run with arcs")
    _common(p)
    p.add_argument("--eps", type=float, default=0.01)
    p.add_argument("--T", type=float, default=100.0)

    p = sub.add_parser("physical", help="event-driven runs and scenario census")
    _common(p)
    p.add_argument("--eps", type=float, default=0.05)
    p.add_argument("--rho", type=float, default=None, help="default 2/eps")
    p.add_argument("--T", type=float, default=100.0)
    p.add_argument("--runs", type=int, default=100)
    p.add_argument("--r-max", type=float, default=20.0)
    p.add_argument("--t-max", type=float, default=1e3)

    p = sub.add_parser("couple", help="coupled runs and mismatch census")
    _common(p)
    p.add_argument("--eps-grid", type=str, default="0.02,0.01,0.005")
    p.add_argument("--T", type=float, default=10.0)
    p.add_argument("--runs", type=int, default=2000)
    p.add_argument("--mismatch-mode", choices=("collision-point", "center", "both"),
                   default="collision-point")
    p.add_argument("--workers", type=int, default=1)

    p = sub.add_parser("traps", help="free-orbit probability census")
    _common(p)
    p.add_argument("--eps", type=float, default=0.01)
    p.add_argument("--rho", type=float, default=None)
    p.add_argument("--runs", type=int, default=100000)

    p = sub.add_parser("green", help="occupation measures and bound fits")
    _common(p)
    p.add_argument("--eps", type=float, default=0.02)
    p.add_argument("--lanes", type=int, default=256)
    p.add_argument("--steps-per-lane", type=int, default=20000)
    p.add_argument("--window-lanes", type=int, default=2000)
    p.add_argument("--window-T", type=float, default=200.0)
    p.add_argument("--legs-mode", choices=("exact", "bernoulli"), default="bernoulli")
    p.add_argument("--delta-legs", type=float, default=0.02)

    p = sub.add_parser("legs", help="pack harvest and independence diagnostics")
    _common(p)
    p.add_argument("--eps", type=float, default=0.05)
    p.add_argument("--packs", type=int, default=200)
    p.add_argument("--legs-mode", choices=("exact", "bernoulli"), default="bernoulli")
    p.add_argument("--delta-legs", type=float, default=None,
                   help="default: the validated minorization constant")

    p = sub.add_parser("invariance", help="invariance-principle test battery")
    _common(p)
    p.add_argument("--process", choices=("limit", "markovized", "coupled"),
                   default="limit")
    p.add_argument("--eps", type=float, default=0.01)
    p.add_argument("--T", type=float, default=1000.0)
    p.add_argument("--paths", type=int, default=2000)

    p = sub.add_parser("plot", help="render a stored trajectory JSON")
    _common(p)
    p.add_argument("--input", type=str, required=True)
    p.add_argument("--output", type=str, default=None)
    return ap


def _coerce(v: str):
    for cast in (int, float):
        try:
            return cast(v)
        except ValueError:
            pass
    if v.lower() in ("true", "false"):
        return v.lower() == "true"
    return v


def _apply_config_file(args):
    if not args.config:
        return args
    overrides = load_config_file(args.config)
    defaults = build_parser().parse_args([args.command])  # per-command defaults
    for k, v in overrides.items():
        attr = k.replace("-", "_")
        if not hasattr(args, attr):
            raise SystemExit(f"unknown config key {k!r}")
        # flags explicitly given on the command line win over the file
        if getattr(args, attr) == getattr(defaults, attr, None):
            setattr(args, attr, _coerce(v))
    return args


def _config_dict(args, skip=("config", "out", "format")):
    return {k: v for k, v in sorted(vars(args).items()) if k not in skip}


# ---------------------------------------------------------------------------
# subcommands

def cmd_limit(args):
    cfg = _config_dict(args)
    run = Runner(Path(args.out), cfg)
    s = RandomStream(args.seed, 0)
    records = limit_process.simulate_discrete(args.steps, s)
    rows = [(r.n, r.state.zeta, r.state.theta, r.y.real, r.y.imag,
             r.Y.real, r.Y.imag) for r in records]
    run.csv("limit_path.csv", ["n", "zeta", "theta", "y_x", "y_y", "Y_x", "Y_y"], rows)
    draws = [r.draw for r in records]
    traj = limit_process.build_continuous(draws, phi0=0.0)
    arcs = [(a.center.real, a.center.imag, a.start_angle, a.sweep, a.t0)
            for a in traj.arcs()[:4000]]
    run.json("limit_arcs.json", {"kind": "limit", "eps": 0.0,
                                 "arcs": arcs, "scatterers": []})
    fig = figures.trajectory_figure(
        [a[:4] for a in arcs],
        collision_points=[(p.real, p.imag) for p in traj.collision_positions()],
        title="limit process", path=str(run.out / f"limit_trajectory.{args.format}"))
    run.add(fig)
    run.finish()
    return 0


def cmd_markovized(args):
    cfg = _config_dict(args)
    run = Runner(Path(args.out), cfg)
    s = RandomStream(args.seed, 0)
    records = markovized.simulate_markovized(args.T, args.eps, s)
    rows = [(r.n, args.eps, r.zeta, r.psi.theta_tilde,
             (r.Y - r.Y_prev).real, (r.Y - r.Y_prev).imag, r.Y.real, r.Y.imag)
            for r in records]
    run.csv("markovized_path.csv",
            ["n", "eps", "zeta", "theta", "y_x", "y_y", "Y_x", "Y_y"], rows)
    arcs = []
    scatterers = []
    for r in records:
        scatterers.append(markovized.scatterer_center(r.Y_prev, r.phi_prev,
                                                      r.draw.alpha, args.eps))
        for a in markovized.segment_arcs(r, args.eps):
            arcs.append((a.center.real, a.center.imag, a.start_angle, a.sweep, a.t0))
    run.json("markovized_arcs.json",
             {"kind": "markovized", "eps": args.eps, "arcs": arcs,
              "scatterers": [(c.real, c.imag) for c in scatterers]})
    fig = figures.trajectory_figure(
        [a[:4] for a in arcs], scatterers=[(c.real, c.imag) for c in scatterers],
        eps=args.eps, title=f"markovized, eps={args.eps}",
        path=str(run.out / f"markovized_trajectory.{args.format}"))
    run.add(fig)
    run.finish()
    return 0


def cmd_physical(args):
    cfg = _config_dict(args)
    rho = args.rho if args.rho is not None else 2.0 / args.eps
    cfg["rho"] = rho
    run = Runner(Path(args.out), cfg)
    cutoffs = physical_mlp.ScenarioCutoffs(r_max=args.r_max, t_max=args.t_max)
    counts = {k: 0 for k in ("A", "B", "C", "D", "UNRESOLVED")}
    first = None
    for r in range(args.runs):
        field = condition_start_free(
            ScattererField(rho, args.eps, args.seed, 2 * r), 0j)
        result = physical_mlp.simulate_physical(
            field, args.T, RandomStream(args.seed, 2 * r + 1), cutoffs,
            keep_arcs=(r == 0))
        counts[result.label] += 1
        if r == 0:
            first = (result, field)
    run.csv("scenario_census.csv",
            ["eps", "rho", "T", "runs", "A", "B", "C", "D", "UNRESOLVED",
             "r_max", "t_max"],
            [(args.eps, rho, args.T, args.runs, counts["A"], counts["B"],
              counts["C"], counts["D"], counts["UNRESOLVED"],
              cutoffs.r_max, cutoffs.t_max)])
    result, field = first
    arcs = [(a.center.real, a.center.imag, a.start_angle, a.sweep, a.t0)
            for a in result.arcs[:4000]]
    centers = [(x, y) for (_, _, x, y) in field.generated_centers()]
    run.json("physical_run.json",
             {"kind": "physical", "eps": args.eps, "rho": rho,
              "label": result.label, "arcs": arcs, "scatterers": centers,
              "collisions": [(e.t, e.center.real, e.center.imag,
                              e.hit_point.real, e.hit_point.imag)
                             for e in result.collisions]})
    fig = figures.trajectory_figure(
        [a[:4] for a in arcs], scatterers=centers, eps=args.eps,
        collision_points=[(e.hit_point.real, e.hit_point.imag)
                          for e in result.collisions],
        title=f"physical, label {result.label}",
        path=str(run.out / f"physical_trajectory.{args.format}"))
    run.add(fig)
    run.finish()
    return 0


def _census_chunk(task):
    eps_grid, T, n_runs, seed, mode, offset = task
    return coupling.mismatch_census(eps_grid, T, n_runs, seed, mode=mode,
                                    stream_offset=offset)


def cmd_couple(args):
    cfg = _config_dict(args)
    run = Runner(Path(args.out), cfg)
    eps_grid = [float(x) for x in args.eps_grid.split(",")]
    modes = ([coupling.MODE_COLLISION_POINT, coupling.MODE_CENTER]
             if args.mismatch_mode == "both" else [args.mismatch_mode])
    all_rows = []
    for mode in modes:
        if args.workers > 1:
            from multiprocessing import Pool
            per = args.runs // args.workers
            extras = args.runs - per * args.workers
            tasks = []
            offset = 0
            for w in range(args.workers):
                n_w = per + (1 if w < extras else 0)
                tasks.append((eps_grid, args.T, n_w, args.seed, mode, offset))
                offset += n_w
            with Pool(args.workers) as pool:
                chunks = pool.map(_census_chunk, tasks)
            rows = []
            for gi, eps in enumerate(eps_grid):
                hit = sum(c[gi].p_hat * c[gi].n_runs for c in chunks)
                sh = sum(c[gi].p_shadow * c[gi].n_runs for c in chunks)
                rc = sum(c[gi].p_recollide * c[gi].n_runs for c in chunks)
                lo, hi = coupling._wilson_ci(int(round(hit)), args.runs)
                rows.append(coupling.CensusRow(
                    eps=eps, T=args.T, n_runs=args.runs, p_hat=hit / args.runs,
                    ci_lo=lo, ci_hi=hi, p_shadow=sh / args.runs,
                    p_recollide=rc / args.runs, mode=mode))
        else:
            rows = coupling.mismatch_census(eps_grid, args.T, args.runs,
                                            args.seed, mode=mode)
        all_rows.extend(rows)
    run.csv("mismatch_census.csv",
            ["eps", "T", "n_runs", "p_hat", "ci_lo", "ci_hi",
             "p_shadow", "p_recollide", "mode"],
            [(r.eps, r.T, r.n_runs, r.p_hat, r.ci_lo, r.ci_hi,
              r.p_shadow, r.p_recollide, r.mode) for r in all_rows])
    primary = [r for r in all_rows if r.mode == modes[0]]
    fit = coupling.scaling_fit(primary)
    run.json("scaling_fit.json", {"fit": fit})
    fig = figures.census_figure(primary, fit,
                                path=str(run.out / f"mismatch_scaling.{args.format}"))
    run.add(fig)
    run.finish()
    return 0


def cmd_traps(args):
    cfg = _config_dict(args)
    rho = args.rho if args.rho is not None else 2.0 / args.eps
    cfg["rho"] = rho
    run = Runner(Path(args.out), cfg)
    report = stats.trap_probability(args.eps, rho, args.runs, args.seed)
    run.csv("trap_census.csv",
            ["eps", "rho", "n_runs", "p_hat", "ci_lo", "ci_hi", "formula"],
            [(report["eps"], report["rho"], report["n_runs"], report["p_hat"],
              report["ci_lo"], report["ci_hi"], report["formula"])])
    run.json("trap_summary.json", report)
    run.finish()
    return 0


def cmd_green(args):
    cfg = _config_dict(args)
    run = Runner(Path(args.out), cfg)
    harvest = legs_green.harvest_packs(
        args.eps, args.lanes, args.steps_per_lane, args.seed,
        delta=args.delta_legs if args.legs_mode == "bernoulli" else None,
        mode=args.legs_mode)
    G, H = legs_green.time_window_occupation(args.eps, args.window_lanes,
                                             args.window_T, args.seed,
                                             stream_index=1)
    hists = {"g": harvest.g_hist, "R": harvest.r_hist, "G": G, "H": H}
    report = legs_green.check_green_bounds(hists, args.eps)
    rows = []
    for kind, h in hists.items():
        for i in range(h.r_edges.size - 1):
            rows.append((kind, h.r_edges[i], h.r_edges[i + 1], h.mass[i],
                         h.stderr[i]))
    run.csv("occupation_histograms.csv",
            ["kind", "r_lo", "r_hi", "mass", "stderr"], rows)
    run.json("green_fit.json", {"report": report,
                                "n_packs": len(harvest.packs),
                                "mode": harvest.mode, "delta": harvest.delta})
    fig = figures.occupation_figure(hists, report,
                                    path=str(run.out / f"occupation.{args.format}"))
    run.add(fig)
    run.finish()
    return 0


def cmd_legs(args):
    cfg = _config_dict(args)
    run = Runner(Path(args.out), cfg)
    s = RandomStream(args.seed, 0)
    delta = args.delta_legs
    if delta is None and args.legs_mode == "bernoulli":
        delta = 0.05
    packs = []
    idx = 0
    while len(packs) < args.packs and idx < 10000:
        split = legs_green.nummelin_run(args.eps, 5000, RandomStream(args.seed, idx),
                                        delta=delta, mode=args.legs_mode)
        packs.extend(legs_green.decompose_packs(split))
        idx += 1
    packs = packs[:args.packs]
    rows = [(i + 1, p.gamma_len, p.displacement().real, p.displacement().imag,
             p.leg_duration) for i, p in enumerate(packs)]
    run.csv("packs.csv", ["n", "gamma", "disp_x", "disp_y", "leg_duration"], rows)
    gammas = np.array([p.gamma_len for p in packs], dtype=float)
    disps = np.array([abs(p.displacement()) for p in packs])
    run.json("pack_tests.json", {
        "n_packs": len(packs),
        "gamma_mean": float(gammas.mean()) if packs else None,
        "gamma_lag1_p": permutation_pvalue(gammas, s),
        "disp_lag1_p": permutation_pvalue(disps, s),
        "mode": args.legs_mode, "delta": delta})
    run.finish()
    return 0


def permutation_pvalue(series, s, n_perm: int = 2000):
    """Two-sided permutation test of the lag-1 autocorrelation."""
    x = np.asarray(series, dtype=float)
    if x.size < 10:
        return None
    obs = _lag1(x)
    count = 0
    for _ in range(n_perm):
        idx = np.argsort(s.uniform01(x.size))
        count += abs(_lag1(x[idx])) >= abs(obs)
    return (count + 1) / (n_perm + 1)


def _lag1(x):
    a, b = x[:-1], x[1:]
    sa, sb = a.std(), b.std()
    if sa == 0 or sb == 0:
        return 0.0
    return float(np.mean((a - a.mean()) * (b - b.mean())) / (sa * sb))


def cmd_invariance(args):
    cfg = _config_dict(args)
    run = Runner(Path(args.out), cfg)
    exp = stats.ScalingExperiment(process=args.process, n_paths=args.paths,
                                  T=args.T, seed=args.seed,
                                  eps=args.eps if args.process != "limit" else None)
    report = stats.invariance_suite(exp)
    run.json("invariance_report.json", report)
    if "msd" in report:
        run.add(figures.msd_figure(report["msd"],
                                   path=str(run.out / f"msd.{args.format}")))
    run.finish()
    return 0


def cmd_plot(args):
    cfg = _config_dict(args)
    run = Runner(Path(args.out), cfg)
    doc = json.loads(Path(args.input).read_text())
    out = args.output or str(run.out / f"plot.{args.format}")
    fig = figures.trajectory_figure(
        [tuple(a[:4]) for a in doc.get("arcs", ())],
        scatterers=[tuple(p) for p in doc.get("scatterers", ())],
        eps=doc.get("eps") or None,
        title=doc.get("kind", ""), path=out)
    run.add(fig)
    run.finish()
    return 0


COMMANDS = {
    "limit": cmd_limit,
    "markovized": cmd_markovized,
    "physical": cmd_physical,
    "couple": cmd_couple,
    "traps": cmd_traps,
    "green": cmd_green,
    "legs": cmd_legs,
    "invariance": cmd_invariance,
    "plot": cmd_plot,
}


def main(argv=None):
    args = build_parser().parse_args(argv)
    args = _apply_config_file(args)
    runner_cfg = _config_dict(args)
    try:
        return COMMANDS[args.command](args)
    except Exception as exc:  # flush a manifest marking the failure
        out = Path(args.out)
        if out.exists():
            existing = [p for p in out.iterdir()
                        if p.is_file() and p.name != "MANIFEST.json"]
            write_manifest(out, existing, complete=False, config=runner_cfg)
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
