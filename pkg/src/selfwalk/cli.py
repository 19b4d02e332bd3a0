"""Command-line front end.

Every output file starts with comment lines carrying the package version,
the RNG identifier and the fully resolved arguments as JSON; that JSON can
be fed back through ``--config`` to reproduce the file byte for byte.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__, analysis, coupling, engine, gibbs
from .kernel import KernelError, critical_ratio, new_symmetric, parse_literal, predict_stuck_size

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_RESOURCE = 0, 1, 2, 3

CLASSIFY_COLUMNS = ["a", "b", "kernel", "seed", "slope", "stderr", "label", "k_sites",
                    "sqrt_ratio", "log_ratio", "growth_ratio"]


class UsageError(Exception):
    pass


def threads() -> int:
    try:
        return max(1, int(os.environ.get("SELFWALK_THREADS", "1")))
    except ValueError:
        raise UsageError("SELFWALK_THREADS must be a positive integer") from None


def pool_map(fn, items):
    """Map over a bounded thread pool; results come back in input order."""
    n = threads()
    if n == 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=n) as ex:
        return list(ex.map(fn, items))


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return "" if math.isnan(v) else repr(v)
    return str(v)


def header(command: str, args: dict, **extra) -> str:
    lines = [f"# selfwalk {__version__} {command}", f"# rng: {engine.RNG_ID}"]
    lines += [f"# {k}: {v}" for k, v in extra.items()]
    lines.append("# args: " + json.dumps(args, sort_keys=True))
    return "\n".join(lines) + "\n"


def _resolved(ns: argparse.Namespace) -> dict:
    return {k: v for k, v in sorted(vars(ns).items()) if k not in ("func", "config", "command")}


def _kernel(ns):
    """(kernel, relative initial profile) from --preset / --kernel / --profile."""
    if ns.preset and ns.kernel:
        raise UsageError("give either --preset or --kernel, not both")
    if ns.preset:
        try:
            kernel, init = engine.preset(ns.preset)
        except engine.UnknownPresetError as exc:
            raise UsageError(str(exc)) from None
    elif ns.kernel:
        kernel, init = parse_literal(ns.kernel), {}
    else:
        raise UsageError("a kernel is required (--preset or --kernel)")
    if getattr(ns, "profile", None):
        init = {int(o): v for o, v in parse_literal_profile(ns.profile).items()}
    return kernel, init


def parse_literal_profile(text: str) -> dict[int, float]:
    """``"e:v;e:v"`` with half-integer offsets ``n/2`` -> ``{2e: v}``."""
    from fractions import Fraction
    out = {}
    try:
        for item in filter(None, (s.strip() for s in text.split(";"))):
            e, v = item.split(":")
            o2 = Fraction(e.strip()) * 2
            if o2.denominator != 1 or o2.numerator % 2 == 0:
                raise UsageError(f"offset {e!r} is not a half-integer")
            out[int(o2)] = float(Fraction(v.strip()))
    except ValueError as exc:
        raise UsageError(f"cannot parse profile {text!r}: {exc}") from None
    return out


def _write(path: str | None, text: str):
    if path in (None, "-"):
        sys.stdout.write(text)
        return
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(text)


# ---------------------------------------------------------------- run

def cmd_run(ns) -> int:
    kernel, init = _kernel(ns)
    cfg = engine.RunConfig(kernel, ns.steps, seed=ns.seed, initial_position=ns.x0,
                           initial_profile=init, initial_level=ns.level,
                           checkpoint_ratio=ns.ratio, run_index=ns.run_index)
    s = engine.run(cfg)
    head = header("run", _resolved(ns), kernel=str(kernel), seed=ns.seed, steps=ns.steps,
                  profile=cfg.profile_literal())
    traj = head + "n,position,range_min,range_max\n" + "".join(
        f"{n},{x},{lo},{hi}\n" for n, x, lo, hi in s.checkpoints())
    prof = head + "edge_left_endpoint,count,initial_value\n" + "".join(
        f"{e},{c},{_fmt(v)}\n" for e, c, v in s.final_profile.edge_table())
    prefix = ns.out
    _write(f"{prefix}_trajectory.csv", traj)
    _write(f"{prefix}_profile.csv", prof)
    print(f"final X = {int(s.position[-1])}, range = [{int(s.range_min[-1])}, {int(s.range_max[-1])}]")
    if ns.slope:
        est = analysis.scaling_exponent(s)
        print(f"slope = {est.slope:.4f} +- {est.stderr:.4f} over n in {est.window}"
              + (" (stuck)" if est.stuck else ""))
    return EXIT_OK


# ---------------------------------------------------------------- classify / sweep

def classify_row(kernel, init, steps, master, run_index, ratio, th, a=None, b=None) -> dict:
    cfg = engine.RunConfig(kernel, steps, seed=master, initial_profile=init,
                           checkpoint_ratio=ratio, run_index=run_index)
    row = {"a": a, "b": b, "kernel": str(kernel), "seed": run_index}
    try:
        label = analysis.classify_phase(engine.run(cfg), thresholds=th)
    except Exception as exc:  # a failed point must not stop the sweep
        row.update(label="failed", error=str(exc))
        return row
    d = label.diagnostics
    row.update(slope=d.get("slope"), stderr=d.get("stderr"), label=label.label,
               k_sites=label.k_sites, sqrt_ratio=d.get("sqrt_ratio"),
               log_ratio=d.get("log_ratio"), growth_ratio=d.get("growth_ratio"))
    return row


def _table(columns, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    w.writerows([_fmt(r.get(c)) for c in columns] for r in rows)
    return buf.getvalue()


def _thresholds(ns) -> analysis.Thresholds:
    return replace(analysis.DEFAULT_THRESHOLDS, min_steps=ns.min_steps)


def _grid_points(ns) -> list[tuple[float, float]]:
    if ns.circle:
        # phase diagram coordinates (b, a) on the unit circle
        return [(round(math.sin(t), 12) + 0.0, round(math.cos(t), 12) + 0.0)
                for t in (2 * math.pi * i / ns.circle for i in range(ns.circle))]
    if not (ns.a_range and ns.b_range):
        raise UsageError("sweep needs --circle N or both --a-range and --b-range")

    def rng(text):
        try:
            lo, hi, step = (float(x) for x in text.split(":"))
        except ValueError:
            raise UsageError(f"range {text!r} must be lo:hi:step") from None
        if step <= 0:
            raise UsageError("range step must be positive")
        n = int(math.floor((hi - lo) / step + 1e-9)) + 1
        return [round(lo + i * step, 12) for i in range(max(n, 0))]

    return [(a, b) for a in rng(ns.a_range) for b in rng(ns.b_range)]


def _run_points(ns, points, kernels, command) -> int:
    """Classify ``kernels[i]`` (one per point) over ``ns.seeds`` seeds; resumable by point."""
    if not points:
        raise UsageError("empty grid")
    if ns.seeds < 1:
        raise UsageError("--seeds must be at least 1")
    th = _thresholds(ns)
    parts = Path(ns.out + ".parts") if ns.out not in (None, "-") else None
    if parts:
        parts.mkdir(parents=True, exist_ok=True)

    def point(i):
        marker = parts / f"point_{i:06d}.json" if parts else None
        if marker and marker.exists():
            return json.loads(marker.read_text())
        (a, b), (kernel, init) = points[i], kernels[i]
        rows = [classify_row(kernel, init, ns.steps, ns.seed, i * ns.seeds + s, ns.ratio, th, a, b)
                for s in range(ns.seeds)]
        if marker and not any(r["label"] == "failed" for r in rows):
            marker.write_text(json.dumps(rows))
        return rows

    results = pool_map(point, range(len(points)))
    rows = [r for rows in results for r in rows]
    head = header(command, _resolved(ns), stuck_proxy=analysis.STUCK_PROXY)
    _write(ns.out, head + _table(CLASSIFY_COLUMNS, rows))
    failed = [r for r in rows if r["label"] == "failed"]
    for r in failed:
        print(f"failed: kernel {r['kernel']} seed {r['seed']}: {r.get('error')}", file=sys.stderr)
    return EXIT_FAIL if failed else EXIT_OK


def cmd_sweep(ns) -> int:
    # the all-zero kernel is degenerate and has no phase; leave it out of the grid
    pts = [(a, b) for a, b in _grid_points(ns) if (a, b) != (0.0, 0.0)]
    return _run_points(ns, pts, [(new_symmetric(a, b), {}) for a, b in pts], "sweep")


def cmd_classify(ns) -> int:
    kernel, init = _kernel(ns)
    a = b = None
    if kernel.is_symmetric and set(kernel.coeffs) <= {-3, -1, 1, 3}:
        a, b = kernel.weight(-3), kernel.weight(-1)
    return _run_points(ns, [(a, b)], [(kernel, init)], "classify")


def cmd_stuck_scan(ns) -> int:
    """Ratios ``b/|a|`` spread inside each interval ``(A_k, A_{k+1})`` with ``a = -1``."""
    pts = []
    for k in range(1, ns.k_max + 1):
        lo, hi = critical_ratio(k), critical_ratio(k + 1)
        for i in range(1, ns.per_interval + 1):
            pts.append((-1.0, round(lo + (hi - lo) * i / (ns.per_interval + 1), 12)))
    kernels = [(new_symmetric(a, b), {}) for a, b in pts]
    code = _run_points(ns, pts, kernels, "stuck-scan")
    if ns.out not in (None, "-"):
        summary = [f"{b / -a!r},{predict_stuck_size(a, b)}" for a, b in pts]
        _write(ns.out + ".predicted.csv", header("stuck-scan", _resolved(ns))
               + "ratio,predicted_sites\n" + "\n".join(summary) + "\n")
    return code


# ---------------------------------------------------------------- checks

def cmd_gibbs_check(ns) -> int:
    kernel, _ = _kernel(ns)
    try:
        rep = gibbs.exact_stationarity_check(kernel, ns.w, ns.H, require_pd=not ns.allow_indefinite)
    except gibbs.NotPositiveDefiniteError as exc:
        raise UsageError(str(exc)) from None
    _write(ns.out, header("gibbs-check", _resolved(ns)) + rep.text())
    return EXIT_OK if rep.passed else EXIT_FAIL


def family_seed(master: int, i: int) -> int:
    ss = np.random.SeedSequence(int(master) & (2**64 - 1), spawn_key=(int(i),))
    return int(ss.generate_state(1, np.uint64)[0])


def coupling_summary(n: int, seed: int, x_start: int):
    run = coupling.run_coupled(n, seed)
    rep = coupling.check_scenario(run, x_start=x_start)
    res = rep.recursion_residuals()
    return {
        "seed": seed, "lag_ok": int(rep.lag_ok), "flag": int(rep.flag), "max_lag": rep.max_lag,
        "final_x": rep.final_position, "sqrt_ratio": rep.sqrt_ratio,
        "recursion_pairs": len(res), "recursion_failures": sum(r != 0 for r in res),
        "parity_violations": len(run.parity_violations),
        "first_failure": "" if rep.first_failure is None else f"{rep.first_failure[0]}:{rep.first_failure[1]}",
    }, rep


def cmd_coupling_check(ns) -> int:
    if ns.seeds < 1:
        raise UsageError("--seeds must be at least 1")
    seeds = [family_seed(ns.seed, i) for i in range(ns.seeds)]

    def one(s):
        row, rep = coupling_summary(ns.steps, s, ns.x_start)
        if ns.scenario_dir:
            _write(str(Path(ns.scenario_dir) / f"scenario_{s}.csv"),
                   rep.csv(header("coupling-check", _resolved(ns), family_seed=s)))
        return row

    rows = pool_map(one, seeds)
    cols = list(rows[0])
    good = [r for r in rows if r["lag_ok"]]
    frac = len(good) / len(rows)
    ratios = np.array([r["sqrt_ratio"] for r in good])
    mean = float(ratios.mean()) if good else math.nan
    rec_fail = sum(r["recursion_failures"] for r in good)
    ok = frac > 0.05 and good and 0.95 <= mean <= 1.05 and rec_fail == 0
    text = header("coupling-check", _resolved(ns)) + _table(cols, rows)
    text += (f"# lag_ok_fraction={frac!r} mean_sqrt_ratio={mean!r} "
             f"per_seed_in_band={int(((ratios >= 0.95) & (ratios <= 1.05)).sum())}/{len(good)} "
             f"recursion_failures={rec_fail} result={'PASS' if ok else 'FAIL'}\n")
    _write(ns.out, text)
    return EXIT_OK if ok else EXIT_FAIL


# ---------------------------------------------------------------- parser

def _kernel_args(p, profile=True):
    p.add_argument("--preset", choices=sorted(engine.PRESETS))
    p.add_argument("--kernel", help='"a,b" or "e:w;e:w;..." with e written n/2')
    if profile:
        p.add_argument("--profile", help='initial profile "e:v;..." seen from the start, overrides the preset')


def _classify_args(p):
    p.add_argument("--steps", type=int, default=10**6)
    p.add_argument("--seeds", type=int, default=8)
    p.add_argument("--seed", type=int, default=0, help="master seed")
    p.add_argument("--ratio", type=float, default=1.1, help="checkpoint ratio")
    p.add_argument("--min-steps", type=int, default=analysis.DEFAULT_THRESHOLDS.min_steps)
    p.add_argument("--out", default="-")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="selfwalk", description="Locally self-interacting walks on Z.")
    ap.add_argument("--version", action="version", version=f"selfwalk {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="single run, writes trajectory and profile CSVs")
    _kernel_args(p)
    p.add_argument("--steps", type=int, required=False, default=10**6)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--run-index", type=int, default=0)
    p.add_argument("--x0", type=int, default=0)
    p.add_argument("--level", type=float, default=0.0, help="constant added to the initial profile")
    p.add_argument("--ratio", type=float, default=1.1, help="checkpoint ratio in (1, 10]")
    p.add_argument("--slope", action="store_true", help="print the scaling exponent")
    p.add_argument("--out", default="run", help="output prefix")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="phase-diagram sweep over (a, b)")
    p.add_argument("--circle", type=int, help="number of angles on the unit circle")
    p.add_argument("--a-range", help="lo:hi:step")
    p.add_argument("--b-range", help="lo:hi:step")
    _classify_args(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("classify", help="classify one kernel over several seeds")
    _kernel_args(p)
    _classify_args(p)
    p.set_defaults(func=cmd_classify)

    p = sub.add_parser("stuck-scan", help="ratios b/|a| across the A_k ladder")
    p.add_argument("--k-max", type=int, default=6)
    p.add_argument("--per-interval", type=int, default=2)
    _classify_args(p)
    p.set_defaults(func=cmd_stuck_scan)

    p = sub.add_parser("gibbs-check", help="exact stationarity check on a truncated box")
    _kernel_args(p, profile=False)
    p.add_argument("--w", type=int, default=2)
    p.add_argument("--H", type=int, default=3)
    p.add_argument("--allow-indefinite", action="store_true",
                   help="run the finite-box identities for a kernel that is not positive definite")
    p.add_argument("--out", default="-")
    p.set_defaults(func=cmd_gibbs_check)

    p = sub.add_parser("coupling-check", help="good-scenario statistics of the coupled walk")
    p.add_argument("--steps", type=int, default=10**6)
    p.add_argument("--seeds", type=int, default=100)
    p.add_argument("--seed", type=int, default=0, help="master seed")
    p.add_argument("--x-start", type=int, default=1)
    p.add_argument("--scenario-dir", help="write one scenario CSV per seed here")
    p.add_argument("--out", default="-")
    p.set_defaults(func=cmd_coupling_check)

    for p in sub.choices.values():
        p.add_argument("--config", help="JSON file of option values; flags win")
    return ap


def parse(argv) -> argparse.Namespace:
    ap = build_parser()
    ns = ap.parse_args(argv)
    if ns.config:
        try:
            cfg = json.loads(Path(ns.config).read_text())
        except (OSError, ValueError) as exc:
            ap.error(f"cannot read config {ns.config}: {exc}")
        sp = ap._subparsers._group_actions[0].choices[ns.command]
        known = {a.dest for a in sp._actions}
        unknown = set(cfg) - known
        if unknown:
            ap.error(f"unknown config keys: {', '.join(sorted(unknown))}")
        sp.set_defaults(**cfg)
        ns = ap.parse_args(argv)
    return ns


def main(argv=None) -> int:
    ns = parse(sys.argv[1:] if argv is None else argv)
    try:
        return ns.func(ns)
    except (UsageError, KernelError) as exc:
        print(f"selfwalk: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (gibbs.ResourceLimitError, MemoryError) as exc:
        print(f"selfwalk: resource limit: {exc}", file=sys.stderr)
        return EXIT_RESOURCE
    except (ValueError, OverflowError) as exc:
        print(f"selfwalk: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
