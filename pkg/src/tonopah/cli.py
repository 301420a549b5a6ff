"""Command-line front end.

    tonopah run   --qdisc fq --rate-mbps 50 --delay-ms 25 --seed 1 --out results/
    tonopah grid  --delays-ms 10..100/10 --rates-mbps 10..100/10 --reps 10 --qdisc fq
    tonopah grid  --compare-cc --qdisc fq --delays-ms 10,50,100 --rates-mbps 10,50,100
    tonopah verify --goldens goldens/ [--record]

Axis lists accept either comma-separated values or `lo..hi/step` ranges.
Grid/run configuration may also come from a flat key=value file (--config);
flags override file values.  TONOPAH_WORKERS sets the default worker count.
"""

import argparse
import csv
import json
import os
import sys
from dataclasses import replace
from pathlib import Path

from . import __version__
from .harness import (GridResult, RunResult, ScenarioSpec, compare_cc,
                      run_grid, run_scenario)
from .stats import ecdf

RUNS_CSV_HEADER = ["delay_ms", "rate_mbps", "rep", "seed", "qdisc",
                   "cross_traffic", "accuracy", "utilization",
                   "mean_qdelay_ms", "drops"]


def parse_axis(text: str) -> list[float]:
    """`10..100/10` expands to [10, 20, ..., 100]; otherwise comma-separated."""
    text = text.strip()
    if ".." in text:
        span, _, step_text = text.partition("/")
        lo_text, _, hi_text = span.partition("..")
        lo, hi = float(lo_text), float(hi_text)
        step = float(step_text) if step_text else 1.0
        if step <= 0 or hi < lo:
            raise ValueError(f"bad range {text!r}")
        values = []
        value = lo
        while value <= hi + 1e-9:
            values.append(round(value, 9))
            value += step
        return values
    return [float(part) for part in text.split(",") if part.strip()]


def parse_config_file(path: str) -> dict:
    """Flat `key = value` lines; `#` starts a comment."""
    values: dict[str, str] = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected 'key = value'")
        key, _, value = line.partition("=")
        values[key.strip()] = value.strip()
    return values


def _spec_from_args(args, config: dict) -> ScenarioSpec:
    def pick(flag_value, key, cast, default):
        if flag_value is not None:
            return flag_value
        if key in config:
            raw = config[key]
            if cast is bool:
                return raw.lower() in ("1", "true", "yes", "on")
            return cast(raw)
        return default

    return ScenarioSpec(
        qdisc=pick(args.qdisc, "qdisc", str, "fq"),
        rate_mbps=pick(getattr(args, "rate_mbps", None), "rate_mbps", float, 50.0),
        delay_ms=pick(getattr(args, "delay_ms", None), "delay_ms", float, 50.0),
        duration_s=pick(args.duration_s, "duration_s", float, 90.0),
        cross_traffic=pick(args.cross_traffic or None, "cross_traffic", bool, False),
        head_start_s=pick(args.head_start_s, "head_start_s", float, 4.0),
        tonopah_enabled=not args.no_tonopah if args.no_tonopah else
            pick(None, "tonopah_enabled", bool, True),
        theta_ms=pick(args.theta_ms, "theta_ms", float, 5.0),
        dominant_share=pick(args.dominant_share, "dominant_share", str, "2/3"),
        backoff=pick(args.backoff, "backoff", str, "1/8"),
        seed=pick(args.seed, "seed", int, 1),
    )


def _runs_rows(results: list[RunResult], reps_by_spec: dict | None = None):
    rows = []
    rep_counter: dict[tuple, int] = {}
    for r in results:
        key = (r.spec.delay_ms, r.spec.rate_mbps, r.spec.qdisc,
               r.spec.tonopah_enabled)
        rep = rep_counter.get(key, 0)
        rep_counter[key] = rep + 1
        rows.append([
            f"{r.spec.delay_ms:g}", f"{r.spec.rate_mbps:g}", rep, r.spec.seed,
            r.spec.qdisc, int(r.spec.cross_traffic),
            f"{r.accuracy:.6f}", f"{r.utilization:.6f}",
            f"{r.mean_qdelay_ms:.3f}", r.drops,
        ])
    return rows


def write_bundle(outdir: str, results: list[RunResult], summary: dict) -> None:
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "runs.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(RUNS_CSV_HEADER)
        writer.writerows(_runs_rows(results))
    with open(out / "ecdf.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["value", "cumulative_fraction"])
        for value, frac in ecdf([r.accuracy for r in results]):
            writer.writerow([f"{value:.6f}", f"{frac:.6f}"])
    with open(out / "summary.json", "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _default_workers() -> int:
    env = os.environ.get("TONOPAH_WORKERS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def _summary_base(spec: ScenarioSpec) -> dict:
    return {"tool_version": __version__, "config": spec.to_dict()}


def cmd_run(args) -> int:
    config = parse_config_file(args.config) if args.config else {}
    spec = _spec_from_args(args, config)
    result = run_scenario(spec)
    summary = _summary_base(spec)
    summary.update({
        "accuracy": result.accuracy,
        "utilization": result.utilization,
        "mean_qdelay_ms": result.mean_qdelay_ms,
        "drops": result.drops,
        "retransmits": result.retransmits,
        "digest": result.digest(),
    })
    if args.out:
        write_bundle(args.out, [result], summary)
    print(f"qdisc={spec.qdisc} rate={spec.rate_mbps:g}Mbit delay={spec.delay_ms:g}ms "
          f"seed={spec.seed} accuracy={result.accuracy:.4f} "
          f"utilization={result.utilization:.4f} "
          f"qdelay={result.mean_qdelay_ms:.3f}ms drops={result.drops}")
    return 0


def cmd_grid(args) -> int:
    config = parse_config_file(args.config) if args.config else {}
    base = _spec_from_args(args, config)
    delays = parse_axis(args.delays_ms or config.get("delays_ms", "10..100/10"))
    rates = parse_axis(args.rates_mbps or config.get("rates_mbps", "10..100/10"))
    reps = args.reps if args.reps is not None else int(config.get("reps", 10))
    workers = args.workers or _default_workers()

    summary = _summary_base(base)
    summary["axes"] = {"delays_ms": delays, "rates_mbps": rates, "reps": reps}

    if args.compare_cc:
        comparison = compare_cc(base, delays, rates, reps, workers)
        plain: GridResult = comparison["plain_grid"]
        tono: GridResult = comparison["tonopah_grid"]
        results = plain.runs() + tono.runs()
        summary["comparison"] = comparison["summary"]
        summary["overall_accuracy"] = tono.overall_accuracy
        errors = {**plain.errors, **tono.errors}
    else:
        grid = run_grid(base, delays, rates, reps, workers)
        results = grid.runs()
        summary["overall_accuracy"] = grid.overall_accuracy
        summary["cell_accuracy"] = {
            f"{delay:g}ms|{rate:g}Mbit": acc
            for (delay, rate), acc in grid.cell_means(lambda r: r.accuracy).items()
        }
        errors = grid.errors

    if errors:
        summary["errors"] = {f"{k}": v for k, v in sorted(errors.items())}
    if args.out:
        write_bundle(args.out, results, summary)
    print(f"runs={len(results)} overall_accuracy={summary['overall_accuracy']:.4f}"
          + (f" comparison_p={summary['comparison']['welch']['p']:.3e}"
             if args.compare_cc else ""))
    for key, message in sorted(errors.items()):
        print(f"cell {key} failed: {message}", file=sys.stderr)
    return 1 if errors else 0


def cmd_verify(args) -> int:
    goldens = Path(args.goldens)
    goldens.mkdir(parents=True, exist_ok=True)
    paths = sorted(goldens.glob("*.json"))
    if args.record:
        specs = _default_golden_specs() if not paths else [
            ScenarioSpec.from_dict(json.loads(p.read_text())["spec"]) for p in paths
        ]
        for i, spec in enumerate(specs):
            result = run_scenario(spec)
            payload = {"spec": spec.to_dict(), "digest": result.digest()}
            (goldens / f"golden_{i:02d}.json").write_text(
                json.dumps(payload, indent=2, sort_keys=True) + "\n")
        print(f"recorded {len(specs)} goldens in {goldens}")
        return 0
    if not paths:
        print(f"warning: no goldens found in {goldens}", file=sys.stderr)
        return 0
    failures = []
    for path in paths:
        payload = json.loads(path.read_text())
        spec = ScenarioSpec.from_dict(payload["spec"])
        digest = run_scenario(spec).digest()
        status = "ok" if digest == payload["digest"] else "MISMATCH"
        print(f"{path.name}: {status}")
        if digest != payload["digest"]:
            failures.append((path.name, payload["digest"], digest))
    for name, expected, got in failures:
        print(f"{name}: expected {expected}, got {got}", file=sys.stderr)
    return 1 if failures else 0


def _default_golden_specs() -> list[ScenarioSpec]:
    base = ScenarioSpec(duration_s=5.0, seed=7)
    return [
        replace(base, qdisc="pfifo", rate_mbps=20, delay_ms=20),
        replace(base, qdisc="fq", rate_mbps=20, delay_ms=20),
        replace(base, qdisc="fq_codel", rate_mbps=20, delay_ms=20),
        replace(base, qdisc="fq", rate_mbps=50, delay_ms=10, cross_traffic=True),
        replace(base, qdisc="pfifo", rate_mbps=10, delay_ms=50,
                tonopah_enabled=False),
    ]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tonopah",
        description="Packet-level fair-queuing detection experiments")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--qdisc", choices=["pfifo", "fq", "fq_codel"])
        p.add_argument("--duration-s", type=float, dest="duration_s")
        p.add_argument("--seed", type=int)
        p.add_argument("--cross-traffic", action="store_true", dest="cross_traffic")
        p.add_argument("--head-start-s", type=float, dest="head_start_s")
        p.add_argument("--theta-ms", type=float, dest="theta_ms")
        p.add_argument("--dominant-share", dest="dominant_share")
        p.add_argument("--backoff")
        p.add_argument("--no-tonopah", action="store_true", dest="no_tonopah")
        p.add_argument("--config")
        p.add_argument("--out")

    run_p = sub.add_parser("run", help="run one scenario")
    add_common(run_p)
    run_p.add_argument("--rate-mbps", type=float, dest="rate_mbps")
    run_p.add_argument("--delay-ms", type=float, dest="delay_ms")
    run_p.set_defaults(func=cmd_run)

    grid_p = sub.add_parser("grid", help="run a delay x rate grid")
    add_common(grid_p)
    grid_p.add_argument("--delays-ms", dest="delays_ms")
    grid_p.add_argument("--rates-mbps", dest="rates_mbps")
    grid_p.add_argument("--reps", type=int)
    grid_p.add_argument("--workers", type=int)
    grid_p.add_argument("--compare-cc", action="store_true", dest="compare_cc")
    grid_p.set_defaults(func=cmd_grid)

    verify_p = sub.add_parser("verify", help="re-run golden scenarios and "
                                             "compare result digests")
    verify_p.add_argument("--goldens", required=True)
    verify_p.add_argument("--record", action="store_true")
    verify_p.set_defaults(func=cmd_verify)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
