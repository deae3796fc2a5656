"""Command line entry point: simulate, compare, validate-gains, plan."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path


from .controllers import sampled_spectral_radius, verify_stability
from .dynamics import BodyVelocity
from .harness import EpisodeDiverged, compare_controllers, run_episode
from .planner import PlanningError, build_plan
from .scenario import ScenarioError, load_scenario

log = logging.getLogger("rovinspect")


def _load(args):
    s = load_scenario(args.scenario)
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.dt is not None:
        changes["dt"] = args.dt
    if getattr(args, "duration", None) is not None:
        changes["duration"] = args.duration
    if getattr(args, "controller", None) is not None:
        changes["controller"] = args.controller
    return s.with_(**changes) if changes else s


def _out_dir(args) -> Path:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_simulate(args) -> int:
    s = _load(args)
    result = run_episode(s)
    stem = f"{s.name}_{result.controller}_seed{s.seed}"
    out = _out_dir(args)
    (out / f"{stem}.csv").write_text(result.to_csv())
    (out / f"{stem}_summary.json").write_text(result.summary_json())
    print(result.summary_json(), end="")
    log.info("wrote %s", out / f"{stem}.csv")
    return 0


def cmd_compare(args) -> int:
    s = _load(args)
    report = compare_controllers(s)
    out = _out_dir(args)
    for r in (report.nfc, report.pid):
        stem = f"{s.name}_{r.controller}_seed{s.seed}"
        (out / f"{stem}.csv").write_text(r.to_csv())
        (out / f"{stem}_summary.json").write_text(r.summary_json())
    (out / f"{s.name}_compare_seed{s.seed}.json").write_text(
        json.dumps(report.summary(), indent=2, sort_keys=True) + "\n"
    )
    print(report.table())
    return 0


def cmd_validate_gains(args) -> int:
    s = _load(args)
    speed = s.path.speed
    points = [("hover", BodyVelocity()), ("surge", BodyVelocity(u=speed)), ("sway", BodyVelocity(v=speed))]
    ok = True
    for label, nu in points:
        rep = verify_stability(s.nfc_gains, s.nominal, nu)
        ok &= rep.stable
        print(f"{label} nu=({nu.u:g}, {nu.v:g}, {nu.w:g}, {nu.r:g}): {'stable' if rep.stable else 'UNSTABLE'}")
        for ev in rep.eigenvalues:
            print(f"  {ev.real: .6f} {ev.imag:+.6f}j")
        rho = sampled_spectral_radius(s.nfc_gains, s.nominal, nu, s.dt)
        note = "" if rho < 1.0 else "  WARNING: held-input loop unstable at this dt, expect a saturation limit cycle"
        print(f"  sampled loop at dt={s.dt:g}: spectral radius {rho:.4f}{note}")
    return 0 if ok else 1


def cmd_plan(args) -> int:
    s = _load(args)
    p = s.path
    plan = build_plan(p.polygon(), p.margin, p.speed, p.start, p.yaw_rate, p.smooth)
    text = plan.to_csv()
    print(text, end="")
    if args.out_dir:
        out = _out_dir(args)
        (out / f"{s.name}_waypoints.csv").write_text(text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rovinspect", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out_default="out"):
        p.add_argument("scenario", help="scenario YAML file")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--dt", type=float, default=None)
        p.add_argument("--out-dir", default=out_default)

    p = sub.add_parser("simulate", help="run one closed-loop episode")
    common(p)
    p.add_argument("--controller", choices=("nfc", "pid"), default=None)
    p.add_argument("--duration", type=float, default=None)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("compare", help="run NFC and PID on the same scenario")
    common(p)
    p.add_argument("--duration", type=float, default=None)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("validate-gains", help="closed-loop eigenvalues of the NFC error dynamics")
    common(p)
    p.set_defaults(func=cmd_validate_gains)

    p = sub.add_parser("plan", help="print the inspection waypoints as CSV")
    common(p, out_default=None)
    p.set_defaults(func=cmd_plan)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except (ScenarioError, PlanningError, EpisodeDiverged, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
