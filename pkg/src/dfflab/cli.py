"""``dff-lab`` command line: generate worlds, run scenarios, verify bounds, search, serve."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import harness
from .core import load_world, save_world
from .learners import make_learner
from .world import WorldGenParams, generate_world


def _gen(args) -> int:
    params = {}
    if args.params:
        p = Path(args.params)
        params = json.loads(p.read_text() if p.exists() else args.params)
    for key in ("m", "label_count", "pool_size", "noise_features", "overlap", "seed"):
        value = getattr(args, key)
        if value is not None:
            params[key] = value
    if args.unique_labels:
        params["unique_labels"] = True
    if "labels" in params:
        params["labels"] = tuple(params["labels"])
    world, pool = generate_world(WorldGenParams(**params))
    if args.out:
        save_world(world, args.out)
    else:
        from .core import world_to_dict
        json.dump(world_to_dict(world), sys.stdout, indent=1)
        print()
    print(f"world: m={world.m} features={world.n_features} examples={len(pool)}", file=sys.stderr)
    return 0


def _run(args) -> int:
    scenario = harness.load_scenario(args.scenario)
    trials = args.trials or scenario.get("trials", 1)
    seed = args.seed if args.seed is not None else scenario.get("seed", 0)
    checks = tuple(c for c in args.checks.split(",") if c) if args.checks else ("bound",)
    config = harness.TrialConfig(scenario, trials, seed, checks, Path(args.scenario).parent)
    report, transcripts = harness.run_trials(config)
    if args.out:
        harness.export_results([report], args.out)
    if args.transcripts:
        d = Path(args.transcripts)
        d.mkdir(parents=True, exist_ok=True)
        for i, tr in enumerate(transcripts):
            (d / f"trial_{i:05d}.jsonl").write_text(tr.to_jsonl(), encoding="utf-8")
    for t in report.trials:
        if "summary" in t.info:
            print(json.dumps(t.info["summary"]))
    status = "PASS" if report.passed else "FAIL"
    print(f"{status} {report.learner} m={report.m} k={report.param} trials={len(report.trials)} "
          f"mean={report.mean:.3f} bound={report.bound:g} violations={len(report.violations)}")
    for v in report.invariant_violations[:10]:
        print(f"  {v}")
    return 0 if report.passed else 1


def _verify(args) -> int:
    names = list(harness.SUITES) if args.suite == "all" else [args.suite]
    ok = True
    reports = []
    for name in names:
        fn = harness.SUITES[name]
        kwargs = {"base_seed": args.seed}
        if args.trials:
            key = {"concentration": "seeds", "stochastic": "seeds", "distribution": "sources"}.get(name, "trials")
            kwargs[key] = args.trials
        result = fn(**kwargs)
        for line in result.lines():
            print(line)
        reports.extend(result.reports)
        ok &= result.passed
    if args.out:
        harness.export_results(reports, args.out)
    return 0 if ok else 1


def _search(args) -> int:
    world = load_world(args.world)
    spec = {"name": args.learner}
    if args.learner in ("srdff", "unique_label"):
        spec["m"] = world.m
    res = harness.adversarial_search(world, args.len, args.k, lambda: make_learner(spec),
                                     budget=args.budget, seed=args.seed)
    mode = "exhaustive" if res.exhaustive else "heuristic"
    from .learners import ub
    bound = ub(world.m, args.k)
    print(json.dumps({"mistakes": res.mistakes, "bound": bound, "mode": mode, "explored": res.explored,
                      "script": [{"component": c, "example": i,
                                  "feedback": None if ov is None else
                                  {"label": ov.label,
                                   "feature": None if ov.feature is None else ov.feature.feature,
                                   "polarity": None if ov.feature is None else ov.feature.polarity}}
                                 for c, i, ov in res.script]}))
    return 0 if res.mistakes <= bound or args.learner not in ("srdff",) else 1


def _serve(args) -> int:
    from . import protocol
    if args.stdio:
        summary = protocol.serve_session(sys.stdin.buffer, sys.stdout.buffer)
        return 0 if summary.error is None else 1
    host, _, port = args.listen.rpartition(":")
    protocol.serve_tcp(host or "127.0.0.1", int(port))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dff-lab", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate a random world")
    g.add_argument("--params", help="JSON object or file with generator parameters")
    g.add_argument("--m", type=int)
    g.add_argument("--label-count", dest="label_count", type=int)
    g.add_argument("--pool-size", dest="pool_size", type=int)
    g.add_argument("--noise-features", dest="noise_features", type=int)
    g.add_argument("--overlap", type=int)
    g.add_argument("--unique-labels", dest="unique_labels", action="store_true")
    g.add_argument("--seed", type=int)
    g.add_argument("--out")
    g.set_defaults(func=_gen)

    r = sub.add_parser("run", help="run a scenario file")
    r.add_argument("--scenario", required=True)
    r.add_argument("--trials", type=int)
    r.add_argument("--seed", type=int)
    r.add_argument("--out")
    r.add_argument("--transcripts")
    r.add_argument("--checks", help="comma list: bound,rule_invariants,update_counter")
    r.set_defaults(func=_run)

    v = sub.add_parser("verify", help="run a verification suite")
    v.add_argument("--suite", required=True, choices=sorted(harness.SUITES) + ["all"])
    v.add_argument("--trials", type=int)
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--out")
    v.set_defaults(func=_verify)

    s = sub.add_parser("search", help="search for a bad script against a learner")
    s.add_argument("--world", required=True)
    s.add_argument("--k", type=int, default=0)
    s.add_argument("--len", type=int, default=6)
    s.add_argument("--learner", default="srdff")
    s.add_argument("--budget", type=int, default=50_000)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=_search)

    sv = sub.add_parser("serve", help="serve a learner over the wire protocol")
    grp = sv.add_mutually_exclusive_group(required=True)
    grp.add_argument("--stdio", action="store_true")
    grp.add_argument("--listen", metavar="HOST:PORT")
    sv.set_defaults(func=_serve)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, stream=sys.stderr)
    try:
        return args.func(args)
    except (OSError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
