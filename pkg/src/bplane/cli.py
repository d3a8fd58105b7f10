"""Command line: ``bp simulate | verify | experiment | oracle``.

Exit status is 0 when every suite run passes, 1 when one fails and 2 on a
configuration or input error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import oracles
from .harness import SUITES, ExperimentConfig, HarnessError, l1_tail_experiment, run_suite
from .processes import ParameterError
from .triple import Window, assemble_triple, build_tree


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(x) for x in text.split(","))


def _cmd_simulate(args) -> int:
    window = Window(*_floats(args.window)) if args.window else None
    if window is None and args.tmax is None:
        raise ParameterError("give --tmax or --window")
    triple = assemble_triple(t_max=args.tmax, dt=args.dt, eps_cutoff=args.eps, seed=args.seed,
                             window=window)
    tree = build_tree(triple)
    tree.meta.update(seed=args.seed, eps_cutoff=triple.eps_cutoff, t_max=args.tmax)
    out = Path(args.out)
    tree.save(out)
    written = [out.with_suffix(".npz"), out.with_suffix(".json")]
    if not args.no_figure:
        from .plots import cactus_figure
        written.append(cactus_figure(tree, out.with_name(out.stem + "_cactus.svg")))
    print(f"{len(tree)} rows, volume {tree.volume:.6g}, flags {tree.flags}")
    for p in written:
        print(p)
    return 0


def _report_path(base: str | None, name: str, many: bool) -> str | None:
    if base is None:
        return None
    p = Path(base)
    if many or p.suffix != ".json":
        p = (p if p.suffix != ".json" else p.with_suffix("")) / f"{name}.json"
    return str(p)


def _cmd_verify(args) -> int:
    names = sorted(SUITES) if args.suite == "all" else [args.suite]
    ok = True
    for name in names:
        cfg = ExperimentConfig(experiment=name, replicates=args.replicates, seed=args.seed,
                               dt=args.dt, workers=args.workers,
                               output=_report_path(args.report, name, len(names) > 1))
        rep = run_suite(cfg)
        print(rep.summary())
        ok &= rep.passed
    return 0 if ok else 1


def _cmd_experiment(args) -> int:
    overrides = {"experiment": "short-cycles" if args.name == "l1-tail" else args.name}
    if args.report:
        overrides["output"] = args.report
    if args.config:
        cfg = ExperimentConfig.from_file(args.config, **overrides)
    else:
        cfg = ExperimentConfig.from_mapping(overrides)
    rep = l1_tail_experiment(cfg) if cfg.experiment == "short-cycles" else run_suite(cfg)
    print(rep.summary())
    return 0 if rep.passed else 1


def _cmd_oracle(args) -> int:
    if args.name == "list":
        for k, f in sorted(oracles.FORMULAS.items()):
            print(f"{k}: {f.anchor}")
        return 0
    vals = [float(x) for x in args.args]
    if args.name == "tail_exponent_sup":
        print(json.dumps(dict(zip(("argmax", "sup"), oracles.tail_exponent_sup()))))
        return 0
    print(repr(oracles.eval_formula(args.name, *vals)))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="bp", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="sample one tree and dump it")
    s.add_argument("--tmax", type=float, default=None, help="spine height without a window")
    s.add_argument("--dt", type=float, default=1e-4)
    s.add_argument("--eps", type=float, default=None, help="excursion cutoff height")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--window", default=None, help="relevance,full,closure levels")
    s.add_argument("--out", required=True, help="dump path (.npz and .json are written)")
    s.add_argument("--no-figure", action="store_true")
    s.set_defaults(func=_cmd_simulate)

    v = sub.add_parser("verify", help="run a registered suite, or all of them")
    v.add_argument("suite", choices=sorted(SUITES) + ["all"])
    v.add_argument("--replicates", type=int, default=None)
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--dt", type=float, default=None)
    v.add_argument("--workers", type=int, default=1)
    v.add_argument("--report", default=None, help="JSON path, or a directory for several suites")
    v.set_defaults(func=_cmd_verify)

    e = sub.add_parser("experiment", help="run a suite from a key=value config file")
    e.add_argument("name", help="suite name, or l1-tail")
    e.add_argument("--config", default=None)
    e.add_argument("--report", default=None)
    e.set_defaults(func=_cmd_experiment)

    o = sub.add_parser("oracle", help="evaluate a closed-form law")
    o.add_argument("name", help="formula name, tail_exponent_sup, or list")
    o.add_argument("--args", nargs="*", default=[])
    o.set_defaults(func=_cmd_oracle)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (HarnessError, ParameterError, oracles.DomainError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
