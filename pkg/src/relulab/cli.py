"""``lab`` command line: run and verify experiments, inspect datasets and
evaluate the white-covariance closed form.

Exit status is 0 when the command succeeded and every checked predicate
passed, 1 when a predicate failed or a run diverged, 2 on bad input.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .datasets import check_symmetry, compute_stats, load_dataset
from .errors import ConfigError, LabError, MissingArtifactError
from .experiments import EXPERIMENTS, ExperimentConfig, apply_overrides, run, verify
from .numkit import tune_allocator
from .theory import ClosedFormSpec, closed_form_w

def _print_verdict(verdict: dict):
    for p in verdict["predicates"]:
        mark = "PASS" if p["passed"] else "FAIL"
        extra = f"  ({p['detail']})" if p.get("detail") else ""
        print(f"{mark}  {p['name']}: {p['value']:.6g} {p['threshold']}{extra}")
    print(f"{'PASS' if verdict['passed'] else 'FAIL'}  {verdict['experiment']} [{verdict['manifest']}]")


def cmd_run(args) -> int:
    doc = json.loads(Path(args.config).read_text()) if args.config != "-" else json.load(sys.stdin)
    doc = apply_overrides(doc, args.set)
    cfg = ExperimentConfig.from_dict(doc)
    out = run(cfg, args.out)
    manifest = json.loads((out / "manifest.json").read_text())
    print(f"run written to {out} [{manifest['hash']}]")
    if manifest["diverged"]:
        print(f"diverged: {', '.join(manifest['diverged'])}")
        return 1
    if args.verify:
        verdict = verify(out)
        _print_verdict(verdict)
        return 0 if verdict["passed"] else 1
    return 0


def cmd_verify(args) -> int:
    verdict = verify(args.run_dir)
    _print_verdict(verdict)
    return 0 if verdict["passed"] else 1


def cmd_stats(args) -> int:
    d = load_dataset(args.dataset)
    reduction = args.reduction or d.metadata.get("reduction", "mean")
    st = compute_stats(d, reduction)
    doc = {"name": d.name, "P": d.P, "D": d.D, "reduction": reduction,
           "symmetric": check_symmetry(d) is None, "first_violation": check_symmetry(d),
           "s": st.s, "trace_sigma": st.trace_sigma, "beta": st.beta.tolist(),
           "beta_hat": st.beta_hat.tolist(), "sigma": st.sigma.tolist()}
    print(json.dumps(doc, indent=2))
    return 0


def cmd_closed_form(args) -> int:
    doc = json.loads(Path(args.spec).read_text())
    times = doc.pop("times", None)
    spec = ClosedFormSpec.from_json(doc)
    times = args.t or times or [0.0]
    rows = [{"t": float(t), "w": closed_form_w(spec, float(t)).tolist()} for t in times]
    print(json.dumps({"spec": spec.to_json(), "values": rows}, indent=2))
    return 0


def cmd_list(args) -> int:
    for name, exp in sorted(EXPERIMENTS.items()):
        print(name if not args.defaults else json.dumps({"experiment": name, **exp.defaults}, indent=2))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lab", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run an experiment from a JSON config")
    r.add_argument("config", help="config JSON path, or - for stdin")
    r.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config leaf by dotted path (repeatable)")
    r.add_argument("--out", help="run directory (default: the config's output)")
    r.add_argument("--verify", action="store_true", help="verify the run directory afterwards")
    r.set_defaults(fn=cmd_run)

    v = sub.add_parser("verify", help="re-evaluate the acceptance predicates of a run directory")
    v.add_argument("run_dir")
    v.set_defaults(fn=cmd_verify)

    s = sub.add_parser("stats", help="print data statistics of a dataset CSV")
    s.add_argument("dataset")
    s.add_argument("--reduction", choices=("mean", "sum"))
    s.set_defaults(fn=cmd_stats)

    c = sub.add_parser("closed-form", help="evaluate the white-covariance closed form")
    c.add_argument("spec", help="JSON with r, w_init, beta (or s and beta_hat), alpha, tau, times")
    c.add_argument("--t", type=float, action="append", help="time to evaluate (repeatable)")
    c.set_defaults(fn=cmd_closed_form)

    ls = sub.add_parser("list", help="list experiments")
    ls.add_argument("--defaults", action="store_true", help="print default configs")
    ls.set_defaults(fn=cmd_list)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    tune_allocator()
    try:
        return args.fn(args)
    except MissingArtifactError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ConfigError, json.JSONDecodeError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except LabError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
