"""Command-line entry point: ``sharpen {gen-instance,run,bon-analyze,verify,replay}``.

Exit codes: 0 success; 1 error (bad config or input, every seed failed, a
suite failed); 2 some but not all seeds failed.
"""
from __future__ import annotations

import argparse
import json
import sys
from dataclasses import fields
from pathlib import Path

from ..errors import SharpenError
from ..rng import RngStream
from ..serialization import save_instance
from .analyze import bon_analyze, read_completions, write_csv
from .config import ALGORITHMS, INSTANCE_KINDS, ExperimentConfig, Hyper, parse_config
from .experiment import build_instance, replay, run_experiment
from .verify import SUITES, verify

# Hyper field -> CLI flag
_HYPER_FLAGS = {f.name: "--" + f.name.replace("_", "-") for f in fields(Hyper)}
_HYPER_TYPES = {"n": int, "N": int, "T": int, "reward": str}


def _param(text: str) -> tuple[str, object]:
    if "=" not in text:
        raise argparse.ArgumentTypeError(f"expected key=value, got {text!r}")
    k, v = text.split("=", 1)
    try:
        return k, json.loads(v)
    except json.JSONDecodeError:
        return k, v


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON experiment config; flags below override its fields")
    p.add_argument("--algorithm", choices=ALGORITHMS)
    p.add_argument("--instance-file")
    p.add_argument("--kind", choices=INSTANCE_KINDS, help="generate the instance inline instead of from a file")
    p.add_argument("--param", type=_param, action="append", default=[], metavar="KEY=VALUE",
                   help="instance generator argument (JSON value), repeatable")
    p.add_argument("--instance-seed", type=int, help="seed for the inline instance generator")
    for name, flag in _HYPER_FLAGS.items():
        p.add_argument(flag, dest=f"h_{name}", type=_HYPER_TYPES.get(name, float))
    p.add_argument("--seeds", type=int, nargs="+")
    p.add_argument("--seed", type=int, help="shorthand for --seeds SEED")
    p.add_argument("--output-dir")


def config_from_args(a) -> ExperimentConfig:
    d = {}
    if a.config:
        try:
            d = json.loads(Path(a.config).read_text())
        except (OSError, json.JSONDecodeError) as e:
            raise SharpenError(f"cannot read config {a.config}: {e}") from None
    if a.algorithm:
        d["algorithm"] = a.algorithm
    if a.instance_file:
        d["instance_file"] = a.instance_file
        d.pop("instance", None)
    if a.kind:
        d["instance"] = {"kind": a.kind, **dict(a.param)}
        if a.instance_seed is not None:
            d["instance"]["seed"] = a.instance_seed
        d.pop("instance_file", None)
    hyper = dict(d.get("hyper", {}))
    for name in _HYPER_FLAGS:
        v = getattr(a, f"h_{name}")
        if v is not None:
            hyper[name] = v
    d["hyper"] = hyper
    if a.seeds:
        d["seeds"] = a.seeds
    if a.seed is not None:
        d["seeds"] = [a.seed]
    if a.output_dir:
        d["output_dir"] = a.output_dir
    return parse_config(d)


def cmd_gen_instance(a) -> int:
    spec = {"kind": a.kind, **dict(a.param), "seed": a.seed}
    inst = build_instance(ExperimentConfig("sft", instance=spec))
    save_instance(inst, a.out)
    print(json.dumps({"name": inst.name, "path": a.out, "c_cov": inst.truth.get("c_cov")}))
    return 0


def cmd_run(a) -> int:
    report, code = run_experiment(config_from_args(a))
    print(json.dumps({"n_completed": report["n_completed"], "success_rate": report["success_rate"],
                      "output_dir": report["config"]["output_dir"]}))
    return code


def cmd_bon_analyze(a) -> int:
    records = read_completions(a.input)
    baseline = read_completions(a.baseline) if a.baseline else None
    rows = bon_analyze(records, a.N, a.rewards, RngStream(a.seed), n_boot=a.n_boot, baseline=baseline)
    if a.out:
        write_csv(rows, a.out)
    else:
        write_csv(rows, "/dev/stdout")
    return 0


def cmd_verify(a) -> int:
    names = list(SUITES) if a.suites == ["all"] else a.suites
    ok = True
    results = []
    for name in names:
        res = verify(name)
        ok &= res.passed
        print(res.line(), flush=True)
        results.append({"suite": res.name, "passed": res.passed, "seconds": res.seconds, "values": res.values})
    if a.json:
        Path(a.json).write_text(json.dumps(results, indent=2, default=str))
    return 0 if ok else 1


def cmd_replay(a) -> int:
    print(json.dumps(replay(config_from_args(a), a.log), sort_keys=True))
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="sharpen", description="Sharpening experiments on small base models.")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-instance", help="generate an instance and its ground-truth sidecar")
    p.add_argument("--kind", choices=INSTANCE_KINDS, required=True)
    p.add_argument("--param", type=_param, action="append", default=[], metavar="KEY=VALUE")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_gen_instance)

    p = sub.add_parser("run", help="run an experiment and write report.json, report.csv and query logs")
    _add_config_flags(p)
    p.set_defaults(fn=cmd_run)

    p = sub.add_parser("bon-analyze", help="best-of-N analysis of logged completions (JSONL)")
    p.add_argument("input")
    p.add_argument("--N", type=int, nargs="+", default=[1, 2, 4, 8, 16, 32, 50])
    p.add_argument("--rewards", nargs="+", default=["log_likelihood", "length_normalized", "majority"])
    p.add_argument("--baseline", help="JSONL with one (e.g. greedy) completion per prompt for the lift columns")
    p.add_argument("--n-boot", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="CSV path (default: stdout)")
    p.set_defaults(fn=cmd_bon_analyze)

    p = sub.add_parser("verify", help="run acceptance suites")
    p.add_argument("suites", nargs="+", choices=[*SUITES, "all"])
    p.add_argument("--json", help="also write machine-readable results here")
    p.set_defaults(fn=cmd_verify)

    p = sub.add_parser("replay", help="refit from a persisted query log and recompute the verdict")
    _add_config_flags(p)
    p.add_argument("--log", required=True)
    p.set_defaults(fn=cmd_replay)
    return ap


def main(argv=None) -> int:
    a = build_parser().parse_args(argv)
    try:
        return a.fn(a)
    except SharpenError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
