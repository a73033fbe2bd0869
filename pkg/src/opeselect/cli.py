"""Command-line front-end: generate / evaluate / select / coverage.

Configs are TOML (primary) or JSON, by path or bundled name; common knobs can
be overridden by flags.  The master seed resolves as flag > OPE_SEED env var >
config value.  Exit status: 0 when every requested report was written, 1 on
run failures (failed cells are listed), 2 on config errors.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

try:
    import tomllib  # Python >= 3.11
except ModuleNotFoundError:  # pragma: no cover - version-dependent import
    import tomli as tomllib

from .configs import BUNDLED, bundled_config
from .runner import (
    ConfigError,
    PartialFailure,
    normalize_config,
    run_coverage,
    run_evaluate,
    run_generate,
    run_select,
)


def _load_config(spec: str) -> dict:
    if spec in BUNDLED:
        return bundled_config(spec)
    if not os.path.exists(spec):
        raise ConfigError(f"config: no file or bundled config named {spec!r}")
    with open(spec, "rb") as fh:
        raw = fh.read()
    if spec.endswith(".json"):
        return json.loads(raw.decode("utf-8"))
    try:
        return tomllib.loads(raw.decode("utf-8"))
    except tomllib.TOMLDecodeError:
        try:
            return json.loads(raw.decode("utf-8"))
        except json.JSONDecodeError:
            raise ConfigError(f"config: {spec} is neither valid TOML nor JSON") from None


def _apply_overrides(doc: dict, args: argparse.Namespace) -> dict:
    seed = None
    env = os.environ.get("OPE_SEED")
    if env is not None:
        try:
            seed = int(env)
        except ValueError:
            raise ConfigError(f"OPE_SEED: must be an integer, got {env!r}") from None
    if args.seed is not None:
        seed = args.seed
    if seed is not None:
        doc["seed"] = seed
    if getattr(args, "delta", None) is not None:
        doc["delta"] = args.delta
    if getattr(args, "trials", None) is not None:
        doc["trials"] = args.trials
    if getattr(args, "method", None):
        doc["methods"] = list(args.method)
    if getattr(args, "n", None) is not None:
        doc.setdefault("dataset", {})["n"] = args.n
    if getattr(args, "eta_split", None) is not None:
        doc.setdefault("dr", {})["eta_split"] = args.eta_split
    if getattr(args, "mc_iterations", None) is not None:
        doc.setdefault("mc", {})["mode"] = "fixed"
        doc["mc"]["iterations"] = args.mc_iterations
    if getattr(args, "mc_adaptive_eps", None) is not None:
        doc.setdefault("mc", {})["mode"] = "adaptive"
        doc["mc"]["eps"] = args.mc_adaptive_eps
    return doc


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="opeselect",
        description="Off-policy evaluation and best-policy selection with high-probability lower bounds.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser, with_methods: bool = True) -> None:
        p.add_argument("--config", required=True, help="config path (.toml/.json) or bundled name: " + ", ".join(sorted(BUNDLED)))
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, default=None, help="master seed (overrides OPE_SEED and the config)")
        p.add_argument("--jobs", type=int, default=1, help="worker processes for trial/target cells")
        if with_methods:
            p.add_argument("--method", action="append", default=None, help="restrict to a method (repeatable)")
            p.add_argument("--delta", type=float, default=None, help="error probability")
            p.add_argument("--eta-split", dest="eta_split", type=float, default=None, help="fit the DR reward model on this disjoint fraction of the log")
            p.add_argument("--mc-iterations", dest="mc_iterations", type=int, default=None, help="fixed Monte-Carlo schedule with this many iterations")
            p.add_argument("--mc-adaptive-eps", dest="mc_adaptive_eps", type=float, default=None, help="adaptive Monte-Carlo stopping at this accuracy")

    p_gen = sub.add_parser("generate", help="write a synthetic dataset as CSV")
    common(p_gen, with_methods=False)
    p_gen.add_argument("--n", type=int, default=None, help="override the sample count")

    p_eval = sub.add_parser("evaluate", help="bound the value of each target policy")
    common(p_eval)

    p_sel = sub.add_parser("select", help="best-policy selection over the candidate set")
    common(p_sel)
    p_sel.add_argument("--trials", type=int, default=None, help="independent trials")
    p_sel.add_argument("--n", type=int, default=None, help="override the logged sample count")

    p_cov = sub.add_parser("coverage", help="coverage/tightness study over a delta grid")
    common(p_cov)
    p_cov.add_argument("--trials", type=int, default=None, help="trials per delta")
    p_cov.add_argument("--n", type=int, default=None, help="override the logged sample count")

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        doc = _apply_overrides(_load_config(args.config), args)
        cfg = normalize_config(doc, args.command)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2

    runners = {
        "generate": lambda: run_generate(cfg, args.out),
        "evaluate": lambda: run_evaluate(cfg, args.out, jobs=args.jobs),
        "select": lambda: run_select(cfg, args.out, jobs=args.jobs),
        "coverage": lambda: run_coverage(cfg, args.out, jobs=args.jobs),
    }
    try:
        written = runners[args.command]()
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except PartialFailure as exc:
        for failure in exc.failures:
            print(f"failed cell: {failure}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - surface run failures as exit code 1
        print(f"run failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    for path in written:
        print(path)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
