"""Command-line front end: ``cuplab {verify-bounds,train,describe} --config FILE``.

Exit codes: 0 ok, 1 a hard bound check failed, 2 configuration error.
"""

from __future__ import annotations

import argparse
import datetime as _dt
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .campaign import run_campaign
from .cmdp import SoftmaxPolicy, validate_cmdp
from .config import ConfigError, build_env, load_config
from .exact import objective_j, solve_policy
from .sampler import dump_batch
from .trainer import EXACT_LIMIT, train_cup, train_lagrangian_baseline

EXIT_OK, EXIT_VIOLATION, EXIT_CONFIG = 0, 1, 2


def _stamp(command: str) -> str:
    now = _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")
    return f"# cuplab {command} generated {now}\n"


def _write_csv(path, command: str, body: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(_stamp(command))
        fh.write(body)


def _dump_dp(cmdp, policy, lam: float, path) -> None:
    doc = {sig: solve_policy(cmdp, policy, sig, lam).to_dict() for sig in ("reward", "cost")}
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)
        fh.write("\n")


def _env(cfg):
    cmdp = cfg.cup.resolve(build_env(cfg.env))
    problems = validate_cmdp(cmdp)
    if problems:
        raise ConfigError("env", "; ".join(problems))
    return cmdp


def cmd_verify_bounds(args) -> int:
    cfg = load_config(args.config, require_env=False)
    out = args.output or cfg.output_path
    result = run_campaign(cfg.campaign, cfg.seed)
    if out:
        _write_csv(out, "verify-bounds", result.to_csv())
    if args.plot:
        from .plotting import plot_campaign

        plot_campaign(result, args.plot)
    print(result.summary())
    bad = result.hard_violations
    print(f"hard violations: {bad}")
    return EXIT_VIOLATION if bad else EXIT_OK


def _final_means(log, b: float) -> str:
    last = log.rows[-10:]
    if not last:
        return "no iterations run"
    J = np.mean([r.J_exact for r in last])
    Jc = np.mean([r.Jc_exact for r in last])
    if not np.isfinite(J):
        J = np.mean([r.J_hat for r in last])
        Jc = np.mean([r.Jc_hat for r in last])
    return f"final-{len(last)} mean J = {J:.6g}, mean Jc = {Jc:.6g} (b = {b:g})"


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    cmdp = _env(cfg)
    out = args.output or cfg.output_path
    log = train_cup(cmdp, cfg.cup)
    base = train_lagrangian_baseline(cmdp, cfg.cup) if cfg.baseline else None
    if out:
        _write_csv(out, "train", log.to_csv())
        if base is not None:
            p = Path(out)
            _write_csv(p.with_name(p.stem + "_baseline" + p.suffix), "train baseline", base.to_csv())
    if args.dump_dp:
        _dump_dp(cmdp, log.final_policy, cfg.cup.lambda_gae, args.dump_dp)
    if args.dump_batch and log.last_batch is not None:
        dump_batch(log.last_batch, args.dump_batch)
    if args.plot:
        from .plotting import plot_training

        plot_training(log, cmdp.cost_limit, args.plot, base)
    print(f"CUP: {_final_means(log, cmdp.cost_limit)}")
    if base is not None:
        print(f"Lagrangian: {_final_means(base, cmdp.cost_limit)}")
    return EXIT_OK


def cmd_describe(args) -> int:
    cfg = load_config(args.config, require_env=False)
    print(json.dumps(cfg.to_dict(), indent=2, sort_keys=True))
    if cfg.env is None:
        return EXIT_OK
    cmdp = _env(cfg)
    print(f"|S|={cmdp.n_states}  |A|={cmdp.n_actions}  gamma={cmdp.gamma:g}  b={cmdp.cost_limit:g}")
    uniform = SoftmaxPolicy.uniform(cmdp.n_states, cmdp.n_actions)
    if cmdp.n_states * cmdp.n_actions <= EXACT_LIMIT:
        j = objective_j(cmdp, uniform, "reward")
        jc = objective_j(cmdp, uniform, "cost")
        print(f"uniform policy: J={j:.10g}  Jc={jc:.10g}")
    if args.dump_dp:
        _dump_dp(cmdp, uniform, cfg.cup.lambda_gae, args.dump_dp)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cuplab", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in (("verify-bounds", cmd_verify_bounds), ("train", cmd_train),
                     ("describe", cmd_describe)):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True)
        p.add_argument("--output", help="CSV path (overrides output_path in the config)")
        p.add_argument("--dump-dp", metavar="PATH", help="write exact DP quantities as JSON")
        p.add_argument("--dump-batch", metavar="PATH", help="write the last batch as JSON lines")
        p.add_argument("--plot", metavar="PATH", help="render a figure (needs matplotlib)")
        p.set_defaults(func=fn)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.ERROR, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
