"""Command line entry point: ``gac train | eval | verify | plot``.

Exit codes: 0 success, 2 configuration error, 3 solver failure,
4 verification failure.
"""
from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from .errors import ConfigError, GACError, NoConvergence, SolverDiverged

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SOLVER = 3
EXIT_VERIFY = 4


def _cmd_train(args) -> int:
    from .trainer import load_config, train

    cfg = load_config(args.config, seed=args.seed)
    out = args.out or os.path.join("runs", f"{cfg.env}-seed{cfg.seed}")

    def progress(t, info):
        if t % cfg.eval_period == 0:
            print(f"step {t}: critic_loss {info['critic_loss']:.4g} eta {info['eta']:.4g}",
                  flush=True)

    result = train(cfg, out_dir=out, on_step=progress if args.verbose else None)
    last = result.log.rows[-1]
    print(f"final test return {last['test_return_mean']:.6g} "
          f"+- {last['test_return_stderr']:.3g}; outputs in {out}")
    return EXIT_OK


def _cmd_eval(args) -> int:
    from .actor import GaussianPolicy
    from .envs import ENV_NAMES, make_env
    from .nn import load_tensors
    from .trainer import evaluate

    if args.env not in ENV_NAMES:
        raise ConfigError(f"unknown environment {args.env!r}; expected one of {ENV_NAMES}")
    if args.episodes < 1:
        raise ConfigError("--episodes must be >= 1")
    try:
        tensors = load_tensors(args.actor)
        actor = GaussianPolicy.from_tensors(tensors)
    except (OSError, KeyError, ValueError) as exc:
        raise ConfigError(f"cannot load actor from {args.actor}: {exc}") from None
    env = make_env(args.env)
    if (env.spec.state_dim, env.spec.action_dim) != (actor.state_dim, actor.action_dim):
        raise ConfigError(f"actor shape ({actor.state_dim}, {actor.action_dim}) does not fit "
                          f"{args.env}")
    mean, rets = evaluate(actor, env, args.episodes, args.seed)
    stderr = rets.std(ddof=1) / np.sqrt(len(rets)) if len(rets) > 1 else 0.0
    print(f"mean return {mean:.9g} stderr {stderr:.3g} over {len(rets)} episodes")
    for i, r in enumerate(rets):
        print(f"  episode {i}: {r:.9g}")
    return EXIT_OK


def _cmd_verify(args) -> int:
    from .verify import SUITES, run_suite

    names = [args.suite] if args.suite else list(SUITES)
    if args.suite and args.suite not in SUITES:
        raise ConfigError(f"unknown suite {args.suite!r}; expected one of {sorted(SUITES)}")
    failed = 0
    for name in names:
        for check in run_suite(name, seed=args.seed):
            print(check.line(), flush=True)
            failed += not check.passed
    print(f"{failed} check(s) failed" if failed else "all checks passed")
    return EXIT_VERIFY if failed else EXIT_OK


def _cmd_plot(args) -> int:
    from .trainer import read_log

    try:
        log = read_log(args.log)
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read log {args.log}: {exc}") from None
    if "step" not in log or "test_return_mean" not in log:
        raise ConfigError(f"{args.log} is not a training log")

    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    x, y = log["step"], log["test_return_mean"]
    err = log.get("test_return_stderr", np.zeros_like(y))
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(x, y, marker="o", lw=1.5)
    ax.fill_between(x, y - err, y + err, alpha=0.25)
    ax.set_xlabel("environment steps")
    ax.set_ylabel("test return")
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(args.out, format="svg")
    plt.close(fig)
    print(f"wrote {args.out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gac", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train an agent from a config file")
    t.add_argument("--config", required=True)
    t.add_argument("--seed", type=int, default=None)
    t.add_argument("--out", default=None, help="output directory (default runs/<env>-seed<k>)")
    t.add_argument("--verbose", action="store_true")
    t.set_defaults(func=_cmd_train)

    e = sub.add_parser("eval", help="evaluate a saved actor without exploration")
    e.add_argument("--actor", required=True)
    e.add_argument("--env", required=True)
    e.add_argument("--episodes", type=int, default=10)
    e.add_argument("--seed", type=int, default=0)
    e.set_defaults(func=_cmd_eval)

    v = sub.add_parser("verify", help="run oracle verification suites")
    v.add_argument("--suite", default=None)
    v.add_argument("--seed", type=int, default=0)
    v.set_defaults(func=_cmd_verify)

    g = sub.add_parser("plot", help="plot test return against steps as SVG")
    g.add_argument("--log", required=True)
    g.add_argument("--out", required=True)
    g.set_defaults(func=_cmd_plot)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SolverDiverged, NoConvergence) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except GACError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
