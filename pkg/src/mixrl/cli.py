"""Command-line entry point.

Commands: train, eval, sweep, export. Each takes --config (key = value
file), --out (output directory), --seed, and repeatable --set key=value
overrides. Every produced file is written atomically; the resolved
configuration is echoed to <out>/config.resolved.
"""

import os

# Single-threaded BLAS: worker threads and lockstep evaluation provide the
# parallelism, and per-run results stay bit-reproducible.
os.environ.setdefault("OPENBLAS_NUM_THREADS", "1")
os.environ.setdefault("OMP_NUM_THREADS", "1")

import argparse
import logging
import sys

from . import a3c, evaluate, ioutil, mixture, net
from .config import ConfigError, RunConfig, parse_config, resolved_text
from .preprocess import RegimeSpec

logger = logging.getLogger(__name__)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mixrl",
        description="Train, mix and evaluate Breakout policies at desk scale.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", help="key = value configuration file")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, help="root seed (overrides config)")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override any configuration key")
        p.add_argument("--verbose", action="store_true", help="info-level logging")

    p_train = sub.add_parser("train", help="train one policy with the async trainer")
    common(p_train)
    p_train.add_argument("--regime", type=int, choices=(1, 2),
                         help="1 = raw frames, 2 = masked frames with life penalty")
    p_train.add_argument("--total-steps", type=int, dest="total_steps")
    p_train.add_argument("--workers", type=int)

    p_eval = sub.add_parser("eval", help="roll out a checkpoint or a mixture spec")
    common(p_eval)
    p_eval.add_argument("--checkpoint", help="single policy checkpoint (.mxp)")
    p_eval.add_argument("--regime", type=int, choices=(1, 2),
                        help="preprocessing regime of --checkpoint")
    p_eval.add_argument("--mixture", help="mixture spec file (component/alpha/regime lines)")
    p_eval.add_argument("--episodes", type=int)
    p_eval.add_argument("--epsilon", type=float,
                        help="exploration floor for --checkpoint (default 0)")
    p_eval.add_argument("--threads", type=int)
    p_eval.add_argument("--renormalize-alphas", action="store_true",
                        help="rescale mixture alphas to sum to 1")
    p_eval.add_argument("--shared-raw-view", action="store_true",
                        help="feed every component raw frames instead of its own regime")

    p_sweep = sub.add_parser("sweep", help="evaluate the two-policy mixture over alphas")
    common(p_sweep)
    p_sweep.add_argument("--pi1", required=True, help="regime-1 policy checkpoint")
    p_sweep.add_argument("--pi2", required=True, help="regime-2 policy checkpoint")
    p_sweep.add_argument("--alphas", default="0,0.125,0.25,0.5,1",
                         help="comma-separated mixing weights for pi1")
    p_sweep.add_argument("--epsilon", type=float)
    p_sweep.add_argument("--episodes", type=int)
    p_sweep.add_argument("--threads", type=int)
    p_sweep.add_argument("--shared-raw-view", action="store_true")

    p_export = sub.add_parser("export", help="convert a produced CSV to long format")
    common(p_export)
    p_export.add_argument("--table", required=True, help="CSV produced by train/eval/sweep")

    return parser


def _load_config(args: argparse.Namespace) -> RunConfig:
    overrides: dict[str, str] = {}
    for item in args.set:
        key, eq, value = item.partition("=")
        if not eq:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        overrides[key.strip()] = value.strip()
    if args.seed is not None:
        overrides["seed"] = str(args.seed)
    if getattr(args, "regime", None) is not None:
        overrides["regime"] = str(args.regime)
    if getattr(args, "total_steps", None) is not None:
        overrides["total_steps"] = str(args.total_steps)
    if getattr(args, "workers", None) is not None:
        overrides["workers"] = str(args.workers)
    if getattr(args, "episodes", None) is not None:
        overrides["eval_episodes"] = str(args.episodes)
    if getattr(args, "threads", None) is not None:
        overrides["eval_threads"] = str(args.threads)
    if args.command == "sweep" and getattr(args, "epsilon", None) is not None:
        overrides["epsilon"] = str(args.epsilon)
    return parse_config(args.config, overrides)


def _prepare_out(args: argparse.Namespace, run: RunConfig) -> str:
    os.makedirs(args.out, exist_ok=True)
    ioutil.atomic_write_text(os.path.join(args.out, "config.resolved"),
                             resolved_text(run))
    return args.out


def cmd_train(args: argparse.Namespace) -> int:
    run = _load_config(args)
    out = _prepare_out(args, run)
    result = a3c.train(run.env, run.trainer, run.regime, run.seed, out_dir=out,
                       obs_height=run.obs_height, obs_width=run.obs_width)
    rewards = result.episode_rewards()
    mean = float(rewards.mean()) if len(rewards) else float("nan")
    print(f"trained {result.global_step} steps, {len(result.episodes)} episodes, "
          f"mean episode reward {mean:.3f}")
    print(f"final checkpoint: {result.checkpoints[-1]}")
    for worker, message in result.faults:
        print(f"worker {worker} fault: {message}", file=sys.stderr)
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    run = _load_config(args)
    if bool(args.checkpoint) == bool(args.mixture):
        raise ConfigError("eval needs exactly one of --checkpoint or --mixture")
    if args.mixture:
        policy, step = mixture.load_mixed_policy(
            args.mixture, run.obs_height, run.obs_width,
            renormalize=args.renormalize_alphas,
            shared_raw_view=args.shared_raw_view)
        reward_regime = run.regime
    else:
        params, _, step = net.load_checkpoint(args.checkpoint)
        regime_id = args.regime if args.regime is not None else run.regime_id
        reward_regime = RegimeSpec.from_id(regime_id)
        epsilon = args.epsilon if args.epsilon is not None else 0.0
        policy = evaluate.single_policy(params, reward_regime, run.obs_height,
                                        run.obs_width, epsilon=epsilon)
    records = evaluate.rollout(policy, run.env, run.eval_episodes, run.seed,
                               reward_regime=reward_regime,
                               threads=run.eval_threads)
    out = _prepare_out(args, run)
    ioutil.atomic_write_text(os.path.join(out, "episodes.csv"),
                             evaluate.episodes_csv(records))
    stats = evaluate.aggregate(records, checkpoint_step=step)
    print(f"episodes {stats.episodes}: score min {stats.min_reward:.0f} "
          f"median {stats.median_reward:.0f} max {stats.max_reward:.0f} "
          f"mean {stats.mean_reward:.2f}, mean steps {stats.mean_steps:.1f}, "
          f"stuck fraction {stats.stuck_fraction:.3f}")
    return 0


def cmd_sweep(args: argparse.Namespace) -> int:
    run = _load_config(args)
    try:
        alphas = [float(a) for a in args.alphas.split(",") if a.strip() != ""]
    except ValueError:
        raise ConfigError(f"--alphas expects comma-separated floats, got {args.alphas!r}")
    if not alphas:
        raise ConfigError("--alphas is empty")
    pi1, _, step1 = net.load_checkpoint(args.pi1)
    pi2, _, step2 = net.load_checkpoint(args.pi2)
    points = evaluate.sweep_alpha(
        pi1, pi2, alphas, run.epsilon, run.eval_episodes, run.env, run.seed,
        obs_height=run.obs_height, obs_width=run.obs_width,
        threads=run.eval_threads, shared_raw_view=args.shared_raw_view,
        checkpoint_step=max(step1, step2))
    out = _prepare_out(args, run)
    ioutil.atomic_write_text(os.path.join(out, "sweep.csv"),
                             evaluate.stats_csv(points))
    for p in points:
        s = p.stats
        print(f"alpha {p.alpha:g}: mean score {s.mean_reward:.2f}, "
              f"mean steps {s.mean_steps:.1f}, stuck {s.stuck_fraction:.3f}")
    return 0


_EXPORTS = {
    a3c.TRAIN_LOG_HEADER: ("step", ["episode_reward", "episode_length"]),
    evaluate.STATS_CSV_HEADER: ("alpha", ["min", "max", "median", "mean",
                                          "mean_steps", "stuck_fraction"]),
    evaluate.EPISODES_CSV_HEADER: ("episode", ["shaped_reward", "raw_score",
                                               "steps", "stuck"]),
}


def cmd_export(args: argparse.Namespace) -> int:
    run = _load_config(args)
    with open(args.table, "r", encoding="utf-8") as handle:
        lines = [line for line in handle.read().splitlines() if line.strip()]
    if not lines:
        raise ConfigError(f"{args.table}: empty table")
    header = lines[0]
    if header not in _EXPORTS:
        raise ConfigError(f"{args.table}: unrecognized table header {header!r}")
    x_name, metrics = _EXPORTS[header]
    columns = header.split(",")
    out_lines = ["x,metric,value"]
    for line in lines[1:]:
        cells = dict(zip(columns, line.split(",")))
        x = cells[x_name]
        for metric in metrics:
            value = cells.get(metric, "")
            if value != "":
                out_lines.append(f"{x},{metric},{value}")
    out = _prepare_out(args, run)
    stem = os.path.splitext(os.path.basename(args.table))[0]
    target = os.path.join(out, f"{stem}_long.csv")
    ioutil.atomic_write_text(target, "\n".join(out_lines) + "\n")
    print(f"wrote {target} ({len(out_lines) - 1} rows)")
    return 0


_COMMANDS = {
    "train": cmd_train,
    "eval": cmd_eval,
    "sweep": cmd_sweep,
    "export": cmd_export,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    try:
        return _COMMANDS[args.command](args)
    except (ConfigError, net.CheckpointError, net.TrainingFault, ValueError,
            OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
