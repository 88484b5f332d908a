"""Command-line entry point.

Subcommands mirror the curriculum: ``pretrain`` trains the field-blind
teacher and saves its checkpoint plus a replay snapshot, ``distill``
turns that into field-aware students, ``finetune`` resumes from the
students on the target-following task, ``eval`` reports a checkpoint's
behaviour, and ``check`` runs the oracle/invariant suite.

Exit codes: 0 success, 1 configuration error, 2 numeric fault,
3 check-suite failure.
"""

from __future__ import annotations

import argparse
import os
import sys

from .config import load_config
from .errors import ConfigError, FieldsacError, NumericFault
from .rewards import EnvRewardConfig


def _parse_overrides(pairs: list[str]) -> dict:
    """Turn ["--key", "value", ...] leftovers into an override dict."""
    if len(pairs) % 2 != 0:
        raise ConfigError(f"dangling override flag: {pairs[-1]!r} has no value")
    out = {}
    for flag, value in zip(pairs[::2], pairs[1::2]):
        if not flag.startswith("--"):
            raise ConfigError(f"expected an override flag, got {flag!r}")
        out[flag[2:].replace("-", "_")] = value
    return out


def _require(path: str, what: str, hint: str) -> str:
    if not os.path.exists(path):
        raise ConfigError(f"{what} not found at {path}; expected {hint}")
    return path


def cmd_pretrain(args, overrides) -> int:
    from . import pipeline

    overrides = dict(overrides)
    overrides.setdefault("stage", "pretrain")
    cfg = load_config(args.config, overrides)
    if cfg.stage != "pretrain":
        raise ConfigError("the pretrain subcommand requires stage = pretrain")
    res = pipeline.train_stage(cfg, args.out)
    print(f"saved checkpoint to {res.checkpoint_dir}")
    if res.replay_dir:
        print(f"saved replay snapshot to {res.replay_dir}")
    print(f"saved metrics to {res.metrics_path}")
    for line in res.final_eval.lines():
        print(line)
    return 0


def cmd_distill(args, overrides) -> int:
    from . import pipeline
    from .distill import DistillConfig

    if overrides:
        raise ConfigError(f"unknown flags for distill: {sorted(overrides)}")
    _require(os.path.join(args.teacher, "meta.txt"), "teacher checkpoint", f"{args.teacher}/meta.txt (from `fieldsac pretrain`)")
    _require(os.path.join(args.replay, "replay.manifest"), "replay snapshot", f"{args.replay}/replay.manifest (from `fieldsac pretrain`)")
    dcfg = DistillConfig(
        student_hidden=args.student_hidden,
        batch=args.batch,
        lr_actor=args.lr,
        lr_critic=args.lr,
        max_steps=args.max_steps,
        kl_stop=args.kl_stop,
        lr_decay_step=args.lr_decay_step,
        noise_std=args.noise_std,
        seed=args.seed,
    )
    res = pipeline.run_distill_stage(args.teacher, args.replay, args.out, dcfg)
    print(f"saved student checkpoint to {res.checkpoint_dir}")
    print(f"saved distillation metrics to {res.metrics_path}")
    print(f"holdout mean KL            {res.report.mean_kl:.6f} nats")
    print(f"holdout max action gap     {res.report.max_action_deviation:.6f}")
    print(f"teacher parameters intact  {res.teacher_unchanged}")
    print(f"verification passed        {res.report.passed}")
    return 0


def cmd_finetune(args, overrides) -> int:
    from . import pipeline

    overrides = dict(overrides)
    overrides.setdefault("stage", "finetune")
    overrides.setdefault("difficulty", "2")
    cfg = load_config(args.config, overrides)
    if cfg.stage != "finetune":
        raise ConfigError("the finetune subcommand requires stage = finetune")
    _require(os.path.join(args.student, "meta.txt"), "student checkpoint", f"{args.student}/meta.txt (from `fieldsac distill`)")
    bundle = pipeline.load_checkpoint(args.student)
    res = pipeline.train_stage(cfg, args.out, resume_actor=bundle.actor, resume_ensemble=bundle.ensemble)
    print(f"saved checkpoint to {res.checkpoint_dir}")
    print(f"saved metrics to {res.metrics_path}")
    for line in res.final_eval.lines():
        print(line)
    return 0


def cmd_eval(args, overrides) -> int:
    from . import pipeline

    if overrides:
        raise ConfigError(f"unknown flags for eval: {sorted(overrides)}")
    _require(os.path.join(args.checkpoint, "meta.txt"), "checkpoint", f"{args.checkpoint}/meta.txt")
    bundle = pipeline.load_checkpoint(args.checkpoint)
    obs_mode = "teacher" if bundle.stage == "pretrain" else "student"
    report = pipeline.evaluate(
        pipeline.NetPolicy(bundle.actor, obs_mode),
        difficulty=args.difficulty,
        episodes=args.episodes,
        seed=args.seed,
        reward_cfg=EnvRewardConfig(w_vel=0.0 if bundle.stage == "pretrain" else 1.0),
        directional_pvb=bundle.stage != "pretrain",
        record_dir=args.record_dir,
    )
    for line in report.lines():
        print(line)
    return 0


def cmd_check(args, overrides) -> int:
    from . import checks

    if overrides:
        raise ConfigError(f"unknown flags for check: {sorted(overrides)}")
    return 0 if checks.run_all(verbose=True) else 3


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fieldsac", description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = p.add_subparsers(dest="command", required=True)

    pre = sub.add_parser("pretrain", help="train the field-blind teacher; any config key is overridable via --key value")
    pre.add_argument("--config", default=None, help="key = value config file")
    pre.add_argument("--out", required=True, help="output directory")

    dis = sub.add_parser("distill", help="distill a teacher checkpoint into field-aware students")
    dis.add_argument("--teacher", required=True, help="teacher checkpoint directory")
    dis.add_argument("--replay", required=True, help="replay snapshot directory")
    dis.add_argument("--out", required=True)
    dis.add_argument("--student-hidden", type=int, default=1024)
    dis.add_argument("--batch", type=int, default=128)
    dis.add_argument("--lr", type=float, default=1e-4)
    dis.add_argument("--max-steps", type=int, default=20000)
    dis.add_argument("--kl-stop", type=float, default=1e-3)
    dis.add_argument("--lr-decay-step", type=int, default=0)
    dis.add_argument("--noise-std", type=float, default=0.1)
    dis.add_argument("--seed", type=int, default=0)

    fin = sub.add_parser("finetune", help="resume from a student checkpoint with an empty replay")
    fin.add_argument("--config", default=None)
    fin.add_argument("--student", required=True, help="student checkpoint directory")
    fin.add_argument("--out", required=True)

    ev = sub.add_parser("eval", help="evaluate a checkpoint with deterministic actions")
    ev.add_argument("--checkpoint", required=True)
    ev.add_argument("--difficulty", type=int, default=2)
    ev.add_argument("--episodes", type=int, default=5)
    ev.add_argument("--seed", type=int, default=0)
    ev.add_argument("--record-dir", default=None, help="dump per-episode trajectory CSVs here")

    sub.add_parser("check", help="run the oracle/invariant self-check suite")
    return p


def main(argv: list[str] | None = None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    parser = build_parser()
    try:
        args, leftover = parser.parse_known_args(argv)
        overrides = _parse_overrides(leftover)
        handler = {
            "pretrain": cmd_pretrain,
            "distill": cmd_distill,
            "finetune": cmd_finetune,
            "eval": cmd_eval,
            "check": cmd_check,
        }[args.command]
        return handler(args, overrides)
    except NumericFault as e:
        print(f"numeric fault: {e}", file=sys.stderr)
        return 2
    except (ConfigError, FieldsacError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
