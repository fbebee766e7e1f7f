"""Command line entry point: ``caml <subcommand> [options]``.

Exit codes: 0 success, 2 configuration error, 3 stage failure, 4 failed check.
"""

import argparse
import json
import os
import sys
from dataclasses import replace

from . import comms, info, io
from .data import build_dataset
from .experiment import ExperimentConfig, StageError, apply_overrides, evaluate, run_experiment, specs_for
from .train import distill_student, train_bc_baseline, train_teacher
from .world import MODALITY_ORDER, ConfigError, WorldConfig

EXIT_OK, EXIT_CONFIG, EXIT_STAGE, EXIT_CHECK = 0, 2, 3, 4
SEED_ENV = "CAML_FORGE_SEED"


class CheckFailed(RuntimeError):
    pass


def _load_config(args):
    base = ExperimentConfig().to_json()
    if args.config:
        try:
            with open(args.config) as fh:
                user = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from None
        if not isinstance(user, dict):
            raise ConfigError("config root must be a JSON object")
        base = _merge(base, user)
    d = apply_overrides(base, args.set)
    seed = _seed(args, d)
    if seed is not None:
        d.setdefault("train", {})["seed"] = seed
    try:
        return ExperimentConfig.from_json(d)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def _merge(base, user):
    out = dict(base)
    for k, v in user.items():
        if isinstance(v, dict) and isinstance(base.get(k), dict) and k != "topology":
            out[k] = _merge(base[k], v)
        else:
            out[k] = v
    return out


def _seed(args, d):
    if getattr(args, "seed", None) is not None:
        return args.seed
    env = os.environ.get(SEED_ENV)
    if env is not None and not any(s.startswith("train.seed=") for s in args.set or ()):
        try:
            return int(env)
        except ValueError:
            raise ConfigError(f"{SEED_ENV} must be an integer, got {env!r}") from None
    return None


def _modalities(cfg):
    return [m for m in MODALITY_ORDER if m.value in cfg.teacher_modalities]


def cmd_gen_data(args):
    cfg = _load_config(args)
    n = args.episodes if args.episodes is not None else cfg.n_train
    seed = cfg.train.seed
    try:
        ds = build_dataset(cfg.world, n, seed, _modalities(cfg))
    except Exception as exc:
        raise StageError("gen-data", exc) from exc
    manifest = io.save_dataset(ds, args.out, cfg.world, seed)
    print(f"wrote {n} episodes (seed {seed}) to {args.out}; sha256 {manifest['sha256'][:12]}")


def _train(args, role):
    cfg = _load_config(args)
    ds, _, _ = io.load_dataset(args.data)
    spec = specs_for(cfg)[role]
    tcfg = cfg.train
    stage = {"teacher": "train-teacher", "student": "train-student", "aml_student": "train-student"}.get(role, "train-baseline")
    teacher = io.load_checkpoint(args.teacher) if role in ("student", "aml_student") else None
    try:
        if role in ("teacher", "aml_teacher"):
            result = train_teacher(spec, ds, tcfg)
        elif teacher is not None:
            result = distill_student(spec, teacher, ds, tcfg)
        else:
            result = train_bc_baseline(spec, ds, tcfg)
    except Exception as exc:
        raise StageError(stage, exc) from exc
    io.save_checkpoint(result.checkpoint, args.out)
    last = result.history[-1] if result.history else {}
    print(f"{role}: {tcfg.epochs} epochs, final loss {last.get('total_loss', float('nan')):.6f} -> {args.out}")


def cmd_train_teacher(args):
    _train(args, "teacher")


def cmd_train_student(args):
    _train(args, args.role)


def cmd_train_baseline(args):
    _train(args, args.role)


def cmd_eval(args):
    ckpt = io.load_checkpoint(args.checkpoint)
    ds, _, _ = io.load_dataset(args.data)
    try:
        metrics = evaluate(ckpt.model(), ds, ckpt.spec.task)
    except Exception as exc:
        raise StageError("eval", exc) from exc
    print(json.dumps(metrics, indent=2, sort_keys=True))


def cmd_verify_mi(args):
    if bool(args.table) == bool(args.from_world):
        raise ConfigError("verify-mi needs exactly one of --table or --from-world")
    if args.table:
        try:
            table = info.load_table(args.table)
        except (OSError, ValueError) as exc:
            raise ConfigError(f"bad table {args.table}: {exc}") from None
    else:
        try:
            with open(args.from_world) as fh:
                d = json.load(fh)
            world = WorldConfig.from_dict(d.get("world", d))
        except (OSError, ValueError, TypeError) as exc:
            raise ConfigError(f"bad world config {args.from_world}: {exc}") from None
        table = info.export_discrete_abstraction(world, range(args.seeds))
    report = info.chain_rule_check(table)
    print(report)
    for i, v in enumerate(report.individual, 1):
        print(f"I(y;x{i}) = {v:.12f} bits")
    if not report.ok:
        raise CheckFailed("information-gain check failed")


def cmd_verify_comms(args):
    problems = comms.check_counts(args.max_agents)
    for p in problems:
        print(p)
    print(f"{'FAIL' if problems else 'PASS'}: message counts for N in 2..{args.max_agents}")
    if problems:
        raise CheckFailed("message counts differ from closed forms")


def cmd_report(args):
    cfg = _load_config(args)
    if args.out:
        cfg = replace(cfg, output_dir=args.out)
    report = run_experiment(cfg, parallel=args.parallel_repeats, strict=args.strict_deterministic)
    for role, m in report["aggregate"].items():
        cells = ", ".join(f"{k} {v['mean']:.3f}±{v['std']:.3f}" for k, v in m.items())
        print(f"{role:>12}: {cells}")
    print(f"report written to {os.path.join(cfg.output_dir, 'report.json')}")


def build_parser():
    p = argparse.ArgumentParser(prog="caml", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="experiment config JSON")
        sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config entry, e.g. world.n_agents=4 (repeatable)")
        sp.add_argument("--seed", type=int, help=f"seed (falls back to ${SEED_ENV}, then the config)")
        return sp

    sp = common(sub.add_parser("gen-data", help="generate and save an episode dataset"))
    sp.add_argument("--episodes", type=int)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_gen_data)

    sp = common(sub.add_parser("train-teacher", help="train the full-modality teacher"))
    sp.add_argument("--data", required=True)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_train_teacher)

    sp = common(sub.add_parser("train-student", help="distill a reduced-modality student"))
    sp.add_argument("--data", required=True)
    sp.add_argument("--teacher", required=True)
    sp.add_argument("--role", choices=["student", "aml_student"], default="student")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_train_student)

    sp = common(sub.add_parser("train-baseline", help="train a baseline without distillation"))
    sp.add_argument("--data", required=True)
    sp.add_argument("--role", choices=["no_kd", "single_plain", "aml_teacher"], default="no_kd")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_train_baseline)

    sp = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--data", required=True)
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("verify-mi", help="check information-gain identities on a joint table")
    sp.add_argument("--table")
    sp.add_argument("--from-world")
    sp.add_argument("--seeds", type=int, default=2000, help="episodes enumerated with --from-world")
    sp.set_defaults(func=cmd_verify_mi)

    sp = sub.add_parser("verify-comms", help="check message counts against closed forms")
    sp.add_argument("--max-agents", type=int, default=16)
    sp.set_defaults(func=cmd_verify_comms)

    sp = common(sub.add_parser("report", help="run the full experiment and write report files"))
    sp.add_argument("--out")
    sp.add_argument("--strict-deterministic", action="store_true")
    sp.add_argument("--parallel-repeats", action="store_true")
    sp.set_defaults(func=cmd_report)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CheckFailed as exc:
        print(f"check failed: {exc}", file=sys.stderr)
        return EXIT_CHECK
    except StageError as exc:
        print(f"stage failure: {exc}", file=sys.stderr)
        return EXIT_STAGE
    except (OSError, ValueError) as exc:
        print(f"stage failure: {exc}", file=sys.stderr)
        return EXIT_STAGE
    return EXIT_OK


def main_exit():
    sys.exit(main())


if __name__ == "__main__":
    main_exit()
