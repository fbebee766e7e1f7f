"""End-to-end runs: data, teacher, student, baselines, evaluation, report."""

import csv
import io
import json
import os
import time
from dataclasses import dataclass, field, fields, replace

import numpy as np

from . import comms
from .data import PATCH, build_dataset
from .metrics import decision_metrics, miou
from .models import ModelSpec, Task, Variant, student_spec
from .nn import DistillConfig, derive_seed
from .train import TrainConfig, config_hash, distill_student, predict, train_bc_baseline, train_teacher
from .world import MODALITY_ORDER, NUM_SEG_CLASSES, ConfigError, Modality, WorldConfig

FORMAT_VERSION = 1

# role -> (what is trained, which agents, which modalities)
ROLES = {
    "teacher": "multi-agent, all modalities, task loss",
    "student": "multi-agent, retained modalities, distilled from teacher",
    "no_kd": "multi-agent, retained modalities, task loss only",
    "aml_teacher": "ego only, all modalities, task loss",
    "aml_student": "ego only, retained modalities, distilled from aml_teacher",
    "single_plain": "ego only, retained modalities, task loss only",
}
DEFAULT_ROLES = ("teacher", "student", "no_kd", "aml_teacher", "aml_student")


class StageError(RuntimeError):
    def __init__(self, stage, cause):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage


@dataclass(frozen=True)
class ExperimentConfig:
    world: WorldConfig = field(default_factory=WorldConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    variant: Variant = Variant.CAML_INTERMEDIATE
    task: Task = Task.DECISION
    embed_dim: int = 32
    head_hidden: int = 64
    teacher_modalities: tuple = ("APPEARANCE", "RANGE")
    student_modalities: tuple = ("APPEARANCE",)
    roles: tuple = DEFAULT_ROLES
    n_train: int = 2000
    n_eval: int = 500
    topology: dict = field(default_factory=lambda: {"kind": "CENTRALIZED", "k": 1})
    output_dir: str = "runs/default"

    def __post_init__(self):
        object.__setattr__(self, "variant", Variant(self.variant))
        object.__setattr__(self, "task", Task(self.task))
        object.__setattr__(self, "teacher_modalities", tuple(Modality(m).value for m in self.teacher_modalities))
        object.__setattr__(self, "student_modalities", tuple(Modality(m).value for m in self.student_modalities))
        object.__setattr__(self, "roles", tuple(self.roles))
        bad = set(self.roles) - set(ROLES)
        if bad:
            raise ConfigError(f"unknown roles {sorted(bad)}")
        if not set(self.student_modalities) <= set(self.teacher_modalities):
            raise ConfigError("student modalities must be a subset of teacher modalities")
        if self.train.task is not self.task:
            object.__setattr__(self, "train", replace(self.train, task=self.task))

    def to_json(self):
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d["world"] = self.world.to_dict()
        d["train"] = self.train.to_json()
        d["variant"] = self.variant.value
        d["task"] = self.task.value
        for key in ("teacher_modalities", "student_modalities", "roles"):
            d[key] = list(d[key])
        return d

    @classmethod
    def from_json(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown experiment config keys: {sorted(unknown)}")
        d = dict(d)
        if "world" in d:
            d["world"] = WorldConfig.from_dict(d["world"])
        if "train" in d:
            t = dict(d["train"])
            if "distill" in t:
                dk = set(t["distill"]) - {"alpha", "temperature"}
                if dk:
                    raise ConfigError(f"unknown distill config keys: {sorted(dk)}")
                t["distill"] = DistillConfig(**t["distill"])
            try:
                d["train"] = TrainConfig.from_json(t)
            except ValueError as exc:
                raise ConfigError(str(exc)) from None
        if "topology" in d:
            tk = set(d["topology"]) - {"kind", "k"}
            if tk:
                raise ConfigError(f"unknown topology keys: {sorted(tk)}")
        return cls(**d)

    @property
    def hash(self):
        d = self.to_json()
        d.pop("output_dir")
        return config_hash(d)


def apply_overrides(d, overrides):
    """Apply ``key.sub=value`` strings (values parsed as JSON when possible)."""
    d = json.loads(json.dumps(d))
    for item in overrides or ():
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        key, raw = item.split("=", 1)
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = d
        parts = key.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override {key!r} descends into a non-object")
        node[parts[-1]] = value
    return d


# -- specs ---------------------------------------------------------------------


def specs_for(cfg):
    """Model specs for every role."""
    world = cfg.world
    common = dict(
        modalities=tuple(cfg.teacher_modalities),
        n_agents=world.n_agents,
        embed_dim=cfg.embed_dim,
        head_hidden=cfg.head_hidden,
        task=cfg.task,
        grid_size=world.grid_size,
        state_cap=world.state_cap,
        num_classes=NUM_SEG_CLASSES,
    )
    teacher = ModelSpec(variant=cfg.variant, **common)
    single = ModelSpec(variant=Variant.SINGLE_AGENT, **common)
    retained = cfg.student_modalities
    return {
        "teacher": teacher,
        "student": student_spec(teacher, retained),
        "no_kd": student_spec(teacher, retained),
        "aml_teacher": single,
        "aml_student": student_spec(single, retained),
        "single_plain": student_spec(single, retained),
    }


def data_seeds(seed):
    return derive_seed(seed, 101), derive_seed(seed, 202)


def build_data(cfg, seed):
    train_seed, eval_seed = data_seeds(seed)
    mods = [m for m in MODALITY_ORDER if m.value in cfg.teacher_modalities]
    return build_dataset(cfg.world, cfg.n_train, train_seed, mods), build_dataset(cfg.world, cfg.n_eval, eval_seed, mods)


def evaluate(model, dataset, task):
    pred = predict(model, dataset)
    if Task(task) is Task.DECISION:
        return decision_metrics(pred, dataset.actions)
    return {"miou": miou(pred, dataset.seg, NUM_SEG_CLASSES)}


def _needs(role):
    return {"student": "teacher", "aml_student": "aml_teacher"}.get(role)


def run_seed(cfg, seed, data=None, keep_checkpoints=False):
    """Train and evaluate every configured role for one seed."""
    try:
        train_ds, eval_ds = data if data is not None else build_data(cfg, seed)
    except Exception as exc:
        raise StageError("gen-data", exc) from exc
    tcfg = replace(cfg.train, seed=seed)
    specs = specs_for(cfg)
    roles = list(cfg.roles)
    for role in list(roles):
        need = _needs(role)
        if need and need not in roles:
            roles.insert(roles.index(role), need)
    ckpts, metrics, logs = {}, {}, {}
    for role in roles:
        spec = specs[role]
        stage = {"teacher": "train-teacher", "aml_teacher": "train-teacher",
                 "student": "train-student", "aml_student": "train-student"}.get(role, "train-baseline")
        try:
            if role in ("teacher", "aml_teacher"):
                result = train_teacher(spec, train_ds, tcfg)
            elif role in ("student", "aml_student"):
                result = distill_student(spec, ckpts[_needs(role)], train_ds, tcfg)
            else:
                result = train_bc_baseline(spec, train_ds, tcfg)
        except Exception as exc:
            raise StageError(stage, exc) from exc
        ckpts[role] = result.checkpoint
        logs[role] = result.history
        try:
            metrics[role] = evaluate(result.checkpoint.model(), eval_ds, cfg.task)
        except Exception as exc:
            raise StageError("eval", exc) from exc
    out = {"metrics": {r: metrics[r] for r in roles}, "logs": logs}
    if keep_checkpoints:
        out["checkpoints"] = ckpts
    return out


def _seed_job(args):
    cfg_json, seed = args
    return run_seed(ExperimentConfig.from_json(cfg_json), seed)


def run_seeds(cfg, parallel=False):
    seeds = [cfg.train.seed + r for r in range(cfg.train.repeats)]
    if parallel and len(seeds) > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=min(4, len(seeds))) as pool:
            results = list(pool.map(_seed_job, [(cfg.to_json(), s) for s in seeds]))
    else:
        results = [run_seed(cfg, s) for s in seeds]
    return seeds, results


def summarize(seeds, results):
    """Per-seed rows plus mean / population std per (role, metric)."""
    rows = []
    for seed, res in zip(seeds, results):
        for role, m in res["metrics"].items():
            rows.append({"seed": seed, "role": role, **m})
    agg = {}
    for role in results[0]["metrics"]:
        agg[role] = {}
        for key in results[0]["metrics"][role]:
            vals = np.array([res["metrics"][role][key] for res in results])
            agg[role][key] = {"mean": float(vals.mean()), "std": float(vals.std())}
    return rows, agg


def comm_rows(cfg):
    specs = specs_for(cfg)
    top = comms.Topology(cfg.topology.get("kind", "CENTRALIZED"), cfg.world.n_agents, cfg.topology.get("k", 1))
    tokens = 1 if cfg.task is Task.DECISION else (cfg.world.grid_size // PATCH) ** 2
    rows = []
    for role in ("teacher", "student"):
        ledger = comms.ledger_for(top, specs[role].mask, cfg.embed_dim, tokens)
        row = {"role": role, **ledger.to_row()}
        per_batch = ledger.per_batch(cfg.train.batch_size)
        row["messages_per_batch"] = per_batch["messages"]
        row["bytes_per_batch"] = per_batch["bytes"]
        rows.append(row)
    return rows


def run_experiment(cfg, output_dir=None, parallel=False, strict=False):
    """Run every seed, write ``report.json``, ``metrics.csv`` and ``training_log.csv``.

    ``strict`` leaves out wall-clock fields so reruns are byte-identical.
    """
    out = output_dir or cfg.output_dir
    os.makedirs(out, exist_ok=True)
    start = time.perf_counter()
    seeds, results = run_seeds(cfg, parallel)
    rows, agg = summarize(seeds, results)
    report = {
        "format_version": FORMAT_VERSION,
        "config_hash": cfg.hash,
        "config": cfg.to_json(),
        "task": cfg.task.value,
        "seeds": seeds,
        "per_seed": rows,
        "aggregate": agg,
        "comm": comm_rows(cfg),
    }
    if not strict:
        report["wall_seconds"] = time.perf_counter() - start
    with open(os.path.join(out, "report.json"), "w") as fh:
        fh.write(report_json(report))
    with open(os.path.join(out, "metrics.csv"), "w", newline="") as fh:
        fh.write(metrics_csv(rows))
    with open(os.path.join(out, "training_log.csv"), "w", newline="") as fh:
        fh.write(training_log_csv(seeds, results))
    return report


def report_json(report):
    return json.dumps(report, indent=2, sort_keys=True, default=_json_default) + "\n"


def _json_default(x):
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    raise TypeError(f"not serialisable: {type(x)}")


def metrics_csv(rows):
    keys = ["seed", "role"] + sorted({k for r in rows for k in r} - {"seed", "role"})
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=keys, lineterminator="\n")
    writer.writeheader()
    for r in rows:
        writer.writerow({k: (repr(float(v)) if isinstance(v, float) else v) for k, v in r.items()})
    return buf.getvalue()


def training_log_csv(seeds, results):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["seed", "role", "epoch", "lr", "task_loss", "kd_loss", "total_loss"])
    for seed, res in zip(seeds, results):
        for role, hist in res["logs"].items():
            for h in hist:
                writer.writerow([seed, role, h["epoch"]] + [repr(float(h[k])) for k in ("lr", "task_loss", "kd_loss", "total_loss")])
    return buf.getvalue()


def load_config(path, overrides=None):
    with open(path) as fh:
        d = json.load(fh)
    return ExperimentConfig.from_json(apply_overrides(d, overrides))


def default_config_dict():
    return ExperimentConfig().to_json()


def smoke_config(**kw):
    """Tiny end-to-end configuration: 8x8 grid, two agents, 64 episodes, 3 epochs."""
    base = dict(
        world=WorldConfig(grid_size=8, n_agents=2, sensing_radius=5.0, n_occluders=1, n_entities=3),
        train=TrainConfig(epochs=3, repeats=2),
        embed_dim=16,
        head_hidden=16,
        n_train=64,
        n_eval=64,
        output_dir="runs/smoke",
    )
    base.update(kw)
    return ExperimentConfig(**base)


__all__ = [
    "ExperimentConfig", "StageError", "ROLES", "run_seed", "run_seeds", "run_experiment", "summarize",
    "specs_for", "build_data", "evaluate", "apply_overrides", "load_config", "smoke_config",
]
