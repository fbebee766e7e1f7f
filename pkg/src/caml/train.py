"""Behaviour-cloning and teacher-to-student distillation loops."""

import hashlib
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from . import tensor as T
from .data import DatasetError
from .models import FusionModel, ModelSpec, Task, assert_homologous
from .nn import AdamState, DistillConfig, adam_step, bce_loss, ce_loss, cosine_lr, kd_loss, student_loss
from .tensor import ContractError


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 32
    lr0: float = 1e-3
    epochs: int = 30
    distill: DistillConfig = field(default_factory=DistillConfig)
    seed: int = 0
    repeats: int = 4
    task: Task = Task.DECISION

    def __post_init__(self):
        object.__setattr__(self, "task", Task(self.task))
        if isinstance(self.distill, dict):
            object.__setattr__(self, "distill", DistillConfig(**self.distill))

    def to_json(self):
        d = asdict(self)
        d["task"] = self.task.value
        return d

    @classmethod
    def from_json(cls, d):
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**d)


def config_hash(*parts):
    blob = json.dumps(parts, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class Checkpoint:
    spec: ModelSpec
    params: dict
    optimizer: AdamState
    config_hash: str
    epoch: int
    history: list = field(default_factory=list)

    def model(self):
        model = FusionModel(self.spec, seed=0)
        model.load_state_dict(self.params)
        return model

    def same_as(self, other):
        """Bitwise equality of spec, parameters and optimiser state."""
        if self.spec != other.spec or self.epoch != other.epoch or self.config_hash != other.config_hash:
            return False
        if self.params.keys() != other.params.keys():
            return False
        if any(not np.array_equal(self.params[k], other.params[k]) for k in self.params):
            return False
        a, b = self.optimizer, other.optimizer
        return a.step == b.step and all(np.array_equal(x, y) for x, y in zip(a.m + a.v, b.m + b.v))


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    history: list
    step_losses: list


def task_loss(spec, logits, batch):
    if spec.task is Task.DECISION:
        p_brake = T.softmax_t(logits, 1.0)[:, 1]
        return bce_loss(p_brake, batch.actions)
    return ce_loss(logits, batch.seg)


def _fit(model, dataset, cfg, loss_fn, tag):
    if len(dataset) == 0:
        raise DatasetError("empty dataset")
    params = model.parameters()
    names = [n for n, _ in model.named_parameters()]
    state = AdamState.for_params(params)
    n = len(dataset)
    steps_per_epoch = math.ceil(n / cfg.batch_size)
    total = max(1, cfg.epochs * steps_per_epoch)
    history, step_losses = [], []
    step = 0
    for epoch in range(cfg.epochs):
        perm = np.random.default_rng([cfg.seed, epoch]).permutation(n)
        sums = np.zeros(3)
        lr = cosine_lr(step, total, cfg.lr0)
        for s in range(steps_per_epoch):
            idx = perm[s * cfg.batch_size:(s + 1) * cfg.batch_size]
            batch = dataset.batch(idx)
            lr = cosine_lr(step, total, cfg.lr0)
            loss, parts = loss_fn(model, batch)
            grads = T.backward(loss, params)
            adam_step(params, grads, state, lr)
            w = len(idx) / n
            sums += w * np.array([parts["task"], parts["kd"], loss.item()])
            step_losses.append(loss.item())
            step += 1
        history.append({"epoch": epoch, "lr": lr, "task_loss": sums[0], "kd_loss": sums[1], "total_loss": sums[2]})
    ckpt = Checkpoint(
        model.spec,
        dict(zip(names, (p.data.copy() for p in params))),
        state,
        config_hash(tag, model.spec.to_json(), cfg.to_json()),
        cfg.epochs,
        history,
    )
    return TrainResult(ckpt, history, step_losses)


def _plain_loss(model, batch):
    loss = task_loss(model.spec, model(batch), batch)
    return loss, {"task": loss.item(), "kd": 0.0}


def train_teacher(spec, dataset, cfg):
    """Task-loss training of a full-mask teacher."""
    if not spec.is_full:
        raise ContractError("teacher spec must have the full modality mask")
    return _fit(FusionModel(spec, cfg.seed), dataset, cfg, _plain_loss, "teacher")


def train_bc_baseline(spec, dataset, cfg):
    """Task-loss training of any masked spec, no teacher."""
    return _fit(FusionModel(spec, cfg.seed), dataset, cfg, _plain_loss, "baseline")


def distill_student(spec, teacher, dataset, cfg):
    """Train ``spec`` on (1-a) * task + a * t^2 * KD against a frozen teacher."""
    assert_homologous_or_raise(teacher.spec, spec)
    teacher_model = teacher.model() if isinstance(teacher, Checkpoint) else teacher
    dcfg = cfg.distill

    def loss_fn(model, batch):
        with T.no_grad():
            soft = teacher_model(batch).data
        logits = model(batch)
        task = task_loss(model.spec, logits, batch)
        kd = kd_loss(logits, soft, dcfg.temperature)
        total = student_loss(task, kd, dcfg)
        return total, {"task": task.item(), "kd": kd.item()}

    return _fit(FusionModel(spec, cfg.seed), dataset, cfg, loss_fn, "student")


def assert_homologous_or_raise(teacher_spec, student_spec):
    try:
        assert_homologous(teacher_spec, student_spec)
    except ValueError as exc:
        raise ContractError(str(exc)) from None


def predict(model, dataset, batch_size=256):
    """Hard predictions: actions ``[E]`` or class maps ``[E, G, G]``."""
    outs = []
    with T.no_grad():
        for start in range(0, len(dataset), batch_size):
            idx = np.arange(start, min(start + batch_size, len(dataset)))
            outs.append(np.argmax(model(dataset.batch(idx)).data, axis=-1))
    return np.concatenate(outs)


def aggregate(rows, keys=None):
    """Mean and population std per metric over per-seed rows."""
    keys = keys or [k for k in rows[0] if isinstance(rows[0][k], (int, float)) and k != "seed"]
    out = {}
    for k in keys:
        vals = np.array([r[k] for r in rows], dtype=np.float64)
        out[k] = {"mean": float(vals.mean()), "std": float(vals.std())}
    return out


def run_repeats(job, cfg, parallel=False):
    """Run ``job(seed)`` for ``cfg.repeats`` seeds; returns per-seed rows and the aggregate."""
    if cfg.repeats < 1:
        raise ValueError("repeats must be >= 1")
    seeds = [cfg.seed + r for r in range(cfg.repeats)]
    if parallel and len(seeds) > 1:
        with ProcessPoolExecutor(max_workers=min(4, len(seeds))) as pool:
            results = list(pool.map(job, seeds))
    else:
        results = [job(s) for s in seeds]
    rows = [dict(seed=s, **r) for s, r in zip(seeds, results)]
    return {"per_seed": rows, "aggregate": aggregate(rows)}
