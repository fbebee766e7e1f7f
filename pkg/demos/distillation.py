"""
Teacher, student and a no-distillation baseline
===============================================

A tiny run: the teacher sees appearance and range from every agent, the
student keeps only appearance and learns from the teacher's softened outputs.
"""

from caml.experiment import ExperimentConfig, build_data, evaluate, specs_for
from caml.train import TrainConfig, distill_student, train_bc_baseline, train_teacher

# the default 16x16 world, with fewer episodes and epochs than the full run
cfg = ExperimentConfig(n_train=800, n_eval=400)
train_ds, eval_ds = build_data(cfg, seed=0)
specs = specs_for(cfg)
tcfg = TrainConfig(epochs=15, seed=0)

teacher = train_teacher(specs["teacher"], train_ds, tcfg)
student = distill_student(specs["student"], teacher.checkpoint, train_ds, tcfg)
plain = train_bc_baseline(specs["no_kd"], train_ds, tcfg)

for name, run in (("teacher", teacher), ("student", student), ("no_kd", plain)):
    m = evaluate(run.checkpoint.model(), eval_ds, cfg.task)
    print(f"{name:>8}: ADR {m['adr']:.3f}  EIR {m['eir']:.3f}")

# the logged student loss is (1 - alpha) * task + alpha * t^2 * kd
last = student.history[-1]
print("last epoch:", {k: round(float(v), 4) for k, v in last.items()})
