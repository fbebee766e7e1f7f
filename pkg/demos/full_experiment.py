"""
The whole pipeline on the smoke configuration
=============================================

Writes report.json, metrics.csv and training_log.csv under runs/demo.
The default configuration (configs/default.json) takes a few minutes per seed.
"""

from caml.experiment import run_experiment, smoke_config

report = run_experiment(smoke_config(), "runs/demo", strict=True)
for role, metrics in report["aggregate"].items():
    print(role, {k: round(v["mean"], 3) for k, v in metrics.items()})
for row in report["comm"]:
    print(row)
