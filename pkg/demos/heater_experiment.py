"""Learn the slab-heater model from simulated data and score total-cost forecasts with CRPS.

Usage: python demos/heater_experiment.py [n_train] [seed]
"""
import sys

from mebnlearn.heater import HeaterConfig, run_heater_experiment
from mebnlearn.scoring import parse_criteria

n_train = int(sys.argv[1]) if len(sys.argv) > 1 else 1000
seed = int(sys.argv[2]) if len(sys.argv) > 2 else 0
report = run_heater_experiment(HeaterConfig(n_train=n_train, seed=seed),
                               criteria=parse_criteria("avg_crps <= 0.05\nmae < 0.05"))
print(report.text())
for case in report.cases[:5]:
    print(f"{case.case}: predicted {case.mean:.4f} +/- {case.variance ** 0.5:.4f}, actual {case.actual:.4f}")
