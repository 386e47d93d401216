"""Route one slot of arrivals for a random deployment and write a DelayReport CSV."""
import sys

import numpy as np

from ttosc.delay import delay_report, write_report_csv
from ttosc.harness import derive_seed
from ttosc.knapsack import FeasibleSampler
from ttosc.model import DeploymentPlan, SystemConfig, derive_allocation
from ttosc.scheduler import solve_slot
from ttosc.workload import Workload

cfg = SystemConfig.generate(M=3, J=8, seed=0)
rng = np.random.default_rng(0)
bits = np.stack([FeasibleSampler(cfg.data_sizes, C).sample(rng) for C in cfg.storage])
plan = DeploymentPlan(bits, 0)
alloc = derive_allocation(plan, cfg)
arrivals = Workload(cfg, derive_seed(0, 0, 0)).frame(0)[0]

sol = solve_slot(plan, alloc, arrivals, cfg)
print("deployed\n", bits)
print("arrivals per service", arrivals.sum(axis=0))
print(f"slot delay {sol.objective:.4f}  all-cloud {sol.cloud_objective:.4f}  gain {sol.gain:.4f}")

rep = delay_report(sol.policies, arrivals, alloc, cfg)
out = sys.argv[1] if len(sys.argv) > 1 else "delay_report.csv"
write_report_csv(out, [rep])
print("report written to", out)
