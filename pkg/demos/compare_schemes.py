"""Short training run of the learned scheme next to the baselines (3 cells).

A few dozen episodes only show the mechanics; the orderings studied in the
acceptance tests need hundreds of episodes.
"""
import sys

from ttosc.agent import TrainingConfig
from ttosc.harness import SCHEMES, run_scheme
from ttosc.model import SystemConfig

episodes = int(sys.argv[1]) if len(sys.argv) > 1 else 30
cfg = SystemConfig.generate(M=3, J=20, seed=0)
training = TrainingConfig(gamma=0.0, state_value=True, epsilon_decay_episodes=episodes)

for scheme in SCHEMES:
    n = episodes if scheme == "ttosc" else 0
    res = run_scheme(cfg, scheme, n, 0, training=training, eval_episodes=5, record_slots=False)
    print(f"{scheme:>10s}  F_T {res.final_delay():.4f}")
