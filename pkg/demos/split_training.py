"""Train VFL-A-EWA next to the single-device and centralized baselines.

Uses a small freshly simulated dataset (about a minute to generate), so
the numbers are noisy; the acceptance suite runs the 12-seed version.
Run: ``python3 demos/split_training.py``.
"""
import numpy as np

from vfeel.harness.config import make_config
from vfeel.harness.experiments import generate
from vfeel.protocol import run_scheme

cfg = make_config({"train_per_class": 24, "test_per_class": 8, "iterations": 300},
                  profile="reduced")
ds = generate(cfg, progress=lambda i: print(f"\rsample {i}/160", end="", flush=True))
print(f"\ntrain {ds.train_x.shape}, test {ds.test_x.shape}")

for scheme in ("ed-1", "ed-2", "ed-3", "vfl-a-ewa", "vfl-b-cat", "cl"):
    res = run_scheme(scheme, ds, cfg.train_config(seed=0), cfg.isac())
    last = res.history[-1]
    print(f"{scheme:10s} accuracy {last.test_accuracy:.3f}  "
          f"link traffic {last.cumulative_bits / 8e6:7.1f} MB  "
          f"airtime {last.cumulative_seconds:8.1f} s  "
          f"loss {res.losses[:20].mean():.2f} -> {res.losses[-20:].mean():.2f}")
