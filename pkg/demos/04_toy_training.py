"""
Training stability on the toy task
==================================

GRPO and KPO-clipped trained with four minibatches per sampled batch, so
three of every four updates are off-policy.  The policy-gradient loss of
GRPO oscillates far more.
"""

from pathlib import Path

import numpy as np

from ratio_forge import TrainConfig, run_training
from ratio_forge.svg import write_line_chart
from ratio_forge.trace_io import write_report_csv

out_dir = Path(__file__).with_name("output")
out_dir.mkdir(exist_ok=True)

runs = {}
for method in ("grpo", "kpo_clipped", "kpo_unclipped", "seq_level"):
    cfg = TrainConfig(method=method, seed=42, steps=300)
    runs[method] = run_training(cfg)
    m = runs[method]
    write_report_csv(out_dir / f"metrics_{method}.csv", m)
    print(f"{method:14s} pg_loss var(50-300) {np.var(m.pg_loss[50:]):.2e}  "
          f"reward {m.reward_mean[:50].mean():.3f} -> {m.reward_mean[-50:].mean():.3f}  "
          f"clip fraction {m.clip_fraction[-50:].mean():.3f}")

for panel in ("reward_mean", "entropy", "clip_fraction", "pg_loss"):
    series = {name: (m.column("step"), m.column(panel)) for name, m in runs.items()}
    write_line_chart(out_dir / f"{panel}.svg", series, panel.replace("_", " "), "step", panel)
print("wrote CSVs and SVG panels to", out_dir)
