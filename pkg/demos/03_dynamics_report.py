"""
Token dynamics before and after filtering
=========================================

Off-policy structure statistics on 100 synthetic responses, plus the
window-frequency curve as an SVG.
"""

from pathlib import Path

import numpy as np

from ratio_forge import KPO_CLIP, KalmanParams, classify_token_states, dynamics_report, kalman_filter_sequence
from ratio_forge.diagnostics import window_offpolicy_frequency
from ratio_forge.svg import write_line_chart
from ratio_forge.toy_sim import drift_log_ratios

out_dir = Path(__file__).with_name("output")
out_dir.mkdir(exist_ok=True)

raw, filtered = [], []
for seed in range(100):
    z, _ = drift_log_ratios(seed)
    raw.append(np.exp(z))
    filtered.append(np.exp(kalman_filter_sequence(z, KalmanParams()).rho_post))

rep = dynamics_report(raw, filtered, KPO_CLIP)
rows = [
    ("up / down / on", "proportions"),
    ("mean run length", "mean_run_lengths"),
    ("switch frequency", "switch_frequency"),
    ("low-frequency ratio", "lfr"),
    ("global variance", "global_variance"),
    ("windowed variance", "windowed_local_variance"),
]
print(f"{'':22s}{'before':>28s}{'after':>28s}")
for label, attr in rows:
    b, a = getattr(rep.before, attr), getattr(rep.after, attr)
    fmt = (lambda v: " ".join(f"{x:.3g}" for x in v)) if isinstance(b, tuple) else (lambda v: f"{v:.3g}")
    print(f"{label:22s}{fmt(b):>28s}{fmt(a):>28s}")

# the per-window off-policy frequency, averaged over responses
curves = {}
for label, series in (("raw", raw), ("filtered", filtered)):
    wf = window_offpolicy_frequency([classify_token_states(r, KPO_CLIP) for r in series])
    curves[label] = (np.arange(wf.mean.size), wf.mean)
write_line_chart(out_dir / "window_frequency.svg", curves, "Off-policy frequency per 50-token window",
                 "window index", "(up + down) / 50")
print("wrote", out_dir / "window_frequency.svg")
