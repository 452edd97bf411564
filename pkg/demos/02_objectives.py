"""
Surrogate objectives on one group
=================================

Group-relative advantages, then the same four responses scored by the
GRPO, sequence-level and KPO surrogates.
"""

import numpy as np

from ratio_forge import (
    GRPO_CLIP,
    KPO_CLIP,
    KalmanParams,
    group_relative_advantage,
    grpo_objective,
    kalman_filter_sequence,
    kpo_objective,
    sequence_level_objective,
    to_ratio_space,
)

rng = np.random.default_rng(0)

# binary verifier scores for a group of four responses
adv = group_relative_advantage([1, 0, 0, 1])
print("advantages:", adv.per_response)

# an all-equal group carries no signal
print("degenerate group:", group_relative_advantage([1, 1, 1, 1]).degenerate)

# off-policy log-ratios: small drift plus token noise
log_ratios = [0.02 + rng.normal(0, 0.3, size=n) for n in (40, 25, 60, 33)]
group = [(log_ratios, adv)]

grpo = grpo_objective(group, GRPO_CLIP)
seq = sequence_level_objective(group)
print(f"grpo       loss {grpo.loss:+.4f}  clip fraction {grpo.clip_fraction:.3f}")
print(f"seq_level  loss {seq.loss:+.4f}  clip fraction {seq.clip_fraction:.3f}")

# KPO feeds filtered ratios into the same clipped form, with a very narrow band
filtered = [to_ratio_space(kalman_filter_sequence(z, KalmanParams())) for z in log_ratios]
for mode in ("clipped", "unclipped"):
    rep = kpo_objective([(filtered, adv)], mode, KPO_CLIP)
    print(f"kpo {mode:9s} loss {rep.loss:+.4f}  clip fraction {rep.clip_fraction:.3f}")

# on-policy every ratio is 1 and all objectives reduce to the mean advantage
on = [(list(np.zeros((4, 10))), adv)]
print("on-policy grpo loss:", grpo_objective(on).loss, " mean advantage:", adv.per_response.mean())
