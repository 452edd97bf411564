import math
from dataclasses import replace

import numpy as np
import pytest

from ratio_forge.errors import BoundaryTokenError, DivergenceError, InputError, ParameterError, StaleLogProbError
from ratio_forge.objectives import GRPO_CLIP, KPO_CLIP
from ratio_forge.toy_sim import (
    GRADIENT_MODES,
    METHODS,
    ToyBatch,
    ToyPolicy,
    TrainConfig,
    analytic_gradient,
    central_difference,
    collect_batch,
    default_clip,
    finite_difference_check,
    max_relative_error,
    minibatch_objective,
    random_offpolicy_batch,
    recompute_logp,
    run_training,
    sample_group,
    verifier_score,
)


def rng(seed=0):
    return np.random.default_rng(seed)


def checked(policy_batch_fn, seed, cfg, tries=50):
    """Run the FD check, moving to a new seed on boundary tokens."""
    for k in range(tries):
        policy, batch = policy_batch_fn(seed + 1000 * k, cfg)
        try:
            return finite_difference_check(policy, cfg, batch)
        except BoundaryTokenError:
            continue
    raise AssertionError("no boundary-free batch found")


# --- ToyPolicy ------------------------------------------------------------

def test_policy_rows_normalized():
    p = ToyPolicy(6, 2)
    p.logits = rng().normal(size=p.logits.shape) * 3
    assert np.allclose(np.exp(p.log_probs()).sum(axis=1), 1.0, atol=1e-12)
    assert p.num_contexts == 6 * 7 * 7


def test_policy_validation():
    with pytest.raises(ParameterError):
        ToyPolicy(1)
    with pytest.raises(ParameterError):
        ToyPolicy(4, eos_token=4)
    with pytest.raises(ParameterError):
        ToyPolicy(4, logits=np.zeros((3, 3)))


def test_context_ids_use_history():
    p = ToyPolicy(8, 1)
    ids = p.context_ids(np.array([3, 5, 2]), prompt=1)
    assert ids[0] == p.context_id(1, [])
    assert ids[2] == p.context_id(1, [3, 5])
    assert ids[2] == p.context_id(1, [5])


def test_entropy_bounds():
    p = ToyPolicy(8)
    assert np.allclose(p.entropy(), math.log(8))
    p.logits[:, 0] = 50
    assert np.all(p.entropy() >= 0) and np.all(p.entropy() < 1e-12)


# --- sampling / verifier --------------------------------------------------

def test_deterministic_policy_identical_responses():
    p = ToyPolicy(8)
    p.logits[:, 3] = 1e3
    group = sample_group(p, 0, 4, 5, rng(1))
    assert all(t.tokens.tolist() == [3] * 5 for t in group)


def test_sampling_reproducible():
    p = ToyPolicy(8)
    p.logits = rng(3).normal(size=p.logits.shape)
    a = sample_group(p, 2, 8, 16, rng(11))
    b = sample_group(p, 2, 8, 16, rng(11))
    assert a == b
    assert all(np.array_equal(t.logp_new, t.logp_old) for t in a)


def test_uniform_unigram_frequencies():
    p = ToyPolicy(8, eos_token=7)
    p.logits[:, 7] = -np.inf  # never stop, so every slot is a uniform draw over 0..6
    group = sample_group(p, 0, 100, 1000, rng(5))
    tokens = np.concatenate([t.tokens for t in group])
    n = tokens.size
    freq = np.bincount(tokens, minlength=8)[:7] / n
    sigma = math.sqrt((1 / 7) * (6 / 7) / n)
    assert n == 100_000 and np.all(np.abs(freq - 1 / 7) < 3 * sigma * 1.5)


def test_sample_group_needs_two():
    with pytest.raises(ParameterError):
        sample_group(ToyPolicy(), 0, 1, 4, rng())


@pytest.mark.parametrize("tokens,target,expected", [([], 0, 1.0), ([3, 5], 0, 1.0), ([3, 5], 1, 0.0), ([3, 5, 7], 0, 1.0)])
def test_verifier(tokens, target, expected):
    assert verifier_score(tokens, target) == expected


# --- recompute_logp -------------------------------------------------------

def test_recompute_on_policy_and_uniform():
    p = ToyPolicy(8)
    p.logits = rng(4).normal(size=p.logits.shape)
    t = sample_group(p, 1, 2, 10, rng(4))[0]
    assert np.array_equal(recompute_logp(p, t, 1).logp_new, t.logp_old)
    u = recompute_logp(ToyPolicy(8), t, 1)
    assert np.allclose(u.logp_new, -math.log(8), atol=1e-15)


def test_recompute_rejects_bad_token():
    p = ToyPolicy(4)
    t = sample_group(ToyPolicy(8), 0, 2, 5, rng())[0]
    t = replace(t, tokens=np.full(t.tokens.size, 6))
    with pytest.raises(InputError):
        recompute_logp(p, t, 0)


# --- gradients ------------------------------------------------------------

def test_central_difference_quadratic():
    a = rng(2).normal(size=(3, 4))
    x0 = rng(3).normal(size=(3, 4))
    num = central_difference(lambda x: a * x ** 2, x0, 1e-5)
    assert max_relative_error((2 * a * x0).ravel(), num.ravel()) < 1e-10


def test_on_policy_grpo_is_vanilla_policy_gradient():
    cfg = TrainConfig(method="grpo")
    policy = ToyPolicy(8)
    policy.logits = rng(9).normal(size=policy.logits.shape) * 0.5
    batch = collect_batch(policy, cfg, 0).split(8)[0]
    grad = analytic_gradient(policy, batch, cfg)
    probs = np.exp(policy.log_probs())
    expected = np.zeros_like(grad)
    for trace, prompt, a in zip(batch.traces, batch.prompts, batch.advantages):
        ctx = policy.context_ids(trace.tokens, prompt)
        w = 1.0 / (trace.num_valid * len(batch))
        for c, y in zip(ctx, trace.tokens):
            expected[c] -= w * a * probs[c]
            expected[c, y] += w * a
    assert np.allclose(grad, expected, atol=1e-14)


@pytest.mark.parametrize("method", METHODS)
def test_zero_advantages_zero_gradient(method):
    cfg = TrainConfig(method=method)
    policy, batch = random_offpolicy_batch(1, cfg)
    batch = ToyBatch(batch.traces, batch.prompts, np.zeros(len(batch)))
    assert not analytic_gradient(policy, batch, cfg).any()


def test_stale_logp_detected():
    cfg = TrainConfig(method="grpo")
    policy, batch = random_offpolicy_batch(2, cfg)
    policy.logits = policy.logits + 0.1 * rng(2).normal(size=policy.logits.shape)
    with pytest.raises(StaleLogProbError):
        analytic_gradient(policy, batch, cfg)


@pytest.mark.parametrize("method", METHODS)
@pytest.mark.parametrize("mode", GRADIENT_MODES)
def test_finite_difference_agreement(method, mode):
    cfg = TrainConfig(method=method, gradient_mode=mode)
    for seed in range(3):
        assert checked(random_offpolicy_batch, seed, cfg) < 1e-4


def test_fd_on_policy_grpo():
    cfg = TrainConfig(method="grpo")

    def on_policy(seed, cfg):
        policy = ToyPolicy(8)
        policy.logits = np.random.default_rng(seed).normal(size=policy.logits.shape) * 0.5
        return policy, collect_batch(policy, cfg, seed).split(8)[0]

    assert checked(on_policy, 0, cfg) < 1e-4


def test_boundary_token_detected():
    cfg = TrainConfig(method="grpo", clip=GRPO_CLIP)
    policy, batch = random_offpolicy_batch(0, cfg)
    t = batch.traces[0]
    shifted = replace(t, logp_old=t.logp_new - math.log(1.2) * t.mask)
    batch = batch.with_traces((shifted,) + batch.traces[1:])
    with pytest.raises(BoundaryTokenError):
        finite_difference_check(policy, cfg, batch)


def test_loss_identical_across_gradient_modes():
    for method in ("kpo_clipped", "kpo_unclipped"):
        a = TrainConfig(method=method, gradient_mode="through_filter")
        b = replace(a, gradient_mode="detached")
        policy, batch = random_offpolicy_batch(5, a)
        assert minibatch_objective(policy, batch, a).loss == minibatch_objective(policy, batch, b).loss


# --- config ---------------------------------------------------------------

def test_default_clips():
    assert default_clip("grpo") == GRPO_CLIP
    assert default_clip("kpo_clipped") == KPO_CLIP
    assert TrainConfig(method="grpo").clip_config == GRPO_CLIP


@pytest.mark.parametrize("kwargs", [
    dict(method="ppo"), dict(gradient_mode="both"), dict(batch_size=30), dict(group_size=1),
    dict(learning_rate=-1.0), dict(minibatch_size=0),
])
def test_config_rejects(kwargs):
    with pytest.raises(ParameterError):
        TrainConfig(**kwargs)


# --- training -------------------------------------------------------------

SMALL = dict(batch_size=16, minibatch_size=4, group_size=4, max_len=8, steps=4)


def test_training_deterministic():
    cfg = TrainConfig(seed=3, **SMALL)
    assert run_training(cfg).records == run_training(cfg).records


def test_training_zero_steps():
    assert len(run_training(TrainConfig(steps=0))) == 0


def test_training_zero_lr_flat():
    cfg = TrainConfig(learning_rate=0.0, method="grpo", seed=1, **SMALL)
    m = run_training(cfg)
    assert np.all(m.clip_fraction == 0)
    # advantages are centered per group, so the on-policy surrogate is ~0
    assert np.all(np.abs(m.pg_loss) < 1e-12)
    assert np.allclose(m.entropy, math.log(8), rtol=0, atol=1e-12)


def test_training_metric_bounds():
    for method in METHODS:
        m = run_training(TrainConfig(method=method, seed=2, learning_rate=0.5, **SMALL))
        assert np.all((m.reward_mean >= 0) & (m.reward_mean <= 1))
        assert np.all((m.entropy >= 0) & (m.entropy <= math.log(8) + 1e-12))
        assert np.all((m.clip_fraction >= 0) & (m.clip_fraction <= 1))


def test_first_minibatch_on_policy():
    cfg = TrainConfig(seed=4, **SMALL)
    policy = ToyPolicy(8)
    policy.logits = rng(4).normal(size=policy.logits.shape)
    first = collect_batch(policy, cfg, 0).split(cfg.minibatch_size)[0].refreshed(policy)
    for t in first.traces:
        assert np.all(np.abs(t.logp_new - t.logp_old) <= 1e-12)


def test_thread_map_matches_serial():
    from concurrent.futures import ThreadPoolExecutor

    cfg = TrainConfig(seed=6, **SMALL)
    with ThreadPoolExecutor(4) as pool:
        threaded = run_training(cfg, map_fn=pool.map)
    assert threaded.records == run_training(cfg).records


def test_divergence_guard():
    cfg = TrainConfig(method="kpo_unclipped", learning_rate=1e9, seed=0, **SMALL)
    with pytest.raises(DivergenceError) as info:
        run_training(cfg)
    assert info.value.metrics is not None
    assert len(info.value.metrics) == info.value.step
