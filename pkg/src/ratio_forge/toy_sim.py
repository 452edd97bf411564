"""Desk-scale autoregressive policy optimization.

A tabular softmax policy emits tokens conditioned on a prompt (the target
residue) and the last ``context_order`` tokens.  A response is rewarded 1
when the sum of its non-EOS tokens is congruent to the target modulo
``vocab_size``.  Training follows the rollout/minibatch structure of large
RL fine-tuning runs: one batch is sampled under the frozen behavior policy,
split into minibatches, and each minibatch takes a gradient-ascent step,
so only the first minibatch is on-policy.

Gradients are analytic.  Every method reduces to
``sum_t coef_t * grad log pi(y_t | c_t)``; the through-filter KPO variant
first maps the per-token coefficients back through the unrolled Kalman
weights.  `finite_difference_check` verifies them by central differences.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import BoundaryTokenError, DivergenceError, InputError, ParameterError, StaleLogProbError
from .objectives import (
    GRPO_CLIP,
    KPO_CLIP,
    SEQ_LEVEL_CLIP,
    SEQ_MEAN_TOKEN_MEAN,
    TOKEN_MEAN,
    ClipConfig,
    ObjectiveReport,
    group_relative_advantage,
    pg_coefficient,
    surrogate_objective,
)
from .ratio_filter import (
    KalmanParams,
    TokenTrace,
    filter_weights,
    kalman_filter_sequence,
    to_ratio_space,
)

__all__ = [
    "METHODS",
    "GRADIENT_MODES",
    "ToyPolicy",
    "ToyTask",
    "ToyBatch",
    "TrainConfig",
    "StepRecord",
    "TrainMetrics",
    "default_clip",
    "verifier_score",
    "sample_group",
    "recompute_logp",
    "minibatch_objective",
    "analytic_gradient",
    "central_difference",
    "finite_difference_check",
    "random_offpolicy_batch",
    "run_training",
    "drift_log_ratios",
    "drift_traces",
]

METHODS = ("grpo", "seq_level", "kpo_clipped", "kpo_unclipped")
GRADIENT_MODES = ("through_filter", "detached")
DIVERGENCE_LIMIT = 1e6


def default_clip(method):
    """Clip band each method uses unless configured otherwise."""
    if method == "grpo":
        return GRPO_CLIP
    if method == "seq_level":
        return SEQ_LEVEL_CLIP
    if method in ("kpo_clipped", "kpo_unclipped"):
        return KPO_CLIP
    raise ParameterError(f"unknown method {method!r}; expected one of {METHODS}")


def _log_softmax(logits):
    m = logits.max(axis=-1, keepdims=True)
    shifted = logits - m
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


@dataclass(eq=False)
class ToyPolicy:
    """Tabular autoregressive softmax policy.

    ``logits`` has one row per context.  A context is the prompt id plus the
    last ``context_order`` tokens, with positions before the start of the
    response encoded as a BOS symbol (id ``vocab_size``).
    """

    vocab_size: int = 8
    context_order: int = 1
    logits: np.ndarray = None
    eos_token: int = None
    num_prompts: int = None

    def __post_init__(self):
        if self.vocab_size < 2:
            raise ParameterError("vocab_size must be >= 2")
        if self.context_order < 0:
            raise ParameterError("context_order must be >= 0")
        if self.eos_token is None:
            self.eos_token = self.vocab_size - 1
        if not 0 <= self.eos_token < self.vocab_size:
            raise ParameterError(f"eos_token {self.eos_token} outside vocabulary")
        if self.num_prompts is None:
            self.num_prompts = self.vocab_size
        shape = (self.num_contexts, self.vocab_size)
        if self.logits is None:
            self.logits = np.zeros(shape)
        else:
            self.logits = np.array(self.logits, dtype=np.float64)
            if self.logits.shape != shape:
                raise ParameterError(f"logits shape {self.logits.shape}, expected {shape}")

    @property
    def num_contexts(self):
        return self.num_prompts * (self.vocab_size + 1) ** self.context_order

    @property
    def num_params(self):
        return self.num_contexts * self.vocab_size

    def copy(self):
        return replace(self, logits=self.logits.copy())

    def context_id(self, prompt, history):
        """Row index for ``prompt`` after emitting ``history`` (a token list)."""
        base = self.vocab_size + 1
        k = self.context_order
        recent = list(history[-k:]) if k else []
        recent = [self.vocab_size] * (k - len(recent)) + recent
        idx = 0
        for tok in recent:
            idx = idx * base + tok
        return prompt * base**k + idx

    def context_ids(self, tokens, prompt):
        """Context row in force before each token of a response."""
        if not 0 <= prompt < self.num_prompts:
            raise InputError(f"prompt {prompt} outside [0, {self.num_prompts})")
        tokens = [int(t) for t in tokens]
        return np.array([self.context_id(prompt, tokens[:t]) for t in range(len(tokens))], dtype=np.int64)

    def log_probs(self):
        return _log_softmax(self.logits)

    def entropy(self, contexts=None):
        """Conditional entropy (nats) of each requested context row."""
        lp = self.log_probs() if contexts is None else _log_softmax(self.logits[contexts])
        return -(np.exp(lp) * lp).sum(axis=-1)


@dataclass(frozen=True)
class ToyTask:
    """Modular-sum verifier: success iff the sum of non-EOS tokens == target (mod vocab)."""

    vocab_size: int = 8
    eos_token: int = 7


def verifier_score(response, target, task: ToyTask = ToyTask()) -> float:
    content = [int(t) for t in response if int(t) != task.eos_token]
    return 1.0 if sum(content) % task.vocab_size == target % task.vocab_size else 0.0


def sample_group(policy: ToyPolicy, prompt, group_size, max_len, rng, task=None, group_id=None):
    """Sample ``group_size`` responses for one prompt under ``policy``.

    Sampling stops at EOS (kept in the trace) or after ``max_len`` tokens.
    The returned traces have ``logp_new == logp_old`` and carry their
    verifier score.
    """
    if group_size < 2:
        raise ParameterError(f"group size must be >= 2, got {group_size}")
    task = task or ToyTask(policy.vocab_size, policy.eos_token)
    group_id = f"p{prompt}" if group_id is None else str(group_id)
    logp_table = policy.log_probs()
    cdf = np.cumsum(np.exp(logp_table), axis=-1)
    traces = []
    for i in range(group_size):
        tokens, logps = [], []
        while len(tokens) < max_len:
            ctx = policy.context_id(prompt, tokens)
            row = cdf[ctx]
            tok = int(np.searchsorted(row, rng.random() * row[-1], side="right"))
            tok = min(tok, policy.vocab_size - 1)
            tokens.append(tok)
            logps.append(logp_table[ctx, tok])
            if tok == policy.eos_token:
                break
        traces.append(
            TokenTrace(
                sample_id=f"{group_id}/{i}",
                tokens=np.array(tokens, dtype=np.int64),
                logp_old=np.array(logps),
                logp_new=np.array(logps),
                mask=np.ones(len(tokens), dtype=bool),
                score=verifier_score(tokens, prompt, task),
                group_id=group_id,
            )
        )
    return traces


def _token_logp(policy, trace, prompt, log_probs=None):
    if np.any((trace.tokens < 0) | (trace.tokens >= policy.vocab_size)):
        raise InputError(f"trace {trace.sample_id}: token id outside vocabulary of size {policy.vocab_size}")
    lp = policy.log_probs() if log_probs is None else log_probs
    ctx = policy.context_ids(trace.tokens, prompt)
    return ctx, lp[ctx, trace.tokens]


def recompute_logp(policy: ToyPolicy, trace: TokenTrace, prompt, log_probs=None) -> TokenTrace:
    """Return a copy of ``trace`` whose ``logp_new`` is evaluated under ``policy``."""
    _, lp = _token_logp(policy, trace, prompt, log_probs)
    return replace(trace, logp_new=np.where(trace.mask, lp, trace.logp_new))


@dataclass(frozen=True, eq=False)
class ToyBatch:
    traces: tuple
    prompts: tuple
    advantages: np.ndarray

    def __len__(self):
        return len(self.traces)

    def split(self, size):
        """Consecutive minibatches of ``size`` responses, in batch order."""
        return [
            ToyBatch(self.traces[i : i + size], self.prompts[i : i + size], self.advantages[i : i + size])
            for i in range(0, len(self.traces), size)
        ]

    def with_traces(self, traces):
        return ToyBatch(tuple(traces), self.prompts, self.advantages)

    def refreshed(self, policy):
        lp = policy.log_probs()
        return self.with_traces(recompute_logp(policy, t, p, lp) for t, p in zip(self.traces, self.prompts))


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 32
    minibatch_size: int = 8
    group_size: int = 8
    max_len: int = 32
    method: str = "kpo_clipped"
    kalman: KalmanParams = field(default_factory=KalmanParams)
    clip: ClipConfig | None = None
    learning_rate: float = 0.05
    steps: int = 300
    seed: int = 0
    gradient_mode: str = "through_filter"
    vocab_size: int = 8
    context_order: int = 1
    aggregation: str = SEQ_MEAN_TOKEN_MEAN

    def __post_init__(self):
        if self.method not in METHODS:
            raise ParameterError(f"unknown method {self.method!r}; expected one of {METHODS}")
        if self.gradient_mode not in GRADIENT_MODES:
            raise ParameterError(f"unknown gradient_mode {self.gradient_mode!r}; expected one of {GRADIENT_MODES}")
        if self.aggregation not in (SEQ_MEAN_TOKEN_MEAN, TOKEN_MEAN):
            raise ParameterError(f"unknown aggregation {self.aggregation!r}")
        for name in ("batch_size", "minibatch_size", "group_size"):
            if getattr(self, name) < 1:
                raise ParameterError(f"{name} must be >= 1")
        if self.group_size < 2:
            raise ParameterError("group_size must be >= 2")
        if self.batch_size % self.minibatch_size:
            raise ParameterError("batch_size must be divisible by minibatch_size")
        if self.batch_size % self.group_size:
            raise ParameterError("batch_size must be divisible by group_size")
        if self.max_len < 1 or self.steps < 0:
            raise ParameterError("max_len must be >= 1 and steps >= 0")
        if not (math.isfinite(self.learning_rate) and self.learning_rate >= 0):
            raise ParameterError("learning_rate must be finite and >= 0")

    @property
    def clip_config(self):
        return self.clip if self.clip is not None else default_clip(self.method)


def _method_clip(config):
    return None if config.method == "kpo_unclipped" else config.clip_config


def _weights(n_resp, lengths, total, aggregation):
    if aggregation == SEQ_MEAN_TOKEN_MEAN:
        return [1.0 / (n * n_resp) if n else 0.0 for n in lengths]
    return [1.0 / total if total else 0.0] * len(lengths)


def _effective_ratios(z, z_anchor, config):
    """Per-token ratio seen by the surrogate, for valid tokens only.

    ``z`` are log-ratios under the evaluated parameters, ``z_anchor`` under
    the anchor parameters that define stopped-gradient quantities.
    """
    method = config.method
    if method == "grpo":
        return np.exp(z)
    drift = np.exp(z - z_anchor)
    if method == "seq_level":
        return math.exp(float(z_anchor.mean())) * drift if z.size else z
    if config.gradient_mode == "detached":
        return to_ratio_space(kalman_filter_sequence(z_anchor, config.kalman)) * drift
    return to_ratio_space(kalman_filter_sequence(z, config.kalman))


def minibatch_objective(policy: ToyPolicy, batch: ToyBatch, config: TrainConfig) -> ObjectiveReport:
    """Surrogate value of a minibatch under the current policy.

    Uses ``logp_new`` as stored in the traces; refresh them with
    `ToyBatch.refreshed` after every parameter update.
    """
    ratios = []
    for trace in batch.traces:
        z = (trace.logp_new - trace.logp_old)[trace.mask]
        ratios.append(_effective_ratios(z, z, config))
    return surrogate_objective(ratios, list(batch.advantages), _method_clip(config), config.aggregation)


def _check_fresh(policy, batch, log_probs):
    for trace, prompt in zip(batch.traces, batch.prompts):
        ctx, lp = _token_logp(policy, trace, prompt, log_probs)
        if not np.allclose(lp[trace.mask], trace.logp_new[trace.mask], rtol=0.0, atol=1e-12):
            raise StaleLogProbError(
                f"trace {trace.sample_id}: logp_new does not match the current policy; recompute it first"
            )
        yield ctx


def analytic_gradient(policy: ToyPolicy, batch: ToyBatch, config: TrainConfig) -> np.ndarray:
    """Gradient of the minibatch surrogate with respect to ``policy.logits``.

    Raises `StaleLogProbError` if any trace's ``logp_new`` was computed under
    different parameters.
    """
    log_probs = policy.log_probs()
    probs = np.exp(log_probs)
    grad = np.zeros_like(policy.logits)
    clip = _method_clip(config)
    lengths = [t.num_valid for t in batch.traces]
    weights = _weights(len(batch), lengths, sum(lengths), config.aggregation)
    contexts = list(_check_fresh(policy, batch, log_probs))
    for trace, ctx, adv, w in zip(batch.traces, contexts, batch.advantages, weights):
        valid = trace.mask
        if not valid.any():
            continue
        z = (trace.logp_new - trace.logp_old)[valid]
        ratios = _effective_ratios(z, z, config)
        coef = pg_coefficient(ratios, adv, clip)
        if config.method.startswith("kpo") and config.gradient_mode == "through_filter":
            # d rho_t / d z_s = w[t, s]; push token coefficients back onto observations
            fw = filter_weights(len(z), config.kalman)
            coef = fw.obs_weights.T @ coef
        c, y = ctx[valid], trace.tokens[valid]
        np.add.at(grad, c, -(w * coef)[:, None] * probs[c])
        np.add.at(grad, (c, y), w * coef)
    return grad


def _contributions(logits, policy, batch, config, anchor_log_probs):
    """Weighted per-token surrogate terms at ``logits`` (concatenated)."""
    lp_table = _log_softmax(logits)
    clip = _method_clip(config)
    lengths = [t.num_valid for t in batch.traces]
    weights = _weights(len(batch), lengths, sum(lengths), config.aggregation)
    out = []
    for trace, prompt, adv, w in zip(batch.traces, batch.prompts, batch.advantages, weights):
        valid = trace.mask
        ctx = policy.context_ids(trace.tokens, prompt)[valid]
        tok = trace.tokens[valid]
        old = trace.logp_old[valid]
        z = lp_table[ctx, tok] - old
        z_anchor = anchor_log_probs[ctx, tok] - old
        r = _effective_ratios(z, z_anchor, config)
        if clip is None:
            terms = r * adv
        else:
            terms = np.minimum(r * adv, np.clip(r, clip.lower, clip.upper) * adv)
        out.append(w * terms)
    return np.concatenate(out) if out else np.zeros(0)


def central_difference(func, x0, h=1e-5, indices=None):
    """Central-difference gradient of ``sum(func(x))`` at ``x0``.

    ``func`` may return a scalar or an array of additive pieces; differences
    are taken piecewise before summing, which keeps round-off proportional
    to the pieces that actually change.
    """
    x0 = np.asarray(x0, dtype=np.float64)
    flat = x0.ravel()
    idx = range(flat.size) if indices is None else indices
    grad = np.zeros(flat.size)
    for j in idx:
        xp = flat.copy()
        xm = flat.copy()
        xp[j] += h
        xm[j] -= h
        diff = np.asarray(func(xp.reshape(x0.shape))) - np.asarray(func(xm.reshape(x0.shape)))
        grad[j] = np.sum(diff) / (2.0 * h)
    return grad.reshape(x0.shape)


def max_relative_error(analytic, numeric, floor=1e-8):
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    if analytic.size == 0:
        return 0.0
    return float(np.max(np.abs(analytic - numeric) / (np.abs(numeric) + floor)))


def _boundary_margin_check(policy, batch, config, h):
    clip = _method_clip(config)
    if clip is None:
        return
    for trace in batch.traces:
        z = (trace.logp_new - trace.logp_old)[trace.mask]
        r = _effective_ratios(z, z, config)
        margin = 10.0 * h * np.maximum(r, 1.0)
        near = (np.abs(r - clip.lower) < margin) | (np.abs(r - clip.upper) < margin)
        if near.any():
            raise BoundaryTokenError(f"trace {trace.sample_id}: ratio within {margin.max():.1e} of a clip boundary")


def finite_difference_check(policy: ToyPolicy, config: TrainConfig, batch: ToyBatch, h=1e-5,
                            indices=None, return_gradients=False):
    """Max relative error between analytic and central-difference gradients.

    By default every parameter of every context the batch visits is
    differenced; parameters of unvisited contexts cannot affect the loss, so
    their analytic gradient must be exactly zero (any nonzero entry makes
    the error infinite).  Raises `BoundaryTokenError` when a ratio sits too
    close to a clip boundary for differences to be meaningful.
    """
    batch = batch.refreshed(policy)
    _boundary_margin_check(policy, batch, config, h)
    analytic = analytic_gradient(policy, batch, config)
    anchor = policy.log_probs()
    if indices is None:
        visited = set()
        for trace, prompt in zip(batch.traces, batch.prompts):
            visited.update(policy.context_ids(trace.tokens, prompt)[trace.mask].tolist())
        indices = [c * policy.vocab_size + k for c in sorted(visited) for k in range(policy.vocab_size)]
        untouched = np.ones(policy.num_contexts, dtype=bool)
        untouched[sorted(visited)] = False
        if np.any(analytic[untouched] != 0.0):
            return (math.inf, analytic, None) if return_gradients else math.inf
    indices = list(indices)
    numeric = central_difference(
        lambda theta: _contributions(theta, policy, batch, config, anchor), policy.logits, h, indices
    )
    err = max_relative_error(analytic.ravel()[indices], numeric.ravel()[indices])
    return (err, analytic, numeric) if return_gradients else err


def _group_seed(seed, step, group):
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(step, group)))


def collect_batch(policy: ToyPolicy, config: TrainConfig, step: int, map_fn=map) -> ToyBatch:
    """Sample one training batch (``batch_size / group_size`` prompts)."""
    n_groups = config.batch_size // config.group_size
    prompt_rng = np.random.default_rng(np.random.SeedSequence(entropy=config.seed, spawn_key=(step,)))
    prompts = prompt_rng.integers(policy.num_prompts, size=n_groups).tolist()

    def one(g):
        return sample_group(policy, prompts[g], config.group_size, config.max_len,
                            _group_seed(config.seed, step, g), group_id=f"s{step}g{g}p{prompts[g]}")

    groups = list(map_fn(one, range(n_groups)))
    traces, batch_prompts, advantages = [], [], []
    for prompt, group in zip(prompts, groups):
        adv = group_relative_advantage([t.score for t in group])
        traces.extend(group)
        batch_prompts.extend([prompt] * len(group))
        advantages.extend(adv.per_response.tolist())
    return ToyBatch(tuple(traces), tuple(batch_prompts), np.array(advantages))


def random_offpolicy_batch(seed, config: TrainConfig = TrainConfig(), init_scale=0.5, drift=0.05, size=None):
    """A policy and an off-policy minibatch for gradient checks.

    Samples one group under random logits, then perturbs the logits by
    ``drift``-scaled noise so that ratios differ from 1.  Returns
    ``(policy, batch)`` with ``logp_new`` evaluated under the perturbed policy.
    """
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(10_007,)))
    policy = ToyPolicy(config.vocab_size, config.context_order)
    policy.logits = init_scale * rng.standard_normal(policy.logits.shape)
    size = size or config.minibatch_size
    traces, prompts, advantages = [], [], []
    while len(traces) < size:
        prompt = int(rng.integers(policy.num_prompts))
        group = sample_group(policy, prompt, config.group_size, config.max_len, rng,
                             group_id=f"fd{seed}g{len(traces)}")
        scores = [t.score for t in group]
        if len(set(scores)) == 1:
            # synthetic scores keep every check informative
            scores = (rng.random(len(group)) < 0.5).astype(float)
            scores[0], scores[1] = 1.0, 0.0
            group = [replace(t, score=float(s)) for t, s in zip(group, scores)]
        adv = group_relative_advantage(scores)
        traces.extend(group)
        prompts.extend([prompt] * len(group))
        advantages.extend(adv.per_response.tolist())
    batch = ToyBatch(tuple(traces[:size]), tuple(prompts[:size]), np.array(advantages[:size]))
    policy.logits = policy.logits + drift * rng.standard_normal(policy.logits.shape)
    return policy, batch.refreshed(policy)


@dataclass(frozen=True)
class StepRecord:
    step: int
    reward_mean: float
    entropy: float
    clip_fraction: float
    pg_loss: float


@dataclass
class TrainMetrics:
    """Per-step training timeline; ``pg_loss`` is the negated surrogate."""

    records: list = field(default_factory=list)
    config: TrainConfig | None = None

    def __len__(self):
        return len(self.records)

    def column(self, name):
        return np.array([getattr(r, name) for r in self.records], dtype=np.float64)

    @property
    def pg_loss(self):
        return self.column("pg_loss")

    @property
    def reward_mean(self):
        return self.column("reward_mean")

    @property
    def entropy(self):
        return self.column("entropy")

    @property
    def clip_fraction(self):
        return self.column("clip_fraction")


def initial_policy(config: TrainConfig) -> ToyPolicy:
    return ToyPolicy(config.vocab_size, config.context_order)


def run_training(config: TrainConfig, policy: ToyPolicy | None = None, map_fn=map, callback=None) -> TrainMetrics:
    """Run ``config.steps`` training steps and return the metrics timeline.

    Each step samples a batch under the frozen behavior policy, then walks
    the minibatches in order: refresh ``logp_new``, evaluate the objective,
    take a gradient-ascent step.  Raises `DivergenceError` (carrying the
    partial timeline) if any logit exceeds the divergence limit.

    ``map_fn`` may parallelize group sampling; every group has its own
    random stream derived from ``(seed, step, group)``, so results do not
    depend on scheduling.
    """
    policy = initial_policy(config) if policy is None else policy.copy()
    metrics = TrainMetrics(config=config)
    for step in range(config.steps):
        behavior = policy.copy()
        batch = collect_batch(behavior, config, step, map_fn)
        losses, fractions, contexts = [], [], []
        for mb in batch.split(config.minibatch_size):
            mb = mb.refreshed(policy)
            report = minibatch_objective(policy, mb, config)
            grad = analytic_gradient(policy, mb, config)
            policy.logits = policy.logits + config.learning_rate * grad
            losses.append(-report.loss)
            fractions.append(report.clip_fraction)
            if not np.all(np.abs(policy.logits) <= DIVERGENCE_LIMIT):
                raise DivergenceError(
                    f"logits exceeded {DIVERGENCE_LIMIT:g} at step {step}", step=step, metrics=metrics
                )
        for trace, prompt in zip(batch.traces, batch.prompts):
            contexts.append(policy.context_ids(trace.tokens, prompt)[trace.mask])
        ctx = np.concatenate(contexts)
        record = StepRecord(
            step=step,
            reward_mean=float(np.mean([t.score for t in batch.traces])),
            entropy=float(policy.entropy(ctx).mean()) if ctx.size else 0.0,
            clip_fraction=float(np.mean(fractions)),
            pg_loss=float(np.mean(losses)),
        )
        metrics.records.append(record)
        if callback is not None:
            callback(record)
    return metrics


def drift_log_ratios(seed, length=2048, sigma=0.4, segments=(2, 6), level_scale=0.2):
    """Synthetic log-ratio series: piecewise-constant drift plus white noise.

    The number of constant segments is drawn uniformly from ``segments``
    (inclusive), change points uniformly without replacement, and segment
    levels from ``N(0, level_scale**2)``.  Returns ``(z, drift)``.
    """
    lo, hi = segments
    if length < 1 or not 1 <= lo <= hi or hi > length:
        raise ParameterError(f"need 1 <= segments <= length, got {segments} for length {length}")
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(20_011,)))
    k = int(rng.integers(lo, hi + 1))
    cuts = np.sort(rng.choice(np.arange(1, length), k - 1, replace=False)) if k > 1 else np.zeros(0, int)
    sizes = np.diff(np.concatenate(([0], cuts, [length])))
    drift = np.repeat(rng.normal(0.0, level_scale, k), sizes)
    return drift + rng.normal(0.0, sigma, length), drift


def drift_traces(num, length=2048, seed=0, **kwargs):
    """`TokenTrace` records whose log-ratios follow `drift_log_ratios`.

    ``logp_old`` is chosen so both log-probabilities stay <= 0; scores
    alternate 1, 0 so every pair of traces forms a usable group.
    """
    traces = []
    for i in range(num):
        z, _ = drift_log_ratios((seed, i), length, **kwargs)
        rng = np.random.default_rng(np.random.SeedSequence(entropy=(seed, i), spawn_key=(20_021,)))
        logp_old = -(rng.exponential(1.0, length) + np.maximum(z, 0.0))
        traces.append(TokenTrace(
            sample_id=f"drift{i}",
            tokens=rng.integers(0, 1000, length),
            logp_old=logp_old,
            logp_new=np.minimum(logp_old + z, 0.0),
            mask=np.ones(length, dtype=bool),
            score=float(i % 2 == 0),
            group_id=f"g{i // 2}",
        ))
    return traces
