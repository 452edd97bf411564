"""Clipped surrogate objectives for GRPO, sequence-level ratios and KPO.

All objectives are *maximized*.  Per-token terms follow the PPO form
``min(r*A, clip(r, 1-eps_lo, 1+eps_hi)*A)``; the methods differ only in
which ratio ``r`` they feed in:

* ``grpo``: raw token ratios ``exp(z_t)``;
* ``seq_level``: one geometric-mean ratio per response, gradient stopped;
* ``kpo``: Kalman-filtered ratios from `ratio_filter.to_ratio_space`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import InputError, ParameterError
from .ratio_filter import LogRatioSeries

__all__ = [
    "ClipConfig",
    "AdvantageSet",
    "ObjectiveReport",
    "GRPO_CLIP",
    "KPO_CLIP",
    "SEQ_LEVEL_CLIP",
    "AGGREGATIONS",
    "group_relative_advantage",
    "sequence_ratio_geometric",
    "clipped_surrogate",
    "clipped_surrogate_token",
    "pg_coefficient",
    "token_pg_coefficient",
    "aggregate",
    "surrogate_objective",
    "grpo_objective",
    "kpo_objective",
    "sequence_level_objective",
    "clip_fraction",
]

SEQ_MEAN_TOKEN_MEAN = "seq-mean-token-mean"
TOKEN_MEAN = "token-mean"
AGGREGATIONS = (SEQ_MEAN_TOKEN_MEAN, TOKEN_MEAN)


@dataclass(frozen=True)
class ClipConfig:
    """Asymmetric clip band ``[1 - eps_lo, 1 + eps_hi]``."""

    eps_lo: float
    eps_hi: float

    def __post_init__(self):
        lo, hi = float(self.eps_lo), float(self.eps_hi)
        if not (math.isfinite(lo) and math.isfinite(hi)):
            raise ParameterError("clip offsets must be finite")
        if lo < 0 or hi < 0:
            raise ParameterError(f"clip offsets must be >= 0, got ({lo}, {hi})")
        if 1.0 - lo <= 0:
            raise ParameterError(f"eps_lo={lo} makes the lower clip bound non-positive")
        object.__setattr__(self, "eps_lo", lo)
        object.__setattr__(self, "eps_hi", hi)

    @classmethod
    def symmetric(cls, eps):
        return cls(eps, eps)

    @property
    def lower(self):
        return 1.0 - self.eps_lo

    @property
    def upper(self):
        return 1.0 + self.eps_hi


GRPO_CLIP = ClipConfig(0.2, 0.2)
KPO_CLIP = ClipConfig(0.0003, 0.0004)
SEQ_LEVEL_CLIP = ClipConfig(0.0003, 0.0004)


@dataclass(frozen=True, eq=False)
class AdvantageSet:
    per_response: np.ndarray
    group_size: int
    degenerate: bool = False

    def __len__(self):
        return self.group_size


@dataclass(frozen=True, eq=False)
class ObjectiveReport:
    """Aggregated surrogate value plus the per-token pieces it came from.

    ``per_token_terms`` and ``clipped`` hold one array per response with
    the valid tokens only, in batch order.
    """

    loss: float
    per_token_terms: list
    clipped: list
    clip_fraction: float
    token_count: int
    aggregation: str = SEQ_MEAN_TOKEN_MEAN


def group_relative_advantage(scores) -> AdvantageSet:
    """Normalize verifier scores within a group: ``(s - mean) / std``.

    Uses the population standard deviation.  A group whose scores are all
    equal carries no learning signal; its advantages are 0 and
    ``degenerate`` is set.
    """
    s = np.asarray(scores, dtype=np.float64)
    if s.ndim != 1 or len(s) < 2:
        raise InputError(f"a group needs at least 2 scores, got {s.size}")
    if not np.all((s >= 0.0) & (s <= 1.0)):
        raise InputError("scores must lie in [0, 1]")
    sd = s.std()
    # exact ties, or spreads so small the std underflows to 0
    if sd == 0.0:
        return AdvantageSet(np.zeros(len(s)), len(s), degenerate=True)
    return AdvantageSet((s - s.mean()) / sd, len(s))


def sequence_ratio_geometric(z: LogRatioSeries) -> float:
    """Geometric mean of the token ratios of one response, ``exp(mean z)``."""
    if not isinstance(z, LogRatioSeries):
        z = LogRatioSeries(z)
    valid = z.valid_values
    if valid.size == 0:
        raise InputError("sequence ratio needs at least one valid token")
    return float(np.exp(valid.mean()))


def clipped_surrogate(ratios, advantages, cfg: ClipConfig):
    """Vectorized PPO term.

    Returns ``(terms, clipped)`` where ``clipped`` marks tokens whose clipped
    branch is strictly smaller.  Ties count as unclipped.
    """
    r = np.asarray(ratios, dtype=np.float64)
    a = np.broadcast_to(np.asarray(advantages, dtype=np.float64), r.shape)
    raw = r * a
    clipped_val = np.clip(r, cfg.lower, cfg.upper) * a
    clipped = clipped_val < raw
    return np.where(clipped, clipped_val, raw), clipped


def clipped_surrogate_token(ratio, advantage, cfg: ClipConfig):
    """Scalar form of `clipped_surrogate`; returns ``(term, clipped)``."""
    if not ratio > 0:
        raise InputError(f"ratio must be positive, got {ratio}")
    term, clipped = clipped_surrogate(ratio, advantage, cfg)
    return float(term), bool(clipped)


def pg_coefficient(ratios, advantages, cfg: ClipConfig | None):
    """Per-token factor multiplying ``grad log pi`` in the surrogate gradient.

    ``r*A`` where the unclipped branch is active, 0 where the clipped
    constant wins.  ``cfg=None`` means no clipping at all.
    """
    r = np.asarray(ratios, dtype=np.float64)
    a = np.broadcast_to(np.asarray(advantages, dtype=np.float64), r.shape)
    if cfg is None:
        return r * a
    _, clipped = clipped_surrogate(r, a, cfg)
    return np.where(clipped, 0.0, r * a)


def token_pg_coefficient(ratio, advantage, cfg: ClipConfig) -> float:
    if not ratio > 0:
        raise InputError(f"ratio must be positive, got {ratio}")
    return float(pg_coefficient(ratio, advantage, cfg))


def aggregate(per_sequence_terms, aggregation=SEQ_MEAN_TOKEN_MEAN) -> float:
    """Reduce per-response token terms to a scalar.

    ``seq-mean-token-mean`` averages tokens within each response, then
    averages responses; ``token-mean`` averages all tokens of the batch.
    Responses with no valid tokens are skipped.
    """
    terms = [np.asarray(t, dtype=np.float64) for t in per_sequence_terms]
    terms = [t for t in terms if t.size]
    if not terms:
        raise InputError("cannot aggregate an objective over zero valid tokens")
    if aggregation == SEQ_MEAN_TOKEN_MEAN:
        return float(np.mean([t.mean() for t in terms]))
    if aggregation == TOKEN_MEAN:
        return float(np.concatenate(terms).mean())
    raise ParameterError(f"unknown aggregation {aggregation!r}; expected one of {AGGREGATIONS}")


def surrogate_objective(ratios, advantages, cfg: ClipConfig | None, aggregation=SEQ_MEAN_TOKEN_MEAN):
    """Shared core of every objective.

    ``ratios`` is a list of per-response arrays holding valid tokens only and
    ``advantages`` one scalar per response.  ``cfg=None`` evaluates the
    unclipped ``r*A`` surrogate.
    """
    if len(ratios) == 0:
        raise InputError("empty batch")
    if len(ratios) != len(advantages):
        raise InputError(f"{len(ratios)} responses but {len(advantages)} advantages")
    terms, clipped = [], []
    for r, a in zip(ratios, advantages):
        r = np.asarray(r, dtype=np.float64)
        if np.any(~(r > 0)):
            raise InputError("ratios must be strictly positive")
        if cfg is None:
            terms.append(r * a)
            clipped.append(np.zeros(r.shape, dtype=bool))
        else:
            t, c = clipped_surrogate(r, a, cfg)
            terms.append(t)
            clipped.append(c)
    loss = aggregate(terms, aggregation)
    count = int(sum(t.size for t in terms))
    return ObjectiveReport(loss, terms, clipped, clip_fraction(clipped), count, aggregation)


def _flatten_groups(groups):
    responses, advantages = [], []
    for items, adv in groups:
        items = list(items)
        if len(items) != len(adv.per_response):
            raise InputError(f"group has {len(items)} responses but {len(adv.per_response)} advantages")
        responses.extend(items)
        advantages.extend(adv.per_response.tolist())
    if not responses:
        raise InputError("empty batch")
    return responses, advantages


def grpo_objective(groups, cfg: ClipConfig = GRPO_CLIP, aggregation=SEQ_MEAN_TOKEN_MEAN) -> ObjectiveReport:
    """Token-level clipped surrogate on raw ratios.

    ``groups`` is a sequence of ``(log_ratio_series_list, AdvantageSet)``.
    """
    responses, advantages = _flatten_groups(groups)
    ratios = [np.exp(_as_series(z).valid_values) for z in responses]
    return surrogate_objective(ratios, advantages, cfg, aggregation)


def sequence_level_objective(groups, cfg: ClipConfig = SEQ_LEVEL_CLIP, aggregation=SEQ_MEAN_TOKEN_MEAN):
    """Every token of a response uses the response's geometric-mean ratio.

    The shared ratio is treated as a constant (stopped gradient) by the
    simulator; here only the value matters.
    """
    responses, advantages = _flatten_groups(groups)
    ratios = []
    for z in responses:
        z = _as_series(z)
        ratios.append(np.full(int(z.mask.sum()), sequence_ratio_geometric(z)))
    return surrogate_objective(ratios, advantages, cfg, aggregation)


def kpo_objective(groups, mode="clipped", cfg: ClipConfig = KPO_CLIP, aggregation=SEQ_MEAN_TOKEN_MEAN):
    """Surrogate on Kalman-filtered ratios.

    ``groups`` is a sequence of ``(responses, AdvantageSet)`` where each
    response is either an array of filtered ratios (all valid) or a
    ``(ratios, mask)`` pair.  ``mode`` is ``"clipped"`` or ``"unclipped"``.
    """
    if mode not in ("clipped", "unclipped"):
        raise ParameterError(f"mode must be 'clipped' or 'unclipped', got {mode!r}")
    responses, advantages = _flatten_groups(groups)
    ratios = []
    for item in responses:
        if isinstance(item, tuple):
            values, mask = item
            values = np.asarray(values, dtype=np.float64)[np.asarray(mask, dtype=bool)]
        else:
            values = np.asarray(item, dtype=np.float64)
        if np.any(~(values > 0)):
            raise InputError("filtered ratios must be strictly positive")
        ratios.append(values)
    return surrogate_objective(ratios, advantages, cfg if mode == "clipped" else None, aggregation)


def clip_fraction(clipped: Sequence) -> float:
    """Fraction of valid tokens whose clipped branch was active."""
    flags = [np.asarray(c, dtype=bool) for c in clipped]
    total = sum(f.size for f in flags)
    if total == 0:
        raise InputError("clip fraction needs at least one valid token")
    return float(sum(int(f.sum()) for f in flags) / total)


def _as_series(z):
    return z if isinstance(z, LogRatioSeries) else LogRatioSeries(z)
