"""Causal scalar Kalman filtering of token-level log importance-sampling ratios.

Each response is treated as a left-to-right time series of observed
log-ratios ``z_t = log pi_new(y_t) - log pi_old(y_t)``.  A local-level
(random-walk) state-space model is filtered online::

    rho_t = rho_{t-1} + eta_t,   eta_t ~ N(0, q)
    z_t   = rho_t + eps_t,       eps_t ~ N(0, v)

The gains depend only on ``(q, v, p0)`` and the position, never on the data,
so the filter is a fixed causal linear operator on ``z``.  `filter_weights`
exposes that operator explicitly; the simulator uses it to push gradients
through the filter.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import NamedTuple

import numpy as np

from .errors import InputError, ParameterError, SaturationError, StructuralInputError

__all__ = [
    "TokenTrace",
    "LogRatioSeries",
    "KalmanParams",
    "FilteredSeries",
    "FilterWeights",
    "StepResult",
    "compute_log_ratios",
    "kalman_step",
    "kalman_filter_sequence",
    "filter_trace",
    "filter_weights",
    "steady_state",
    "to_ratio_space",
    "DEFAULT_SATURATION_BOUND",
]

DEFAULT_SATURATION_BOUND = 30.0


def _frozen_array(values, dtype, name):
    arr = np.array(values, dtype=dtype, copy=True)
    if arr.ndim != 1:
        raise StructuralInputError(f"{name} must be one-dimensional, got shape {arr.shape}", field=name)
    arr.setflags(write=False)
    return arr


def _mask_array(mask, length, name="mask"):
    if mask is None:
        arr = np.ones(length, dtype=bool)
        arr.setflags(write=False)
        return arr
    arr = np.asarray(mask)
    if arr.size == 0:
        arr = arr.astype(bool)
    if arr.dtype != bool:
        raise StructuralInputError(f"{name} must be boolean", field=name)
    return _frozen_array(arr, bool, name)


@dataclass(frozen=True, eq=False)
class TokenTrace:
    """One sampled response with per-token log-probabilities.

    ``logp_old`` comes from the behavior policy that generated the tokens,
    ``logp_new`` from the policy being optimized.  Arrays are copied and
    made read-only on construction.
    """

    sample_id: str
    tokens: np.ndarray
    logp_old: np.ndarray
    logp_new: np.ndarray
    mask: np.ndarray
    score: float
    group_id: str

    def __post_init__(self):
        tokens = np.asarray(self.tokens)
        if tokens.size and not np.issubdtype(tokens.dtype, np.integer):
            raise InputError("tokens must be integers", field="tokens")
        set_ = object.__setattr__
        set_(self, "tokens", _frozen_array(tokens, np.int64, "tokens"))
        set_(self, "logp_old", _frozen_array(self.logp_old, np.float64, "logp_old"))
        set_(self, "logp_new", _frozen_array(self.logp_new, np.float64, "logp_new"))
        set_(self, "mask", _mask_array(self.mask, len(self.tokens)))
        n = len(self.tokens)
        for name in ("logp_old", "logp_new", "mask"):
            if len(getattr(self, name)) != n:
                raise StructuralInputError(
                    f"{name} has length {len(getattr(self, name))}, expected {n} (len(tokens))",
                    field=name,
                )
        for name in ("logp_old", "logp_new"):
            values = getattr(self, name)
            if not np.all(np.isfinite(values)):
                raise InputError(f"{name} contains non-finite values", field=name)
            if np.any(values > 0.0):
                raise InputError(f"{name} contains positive log-probabilities", field=name)
        score = float(self.score)
        if not 0.0 <= score <= 1.0:
            raise InputError(f"score {score} outside [0, 1]", field="score")
        set_(self, "score", score)
        set_(self, "sample_id", str(self.sample_id))
        set_(self, "group_id", str(self.group_id))

    def __len__(self):
        return len(self.tokens)

    def __eq__(self, other):
        if not isinstance(other, TokenTrace):
            return NotImplemented
        return (
            self.sample_id == other.sample_id
            and self.group_id == other.group_id
            and self.score == other.score
            and np.array_equal(self.tokens, other.tokens)
            and np.array_equal(self.logp_old, other.logp_old)
            and np.array_equal(self.logp_new, other.logp_new)
            and np.array_equal(self.mask, other.mask)
        )

    __hash__ = None

    @property
    def num_valid(self):
        return int(self.mask.sum())


@dataclass(frozen=True, eq=False)
class LogRatioSeries:
    """Per-token log-ratios; ``values`` at masked positions are meaningless (stored as 0)."""

    values: np.ndarray
    mask: np.ndarray = None

    def __post_init__(self):
        values = _frozen_array(self.values, np.float64, "values")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "mask", _mask_array(self.mask, len(values)))
        if len(self.mask) != len(values):
            raise StructuralInputError("mask length differs from values length", field="mask")

    def __len__(self):
        return len(self.values)

    @property
    def valid_values(self):
        return self.values[self.mask]


@dataclass(frozen=True)
class KalmanParams:
    """Noise variances and prior of the local-level model.

    ``q`` is the process-noise (drift) variance, ``v`` the observation-noise
    variance, ``rho0``/``p0`` the prior mean and variance of the latent
    log-ratio.  The defaults are the clipped-variant setting ``q=1e-6, v=1``
    with an on-policy prior.

    ``q == 0`` together with ``p0 == 0`` gives a filter that never looks at
    the data; build it with `KalmanParams.frozen_prior` to make that explicit.
    """

    q: float = 1e-6
    v: float = 1.0
    rho0: float = 0.0
    p0: float = 1.0
    allow_degenerate: bool = field(default=False, repr=False)

    def __post_init__(self):
        for name in ("q", "v", "rho0", "p0"):
            value = float(getattr(self, name))
            if not math.isfinite(value):
                raise ParameterError(f"{name} must be finite, got {value}")
            object.__setattr__(self, name, value)
        if self.q < 0:
            raise ParameterError(f"process noise q must be >= 0, got {self.q}")
        if self.v <= 0:
            raise ParameterError(f"observation noise v must be > 0, got {self.v}")
        if self.p0 < 0:
            raise ParameterError(f"prior variance p0 must be >= 0, got {self.p0}")
        if self.q == 0 and self.p0 == 0 and not self.allow_degenerate:
            raise ParameterError(
                "q == 0 and p0 == 0 freezes the filter at rho0; "
                "use KalmanParams.frozen_prior() if that is intended"
            )

    @classmethod
    def frozen_prior(cls, rho0=0.0, v=1.0):
        """Degenerate filter that outputs ``rho0`` at every position."""
        return cls(q=0.0, v=v, rho0=rho0, p0=0.0, allow_degenerate=True)


class StepResult(NamedTuple):
    rho_post: float
    p_post: float
    gain: float
    innovation: float


@dataclass(frozen=True, eq=False)
class FilteredSeries:
    """Filter output aligned with the input positions.

    At masked positions the state is carried unchanged: ``rho_post`` and
    ``p_post`` repeat the last posterior (or the prior), ``gain`` and
    ``innovation`` are 0.
    """

    rho_post: np.ndarray
    p_post: np.ndarray
    gain: np.ndarray
    innovation: np.ndarray
    mask: np.ndarray

    def __len__(self):
        return len(self.rho_post)


@dataclass(frozen=True, eq=False)
class FilterWeights:
    """Unrolled filter: ``rho_post[t] = prior_weight[t]*rho0 + obs_weights[t] @ z``.

    ``obs_weights`` is lower triangular; columns of masked positions are zero.
    """

    prior_weight: np.ndarray
    obs_weights: np.ndarray

    def apply(self, z, rho0=0.0, mask=None):
        z = np.asarray(z, dtype=np.float64)
        if mask is not None:
            z = np.where(mask, z, 0.0)
        return self.prior_weight * rho0 + self.obs_weights @ z


def compute_log_ratios(trace: TokenTrace) -> LogRatioSeries:
    """``z_t = logp_new_t - logp_old_t`` at valid positions, 0 elsewhere."""
    if not isinstance(trace, TokenTrace):
        raise StructuralInputError(f"expected TokenTrace, got {type(trace).__name__}")
    z = np.where(trace.mask, trace.logp_new - trace.logp_old, 0.0)
    return LogRatioSeries(z, trace.mask)


def kalman_step(state, z, params: KalmanParams):
    """One predict/update cycle.

    Parameters
    ----------
    state : (float, float)
        Previous posterior ``(rho, p)``.
    z : float
        New observation (log-ratio).
    params : KalmanParams

    Returns
    -------
    new_state : (float, float)
    result : StepResult
    """
    rho_prev, p_prev = float(state[0]), float(state[1])
    z = float(z)
    if not math.isfinite(z):
        raise InputError(f"observation must be finite, got {z}")
    if params.v <= 0:
        raise ParameterError(f"observation noise v must be > 0, got {params.v}")
    if not p_prev >= 0:
        raise ParameterError(f"previous variance must be >= 0, got {p_prev}")
    rho_pred = rho_prev
    p_pred = p_prev + params.q
    innovation = z - rho_pred
    gain = p_pred / (p_pred + params.v)
    rho_post = rho_pred + gain * innovation
    p_post = (1.0 - gain) * p_pred
    return (rho_post, p_post), StepResult(rho_post, p_post, gain, innovation)


def kalman_filter_sequence(z, params: KalmanParams) -> FilteredSeries:
    """Filter a whole response left to right.

    ``z`` is a `LogRatioSeries` or a plain 1-D array (all positions valid).
    Masked positions do not advance the filter state.
    """
    if not isinstance(z, LogRatioSeries):
        z = LogRatioSeries(z)
    n = len(z)
    rho_post = np.empty(n)
    p_post = np.empty(n)
    gain = np.zeros(n)
    innovation = np.zeros(n)
    state = (params.rho0, params.p0)
    values, mask = z.values, z.mask
    for t in range(n):
        if mask[t]:
            state, step = kalman_step(state, values[t], params)
            gain[t] = step.gain
            innovation[t] = step.innovation
        rho_post[t], p_post[t] = state
    return FilteredSeries(rho_post, p_post, gain, innovation, z.mask)


def filter_trace(trace: TokenTrace, params: KalmanParams) -> FilteredSeries:
    return kalman_filter_sequence(compute_log_ratios(trace), params)


@lru_cache(maxsize=256)
def _weights_cached(length, params, mask_bytes):
    mask = np.frombuffer(mask_bytes, dtype=bool) if mask_bytes is not None else np.ones(length, dtype=bool)
    prior = np.empty(length)
    obs = np.zeros((length, length))
    prev_prior = 1.0
    prev_row = np.zeros(length)
    p = params.p0
    for t in range(length):
        if mask[t]:
            p_pred = p + params.q
            k = p_pred / (p_pred + params.v)
            p = (1.0 - k) * p_pred
            row = (1.0 - k) * prev_row
            row[t] = k
            prev_prior = (1.0 - k) * prev_prior
            prev_row = row
        obs[t] = prev_row
        prior[t] = prev_prior
    prior.setflags(write=False)
    obs.setflags(write=False)
    return FilterWeights(prior, obs)


def filter_weights(length: int, params: KalmanParams, mask=None) -> FilterWeights:
    """Linear weights of the unrolled filter for a response of ``length`` tokens.

    ``w[t, s] = K_s * prod_{u=s+1..t} (1 - K_u)`` over valid positions and
    ``prior_weight[t] = prod_{u<=t} (1 - K_u)``.  Results are cached; the
    returned arrays are read-only.
    """
    length = int(length)
    if length < 0:
        raise ParameterError(f"length must be >= 0, got {length}")
    mask_bytes = None
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != (length,):
            raise StructuralInputError(f"mask shape {mask.shape} does not match length {length}", field="mask")
        if not mask.all():
            mask_bytes = mask.tobytes()
    return _weights_cached(length, params, mask_bytes)


def steady_state(params: KalmanParams):
    """Fixed point of the variance recursion.

    Returns ``(p_pred_inf, gain_inf)`` where ``p_pred_inf`` is the positive
    root of ``P^2 - q P - q v = 0``.  Larger ``q/v`` gives a faster-tracking,
    less smoothing filter.
    """
    q, v = params.q, params.v
    if q == 0:
        return 0.0, 0.0
    # q + sqrt(q^2 + 4qv) has no cancellation for q > 0
    p_pred = 0.5 * (q + math.sqrt(q * q + 4.0 * q * v))
    return p_pred, p_pred / (p_pred + v)


def to_ratio_space(filtered: FilteredSeries, bound: float = DEFAULT_SATURATION_BOUND) -> np.ndarray:
    """Exponentiate posterior means back to ratios.

    Raises `SaturationError` if any ``|rho_post|`` exceeds ``bound`` instead of
    silently producing huge or infinite ratios.
    """
    rho = np.asarray(filtered.rho_post, dtype=np.float64)
    over = np.flatnonzero(~(np.abs(rho) <= bound))
    if over.size:
        i = int(over[0])
        raise SaturationError(
            f"filtered log-ratio {rho[i]!r} at position {i} exceeds saturation bound {bound}",
            index=i,
            value=float(rho[i]),
        )
    return np.exp(rho)
