"""Structure statistics of token-level ratio series.

Tokens are labelled Up / Down / On relative to a band around 1 and the
label sequence is summarized by window-wise off-policy frequency, run
lengths and switch frequency.  Spectral (low-frequency ratio) and variance
statistics are computed on the numeric series itself.  `dynamics_report`
puts the raw and filtered versions of a batch side by side.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np

from .errors import InputError, ParameterError
from .objectives import KPO_CLIP, ClipConfig

__all__ = [
    "TokenState",
    "StateSeries",
    "WindowFrequency",
    "RunLengths",
    "DynamicsReport",
    "PairedDynamicsReport",
    "DEFAULT_WINDOW",
    "EXACT_TOLERANCE",
    "classify_token_states",
    "window_offpolicy_frequency",
    "run_lengths",
    "switch_frequency",
    "low_frequency_ratio",
    "default_cutoff",
    "variance_stats",
    "sample_dynamics",
    "summarize_dynamics",
    "dynamics_report",
]

DEFAULT_WINDOW = 50
EXACT_TOLERANCE = 1e-12


class TokenState(IntEnum):
    DOWN = -1
    ON = 0
    UP = 1


_STATES = (TokenState.UP, TokenState.DOWN, TokenState.ON)


@dataclass(frozen=True, eq=False)
class StateSeries:
    """Per-token labels (``TokenState`` values as int8).

    ``band`` is the `ClipConfig` used, or ``None`` for exact mode where On
    means ``|log r| <= tolerance``.
    """

    states: np.ndarray
    band: ClipConfig | None
    mask: np.ndarray
    tolerance: float = EXACT_TOLERANCE

    @property
    def valid(self):
        return self.states[self.mask]

    def proportions(self):
        """``(up, down, on)`` fractions of valid tokens; zeros if none are valid."""
        v = self.valid
        if v.size == 0:
            return 0.0, 0.0, 0.0
        up = np.count_nonzero(v == TokenState.UP)
        down = np.count_nonzero(v == TokenState.DOWN)
        on = v.size - up - down
        return up / v.size, down / v.size, on / v.size


@dataclass(frozen=True, eq=False)
class WindowFrequency:
    per_sample: list
    mean: np.ndarray
    var: np.ndarray


@dataclass(frozen=True)
class RunLengths:
    up: tuple
    down: tuple
    on: tuple

    def runs(self, state):
        return {TokenState.UP: self.up, TokenState.DOWN: self.down, TokenState.ON: self.on}[TokenState(state)]

    def mean(self, state):
        runs = self.runs(state)
        return sum(runs) / len(runs) if runs else 0.0

    @property
    def means(self):
        return tuple(self.mean(s) for s in _STATES)


@dataclass(frozen=True)
class DynamicsReport:
    """Table-style dynamics summary; tuples are ordered (up, down, on).

    A state that never occurs has mean run length 0.
    """

    proportions: tuple
    mean_run_lengths: tuple
    switch_frequency: float
    lfr: float
    global_variance: float
    windowed_local_variance: float
    representation: str = "ratio"
    num_samples: int = 1
    run_counts: tuple = field(default=(0, 0, 0), compare=False)


@dataclass(frozen=True)
class PairedDynamicsReport:
    before: DynamicsReport
    after: DynamicsReport


def _masked(values, mask):
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 1:
        raise InputError(f"expected a 1-D series, got shape {values.shape}")
    if mask is None:
        return values
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != values.shape:
        raise InputError("mask shape does not match series")
    return values[mask]


def classify_token_states(ratios, band: ClipConfig | None = KPO_CLIP, tolerance=EXACT_TOLERANCE, mask=None):
    """Label tokens Up / Down / On.

    With a band, On means ``1 - eps_lo <= r <= 1 + eps_hi`` (closed).  With
    ``band=None`` (exact mode) On means ``|log r| <= tolerance``.
    """
    r = np.asarray(ratios, dtype=np.float64)
    if r.ndim != 1:
        raise InputError(f"expected a 1-D ratio series, got shape {r.shape}")
    mask = np.ones(r.shape, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    if mask.shape != r.shape:
        raise InputError("mask shape does not match ratios")
    if np.any(~(r[mask] > 0)):
        raise InputError("ratios must be strictly positive")
    states = np.zeros(r.shape, dtype=np.int8)
    safe = np.where(mask, r, 1.0)
    if band is None:
        z = np.log(safe)
        states[z > tolerance] = TokenState.UP
        states[z < -tolerance] = TokenState.DOWN
    else:
        states[safe > band.upper] = TokenState.UP
        states[safe < band.lower] = TokenState.DOWN
    states[~mask] = TokenState.ON
    return StateSeries(states, band, mask, float(tolerance))


def _as_state_list(states):
    return [states] if isinstance(states, StateSeries) else list(states)


def window_offpolicy_frequency(states, window=DEFAULT_WINDOW) -> WindowFrequency:
    """Fraction of off-policy (Up or Down) tokens in consecutive windows.

    The valid tokens of each sample are truncated to a whole number of
    windows.  Cross-sample mean/variance at each window index use only the
    samples long enough to have that window.
    """
    if window < 1:
        raise ParameterError(f"window must be >= 1, got {window}")
    per_sample = []
    for s in _as_state_list(states):
        v = s.valid
        n_win = v.size // window
        blocks = v[: n_win * window].reshape(n_win, window)
        per_sample.append(np.count_nonzero(blocks != TokenState.ON, axis=1) / window)
    width = max((f.size for f in per_sample), default=0)
    table = np.full((len(per_sample), width), np.nan)
    for i, f in enumerate(per_sample):
        table[i, : f.size] = f
    if width:
        counts = np.sum(~np.isnan(table), axis=0)
        mean = np.nansum(table, axis=0) / counts
        var = np.nansum((table - mean) ** 2, axis=0) / counts
    else:
        mean = var = np.zeros(0)
    return WindowFrequency(per_sample, mean, var)


def run_lengths(states: StateSeries) -> RunLengths:
    """Lengths of maximal constant-label runs over the valid tokens."""
    v = states.valid
    runs = {s: [] for s in _STATES}
    if v.size:
        change = np.flatnonzero(v[1:] != v[:-1]) + 1
        starts = np.concatenate(([0], change))
        ends = np.concatenate((change, [v.size]))
        for a, b in zip(starts, ends):
            runs[TokenState(int(v[a]))].append(int(b - a))
    return RunLengths(tuple(runs[TokenState.UP]), tuple(runs[TokenState.DOWN]), tuple(runs[TokenState.ON]))


def switch_frequency(states: StateSeries, window=DEFAULT_WINDOW) -> float:
    """Mean over windows of ``adjacent label changes / (L - 1)``.

    Windows are non-overlapping over the valid tokens; a trailing window of
    length 1 has no adjacent pair and is skipped.  A sample shorter than one
    window is a single window.  Valid length <= 1 gives 0.
    """
    if window < 1:
        raise ParameterError(f"window must be >= 1, got {window}")
    v = states.valid
    if v.size <= 1:
        return 0.0
    rates = []
    for start in range(0, v.size, window):
        w = v[start : start + window]
        if w.size >= 2:
            rates.append(np.count_nonzero(w[1:] != w[:-1]) / (w.size - 1))
    return float(np.mean(rates)) if rates else 0.0


def default_cutoff(length):
    return int(length) // 20


def low_frequency_ratio(series, cutoff=None, mask=None) -> float:
    """Share of mean-centered DFT energy in bins ``{0..k_c} U {T-k_c..T-1}``.

    ``cutoff`` defaults to ``T // 20``.  A series with (numerically) zero
    centered energy is maximally smooth and returns 1.
    """
    x = _masked(series, mask)
    n = x.size
    if n == 0:
        raise InputError("low-frequency ratio of an empty series")
    k_c = default_cutoff(n) if cutoff is None else int(cutoff)
    if not 0 <= k_c <= n // 2:
        raise ParameterError(f"cutoff {k_c} outside [0, {n // 2}]")
    power = np.abs(np.fft.fft(x - x.mean())) ** 2
    total = power.sum()
    if total < 1e-15:
        return 1.0
    low = np.zeros(n, dtype=bool)
    low[: k_c + 1] = True
    if k_c:
        low[n - k_c :] = True
    return float(min(1.0, power[low].sum() / total))


def variance_stats(series, window=DEFAULT_WINDOW, mask=None):
    """``(global_variance, mean_windowed_local_variance)``, population variances.

    Local variance averages over non-overlapping windows, including a
    trailing partial window when it has at least 2 points.
    """
    if window < 1:
        raise ParameterError(f"window must be >= 1, got {window}")
    x = _masked(series, mask)
    if x.size == 0:
        raise InputError("variance of an empty series")
    local = [x[i : i + window].var() for i in range(0, x.size, window) if x[i : i + window].size >= 2]
    return float(x.var()), float(np.mean(local)) if local else 0.0


def _as_pair(item):
    if isinstance(item, tuple):
        values, mask = item
        return np.asarray(values, dtype=np.float64), np.asarray(mask, dtype=bool)
    values = np.asarray(item, dtype=np.float64)
    return values, np.ones(values.shape, dtype=bool)


def sample_dynamics(ratios, band=KPO_CLIP, window=DEFAULT_WINDOW, cutoff=None, mask=None,
                    representation="ratio", tolerance=EXACT_TOLERANCE) -> DynamicsReport:
    """All dynamics metrics for one response.

    Labels always come from the ratios; LFR and variances are computed on
    ``ratios`` or on ``log(ratios)`` depending on ``representation``.
    """
    if representation not in ("ratio", "log_ratio"):
        raise ParameterError(f"representation must be 'ratio' or 'log_ratio', got {representation!r}")
    r = np.asarray(ratios, dtype=np.float64)
    states = classify_token_states(r, band, tolerance, mask)
    runs = run_lengths(states)
    valid = r[states.mask]
    signal = valid if representation == "ratio" else np.log(valid)
    glob, loc = variance_stats(signal, window)
    return DynamicsReport(
        proportions=states.proportions(),
        mean_run_lengths=runs.means,
        switch_frequency=switch_frequency(states, window),
        lfr=low_frequency_ratio(signal, cutoff),
        global_variance=glob,
        windowed_local_variance=loc,
        representation=representation,
        num_samples=1,
        run_counts=tuple(len(runs.runs(s)) for s in _STATES),
    )


def summarize_dynamics(reports) -> DynamicsReport:
    """Average per-sample reports.

    Mean run lengths of a state are averaged only over samples where that
    state occurs.
    """
    reports = list(reports)
    if not reports:
        raise InputError("no samples to summarize")
    reps = {r.representation for r in reports}
    if len(reps) != 1:
        raise InputError(f"mixed representations {sorted(reps)}")

    def avg(getter):
        return float(np.mean([getter(r) for r in reports]))

    props = np.mean([r.proportions for r in reports], axis=0)
    props = tuple(float(p) for p in props / props.sum()) if props.sum() > 0 else (0.0, 0.0, 0.0)
    mean_rl = []
    for i in range(3):
        present = [r.mean_run_lengths[i] for r in reports if r.run_counts[i] > 0]
        mean_rl.append(float(np.mean(present)) if present else 0.0)
    return DynamicsReport(
        proportions=props,
        mean_run_lengths=tuple(mean_rl),
        switch_frequency=avg(lambda r: r.switch_frequency),
        lfr=avg(lambda r: r.lfr),
        global_variance=avg(lambda r: r.global_variance),
        windowed_local_variance=avg(lambda r: r.windowed_local_variance),
        representation=reports[0].representation,
        num_samples=len(reports),
        run_counts=tuple(int(sum(r.run_counts[i] for r in reports)) for i in range(3)),
    )


_UNSET = object()


def dynamics_report(raw_ratios, filtered_ratios, band=KPO_CLIP, window=DEFAULT_WINDOW, cutoff=None,
                    representation="ratio", raw_band=_UNSET, tolerance=EXACT_TOLERANCE,
                    map_fn=map) -> PairedDynamicsReport:
    """Before/after comparison of raw and filtered ratio batches.

    Each batch is a list of responses, given either as arrays (all valid) or
    ``(ratios, mask)`` pairs; the two batches must share masks.  ``raw_band``
    defaults to ``band``; pass ``None`` to label raw tokens in exact mode.
    ``map_fn`` lets callers parallelize the per-sample pass (order must be
    preserved).
    """
    raw = [_as_pair(x) for x in raw_ratios]
    filt = [_as_pair(x) for x in filtered_ratios]
    if len(raw) != len(filt):
        raise InputError(f"{len(raw)} raw samples but {len(filt)} filtered samples")
    for i, ((_, m1), (_, m2)) in enumerate(zip(raw, filt)):
        if not np.array_equal(m1, m2):
            raise InputError(f"sample {i}: raw and filtered masks differ")
    before_band = band if raw_band is _UNSET else raw_band

    def one(args):
        (values, mask), b = args
        return sample_dynamics(values, b, window, cutoff, mask, representation, tolerance)

    before = list(map_fn(one, [(x, before_band) for x in raw]))
    after = list(map_fn(one, [(x, band) for x in filt]))
    return PairedDynamicsReport(summarize_dynamics(before), summarize_dynamics(after))
