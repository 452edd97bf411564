"""Acceptance criteria 1-8, each at its stated tolerance and time limit.

Run with pytest (one PASS/FAIL line per criterion is printed even under
output capture) or directly: ``python3 tests/test_acceptance.py``.
"""

import io
import math
import sys
import tempfile
import time
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from oracles import direct_dft, riccati_fixed_point  # noqa: E402
from ratio_forge.cli import main as cli_main  # noqa: E402
from ratio_forge.diagnostics import (  # noqa: E402
    StateSeries,
    TokenState,
    classify_token_states,
    dynamics_report,
    low_frequency_ratio,
    run_lengths,
    switch_frequency,
    variance_stats,
    window_offpolicy_frequency,
)
from ratio_forge.errors import BoundaryTokenError, DivergenceError  # noqa: E402
from ratio_forge.objectives import KPO_CLIP, group_relative_advantage, kpo_objective  # noqa: E402
from ratio_forge.ratio_filter import (  # noqa: E402
    KalmanParams,
    LogRatioSeries,
    TokenTrace,
    filter_trace,
    filter_weights,
    kalman_filter_sequence,
    steady_state,
    to_ratio_space,
)
from ratio_forge.toy_sim import (  # noqa: E402
    GRADIENT_MODES,
    METHODS,
    TrainConfig,
    drift_log_ratios,
    drift_traces,
    finite_difference_check,
    random_offpolicy_batch,
    run_training,
)
from ratio_forge.trace_io import read_traces, write_traces  # noqa: E402

GOLDEN = (math.sqrt(5) - 1) / 2


def c1_filter_oracle():
    start = time.perf_counter()
    rng = np.random.default_rng(1)
    worst = 0.0
    for _ in range(1000):
        n = int(rng.integers(1, 65))
        params = KalmanParams(q=rng.uniform(1e-8, 1.0), v=rng.uniform(1e-3, 10.0),
                              rho0=float(rng.normal()), p0=rng.uniform(0.0, 10.0))
        z = rng.normal(scale=rng.uniform(0.01, 2.0), size=n)
        mask = rng.random(n) < 0.9
        rho = kalman_filter_sequence(LogRatioSeries(np.where(mask, z, 0.0), mask), params).rho_post
        w = filter_weights(n, params, mask)
        worst = max(worst, float(np.max(np.abs(w.apply(z, params.rho0, mask) - rho))))
    elapsed = time.perf_counter() - start
    return worst <= 1e-10 and elapsed < 5.0, f"max |diff| {worst:.2e} (tol 1e-10), {elapsed:.2f}s (limit 5s)"


def c2_steady_state():
    start = time.perf_counter()
    _, k1 = steady_state(KalmanParams(q=1.0, v=1.0))
    _, k2 = steady_state(KalmanParams(q=1e-6, v=1.0))
    _, k2_oracle = riccati_fixed_point(1e-6, 1.0)
    elapsed = time.perf_counter() - start
    e1, e2 = abs(k1 - GOLDEN), abs(k2 - k2_oracle)
    ok = e1 <= 1e-9 and e2 <= 1e-9 and elapsed < 1.0
    return ok, f"golden err {e1:.1e}, K_inf(1e-6,1)={k2:.10e} vs fixed point err {e2:.1e}, {elapsed:.3f}s"


def c3_on_policy():
    rng = np.random.default_rng(3)
    exact = True
    groups = []
    all_adv = []
    for g in range(4):
        scores = rng.random(8)
        adv = group_relative_advantage(scores)
        responses = []
        for i in range(8):
            lp = -rng.random(int(rng.integers(1, 64))) * 5
            t = TokenTrace(f"{g}/{i}", np.arange(lp.size), lp, lp, np.ones(lp.size, bool), scores[i], str(g))
            r = to_ratio_space(filter_trace(t, KalmanParams()))
            exact &= bool(np.all(r == 1.0))
            responses.append(r)
        groups.append((responses, adv))
        all_adv.extend(adv.per_response)
    target = float(np.mean(all_adv))
    errs = [abs(kpo_objective(groups, mode).loss - target) for mode in ("clipped", "unclipped")]
    ok = exact and max(errs) <= 1e-12
    return ok, f"ratios exactly 1: {exact}, |loss - mean adv| clipped {errs[0]:.1e}, unclipped {errs[1]:.1e}"


def c4_gradients():
    start = time.perf_counter()
    worst, retries = 0.0, 0
    for method in METHODS:
        for mode in GRADIENT_MODES:
            cfg = TrainConfig(method=method, gradient_mode=mode)
            for seed in range(20):
                for attempt in range(50):
                    policy, batch = random_offpolicy_batch(seed + 1000 * attempt, cfg)
                    try:
                        worst = max(worst, finite_difference_check(policy, cfg, batch, h=1e-5))
                        break
                    except BoundaryTokenError:
                        retries += 1
                else:
                    return False, f"{method}/{mode} seed {seed}: no boundary-free batch"
    elapsed = time.perf_counter() - start
    ok = worst < 1e-4 and elapsed < 30.0
    return ok, f"max rel err {worst:.2e} (tol 1e-4) over 160 batches, {retries} boundary reseeds, {elapsed:.1f}s"


def c5_synthetic_dynamics():
    start = time.perf_counter()
    params = KalmanParams(q=1e-6, v=1.0)
    raw, filt = [], []
    for seed in range(100):
        z, _ = drift_log_ratios(seed, length=2048, sigma=0.4)
        raw.append(np.exp(z))
        filt.append(to_ratio_space(kalman_filter_sequence(z, params)))
    rep = dynamics_report(raw, filt, KPO_CLIP)
    b, a = rep.before, rep.after
    elapsed = time.perf_counter() - start
    sw_ratio = b.switch_frequency / a.switch_frequency if a.switch_frequency else math.inf
    var_ratio = b.windowed_local_variance / a.windowed_local_variance if a.windowed_local_variance else math.inf
    ok = sw_ratio >= 10 and a.lfr >= 0.9 and var_ratio >= 100 and elapsed < 30.0
    return ok, (f"switch {b.switch_frequency:.3f}->{a.switch_frequency:.4f} ({sw_ratio:.0f}x), "
                f"LFR {b.lfr:.3f}->{a.lfr:.3f}, win var {b.windowed_local_variance:.3f}->"
                f"{a.windowed_local_variance:.1e} ({var_ratio:.0f}x), {elapsed:.1f}s")


def c6_training_contrast():
    start = time.perf_counter()
    try:
        kpo = run_training(TrainConfig(method="kpo_clipped", seed=42, steps=300))
    except DivergenceError as exc:
        return False, f"kpo_clipped diverged at step {exc.step}"
    grpo = run_training(TrainConfig(method="grpo", seed=42, steps=300))
    v_kpo = float(np.var(kpo.pg_loss[50:300]))
    v_grpo = float(np.var(grpo.pg_loss[50:300]))
    elapsed = time.perf_counter() - start
    ok = v_kpo < v_grpo and elapsed < 300
    return ok, f"pg_loss var steps 50-300: kpo_clipped {v_kpo:.2e} < grpo {v_grpo:.2e}, {elapsed:.1f}s"


def _labels(seq):
    return StateSeries(np.array(seq, dtype=np.int8), KPO_CLIP, np.ones(len(seq), bool))


def c7_diagnostics():
    U, D, O = TokenState.UP, TokenState.DOWN, TokenState.ON
    checks = {
        "all ones On": all(np.all(classify_token_states(np.ones(5), b).states == O) for b in (KPO_CLIP, None)),
        "narrow band labels": classify_token_states(np.array([1.001, 0.999, 1.0])).states.tolist() == [U, D, O],
        "closed band": classify_token_states(np.array([1 + 0.0004])).states.tolist() == [O],
        "window all On": np.all(window_offpolicy_frequency(_labels([O] * 100)).per_sample[0] == 0),
        "window all Up": np.all(window_offpolicy_frequency(_labels([U] * 100)).per_sample[0] == 1),
        "window count": window_offpolicy_frequency(_labels([U, O, O, D, O, O, O, O]), 4).per_sample[0].tolist()
        == [0.5, 0.0],
        "runs UUDDDU": (lambda r: r.up == (2, 1) and r.mean(U) == 1.5 and r.down == (3,))(
            run_lengths(_labels([U, U, D, D, D, U]))),
        "runs constant": run_lengths(_labels([O] * 7)).on == (7,),
        "runs alternating": (lambda r: r.up == (1, 1) and r.down == (1, 1))(run_lengths(_labels([U, D, U, D]))),
        "switch alternating": switch_frequency(_labels([U, D, U, D])) == 1.0,
        "switch constant": switch_frequency(_labels([D] * 9)) == 0.0,
        "switch single": switch_frequency(_labels([U])) == 0.0,
        "lfr constant": low_frequency_ratio(np.full(16, 2.0)) == 1.0,
        "lfr sinusoid": low_frequency_ratio(np.sin(2 * np.pi * 8 * np.arange(64) / 64), 2) < 1e-9,
        "lfr full band": abs(low_frequency_ratio(np.random.default_rng(0).normal(size=40), 20) - 1) < 1e-12,
        "var constant": variance_stats(np.full(9, 1.5)) == (0.0, 0.0),
        "var [0,2]": variance_stats(np.array([0.0, 2.0])) == (1.0, 1.0),
        "var [0,2,0,2]/2": variance_stats(np.array([0.0, 2.0, 0.0, 2.0]), 2) == (1.0, 1.0),
    }
    parseval = []
    for n in (16, 64, 256):
        x = np.random.default_rng(n).normal(size=n)
        energy = n * float(np.sum(x ** 2))
        direct = sum(abs(c) ** 2 for c in direct_dft(list(x)))
        fast = float(np.sum(np.abs(np.fft.fft(x)) ** 2))
        parseval.append(max(abs(direct - energy), abs(fast - direct)) / energy)
    failed = [k for k, v in checks.items() if not v]
    ok = not failed and max(parseval) <= 1e-9
    return ok, f"{len(checks) - len(failed)}/{len(checks)} examples exact, Parseval rel err {max(parseval):.1e}" + (
        f", failed: {failed}" if failed else "")


def _random_trace(rng, i):
    n = int(rng.integers(0, 50))
    lp_old = -rng.exponential(2.0, n)
    lp_new = np.minimum(lp_old + rng.normal(scale=0.1, size=n), 0.0)
    return TokenTrace(f"r{i}", rng.integers(0, 2**31, n), lp_old, lp_new, rng.random(n) < 0.9,
                      float(rng.random()), f"g{i // 8}")


def _cli_outputs(root, threads):
    out = Path(root) / f"threads{threads}"
    out.mkdir()
    src = out.parent / "src.jsonl"
    cfg = out.parent / "small.toml"
    silent = io.StringIO()
    t = ("--threads", str(threads))
    cmds = [
        ["filter", "--input", src, "--output", out / "f.jsonl", *t],
        ["analyze", "--input", out / "f.jsonl", "--output", out / "a.csv", "--plot", out, *t],
        ["analyze", "--input", src, "--output", out / "raw.csv", "--raw-exact", *t],
        ["loss", "--input", src, "--output", out / "l.csv", *t],
        ["simulate", "--config", cfg, "--steps", "4", "--seed", "7", "--output", out / "m.csv", "--plot", out, *t],
        ["report", out / "a.csv", out / "raw.csv", "--output", out / "r.csv"],
    ]
    for argv in cmds:
        code = cli_main([str(a) for a in argv], silent, silent)
        if code != 0:
            raise RuntimeError(f"{argv[0]} exited {code}")
    return {p.name: p.read_bytes() for p in sorted(out.iterdir())}


def c8_io_determinism():
    rng = np.random.default_rng(8)
    traces = [_random_trace(rng, i) for i in range(1000)]
    with tempfile.TemporaryDirectory() as tmp:
        tmp = Path(tmp)
        write_traces(tmp / "a.jsonl", traces)
        back = read_traces(tmp / "a.jsonl")
        write_traces(tmp / "b.jsonl", back)
        same_bytes = (tmp / "a.jsonl").read_bytes() == (tmp / "b.jsonl").read_bytes()
        same_values = back == traces
        write_traces(tmp / "src.jsonl", drift_traces(6, 400, seed=3))
        (tmp / "small.toml").write_text("[train]\nbatch_size = 16\nminibatch_size = 4\ngroup_size = 4\nmax_len = 8\n")
        runs = [_cli_outputs(tmp, n) for n in (1, 2, 8)]
    deterministic = runs[0] == runs[1] == runs[2]
    ok = same_bytes and same_values and deterministic
    return ok, (f"1000-record round trip bytes identical: {same_bytes}, values identical: {same_values}; "
                f"{len(runs[0])} CLI outputs identical across --threads 1/2/8: {deterministic}")


CRITERIA = [
    ("1 Kalman oracle equivalence", c1_filter_oracle),
    ("2 steady-state identities", c2_steady_state),
    ("3 on-policy reduction", c3_on_policy),
    ("4 gradient verification", c4_gradients),
    ("5 synthetic before/after dynamics", c5_synthetic_dynamics),
    ("6 training-stability contrast", c6_training_contrast),
    ("7 diagnostics identities", c7_diagnostics),
    ("8 I/O round trip and CLI determinism", c8_io_determinism),
]


def _report(name, ok, detail):
    return f"ACCEPTANCE {name}: {'PASS' if ok else 'FAIL'} - {detail}"


@pytest.mark.parametrize("name,check", CRITERIA, ids=[c[0].split()[0] for c in CRITERIA])
def test_acceptance(name, check, capsys):
    ok, detail = check()
    with capsys.disabled():
        print("\n" + _report(name, ok, detail))
    assert ok, detail


if __name__ == "__main__":
    results = []
    for name, check in CRITERIA:
        ok, detail = check()
        print(_report(name, ok, detail), flush=True)
        results.append(ok)
    sys.exit(0 if all(results) else 1)
