"""One test per acceptance criterion, each at its stated tolerance.

Every test records a ``PASS``/``FAIL`` line that is printed in the terminal
summary, then asserts.
"""

import hashlib
import math
from dataclasses import replace

import numpy as np
import pytest

from byzdiff.adversary import Behavior, sample_failure_config
from byzdiff.analysis import (
    counting_lower_bound,
    coupon_R,
    random_delay_form,
    tree_delay_form,
)
from byzdiff.core import Protocol, SystemConfig
from byzdiff.engine import run_trial
from byzdiff.experiment import AdversarySpec, AlphaRule, builtin, run_experiment, setup_trial
from byzdiff.metrics import all_active_round, compute_fanin, mean_received

from conftest import ACCEPTANCE_LINES, random_intro

FIG_SWEEP = tuple(2**k for k in range(7, 13))


def check(label, ok, detail):
    ACCEPTANCE_LINES.append(f"{'PASS' if ok else 'FAIL'}  {label}: {detail}")
    assert ok, f"{label}: {detail}"


def _metric(rows, metric, protocol=None):
    """{sweep key: value} for one metric; key is (n, t)."""
    return {
        (str(r[1]), str(r[2])): float(r[8])
        for r in rows
        if r[7] == metric and (protocol is None or r[6] == protocol)
    }


@pytest.fixture(scope="module")
def fig1_rows():
    return run_experiment(builtin("fig1")).rows


@pytest.fixture(scope="module")
def fig2a_rows():
    return run_experiment(replace(builtin("fig2a"), values=FIG_SWEEP)).rows


@pytest.fixture(scope="module")
def fig2b_rows():
    return run_experiment(replace(builtin("fig2b"), values=FIG_SWEEP)).rows


def test_c1_safety_under_spam():
    adversary = AdversarySpec(Behavior.SPAM, faulty=4, spam_budget=50, knows_genuine=True)
    config = SystemConfig(50, 5, 1, Protocol.random(), seed=1)
    accepted, trials = 0, 1000
    for i in range(trials):
        cfg, schedule, failure = setup_trial(config, 6, adversary, i)
        assert len(failure.faulty_set) == 4 and not schedule[1].genuine
        trace = run_trial(cfg, schedule, failure, record=False)
        accepted += int((trace.accept_round[1][trace.correct_mask] >= 0).sum())
    check("1 safety", accepted == 0, f"{accepted} spurious acceptances in {trials} trials")


def test_c2_counting_bound_never_violated():
    violations, traces = [], 0
    rng = np.random.default_rng(2)
    for n in (64, 256, 1024):
        for t in (2, 8, 16):
            for alpha in (t, 2 * t):
                for f in (1, 4):
                    for protocol in (Protocol.random(), Protocol.ltree(4 * t)):
                        for _ in range(7):
                            fc = sample_failure_config(rng, n, t)
                            sched = [random_intro(rng, n, alpha, fc.faulty_set)]
                            cfg = SystemConfig(n, t, f, protocol, seed=int(rng.integers(2**63)))
                            trace = run_trial(cfg, sched, fc, record=False)
                            traces += 1
                            bound = counting_lower_bound(n - len(fc.faulty_set), alpha, t, f)
                            got = all_active_round(trace, "u")
                            if got is None or got < bound:
                                violations.append((n, t, alpha, f, protocol.label(), got, bound))
    assert traces >= 500
    check("2 counting bound", not violations, f"{len(violations)} violations in {traces} traces")


def _polls_until_distinct(rng, beta, t, samples):
    """Independent Monte Carlo: draw uniformly from beta coupons until t distinct seen."""
    draws = np.zeros(samples, dtype=np.int64)
    seen = np.zeros((samples, beta), dtype=bool)
    distinct = np.zeros(samples, dtype=np.int64)
    live = np.arange(samples)
    while live.size:
        pick = rng.integers(0, beta, live.size)
        draws[live] += 1
        fresh = ~seen[live, pick]
        seen[live, pick] = True
        distinct[live] += fresh
        live = live[distinct[live] < t]
    return draws


def test_c3_coupon_collector():
    rng = np.random.default_rng(3)
    errors = {}
    for beta, t in [(16, 8), (32, 8), (32, 32)]:
        mc = _polls_until_distinct(rng, beta, t, 100_000).mean()
        errors[(beta, t)] = abs(coupon_R(beta, t) - mc) / mc
    grid_ok = all(coupon_R(2 * t, t) <= 1.5 * t for t in range(1, 200)) and all(
        coupon_R(b, t) >= t for b in range(1, 120) for t in range(1, b + 1)
    )
    worst = max(errors.values())
    check("3 coupon oracle", worst < 0.02 and grid_ok, f"worst rel err {worst:.4f}, grid invariants {grid_ok}")


def test_c4a_delay_increases_with_t(fig1_rows):
    delay = [v for _, v in sorted(_metric(fig1_rows, "delay").items(), key=lambda kv: int(kv[0][1]))]
    ok = all(a < b for a, b in zip(delay, delay[1:]))
    check("4a fig1 monotone", ok, "mean delay by t " + ", ".join(f"{d:.2f}" for d in delay))


def test_c4b_second_threshold_triples_delay(fig1_rows):
    delay = _metric(fig1_rows, "delay")
    ratio = delay[("100", "2")] / delay[("100", "1")]
    check("4b fig1 t=2 vs t=1", ratio >= 3, f"delay(t=2)/delay(t=1) = {ratio:.2f}, need ≥ 3")


def test_c4c_initial_phase_dominates(fig1_rows):
    series = [
        (int(r[7].split("@")[1]), float(r[8]))
        for r in fig1_rows
        if r[7].startswith("active_count@") and r[2] == 16
    ]
    series = np.array([v for _, v in sorted(series)])
    alpha = 17
    done = int(np.argmax(series >= series[-1] - 1e-9))
    below = (series[:done] < 2 * alpha).mean()
    check("4c fig1 two phases", below >= 0.5, f"{below:.2f} of {done} rounds below 2α")


def _slope(xs, ys):
    return float(np.polyfit(np.log(xs), np.log(ys), 1)[0])


def test_c5_tree_beats_random_as_n_grows(fig2a_rows):
    rnd = _metric(fig2a_rows, "delay", "random")
    tree = _metric(fig2a_rows, "delay", "ltree64")
    ns = [int(n) for n, _ in sorted(rnd, key=lambda k: int(k[0]))]
    r = np.array([rnd[(str(n), "16")] for n in ns])
    tr = np.array([tree[(str(n), "16")] for n in ns])
    ratio = r / tr
    s_rand, s_tree = _slope(ns, r), _slope(ns, tr)
    ok = s_tree < s_rand and s_tree < 1 and all(np.diff(ratio) > 0) and ratio[-1] > 2
    check(
        "5 fig2a trend",
        ok,
        f"slopes random {s_rand:.3f} tree {s_tree:.3f}; ratios " + ", ".join(f"{x:.2f}" for x in ratio),
    )


def test_c6_random_wins_with_large_alpha(fig2b_rows):
    rnd = _metric(fig2b_rows, "delay", "random")
    tree = _metric(fig2b_rows, "delay", "ltree64")
    losses = [k[0] for k in rnd if rnd[k] > tree[k]]
    check("6 fig2b random ≤ tree", not losses, f"random slower at n={losses}" if losses else "holds at every n")


def test_c6_form_crossover_extrapolated():
    alpha = AlphaRule("sqrt_2tn")
    small = random_delay_form(128, alpha(128, 16), 16, 1).value < tree_delay_form(128, alpha(128, 16), 16, 1, 64).value
    a6 = alpha(10**6, 16)
    large = tree_delay_form(10**6, a6, 16, 1, 64).value < random_delay_form(10**6, a6, 16, 1).value
    check("5/6 form crossover", small and large, f"random form lower at 128: {small}, tree lower at 1e6: {large}")


def test_c7a_random_fan_in_concentrated():
    n, limit = 1024, 3 * (1 + math.log2(1024))
    rounds = within = 0
    for seed in range(100):
        rng = np.random.default_rng(seed)
        trace = run_trial(SystemConfig(n, 1, 1, seed=seed), [random_intro(rng, n, 2)])
        per = compute_fanin(trace).per_round_max
        rounds += per.size
        within += int((per <= limit).sum())
    frac = within / rounds
    check("7a random fan-in", frac >= 0.99, f"{frac:.4f} of {rounds} rounds ≤ {limit:g}")


def test_c7b_tree_root_load():
    n, ell, t, alpha = 1024, 64, 16, 17
    expected = n / (3 * ell)
    loads = []
    for seed in range(20):
        rng = np.random.default_rng(seed)
        fc = sample_failure_config(rng, n, t)
        trace = run_trial(
            SystemConfig(n, t, 1, Protocol.ltree(ell), seed=seed), [random_intro(rng, n, alpha, fc.faulty_set)], fc
        )
        root = [p for p in range(ell) if p not in fc.faulty_set]
        loads.append(mean_received(trace, root))
    mean = float(np.mean(loads))
    check("7b tree root load", abs(mean - expected) <= 0.15 * expected, f"mean {mean:.2f} vs {expected:.2f} ±15%")


def test_c8_perturbation_robust():
    rows = run_experiment(replace(builtin("perturb"), values=(1024,))).rows
    delay = {r[6]: float(r[8]) for r in rows if r[7] == "delay"}
    details, ok = [], True
    for proto in ("random", "ltree64"):
        base, pert = delay[proto], delay[f"{proto}+p0.05"]
        ok &= pert <= 1.5 * base and base <= 1.5 * pert
        details.append(f"{proto} {base:.1f} -> {pert:.1f}")
    check("8 perturbation", ok, "; ".join(details))


def test_c9_determinism(tmp_path):
    spec = replace(builtin("fig2a"), values=(128, 256), trials=5, metrics=("delay", "fanin"))
    digests = []
    for i in range(2):
        path = tmp_path / f"run{i}.csv"
        run_experiment(spec, csv_path=path)
        digests.append(hashlib.sha256(path.read_bytes()).hexdigest())
    check("9 determinism", digests[0] == digests[1], f"sha256 {digests[0][:16]}…")
