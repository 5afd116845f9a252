"""Acceptance suite: one test per criterion, each reporting a PASS/FAIL line.

The 60-run grid (3 vehicle counts x 2 modes x 10 seeds, 30 s each) is computed
once per session and shared by criteria 1-4 and the mobility half of 9.
"""

import os
import subprocess
import sys
import time
from collections import Counter

import numpy as np
import pytest
from scipy import stats

from conftest import VERDICTS
from cv2xsim.core import SsrCoord, abs_index, from_abs, reserved_chain
from cv2xsim.engine import ScenarioConfig, run_sweep
from cv2xsim.mobility import LEFT, RIGHT, STRAIGHT, RoadNetwork, spawn, step_all
from cv2xsim.scheduler import SchedulerError, selection, surviving_candidates
from cv2xsim.sci import PROPOSED, WORD_BITS, SciMessage, decode_sci, encode_sci

from oracles import brute_survivors, toy_instance

SEEDS = list(range(10))
N_LIST = (25, 50, 75)
MODES = ("standard", "enhanced")
D_CMP = (100.0, 200.0, 300.0)
TH_CMP = (50, 100, 200)
ALPHA = 0.05


def verdict(num, name, ok, detail):
    line = f"criterion {num}: {'PASS' if ok else 'FAIL'} {name} ({detail})"
    print(line)
    VERDICTS.append(line)
    assert ok, line


@pytest.fixture(scope="module")
def grid():
    start = time.perf_counter()
    reports = run_sweep(ScenarioConfig(duration_s=30.0), SEEDS, MODES, N_LIST, jobs=os.cpu_count() or 1)
    elapsed = time.perf_counter() - start
    assert all(r.ok for r in reports), [r.error for r in reports if not r.ok]
    by = {(r.config.mode, r.config.n_vehicles, r.config.seed): r for r in reports}
    return by, elapsed


def paired(by, n, value):
    std = np.array([value(by[("standard", n, s)].metrics) for s in SEEDS])
    enh = np.array([value(by[("enhanced", n, s)].metrics) for s in SEEDS])
    return std, enh


def comparative(by, cells, better):
    """Per cell, a one-sided paired t-test for enhanced being worse must not reject at ALPHA;
    pooled over cells, enhanced must be significantly better.

    ``better`` is "greater" when a larger enhanced value is the improvement.
    """
    worse = "less" if better == "greater" else "greater"
    sign = 1.0 if better == "greater" else -1.0
    failures, strict, diffs = [], 0, []
    for n, (label, value) in cells:
        std, enh = paired(by, n, value)
        diffs.append(sign * (enh - std))
        p_worse = stats.ttest_rel(enh, std, alternative=worse).pvalue
        strict += stats.ttest_rel(enh, std, alternative=better).pvalue < ALPHA
        if p_worse < ALPHA:
            failures.append((n, label, round(enh.mean(), 3), round(std.mean(), 3), round(p_worse, 4)))
    per_seed = np.mean(diffs, axis=0)
    p_pooled = stats.ttest_1samp(per_seed, 0.0, alternative="greater").pvalue
    return failures, strict, p_pooled


def test_criterion_1_pdr_comparison(grid):
    by, elapsed = grid
    cells = [(n, (d, lambda m, d=d: m.pdr[d])) for n in N_LIST for d in D_CMP]
    failures, strict, p_pooled = comparative(by, cells, "greater")
    ok = not failures and p_pooled < ALPHA
    verdict(1, "PDR enhanced >= standard", ok,
            f"{len(cells) - len(failures)}/{len(cells)} cells hold, "
            f"{strict} significantly better, pooled p={p_pooled:.2g}, grid {elapsed:.0f}s; failures={failures}")


def test_criterion_2_aois_comparison(grid):
    by, _ = grid
    cells = [(n, ((d, th), lambda m, d=d, th=th: m.aois[(d, th)])) for n in N_LIST for d in D_CMP for th in TH_CMP]
    failures, strict, p_pooled = comparative(by, cells, "less")
    ok = not failures and p_pooled < ALPHA
    verdict(2, "AoIS enhanced <= standard", ok,
            f"{len(cells) - len(failures)}/{len(cells)} cells hold, "
            f"{strict} significantly better, pooled p={p_pooled:.2g}; failures={failures}")


def test_criterion_3_aois_monotone_in_threshold(grid):
    by, _ = grid
    bad = []
    for key, r in by.items():
        m = r.metrics
        for d in m.d_list:
            vals = [m.aois[(d, th)] for th in m.aoi_th_list]
            if any(v is None for v in vals):
                bad.append((key, d, "absent"))
            elif any(a < b for a, b in zip(vals, vals[1:])):
                bad.append((key, d, vals))
    verdict(3, "AoIS non-increasing in aoi_th", not bad, f"{len(by)} runs checked, violations={bad}")


def test_criterion_4_pdr_decreases_with_distance(grid):
    by, _ = grid
    rows, ok = [], True
    for mode in MODES:
        for n in N_LIST:
            near = np.mean([by[(mode, n, s)].metrics.pdr[100.0] for s in SEEDS])
            far = np.mean([by[(mode, n, s)].metrics.pdr[400.0] for s in SEEDS])
            ok &= far <= near
            rows.append(f"{mode} n={n}: {near:.2f}->{far:.2f}")
    verdict(4, "mean PDR(400) <= mean PDR(100)", ok, "; ".join(rows))


def test_criterion_5_half_duplex_divergence():
    rc, rt = 25, 20
    worst_enh, min_std, pairs = 0, rc, 0
    for x in range(1024):
        for y in range(10):
            t0 = abs_index(SsrCoord(x, y, 0))
            chains = {z: [(c.frame, c.subframe) for c in reserved_chain(SsrCoord(x, y, z), rc, rt)] for z in range(3)}
            # standard reservations repeat every rt subframes on a fixed subchannel
            std = {z: [(c.frame, c.subframe) for c in (from_abs(t0 + k * rt, z) for k in range(rc))] for z in range(3)}
            for z1 in range(3):
                for z2 in range(3):
                    if z1 == z2:
                        continue
                    pairs += 1
                    worst_enh = max(worst_enh, len(set(chains[z1]) & set(chains[z2])))
                    min_std = min(min_std, len(set(std[z1]) & set(std[z2])))
    ok = worst_enh <= -(-rc // 5) and min_std == rc
    verdict(5, "half-duplex divergence", ok,
            f"{pairs} pairs, enhanced worst {worst_enh} shared subframes, standard min {min_std}/{rc}")


def test_criterion_6_scheduler_oracle_equivalence():
    instances, mismatches, raised, stepped = 0, [], 0, 0
    for mode in MODES:
        for seed in range(600):
            rng = np.random.default_rng([seed, 6])
            cfg, db, state, now, reservations, blind = toy_instance(rng, mode)
            expected, p_exp = brute_survivors(cfg, state, now, reservations, blind)
            instances += 1
            try:
                pool, alive, p_th, _, _ = surviving_candidates(db, state, cfg, now)
            except SchedulerError:
                if expected is not None:
                    mismatches.append((mode, seed, "raised"))
                raised += 1
                continue
            got = pool.subset(alive).keys()
            stepped += p_th > cfg.p_th_init
            if expected is None or got != expected or p_th != p_exp:
                mismatches.append((mode, seed))
                continue
            sel = selection(db, state, cfg, now, rng)
            if (sel.pick_time, sel.pick.subchannel) not in expected:
                mismatches.append((mode, seed, "pick"))
    ok = instances >= 1000 and not mismatches
    verdict(6, "scheduler matches brute force", ok,
            f"{instances} instances, {stepped} raised the threshold, {raised} hit the cap, "
            f"mismatches={mismatches[:5]}")


def test_criterion_7_sci_exhaustive():
    sc, count, bad = 3, 0, []
    for rc in range(256):
        for rri in range(16):
            for mcs in range(32):
                for frl in range(6):
                    msg = SciMessage(rri, frl, mcs, 0, rc=rc)
                    word = encode_sci(msg, sc, PROPOSED)
                    count += 1
                    if not 0 <= word < 1 << WORD_BITS or decode_sci(word, sc, PROPOSED) != msg:
                        bad.append(msg)
    ok = count == 256 * 16 * 32 * 6 and not bad and WORD_BITS == 32
    verdict(7, "SCI round trip", ok, f"{count} messages, failures={bad[:3]}")


def test_criterion_8_determinism(tmp_path):
    outputs = {}
    for mode in MODES:
        for k in range(2):
            path = tmp_path / f"{mode}-{k}.csv"
            subprocess.run(
                [sys.executable, "-m", "cv2xsim.cli", "run", "--mode", mode, "--n", "75",
                 "--seed", "7", "--duration-s", "30", "--out", str(path)],
                check=True,
            )
            outputs[(mode, k)] = path.read_bytes()
    ok = all(outputs[(m, 0)] == outputs[(m, 1)] and outputs[(m, 0)] for m in MODES)
    verdict(8, "byte-identical CSV", ok, f"{len(outputs)} executions, sizes={[len(v) for v in outputs.values()]}")


def test_criterion_9_mobility_safety(grid):
    by, _ = grid
    overlaps = sum(r.diagnostics["mobility_overlaps"] for (mode, n, _), r in by.items() if n == 75)
    runs = sum(1 for (_, n, _) in by if n == 75)

    # turn statistics from longer mobility-only runs; only intersections offering all three moves
    counts, events = Counter(), 0
    for seed in SEEDS:
        rng = np.random.default_rng([seed, 9])
        world = spawn(RoadNetwork(), 75, rng)
        for _ in range(15000):
            step_all(world, 0.1, rng)
        overlaps += world.overlap_events
        for e in world.turns:
            if len(e.options) == 3:
                counts[e.choice] += 1
                events += 1
    freq = {t: counts[t] / events for t in (LEFT, RIGHT, STRAIGHT)}
    target = {LEFT: 0.25, RIGHT: 0.25, STRAIGHT: 0.5}
    ok = overlaps == 0 and events >= 10_000 and all(abs(freq[t] - target[t]) <= 0.01 for t in target)
    verdict(9, "mobility safety and turn mix", ok,
            f"{runs} engine runs + {len(SEEDS)} mobility runs, overlaps={overlaps}, "
            f"{events} three-way turns, freq={ {t: round(f, 4) for t, f in freq.items()} }")
