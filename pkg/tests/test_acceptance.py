"""Acceptance suite: one PASS/FAIL line per criterion.

Run alone with ``pytest tests/test_acceptance.py -v``; the lines are
repeated in an "acceptance criteria" section at the end of the pytest
report. All randomness flows from ``SEED``, fixed before any run.
"""

import math
import os
import time

import numpy as np
import pytest

from veriq._validation import derive_seed
from veriq.adversary import LaplaceCheat, ServerResponse
from veriq.authstore import SignedTuple, draw_sketch, read_csv, sign_relation, verify_tuple
from veriq.incentives import (
    GameConfig,
    alpha_threshold_single_cloud,
    alpha_threshold_two_cloud,
    utilities_single_cloud,
    utilities_two_cloud,
)
from veriq.queryeng import Equals, avg, count, estimate_from_sketch, eval_exact, gt, select, total
from veriq.simlab import (
    CENSUS_SCHEMA,
    DEFAULT_K,
    LAPLACE_DIVISORS,
    PAPER_K,
    auc,
    census_queries,
    default_strategies,
    group_curves,
    play_best_response,
    roc_sweep,
    run_single_cloud,
    run_two_cloud,
)
from veriq.simlab.roc import workers_from_env
from veriq.verifier import ErrorRates, mcdiarmid_bound, sample_size_coefficient, show_work_audit, solve_sample_size

SEED = 2026
Z3_TWO_SIDED = 0.0026997960632601866  # P(|Z| > 3)


def report(request, n, ok, detail, extra=()):
    lines = [f"{'PASS' if ok else 'FAIL'} criterion {n}: {detail}"] + [f"    {e}" for e in extra]
    for line in lines:
        print(line)
    request.config._veriq_acceptance.extend(lines)


class _Cheat:
    kind = "cheat"
    param = ""


# ------------------------------------------------------------------ 1


def test_criterion_1_sample_size_coefficient(request):
    t0 = time.perf_counter()
    coef = sample_size_coefficient(0.01, 0.001)
    # epsilon is 1% of the result and c_tuple = max|a|; with max/avg = 100
    # the ceiling in k moves the recovered coefficient by under 1e-4
    avg_value, max_value = 1.0, 100.0
    k = solve_sample_size(0.01 * avg_value, 0.001, max_value)
    recovered = k / (max_value / avg_value) ** 2
    elapsed = time.perf_counter() - t0
    ok = abs(coef - 38004.51) <= 0.01 and abs(recovered - 38004.51) <= 0.01 and elapsed < 1.0
    report(request, 1, ok, f"coefficient {coef:.4f}, from solved k {recovered:.4f} (target 38004.51 +/- 0.01), {elapsed * 1e3:.1f} ms")
    assert ok


# ------------------------------------------------------------------ 2


def _random_two_cloud(rng):
    P = rng.uniform(1, 50)
    C = rng.uniform(0, 1) * P
    alpha = rng.uniform(0, 1)
    return GameConfig(
        price=P, cost_honest=C, cost_cheat=rng.uniform(0, 1) * C, fine=rng.uniform(0, 200),
        info_honest=(1 + alpha) * P + rng.uniform(0, 100), info_cheat=-rng.uniform(0.1, 100),
        audit_cost=rng.uniform(0, 100), alpha=alpha,
    )


def _random_single_cloud(rng):
    P = rng.uniform(1, 50)
    C = rng.uniform(0, 1) * P
    I, Ip = P + rng.uniform(0, 100), -rng.uniform(0.1, 100)
    return GameConfig(
        price=P, cost_honest=C, cost_cheat=rng.uniform(0, 1) * C, fine=rng.uniform(0, 200),
        info_honest=I, info_cheat=Ip, audit_cost=rng.uniform(0, 0.99) * (I - Ip), verify_cost=rng.uniform(0, 5),
        error_rates=ErrorRates(rng.uniform(0, 0.5), rng.uniform(0, 1)), alpha=rng.uniform(0, 1),
    )


def test_criterion_2_analytic_empirical_equivalence(request):
    t0 = time.perf_counter()
    rng = np.random.default_rng(SEED)
    n_configs, rounds = 50, 100_000
    comparisons = stochastic = 0
    misses = []
    worst = 0.0

    def compare(label, summary, expected, players):
        nonlocal comparisons, stochastic, worst
        for p in players:
            diff = abs(summary.mean[p] - expected[p])
            se = summary.se[p]
            comparisons += 1
            # a constant payoff column has an SE of float round-off; equality
            # at machine precision is a match, not a 3-SE test
            if diff <= 1e-9 * max(1.0, abs(expected[p])):
                continue
            stochastic += 1
            z = diff / se if se > 0 else math.inf
            worst = max(worst, z)
            if z > 3:
                misses.append(f"{label} {p}: |diff| = {diff:.4g}, {z:.2f} SE")

    for i in range(n_configs):
        two = _random_two_cloud(rng)
        for contract in (1, 2):
            table = utilities_two_cloud(two, contract)
            for j, profile in enumerate(table.profiles):
                strategies = tuple(_Cheat() if a == "c" else None for a in profile)
                strategies = tuple(s if s is not None else _honest() for s in strategies)
                res = run_two_cloud(None, None, two, strategies, contract, rounds, derive_seed(SEED, 2, i, contract, j), mode="modeled")
                compare(f"config {i} two-cloud C{contract} {'-'.join(profile)}", res.summary(), table.values[profile], ("O", "S1", "S2"))
        single = _random_single_cloud(rng)
        table = utilities_single_cloud(single)
        for j, act in enumerate(("h", "c")):
            strategy = _Cheat() if act == "c" else _honest()
            res = run_single_cloud(None, None, single, strategy, rounds=rounds, seed=derive_seed(SEED, 3, i, j), mode="modeled")
            compare(f"config {i} single-cloud C3 {act}", res.summary(), table.values[("alpha", act)], ("O", "S"))

    elapsed = time.perf_counter() - t0
    ok = not misses and elapsed < 300
    expected_misses = stochastic * Z3_TWO_SIDED
    report(
        request, 2, ok,
        f"{n_configs} configs per form, {comparisons} player/profile means at {rounds} rounds; "
        f"{len(misses)} beyond 3 SE (max {worst:.2f} SE), {elapsed:.1f} s",
        [f"{stochastic} comparisons differ beyond machine precision; about {expected_misses:.1f} exceedances expected by chance alone"] + misses[:10],
    )
    assert ok


def _honest():
    from veriq.adversary import Honest

    return Honest()


# ------------------------------------------------------------------ 3


def _deterrence_grid():
    for P in (10.0, 40.0):
        for c_frac in (0.4, 0.9):
            for cp_frac in (0.0, 0.5):
                for F in (0.0, 20.0, 100.0, 400.0):
                    for CA in (5.0, 40.0):
                        C = c_frac * P
                        yield dict(price=P, cost_honest=C, cost_cheat=cp_frac * C, fine=F, audit_cost=CA)


def test_criterion_3_deterrence_flip(request):
    counts = {"single_cloud": 0, "two_cloud": 0}
    failures = []
    skipped_infeasible = 0
    for base in _deterrence_grid():
        P = base["price"]
        cases = []
        for p_tn in (0.6, 0.95):
            cfg = GameConfig(**base, info_honest=3 * P + base["audit_cost"] + 10, info_cheat=-10, verify_cost=1,
                             error_rates=ErrorRates(0.1, p_tn))
            cases.append(("single_cloud", 3, cfg, alpha_threshold_single_cloud(cfg)))
        for contract in (1, 2):
            cfg = GameConfig(**base, info_honest=2 * P + 10, info_cheat=-10)
            cases.append(("two_cloud", contract, cfg, alpha_threshold_two_cloud(cfg, contract)))
        for form, contract, cfg, thr in cases:
            if not cfg.gain > 0.05 * cfg.price:
                continue
            if thr + 0.01 > 1:
                skipped_infeasible += 1
                continue
            counts[form] += 1
            for alpha, want in ((thr + 0.01, "h"), (max(0.0, thr - 0.01), "c")):
                res = play_best_response(cfg.with_alpha(alpha), form, contract if form == "two_cloud" else 1, rounds=200, seed=SEED)
                if res.actions[0] != want:
                    failures.append(f"{form} C{contract} {base} alpha={alpha:.4f}: played {res.actions[0]}, expected {want}")
    ok = not failures and min(counts.values()) >= 100
    report(
        request, 3, ok,
        f"{counts['single_cloud']} single-cloud and {counts['two_cloud']} two-cloud configs with G > 0.05P; {len(failures)} exceptions",
        [f"{skipped_infeasible} configs skipped because threshold + 0.01 exceeds 1 (no valid alpha to test)"] + failures[:10],
    )
    assert ok


# ------------------------------------------------------------------ 4


def test_criterion_4_mcdiarmid_soundness(request, census_relation):
    t0 = time.perf_counter()
    rel = census_relation
    N, k, n_sketches = rel.n, 2000, 10_000
    income, age = rel.values[:, 1], rel.values[:, 0]
    never_married = rel.values[:, 3] == 4
    # each statistic is a mean of k per-draw terms lying in a range of width c_tuple
    cases = {
        "Count(income > 40000)": (count(gt("income", 40000)), 1.0 / N, 1.0),
        "Sum(income | never married)": (total("income", Equals("marital", 4)), 1.0 / N, float(income[never_married].max())),
        "Avg(age)": (avg("age"), 1.0, float(age.max() - age.min())),
    }
    exact = {name: eval_exact(rel, q) * scale for name, (q, scale, _) in cases.items()}
    est = {name: np.empty(n_sketches) for name in cases}
    for s in range(n_sketches):
        sketch = draw_sketch(rel, k, derive_seed(SEED, 4, s))
        for name, (q, scale, _) in cases.items():
            est[name][s] = estimate_from_sketch(sketch, q) * scale
    lines, ok = [], True
    for name, (_, _, c_tuple) in cases.items():
        dev = np.abs(est[name] - exact[name])
        for eps in (0.005, 0.01, 0.02, 0.05):
            eps_abs = eps * c_tuple
            freq = float(np.mean(dev >= eps_abs))
            bound = mcdiarmid_bound(k, eps_abs, c_tuple / k, clamp=False)
            ok &= freq <= bound
            lines.append(f"{name:<28} eps={eps:<5} tail {freq:.4f} <= bound {bound:.4g}: {freq <= bound}")
    elapsed = time.perf_counter() - t0
    ok &= elapsed < 600
    report(request, 4, ok, f"{n_sketches} sketches of k={k} per query, 3 queries x 4 epsilons, {elapsed:.1f} s", lines)
    assert ok


# ------------------------------------------------------------------ 5


def _flip(tup: SignedTuple, rng) -> SignedTuple:
    field = rng.integers(0, 3)
    if field == 0:
        return SignedTuple(tup.id ^ (1 << int(rng.integers(0, 63))), tup.values, tup.mac)
    if field == 1:
        values = list(tup.values)
        j = int(rng.integers(0, len(values)))
        flipped = np.int64(values[j]) ^ np.int64(1 << int(rng.integers(0, 63))) if rng.random() < 63 / 64 else values[j] ^ ~0x7FFFFFFFFFFFFFFF
        values[j] = int(flipped)
        return SignedTuple(tup.id, tuple(values), tup.mac)
    mac = bytearray(tup.mac)
    bit = int(rng.integers(0, 8 * len(mac)))
    mac[bit // 8] ^= 1 << (bit % 8)
    return SignedTuple(tup.id, tup.values, bytes(mac))


def test_criterion_5_tamper_detection(request, census_relation, key):
    rng = np.random.default_rng(derive_seed(SEED, 5))
    rel = census_relation
    undetected = 0
    for _ in range(10_000):
        t = rel[int(rng.integers(1, rel.n + 1))]
        bad = _flip(t, rng)
        assert bad != t
        undetected += verify_tuple(bad, key)

    flagged_right = 0
    for trial in range(100):
        if rng.random() < 0.5:
            q = count(Equals("race", int(rng.integers(1, 10))))
        else:
            q = total("income", gt("income", int(rng.integers(0, 100_000))))
        work = eval_exact(rel, select(q.predicate))
        candidates = [i for i, t in enumerate(work) if q.attr is None or t.values[1] != 0]
        drop = set(rng.choice(candidates, size=int(rng.integers(1, min(5, len(candidates)) + 1)), replace=False).tolist())
        kept = [t for i, t in enumerate(work) if i not in drop]
        honest = ServerResponse(eval_exact(rel, q), 1.0, work)
        withholder = ServerResponse(len(kept) if q.attr is None else sum(t.values[1] for t in kept), 1.0, kept)
        if rng.random() < 0.5:
            flagged, expected = show_work_audit(q, withholder, honest, key, rel.schema), {"A"}
        else:
            flagged, expected = show_work_audit(q, honest, withholder, key, rel.schema), {"B"}
        flagged_right += flagged == expected
    ok = undetected == 0 and flagged_right == 100
    report(request, 5, ok, f"{10_000 - undetected}/10000 single-bit tamperings rejected; withholding server flagged alone in {flagged_right}/100 mismatches")
    assert ok


# ------------------------------------------------------------------ 6


@pytest.fixture(scope="module")
def desk_sweep(census_relation):
    t0 = time.perf_counter()
    points = roc_sweep(census_relation, census_queries(), DEFAULT_K, default_strategies(), trials=100, seed=SEED, workers=workers_from_env())
    return points, time.perf_counter() - t0


def _curve(curves, qid, k, kind, param):
    return next(v for key_, v in curves.items() if key_[:3] == (qid, k, kind) and float(key_[3]) == float(param))


def _best_point(points, fn_max, tn_min):
    hits = [p for p in points if p.p_fn <= fn_max and p.p_tn >= tn_min]
    if hits:
        return hits[0]
    # closest miss: the point with the largest p_tn among those meeting p_fn, else the lowest p_fn
    fn_ok = [p for p in points if p.p_fn <= fn_max]
    return max(fn_ok, key=lambda p: p.p_tn) if fn_ok else min(points, key=lambda p: p.p_fn)


def test_criterion_6_roc_reproduction(request, desk_sweep):
    points, elapsed = desk_sweep
    curves = group_curves(points)
    lines = []

    # (a) every cheater curve above the diagonal, measured by AUC
    below, pointwise = [], 0
    for key_, pts in curves.items():
        area = auc(pts)
        under = sum(p.p_tn < p.p_fn for p in pts)
        pointwise += under > 0
        if area <= 0.5:
            below.append((area, key_, under))
    ok_a = not below
    lines.append(f"(a) {len(curves) - len(below)}/{len(curves)} cheater curves with AUC > 0.5: {'PASS' if ok_a else 'FAIL'}")
    lines.append(f"      diagnostic: {pointwise} curves have at least one epsilon with p_tn < p_fn")
    for area, (qid, k, kind, param), n_under in sorted(below)[:8]:
        lines.append(f"      Q{qid} k={k} {kind}({param}): AUC {area:.3f}, {n_under} points below")

    # (b) AUC nonincreasing in the cheater's sample size
    violations = []
    for qid in census_queries():
        for k in DEFAULT_K:
            sizes = sorted(int(key_[3]) for key_ in curves if key_[0] == qid and key_[1] == k and key_[2] == "sample")
            areas = [auc(_curve(curves, qid, k, "sample", s)) for s in sizes]
            for (s1, a1), (s2, a2) in zip(zip(sizes, areas), zip(sizes[1:], areas[1:])):
                if a2 > a1:
                    violations.append(f"Q{qid} k={k}: AUC {a1:.3f} at k'={s1} < {a2:.3f} at k'={s2}")
    ok_b = not violations
    lines.append(f"(b) {len(violations)} increases of AUC with cheater sample size over {len(census_queries()) * len(DEFAULT_K)} (query, k) pairs: {'PASS' if ok_b else 'FAIL'}")
    lines.extend(f"      {v}" for v in violations[:8])

    # (c) operating point at the largest k against the coarsest noise, on the income-threshold count
    k_max, d = max(DEFAULT_K), LAPLACE_DIVISORS[0]
    target = _curve(curves, 2, k_max, "laplace", d)
    best = _best_point(target, 0.10, 0.85)
    ok_c = best.p_fn <= 0.10 and best.p_tn >= 0.85
    lines.append(f"(c) Q2 k={k_max} laplace({d}): best point eps={best.epsilon:.3f} p_fn={best.p_fn:.2f} p_tn={best.p_tn:.2f} (need p_fn <= 0.10, p_tn >= 0.85): {'PASS' if ok_c else 'FAIL'}")
    for qid in census_queries():
        b = _best_point(_curve(curves, qid, k_max, "laplace", d), 0.10, 0.85)
        lines.append(f"      Q{qid}: eps={b.epsilon:.3f} p_fn={b.p_fn:.2f} p_tn={b.p_tn:.2f}")

    ok_time = elapsed < 600
    lines.append(f"sweep of {len(points)} points took {elapsed:.1f} s with {workers_from_env()} worker(s)")
    ok = ok_a and ok_b and ok_c and ok_time
    report(request, 6, ok, f"desk-scale ROC sweep: (a) {'PASS' if ok_a else 'FAIL'}, (b) {'PASS' if ok_b else 'FAIL'}, (c) {'PASS' if ok_c else 'FAIL'}", lines)
    assert ok


# ------------------------------------------------------------------ 7


def test_criterion_7_full_census(request, key):
    path = os.environ.get("VERIQ_CENSUS_CSV")
    if not path:
        line = "SKIP criterion 7: VERIQ_CENSUS_CSV not set (real USCensus1990 file is not bundled)"
        print(line)
        request.config._veriq_acceptance.append(line)
        pytest.skip("VERIQ_CENSUS_CSV not set")
    schema, rows = read_csv(path)
    cols = [schema.index(a) for a in CENSUS_SCHEMA.attributes]
    rel = sign_relation(CENSUS_SCHEMA, np.asarray(rows, dtype=np.int64)[:, cols], key)
    q2 = {2: census_queries()[2]}
    strategies = [LaplaceCheat(d) for d in LAPLACE_DIVISORS]
    points = roc_sweep(rel, q2, PAPER_K, strategies, trials=100, seed=SEED, workers=workers_from_env())
    curve = _curve(group_curves(points), 2, max(PAPER_K), "laplace", LAPLACE_DIVISORS[0])
    best = _best_point(curve, 0.05, 0.90)
    ok = best.p_fn <= 0.05 and best.p_tn >= 0.90
    report(request, 7, ok, f"{rel.n} rows, Q2 k={max(PAPER_K)} laplace({LAPLACE_DIVISORS[0]}): eps={best.epsilon:.3f} p_fn={best.p_fn:.2f} p_tn={best.p_tn:.2f} (need <= 0.05, >= 0.90)")
    assert ok


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-v"]))
