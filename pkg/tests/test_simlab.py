import json

import numpy as np
import pytest
from scipy import stats

from veriq.adversary import Honest, LaplaceCheat, SampleCheat
from veriq.authstore import write_csv
from veriq.exceptions import ConfigError
from veriq.incentives import (
    GameConfig,
    alpha_threshold_single_cloud,
    alpha_threshold_two_cloud,
    utilities_single_cloud,
    utilities_two_cloud,
)
from veriq.queryeng import count, eval_exact, gt
from veriq.simlab import (
    CENSUS_SCHEMA,
    DEFAULT_EPSILONS,
    ROC_COLUMNS,
    auc,
    best_response,
    census_queries,
    gen_census_like,
    group_curves,
    play_best_response,
    read_roc_csv,
    roc_sweep,
    run_single_cloud,
    run_two_cloud,
    write_roc_csv,
)
from veriq.verifier import EpsilonPolicy, ErrorRates, mcdiarmid_bound

SINGLE = GameConfig(
    price=10, cost_honest=8, cost_cheat=2, fine=100, info_honest=100, info_cheat=-10,
    audit_cost=50, verify_cost=1, error_rates=ErrorRates(0.1, 0.8),
)
TWO = GameConfig(price=10, cost_honest=8, cost_cheat=2, fine=100, info_honest=50, info_cheat=-20, audit_cost=30)


class Cheat:
    """Any non-honest strategy; modeled runs only look at the action."""

    kind = "cheat"
    param = ""


# -------------------------------------------------------------- single cloud


def test_honest_unverified_rounds(census_small):
    q = count(gt("income", 40000))
    res = run_single_cloud(census_small, q, SINGLE.with_alpha(0.0), Honest(), EpsilonPolicy(0.1), k=200, rounds=20, seed=1)
    assert np.all(res.net[:, 0] == 100 - 10) and np.all(res.net[:, 1] == 10 - 8)
    assert not res.checked.any()


def test_laplace_always_caught_at_zero_epsilon(census_small, key):
    q = count(gt("income", 40000))
    cfg = SINGLE.with_alpha(1.0)
    res = run_single_cloud(census_small, q, cfg, LaplaceCheat(5), EpsilonPolicy(0.0), k=200, rounds=25, seed=2, key=key)
    assert res.audited.all() and res.flagged.all()
    assert np.allclose(res.net[:, 1], -2 - 50 - 100)
    assert res.summary().p_tn == 1.0


def test_pipeline_honest_false_alarm_is_paid(census_small):
    q = count(gt("income", 40000))
    res = run_single_cloud(census_small, q, SINGLE.with_alpha(1.0), Honest(), EpsilonPolicy(0.0), k=50, rounds=30, seed=3)
    assert res.escalated.any() and not res.flagged.any()
    assert np.allclose(res.net[:, 1], 2.0)
    assert np.allclose(res.net[res.escalated, 0], 100 - 10 - 1 - 50)


def test_pipeline_needs_inputs():
    with pytest.raises(ConfigError):
        run_single_cloud(None, None, SINGLE, Honest(), rounds=5)
    with pytest.raises(ConfigError):
        run_single_cloud(None, None, SINGLE, Honest(), rounds=5, mode="psychic")
    with pytest.raises(ValueError):
        run_single_cloud(None, None, SINGLE, Honest(), rounds=0, mode="modeled")


@pytest.mark.parametrize("strategy", [Honest(), Cheat()], ids=["honest", "cheat"])
def test_single_cloud_modeled_matches_table(strategy):
    cfg = SINGLE.with_alpha(0.3)
    res = run_single_cloud(None, None, cfg, strategy, rounds=100_000, seed=5, mode="modeled")
    s = res.summary()
    act = "h" if isinstance(strategy, Honest) else "c"
    table = utilities_single_cloud(cfg)
    for player in ("O", "S"):
        assert abs(s.mean[player] - table[("alpha", act), player]) <= 3 * s.se[player] + 1e-9


# ----------------------------------------------------------------- two cloud


def test_two_cloud_both_honest(census_small):
    q = count(gt("income", 40000))
    cfg = TWO.with_alpha(0.4)
    res = run_two_cloud(census_small, q, cfg, (Honest(), Honest()), rounds=200, seed=4)
    assert not res.fines.any() and not res.escalated.any()
    answered = 1 + res.checked
    assert np.allclose(res.net[:, 0], 50 - 10 * answered)


def test_two_cloud_contract2_flags_only_cheater(census_small, key):
    q = count(gt("income", 40000))
    cfg = TWO.with_alpha(1.0)
    res = run_two_cloud(census_small, q, cfg, (Honest(), LaplaceCheat(5)), contract=2, rounds=30, seed=5, key=key)
    assert res.flagged[:, 1].all() and not res.flagged[:, 0].any()
    assert np.all(res.fines[:, 2] == -100) and np.all(res.fines[:, 1] == 0)


def test_two_cloud_contract1_fines_both(census_small):
    q = count(gt("income", 40000))
    res = run_two_cloud(census_small, q, TWO.with_alpha(1.0), (SampleCheat(50), Honest()), rounds=20, seed=6)
    assert res.escalated.all()
    assert np.all(res.fines[:, 1:] == -100)


def test_contract2_pipeline_needs_key(census_small):
    with pytest.raises(ConfigError):
        run_two_cloud(census_small, count(), TWO, (Honest(), Honest()), contract=2, rounds=2)


@pytest.mark.parametrize("contract", [1, 2])
@pytest.mark.parametrize("profile", [("h", "h"), ("h", "c"), ("c", "h"), ("c", "c")])
def test_two_cloud_modeled_matches_table(contract, profile):
    cfg = TWO.with_alpha(0.2)
    strategies = tuple(Honest() if a == "h" else Cheat() for a in profile)
    s = run_two_cloud(None, None, cfg, strategies, contract, rounds=100_000, seed=9, mode="modeled").summary()
    table = utilities_two_cloud(cfg, contract)
    for player in ("O", "S1", "S2"):
        assert abs(s.mean[player] - table[profile, player]) <= 3 * s.se[player] + 1e-9


def test_cash_is_conserved(census_small, key):
    q = count(gt("income", 40000))
    runs = [
        run_single_cloud(None, None, SINGLE.with_alpha(0.5), Cheat(), rounds=2000, seed=1, mode="modeled"),
        run_single_cloud(census_small, q, SINGLE.with_alpha(0.5), LaplaceCheat(10), EpsilonPolicy(0.1), k=300, rounds=40, seed=1, key=key),
        run_two_cloud(None, None, TWO.with_alpha(0.5), (Cheat(), Cheat()), 2, rounds=2000, seed=1, mode="modeled"),
        run_two_cloud(census_small, q, TWO.with_alpha(0.5), (Honest(), LaplaceCheat(10)), 2, rounds=40, seed=1, key=key),
        run_two_cloud(census_small, q, TWO.with_alpha(0.5), (LaplaceCheat(10), LaplaceCheat(20)), 2, rounds=40, seed=1, key=key),
    ]
    for res in runs:
        assert np.allclose(res.cash.sum(axis=1), 0.0)
        for outcome in list(res.rounds())[:10]:
            assert sum(outcome.cash.values()) == pytest.approx(0.0)


def test_runs_are_deterministic(census_small):
    q = count(gt("income", 40000))
    a = run_single_cloud(census_small, q, SINGLE.with_alpha(0.6), SampleCheat(100), EpsilonPolicy(0.1), k=100, rounds=30, seed=11)
    b = run_single_cloud(census_small, q, SINGLE.with_alpha(0.6), SampleCheat(100), EpsilonPolicy(0.1), k=100, rounds=30, seed=11)
    assert np.array_equal(a.net, b.net) and np.array_equal(a.escalated, b.escalated)
    c = run_two_cloud(None, None, TWO.with_alpha(0.3), (Cheat(), Honest()), rounds=10_000, seed=3, mode="modeled")
    d = run_two_cloud(None, None, TWO.with_alpha(0.3), (Cheat(), Honest()), rounds=10_000, seed=3, mode="modeled")
    assert np.array_equal(c.net, d.net)


def test_summary_counts_and_json():
    res = run_single_cloud(None, None, SINGLE.with_alpha(0.5), Cheat(), rounds=5000, seed=2, mode="modeled")
    s = res.summary()
    assert sum(s.outcomes.values()) == s.rounds == 5000
    assert s.audits == s.outcomes["escalated"] and s.detections == s.fines
    assert s.p_tn == pytest.approx(0.8, abs=0.03) and np.isnan(s.p_fn)
    doc = json.loads(json.dumps(s.to_json(), default=float))
    assert doc["rounds"] == 5000
    two = run_two_cloud(None, None, TWO.with_alpha(0.5), (Honest(), Honest()), rounds=1000, seed=2, mode="modeled").summary()
    assert sum(two.outcomes.values()) == 1000 and two.outcomes["mismatch"] == 0


def test_best_response_flip():
    for form, thr in (("single_cloud", alpha_threshold_single_cloud(SINGLE)), ("two_cloud", alpha_threshold_two_cloud(TWO))):
        cfg = SINGLE if form == "single_cloud" else TWO
        assert best_response(cfg.with_alpha(thr + 0.01), form) == "h"
        assert best_response(cfg.with_alpha(max(0.0, thr - 0.01)), form) == "c"
        low = play_best_response(cfg.with_alpha(max(0.0, thr - 0.01)), form, rounds=50)
        assert low.actions[0] == "c"
        assert play_best_response(cfg.with_alpha(thr + 0.01), form, rounds=50).actions[0] == "h"


# -------------------------------------------------------------------- census


def test_gen_census_bounds():
    with pytest.raises(ValueError):
        gen_census_like(0, 1)
    row = gen_census_like(1, 1)[0]
    age, income, race, marital, sex, pob = row
    assert 0 <= age <= 90 and 0 <= income <= 400_000 and 1 <= race <= 9
    assert 0 <= marital <= 4 and sex in (0, 1) and pob in (0, 1)


def test_gen_census_byte_identical(tmp_path):
    for name in ("a.csv", "b.csv"):
        write_csv(tmp_path / name, CENSUS_SCHEMA, gen_census_like(1000, 7))
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


def test_census_query_supports(census_relation):
    n = census_relation.n
    from veriq.queryeng import select

    supports = {i: len(eval_exact(census_relation, select(q.predicate))) / n for i, q in census_queries().items()}
    assert all(s > 0 for s in supports.values())
    assert supports[8] < 0.01
    assert all(s >= 0.01 for i, s in supports.items() if i != 8)


# ----------------------------------------------------------------------- roc


def test_roc_zero_epsilon_catches_noise(census_small):
    q = census_queries()[2]
    pts = roc_sweep(census_small, [q], [200], [LaplaceCheat(50)], epsilons=[0.0], trials=30, seed=1)
    assert pts[0].p_tn == 1.0


def test_roc_half_epsilon_cell_against_bound(census_relation):
    q = census_queries()[2]
    k = 1000
    pts = roc_sweep(census_relation, [q], [k], [SampleCheat(100)], epsilons=[0.5], trials=200, seed=2)
    p = eval_exact(census_relation, q) / census_relation.n
    # escalation means |p - p_hat| > 0.5 p_hat, which forces |p - p_hat| > p / 3
    assert pts[0].p_fn <= mcdiarmid_bound(k, p / 3, 1.0 / k)
    assert pts[0].p_fn <= 0.01


def test_roc_points_monotone_and_deterministic(census_small, tmp_path):
    qs = {2: census_queries()[2], 7: census_queries()[7]}
    strategies = [SampleCheat(100), LaplaceCheat(10)]
    serial = roc_sweep(census_small, qs, [100, 400], strategies, trials=20, seed=3)
    parallel = roc_sweep(census_small, qs, [100, 400], strategies, trials=20, seed=3, workers=2)
    assert serial == parallel
    assert len(serial) == 2 * 2 * 2 * len(DEFAULT_EPSILONS)
    for pts in group_curves(serial).values():
        pts = sorted(pts, key=lambda p: -p.epsilon)
        for a, b in zip(pts, pts[1:]):
            assert b.p_fn >= a.p_fn and b.p_tn >= a.p_tn
    path = tmp_path / "roc.csv"
    write_roc_csv(path, serial)
    assert path.read_text().splitlines()[0] == ",".join(ROC_COLUMNS)
    back = read_roc_csv(path)
    assert [(p.epsilon, p.p_fn, p.p_tn) for p in back] == [(p.epsilon, p.p_fn, p.p_tn) for p in serial]


def test_roc_rejects_empty_grids(census_small):
    with pytest.raises(ValueError):
        roc_sweep(census_small, [], [100], [Honest()])
    with pytest.raises(ValueError):
        roc_sweep(census_small, [count()], [100], [Honest()], epsilons=[])


def test_auc_reference_shapes():
    from veriq.simlab import RocPoint

    def pt(fn, tn):
        return RocPoint(1, 1, "x", 1, 0.0, fn, tn, 1, 0)

    assert auc([pt(0.0, 1.0)]) == 1.0
    assert auc([pt(0.5, 0.5)]) == 0.5
    assert auc([pt(0.2, 0.6), pt(0.2, 0.4)]) == pytest.approx(0.5 * 0.2 * 0.4 + 0.8 * (0.6 + 1) / 2)


def test_roc_dominance_coarse_noise(census_relation):
    q = census_queries()[2]
    wins = losses = 0
    for seed in range(30):
        pts = roc_sweep(census_relation, [q], [1000], [LaplaceCheat(5), LaplaceCheat(50)], trials=40, seed=seed)
        curves = group_curves(pts)
        a5 = auc(next(v for k, v in curves.items() if float(k[3]) == 5))
        a50 = auc(next(v for k, v in curves.items() if float(k[3]) == 50))
        wins += a5 > a50
        losses += a5 < a50
    assert stats.binomtest(wins, wins + losses, 0.5, alternative="greater").pvalue < 0.01
