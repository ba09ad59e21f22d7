import copy
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from riskbid import (
    ExperimentConfig,
    InvalidInputError,
    LinearBidder,
    ReplayMetrics,
    SweepPoint,
    VaRBidder,
    cp_profit,
    dominance,
    replay_bids,
    run_experiment,
    select_model,
    sweep,
)
from riskbid.evaluation import DEFAULT_ALPHAS, DEFAULT_BUDGETS, DEFAULT_LAMBDAS, DEFAULT_PHIS, BudgetSpec


def point(profit, cost, alpha=0.0):
    m = ReplayMetrics.from_counts(bids=1, wins=1, clicks=0, cost=cost, v=1.0, records_consumed=1)
    m.profit = profit
    return SweepPoint("VaR", alpha, 1.0, m)


points_st = st.lists(
    st.tuples(st.integers(-50, 50).map(float), st.integers(0, 50).map(float)), min_size=1, max_size=25
)


class TestCpProfit:
    def test_lambda_zero(self):
        assert cp_profit(12.5, 3.0, 0.0) == 12.5

    def test_arithmetic(self):
        assert cp_profit(10.0, 5.0, 0.4) == 8.0

    def test_negative_cost(self):
        with pytest.raises(InvalidInputError):
            cp_profit(1.0, -1.0, 0.2)

    def test_default_lambdas(self):
        assert DEFAULT_LAMBDAS == (0.0, 0.2, 0.4)


class TestSelectModel:
    def test_lambda_zero_max_profit(self):
        pts = [point(5, 1), point(9, 20), point(7, 2)]
        assert select_model(pts, 0.0) is pts[1]

    def test_tie_prefers_cheaper(self):
        pts = [point(10, 10), point(8, 5)]
        assert select_model(pts, 0.4) is pts[1]

    def test_empty(self):
        with pytest.raises(InvalidInputError):
            select_model([], 0.0)

    @given(points_st, st.sampled_from([0.0, 0.2, 0.4]))
    @settings(max_examples=100)
    def test_brute_force(self, raw, lam):
        pts = [point(p, c) for p, c in raw]
        best = select_model(pts, lam)
        scores = [p.profit - lam * p.cost for p in pts]
        top = max(scores)
        assert best.profit - lam * best.cost == top
        assert best.cost == min(p.cost for p, s in zip(pts, scores) if s == top)

    @given(points_st, st.sampled_from([0.2, 0.4]))
    @settings(max_examples=100)
    def test_selected_never_strictly_dominated(self, raw, lam):
        pts = [point(p, c) for p, c in raw]
        best = select_model(pts, lam)
        assert not any(p.profit > best.profit and p.cost < best.cost for p in pts)

    @given(points_st, st.floats(-100, 100, allow_nan=False), st.sampled_from([0.0, 0.2, 0.4]))
    @settings(max_examples=100)
    def test_invariant_to_profit_shift(self, raw, shift, lam):
        shift = float(int(shift))
        pts = [point(p, c) for p, c in raw]
        shifted = [point(p + shift, c) for p, c in raw]
        assert pts.index(select_model(pts, lam)) == shifted.index(select_model(shifted, lam))


class TestDominance:
    def test_single(self):
        assert dominance([point(1, 1)]) == [False]

    def test_definition(self):
        assert dominance([point(10, 5), point(8, 6)]) == [False, True]

    def test_equal_points_do_not_dominate(self):
        assert dominance([point(3, 3), point(3, 3)]) == [False, False]

    @given(points_st)
    @settings(max_examples=100)
    def test_quadratic_oracle(self, raw):
        pts = [point(p, c) for p, c in raw]
        want = []
        for i, a in enumerate(pts):
            want.append(any(
                j != i and b.profit >= a.profit and b.cost <= a.cost and (b.profit > a.profit or b.cost < a.cost)
                for j, b in enumerate(pts)
            ))
        assert dominance(pts) == want


class TestSweep:
    def test_lr_ignores_alpha(self, small_model, small_data):
        b = LinearBidder(small_model, v=100.0).fit()
        pts = sweep(b, small_data.log[:500], alphas=(-1, 0, 1), phis=(0.5, 1.0))
        assert [(p.alpha, p.phi) for p in pts] == [(0.0, 0.5), (0.0, 1.0)]

    def test_single_cell_is_one_replay(self, small_model, small_data):
        log = small_data.log[:500]
        b = VaRBidder(small_model, v=100.0, alpha=0.3, m_bins=30, s2_bins=30).fit(log.X)
        (p,) = sweep(b, log, alphas=(0.3,), phis=(1.0,))
        assert p.metrics == replay_bids(b.predict(log.X), log.clicks, log.prices, 100.0)

    def test_parallel_equals_serial(self, small_model, small_data):
        log = small_data.log[:1000]
        b = VaRBidder(small_model, v=100.0, m_bins=30, s2_bins=30).fit(log.X)
        a = sweep(b, log, alphas=DEFAULT_ALPHAS, phis=(0.5, 1, 2), n_jobs=1)
        c = sweep(b, log, alphas=DEFAULT_ALPHAS, phis=(0.5, 1, 2), n_jobs=4)
        assert [p.to_dict() for p in a] == [p.to_dict() for p in c]
        assert b.alpha == 0.0

    def test_empty_grid(self, small_model, small_data):
        with pytest.raises(InvalidInputError):
            sweep(LinearBidder(small_model, v=1.0).fit(), small_data.log[:10], alphas=(), phis=(1.0,))

    def test_var_cloud_single_peak(self):
        # profit against phi rises and then falls for a truth-telling family
        from riskbid import BayesianLogisticRegression, SyntheticSpec, generate_synthetic
        from riskbid.simulator import click_value_from_training

        data = generate_synthetic(SyntheticSpec(n_records=60_000, n_fields=4, field_cardinality=100), seed=8)
        train, test = data.log[:40_000], data.log[40_000:]
        model = BayesianLogisticRegression(eta=0.01).fit(train.X, train.clicks)
        v = click_value_from_training(train)
        b = VaRBidder(model, v=v, m_bins=100, s2_bins=100).fit(train.X)
        phis = [2.0 ** k for k in range(-4, 5)]
        pts = sweep(b, test, alphas=(0.0,), phis=phis)
        profit = np.array([p.profit for p in pts])
        peak = int(np.argmax(profit))
        assert 0 < peak < len(phis) - 1
        assert np.all(np.diff(profit[peak:]) < 0)

    def test_point_round_trip(self):
        p = point(3.0, 2.0)
        assert SweepPoint.from_dict(p.to_dict()) == p


class TestConfig:
    def test_defaults(self):
        cfg = ExperimentConfig()
        assert cfg.alphas == (-2.0, -1.0, -0.5, -0.2, 0.0, 0.2, 0.5, 1.0, 2.0)
        assert len(DEFAULT_PHIS) == 13 and DEFAULT_PHIS[0] == 2 ** -6 and DEFAULT_PHIS[-1] == 2 ** 6
        assert DEFAULT_BUDGETS == (None,) + tuple(Fraction(1, 2 ** k) for k in range(1, 6))

    def test_seed_required(self):
        with pytest.raises(InvalidInputError, match="seed"):
            ExperimentConfig().validate()

    def test_empty_strategies(self):
        with pytest.raises(InvalidInputError, match="strategy"):
            ExperimentConfig(seed=1, strategies=()).validate()

    def test_ini_with_overrides(self, tmp_path):
        p = tmp_path / "c.ini"
        p.write_text("[model]\neta = 0.05\n[strategies]\nalphas = -1, 1/2\nstrategies = lr, var\n"
                     "[evaluation]\nbudgets = none, 1/4\n[run]\nseed = 3\n")
        cfg = ExperimentConfig.from_ini(p, {"eta": "0.2", "seed": None})
        assert (cfg.eta, cfg.seed, cfg.alphas, cfg.strategies) == (0.2, 3, (-1.0, 0.5), ("LR", "VaR"))
        assert cfg.budgets == (None, Fraction(1, 4))

    def test_unknown_key(self, tmp_path):
        p = tmp_path / "c.ini"
        p.write_text("[model]\nlearning_rate = 1\n")
        with pytest.raises(InvalidInputError, match="unknown config key"):
            ExperimentConfig.from_ini(p)

    def test_budget_spec(self):
        spec = BudgetSpec(base=64.0)
        assert spec.budgets() == [32.0, 16.0, 8.0, 4.0, 2.0]
        with pytest.raises(InvalidInputError):
            BudgetSpec(fractions=(Fraction(3, 2),))

    def test_digest_ignores_location_and_workers(self):
        a = ExperimentConfig(seed=1, artifacts="x", n_jobs=2)
        b = ExperimentConfig(seed=1, artifacts="y", n_jobs=8)
        assert a.digest() == b.digest() != ExperimentConfig(seed=2).digest()


@pytest.fixture(scope="module")
def report(small_data):
    log = small_data.log
    cfg = ExperimentConfig(seed=5, m_bins=30, s2_bins=30, bid_steps=100, alphas=(-1.0, 0.0, 1.0),
                           phis=(0.5, 1.0, 2.0), budgets=(None, Fraction(1, 4)))
    return run_experiment(cfg, log[:4000], log[4000:])


class TestRunExperiment:

    def test_structure(self, report):
        assert report["schema_version"] == 1
        sels = report["selections"]
        assert len(sels) == 2 * 3 * 3
        assert {s["kind"] for s in sels} == {"LR", "VaR", "RMP"}
        assert {s["budget_fraction"] for s in sels} == {None, "1/4"}

    def test_lr_without_budget_is_truth_telling(self, report):
        lr = [p for p in report["points"] if p["kind"] == "LR" and p["budget_fraction"] is None]
        assert [(p["alpha"], p["phi"]) for p in lr] == [(0.0, 1.0)]

    def test_budgeted_test_cost_within_budget(self, report):
        for s in report["selections"]:
            if s["budget_fraction"] is not None:
                assert s["test"]["cost"] <= s["test"]["budget"]

    def test_stage_errors_are_labelled(self, small_data):
        log = small_data.log
        with pytest.raises(InvalidInputError, match=r"^\[fit-market\] unknown market"):
            run_experiment(ExperimentConfig(seed=1, market="weibull"), log[:100], log[100:200])
        bad = copy.deepcopy(log[:100])
        bad.clicks[:] = 0
        with pytest.raises(InvalidInputError, match="no clicks"):
            run_experiment(ExperimentConfig(seed=1), bad, log[100:200])
