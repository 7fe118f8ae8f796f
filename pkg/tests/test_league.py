import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

import oracles
from conftest import LocalPool
from leaguerl.league import (DEFAULT_ELO, SEED_KEY, EmptyCandidates, GroupConfig, HyperMgr,
                             LeagueManager, LeagueService, PayoffMatrix, RunFinished,
                             SamplingScheme, elo_expected, elo_update, opponent_weights,
                             perturb_hyper, render_summary, sample_opponent)
from leaguerl.policy import init_params
from leaguerl.proto import ErrorCode
from leaguerl.proto.messages import EndLearningPeriod, OutcomeReport, TaskRequest
from leaguerl.records import Outcome
from leaguerl.rlmath import HyperParams
from leaguerl.rpc import RpcClient, RpcError
from sampling import SCHEMES, analytic, empirical, league_with_history


def _manager(groups=None, **kw):
    groups = groups or [GroupConfig(0, total_periods=3)]
    return LeagueManager(LocalPool(), groups, init_params("tabular_softmax", (1, 3), 0.1, 0),
                         clock=lambda: 0.0, **kw)


class TestElo:
    def test_expected_is_logistic(self):
        assert elo_expected(1200, 1200) == 0.5
        assert elo_expected(1600, 1200) == pytest.approx(1 / 1.1)

    @given(st.floats(0, 3000), st.floats(0, 3000), st.sampled_from([0.0, 0.5, 1.0]))
    def test_update_conserves_total(self, a, b, score):
        a2, b2 = elo_update(a, b, score)
        assert a2 + b2 == pytest.approx(a + b, abs=1e-9)
        assert (a2 - a) * (score - elo_expected(a, b)) >= 0

    def test_non_finite_rejected(self):
        with pytest.raises(ValueError):
            elo_update(math.nan, 1200, 1.0)


class TestPayoff:
    def test_mirror_and_smoothed_winrate(self):
        p = PayoffMatrix()
        for k in "abc":
            p.add(k)
        p.record("a", "b", "win")
        p.record("a", "b", Outcome.TIE)
        p.record("b", "a", 1)
        assert p.games("a", "b") == (2, 0, 1)
        assert p.games("b", "a") == (0, 2, 1)
        assert p.winrate("a", "b") == (2 + 0.5 + 1) / (3 + 2)
        assert p.winrate("a", "c") == 0.5
        np.testing.assert_array_equal(p.wins, p.losses.T)
        np.testing.assert_array_equal(p.ties, p.ties.T)
        np.testing.assert_array_equal(p.winrates("a", ["b", "c"]),
                                      [p.winrate("a", "b"), p.winrate("a", "c")])

    def test_self_play_games_leave_elo_alone(self):
        p = PayoffMatrix()
        p.add("a")
        p.record("a", "a", "win")
        assert p.elo["a"] == DEFAULT_ELO
        assert p.games("a", "a") == (1, 1, 0)

    @given(st.lists(st.tuples(st.integers(0, 3), st.integers(0, 3), st.integers(0, 2)),
                    max_size=60))
    def test_elo_sum_conserved(self, games):
        p = PayoffMatrix()
        for k in range(4):
            p.add(str(k))
        for i, j, o in games:
            p.record(str(i), str(j), o)
        assert sum(p.elo.values()) == pytest.approx(4 * DEFAULT_ELO, abs=1e-8)


class TestWeights:
    @settings(max_examples=60)
    @given(st.integers(0, 2 ** 32 - 1), st.sampled_from(sorted(SCHEMES)))
    def test_match_oracle(self, seed, name):
        rng = np.random.default_rng(seed)
        scheme = SCHEMES[name]
        scheme = SamplingScheme(scheme.scheme, K=int(rng.integers(1, 8)),
                                pfsp_exponent=float(rng.uniform(0.5, 3)),
                                mixture_self_play_weight=float(rng.uniform()),
                                elo_sigma=scheme.elo_sigma)
        p = PayoffMatrix()
        keys = [f"k{i}" for i in range(int(rng.integers(1, 12)))]
        for k in keys + ["cur"]:
            p.add(k, float(rng.normal(1200, 60)))
        for _ in range(int(rng.integers(0, 80))):
            p.record("cur", str(rng.choice(keys)), int(rng.integers(3)))
        got = opponent_weights(p, "cur", keys, scheme)
        want = oracles.scheme_weights(scheme.scheme.value, scheme.K, scheme.pfsp_exponent,
                                      scheme.mixture_self_play_weight, scheme.elo_sigma, "cur",
                                      keys, {("cur", k): p.games("cur", k) for k in keys}, p.elo)
        assert got.keys() == want.keys()
        for k in got:
            assert got[k] == pytest.approx(want[k], abs=1e-12)
        assert sum(got.values()) == pytest.approx(1.0)

    def test_mixture_is_35_65(self):
        p = PayoffMatrix()
        for k in ("a", "b", "cur"):
            p.add(k)
        w = opponent_weights(p, "cur", ["a", "b"], SCHEMES["mixture"])
        assert w == pytest.approx({"a": 0.325, "b": 0.325, "cur": 0.35})

    def test_recent_window(self):
        p = PayoffMatrix()
        keys = [f"m:{i:04d}" for i in range(60)]
        w = opponent_weights(p, "cur", keys, SCHEMES["uniform_recent_K"])
        assert list(w) == keys[10:] and set(w.values()) == {1 / 50}

    def test_pfsp_prefers_strong_opponents(self):
        p = PayoffMatrix()
        for k in ("weak", "strong", "cur"):
            p.add(k)
        for _ in range(10):
            p.record("cur", "weak", "win")
            p.record("cur", "strong", "loss")
        w = opponent_weights(p, "cur", ["weak", "strong"], SCHEMES["pfsp"])
        assert w["strong"] > 0.9

    def test_empty_candidates(self):
        with pytest.raises(EmptyCandidates):
            opponent_weights(PayoffMatrix(), "cur", [], SCHEMES["pfsp"])
        assert opponent_weights(PayoffMatrix(), "cur", [], SCHEMES["self_play_latest"]) == \
            {"cur": 1.0}

    def test_scheme_validation(self):
        for bad in (dict(K=0), dict(pfsp_exponent=0), dict(mixture_self_play_weight=1.5),
                    dict(elo_sigma=-1.0)):
            with pytest.raises(ValueError):
                SamplingScheme(**bad)
        with pytest.raises(ValueError):
            SamplingScheme("best_response")

    def test_sample_skips_zero_weight(self):
        p = PayoffMatrix()
        for k in ("a", "b", "cur"):
            p.add(k)
        for _ in range(5):
            p.record("cur", "a", "win")
        # b's Elo-match factor underflows to zero; a's is exactly one
        p.elo["a"] = p.elo["cur"]
        p.elo["b"] = 5000.0
        rng = np.random.default_rng(0)
        draws = {sample_opponent(p, "cur", ["a", "b"], SamplingScheme("pfsp", elo_sigma=1.0), rng)
                 for _ in range(200)}
        assert draws == {"a"}


@pytest.fixture(scope="module")
def history():
    return league_with_history(n_periods=52, current_games=600, seed=3)


@pytest.mark.parametrize("name", sorted(SCHEMES))
def test_draws_fit_weights(history, name):
    scheme = SCHEMES[name]
    n = 20_000
    want = analytic(history, scheme)
    got = empirical(history, scheme, n)
    assert set(got) <= set(want)
    keys = [k for k in want if want[k] * n >= 5]
    if len(keys) < 2:
        assert got == want
        return
    obs = np.array([got.get(k, 0.0) * n for k in keys])
    exp = np.array([want[k] * n for k in keys])
    exp *= obs.sum() / exp.sum()
    assert stats.chisquare(obs, exp).pvalue > 1e-4


class TestManager:
    def test_seed_and_generation_zero(self):
        m = _manager()
        assert m.frozen_keys == [SEED_KEY]
        task = m.request_actor_task(7, 0)
        assert task.learning_model_key == "main:0000"
        assert task.opponent_model_keys == (SEED_KEY,)
        rec = m.pool.get("main:0000")
        assert rec.parent_key == SEED_KEY and not rec.frozen
        assert rec.params == m.pool.get(SEED_KEY).params

    def test_seed_put_tolerates_existing_frozen_seed(self):
        pool = LocalPool()
        blob = init_params("tabular_softmax", (1, 3), 0.1, 0)
        LeagueManager(pool, [GroupConfig(0)], blob)
        LeagueManager(pool, [GroupConfig(0)], blob)

    def test_report_errors(self):
        m = _manager()
        task = m.request_actor_task(0)
        with pytest.raises(RpcError) as err:
            m.report_outcome(task.task_id, ["win"])
        assert err.value.code == ErrorCode.BAD_REQUEST
        m.report_outcome(task.task_id, ["win", "loss"])
        with pytest.raises(RpcError) as err:
            m.report_outcome(task.task_id, ["win", "loss"])
        assert err.value.code == ErrorCode.DUPLICATE
        with pytest.raises(RpcError) as err:
            m.report_outcome(999, ["win", "loss"])
        assert err.value.code == ErrorCode.UNKNOWN_TASK
        assert m.payoff.games("main:0000", SEED_KEY) == (1, 0, 0)

    def test_outcome_for_task_issued_before_period_end_is_kept(self):
        m = _manager()
        task = m.request_actor_task(0)
        m.end_learning_period(0)
        m.report_outcome(task.task_id, ["loss", "win"])
        assert m.payoff.games("main:0000", SEED_KEY) == (0, 1, 0)

    def test_learner_task_and_rank(self):
        m = _manager()
        with pytest.raises(RpcError) as err:
            m.request_learner_task(0, rank=1)
        assert err.value.code == ErrorCode.NOT_RANK_ZERO
        assert m.request_learner_task(0).learning_model_key == "main:0000"
        with pytest.raises(RpcError) as err:
            m.request_learner_task(5)
        assert err.value.code == ErrorCode.NO_GROUP

    def test_periods_and_successors(self, tmp_path):
        m = _manager(summary_path=tmp_path / "summary.txt")
        m.request_learner_task(0)
        m.pool.put(m.pool.get("main:0000").replace(hyperparams=HyperParams(learning_rate=0.5)))
        m.payoff.elo["main:0000"] = 1300.0
        assert m.end_learning_period(0) == ("main:0001", False)
        nxt = m.pool.get("main:0001")
        assert nxt.parent_key == "main:0000" and m.pool.get("main:0000").frozen
        assert m.payoff.elo["main:0001"] == 1300.0
        assert m.end_learning_period(0) == ("main:0002", False)
        assert m.end_learning_period(0) == ("", True)
        assert m.frozen_keys == [SEED_KEY, "main:0000", "main:0001", "main:0002"]
        assert m.all_finished
        for call in (lambda: m.request_actor_task(0), lambda: m.request_learner_task(0)):
            with pytest.raises(RunFinished) as err:
                call()
            assert err.value.code == ErrorCode.RUN_FINISHED
        with pytest.raises(RpcError) as err:
            m.end_learning_period(0)
        assert err.value.code == ErrorCode.NO_PERIOD
        text = (tmp_path / "summary.txt").read_text()
        assert text.count("# period group=0") == 3 and "finished=1" in text

    def test_end_before_start(self):
        m = _manager()
        with pytest.raises(RpcError) as err:
            m.end_learning_period(0)
        assert err.value.code == ErrorCode.NO_PERIOD
        with pytest.raises(RpcError):
            m.end_learning_period(3)

    def test_group_numbering(self):
        with pytest.raises(ValueError):
            _manager([GroupConfig(1)])

    def test_exploiter_lineage(self):
        m = _manager([GroupConfig(0, "main"),
                      GroupConfig(1, "exploit", opponent_lineage="main")])
        task = m.request_actor_task(0, 1)
        assert task.learning_model_key == "exploit:0000"
        assert task.opponent_model_keys == ("main:0000",)

    def test_n_opponents(self):
        m = _manager([GroupConfig(0, n_opponents=3)])
        task = m.request_actor_task(0)
        assert len(task.opponent_model_keys) == 3
        m.report_outcome(task.task_id, ["tie"] * 4)
        assert m.payoff.games("main:0000", SEED_KEY) == (0, 0, 3)

    def test_summary_render(self):
        m = _manager()
        text = m.summary()
        assert text.startswith("payoff 1x1") and "elo" in text
        assert render_summary(m.payoff, [SEED_KEY]) == text


def test_hyper_perturbation():
    hp = HyperParams(learning_rate=1.0)
    rng = np.random.default_rng(0)
    seen = {perturb_hyper(hp, rng).learning_rate for _ in range(100)}
    assert seen == {0.8, 1.0, 1.25}
    mgr = HyperMgr(perturb=False)
    mgr.set("a", hp)
    assert mgr.successor("a") is hp
    m = _manager([GroupConfig(0, total_periods=40)], perturb_hyper=True)
    m.request_learner_task(0)
    for _ in range(30):
        m.end_learning_period(0)
    rates = {m.hyper.get(k).learning_rate for k in m.frozen_keys[1:]}
    assert len(rates) > 2


def test_service_round_trip():
    svc = LeagueService("127.0.0.1:0", _manager([GroupConfig(0, total_periods=1)])).start()
    try:
        with RpcClient(svc.endpoint) as c:
            task = c.call(TaskRequest(0, 0)).task
            assert task.learning_model_key == "main:0000"
            c.call(OutcomeReport(task.task_id, (Outcome.WIN, Outcome.LOSS)))
            with pytest.raises(RpcError) as err:
                c.call(OutcomeReport(task.task_id, (Outcome.WIN, Outcome.LOSS)))
            assert err.value.code == ErrorCode.DUPLICATE
            reply = c.call(EndLearningPeriod(0))
            assert reply == EndLearningPeriod(0, "", True)
            assert svc.finished.is_set()
            with pytest.raises(RpcError) as err:
                c.call(TaskRequest(0, 0))
            assert err.value.code == ErrorCode.RUN_FINISHED
    finally:
        svc.stop()
