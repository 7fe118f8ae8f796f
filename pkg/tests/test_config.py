import pytest

from conftest import CONFIGS
from leaguerl.league import Scheme
from leaguerl.orchestrator.config import ConfigError, RunConfig, load_config, parse_config
from leaguerl.policy import Family


def _err(text):
    with pytest.raises(ConfigError) as err:
        parse_config(text, "x.cfg")
    return err.value


def test_defaults():
    cfg = parse_config("")
    assert isinstance(cfg, RunConfig)
    assert cfg.env.env_name == "rps" and cfg.algo == "ppo" and cfg.hyper.max_reuse == 1
    assert len(cfg.groups) == 1 and cfg.groups[0].lineage == "main"
    assert cfg.groups[0].scheme.scheme == Scheme.UNIFORM_RECENT_K
    assert cfg.process_count == 1 + 1 + 1 + 2


def test_shipped_configs_parse():
    paths = sorted(CONFIGS.glob("*.cfg"))
    assert paths
    for path in paths:
        load_config(path)
    fsp = load_config(CONFIGS / "rps_fsp.cfg")
    assert fsp.groups[0].scheme.K == 50 and fsp.family == Family.TABULAR_SOFTMAX
    assert (fsp.M_G, fsp.M_L, fsp.M_A) == (1, 1, 4)
    assert fsp.periods <= 50 and fsp.period_steps <= 1000
    sp = load_config(CONFIGS / "rps_selfplay.cfg")
    assert sp.groups[0].scheme.scheme == Scheme.SELF_PLAY_LATEST
    assert sp.hyper == fsp.hyper


def test_full_example():
    cfg = parse_config("""
        # comment
        [run]
        seed: 4          # trailing comment
        periods: 3
        [cluster]
        M_G: 2
        M_A: 3
        inf_servers: 1
        [env]
        name: matrix
        payoff_table: 1,-1;-1,1
        [actor]
        inference: remote
        [infserver]
        model_key: main:0000
        [learner]
        algo: vtrace
        teacher_key: none
        [league]
        scheme: pfsp
        elo_sigma: 100
        [group.1]
        lineage: expl
        scheme: self_play_latest
        opponent_lineage: main
        periods: 7
        [endpoints]
        league: 127.0.0.1:9000
    """)
    assert cfg.seed == 4 and cfg.env.payoff_table == ((1.0, -1.0), (-1.0, 1.0))
    assert cfg.hyper.max_reuse == 4  # vtrace default
    assert cfg.infserver_model_key == "main:0000" and cfg.teacher_key is None
    g0, g1 = cfg.groups
    assert g0.scheme.scheme == Scheme.PFSP and g0.scheme.elo_sigma == 100 and g0.total_periods == 3
    assert (g1.lineage, g1.opponent_lineage, g1.total_periods) == ("expl", "main", 7)
    assert g1.scheme.scheme == Scheme.SELF_PLAY_LATEST
    assert cfg.endpoints == {"league": "127.0.0.1:9000"}
    assert cfg.process_count == 1 + 1 + 2 + 6 + 2


def test_vtrace_reuse_can_be_overridden():
    assert parse_config("[learner]\nalgo: vtrace\n[hyper]\nmax_reuse: 2\n").hyper.max_reuse == 2


@pytest.mark.parametrize("text,line,fragment", [
    ("seed: 1", 1, "outside"),
    ("[bogus]", 1, "unknown section"),
    ("[run]\nseeds: 1", 2, "unknown key"),
    ("[run]\nseed: x", 2, "bad value"),
    ("[run]\nseed 1", 2, "expected 'key: value'"),
    ("[run]\nseed: 1\nseed: 2", 3, "duplicate key"),
    ("[cluster]\n\nM_A: 0", 3, "M_A must be >= 1"),
    ("[env]\nname: chess", 2, "unknown env"),
    ("[hyper]\nlearning_rate: 1\ngamma: 2", 2, "gamma"),
    ("[learner]\nalgo: dqn", 2, "algo"),
    ("[actor]\ninference: remote", 2, "inf_servers"),
    ("[league]\nscheme: best", 2, "bad value"),
    ("[league]\nK: 0", 2, "K must be"),
    ("[group]\n", 1, "group sections"),
    ("[group.3]\n", None, "M_G is 1"),
    ("[cluster]\nM_G: 2\n[group.1]\nlineage: main", 4, "distinct lineages"),
    ("[endpoints]\nleague: nohost", 2, "malformed endpoint"),
    ("[endpoints]\na: 127.0.0.1:5\nb: 127.0.0.1:5", 3, "used by both"),
    ("[endpoints]\na: 127.0.0.1:5\na: 127.0.0.1:6", 3, "duplicate endpoint"),
    ("[policy]\ninit_scale: -1", 2, "init_scale"),
])
def test_errors_name_the_line(text, line, fragment):
    err = _err(text)
    assert err.line == line and fragment in str(err)
    assert str(err).startswith(f"x.cfg:{line}: " if line else "x.cfg: ")


def test_port_zero_may_repeat():
    cfg = parse_config("[endpoints]\na: 127.0.0.1:0\nb: 127.0.0.1:0\n")
    assert len(cfg.endpoints) == 2
