from .game import (DEFAULT_ELO, EmptyCandidates, PayoffMatrix, SamplingScheme, Scheme,
                   elo_expected, elo_update, opponent_weights, sample_opponent)
from .hyper import PERTURB_FACTORS, HyperMgr, perturb_hyper
from .manager import SEED_KEY, GroupConfig, LeagueManager, RunFinished, render_summary
from .service import LeagueService
