from .config import ConfigError, RunConfig, load_config, parse_config
from .evaluate import (EvalReport, average_policy, best_response_value, evaluate, exploitability,
                       matrix_policy, play)
from .launch import RunFailed, RunHandle, finalize, launch, model_filename, start, supervise
from .report import league_report, read_metrics
