"""Throughput benchmarks over the full multi-process system.

Scenario names read ``<env>-<M_G>x<M_L>x<M_A>``, e.g. ``rps-1x2x8``.  The
environment step cost is simulated with a per-step sleep (``step_delay``) so
that scale-up is measurable on small machines.
"""
from __future__ import annotations

import re
import tempfile
import time
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional

from .orchestrator.launch import shutdown, start
from .orchestrator.report import read_metrics

SCENARIOS = ("rps-1x1x4", "rps-1x2x8", "grid-1x2x8")
ENV_ALIASES = {"rps": "rps", "grid": "grid_duel", "irps": "iterated_rps"}
_NAME = re.compile(r"^([a-z_]+)-(\d+)x(\d+)x(\d+)$")


@dataclass(frozen=True)
class BenchResult:
    scenario: str
    M_A: int
    M_L: int
    M_G: int
    rfps: float
    cfps: float
    duration: float
    reuse: float

    def metrics_line(self) -> str:
        return (f"ts={time.time():.3f} group=all rfps={self.rfps:.2f} cfps={self.cfps:.2f} "
                f"steps=0 scenario={self.scenario} M_A={self.M_A} M_L={self.M_L} "
                f"M_G={self.M_G} reuse={self.reuse:.4f} duration={self.duration:.2f}")

    def csv(self) -> str:
        return ",".join(str(v) for v in asdict(self).values())


CSV_HEADER = ",".join(BenchResult.__dataclass_fields__)


def parse_scenario(name: str) -> tuple[str, int, int, int]:
    m = _NAME.match(name)
    if not m or m.group(1) not in ENV_ALIASES:
        raise ValueError(f"unknown scenario {name!r}; use <env>-<G>x<L>x<A> with env in "
                         f"{sorted(ENV_ALIASES)}")
    g, l, a = (int(x) for x in m.groups()[1:])
    return ENV_ALIASES[m.group(1)], g, l, a


def scenario_config(name: str, step_delay: float, train_delay: float, max_reuse: int,
                    batch_size: int = 32, seed: int = 0) -> str:
    env, g, l, a = parse_scenario(name)
    family = "tabular_softmax" if env == "rps" else "linear_softmax"
    return f"""[run]
name: bench-{name}
seed: {seed}
periods: 1000
period_steps: 1000000
max_runtime: 100000

[cluster]
M_G: {g}
M_L: {l}
M_A: {a}
M_M: 1

[env]
name: {env}

[policy]
family: {family}
init_scale: 0.1

[learner]
train_delay: {train_delay}
metrics_interval: 0.5

[actor]
step_delay: {step_delay}

[hyper]
learning_rate: 0.01
batch_size: {batch_size}
max_reuse: {max_reuse}
"""


def _totals(run_dir: Path) -> tuple[float, float, float]:
    recv = used = 0.0
    elapsed = 0.0
    for path in (run_dir / "metrics").glob("group-*.log"):
        entries = read_metrics(path)
        if entries:
            recv += entries[-1]["recv"]
            used += entries[-1]["used"]
            elapsed = max(elapsed, entries[-1]["elapsed"])
    return recv, used, elapsed


def run_bench(scenario: str, duration: float = 30.0, warmup: float = 5.0,
              step_delay: float = 0.01, train_delay: float = 0.0, max_reuse: int = 1,
              out_path: Optional[str] = "bench_results.txt",
              work_dir: Optional[str] = None) -> BenchResult:
    """Measure rfps/cfps over ``duration`` seconds after ``warmup``."""
    env, g, l, a = parse_scenario(scenario)
    base = Path(work_dir or tempfile.mkdtemp(prefix="leaguerl-bench-"))
    base.mkdir(parents=True, exist_ok=True)
    cfg_path = base / f"{scenario}.cfg"
    cfg_path.write_text(scenario_config(scenario, step_delay, train_delay, max_reuse))
    handle = start(cfg_path, base / scenario)
    try:
        time.sleep(warmup)
        r0, u0, t0 = _totals(handle.run_dir)
        time.sleep(duration)
        r1, u1, t1 = _totals(handle.run_dir)
        if handle.live_count != len(handle.procs):
            raise RuntimeError("a process died during the benchmark; see the run logs")
    finally:
        shutdown(handle)
    dt = max(t1 - t0, 1e-9)
    result = BenchResult(scenario, a, l, g, (r1 - r0) / dt, (u1 - u0) / dt, dt,
                         u1 / r1 if r1 else 0.0)
    if out_path:
        out = Path(out_path)
        new = not out.exists()
        with open(out, "a") as fh:
            if new:
                fh.write(CSV_HEADER + "\n")
            fh.write(result.csv() + "\n")
    return result
