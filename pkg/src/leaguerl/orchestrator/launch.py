"""Local multi-process launch and supervision of a training run.

Start order: model-pool replicas, league manager, learner groups, inference
servers, actors.  Crashed actors are restarted with a new incarnation number;
a crashed pool, league or learner stops the whole run.
"""
from __future__ import annotations

import logging
import os
import shutil
import signal
import socket
import subprocess
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from ..pool import PoolClient, export_model
from .config import ConfigError, RunConfig, load_config

log = logging.getLogger(__name__)

ACTOR_RESTART_DELAY = 0.5


class RunFailed(RuntimeError):
    pass


def model_filename(key: str) -> str:
    return key.replace(":", "-") + ".model"


def _free_ports(host: str, n: int) -> list[int]:
    socks = []
    try:
        for _ in range(n):
            s = socket.socket()
            s.bind((host, 0))
            socks.append(s)
        return [s.getsockname()[1] for s in socks]
    finally:
        for s in socks:
            s.close()


def plan_endpoints(cfg: RunConfig) -> dict[str, str]:
    """Every listening role mapped to ``host:port``; explicit ones win."""
    roles = [f"pool.{i}" for i in range(cfg.M_M)] + ["league"]
    roles += [f"learner.{g}.{r}" for g in range(cfg.M_G) for r in range(cfg.M_L)]
    roles += [f"infserver.{g}.{i}" for g in range(cfg.M_G) for i in range(cfg.inf_servers)]
    unknown = set(cfg.endpoints) - set(roles)
    if unknown:
        raise ConfigError(f"endpoints for unknown roles: {sorted(unknown)}")
    missing = [r for r in roles if cfg.endpoints.get(r, f"x:0").rpartition(":")[2] == "0"]
    ports = iter(_free_ports(cfg.host, len(missing)))
    out = {}
    for role in roles:
        out[role] = cfg.endpoints[role] if role not in missing else f"{cfg.host}:{next(ports)}"
    taken: dict[str, str] = {}
    for role, ep in out.items():
        if ep in taken:
            raise ConfigError(f"endpoint {ep} assigned to both {taken[ep]} and {role}")
        taken[ep] = role
    return out


@dataclass
class Proc:
    name: str
    argv: list
    role: str
    popen: Optional[subprocess.Popen] = None
    incarnation: int = 0
    restarts: int = 0
    log_path: Optional[Path] = None
    exit_code: Optional[int] = None
    group: Optional[int] = None


@dataclass
class RunHandle:
    run_dir: Path
    cfg: RunConfig
    endpoints: dict
    procs: list = field(default_factory=list)

    def by_role(self, role: str) -> list[Proc]:
        return [p for p in self.procs if p.role == role]

    @property
    def live_count(self) -> int:
        return sum(1 for p in self.procs if p.popen is not None and p.popen.poll() is None)


def _cli() -> list:
    return [sys.executable, "-m", "leaguerl"]


def build_processes(cfg: RunConfig, config_path: Path, run_dir: Path,
                    eps: dict[str, str]) -> list[Proc]:
    pools = [eps[f"pool.{i}"] for i in range(cfg.M_M)]
    pool_flags = sum((["--model-pool", p] for p in pools), [])
    procs = []
    for i in range(cfg.M_M):
        argv = _cli() + ["modelpool", "--listen", pools[i]]
        if i == 0:
            argv += sum((["--replica", p] for p in pools[1:]), [])
        else:
            argv += ["--secondary"]
        procs.append(Proc(f"pool-{i}", argv, "pool"))
    procs.append(Proc("league", _cli() + [
        "league", "--listen", eps["league"], "--config", str(config_path),
        "--summary", str(run_dir / "league.log")] + pool_flags, "league"))
    for g in range(cfg.M_G):
        listen = sum((["--listen", eps[f"learner.{g}.{r}"]] for r in range(cfg.M_L)), [])
        argv = _cli() + ["learner", "--group", str(g), "--rank", "0",
                         "--num-shards", str(cfg.M_L), "--league", eps["league"],
                         "--algo", cfg.algo, "--publish-interval", str(cfg.publish_interval),
                         "--period-steps", str(cfg.period_steps), "--capacity", str(cfg.capacity),
                         "--seed", str(cfg.seed), "--train-delay", str(cfg.train_delay),
                         "--metrics", str(run_dir / "metrics" / f"group-{g}.log"),
                         "--metrics-interval", str(cfg.metrics_interval)] + listen + pool_flags
        if cfg.lockstep:
            argv.append("--lockstep")
        if cfg.teacher_key:
            argv += ["--teacher-key", cfg.teacher_key]
        procs.append(Proc(f"learner-{g}", argv, "learner", group=g))
    for g in range(cfg.M_G):
        # one model per server, so each group gets its own servers
        key = cfg.infserver_model_key or f"latest:{cfg.groups[g].lineage}"
        for i in range(cfg.inf_servers):
            procs.append(Proc(f"infserver-{g}-{i}", _cli() + [
                "infserver", "--listen", eps[f"infserver.{g}.{i}"], "--model-key", key,
                "--max-batch", str(cfg.max_batch), "--flush-timeout-ms", str(cfg.flush_timeout_ms),
                "--refresh-interval", str(cfg.refresh_interval)] + pool_flags, "infserver"))
    for g in range(cfg.M_G):
        for r in range(cfg.M_L):
            for a in range(cfg.M_A):
                actor_id = (g * cfg.M_L + r) * cfg.M_A + a
                argv = _cli() + [
                    "actor", "--actor-id", str(actor_id), "--group", str(g),
                    "--learner", eps[f"learner.{g}.{r}"], "--league", eps["league"],
                    "--env", cfg.env.env_name, "--config", str(config_path),
                    "--inference", cfg.inference, "--seed", str(cfg.seed),
                    "--refresh-interval", str(cfg.param_refresh_interval),
                    "--step-delay", str(cfg.step_delay)] + pool_flags
                if cfg.unroll_len is not None:
                    argv += ["--unroll-len", str(cfg.unroll_len)]
                if cfg.inference == "remote":
                    argv += ["--infserver", eps[f"infserver.{g}.{actor_id % cfg.inf_servers}"]]
                procs.append(Proc(f"actor-{actor_id}", argv, "actor", group=g))
    return procs


def _wait_listening(endpoint: str, proc: Proc, timeout: float = 20.0) -> None:
    host, _, port = endpoint.rpartition(":")
    deadline = time.monotonic() + timeout
    while time.monotonic() < deadline:
        if proc.popen.poll() is not None:
            raise RunFailed(f"{proc.name} exited with {proc.popen.returncode} during startup; "
                            f"see {proc.log_path}")
        try:
            with socket.create_connection((host, int(port)), timeout=0.5):
                return
        except OSError:
            time.sleep(0.05)
    raise RunFailed(f"{proc.name} did not start listening on {endpoint}")


def _spawn(proc: Proc, run_dir: Path) -> None:
    proc.log_path = run_dir / "logs" / f"{proc.name}.log"
    argv = list(proc.argv)
    if proc.role == "actor":
        argv += ["--incarnation", str(proc.incarnation)]
    fh = open(proc.log_path, "a")
    env = dict(os.environ, PYTHONUNBUFFERED="1")
    proc.popen = subprocess.Popen(argv, stdout=fh, stderr=subprocess.STDOUT, env=env,
                                  start_new_session=True)
    fh.close()


def _stop(proc: Proc, sig=signal.SIGTERM, wait: float = 10.0) -> None:
    p = proc.popen
    if p is None or p.poll() is not None:
        return
    p.send_signal(sig)
    try:
        p.wait(wait)
    except subprocess.TimeoutExpired:
        p.kill()
        p.wait()


def start(config_path, run_dir=None) -> RunHandle:
    config_path = Path(config_path)
    cfg = load_config(config_path)
    run_dir = Path(run_dir or cfg.run_dir or Path("runs") / cfg.name)
    eps = plan_endpoints(cfg)  # conflicts surface here, before any spawn
    if run_dir.exists():
        shutil.rmtree(run_dir)
    for sub in ("logs", "metrics", "models"):
        (run_dir / sub).mkdir(parents=True, exist_ok=True)
    shutil.copy(config_path, run_dir / "config.txt")
    (run_dir / "endpoints.txt").write_text("".join(f"{k} {v}\n" for k, v in eps.items()))
    handle = RunHandle(run_dir, cfg, eps,
                       build_processes(cfg, run_dir / "config.txt", run_dir, eps))
    try:
        listen = {"pool": lambda p: eps[f"pool.{p.name.split('-')[1]}"],
                  "league": lambda p: eps["league"],
                  "learner": lambda p: eps[f"learner.{p.name.split('-')[1]}.0"],
                  "infserver": lambda p: eps["infserver." + ".".join(p.name.split("-")[1:])]}
        # secondaries first so the primary can forward to them
        order = sorted(handle.by_role("pool"), key=lambda p: p.name == "pool-0")
        order += handle.by_role("league") + handle.by_role("learner") + handle.by_role("infserver")
        for proc in order:
            _spawn(proc, run_dir)
            _wait_listening(listen[proc.role](proc), proc)
        for proc in handle.by_role("actor"):
            _spawn(proc, run_dir)
    except BaseException:
        shutdown(handle)
        raise
    return handle


def supervise(handle: RunHandle, poll: float = 0.1, timeout: Optional[float] = None) -> None:
    """Run until every learner group finishes; restart crashed actors."""
    timeout = handle.cfg.max_runtime if timeout is None else timeout
    deadline = time.monotonic() + timeout
    while True:
        for proc in handle.procs:
            if proc.exit_code is not None:
                continue
            code = proc.popen.poll()
            if code is None:
                continue
            if proc.role == "actor":
                if code == 0:
                    proc.exit_code = 0
                    continue
                learner_alive = any(p.popen.poll() is None for p in handle.by_role("learner")
                                    if p.group == proc.group)
                if not learner_alive:
                    proc.exit_code = code
                    continue
                log.warning("%s exited with %s, restarting", proc.name, code)
                time.sleep(ACTOR_RESTART_DELAY)
                proc.incarnation += 1
                proc.restarts += 1
                _spawn(proc, handle.run_dir)
                continue
            proc.exit_code = code
            if code != 0 or proc.role != "learner":
                raise RunFailed(f"{proc.name} exited with {code}; see {proc.log_path}")
        if all(p.exit_code is not None for p in handle.by_role("learner")):
            return
        if time.monotonic() > deadline:
            raise RunFailed(f"run exceeded {timeout:.0f}s")
        time.sleep(poll)


def finalize(handle: RunHandle, actor_grace: float = 30.0) -> str:
    """Let actors drain, export frozen models, stop services, write the report."""
    from .report import league_report
    deadline = time.monotonic() + actor_grace
    for proc in handle.by_role("actor"):
        remaining = max(deadline - time.monotonic(), 0.1)
        try:
            proc.popen.wait(remaining)
        except subprocess.TimeoutExpired:
            _stop(proc)
    pool = PoolClient([handle.endpoints["pool.0"]], retry_for=5.0)
    try:
        for entry in pool.list():
            if entry.frozen:
                export_model(pool.get(entry.model_key),
                             handle.run_dir / "models" / model_filename(entry.model_key))
    finally:
        pool.close()
    for role in ("infserver", "league", "pool"):
        for proc in handle.by_role(role):
            _stop(proc)
    report = league_report(handle.run_dir)
    (handle.run_dir / "report.txt").write_text(report)
    return report


def shutdown(handle: RunHandle) -> None:
    for role in ("actor", "infserver", "learner", "league", "pool"):
        for proc in handle.by_role(role):
            _stop(proc, wait=5.0)


def launch(config_path, run_dir=None, timeout: Optional[float] = None) -> RunHandle:
    """Start, supervise to completion, and finalize a run."""
    handle = start(config_path, run_dir)
    try:
        supervise(handle, timeout=timeout)
        finalize(handle)
    except BaseException:
        shutdown(handle)
        raise
    return handle
