"""Command line: user-facing run/eval/exploit/report/bench plus one subcommand per
service process (modelpool, league, learner, actor, infserver)."""
from __future__ import annotations

import argparse
import dataclasses
import logging
import signal
import sys
import threading
from pathlib import Path

from .envs import default_spec
from .proto import ProtocolError


def _install_sigterm(callback) -> None:
    def handler(signum, frame):
        callback()
    signal.signal(signal.SIGTERM, handler)
    signal.signal(signal.SIGINT, handler)


def _env_spec(args):
    from .orchestrator.config import load_config
    if getattr(args, "config", None):
        spec = load_config(args.config).env
        if args.env and args.env != spec.env_name:
            spec = default_spec(args.env, seed=spec.seed)
        return spec
    return default_spec(args.env)


def seed_params(cfg):
    from .envs import make_env
    from .policy import init_params
    env = make_env(cfg.env)
    return init_params(cfg.family, (env.obs_dim, env.n_actions), cfg.init_scale, cfg.policy_seed)


def cmd_run(args) -> int:
    from .orchestrator import launch
    handle = launch(args.config, args.run_dir, timeout=args.timeout)
    print((handle.run_dir / "report.txt").read_text(), end="")
    print(f"run directory: {handle.run_dir}")
    return 0


def _pool(args):
    from .pool import PoolClient
    return PoolClient(args.model_pool, retry_for=5.0) if args.model_pool else None


def cmd_eval(args) -> int:
    from .orchestrator import evaluate
    env = _env_spec(args)
    report = evaluate(args.a, args.b, env, args.n, args.seed, run_dir=args.run_dir,
                      pool=_pool(args))
    print(report.line())
    return 0


def cmd_exploit(args) -> int:
    from .orchestrator.evaluate import exploitability, load_blob
    key, rec = load_blob(args.model, args.run_dir, _pool(args))
    print(f"model={key} env={args.env} exploitability={exploitability(rec.params, _env_spec(args)):.6f}")
    return 0


def cmd_report(args) -> int:
    from .orchestrator import league_report
    print(league_report(args.run_dir), end="")
    return 0


def cmd_bench(args) -> int:
    from .bench import run_bench
    result = run_bench(args.scenario, duration=args.duration, warmup=args.warmup,
                       step_delay=args.step_delay, train_delay=args.train_delay,
                       max_reuse=args.max_reuse, out_path=args.out)
    print(result.metrics_line())
    return 0


def cmd_export(args) -> int:
    from .pool import PoolClient, export_model
    pool = PoolClient(args.model_pool, retry_for=5.0)
    export_model(pool.get(args.key), args.out)
    return 0


def cmd_modelpool(args) -> int:
    from .pool import ModelPoolService
    svc = ModelPoolService(args.listen, args.replica, primary=not args.secondary)
    _install_sigterm(lambda: threading.Thread(target=svc.server._server.shutdown).start())
    svc.serve_forever()
    return 0


def cmd_league(args) -> int:
    from .league import LeagueManager, LeagueService
    from .orchestrator.config import load_config
    from .pool import PoolClient
    cfg = load_config(args.config)
    manager = LeagueManager(PoolClient(args.model_pool), cfg.groups, seed_params(cfg),
                            seed=cfg.seed, k_factor=cfg.k_factor,
                            perturb_hyper=cfg.perturb_hyper, summary_path=args.summary)
    svc = LeagueService(args.listen, manager).start()
    done = threading.Event()
    _install_sigterm(done.set)
    done.wait()
    svc.stop()
    manager._write_summary("final")
    return 0


def cmd_learner(args) -> int:
    from .learner import LearnerConfig, LearnerService
    if args.rank != 0:
        print("shards run as threads of the rank-0 group process; start rank 0 with "
              "--num-shards instead", file=sys.stderr)
        return 2
    listen = args.listen or ["127.0.0.1:0"]
    if len(listen) != args.num_shards:
        print(f"--num-shards {args.num_shards} needs that many --listen endpoints",
              file=sys.stderr)
        return 2
    cfg = LearnerConfig(group=args.group, league_endpoint=args.league,
                        model_pool_endpoints=args.model_pool, listen=listen, algo=args.algo,
                        batch_size=args.batch_size, max_reuse=args.max_reuse,
                        publish_interval=args.publish_interval, period_steps=args.period_steps,
                        capacity=args.capacity, seed=args.seed, lockstep=args.lockstep,
                        train_delay=args.train_delay, teacher_key=args.teacher_key,
                        metrics_path=args.metrics, metrics_interval=args.metrics_interval)
    svc = LearnerService(cfg).start()
    _install_sigterm(svc.group._finish)
    svc.run()
    return 0


def cmd_actor(args) -> int:
    from .actor import Actor, ActorConfig
    spec = _env_spec(args)
    spec = dataclasses.replace(spec, seed=spec.seed + 7919 * args.actor_id + args.incarnation)
    cfg = ActorConfig(actor_id=args.actor_id, league_endpoint=args.league,
                      learner_endpoint=args.learner, model_pool_endpoints=args.model_pool,
                      env=spec, learner_group=args.group, unroll_len=args.unroll_len,
                      param_refresh_interval=args.refresh_interval,
                      inference_mode=args.inference, infserver_endpoint=args.infserver,
                      seed=args.seed, incarnation=args.incarnation,
                      max_episodes=args.max_episodes, step_delay=args.step_delay)
    actor = Actor(cfg)
    _install_sigterm(actor.stop)
    return actor.run()


def cmd_infserver(args) -> int:
    from .infserver import InferenceServer, connect_pool
    srv = InferenceServer(args.listen, connect_pool(args.model_pool), args.model_key,
                          args.max_batch, args.flush_timeout_ms / 1000.0, args.refresh_interval)
    srv.start()
    done = threading.Event()
    _install_sigterm(done.set)
    done.wait()
    srv.stop()
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="leaguerl", description=__doc__)
    p.add_argument("--log-level", default="WARNING")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("run", help="launch a training run from a config file")
    s.add_argument("config")
    s.add_argument("--run-dir")
    s.add_argument("--timeout", type=float)
    s.set_defaults(func=cmd_run)

    s = sub.add_parser("eval", help="side-balanced match between two models")
    s.add_argument("--a", required=True, help="model file, exported key, or pool key")
    s.add_argument("--b", required=True)
    s.add_argument("--env", default="rps")
    s.add_argument("-n", type=int, default=100)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--run-dir")
    s.add_argument("--model-pool", action="append", default=[])
    s.add_argument("--config")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("exploit", help="best-response value against a model (matrix games)")
    s.add_argument("--model", required=True)
    s.add_argument("--env", default="rps")
    s.add_argument("--run-dir")
    s.add_argument("--model-pool", action="append", default=[])
    s.add_argument("--config")
    s.set_defaults(func=cmd_exploit)

    s = sub.add_parser("report", help="payoff, Elo and throughput of a run directory")
    s.add_argument("run_dir")
    s.set_defaults(func=cmd_report)

    s = sub.add_parser("bench", help="throughput benchmark, e.g. rps-1x1x4")
    s.add_argument("scenario")
    s.add_argument("--duration", type=float, default=30.0)
    s.add_argument("--warmup", type=float, default=5.0)
    s.add_argument("--step-delay", type=float, default=0.01)
    s.add_argument("--train-delay", type=float, default=0.0)
    s.add_argument("--max-reuse", type=int, default=1)
    s.add_argument("--out", default="bench_results.txt")
    s.set_defaults(func=cmd_bench)

    s = sub.add_parser("export", help="write a pool record to a model file")
    s.add_argument("--model-pool", action="append", required=True)
    s.add_argument("--key", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_export)

    s = sub.add_parser("modelpool", help="model pool replica service")
    s.add_argument("--listen", required=True)
    s.add_argument("--replica", action="append", default=[],
                   help="secondary replica endpoint to forward writes to")
    s.add_argument("--secondary", action="store_true")
    s.set_defaults(func=cmd_modelpool)

    s = sub.add_parser("league", help="league manager service")
    s.add_argument("--listen", required=True)
    s.add_argument("--model-pool", action="append", required=True)
    s.add_argument("--config", required=True)
    s.add_argument("--summary")
    s.set_defaults(func=cmd_league)

    s = sub.add_parser("learner", help="learner group service")
    s.add_argument("--group", type=int, default=0)
    s.add_argument("--rank", type=int, default=0)
    s.add_argument("--num-shards", type=int, default=1)
    s.add_argument("--league", required=True)
    s.add_argument("--model-pool", action="append", required=True)
    s.add_argument("--listen", action="append", default=[])
    s.add_argument("--algo", choices=("ppo", "vtrace"), default="ppo")
    s.add_argument("--batch-size", type=int)
    s.add_argument("--max-reuse", type=int)
    s.add_argument("--publish-interval", type=int, default=1)
    s.add_argument("--period-steps", type=int, default=1000)
    s.add_argument("--capacity", type=int, default=4096)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--lockstep", action="store_true")
    s.add_argument("--train-delay", type=float, default=0.0)
    s.add_argument("--teacher-key")
    s.add_argument("--metrics")
    s.add_argument("--metrics-interval", type=float, default=1.0)
    s.set_defaults(func=cmd_learner)

    s = sub.add_parser("actor", help="rollout worker")
    s.add_argument("--actor-id", type=int, default=0)
    s.add_argument("--group", type=int, default=0)
    s.add_argument("--learner", required=True)
    s.add_argument("--league", required=True)
    s.add_argument("--model-pool", action="append", required=True)
    s.add_argument("--env", default="rps")
    s.add_argument("--config")
    s.add_argument("--unroll-len", type=int)
    s.add_argument("--inference", choices=("local", "remote"), default="local")
    s.add_argument("--infserver")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--incarnation", type=int, default=0)
    s.add_argument("--refresh-interval", type=int, default=1)
    s.add_argument("--max-episodes", type=int)
    s.add_argument("--step-delay", type=float, default=0.0)
    s.set_defaults(func=cmd_actor)

    s = sub.add_parser("infserver", help="batched inference service")
    s.add_argument("--listen", required=True)
    s.add_argument("--model-pool", action="append", required=True)
    s.add_argument("--model-key", default="latest:main")
    s.add_argument("--max-batch", type=int, default=32)
    s.add_argument("--flush-timeout-ms", type=float, default=2.0)
    s.add_argument("--refresh-interval", type=float, default=0.5)
    s.set_defaults(func=cmd_infserver)
    return p


def main(argv=None) -> int:
    from .orchestrator.config import ConfigError
    from .orchestrator.launch import RunFailed
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=args.log_level.upper(),
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ConfigError, RunFailed, FileNotFoundError, ValueError, ProtocolError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
