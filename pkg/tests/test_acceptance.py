"""The ten acceptance criteria, one test each.

Every test records ``(passed, detail)`` in ``conftest.ACCEPTANCE`` before
asserting, and the terminal summary prints one PASS/FAIL line per criterion.
Tolerances are the criteria's own and are not loosened here.
"""
import time

import numpy as np
import pytest

import msggen
import oracles
from conftest import ACCEPTANCE, CONFIGS, TESTDATA
from golden import GOLDEN
from inference import inference_equivalence
from leaguerl.bench import run_bench
from leaguerl.envs import default_spec, make_env
from leaguerl.orchestrator.evaluate import average_policy, exploitability
from leaguerl.orchestrator.launch import launch
from leaguerl.orchestrator.report import frozen_model_files, league_report
from leaguerl.policy import Family, ParamBlob
from leaguerl.pool import import_model
from leaguerl.proto import decode, encode
from leaguerl.rlmath import (HyperParams, Minibatch, gae_advantages, lambda_return,
                             ppo_loss_and_grad, vtrace_targets)
from sampling import SCHEMES, league_with_history, noise_floor, analytic, sampling_tv
from shards import run_shard_equivalence, trajectory_report
from stress import pool_stress

pytestmark = pytest.mark.acceptance

RPS = make_env(default_spec("rps"))


def record(n: int, ok: bool, detail: str) -> None:
    ACCEPTANCE[n] = (bool(ok), detail)
    assert ok, f"criterion {n}: {detail}"


def _lineage_models(run_dir, lineage="main"):
    """Frozen models of one lineage in generation order."""
    files = [f for f in frozen_model_files(run_dir) if f.name.startswith(lineage + "-")]
    return [import_model(f) for f in files]


@pytest.fixture(scope="module")
def fsp_run(tmp_path_factory):
    t0 = time.monotonic()
    handle = launch(CONFIGS / "rps_fsp.cfg", tmp_path_factory.mktemp("fsp") / "run", timeout=1200)
    return handle.run_dir, time.monotonic() - t0


@pytest.fixture(scope="module")
def selfplay_run(tmp_path_factory):
    t0 = time.monotonic()
    handle = launch(CONFIGS / "rps_selfplay.cfg", tmp_path_factory.mktemp("sp") / "run",
                    timeout=1200)
    return handle.run_dir, time.monotonic() - t0


def test_c01_fsp_reaches_nash(fsp_run):
    run_dir, seconds = fsp_run
    models = _lineage_models(run_dir)
    last10 = [m.params for m in models[-10:]]
    avg = average_policy(last10, RPS)
    expl = exploitability(avg, RPS)
    l1 = float(np.abs(avg - 1 / 3).sum())
    ok = len(models) <= 50 and len(last10) == 10 and expl < 0.05 and l1 < 0.15
    record(1, ok, f"avg of last 10 frozen: exploitability={expl:.4f} (<0.05) "
                  f"L1={l1:.4f} (<0.15) periods={len(models)} runtime={seconds:.0f}s")


def test_c02_selfplay_circulates(fsp_run, selfplay_run):
    sp_models = _lineage_models(selfplay_run[0])
    sp_expl = np.array([exploitability(m.params, RPS) for m in sp_models])
    # generation g is frozen at the end of period g + 1
    after5 = sp_expl[5:]
    frac = float(np.mean(after5 > 0.5))
    fsp_expl = np.array([exploitability(m.params, RPS) for m in _lineage_models(fsp_run[0])])
    first5, last5 = float(fsp_expl[:5].mean()), float(fsp_expl[-5:].mean())
    ok = len(after5) > 0 and frac >= 0.30 and last5 < first5
    record(2, ok, f"self-play periods>5 with exploitability>0.5: {frac:.2f} (>=0.30); "
                  f"FSP first-5 mean {first5:.3f} > last-5 mean {last5:.3f}")


def test_c03_sampling_fidelity():
    t0 = time.monotonic()
    m = league_with_history(seed=0)
    draws = 100_000
    parts, ok = [], True
    for name in ("self_play_latest", "uniform_recent_K", "pfsp", "mixture"):
        tv = sampling_tv(m, name, draws)
        floor = noise_floor(analytic(m, SCHEMES[name]), draws)
        ok &= tv < 0.01
        parts.append(f"{name}={tv:.4f} (noise floor {floor:.4f})")
    seconds = time.monotonic() - t0
    record(3, ok and seconds < 60,
           f"TV over {draws} draws, {len(m.frozen_keys)} frozen: " + ", ".join(parts)
           + f"; runtime={seconds:.0f}s")


def test_c04_kernel_oracles():
    t0 = time.monotonic()
    rng = np.random.default_rng(20240604)
    worst = 0.0
    for _ in range(1000):
        n = int(rng.integers(1, 21))
        r, v = rng.normal(size=n), rng.normal(size=n)
        dones = rng.random(n) < 0.2
        boot, gamma, lam = float(rng.normal()), float(rng.uniform(0.8, 1.0)), float(rng.uniform())
        b, t = np.log(rng.uniform(0.05, 1, n)), np.log(rng.uniform(0.05, 1, n))
        rho_bar = float(rng.uniform(0.5, 2.0))
        c_bar = float(rng.uniform(0.1, rho_bar))
        got = [lambda_return(r, v, boot, dones, gamma, lam),
               gae_advantages(r, v, boot, dones, gamma, lam),
               *vtrace_targets(b, t, r, v, boot, dones, gamma, rho_bar, c_bar)]
        want = [oracles.lambda_return(r.tolist(), v.tolist(), boot, dones.tolist(), gamma, lam),
                oracles.gae(r.tolist(), v.tolist(), boot, dones.tolist(), gamma, lam),
                *oracles.vtrace(b.tolist(), t.tolist(), r.tolist(), v.tolist(), boot,
                                dones.tolist(), gamma, rho_bar, c_bar)]
        worst = max(worst, max(float(np.max(np.abs(g - w))) for g, w in zip(got, want)))

    worst_rel = 0.0
    for k in range(100):
        family = Family(k % 2)
        n_in, n_act, n = 3, 3, int(rng.integers(2, 17))
        params = ParamBlob(family, (n_in, n_act + 1), rng.normal(0, 0.5, n_in * (n_act + 1)))
        obs = (np.eye(n_in)[rng.integers(0, n_in, n)] if family == Family.TABULAR_SOFTMAX
               else rng.normal(size=(n, n_in)))
        mb = Minibatch(obs, rng.integers(0, n_act, n), np.log(rng.uniform(0.1, 0.9, n)),
                       rng.normal(size=n), rng.normal(size=n))
        hp = HyperParams(clip_eps=0.2, vf_coef=0.5, ent_coef=0.05,
                         normalize_advantages=bool(k % 4 >= 2))
        _, grad, _ = ppo_loss_and_grad(params, None, mb, hp)
        fd = oracles.central_difference(
            lambda x: ppo_loss_and_grad(params.with_values(x), None, mb, hp)[0], params.values)
        rel = np.linalg.norm(grad - fd) / max(np.linalg.norm(grad), np.linalg.norm(fd), 1e-12)
        worst_rel = max(worst_rel, float(rel))
    seconds = time.monotonic() - t0
    record(4, worst <= 1e-10 and worst_rel <= 1e-4 and seconds < 60,
           f"max |kernel - oracle| over 1000 instances={worst:.2e} (<=1e-10); "
           f"max PPO grad rel err over 100 minibatches={worst_rel:.2e} (<=1e-4); "
           f"runtime={seconds:.0f}s")


def test_c05_shard_equivalence():
    t0 = time.monotonic()
    parts, ok = [], True
    for algo in ("ppo", "vtrace"):
        threaded, serial, concatenated = run_shard_equivalence(algo, steps=100, shards=2)
        bit, dev = trajectory_report(threaded, serial, concatenated)
        ok &= bit and len(threaded) == 100
        parts.append(f"{algo}: {len(threaded)} steps bit-identical={bit} "
                     f"max dev from single concatenated batch={dev:.1e}")
    seconds = time.monotonic() - t0
    record(5, ok and seconds < 60, "; ".join(parts) + f"; runtime={seconds:.0f}s")


def test_c06_pool_safety():
    runs = [pool_stress(n_readers=64, n_swaps=1000, seed=s) for s in range(3)]
    torn = sum(r.torn for r in runs)
    frozen = sum(r.frozen_violations for r in runs)
    errors = sum(len(r.errors) for r in runs)
    ok = (torn == 0 and frozen == 0 and errors == 0 and all(r.swaps == 1000 for r in runs)
          and all(r.regressions == 0 for r in runs))
    record(6, ok, f"3 runs x 64 readers x 1000 swaps: reads={sum(r.reads for r in runs)} "
                  f"torn={torn} frozen-key violations={frozen} reader errors={errors}")


def test_c07_remote_inference():
    checked, bad, versions = inference_equivalence(10_000, n_clients=8)
    tab_checked, tab_bad, tab_versions = inference_equivalence(
        2_000, n_clients=4, family=Family.TABULAR_SOFTMAX, seed=1)
    ok = checked == 10_000 and bad == 0 and versions > 1 and tab_bad == 0
    record(7, ok, f"{checked} linear pairs, {bad} mismatches, {versions} blob versions served; "
                  f"{tab_checked} tabular pairs, {tab_bad} mismatches")


def test_c08_protocol_round_trip():
    t0 = time.monotonic()
    rng = np.random.default_rng(8)
    bad = 0
    for _ in range(100_000):
        msg = msggen.message(rng)
        frame = encode(msg)
        out = decode(frame)
        bad += not (out.kind == msg.kind and out.correlation_id == msg.correlation_id
                    and out.payload == msg.payload and encode(out) == frame)
    pinned = dict(line.split() for line in
                  (TESTDATA / "golden_frames.txt").read_text().splitlines())
    golden_bad = sum(encode(m).hex() != pinned[name] for name, m in GOLDEN)
    seconds = time.monotonic() - t0
    record(8, bad == 0 and golden_bad == 0,
           f"100000 random messages: {bad} failures; {len(GOLDEN)} golden vectors: "
           f"{golden_bad} changed; runtime={seconds:.0f}s")


def test_c09_throughput_trend(tmp_path):
    kw = dict(duration=15.0, warmup=5.0, step_delay=0.02, train_delay=0.05, max_reuse=1,
              out_path=str(tmp_path / "bench_results.txt"), work_dir=str(tmp_path))
    four = run_bench("rps-1x1x4", **kw)
    eight = run_bench("rps-1x1x8", **kw)
    ratio = eight.rfps / four.rfps
    reuse = [four.reuse, eight.reuse]
    windowed = [four.cfps / four.rfps, eight.cfps / eight.rfps]
    ok = ratio >= 1.7 and all(0.95 <= r <= 1.0 for r in reuse)
    record(9, ok, f"rfps M_A=4 {four.rfps:.1f}, M_A=8 {eight.rfps:.1f}, ratio {ratio:.2f} "
                  f"(>=1.7); reuse used/recv {reuse[0]:.4f}, {reuse[1]:.4f} (in [0.95, 1]); "
                  f"windowed cfps/rfps {windowed[0]:.4f}, {windowed[1]:.4f}")


def test_c10_determinism(tmp_path):
    dirs = [launch(CONFIGS / "lockstep_smoke.cfg", tmp_path / f"run{i}", timeout=300).run_dir
            for i in range(2)]
    files = [frozen_model_files(d) for d in dirs]
    names_match = [f.name for f in files[0]] == [f.name for f in files[1]]
    same_bytes = names_match and all(a.read_bytes() == b.read_bytes()
                                     for a, b in zip(*files))
    reports = [league_report(d, throughput=False) for d in dirs]
    ok = len(files[0]) > 1 and same_bytes and reports[0] == reports[1]
    record(10, ok, f"{len(files[0])} frozen model files bit-identical={same_bytes}; "
                   f"league reports identical={reports[0] == reports[1]}")
