"""Text report of a finished or running run directory."""
from __future__ import annotations

from pathlib import Path
from typing import Optional


def parse_metrics_line(line: str) -> dict[str, float]:
    out = {}
    for part in line.split():
        key, sep, val = part.partition("=")
        if sep:
            out[key] = float(val)
    return out


def read_metrics(path) -> list[dict[str, float]]:
    lines = Path(path).read_text().splitlines()
    return [parse_metrics_line(x) for x in lines if x.startswith("ts=")]


def last_summary(league_log) -> str:
    """The newest summary block of the league log (blocks start with ``# ``)."""
    path = Path(league_log)
    if not path.exists():
        return "(no league summary yet)\n"
    blocks = path.read_text().split("\n# ")
    last = blocks[-1]
    return last if last.startswith("# ") else "# " + last


def throughput_rows(run_dir) -> list[tuple]:
    rows = []
    for path in sorted((Path(run_dir) / "metrics").glob("group-*.log")):
        entries = read_metrics(path)
        if not entries:
            continue
        last = entries[-1]
        elapsed = max(last.get("elapsed", 0.0), 1e-9)
        recv, used = last.get("recv", 0.0), last.get("used", 0.0)
        rows.append((int(last["group"]), recv / elapsed, used / elapsed,
                     used / recv if recv else 0.0, int(last["steps"]), int(recv), int(used),
                     int(last.get("stale", 0))))
    return rows


def league_report(run_dir, throughput: bool = True) -> str:
    """Payoff matrix and Elo table from the league log, then per-group throughput.

    With ``throughput=False`` the text depends only on training outcomes, so
    identical seeded runs give identical reports.
    """
    run_dir = Path(run_dir)
    out = ["league", last_summary(run_dir / "league.log").rstrip("\n")]
    if throughput:
        out.append("throughput")
        out.append(f"{'group':>5}  {'rfps':>10}  {'cfps':>10}  {'reuse':>6}  {'steps':>7}  "
                   f"{'recv':>9}  {'used':>9}  {'stale':>6}")
        for g, rfps, cfps, reuse, steps, recv, used, stale in throughput_rows(run_dir):
            out.append(f"{g:>5}  {rfps:>10.2f}  {cfps:>10.2f}  {reuse:>6.3f}  {steps:>7}  "
                       f"{recv:>9}  {used:>9}  {stale:>6}")
    return "\n".join(out) + "\n"


def frozen_model_files(run_dir) -> list[Path]:
    return sorted((Path(run_dir) / "models").glob("*.model"))


def final_summary(run_dir) -> Optional[str]:
    path = Path(run_dir) / "league.log"
    return path.read_text() if path.exists() else None
