"""Run-level metrics: moving averages, confidence intervals, stability, trace export."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import stats

TRACE_HEADER = ["episode", "step", "x", "y", "reward", "flipped"]


def fmt(x: float) -> str:
    return format(float(x), ".17g")


@dataclass
class EpisodeTrace:
    """Body positions of one episode; ``positions[0]`` is the start, rewards align with steps 1..T."""

    episode: int
    positions: np.ndarray  # (T + 1, 2)
    rewards: np.ndarray  # (T,)
    actions: np.ndarray | None = None  # (T, n_agents, action_dim)
    flipped: bool = False

    @property
    def n_steps(self) -> int:
        return len(self.rewards)

    @property
    def total_reward(self) -> float:
        return float(np.sum(self.rewards))


def moving_average(values: Sequence[float], window: int = 100) -> np.ndarray:
    """Trailing mean over the last ``window`` entries (fewer at the start)."""
    v = np.asarray(values, dtype=np.float64)
    if len(v) == 0:
        return v
    c = np.concatenate([[0.0], np.cumsum(v)])
    idx = np.arange(1, len(v) + 1)
    lo = np.maximum(0, idx - window)
    return (c[idx] - c[lo]) / (idx - lo)


def aggregate_runs(curves: Sequence[Sequence[float]]) -> tuple[np.ndarray, np.ndarray]:
    """Pointwise mean and 95% Student-t half-width across runs."""
    if len(curves) < 1:
        raise ValueError("need at least one run")
    lengths = {len(c) for c in curves}
    if len(lengths) != 1:
        raise ValueError(f"curve lengths differ: {sorted(lengths)}")
    arr = np.asarray(curves, dtype=np.float64)
    mean = arr.mean(axis=0)
    n = arr.shape[0]
    if n == 1:
        return mean, np.zeros_like(mean)
    half = stats.t.ppf(0.975, n - 1) * arr.std(axis=0, ddof=1) / np.sqrt(n)
    return mean, half


def stability_fraction(traces: Sequence[EpisodeTrace]) -> float:
    if not traces:
        raise ValueError("need at least one trace")
    return sum(not t.flipped for t in traces) / len(traces)


def export_traces_csv(traces: Sequence[EpisodeTrace], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TRACE_HEADER)
        for t in traces:
            x0, y0 = t.positions[0]
            w.writerow([t.episode, 0, fmt(x0), fmt(y0), fmt(0.0), 0])
            for k in range(t.n_steps):
                x, y = t.positions[k + 1]
                last_flip = int(t.flipped and k == t.n_steps - 1)
                w.writerow([t.episode, k + 1, fmt(x), fmt(y), fmt(t.rewards[k]), last_flip])


def read_traces_csv(path) -> list[EpisodeTrace]:
    """Parse a trace CSV back into traces (without actions)."""
    rows: dict[int, list] = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != TRACE_HEADER:
            raise ValueError(f"unexpected trace header {reader.fieldnames}")
        for r in reader:
            rows.setdefault(int(r["episode"]), []).append(r)
    traces = []
    for ep, rs in rows.items():
        rs.sort(key=lambda r: int(r["step"]))
        traces.append(
            EpisodeTrace(
                episode=ep,
                positions=np.array([[float(r["x"]), float(r["y"])] for r in rs]),
                rewards=np.array([float(r["reward"]) for r in rs[1:]]),
                flipped=any(r["flipped"] == "1" for r in rs),
            )
        )
    return traces


@dataclass
class EvalSummary:
    mean_reward: float
    stable_fraction: float
    traces: list[EpisodeTrace] = field(default_factory=list, repr=False)

    def to_dict(self) -> dict:
        return {
            "mean_reward": self.mean_reward,
            "stable_fraction": self.stable_fraction,
            "episodes": len(self.traces),
        }


def summarize(traces: Sequence[EpisodeTrace]) -> EvalSummary:
    return EvalSummary(
        mean_reward=float(np.mean([t.total_reward for t in traces])),
        stable_fraction=stability_fraction(traces),
        traces=list(traces),
    )


def _mean_ci(values: Sequence[float]) -> dict:
    mean, half = aggregate_runs([[v] for v in values])
    return {"mean": float(mean[0]), "ci95": float(half[0])}


def table_report(run_reports: Sequence[dict]) -> dict:
    """Table-1-shaped summary: per mode, reward and stability before/after malfunction.

    Each run report carries ``mode`` and optional ``before``/``after`` blocks with
    ``mean_reward`` and ``stable_fraction``.
    """
    by_mode: dict[str, list[dict]] = {}
    for r in run_reports:
        by_mode.setdefault(r["mode"], []).append(r)
    table = {}
    for mode, reports in sorted(by_mode.items()):
        row = {"runs": len(reports)}
        for phase in ("before", "after"):
            blocks = [r[phase] for r in reports if r.get(phase)]
            if not blocks:
                continue
            row[phase] = {
                "team_reward": _mean_ci([b["mean_reward"] for b in blocks]),
                "remaining_stable": _mean_ci([b["stable_fraction"] for b in blocks]),
            }
        table[mode] = row
    return table


def table_rows(table: dict) -> list[list[str]]:
    """Flatten a ``table_report`` into CSV rows."""
    header = ["mode", "phase", "team_reward_mean", "team_reward_ci95", "stable_mean", "stable_ci95"]
    rows = [header]
    for mode, row in table.items():
        for phase in ("before", "after"):
            if phase in row:
                cell = row[phase]
                rows.append(
                    [
                        mode,
                        phase,
                        fmt(cell["team_reward"]["mean"]),
                        fmt(cell["team_reward"]["ci95"]),
                        fmt(cell["remaining_stable"]["mean"]),
                        fmt(cell["remaining_stable"]["ci95"]),
                    ]
                )
    return rows


def write_rows(rows: list[list], path) -> None:
    with open(Path(path), "w", newline="") as fh:
        csv.writer(fh).writerows(rows)
