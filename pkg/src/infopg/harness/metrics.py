"""Per-epoch metrics: one JSON object per line plus a CSV with the same columns."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from ..mi import bound_arrays

FIELDS = (
    "epoch",
    "per_agent_reward",
    "team_reward",
    "episode_length",
    "mi_midpoint",
    "mi_lower",
    "mi_upper",
    "wall_clock_seconds",
)


@dataclass
class EpochMetrics:
    epoch: int
    per_agent_reward: list[float]
    team_reward: float
    episode_length: float
    mi_midpoint: float | None = None
    mi_lower: float | None = None
    mi_upper: float | None = None
    wall_clock_seconds: float | None = None

    def to_dict(self) -> dict:
        return asdict(self)


def epoch_metrics(epoch: int, ep_rewards: np.ndarray, lengths: np.ndarray, mi: tuple | None, seconds: float | None) -> EpochMetrics:
    per_agent = [float(x) for x in ep_rewards.mean(axis=0)]
    lo = hi = mid = None
    if mi is not None:
        mid, lo, hi = mi
    return EpochMetrics(epoch, per_agent, float(math.fsum(per_agent)), float(lengths.mean()), mid, lo, hi, seconds)


def mi_summary(map_probs: np.ndarray, graph, n_actions: int, exclude: int | None = None) -> tuple[float, float, float] | None:
    """Means of midpoint, lower and upper bounds over every (directed pair, timestep) sample."""
    if map_probs is None or not len(map_probs):
        return None
    parts = []
    for i, j in graph.directed_pairs():
        if i == exclude:
            continue
        parts.append(map_probs[:, i])
    if not parts:
        return None
    lo, hi, mid = bound_arrays(np.concatenate(parts), n_actions)
    return float(mid.mean()), float(lo.mean()), float(hi.mean())


def _csv_cell(v):
    if v is None:
        return ""
    if isinstance(v, list):
        return ";".join(repr(float(x)) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


class MetricsWriter:
    """Writes ``metrics.jsonl`` and ``metrics.csv``, flushing after every epoch."""

    def __init__(self, out_dir):
        self.dir = Path(out_dir)
        self.json_path = self.dir / "metrics.jsonl"
        self.csv_path = self.dir / "metrics.csv"
        self._json = open(self.json_path, "w", encoding="utf-8", newline="\n")
        self._csv_file = open(self.csv_path, "w", encoding="utf-8", newline="")
        self._csv = csv.writer(self._csv_file, lineterminator="\n")
        self._csv.writerow(FIELDS)
        self._csv_file.flush()

    def write(self, m: EpochMetrics):
        d = m.to_dict()
        self._json.write(json.dumps(d) + "\n")
        self._json.flush()
        self._csv.writerow([_csv_cell(d[k]) for k in FIELDS])
        self._csv_file.flush()

    def close(self):
        self._json.close()
        self._csv_file.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
        return False


def emit_metrics(stream, out_dir) -> tuple[Path, Path]:
    """Write an iterable of EpochMetrics to ``out_dir``; returns the two paths."""
    with MetricsWriter(out_dir) as w:
        for m in stream:
            w.write(m)
    return w.json_path, w.csv_path


def read_metrics(path) -> list[dict]:
    with open(path, encoding="utf-8") as f:
        return [json.loads(line) for line in f if line.strip()]
