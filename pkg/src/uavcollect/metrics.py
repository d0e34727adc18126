"""Checkpointed training curves."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import List

import numpy as np

from .errors import DomainError

TRACE_HEADER = ["step", "avg_reward", "throughput", "energy_per_slot"]


@dataclass
class MetricTrace:
    """Running averages sampled every few decision steps.

    Averages are over all simulated slots so far, idle replenishment slots
    included.
    """

    steps: List[int] = field(default_factory=list)
    avg_reward: List[float] = field(default_factory=list)
    throughput: List[float] = field(default_factory=list)
    energy_per_slot: List[float] = field(default_factory=list)

    def record(self, step: int, env) -> None:
        if self.steps and step <= self.steps[-1]:
            raise DomainError("checkpoint steps must be strictly increasing")
        self.steps.append(int(step))
        self.avg_reward.append(env.average_reward)
        self.throughput.append(env.throughput)
        self.energy_per_slot.append(env.energy_per_slot)

    def __len__(self) -> int:
        return len(self.steps)

    @property
    def rewards(self) -> np.ndarray:
        return np.asarray(self.avg_reward, dtype=np.float64)

    def to_csv(self, path) -> None:
        with open(Path(path), "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(TRACE_HEADER)
            for row in zip(self.steps, self.avg_reward, self.throughput, self.energy_per_slot):
                w.writerow([row[0]] + [format(v, ".10g") for v in row[1:]])

    @classmethod
    def from_csv(cls, path) -> "MetricTrace":
        tr = cls()
        with open(Path(path), newline="") as fh:
            for row in csv.DictReader(fh):
                tr.steps.append(int(row["step"]))
                tr.avg_reward.append(float(row["avg_reward"]))
                tr.throughput.append(float(row["throughput"]))
                tr.energy_per_slot.append(float(row["energy_per_slot"]))
        return tr
