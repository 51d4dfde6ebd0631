"""Average accuracy and average forgetting over the accuracy tensor a_k^{t,i}.

Both metrics weight each (client, task) cell by that client's training
shard size for the task, so they are invariant to uniform scaling of the
counts.  Negative forgetting (backward transfer) is reported as-is.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

METRICS_SCHEMA = "fedgtea.metrics.v1"
DUMP_SCHEMA = "fedgtea.accuracy_dump.v1"


@dataclass
class AccuracyRecord:
    """acc[k, t, i]: accuracy of client k on task i after training task t
    (0-based, defined for i <= t, NaN elsewhere); n[k, i]: shard sizes."""

    acc: np.ndarray
    n: np.ndarray

    @classmethod
    def empty(cls, num_clients: int, num_tasks: int) -> "AccuracyRecord":
        return cls(acc=np.full((num_clients, num_tasks, num_tasks), np.nan),
                   n=np.zeros((num_clients, num_tasks)))

    @property
    def num_clients(self) -> int:
        return self.acc.shape[0]

    @property
    def num_tasks(self) -> int:
        return self.acc.shape[1]

    def set_shard_size(self, client: int, task: int, count: int) -> None:
        if count <= 0:
            raise ValueError("shard sizes must be positive")
        self.n[client, task] = count

    def set_accuracy(self, client: int, stage: int, task: int, value: float) -> None:
        if task > stage:
            raise ValueError(f"a[{stage},{task}] undefined: task after stage")
        if not 0.0 <= value <= 1.0:
            raise ValueError(f"accuracy {value} outside [0, 1]")
        self.acc[client, stage, task] = value

    def stage_complete(self, stage: int) -> bool:
        return bool(np.isfinite(self.acc[:, stage, : stage + 1]).all())


def average_accuracy(rec: AccuracyRecord) -> float:
    """Shard-size-weighted mean of every task's final-stage accuracy."""
    final = rec.num_tasks - 1
    if not rec.stage_complete(final) or not (rec.n > 0).all():
        raise ValueError("record incomplete: missing final-stage accuracies or counts")
    weights = rec.n
    return float((rec.acc[:, final, :] * weights).sum() / weights.sum())


def average_forgetting(rec: AccuracyRecord) -> float:
    """Weighted mean peak-minus-final accuracy gap over tasks 1..T-1."""
    T = rec.num_tasks
    if T < 2:
        raise ValueError("forgetting is undefined with fewer than two tasks")
    final = T - 1
    if not rec.stage_complete(final) or not (rec.n > 0).all():
        raise ValueError("record incomplete")
    num = 0.0
    den = 0.0
    for k in range(rec.num_clients):
        for i in range(T - 1):
            history = rec.acc[k, i:final, i]  # stages i .. T-2
            if not np.isfinite(history).all():
                raise ValueError(f"record incomplete for client {k}, task {i}")
            gap = float(history.max() - rec.acc[k, final, i])
            num += gap * rec.n[k, i]
            den += rec.n[k, i]
    return num / den


def mean_sd(values) -> tuple[float, float]:
    """Sample mean and standard deviation; a single value has sd 0."""
    values = list(values)
    m = float(np.mean(values))
    sd = float(np.std(values, ddof=1)) if len(values) > 1 else 0.0
    return m, sd


# -- CSV emission -----------------------------------------------------------------


@dataclass
class MetricsRow:
    seed: int
    method: str
    sequence: str
    avg_accuracy: float
    avg_forgetting: float


def write_metrics_csv(path, rows: list[MetricsRow]) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(f"# schema: {METRICS_SCHEMA}\n")
        writer = csv.writer(fh)
        writer.writerow(["seed", "method", "sequence", "avg_accuracy",
                         "avg_forgetting"])
        for r in rows:
            writer.writerow([r.seed, r.method, r.sequence,
                             repr(r.avg_accuracy), repr(r.avg_forgetting)])


def read_metrics_csv(path) -> list[MetricsRow]:
    rows = []
    with open(path, newline="") as fh:
        first = fh.readline().strip()
        if first != f"# schema: {METRICS_SCHEMA}":
            raise ValueError(f"{path}: unexpected metrics schema line {first!r}")
        for rec in csv.DictReader(fh):
            rows.append(MetricsRow(seed=int(rec["seed"]), method=rec["method"],
                                   sequence=rec["sequence"],
                                   avg_accuracy=float(rec["avg_accuracy"]),
                                   avg_forgetting=float(rec["avg_forgetting"])))
    return rows


def write_accuracy_dump(path, entries) -> None:
    """Long-format per-(client, stage, task) accuracies for plotting.

    entries: iterable of (seed, method, sequence, record) tuples.
    """
    with open(path, "w", newline="") as fh:
        fh.write(f"# schema: {DUMP_SCHEMA}\n")
        writer = csv.writer(fh)
        writer.writerow(["seed", "method", "sequence", "client", "stage", "task",
                         "accuracy", "n"])
        for seed, method, sequence, rec in entries:
            for k in range(rec.num_clients):
                for t in range(rec.num_tasks):
                    for i in range(t + 1):
                        a = rec.acc[k, t, i]
                        if math.isnan(a):
                            continue
                        writer.writerow([seed, method, sequence, k, t + 1, i + 1,
                                         repr(float(a)), int(rec.n[k, i])])


def read_accuracy_dump(path) -> list[dict]:
    rows = []
    with open(path, newline="") as fh:
        first = fh.readline().strip()
        if first != f"# schema: {DUMP_SCHEMA}":
            raise ValueError(f"{path}: unexpected dump schema line {first!r}")
        for rec in csv.DictReader(fh):
            rows.append({"seed": int(rec["seed"]), "method": rec["method"],
                         "sequence": rec["sequence"], "client": int(rec["client"]),
                         "stage": int(rec["stage"]), "task": int(rec["task"]),
                         "accuracy": float(rec["accuracy"]), "n": int(rec["n"])})
    return rows
