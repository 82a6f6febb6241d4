"""Result records and their on-disk formats (CSV rows, JSON summary)."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np

RESULTS_COLUMNS = ("experiment", "method", "repetition", "seed", "metric", "value", "wall_ms")


@dataclass
class ExperimentResult:
    experiment: str
    method: str
    metric: str
    setting: dict = field(default_factory=dict)
    repetitions: list = field(default_factory=list)
    seeds: list = field(default_factory=list)
    values: list = field(default_factory=list)
    wall_ms: list = field(default_factory=list)

    def add(self, rep: int, seed: int, value: float, ms: float):
        value = float(value)
        if not math.isfinite(value) and self.metric != "bd_log":
            raise ValueError(f"non-finite {self.metric} for {self.method}")
        self.repetitions.append(int(rep))
        self.seeds.append(int(seed))
        self.values.append(value)
        self.wall_ms.append(float(ms))

    @property
    def label(self) -> str:
        if not self.setting:
            return self.method
        extra = ",".join(f"{k}={v:g}" if isinstance(v, float) else f"{k}={v}"
                         for k, v in sorted(self.setting.items()))
        return f"{self.method}[{extra}]"

    @property
    def mean(self) -> float:
        return float(np.mean(self.values))

    @property
    def std(self) -> float:
        return float(np.std(self.values))


def write_results_csv(results, path, include_wall_ms: bool = False):
    """One row per repetition x method x metric.

    Wall-clock time varies between runs, so it is written as empty unless
    ``include_wall_ms`` is set; that keeps reruns byte-identical.
    """
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RESULTS_COLUMNS)
        for res in results:
            for rep, seed, val, ms in zip(res.repetitions, res.seeds, res.values, res.wall_ms):
                w.writerow((res.experiment, res.label, rep, seed, res.metric, repr(float(val)),
                            f"{ms:.1f}" if include_wall_ms else ""))


def summarize(results) -> dict:
    out = {}
    for res in results:
        out.setdefault(res.metric, {})[res.label] = {
            "mean": res.mean, "std": res.std, "n": len(res.values)}
    return out


def write_summary_json(results, path, extra=None):
    summary = {"metrics": summarize(results)}
    if extra:
        summary.update(extra)
    with open(path, "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True, default=_jsonable)
        fh.write("\n")


def write_trace_csv(traces, path):
    """ELBO traces as long-format rows ``(run, step, elbo)``."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("run", "step", "elbo"))
        for run, trace in traces.items():
            for k, v in enumerate(trace):
                w.writerow((run, k, repr(float(v))))


def _jsonable(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, tuple):
        return list(obj)
    raise TypeError(f"cannot serialize {type(obj).__name__}")
