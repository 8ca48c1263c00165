"""Per-step records of an optimization run and their CSV/JSON persistence."""
from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

SUMMARY_FILE = "runlog.csv"
STEPS_FILE = "steps.csv"
HEADER_FILE = "config.json"
SENTINEL = "DONE"


def fmt(x: float) -> str:
    return format(float(x), ".10g")


@dataclass
class StepRecord:
    episode: int
    step: int
    action_index: int
    total_power_w: float
    reward: float
    violation: bool
    explored: bool = False
    source: str = ""
    greedy_action: int = -1


@dataclass
class RunLog:
    method: str
    config: dict = field(default_factory=dict)
    steps: list[StepRecord] = field(default_factory=list)
    complete: bool = False
    error: str = ""

    def add(self, rec: StepRecord) -> None:
        self.steps.append(rec)

    def episodes(self) -> list[int]:
        return sorted({s.episode for s in self.steps})

    def episode_summary(self) -> list[dict]:
        rows = []
        by_ep: dict[int, list[StepRecord]] = {}
        for s in self.steps:
            by_ep.setdefault(s.episode, []).append(s)
        for ep in sorted(by_ep):
            recs = by_ep[ep]
            n = len(recs)
            rows.append({
                "episode": ep,
                "mean_power_w": sum(r.total_power_w for r in recs) / n,
                "service_quality": sum(not r.violation for r in recs) / n,
                "mean_reward": sum(r.reward for r in recs) / n,
            })
        return rows

    def save(self, run_dir) -> Path:
        run_dir = Path(run_dir)
        run_dir.mkdir(parents=True, exist_ok=True)
        header = {"method": self.method, "config": self.config, "complete": self.complete, "error": self.error,
                  "kind": "optimize"}
        (run_dir / HEADER_FILE).write_text(json.dumps(header, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        with open(run_dir / SUMMARY_FILE, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["episode", "mean_power_w", "service_quality", "mean_reward"])
            for row in self.episode_summary():
                w.writerow([row["episode"], fmt(row["mean_power_w"]), fmt(row["service_quality"]),
                            fmt(row["mean_reward"])])
        names = [f.name for f in fields(StepRecord)]
        with open(run_dir / STEPS_FILE, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(names)
            for s in self.steps:
                d = asdict(s)
                w.writerow([fmt(d[n]) if isinstance(d[n], float) else int(d[n]) if isinstance(d[n], bool) else d[n]
                            for n in names])
        if self.complete:
            (run_dir / SENTINEL).write_text("", encoding="utf-8")
        return run_dir

    @classmethod
    def load(cls, run_dir) -> "RunLog":
        run_dir = Path(run_dir)
        header = json.loads((run_dir / HEADER_FILE).read_text(encoding="utf-8"))
        log = cls(header["method"], header.get("config", {}), complete=header.get("complete", False),
                  error=header.get("error", ""))
        with open(run_dir / STEPS_FILE, newline="", encoding="utf-8") as fh:
            for row in csv.DictReader(fh):
                log.add(StepRecord(
                    episode=int(row["episode"]), step=int(row["step"]), action_index=int(row["action_index"]),
                    total_power_w=float(row["total_power_w"]), reward=float(row["reward"]),
                    violation=bool(int(row["violation"])), explored=bool(int(row["explored"])),
                    source=row["source"], greedy_action=int(row["greedy_action"]),
                ))
        return log
