"""Per-trial metric rows and their CSV forms."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

from ..controller import LogRecord

METRICS_HEADER = ("scenario", "trial", "metric", "value")
TRACE_HEADER = ("time_us", "entity", "event", "detail")


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return f"{value:.3f}"
    return str(value)


@dataclass
class MetricsReport:
    scenario: str
    seed: int
    rows: list[tuple[int, str, str]] = field(default_factory=list)
    failures: list[str] = field(default_factory=list)
    trace: list[tuple[int, str, str, str]] = field(default_factory=list)
    events: list[tuple[int, LogRecord]] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.failures

    def add(self, trial: int, metric: str, value) -> None:
        self.rows.append((trial, metric, _fmt(value)))

    def fail(self, message: str) -> None:
        if message not in self.failures:
            self.failures.append(message)

    def expect(self, condition: bool, message: str) -> bool:
        if not condition:
            self.fail(message)
        return condition

    def get(self, metric: str, trial: int | None = None) -> list[str]:
        return [v for t, m, v in self.rows if m == metric and (trial is None or t == trial)]

    def ints(self, metric: str, trial: int | None = None) -> list[int]:
        return [int(v) for v in self.get(metric, trial)]

    def metrics(self) -> list[str]:
        return list(dict.fromkeys(m for _, m, _ in self.rows))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(METRICS_HEADER)
        for trial, metric, value in self.rows:
            w.writerow([self.scenario, trial, metric, value])
        return buf.getvalue()

    def trace_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(TRACE_HEADER)
        w.writerows(self.trace)
        return buf.getvalue()

    def events_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["trial", "time", "component", "event", "detail"])
        for trial, r in self.events:
            w.writerow([trial, r.time, r.component, r.event, r.detail])
        return buf.getvalue()


def read_metrics_csv(text: str) -> list[tuple[str, int, str, str]]:
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or tuple(rows[0]) != METRICS_HEADER:
        raise ValueError(f"not a metrics CSV (expected header {','.join(METRICS_HEADER)})")
    return [(s, int(t), m, v) for s, t, m, v in rows[1:]]
