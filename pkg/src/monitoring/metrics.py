from typing import Dict
import time
from contextlib import contextmanager

from prometheus_client import CollectorRegistry, Counter, Histogram


class RelabelMetrics:
    """Run-scoped relabeling counters kept in a private registry (no exporter)."""

    def __init__(self):
        self.registry = CollectorRegistry()
        self.posits = Counter(
            'relabel_posits_total',
            'Posits processed',
            ['decider'],
            registry=self.registry,
        )
        self.tracks_started = Counter(
            'relabel_tracks_started_total',
            'New Vessel decisions',
            ['decider'],
            registry=self.registry,
        )
        self.candidates = Histogram(
            'relabel_screened_candidates',
            'Candidates kept by the screen per posit',
            buckets=(0, 1, 2, 4, 8, 16, 32, 64),
            registry=self.registry,
        )
        self.screen_latency = Histogram(
            'relabel_screen_seconds',
            'Screening latency per posit',
            registry=self.registry,
        )
        self._started = time.perf_counter()

    @contextmanager
    def time_screen(self):
        start = time.perf_counter()
        try:
            yield
        finally:
            self.screen_latency.observe(time.perf_counter() - start)

    def observe_decision(self, decider: str, n_candidates: int, new_vessel: bool):
        self.posits.labels(decider=decider).inc()
        self.candidates.observe(n_candidates)
        if new_vessel:
            self.tracks_started.labels(decider=decider).inc()

    def total(self, name: str) -> float:
        return sum(
            sample.value
            for metric in self.registry.collect()
            for sample in metric.samples
            if sample.name == name
        )

    def throughput(self) -> float:
        """Posits per minute since the collector was created."""
        elapsed = max(time.perf_counter() - self._started, 1e-9)
        return 60.0 * self.total('relabel_posits_total') / elapsed

    def snapshot(self) -> Dict[str, float]:
        return {
            'posits': self.total('relabel_posits_total'),
            'tracks_started': self.total('relabel_tracks_started_total'),
            'screen_seconds': self.total('relabel_screen_seconds_sum'),
        }
