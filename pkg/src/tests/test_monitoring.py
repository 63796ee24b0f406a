import logging
import unittest

from src.errors import ConfigurationError
from src.monitoring.logging_config import configure_logging
from src.monitoring.metrics import RelabelMetrics


class TestMonitoring(unittest.TestCase):

    def test_decision_counters(self):
        metrics = RelabelMetrics()
        metrics.observe_decision('greedy', 3, new_vessel=True)
        metrics.observe_decision('greedy', 0, new_vessel=False)
        metrics.observe_decision('oracle', 5, new_vessel=False)
        self.assertEqual(metrics.total('relabel_posits_total'), 3)
        self.assertEqual(metrics.total('relabel_tracks_started_total'), 1)
        self.assertEqual(metrics.total('relabel_screened_candidates_count'), 3)
        with metrics.time_screen():
            pass
        snapshot = metrics.snapshot()
        self.assertEqual(snapshot['posits'], 3)
        self.assertGreaterEqual(snapshot['screen_seconds'], 0.0)
        self.assertGreater(metrics.throughput(), 0.0)

    def test_collectors_are_private(self):
        a, b = RelabelMetrics(), RelabelMetrics()
        a.observe_decision('greedy', 1, new_vessel=True)
        self.assertEqual(b.total('relabel_posits_total'), 0)

    def test_configure_logging(self):
        root = logging.getLogger()
        saved = list(root.handlers), root.level
        try:
            handler = configure_logging('debug', 'json')
            self.assertEqual(root.handlers, [handler])
            self.assertEqual(root.level, logging.DEBUG)
            with self.assertRaises(ConfigurationError):
                configure_logging('INFO', 'xml')
        finally:
            root.handlers[:] = saved[0]
            root.setLevel(saved[1])
