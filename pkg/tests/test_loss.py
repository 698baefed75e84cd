import unittest

import numpy as np

from src.shared.errors import ValidationError
from src.tooling.loss import CSV_COLUMNS, LossConfig, LossRun, run_loss, tally_per_second


class TestTallies(unittest.TestCase):

    def test_per_second_buckets(self):
        counts = tally_per_second([100.1, 100.5, 101.2, 99.0, 105.0], start=100.0, seconds=3)
        self.assertEqual(counts.tolist(), [2, 1, 0])
        self.assertEqual(tally_per_second([], 0.0, 2).tolist(), [0, 0])

    def test_conservation(self):
        late = LossRun(10, np.array([3, 3]), np.array([2, 4]))
        self.assertTrue(late.conserved)
        self.assertTrue(late.dipped)
        self.assertEqual(late.cumulative_received.tolist(), [2, 6])
        ahead = LossRun(10, np.array([3, 3]), np.array([4, 2]))
        self.assertFalse(ahead.conserved)
        short = LossRun(10, np.array([3, 3]), np.array([3, 2]))
        self.assertFalse(short.conserved)

    def test_config(self):
        config = LossConfig()
        self.assertEqual(config.loss_percents, [0, 10, 20])
        self.assertEqual(config.message_size, 1000)
        self.assertEqual(config.seconds, 17)
        impairment = config.impairment(20, seed_offset=1)
        self.assertAlmostEqual(impairment.drop_probability, 0.2)
        self.assertEqual(impairment.rng_seed, 1)
        with self.assertRaises(ValidationError):
            LossConfig(loss_percents=[150])
        with self.assertRaises(ValidationError):
            LossConfig(send_rate=0)
        with self.assertRaises(ValidationError):
            LossConfig(grace=-1)


class TestSimulatedLoss(unittest.TestCase):

    @classmethod
    def setUpClass(cls):
        cls.config = LossConfig(loss_percents=[0, 20], duration=3.0, grace=2.0, seed=11)
        cls.result = run_loss(cls.config, simulated=True)

    def test_reliable_delivery_conserves_messages(self):
        for run in self.result.runs:
            self.assertEqual(int(run.sent.sum()), 87)
            self.assertTrue(run.conserved, f"{run.loss_percent}% lost messages")
            self.assertEqual(len(run.sent), 5)

    def test_only_impaired_runs_drop(self):
        clean, lossy = self.result.runs
        self.assertEqual(clean.datagrams_dropped, 0)
        self.assertGreater(lossy.datagrams_dropped, 0)

    def test_same_seed_same_outcome(self):
        again = run_loss(LossConfig(loss_percents=[20], duration=3.0, grace=2.0, seed=11), simulated=True)
        self.assertEqual(again.runs[0].received.tolist(), self.result.runs[1].received.tolist())

    def test_csv(self):
        lines = self.result.to_csv().strip().split("\n")
        self.assertEqual(lines[0], ",".join(CSV_COLUMNS))
        self.assertEqual(len(lines), 1 + 2 * 5)
        self.assertTrue(lines[1].startswith("0,0,"))


if __name__ == "__main__":
    unittest.main()
