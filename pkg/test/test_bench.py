import unittest
import logging

from talus.bench import bench
from test.util import async_test

format = "%(asctime)s: %(message)s"
logging.basicConfig(format=format, level=logging.INFO, datefmt="%H:%M:%S")
logger = logging.getLogger()

COLUMNS = [
    "phase",
    "operation",
    "T",
    "N",
    "median_ms",
    "max_ms",
    "samples",
    "network_ms",
    "total_ms",
]


class TestBench(unittest.TestCase):
    @async_test
    async def test_schema(self):
        report = await bench(level="44", threshold=2, parties=3, samples=1, seed=1)
        self.assertEqual(report.name, "bench")
        self.assertEqual(report.columns, COLUMNS)
        operations = [(row["phase"], row["operation"]) for row in report.rows]
        self.assertEqual(
            operations,
            [
                ("reference", "keygen"),
                ("reference", "sign"),
                ("reference", "verify"),
                ("tee", "keygen"),
                ("tee", "preprocess"),
                ("tee", "sign"),
                ("mpc", "keygen"),
                ("mpc", "preprocess"),
                ("mpc", "sign"),
            ],
        )
        for row in report.rows:
            self.assertEqual(row["samples"], 1)
            self.assertGreaterEqual(row["max_ms"], row["median_ms"])
        mpc_sign = report.rows[-1]
        self.assertEqual((mpc_sign["T"], mpc_sign["N"]), (2, 3))
        self.assertIsNotNone(mpc_sign["network_ms"])

    @async_test
    async def test_guard(self):
        with self.assertRaises(Exception):
            await bench(threshold=3, parties=4, samples=1)
