import unittest
import logging
import json
import tempfile
from pathlib import Path

from talus.carry_compare import round_count
from talus.experiments import (
    EXPERIMENTS,
    MPC_REFERENCE,
    TEE_REFERENCE,
    ExperimentConfig,
    ExperimentReport,
    UnknownExperiment,
    experiment,
)

format = "%(asctime)s: %(message)s"
logging.basicConfig(format=format, level=logging.INFO, datefmt="%H:%M:%S")
logger = logging.getLogger()


class TestExperiments(unittest.TestCase):
    def test_names(self):
        self.assertEqual(len(EXPERIMENTS), 11)
        with self.assertRaises(UnknownExperiment):
            experiment("no-such-experiment")

    def test_bcc_rate(self):
        report = experiment("bcc-rate", ExperimentConfig(trials=2000))
        self.assertEqual([row["level"] for row in report.rows], ["44", "65", "87"])
        for row in report.rows:
            self.assertLess(abs(row["rate"] - row["analytic"]), 0.05)
            self.assertLess(abs(row["analytic"] - row["reference"]), 0.002)

    def test_success_fast(self):
        for name, reference in [
            ("tee-success", TEE_REFERENCE),
            ("mpc-success", MPC_REFERENCE[2]),
        ]:
            report = experiment(name, ExperimentConfig(trials=400, thresholds=[2]))
            (row,) = report.rows
            self.assertEqual(row["reference"], reference)
            self.assertLess(abs(row["rate"] - reference), 0.1)
            self.assertGreater(row["half_width"], 0)

    def test_success_protocol(self):
        config = ExperimentConfig(trials=2, thresholds=[2], engine="protocol", level="44")
        (row,) = experiment("tee-success", config).rows
        self.assertTrue(row["verified"])
        self.assertEqual(row["successes"], 2)

    def test_unknown_engine(self):
        with self.assertRaises(ValueError):
            experiment("tee-success", ExperimentConfig(trials=1, engine="slow"))

    def test_carry_identity(self):
        report = experiment("carry-identity", ExperimentConfig(trials=20, thresholds=[2, 3]))
        self.assertEqual([row["mismatches"] for row in report.rows], [0, 0])

    def test_carry_distribution(self):
        report = experiment(
            "carry-distribution", ExperimentConfig(trials=20, thresholds=[2, 3])
        )
        for signers in (2, 3):
            rows = [row for row in report.rows if row["T"] == signers]
            self.assertAlmostEqual(sum(row["fraction"] for row in rows), 1.0)
            self.assertTrue(all(abs(row["carry"]) <= row["lambda_abs_sum"] for row in rows))

    def test_masked_broadcast(self):
        (row,) = experiment("masked-broadcast", ExperimentConfig(trials=50)).rows
        self.assertEqual(row["N"], 3)
        self.assertGreater(row["rate"], 0.9)

    def test_shift_invariance(self):
        report = experiment("shift-invariance", ExperimentConfig(trials=20))
        by_check = {row["check"]: row["value"] for row in report.rows}
        self.assertEqual(by_check["HighBits(w - c s2) != HighBits(w)"], 0)
        self.assertEqual(by_check["||c s2|| > beta"], 0)
        self.assertGreater(by_check["interior fraction at beta"], 0.99)

    def test_cscp_equivalence(self):
        report = experiment("cscp-equivalence", ExperimentConfig(trials=2, thresholds=[2, 3]))
        for row in report.rows:
            self.assertEqual(row["mismatches"], 0)
            self.assertEqual(row["rounds"], round_count(row["T"]))

    def test_si_loss(self):
        report = experiment("si-loss", ExperimentConfig(thresholds=[2, 3]))
        self.assertEqual([row["T"] for row in report.rows], [2, 3])
        for row in report.rows:
            self.assertGreater(row["bits"], 0)

    def test_highbits_additivity(self):
        (row,) = experiment("highbits-additivity", ExperimentConfig(trials=200)).rows
        self.assertTrue(row["found"])
        self.assertNotEqual(row["together"], row["apart"])

    def test_cross_verify(self):
        report = experiment("cross-verify", ExperimentConfig(trials=1))
        self.assertEqual(len(report.rows), 6)
        self.assertEqual({row["result"] for row in report.rows}, {"PASS"})


class TestReport(unittest.TestCase):
    report = ExperimentReport(
        name="demo", rows=[{"T": 2, "rate": 0.5}, {"T": 3, "rate": 0.25, "note": "x"}]
    )

    def test_csv(self):
        self.assertEqual(self.report.columns, ["T", "rate", "note"])
        self.assertEqual(self.report.to_csv(), "T,rate,note\n2,0.5,\n3,0.25,x\n")

    def test_write(self):
        with tempfile.TemporaryDirectory() as directory:
            path = Path(directory) / "demo.json"
            self.report.write(path, fmt="json")
            data = json.loads(path.read_text())
        self.assertEqual(data["experiment"], "demo")
        self.assertEqual(data["rows"][1]["note"], "x")
