import unittest
import logging
import math

from talus.experiments import SI_REFERENCE
from talus.params import get_params
from talus.si_loss import gaussian_chi2, irwin_hall_counts, si_loss

format = "%(asctime)s: %(message)s"
logging.basicConfig(format=format, level=logging.INFO, datefmt="%H:%M:%S")
logger = logging.getLogger()


class TestIrwinHall(unittest.TestCase):
    def test_two_small_boxes(self):
        counts, low = irwin_hall_counts(2, 2)
        self.assertEqual(list(counts), [1, 2, 3, 4, 3, 2, 1])
        self.assertEqual(low, -2)

    def test_total(self):
        for parties, bound in [(1, 5), (3, 4), (5, 3)]:
            counts, low = irwin_hall_counts(parties, bound)
            self.assertEqual(sum(counts), (2 * bound) ** parties)
            self.assertEqual(low, parties * (1 - bound))
            self.assertEqual(list(counts), list(counts[::-1]))

    def test_bad_arguments(self):
        with self.assertRaises(ValueError):
            irwin_hall_counts(0, 3)


class TestShiftInvarianceLoss(unittest.TestCase):
    params = get_params("65")

    def test_small_thresholds_near_reference(self):
        for parties in (2, 3, 8):
            loss = si_loss(parties, self.params)
            self.assertLess(
                abs(loss.chi2 - SI_REFERENCE[parties]) / SI_REFERENCE[parties], 0.30
            )

    def test_gaussian_limit(self):
        for parties, tolerance in [(5, 0.05), (8, 0.02), (17, 0.02)]:
            loss = si_loss(parties, self.params)
            gaussian = gaussian_chi2(parties, self.params)
            self.assertLess(abs(loss.chi2 - gaussian) / gaussian, tolerance)

    def test_gaussian_method(self):
        loss = si_loss(5, "65", method="gaussian")
        self.assertEqual(loss.chi2, 3 * 5 * 196**2 / 2**38)
        self.assertTrue(math.isnan(loss.max_ratio))
        self.assertAlmostEqual(loss.bits, 1280 * math.log2(1 + loss.chi2))
        self.assertAlmostEqual(loss.epsilon, loss.r2_vec - 1)

    def test_bits_per_session(self):
        loss = si_loss(3, self.params)
        self.assertGreater(loss.bits, 0)
        self.assertLess(loss.bits, 0.01)
        self.assertGreater(loss.max_ratio, 1)

    def test_errors(self):
        with self.assertRaises(ValueError):
            si_loss(1)
        with self.assertRaises(ValueError):
            si_loss(3, method="renyi")
