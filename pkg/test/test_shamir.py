import unittest
import logging

import numpy as np
from hypothesis import given, settings, strategies as st

from talus.mldsa_core import centered, expand_a
from talus.params import N, Q, get_params
from talus.shamir import (
    DuplicatePartyError,
    Share,
    ShareMismatchError,
    evaluate,
    feldman_check,
    feldman_commit,
    lagrange_coeffs,
    lagrange_combine,
    nonce_bound,
    nonce_dkg,
    random_polynomial,
    reconstruct,
    share_secret,
)

format = "%(asctime)s: %(message)s"
logging.basicConfig(format=format, level=logging.INFO, datefmt="%H:%M:%S")
logger = logging.getLogger()

PARAMS = get_params("65")


class TestLagrange(unittest.TestCase):
    def test_known_coefficients(self):
        lam = lagrange_coeffs([1, 2, 3])
        self.assertEqual([lam.centered(i) for i in (1, 2, 3)], [3, -3, 1])
        self.assertEqual(lam.abs_sum, 7)

    @given(st.sets(st.integers(min_value=1, max_value=64), min_size=1, max_size=12))
    def test_weights_sum_to_one(self, signing_set):
        lam = lagrange_coeffs(signing_set)
        self.assertEqual(sum(lam.coeffs.values()) % Q, 1)

    def test_duplicate_party(self):
        with self.assertRaises(DuplicatePartyError):
            lagrange_coeffs([1, 2, 2])
        with self.assertRaises(ValueError):
            lagrange_coeffs([0, 1])


class TestSharing(unittest.TestCase):
    @settings(max_examples=25, deadline=None)
    @given(
        st.integers(min_value=1, max_value=6),
        st.integers(min_value=0, max_value=4),
        st.integers(min_value=0, max_value=2**32 - 1),
    )
    def test_any_t_shares_reconstruct(self, threshold, extra, seed):
        parties = threshold + extra
        rng = np.random.default_rng(seed)
        secret = rng.integers(-PARAMS.eta, PARAMS.eta + 1, size=(PARAMS.l, N))
        shares = share_secret(secret, threshold, parties, rng)
        chosen = rng.choice(parties, size=threshold, replace=False)
        subset = [shares[i] for i in sorted(chosen)]
        np.testing.assert_array_equal(reconstruct(subset), secret)

    def test_share_mismatch(self):
        rng = np.random.default_rng(0)
        shares = share_secret(np.zeros((1, N), dtype=np.int64), 2, 3, rng)
        with self.assertRaises(ShareMismatchError):
            reconstruct(shares[:2], lagrange_coeffs([1, 3]))

    def test_bad_threshold(self):
        rng = np.random.default_rng(0)
        with self.assertRaises(ValueError):
            share_secret(np.zeros((1, N), dtype=np.int64), 4, 3, rng)

    def test_share_bytes(self):
        rng = np.random.default_rng(2)
        share = share_secret(np.ones((PARAMS.l, N), dtype=np.int64), 2, 3, rng)[1]
        decoded = Share.from_bytes(share.to_bytes(PARAMS))
        self.assertEqual(decoded.party_id, 2)
        np.testing.assert_array_equal(decoded.value, share.value)

        data = bytearray(share.to_bytes(PARAMS))
        data[0] = 9
        with self.assertRaises(ValueError):
            Share.from_bytes(bytes(data))


class TestFeldman(unittest.TestCase):
    def setUp(self) -> None:
        self.rng = np.random.default_rng(3)
        self.a_hat = expand_a(self.rng.bytes(32), PARAMS)
        constant = self.rng.integers(0, Q, size=(PARAMS.l, N), dtype=np.int64)
        self.coeffs = random_polynomial(constant, 3, self.rng)
        self.commitments = feldman_commit(self.a_hat, self.coeffs)

    def test_valid_share(self):
        for x in (1, 2, 5):
            self.assertTrue(
                feldman_check(self.a_hat, self.commitments, x, evaluate(self.coeffs, x))
            )

    def test_corrupted_share(self):
        share = evaluate(self.coeffs, 2)
        share[0, 0] = (share[0, 0] + 1) % Q
        self.assertFalse(feldman_check(self.a_hat, self.commitments, 2, share))


class TestNonceDkg(unittest.TestCase):
    def test_aggregate(self):
        rng = np.random.default_rng(4)
        signing_set = [2, 4, 5]
        dkg = nonce_dkg(signing_set, 3, PARAMS, rng)

        bound = nonce_bound(PARAMS, 3)
        self.assertEqual(bound, PARAMS.gamma1 // 3)
        for piece in dkg.pieces.values():
            self.assertTrue(((piece > -bound) & (piece <= bound)).all())
        np.testing.assert_array_equal(dkg.aggregate, sum(dkg.pieces.values()))
        self.assertLess(int(np.abs(dkg.aggregate).max()), PARAMS.gamma1)

        # the shares interpolate to the aggregate nonce
        combined = lagrange_combine(dkg.shares, lagrange_coeffs(signing_set))
        np.testing.assert_array_equal(centered(combined), dkg.aggregate)

    def test_signing_set_size(self):
        with self.assertRaises(ValueError):
            nonce_dkg([1, 2], 3, PARAMS, np.random.default_rng(0))
