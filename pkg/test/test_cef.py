import unittest
import logging

import numpy as np
from hypothesis import given, settings, strategies as st

from talus import prf
from talus.cef import (
    MaskedBroadcast,
    carry_bit_ref,
    combine_masked,
    decompose_share,
    fips_delta,
    fips_select,
    fips_thresholds,
    floor_recover,
    gen_masks,
    inv_alpha,
    lagrange_cef,
    masked_broadcast,
    masked_broadcast_bytes,
    masked_w1,
    naive_carry,
    plain_carry,
    rho_bound,
)
from talus.mldsa_core import DecodeError, high_bits
from talus.params import LEVELS, N, Q, get_params
from talus.shamir import lagrange_coeffs, share_secret

format = "%(asctime)s: %(message)s"
logging.basicConfig(format=format, level=logging.INFO, datefmt="%H:%M:%S")
logger = logging.getLogger()


def session_material(signers, params, rng):
    keys = {
        prf.pair(i, j): rng.bytes(prf.KEY_BYTES) for i in signers for j in signers if i < j
    }
    local = {i: rng.bytes(prf.KEY_BYTES) for i in signers}
    return gen_masks(keys, signers, params, local)


class TestConstants(unittest.TestCase):
    def test_inverse_alpha(self):
        for params in LEVELS.values():
            self.assertEqual(params.alpha * inv_alpha(params) % Q, 1)
            self.assertEqual(inv_alpha(params), Q - params.stripes)

    def test_broadcast_size(self):
        self.assertEqual(masked_broadcast_bytes(get_params("65")), 4416)
        self.assertEqual(masked_broadcast_bytes(get_params("87")), 5888)


class TestLagrangePath(unittest.TestCase):
    def test_exact(self):
        params = get_params("65")
        rng = np.random.default_rng(0)
        for signers in (2, 3, 5):
            w = rng.integers(0, Q, size=(20, params.k, N), dtype=np.int64)
            shares = {
                share.party_id: decompose_share(share.value, params)
                for share in share_secret(w, signers, signers, rng)
            }
            lam = lagrange_coeffs(range(1, signers + 1))
            np.testing.assert_array_equal(
                lagrange_cef(shares, lam, params), high_bits(w, params)
            )

    def test_naive_carry(self):
        params = get_params("65")
        self.assertEqual(int(naive_carry(0, params)), 0)
        rng = np.random.default_rng(3)
        r0 = rng.integers(-params.gamma2 + 1, params.gamma2 + 1, size=(2, 20000))
        # lambda = (2, -1) for the signing set {1, 2}
        carries = naive_carry(2 * r0[0] - r0[1], params)
        self.assertEqual(set(np.unique(carries).tolist()), {-1, 0, 1})


class TestMaskedBroadcast(unittest.TestCase):
    def test_masks(self):
        params = get_params("65")
        signers = [1, 3, 4]
        masks = session_material(signers, params, np.random.default_rng(1))
        self.assertFalse((sum(masks.mask_h.values()) % params.stripes).any())
        for rho in masks.rho.values():
            self.assertTrue(((rho >= 0) & (rho < rho_bound(params, 3))).all())

    def test_w1_from_broadcasts(self):
        for level in ("44", "65"):
            params = get_params(level)
            rng = np.random.default_rng(2)
            signers = [1, 2, 3]
            wrong = 0
            for _ in range(20):
                pieces = {h: rng.integers(0, Q, size=(params.k, N)) for h in signers}
                masks = session_material(signers, params, rng)
                broadcasts = [
                    masked_broadcast(pieces[h], masks.mask_h[h], masks.rho[h], params)
                    for h in signers
                ]
                h_sum, b_sum = combine_masked(broadcasts, params)
                c, delta = plain_carry(sum(masks.rho.values()), b_sum, params)
                w1 = masked_w1(h_sum, b_sum, c, delta, params)
                wrong += int((w1 != high_bits(sum(pieces.values()) % Q, params)).sum())
            # only q-wraps of the integer sum can disagree
            self.assertLessEqual(wrong / (20 * params.nk), 10 * 2 * 2 / params.alpha)

    def test_wire_format(self):
        params = get_params("44")
        rng = np.random.default_rng(3)
        broadcast = MaskedBroadcast(
            h_tilde=rng.integers(0, params.stripes, size=(params.k, N)),
            b_tilde=rng.integers(0, params.alpha, size=(params.k, N)),
        )
        data = broadcast.to_bytes(params)
        self.assertEqual(len(data), masked_broadcast_bytes(params))
        decoded = MaskedBroadcast.from_bytes(data, params)
        np.testing.assert_array_equal(decoded.h_tilde, broadcast.h_tilde)
        np.testing.assert_array_equal(decoded.b_tilde, broadcast.b_tilde)

        with self.assertRaises(DecodeError):
            MaskedBroadcast.from_bytes(data[:-1], params)
        # H~ = 63 is not a stripe index when m = 44
        with self.assertRaises(DecodeError):
            MaskedBroadcast.from_bytes(b"\xff" * len(data), params)


class TestCorrectionBit(unittest.TestCase):
    @settings(max_examples=300)
    @given(
        st.integers(min_value=0, max_value=LEVELS["65"].alpha - 1),
        st.integers(min_value=0, max_value=LEVELS["65"].alpha - 1),
    )
    def test_select_matches_clear(self, rho_sum, t):
        params = get_params("65")
        rho_sum, t = np.array([rho_sum]), np.array([t])
        c = (rho_sum > t).astype(np.int64)
        k0, k1 = fips_thresholds(t, params)
        greater_k0 = (rho_sum > k0).astype(np.int64)
        greater_k1 = (rho_sum > k1).astype(np.int64)
        selected = fips_select(c, greater_k0, greater_k1, t, params)
        np.testing.assert_array_equal(selected, fips_delta(rho_sum, t, c, params))


class TestCarryRecovery(unittest.TestCase):
    def setUp(self) -> None:
        self.params = get_params("65")

    def recover(self, b, rho):
        alpha = self.params.alpha
        big_b = np.asarray(b).sum(axis=0) + np.asarray(rho).sum(axis=0)
        c = carry_bit_ref(np.asarray(rho).sum(axis=0), big_b % alpha)
        return c, floor_recover(big_b, c, self.params)

    def test_examples(self):
        alpha = self.params.alpha
        c, floor = self.recover([alpha - 1, 1], [2, 3])
        self.assertEqual((int(c), int(floor)), (0, 1))
        c, floor = self.recover([alpha - 10, 5], [20, 0])
        self.assertEqual((int(c), int(floor)), (1, 0))

    def test_identity(self):
        rng = np.random.default_rng(7)
        for signers in (2, 3, 8):
            b = rng.integers(0, self.params.alpha, size=(signers, 4000))
            rho = rng.integers(0, rho_bound(self.params, signers), size=(signers, 4000))
            _, floor = self.recover(b, rho)
            np.testing.assert_array_equal(floor, b.sum(axis=0) // self.params.alpha)
