import unittest
import logging
import math

import numpy as np

from talus import prf
from talus.carry_compare import (
    DistributedComparison,
    TripleExhausted,
    WrongPartyCount,
    bits_of,
    build_circuit,
    csa_level,
    cscp,
    dcf_compare,
    dcf_payload_bytes,
    derive_triples,
    initial_state,
    keys_for,
    party_backend,
    prefix_compare,
    prf_bits_rows,
    replay,
    round_count,
    triple_views,
    value_of,
)
from talus.cef import plain_carry, rho_bound
from talus.params import get_params

format = "%(asctime)s: %(message)s"
logging.basicConfig(format=format, level=logging.INFO, datefmt="%H:%M:%S")
logger = logging.getLogger()

PARAMS = get_params("65")
BATCH = 600


def session(signers: int, seed: int):
    rng = np.random.default_rng(seed)
    parties = list(range(1, signers + 1))
    keys = {
        prf.pair(i, j): rng.bytes(prf.KEY_BYTES) for i in parties for j in parties if i < j
    }
    rho = {
        i: rng.integers(0, rho_bound(PARAMS, signers), size=BATCH, dtype=np.int64)
        for i in parties
    }
    t = rng.integers(0, PARAMS.alpha, size=BATCH, dtype=np.int64)
    return parties, keys, rho, t


class TestRounds(unittest.TestCase):
    def test_closed_form(self):
        for parties in range(2, 40):
            expected = max(3, math.ceil(math.log2(parties / 2)) + 2)
            self.assertEqual(round_count(parties), expected, parties)
        with self.assertRaises(ValueError):
            round_count(1)

    def test_circuit_depth(self):
        for parties in (2, 3, 4, 5, 8, 9, 16, 17):
            circuit = build_circuit(range(1, parties + 1))
            self.assertEqual(circuit.rounds, round_count(parties), parties)
        with self.assertRaises(WrongPartyCount):
            build_circuit([1])

    def test_bits(self):
        values = np.array([0, 1, 5, (1 << 19) - 1])
        np.testing.assert_array_equal(value_of(bits_of(values)), values)


class TestCorrelatedRandomness(unittest.TestCase):
    def test_products_reconstruct(self):
        parties, keys, _, _ = session(4, 1)
        circuit = build_circuit(parties)
        stores = {i: derive_triples(i, keys_for(i, keys), circuit, 64) for i in parties}
        for layer in circuit.layers:
            for degree in (2, 3):
                for factors, product in triple_views(stores, circuit, layer.name, degree):
                    expected = factors[0].copy()
                    for factor in factors[1:]:
                        expected &= factor
                    np.testing.assert_array_equal(product, expected)

    def test_degree_counts(self):
        circuit = build_circuit(range(1, 6))
        for layer in circuit.layers:
            counts = layer.degree_counts()
            self.assertEqual(sum(counts.values()), len(layer.subsets))
            self.assertEqual(counts.get(1, 0), layer.singles)


class TestComparison(unittest.TestCase):
    def test_cscp_matches_clear(self):
        for signers in (2, 3, 4, 5, 8):
            _, keys, rho, t = session(signers, signers)
            run = cscp(rho, t, keys, PARAMS)
            c, delta = plain_carry(sum(rho.values()), t, PARAMS)
            np.testing.assert_array_equal(run.result.c, c)
            np.testing.assert_array_equal(run.result.delta, delta)
            self.assertEqual(run.rounds, round_count(signers))

    def test_dcf_matches_clear(self):
        _, _, rho, t = session(2, 20)
        run = dcf_compare(rho, t, PARAMS, np.random.default_rng(21))
        c, delta = plain_carry(sum(rho.values()), t, PARAMS)
        np.testing.assert_array_equal(run.result.c, c)
        np.testing.assert_array_equal(run.result.delta, delta)
        self.assertEqual(run.rounds, 3)
        self.assertEqual(run.bytes_per_party(1) + run.bytes_per_party(2), BATCH * 2 // 8)

    def test_dcf_payload(self):
        self.assertEqual(dcf_payload_bytes(PARAMS.nk), 384)

    def test_dcf_output_shares_hide_bits(self):
        _, keys, rho, t = session(2, 22)
        functionality = DistributedComparison([1, 2], PARAMS, np.random.default_rng(23))
        for party in (1, 2):
            functionality.submit(party, rho[party])
        first = np.stack(functionality.shares(1, t))
        second = np.stack(functionality.shares(2, t))
        c, _ = plain_carry(sum(rho.values()), t, PARAMS)
        np.testing.assert_array_equal(first[0] ^ second[0], c)

        # the pairwise key K_12 does not unmask the other share
        unmasked = prf_bits_rows(keys[(1, 2)], prf.CARRY, 3, BATCH) ^ second
        for guess in (first[0], second[0], unmasked[0]):
            self.assertAlmostEqual(float(np.mean(guess == c)), 0.5, delta=0.1)

        # party 1 sees only dealer randomness, whatever the inputs
        replayed = DistributedComparison([1, 2], PARAMS, seed=functionality.opening())
        for party in (1, 2):
            replayed.submit(party, (rho[party] + 7) % rho_bound(PARAMS, 2))
        np.testing.assert_array_equal(np.stack(replayed.shares(1, t)), first)


class TestReplay(unittest.TestCase):
    def setUp(self) -> None:
        self.parties, self.keys, self.rho, self.t = session(3, 30)

    def fresh_backends(self):
        return {
            i: party_backend("cscp", i, self.parties, self.rho[i], self.keys, PARAMS)
            for i in self.parties
        }

    def test_honest_run_replays(self):
        run = cscp(self.rho, self.t, self.keys, PARAMS)
        self.assertIsNone(replay(self.fresh_backends(), self.t, run.messages))

    def test_deviation_is_located(self):
        def tamper(round_index, party, message):
            if round_index == 1 and party == 2:
                return bytes(b ^ 0xFF for b in message)
            return message

        run = cscp(self.rho, self.t, self.keys, PARAMS, tamper=tamper)
        self.assertEqual(replay(self.fresh_backends(), self.t, run.messages), (1, 2))


class TestInMemoryLayers(unittest.TestCase):
    def test_levels_then_prefix(self):
        for signers in (3, 5, 8):
            parties, keys, rho, t = session(signers, 40 + signers)
            circuit = build_circuit(parties)
            stores = {i: derive_triples(i, keys_for(i, keys), circuit, BATCH) for i in parties}

            state = initial_state(circuit, rho, keys)
            np.testing.assert_array_equal(state.total(), sum(rho.values()))
            for level in range(1, circuit.csa_levels + 1):
                state = csa_level(state, circuit, stores, level)
            self.assertEqual(state.operands, ["S", "C"])

            result = prefix_compare(state, circuit, stores, t, PARAMS)
            c, delta = plain_carry(sum(rho.values()), t, PARAMS)
            np.testing.assert_array_equal(result.c, c)
            np.testing.assert_array_equal(result.delta, delta)

    def test_layer_randomness_used_once(self):
        parties, keys, rho, _ = session(3, 50)
        circuit = build_circuit(parties)
        stores = {i: derive_triples(i, keys_for(i, keys), circuit, BATCH) for i in parties}
        state = initial_state(circuit, rho, keys)
        csa_level(state, circuit, stores, 1)
        with self.assertRaises(TripleExhausted):
            csa_level(state, circuit, stores, 1)
