import unittest
import logging
import os
import tempfile
from pathlib import Path

import numpy as np

from talus.mldsa_core import DecodeError
from talus.params import get_params
from talus.storage import (
    DATA_DIR_ENV,
    CounterRollback,
    SessionCounter,
    data_dir,
    load_arrays,
    pool_from_bytes,
    pool_to_bytes,
    save_arrays,
)
from talus.tee import NonceSession

format = "%(asctime)s: %(message)s"
logging.basicConfig(format=format, level=logging.INFO, datefmt="%H:%M:%S")
logger = logging.getLogger()


class TestSessionCounter(unittest.TestCase):
    def test_monotone_in_memory(self):
        counter = SessionCounter(rng=np.random.default_rng(1))
        taus = [counter.next_tau() for _ in range(5)]
        self.assertEqual(len(set(taus)), 5)
        self.assertEqual([int.from_bytes(t[:8], "big") for t in taus], [1, 2, 3, 4, 5])
        self.assertTrue(all(len(t) == 16 for t in taus))

    def test_survives_restart(self):
        with tempfile.TemporaryDirectory() as directory:
            path = Path(directory) / "counter.bin"
            first = SessionCounter(path)
            for _ in range(3):
                first.next_tau()
            second = SessionCounter(path)
            self.assertEqual(int.from_bytes(second.next_tau()[:8], "big"), 4)

    def test_corrupt_file(self):
        with tempfile.TemporaryDirectory() as directory:
            path = Path(directory) / "counter.bin"
            path.write_bytes(b"\x01\x02")
            with self.assertRaises(CounterRollback):
                SessionCounter(path)


class TestNoncePool(unittest.TestCase):
    params = get_params("65")

    def sessions(self):
        rng = np.random.default_rng(3)
        return [
            NonceSession(
                tau=bytes([i]) * 16,
                signing_set=(1, 3, 4),
                w1=rng.integers(0, self.params.stripes, size=(self.params.k, 256)),
                attempts=i + 1,
                consumed=i == 0,
            )
            for i in range(2)
        ]

    def test_pool_bytes(self):
        sessions = self.sessions()
        loaded = pool_from_bytes(pool_to_bytes(sessions, self.params), NonceSession)
        self.assertEqual(len(loaded), 2)
        for before, after in zip(sessions, loaded):
            self.assertEqual(before.tau, after.tau)
            self.assertEqual(before.signing_set, after.signing_set)
            self.assertEqual(before.attempts, after.attempts)
            self.assertEqual(before.consumed, after.consumed)
            np.testing.assert_array_equal(before.w1, after.w1)

    def test_malformed(self):
        data = pool_to_bytes(self.sessions(), self.params)
        with self.assertRaises(DecodeError):
            pool_from_bytes(b"XXXX" + data[4:], NonceSession)
        with self.assertRaises(DecodeError):
            pool_from_bytes(data + b"\x00", NonceSession)
        with self.assertRaises(DecodeError):
            pool_from_bytes(data[:30], NonceSession)


class TestDataDir(unittest.TestCase):
    def test_environment(self):
        with tempfile.TemporaryDirectory() as directory:
            target = Path(directory) / "state"
            previous = os.environ.get(DATA_DIR_ENV)
            os.environ[DATA_DIR_ENV] = str(target)
            try:
                self.assertEqual(data_dir(), target)
                self.assertTrue(target.is_dir())
                self.assertEqual(data_dir(Path(directory)), Path(directory))
            finally:
                if previous is None:
                    del os.environ[DATA_DIR_ENV]
                else:
                    os.environ[DATA_DIR_ENV] = previous

    def test_arrays(self):
        with tempfile.TemporaryDirectory() as directory:
            path = Path(directory) / "state.npz"
            arrays = {"s2": np.arange(12).reshape(3, 4), "level": np.array([65])}
            save_arrays(path, arrays)
            loaded = load_arrays(path)
        self.assertEqual(sorted(loaded), ["level", "s2"])
        np.testing.assert_array_equal(loaded["s2"], arrays["s2"])
