import unittest
import logging

import numpy as np
from dilithium_py.ml_dsa import ML_DSA_44, ML_DSA_65, ML_DSA_87

from talus import harness
from talus.mldsa_core import PublicKey, keygen, sign_single, verify
from talus.params import get_params

format = "%(asctime)s: %(message)s"
logging.basicConfig(format=format, level=logging.INFO, datefmt="%H:%M:%S")
logger = logging.getLogger()

MESSAGE = b"interop"


class BaseTestClass:
    class TestClass(unittest.TestCase):
        level: str
        reference: object

        def test_reference_accepts_ours(self):
            pk, sk = keygen(np.random.default_rng(5).bytes(32), self.level)
            signature = sign_single(sk, MESSAGE, bytes(32))
            self.assertTrue(self.reference.verify(pk.to_bytes(), MESSAGE, signature.to_bytes()))

        def test_ours_accepts_reference(self):
            pk_bytes, sk_bytes = self.reference.keygen()
            signature = self.reference.sign(sk_bytes, MESSAGE)
            pk = PublicKey.from_bytes(pk_bytes, get_params(self.level))
            self.assertTrue(verify(pk, MESSAGE, signature))
            self.assertFalse(verify(pk, MESSAGE + b"?", signature))

        def test_threshold_signatures(self):
            for profile in harness.PROFILES:
                outcome = harness.run(
                    harness.ProtocolConfig(
                        profile=profile,
                        level=self.level,
                        message=MESSAGE,
                        seed=11,
                        max_attempts=100,
                    )
                )
                self.assertTrue(outcome.verified, profile)
                self.assertTrue(
                    self.reference.verify(
                        outcome.pk.to_bytes(), MESSAGE, outcome.signature.to_bytes()
                    ),
                    profile,
                )


class TestInterop44(BaseTestClass.TestClass):
    level = "44"
    reference = ML_DSA_44


class TestInterop65(BaseTestClass.TestClass):
    level = "65"
    reference = ML_DSA_65


class TestInterop87(BaseTestClass.TestClass):
    level = "87"
    reference = ML_DSA_87
