import unittest
import logging
import tempfile
from dataclasses import replace

import numpy as np

from talus.harness import ProtocolConfig, run_protocol
from talus.mldsa_core import sample_in_ball, verify
from talus.network import SimNetwork
from talus.params import Q
from talus.shamir import vector_from_bytes, vector_to_bytes
from talus.storage import SessionCounter
from talus.tee import (
    RefreshRejected,
    SessionReuse,
    SigningAbort,
    load_tee,
    save_tee,
    tee_blame,
    tee_keygen,
    tee_preprocess,
    tee_refresh,
    tee_sign,
)
from test.util import async_test

format = "%(asctime)s: %(message)s"
logging.basicConfig(format=format, level=logging.INFO, datefmt="%H:%M:%S")
logger = logging.getLogger()

MESSAGE = b"tee message"


async def sign_until_accepted(coordinator, signers, signing_set, network, counter, attempts=30):
    for _ in range(attempts):
        session = await tee_preprocess(
            coordinator, signers, signing_set, network, counter.next_tau
        )
        try:
            signature = await tee_sign(coordinator, signers, session.tau, MESSAGE, network)
        except SigningAbort as abort:
            if abort.blamed:
                raise AssertionError(f"Honest signers blamed: {abort}")
            logger.info(f"Retrying after {abort.reason}")
            continue
        return session, signature
    raise AssertionError(f"No signature in {attempts} attempts")


class BaseTestClass:
    class TestClass(unittest.TestCase):
        level: str
        threshold: int
        parties: int

        async def asyncSetUp(self) -> None:
            rng = np.random.default_rng(5)
            self.pk, self.signers, self.coordinator = tee_keygen(
                self.threshold, self.parties, rng.bytes(32), self.level, rng
            )
            self.network = SimNetwork(seed=5)
            self.counter = SessionCounter(rng=np.random.default_rng(6))
            self.signing_set = list(range(self.parties - self.threshold + 1, self.parties + 1))

        async def asyncTearDown(self) -> None:
            pass

        @async_test
        async def test_sign(self):
            await self.asyncSetUp()

            session, signature = await sign_until_accepted(
                self.coordinator, self.signers, self.signing_set, self.network, self.counter
            )
            self.assertTrue(verify(self.pk, MESSAGE, signature))
            self.assertTrue(verify(self.pk, MESSAGE, signature.to_bytes()))
            self.assertFalse(verify(self.pk, b"other", signature))
            self.assertEqual(session.signing_set, tuple(self.signing_set))
            self.assertTrue(all(r >= 1 for r in self.coordinator.retries))
            self.assertEqual(self.network.transcript.rounds("sign"), 2)

            await self.asyncTearDown()

        @async_test
        async def test_session_reuse(self):
            await self.asyncSetUp()

            session, _ = await sign_until_accepted(
                self.coordinator, self.signers, self.signing_set, self.network, self.counter
            )
            self.assertNotIn(session.tau, [s.tau for s in self.coordinator.fresh_sessions()])
            with self.assertRaises(SessionReuse):
                await tee_sign(self.coordinator, self.signers, session.tau, MESSAGE, self.network)

            await self.asyncTearDown()

        @async_test
        async def test_small_signing_set(self):
            await self.asyncSetUp()

            with self.assertRaises(ValueError):
                await tee_preprocess(
                    self.coordinator,
                    self.signers,
                    self.signing_set[1:],
                    self.network,
                    self.counter.next_tau,
                )

            await self.asyncTearDown()

        @async_test
        async def test_refresh(self):
            await self.asyncSetUp()

            before = {i: signer.share.copy() for i, signer in self.signers.items()}
            await tee_refresh(self.coordinator, self.signers, self.network)
            self.assertTrue(
                any(not np.array_equal(before[i], s.share) for i, s in self.signers.items())
            )
            _, signature = await sign_until_accepted(
                self.coordinator, self.signers, self.signing_set, self.network, self.counter
            )
            self.assertTrue(verify(self.pk, MESSAGE, signature))

            await self.asyncTearDown()

        @async_test
        async def test_refresh_rejected(self):
            await self.asyncSetUp()

            before = {i: signer.share.copy() for i, signer in self.signers.items()}
            with self.assertRaises(RefreshRejected) as context:
                await tee_refresh(
                    self.coordinator, self.signers, self.network, nonzero_constant=[2]
                )
            self.assertEqual(context.exception.blamed, [2])
            for i, signer in self.signers.items():
                np.testing.assert_array_equal(before[i], signer.share)

            await self.asyncTearDown()

        @async_test
        async def test_save_load(self):
            await self.asyncSetUp()

            with tempfile.TemporaryDirectory() as directory:
                for _ in range(30):
                    session = await tee_preprocess(
                        self.coordinator,
                        self.signers,
                        self.signing_set,
                        self.network,
                        self.counter.next_tau,
                    )
                    save_tee(directory, self.coordinator, self.signers)
                    coordinator, signers = load_tee(directory)
                    self.assertEqual(
                        [s.tau for s in coordinator.fresh_sessions()], [session.tau]
                    )
                    try:
                        signature = await tee_sign(
                            coordinator, signers, session.tau, MESSAGE, self.network
                        )
                    except SigningAbort:
                        # Keep the original state in step with the consumed session
                        self.coordinator.pool.pop(session.tau)
                        for signer in self.signers.values():
                            signer.nonce_shares.pop(session.tau, None)
                        continue
                    self.assertTrue(verify(self.pk, MESSAGE, signature))
                    break
                else:
                    self.fail("No signature after reloading")

            await self.asyncTearDown()


class TestTee44(BaseTestClass.TestClass):
    level = "44"
    threshold = 2
    parties = 3


class TestTee65(BaseTestClass.TestClass):
    level = "65"
    threshold = 3
    parties = 5


class TestTeeFaults(unittest.TestCase):
    @async_test
    async def test_response_fault_blamed(self):
        config = ProtocolConfig(
            profile="tee", level="44", threshold=2, parties=3, fault="response", seed=3
        )
        outcome = await run_protocol(config)
        self.assertEqual(outcome.signatures, [])
        self.assertEqual(outcome.blamed, [config.culprit])
        # the first abort already names the culprit, whichever check caught it
        self.assertEqual(sum(outcome.aborts.values()), 1)

    @async_test
    async def test_nonce_share_fault_blamed(self):
        config = ProtocolConfig(
            profile="tee", level="44", threshold=2, parties=3, fault="nonce-share", seed=3
        )
        outcome = await run_protocol(config)
        self.assertEqual(outcome.blamed, [config.culprit])

    @async_test
    async def test_refresh_fault_blamed(self):
        config = ProtocolConfig(
            profile="tee", level="44", threshold=2, parties=3, fault="refresh", faulty_party=3
        )
        outcome = await run_protocol(config)
        self.assertEqual(outcome.blamed, [3])
        self.assertEqual(outcome.attempts, 0)


class TestTeeResponses(unittest.TestCase):
    def setUp(self) -> None:
        rng = np.random.default_rng(31)
        self.pk, self.signers, self.coordinator = tee_keygen(2, 3, rng.bytes(32), "44", rng)
        self.params = self.coordinator.params
        self.network = SimNetwork(seed=32)
        self.counter = SessionCounter(rng=np.random.default_rng(33))

    async def preprocess(self):
        return await tee_preprocess(
            self.coordinator, self.signers, [2, 3], self.network, self.counter.next_tau
        )

    def respond_all(self, session):
        challenge = self.coordinator.challenge(session.tau, MESSAGE)
        responses = {}
        for i in session.signing_set:
            (message,) = self.signers[i].respond(session.tau, [challenge], self.params)
            responses[i] = vector_from_bytes(message.body, self.params.l)
        return challenge, responses

    @async_test
    async def test_oversized_response_blamed(self):
        honest = self.signers[3].respond

        def oversized(tau, inbox, params):
            (message,) = honest(tau, inbox, params)
            z = vector_from_bytes(message.body, params.l)
            z[0, 0] = (z[0, 0] + params.gamma1) % Q
            return [replace(message, body=vector_to_bytes(z))]

        self.signers[3].respond = oversized
        # lambda_3 = -2 over {2, 3}, so the aggregate leaves the z bound every time
        for _ in range(5):
            session = await self.preprocess()
            with self.assertRaises(SigningAbort) as caught:
                await tee_sign(self.coordinator, self.signers, session.tau, MESSAGE, self.network)
            self.assertEqual(caught.exception.reason, "z-bound")
            self.assertEqual(caught.exception.blamed, [3])

    @async_test
    async def test_missing_response_blamed(self):
        session = await self.preprocess()
        challenge, responses = self.respond_all(session)
        del responses[2]
        with self.assertRaises(SigningAbort) as caught:
            self.coordinator.aggregate(session.tau, challenge.body, MESSAGE, b"", responses)
        self.assertEqual(caught.exception.reason, "missing response")
        self.assertEqual(caught.exception.blamed, [2])

    @async_test
    async def test_missing_challenge(self):
        session = await self.preprocess()
        with self.assertRaises(SigningAbort) as caught:
            self.signers[2].respond(session.tau, [], self.params)
        self.assertEqual(caught.exception.reason, "missing challenge")

    @async_test
    async def test_blame_flags_each_corrupted_response(self):
        session = await self.preprocess()
        challenge, responses = self.respond_all(session)
        c = sample_in_ball(challenge.body, self.params)
        self.assertEqual(tee_blame(self.coordinator, session, responses, c), [])

        for i in (2, 3):
            responses[i] = responses[i].copy()
            responses[i][1, 5] = (responses[i][1, 5] + 1) % Q
        self.assertEqual(tee_blame(self.coordinator, session, responses, c), [2, 3])
