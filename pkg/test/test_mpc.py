import unittest
import logging

import numpy as np

from talus.carry_compare import backend_rounds, round_count
from talus.cef import masked_broadcast_bytes
from talus.harness import ProtocolConfig, run_protocol
from talus.message import MessageType
from talus.mldsa_core import verify
from talus.mpc import (
    Abort,
    Blame,
    ConfigurationGuardError,
    DuplicateSession,
    check_configuration,
    create_parties,
    mpc_blame,
    mpc_keygen,
    mpc_preprocess,
    mpc_refresh,
    mpc_sign,
)
from talus.network import SimNetwork
from talus.storage import SessionCounter
from test.util import async_test

format = "%(asctime)s: %(message)s"
logging.basicConfig(format=format, level=logging.INFO, datefmt="%H:%M:%S")
logger = logging.getLogger()

MESSAGE = b"mpc message"


class TestConfigurationGuard(unittest.TestCase):
    def test_accepted(self):
        for threshold, parties in [(2, 2), (2, 3), (3, 5), (4, 7), (5, 9)]:
            check_configuration(threshold, parties)

    def test_rejected(self):
        for threshold, parties in [(1, 3), (3, 4), (4, 6), (5, 8), (3, 2)]:
            with self.assertRaises(ConfigurationGuardError):
                check_configuration(threshold, parties)

    def test_create_parties(self):
        with self.assertRaises(ConfigurationGuardError):
            create_parties("65", 3, 4, seed=1)

    @async_test
    async def test_guard_before_messages(self):
        with self.assertRaises(ConfigurationGuardError):
            await run_protocol(ProtocolConfig(threshold=3, parties=4))


class BaseTestClass:
    class TestClass(unittest.TestCase):
        level: str
        threshold: int
        parties: int
        carry_backend = None

        async def asyncSetUp(self) -> None:
            self.parties_by_id = create_parties(
                self.level, self.threshold, self.parties, seed=17
            )
            self.network = SimNetwork(seed=17)
            self.pk, self.coordinator = await mpc_keygen(self.parties_by_id, self.network)
            self.counter = SessionCounter(rng=np.random.default_rng(18))
            self.signing_set = list(range(1, self.threshold + 1))

        async def asyncTearDown(self) -> None:
            pass

        async def sign(self, attempts: int = 40):
            for _ in range(attempts):
                tau = self.counter.next_tau()
                result = await mpc_preprocess(
                    self.parties_by_id,
                    self.coordinator,
                    self.signing_set,
                    tau,
                    self.network,
                    self.carry_backend,
                )
                try:
                    signature = await mpc_sign(
                        self.parties_by_id, self.coordinator, tau, MESSAGE, self.network
                    )
                except Blame:
                    raise
                except Abort as abort:
                    logger.info(f"Retrying after {abort.reason}")
                    if abort.reason != "z-bound":
                        # Honest runs never produce a culprit
                        blamed = await mpc_blame(
                            self.parties_by_id, tau, self.network, self.carry_backend
                        )
                        self.assertEqual(blamed, [])
                    else:
                        for party in self.parties_by_id.values():
                            party.close_session(tau)
                    continue
                return result, signature
            raise AssertionError(f"No signature in {attempts} attempts")

        @async_test
        async def test_keygen(self):
            await self.asyncSetUp()

            for party in self.parties_by_id.values():
                self.assertEqual(party.pk.to_bytes(), self.pk.to_bytes())
                self.assertIsNotNone(party.s1_share)
            self.assertEqual(self.network.transcript.rounds("keygen"), 3)

            await self.asyncTearDown()

        @async_test
        async def test_sign(self):
            await self.asyncSetUp()

            result, signature = await self.sign()
            self.assertTrue(verify(self.pk, MESSAGE, signature))
            self.assertFalse(verify(self.pk, MESSAGE + b"!", signature))

            kind = self.carry_backend or ("dcf" if self.threshold == 2 else "cscp")
            self.assertEqual(result.carry_backend, kind)
            self.assertEqual(result.rounds, backend_rounds(kind, self.threshold))
            self.assertEqual(self.network.transcript.rounds("sign", tau=result.tau), 2)

            await self.asyncTearDown()

        @async_test
        async def test_duplicate_session(self):
            await self.asyncSetUp()

            result, _ = await self.sign()
            with self.assertRaises(DuplicateSession):
                await mpc_preprocess(
                    self.parties_by_id,
                    self.coordinator,
                    self.signing_set,
                    result.tau,
                    self.network,
                    self.carry_backend,
                )
            with self.assertRaises(DuplicateSession):
                await mpc_sign(
                    self.parties_by_id, self.coordinator, result.tau, MESSAGE, self.network
                )

            await self.asyncTearDown()

        @async_test
        async def test_wrong_signing_set_size(self):
            await self.asyncSetUp()

            with self.assertRaises(ValueError):
                await mpc_preprocess(
                    self.parties_by_id,
                    self.coordinator,
                    list(range(1, self.threshold + 2)),
                    self.counter.next_tau(),
                    self.network,
                )

            await self.asyncTearDown()

        @async_test
        async def test_refresh(self):
            await self.asyncSetUp()

            before = {i: p.s1_share.copy() for i, p in self.parties_by_id.items()}
            await mpc_refresh(self.parties_by_id, self.coordinator, self.network)
            self.assertTrue(
                any(
                    not np.array_equal(before[i], p.s1_share)
                    for i, p in self.parties_by_id.items()
                )
            )
            _, signature = await self.sign()
            self.assertTrue(verify(self.pk, MESSAGE, signature))

            await self.asyncTearDown()

        @async_test
        async def test_refresh_rejected(self):
            await self.asyncSetUp()

            before = {i: p.s1_share.copy() for i, p in self.parties_by_id.items()}
            with self.assertRaises(Blame) as context:
                await mpc_refresh(
                    self.parties_by_id, self.coordinator, self.network, nonzero_constant=[2]
                )
            self.assertEqual(context.exception.blamed, [2])
            for i, party in self.parties_by_id.items():
                np.testing.assert_array_equal(before[i], party.s1_share)

            await self.asyncTearDown()


class TestMpc44Pair(BaseTestClass.TestClass):
    level = "44"
    threshold = 2
    parties = 3


class TestMpc65Triple(BaseTestClass.TestClass):
    level = "65"
    threshold = 3
    parties = 5


class TestMpc65PlainBackend(BaseTestClass.TestClass):
    level = "65"
    threshold = 2
    parties = 2
    carry_backend = "plain"


class TestWireSizes(unittest.TestCase):
    @async_test
    async def test_message_sizes(self):
        outcome = await run_protocol(
            ProtocolConfig(level="65", threshold=3, parties=5, seed=2, max_attempts=60)
        )
        transcript = outcome.transcript
        responses = transcript.messages("sign", message_type=MessageType.RESPONSE)
        broadcasts = transcript.messages(
            "preprocess", message_type=MessageType.MASKED_BROADCAST
        )
        self.assertTrue(responses)
        self.assertEqual({len(m.body) for m in responses}, {3680})
        self.assertEqual({len(m.body) for m in broadcasts}, {4416})
        self.assertEqual(masked_broadcast_bytes(outcome.pk.params), 4416)
        self.assertEqual(outcome.offline_rounds, round_count(3))
        self.assertEqual(outcome.online_rounds, 1)


class TestBlame(unittest.TestCase):
    async def blamed_for(self, fault: str, **kwargs) -> list:
        settings = dict(level="44", threshold=3, parties=5, seed=4, max_attempts=60)
        settings.update(kwargs)
        config = ProtocolConfig(fault=fault, **settings)
        outcome = await run_protocol(config)
        self.assertEqual(outcome.signatures, [])
        self.assertEqual(outcome.blamed, [config.culprit])
        return outcome.blamed

    @async_test
    async def test_response(self):
        await self.blamed_for("response")

    @async_test
    async def test_nonce_share(self):
        await self.blamed_for("nonce-share")

    @async_test
    async def test_masked_broadcast(self):
        await self.blamed_for("masked-broadcast")

    @async_test
    async def test_gate(self):
        await self.blamed_for("gate")

    @async_test
    async def test_gate_two_signers(self):
        blamed = await self.blamed_for("gate", threshold=2, parties=3)
        self.assertEqual(blamed, [2])

    @async_test
    async def test_refresh(self):
        await self.blamed_for("refresh", faulty_party=4)

    @async_test
    async def test_rushing_response(self):
        await self.blamed_for("response", mode="rushing")
