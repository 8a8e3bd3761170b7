import unittest
import logging
import asyncio

from talus.message import BROADCAST, Message, MessageType, session_tau
from talus.round_inbox import RoundInbox, RoundTimeout, header_matches
from test.util import async_test

format = "%(asctime)s: %(message)s"
logging.basicConfig(format=format, level=logging.INFO, datefmt="%H:%M:%S")
logger = logging.getLogger()

TAU = session_tau(b"inbox")


def message(sender: int, round_index: int = 0, receiver: int = BROADCAST, body=b"x"):
    return Message(MessageType.CSA_GATES, TAU, round_index, sender, receiver, body)


class TestHeaderMatches(unittest.TestCase):
    def test_sanity(self):
        """Sanity test"""
        self.assertTrue(header_matches({"a": 1}, {"a": 1}))

    def test_empty_dict(self):
        self.assertTrue(header_matches({"a": 1}, {}))
        self.assertTrue(header_matches({}, {}))
        self.assertFalse(header_matches({}, {"a": 1}))

    def test_ignored_types(self):
        self.assertTrue(header_matches({"a": 1, "b": None}, {"b": None}))
        self.assertTrue(header_matches({"a": 1, "b": 2}, {"b": None}))
        self.assertFalse(header_matches({"a": 1, "b": 2}, {"b": 3}))
        self.assertFalse(header_matches({"a": 1, "b": 2}, {"c": None}))

    def test_invalid_input(self):
        self.assertRaises(TypeError, header_matches, "", {})
        self.assertRaises(TypeError, header_matches, {}, "")

    def test_message_header(self):
        header = message(3, round_index=2, receiver=5).header()
        self.assertTrue(header_matches(header, {"type": "CSA_GATES", "round": 2}))
        self.assertTrue(header_matches(header, {"receiver": 5, "tau": TAU.hex()}))
        self.assertFalse(header_matches(header, {"receiver": "broadcast"}))
        self.assertTrue(header_matches(message(3).header(), {"receiver": "broadcast"}))


class TestRoundInbox(unittest.TestCase):
    @async_test
    async def test_backlog(self):
        inbox = RoundInbox()
        inbox.put_msg(message(1, round_index=2))
        inbox.put_msg(message(2, round_index=1))

        first = await inbox.get({"round": 1}, timeout=1)
        self.assertEqual(first.sender, 2)
        # the round 2 message waited in the backlog
        second = await inbox.get({"round": 2}, timeout=1)
        self.assertEqual(second.sender, 1)

    @async_test
    async def test_callable_matcher(self):
        inbox = RoundInbox()
        inbox.put_msg(message(4, body=b"abc"))
        received = await inbox.get(lambda m: m.body == b"abc", timeout=1)
        self.assertEqual(received.sender, 4)
        with self.assertRaises(TypeError):
            await inbox.get(42, timeout=1)

    @async_test
    async def test_collect(self):
        inbox = RoundInbox()
        for sender in (1, 2, 2, 3):
            inbox.put_msg(message(sender, round_index=0))
        inbox.put_msg(message(1, round_index=1))

        received = await inbox.collect(0, {1: 1, 2: 2, 3: 1}, {"round": 0}, timeout=1)
        self.assertEqual(sorted(m.sender for m in received), [1, 2, 2, 3])
        late = await inbox.get({"round": 1}, timeout=1)
        self.assertEqual(late.sender, 1)

    @async_test
    async def test_collect_late_arrival(self):
        inbox = RoundInbox()

        async def deliver():
            await asyncio.sleep(0.05)
            inbox.put_msg(message(2))

        inbox.put_msg(message(1))
        task = asyncio.create_task(deliver())
        received = await inbox.collect(0, {1: 1, 2: 1}, {"round": 0}, timeout=2)
        await task
        self.assertEqual(sorted(m.sender for m in received), [1, 2])

    @async_test
    async def test_collect_timeout_names_missing(self):
        inbox = RoundInbox()
        inbox.put_msg(message(1))
        with self.assertRaises(RoundTimeout) as context:
            await inbox.collect(4, {1: 1, 2: 1, 3: 1}, {"round": 0}, timeout=0.1)
        self.assertEqual(context.exception.missing, [2, 3])
        self.assertIn("Round 4", str(context.exception))
