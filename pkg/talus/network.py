"""Round-synchronous message exchange between parties

A protocol driver hands every round's outbox to :meth:`Network.exchange` and
gets back, per participant, the messages addressed to it. Broadcasts are
delivered to every participant including the sender. Every message that
crosses the network is appended to the :class:`Transcript`.
"""
import hashlib
import json
import logging
import struct
import time
from abc import ABC, abstractmethod
from collections import Counter
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable, Dict, Iterable, List, Mapping, Optional, Sequence, Set, Union

import numpy as np

from .bcc import compute_public_hint
from .carry_compare import (
    CarryResult,
    backend_rounds,
    combine_bit_shares,
    decode_reveal,
    default_backend,
)
from .cef import MaskedBroadcast, combine_masked, masked_w1
from .mldsa_core import PublicKey, Signature, centered, sample_in_ball
from .message import Message, MessageType, header_bytes, split_frame
from .round_inbox import RoundTimeout
from .shamir import lagrange_coeffs, lagrange_combine, vector_from_bytes
from .transport import PartyTransport

logger = logging.getLogger(__name__)

__all__ = [
    "Network",
    "Record",
    "RoundTimeout",
    "SimNetwork",
    "Transcript",
    "TransportNetwork",
    "replay_outputs",
]

Outbox = Mapping[int, Sequence[Message]]
Inbox = Dict[int, List[Message]]
Tamper = Callable[[str, Message], Message]
RushHook = Callable[[str, int, List[Message]], Mapping[int, Sequence[Message]]]

PHASE = struct.Struct(">B")


@dataclass(frozen=True)
class Record:
    phase: str
    round: int
    type: str
    sender: int
    receiver: Union[int, str]
    length: int
    digest: str


class Transcript:
    """Append-only log of every message sent, with byte and round accounting"""

    __entries: List[tuple]

    def __init__(self) -> None:
        self.__entries = []

    def __len__(self) -> int:
        return len(self.__entries)

    def record(self, phase: str, message: Message) -> None:
        self.__entries.append((phase, message))

    @property
    def records(self) -> List[Record]:
        return [
            Record(
                phase=phase,
                round=message.round,
                type=message.type.name,
                sender=message.sender,
                receiver="broadcast" if message.is_broadcast else message.receiver,
                length=len(message.body),
                digest=message.digest,
            )
            for phase, message in self.__entries
        ]

    def messages(
        self,
        phase: Optional[str] = None,
        round_index: Optional[int] = None,
        message_type: Optional[MessageType] = None,
        tau: Optional[bytes] = None,
    ) -> List[Message]:
        return [
            message
            for entry_phase, message in self.__entries
            if (phase is None or entry_phase == phase)
            and (round_index is None or message.round == round_index)
            and (message_type is None or message.type == message_type)
            and (tau is None or message.tau == tau)
        ]

    def phases(self) -> List[str]:
        seen = []
        for phase, _ in self.__entries:
            if phase not in seen:
                seen.append(phase)
        return seen

    def rounds(self, phase: str, tau: Optional[bytes] = None) -> int:
        return len({m.round for m in self.messages(phase, tau=tau)})

    def bytes_sent(
        self,
        phase: Optional[str] = None,
        party: Optional[int] = None,
        message_type: Optional[MessageType] = None,
        headers: bool = False,
    ) -> int:
        """Body bytes, plus frame header bytes when ``headers`` is set"""
        total = 0
        for message in self.messages(phase, message_type=message_type):
            if party is not None and message.sender != party:
                continue
            total += len(message.body) + (header_bytes() if headers else 0)
        return total

    def ledger(self) -> Dict[str, Dict[int, int]]:
        """phase -> sender -> body bytes"""
        ledger: Dict[str, Dict[int, int]] = {}
        for phase, message in self.__entries:
            per_party = ledger.setdefault(phase, {})
            per_party[message.sender] = per_party.get(message.sender, 0) + len(message.body)
        return ledger

    def by_type(self, phase: Optional[str] = None) -> Dict[str, int]:
        counts: Dict[str, int] = {}
        for message in self.messages(phase):
            counts[message.type.name] = counts.get(message.type.name, 0) + len(message.body)
        return counts

    def digest(self) -> str:
        hasher = hashlib.sha256()
        for phase, message in self.__entries:
            hasher.update(phase.encode())
            hasher.update(message.to_frame())
        return hasher.hexdigest()

    def to_bytes(self) -> bytes:
        """Framed binary: ``u8 len ∥ phase ∥ frame`` per message"""
        chunks = []
        for phase, message in self.__entries:
            name = phase.encode()
            chunks.append(PHASE.pack(len(name)) + name + message.to_frame())
        return b"".join(chunks)

    @classmethod
    def from_bytes(cls, data: bytes) -> "Transcript":
        transcript = cls()
        while data:
            (size,) = PHASE.unpack_from(data)
            phase = data[PHASE.size : PHASE.size + size].decode()
            message, data = split_frame(data[PHASE.size + size :])
            if message is None:
                raise ValueError("Truncated transcript")
            transcript.record(phase, message)
        return transcript

    def to_jsonl(self) -> str:
        return "".join(json.dumps(asdict(record)) + "\n" for record in self.records)

    def save(self, path: Union[str, Path]) -> None:
        """Writes ``<path>.bin`` and the ``<path>.jsonl`` index"""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.with_suffix(".bin").write_bytes(self.to_bytes())
        path.with_suffix(".jsonl").write_text(self.to_jsonl())
        logger.info(f"Transcript saved: {path.with_suffix('.bin')} ({len(self)} messages)")

    @classmethod
    def load(cls, path: Union[str, Path]) -> "Transcript":
        return cls.from_bytes(Path(path).with_suffix(".bin").read_bytes())


def route(messages: Iterable[Message], participants: Iterable[int]) -> Inbox:
    """Deliver every message to its receiver, broadcasts to all participants"""
    inbox: Inbox = {party: [] for party in participants}
    for message in messages:
        if message.is_broadcast:
            for party in inbox:
                inbox[party].append(message)
        elif message.receiver in inbox:
            inbox[message.receiver].append(message)
        else:
            logger.warning(f"Receiver not participating: {message.header()}")
    return inbox


class Network(ABC):
    """Lockstep exchange of one round at a time"""

    transcript: Transcript
    round_counts: Dict[str, int]
    network_seconds: float

    def __init__(self, tamper: Optional[Tamper] = None) -> None:
        self.transcript = Transcript()
        self.round_counts = {}
        self.network_seconds = 0.0
        self.tamper = tamper

    @abstractmethod
    async def _deliver(
        self, phase: str, messages: List[Message], participants: Sequence[int]
    ) -> Inbox:
        pass

    async def exchange(
        self, phase: str, outbox: Outbox, participants: Iterable[int]
    ) -> Inbox:
        participants = sorted(set(participants))
        messages = []
        for sender in sorted(outbox):
            for message in outbox[sender]:
                if message.sender != sender:
                    raise Exception(f"Outbox of {sender} holds a message of {message.sender}")
                if self.tamper is not None:
                    message = self.tamper(phase, message)
                messages.append(message)

        started = time.perf_counter()
        inbox = await self._deliver(phase, messages, participants)
        self.network_seconds += time.perf_counter() - started

        self.round_counts[phase] = self.round_counts.get(phase, 0) + 1
        logger.debug(
            f"{phase}: round {self.round_counts[phase]} delivered {len(messages)} messages"
        )
        return inbox


class SimNetwork(Network):
    """In-process delivery

    In ``rushing`` mode the messages of ``corrupted`` parties are produced by
    ``rush_hook`` after it has seen every honest message of the round.
    ``seed`` shuffles delivery order deterministically.
    """

    def __init__(
        self,
        seed: Optional[int] = None,
        mode: str = "lockstep",
        corrupted: Iterable[int] = (),
        rush_hook: Optional[RushHook] = None,
        tamper: Optional[Tamper] = None,
    ) -> None:
        super().__init__(tamper=tamper)
        if mode not in ("lockstep", "rushing"):
            raise ValueError(f"Unknown scheduler mode: {mode}")
        if mode == "rushing" and rush_hook is None:
            raise ValueError("Rushing mode needs a rush_hook")
        self.mode = mode
        self.corrupted: Set[int] = set(corrupted)
        self.rush_hook = rush_hook
        self.__rng = np.random.default_rng(seed) if seed is not None else None

    async def _deliver(
        self, phase: str, messages: List[Message], participants: Sequence[int]
    ) -> Inbox:
        if self.mode == "rushing":
            honest = [m for m in messages if m.sender not in self.corrupted]
            round_index = self.round_counts.get(phase, 0)
            replacement = self.rush_hook(phase, round_index, honest)
            messages = honest + [
                message
                for party in sorted(self.corrupted)
                for message in replacement.get(party, [])
            ]

        for message in messages:
            self.transcript.record(phase, message)

        inbox = route(messages, participants)
        if self.__rng is not None:
            for party, received in inbox.items():
                order = self.__rng.permutation(len(received))
                inbox[party] = [received[i] for i in order]
        return inbox


class TransportNetwork(Network):
    """Delivery through a relay hub, one :class:`PartyTransport` per participant

    The expected senders of every receiver are known from the outbox; a
    receiver that does not get them within ``timeout`` raises
    :class:`RoundTimeout` naming the missing parties.
    """

    def __init__(
        self,
        transports: Mapping[int, PartyTransport],
        timeout: Optional[float] = 30.0,
        tamper: Optional[Tamper] = None,
    ) -> None:
        super().__init__(tamper=tamper)
        self.transports = dict(transports)
        self.timeout = timeout

    async def _deliver(
        self, phase: str, messages: List[Message], participants: Sequence[int]
    ) -> Inbox:
        for message in messages:
            self.transcript.record(phase, message)
            await self.transports[message.sender].send(message)

        inbox: Inbox = {}
        for party in participants:
            own = [m for m in messages if m.sender == party and m.is_broadcast]
            expected = Counter(
                m.sender
                for m in messages
                if m.sender != party and (m.is_broadcast or m.receiver == party)
            )
            if not expected:
                inbox[party] = own
                continue
            rounds = {m.round for m in messages}
            received = await self.transports[party].inbox.collect(
                round_index=min(rounds),
                expected=dict(expected),
                matcher=lambda m: m.round in rounds,
                timeout=self.timeout,
            )
            inbox[party] = own + received
        return inbox


@dataclass
class ReplayedOutputs:
    w1: np.ndarray
    signature: Optional[Signature]


def replay_outputs(
    transcript: Transcript,
    pk: PublicKey,
    tau: bytes,
    carry_backend: Optional[str] = None,
) -> ReplayedOutputs:
    """w1 and the assembled signature from the recorded public messages only"""
    params = pk.params
    broadcasts = {
        m.sender: MaskedBroadcast.from_bytes(m.body, params)
        for m in transcript.messages(
            "preprocess", message_type=MessageType.MASKED_BROADCAST, tau=tau
        )
    }
    if not broadcasts:
        raise ValueError(f"No masked broadcasts recorded for session {tau.hex()}")
    signers = sorted(broadcasts)
    kind = carry_backend or default_backend(len(signers))

    h_sum, b_sum = combine_masked([broadcasts[h] for h in signers], params)
    t = (b_sum % params.alpha).reshape(-1)
    gates = [
        m
        for m in transcript.messages("preprocess", tau=tau)
        if m.type in (MessageType.CSA_GATES, MessageType.PREFIX_GATES)
    ]
    last = backend_rounds(kind, len(signers)) - 1
    if kind == "cscp":
        result = decode_reveal(
            {m.sender: m.body for m in gates if m.round == last}, signers, t, params
        )
    elif kind == "dcf":
        c = combine_bit_shares(
            {m.sender: m.body for m in gates if m.round == 1}, signers, t.size
        )
        delta = combine_bit_shares(
            {m.sender: m.body for m in gates if m.round == 2}, signers, t.size
        )
        result = CarryResult(c=c.astype(np.int64), delta=delta.astype(np.int64))
    else:
        raise ValueError(f"Carry backend {kind} leaves no public record")

    shape = (params.k, params.n)
    w1 = masked_w1(h_sum, b_sum, result.c.reshape(shape), result.delta.reshape(shape), params)

    challenges = transcript.messages("sign", message_type=MessageType.CHALLENGE, tau=tau)
    responses = {
        m.sender: vector_from_bytes(m.body, params.l)
        for m in transcript.messages("sign", message_type=MessageType.RESPONSE, tau=tau)
    }
    if not challenges or sorted(responses) != signers:
        return ReplayedOutputs(w1=w1, signature=None)

    ctilde = challenges[-1].body
    c_poly = sample_in_ball(ctilde, params)
    z = centered(lagrange_combine(responses, lagrange_coeffs(signers)))
    h = compute_public_hint(pk, z, c_poly, w1)
    return ReplayedOutputs(w1=w1, signature=Signature(ctilde=ctilde, z=z, h=h, params=params))
