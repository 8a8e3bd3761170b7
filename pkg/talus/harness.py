"""End-to-end protocol runs over the simulated network or a relay hub"""
import asyncio
import logging
import statistics
import time
from collections import Counter
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from . import mpc, tee
from .cef import MaskedBroadcast
from .hub import Hub
from .message import Message, MessageType
from .mldsa_core import PublicKey, Signature, verify
from .network import Network, SimNetwork, Tamper, Transcript, TransportNetwork
from .params import Q, get_params
from .shamir import vector_from_bytes, vector_to_bytes
from .storage import SessionCounter
from .transport import PartyTransport

logger = logging.getLogger(__name__)

PROFILES = ("tee", "mpc")
FAULTS = ("response", "masked-broadcast", "gate", "nonce-share", "refresh")
GATE_TYPES = (MessageType.CSA_GATES, MessageType.PREFIX_GATES)


@dataclass
class ProtocolConfig:
    profile: str = "mpc"
    level: str = "65"
    threshold: int = 3
    parties: int = 5
    signing_set: Optional[Sequence[int]] = None
    message: bytes = b"talus"
    seed: int = 0
    carry_backend: Optional[str] = None
    mode: str = "lockstep"
    fault: Optional[str] = None
    faulty_party: Optional[int] = None
    transport_url: Optional[str] = None
    signatures: int = 1
    max_attempts: int = 50
    refresh: bool = False
    audit_failures: bool = True
    timeout: float = 30.0

    @property
    def signers(self) -> List[int]:
        if self.signing_set is not None:
            return sorted(self.signing_set)
        return list(range(1, self.threshold + 1))

    @property
    def culprit(self) -> int:
        return self.faulty_party if self.faulty_party is not None else self.signers[-1]


@dataclass
class LatencyReport:
    network_ms: Dict[str, float]
    total_ms: Dict[str, float]
    samples: int


@dataclass
class Outcome:
    pk: PublicKey
    signatures: List[Signature]
    verified: bool
    attempts: int
    offline_rounds: int
    online_rounds: int
    blamed: List[int]
    aborts: Counter
    transcript: Transcript
    bytes_per_party: Dict[str, Dict[int, int]]
    latency: Optional[LatencyReport] = None
    retries: List[int] = field(default_factory=list)

    @property
    def signature(self) -> Optional[Signature]:
        return self.signatures[0] if self.signatures else None

    def summary(self) -> Dict:
        row = {
            "signatures": len(self.signatures),
            "verified": self.verified,
            "attempts": self.attempts,
            "offline_rounds": self.offline_rounds,
            "online_rounds": self.online_rounds,
            "blamed": " ".join(str(i) for i in self.blamed),
            "aborts": ";".join(f"{k}={v}" for k, v in sorted(self.aborts.items())),
            "messages": len(self.transcript),
            "transcript": self.transcript.digest(),
        }
        for phase, per_party in self.bytes_per_party.items():
            row[f"bytes_{phase}"] = sum(per_party.values())
        if self.latency is not None:
            row["network_ms"] = self.latency.network_ms["median"]
            row["total_ms"] = self.latency.total_ms["median"]
        if self.signature is not None:
            row["signature"] = self.signature.to_bytes().hex()
        return row


def summarize(samples: Sequence[float]) -> Dict[str, float]:
    if not samples:
        return {"median": 0.0, "max": 0.0}
    return {"median": statistics.median(samples), "max": max(samples)}


# Fault injection


def corrupt_vector(body: bytes, dim: int) -> bytes:
    value = vector_from_bytes(body, dim)
    value[0, 0] = (value[0, 0] + 1) % Q
    return vector_to_bytes(value)


def fault_tamper(config: ProtocolConfig) -> Optional[Tamper]:
    """Tamper hook replacing messages of the faulty party"""
    if config.fault is None or config.fault == "refresh":
        return None
    if config.fault not in FAULTS:
        raise ValueError(f"Unknown fault: {config.fault}")
    params = get_params(config.level)
    culprit = config.culprit

    def tamper(phase: str, message: Message) -> Message:
        if message.sender != culprit:
            return message
        body = None
        if config.fault == "response" and message.type == MessageType.RESPONSE:
            body = corrupt_vector(message.body, params.l)
        elif config.fault == "nonce-share" and message.type == MessageType.NONCE_SHARE:
            body = corrupt_vector(message.body, params.l)
        elif (
            config.fault == "masked-broadcast"
            and message.type == MessageType.MASKED_BROADCAST
        ):
            broadcast = MaskedBroadcast.from_bytes(message.body, params)
            broadcast.h_tilde[0, 0] = (
                broadcast.h_tilde[0, 0] + params.stripes // 2
            ) % params.stripes
            body = broadcast.to_bytes(params)
        elif config.fault == "gate" and message.type in GATE_TYPES:
            body = bytes(b ^ 0xFF for b in message.body)
        if body is None:
            return message
        logger.info(f"Injected {config.fault} fault into {message.header()}")
        return Message(
            message.type, message.tau, message.round, message.sender, message.receiver, body
        )

    return tamper


# Networks


class NetSetup:
    """Hub plus one connected transport per participant"""

    def __init__(self, url: str, participants: Sequence[int], timeout: float) -> None:
        self.url = url
        self.participants = list(participants)
        self.timeout = timeout
        self.hub = Hub()
        self.transports: Dict[int, PartyTransport] = {}

    async def __aenter__(self) -> Dict[int, PartyTransport]:
        url = await self.hub.start(self.url)
        for party in self.participants:
            transport = PartyTransport.create_transport(url, party)
            await transport.connect()
            self.transports[party] = transport
        await self.hub.wait_for_parties(self.participants, timeout=self.timeout)
        return self.transports

    async def __aexit__(self, *exc_info) -> None:
        for transport in self.transports.values():
            await transport.disconnect()
        await self.hub.stop()


class Rusher:
    """Holds back the faulty party's messages until the honest ones are out

    The faulty party then sends what it would have sent anyway, possibly
    tampered, having seen the whole honest round first.
    """

    def __init__(self, culprit: int, tamper: Optional[Tamper] = None) -> None:
        self.culprit = culprit
        self.inner = tamper
        self.held: List[Message] = []
        self.rounds_seen = 0

    def tamper(self, phase: str, message: Message) -> Message:
        if self.inner is not None:
            message = self.inner(phase, message)
        if message.sender == self.culprit:
            self.held.append(message)
        return message

    def rush(
        self, phase: str, round_index: int, honest: List[Message]
    ) -> Dict[int, List[Message]]:
        self.rounds_seen += 1
        held, self.held = self.held, []
        return {self.culprit: held}


def make_network(config: ProtocolConfig, transports=None) -> Network:
    tamper = fault_tamper(config)
    if transports is not None:
        return TransportNetwork(transports, timeout=config.timeout, tamper=tamper)
    if config.mode == "rushing":
        rusher = Rusher(config.culprit, tamper)
        return SimNetwork(
            seed=config.seed,
            mode="rushing",
            corrupted=[config.culprit],
            rush_hook=rusher.rush,
            tamper=rusher.tamper,
        )
    return SimNetwork(seed=config.seed, tamper=tamper)


# Runs


async def run_mpc(config: ProtocolConfig, network: Network) -> Outcome:
    signers = config.signers
    parties = mpc.create_parties(config.level, config.threshold, config.parties, config.seed)
    pk, coordinator = await mpc.mpc_keygen(parties, network)
    counter = SessionCounter(rng=np.random.default_rng([config.seed, 0x7A]))
    dealer = np.random.default_rng([config.seed, 0xDC])

    blamed: List[int] = []
    if config.refresh or config.fault == "refresh":
        faulty = [config.culprit] if config.fault == "refresh" else []
        try:
            await mpc.mpc_refresh(parties, coordinator, network, nonzero_constant=faulty)
        except mpc.Blame as blame:
            blamed = blame.blamed

    signatures: List[Signature] = []
    aborts: Counter = Counter()
    attempts = 0
    offline_rounds = 0
    online_ms: List[float] = []
    network_ms: List[float] = []
    while not blamed and len(signatures) < config.signatures and attempts < config.max_attempts:
        attempts += 1
        tau = counter.next_tau()
        try:
            result = await mpc.mpc_preprocess(
                parties, coordinator, signers, tau, network, config.carry_backend, dealer
            )
            offline_rounds = result.rounds
            started = time.perf_counter()
            network_before = network.network_seconds
            try:
                signatures.append(
                    await mpc.mpc_sign(parties, coordinator, tau, config.message, network)
                )
            finally:
                online_ms.append(1000 * (time.perf_counter() - started))
                network_ms.append(1000 * (network.network_seconds - network_before))
        except mpc.Blame as blame:
            aborts["blame"] += 1
            blamed = blame.blamed
        except mpc.Abort as abort:
            aborts[abort.reason] += 1
            if config.audit_failures and abort.reason != "z-bound":
                blamed = await mpc.mpc_blame(parties, tau, network, config.carry_backend)
            else:
                for party in parties.values():
                    party.close_session(tau)

    return Outcome(
        pk=pk,
        signatures=signatures,
        verified=bool(signatures)
        and all(verify(pk, config.message, s) for s in signatures),
        attempts=attempts,
        offline_rounds=offline_rounds,
        online_rounds=1,
        blamed=blamed,
        aborts=aborts,
        transcript=network.transcript,
        bytes_per_party=network.transcript.ledger(),
        latency=LatencyReport(
            network_ms=summarize(network_ms),
            total_ms=summarize(online_ms),
            samples=len(online_ms),
        ),
    )


async def run_tee(config: ProtocolConfig, network: Network) -> Outcome:
    rng = np.random.default_rng(config.seed)
    pk, signers, coordinator = tee.tee_keygen(
        config.threshold, config.parties, rng.bytes(32), config.level, rng
    )
    counter = SessionCounter(rng=np.random.default_rng([config.seed, 0x7E]))

    blamed: List[int] = []
    if config.refresh or config.fault == "refresh":
        faulty = [config.culprit] if config.fault == "refresh" else []
        try:
            await tee.tee_refresh(coordinator, signers, network, nonzero_constant=faulty)
        except tee.RefreshRejected as rejected:
            blamed = rejected.blamed

    signatures: List[Signature] = []
    aborts: Counter = Counter()
    attempts = 0
    online_ms: List[float] = []
    network_ms: List[float] = []
    while not blamed and len(signatures) < config.signatures and attempts < config.max_attempts:
        attempts += 1
        try:
            session = await tee.tee_preprocess(
                coordinator, signers, config.signers, network, counter.next_tau
            )
            started = time.perf_counter()
            network_before = network.network_seconds
            try:
                signatures.append(
                    await tee.tee_sign(
                        coordinator, signers, session.tau, config.message, network
                    )
                )
            finally:
                online_ms.append(1000 * (time.perf_counter() - started))
                network_ms.append(1000 * (network.network_seconds - network_before))
        except tee.SigningAbort as abort:
            aborts[abort.reason] += 1
            blamed = abort.blamed

    return Outcome(
        pk=pk,
        signatures=signatures,
        verified=bool(signatures)
        and all(verify(pk, config.message, s) for s in signatures),
        attempts=attempts,
        offline_rounds=2,
        online_rounds=1,
        blamed=blamed,
        aborts=aborts,
        transcript=network.transcript,
        bytes_per_party=network.transcript.ledger(),
        latency=LatencyReport(
            network_ms=summarize(network_ms),
            total_ms=summarize(online_ms),
            samples=len(online_ms),
        ),
        retries=list(coordinator.retries),
    )


async def run_protocol(config: ProtocolConfig) -> Outcome:
    """Key generation and signing for one configuration

    Configuration guards are checked before any message is sent. With a
    ``transport_url`` every participant talks through a local relay hub.
    """
    if config.profile not in PROFILES:
        raise ValueError(f"Unknown profile: {config.profile}")
    if config.profile == "mpc":
        mpc.check_configuration(config.threshold, config.parties)
    elif not 1 <= config.threshold <= config.parties:
        raise ValueError(f"Need 1 <= T <= N, got T={config.threshold} N={config.parties}")
    signers = config.signers
    too_few = len(signers) < config.threshold
    if config.profile == "mpc":
        too_few = len(signers) != config.threshold
    if too_few or min(signers) < 1 or max(signers) > config.parties:
        raise ValueError(f"Signing set {signers} does not fit T={config.threshold}")
    if config.mode not in ("lockstep", "rushing"):
        raise ValueError(f"Unknown scheduler mode: {config.mode}")

    run = run_mpc if config.profile == "mpc" else run_tee
    if config.transport_url is None:
        return await run(config, make_network(config))

    participants = range(0, config.parties + 1)
    async with NetSetup(config.transport_url, participants, config.timeout) as transports:
        return await run(config, make_network(config, transports))


def run(config: ProtocolConfig) -> Outcome:
    return asyncio.run(run_protocol(config))
