"""Local timings of every protocol operation

Numbers are hardware-bound; the report schema is what matters:
phase, operation, T, N, median_ms, max_ms, samples, network_ms, total_ms.
"""
import logging
import math
import statistics
import time
from dataclasses import asdict, dataclass
from typing import Awaitable, Callable, List, Optional

import numpy as np

from . import mpc, tee
from .experiments import ExperimentReport
from .harness import NetSetup
from .mldsa_core import keygen, sign_single, verify
from .network import Network, SimNetwork, TransportNetwork
from .params import get_params
from .storage import SessionCounter

logger = logging.getLogger(__name__)

MESSAGE = b"talus bench"


@dataclass
class BenchRow:
    phase: str
    operation: str
    T: int
    N: int
    median_ms: float
    max_ms: float
    samples: int
    network_ms: Optional[float] = None
    total_ms: Optional[float] = None


class Stopwatch:
    """Wall-clock and network time per sample"""

    def __init__(self, network: Optional[Network] = None) -> None:
        self.network = network
        self.total: List[float] = []
        self.waiting: List[float] = []

    async def measure(self, operation: Callable[[], Awaitable]):
        network_before = self.network.network_seconds if self.network else 0.0
        started = time.perf_counter()
        try:
            return await operation()
        finally:
            self.total.append(1000 * (time.perf_counter() - started))
            if self.network is not None:
                self.waiting.append(1000 * (self.network.network_seconds - network_before))

    def row(self, phase: str, operation: str, threshold: int, parties: int) -> BenchRow:
        median = statistics.median(self.total) if self.total else math.nan
        return BenchRow(
            phase=phase,
            operation=operation,
            T=threshold,
            N=parties,
            median_ms=median,
            max_ms=max(self.total, default=math.nan),
            samples=len(self.total),
            network_ms=statistics.median(self.waiting) if self.waiting else None,
            total_ms=median if self.waiting else None,
        )


def reference_rows(level: str, samples: int, seed: int) -> List[BenchRow]:
    params = get_params(level)
    rng = np.random.default_rng(seed)
    rows = []
    for operation in ("keygen", "sign", "verify"):
        timings = []
        for _ in range(samples):
            started = time.perf_counter()
            pk, sk = keygen(rng.bytes(32), params)
            elapsed = time.perf_counter() - started
            if operation != "keygen":
                started = time.perf_counter()
                signature = sign_single(sk, MESSAGE, rng.bytes(32))
                elapsed = time.perf_counter() - started
            if operation == "verify":
                started = time.perf_counter()
                verify(pk, MESSAGE, signature)
                elapsed = time.perf_counter() - started
            timings.append(1000 * elapsed)
        rows.append(
            BenchRow(
                "reference", operation, 1, 1, statistics.median(timings), max(timings), samples
            )
        )
    return rows


async def tee_rows(
    level: str, threshold: int, parties: int, samples: int, seed: int, network: Network
) -> List[BenchRow]:
    rng = np.random.default_rng(seed)
    keygen_watch = Stopwatch()
    for _ in range(samples):
        started = time.perf_counter()
        pk, signers, coordinator = tee.tee_keygen(threshold, parties, rng.bytes(32), level, rng)
        keygen_watch.total.append(1000 * (time.perf_counter() - started))

    signing_set = list(range(1, threshold + 1))
    counter = SessionCounter(rng=np.random.default_rng([seed, 1]))
    preprocess = Stopwatch(network)
    sign = Stopwatch(network)
    for _ in range(samples):
        try:
            session = await preprocess.measure(
                lambda: tee.tee_preprocess(
                    coordinator, signers, signing_set, network, counter.next_tau
                )
            )
            await sign.measure(
                lambda: tee.tee_sign(coordinator, signers, session.tau, MESSAGE, network)
            )
        except tee.SigningAbort as abort:
            logger.info(f"Bench signing attempt aborted: {abort}")

    return [
        keygen_watch.row("tee", "keygen", threshold, parties),
        preprocess.row("tee", "preprocess", threshold, parties),
        sign.row("tee", "sign", threshold, parties),
    ]


async def mpc_rows(
    level: str, threshold: int, parties: int, samples: int, seed: int, network: Network
) -> List[BenchRow]:
    keygen_watch = Stopwatch(network)
    for sample in range(samples):
        members = mpc.create_parties(level, threshold, parties, seed + sample)
        _, coordinator = await keygen_watch.measure(lambda: mpc.mpc_keygen(members, network))

    signing_set = list(range(1, threshold + 1))
    counter = SessionCounter(rng=np.random.default_rng([seed, 2]))
    dealer = np.random.default_rng([seed, 3])
    preprocess = Stopwatch(network)
    sign = Stopwatch(network)
    for _ in range(samples):
        tau = counter.next_tau()
        try:
            await preprocess.measure(
                lambda: mpc.mpc_preprocess(
                    members, coordinator, signing_set, tau, network, dealer_rng=dealer
                )
            )
            await sign.measure(lambda: mpc.mpc_sign(members, coordinator, tau, MESSAGE, network))
        except mpc.Abort as abort:
            logger.info(f"Bench signing attempt aborted: {abort}")
            for party in members.values():
                party.close_session(tau)

    return [
        keygen_watch.row("mpc", "keygen", threshold, parties),
        preprocess.row("mpc", "preprocess", threshold, parties),
        sign.row("mpc", "sign", threshold, parties),
    ]


async def bench(
    level: str = "65",
    threshold: int = 3,
    parties: int = 5,
    samples: int = 10,
    seed: int = 0,
    transport_url: Optional[str] = None,
    timeout: float = 30.0,
) -> ExperimentReport:
    """Reference, TEE and MPC timings; with ``transport_url`` over a local hub"""
    mpc.check_configuration(threshold, parties)
    rows = reference_rows(level, samples, seed)

    async def protocol_rows(make_network: Callable[[], Network]) -> List[BenchRow]:
        return await tee_rows(
            level, threshold, parties, samples, seed, make_network()
        ) + await mpc_rows(level, threshold, parties, samples, seed, make_network())

    if transport_url is None:
        rows += await protocol_rows(SimNetwork)
    else:
        async with NetSetup(transport_url, range(parties + 1), timeout) as transports:
            rows += await protocol_rows(lambda: TransportNetwork(transports, timeout=timeout))

    for row in rows:
        logger.info(f"{row.phase} {row.operation}: median {row.median_ms:.2f} ms")
    return ExperimentReport(name="bench", rows=[asdict(row) for row in rows])
