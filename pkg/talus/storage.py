"""Data directory layout: session counter, nonce pool and array state files

The directory comes from an explicit path, ``TALUS_DATA_DIR`` or ``./.talus``.
"""
import logging
import os
import struct
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Set, Union

import numpy as np

from .message import TAU_BYTES
from .mldsa_core import DecodeError, bit_pack, bit_unpack
from .params import ParamSet, get_params

logger = logging.getLogger(__name__)

DATA_DIR_ENV = "TALUS_DATA_DIR"
DEFAULT_DATA_DIR = ".talus"

COUNTER = struct.Struct(">Q")
POOL_MAGIC = b"TLSP"
POOL_VERSION = 1
POOL_HEADER = struct.Struct(">4sBBI")
POOL_ENTRY = struct.Struct(f">{TAU_BYTES}sBHH")


class CounterRollback(Exception):
    def __init__(self, path: Path, reason: str) -> None:
        super().__init__(f"Session counter {path} unusable: {reason}")


def data_dir(override: Union[str, Path, None] = None) -> Path:
    path = Path(override or os.environ.get(DATA_DIR_ENV, DEFAULT_DATA_DIR))
    path.mkdir(parents=True, exist_ok=True)
    return path


def write_atomic(path: Path, data: bytes) -> None:
    temporary = path.with_name(path.name + ".tmp")
    with open(temporary, "wb") as file:
        file.write(data)
        file.flush()
        os.fsync(file.fileno())
    os.replace(temporary, path)


class SessionCounter:
    """τ = 64-bit monotone counter ∥ 64 random bits

    With a path the counter is written before the id is handed out, so a
    restart never reissues a value. Without one it lives in memory only.
    """

    def __init__(
        self,
        path: Union[str, Path, None] = None,
        rng: Optional[np.random.Generator] = None,
    ) -> None:
        self.path = Path(path) if path is not None else None
        self.rng = rng if rng is not None else np.random.default_rng()
        self.__issued: Set[bytes] = set()
        self.value = self.__load()

    def __load(self) -> int:
        if self.path is None or not self.path.exists():
            return 0
        data = self.path.read_bytes()
        if len(data) != COUNTER.size:
            raise CounterRollback(self.path, f"expected {COUNTER.size} bytes, got {len(data)}")
        return COUNTER.unpack(data)[0]

    def next_tau(self) -> bytes:
        self.value += 1
        if self.path is not None:
            write_atomic(self.path, COUNTER.pack(self.value))
        tau = COUNTER.pack(self.value) + self.rng.bytes(TAU_BYTES - COUNTER.size)
        if tau in self.__issued:
            raise CounterRollback(self.path or Path("<memory>"), f"τ {tau.hex()} issued twice")
        self.__issued.add(tau)
        return tau


# Nonce pool


def pool_to_bytes(entries: Iterable, params: ParamSet) -> bytes:
    """Magic, version, level, count, then τ, consumed flag, attempts and w1 per entry"""
    entries = list(entries)
    out = [POOL_HEADER.pack(POOL_MAGIC, POOL_VERSION, int(params.short_name), len(entries))]
    for entry in entries:
        signers = bit_pack(np.asarray(entry.signing_set, dtype=np.int64), 16)
        out.append(
            POOL_ENTRY.pack(
                entry.tau, int(entry.consumed), entry.attempts, len(entry.signing_set)
            )
        )
        out.append(signers)
        out.append(bit_pack(entry.w1, params.w1_bits))
    return b"".join(out)


def pool_from_bytes(data: bytes, entry_cls) -> List:
    if len(data) < POOL_HEADER.size:
        raise DecodeError("nonce pool", "truncated header")
    magic, version, level, count = POOL_HEADER.unpack_from(data)
    if magic != POOL_MAGIC:
        raise DecodeError("nonce pool", "bad magic")
    if version != POOL_VERSION:
        raise DecodeError("nonce pool", f"unsupported version {version}")
    params = get_params(str(level))
    w1_bytes = params.nk * params.w1_bits // 8

    entries = []
    offset = POOL_HEADER.size
    for _ in range(count):
        if len(data) < offset + POOL_ENTRY.size:
            raise DecodeError("nonce pool", "truncated entry")
        tau, consumed, attempts, signers = POOL_ENTRY.unpack_from(data, offset)
        offset += POOL_ENTRY.size
        signing_set = tuple(int(x) for x in bit_unpack(data[offset:], signers, 16))
        offset += 2 * signers
        w1 = bit_unpack(data[offset : offset + w1_bytes], params.nk, params.w1_bits)
        offset += w1_bytes
        entries.append(
            entry_cls(
                tau=tau,
                signing_set=signing_set,
                w1=w1.reshape(params.k, params.n),
                attempts=attempts,
                consumed=bool(consumed),
            )
        )
    if offset != len(data):
        raise DecodeError("nonce pool", f"{len(data) - offset} trailing bytes")
    return entries


def save_arrays(path: Union[str, Path], arrays: Dict[str, np.ndarray]) -> None:
    with open(path, "wb") as file:
        np.savez_compressed(file, **arrays)
    logger.debug(f"Saved {len(arrays)} arrays to {path}")


def load_arrays(path: Union[str, Path]) -> Dict[str, np.ndarray]:
    with np.load(path, allow_pickle=False) as data:
        return {name: data[name] for name in data.files}
