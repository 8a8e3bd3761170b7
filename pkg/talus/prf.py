import hashlib

import numpy as np

KEY_BYTES = 32

SESSION = b"session"
MASK_H = b"maskH"
RHO = b"rho"
AND = b"and"
CARRY = b"carry"
LOCAL = b"local"


def prf(key: bytes, label: bytes, length: int) -> bytes:
    """Keyed SHAKE256 with a domain-separation label"""
    return hashlib.shake_256(key + label).digest(length)


def prf_bits(key: bytes, label: bytes, count: int) -> np.ndarray:
    stream = np.frombuffer(prf(key, label, (count + 7) // 8), dtype=np.uint8)
    return np.unpackbits(stream, bitorder="little")[:count]


def prf_words(key: bytes, label: bytes, count: int) -> np.ndarray:
    stream = prf(key, label, 4 * count)
    return np.frombuffer(stream, dtype="<u4").astype(np.int64)


def session_key(seed: bytes, tau: bytes) -> bytes:
    """K_{ij,τ} = PRF(s_ij, "session" ∥ τ)"""
    return prf(seed, SESSION + tau, KEY_BYTES)


def pair(i: int, j: int) -> tuple:
    return (i, j) if i < j else (j, i)
