"""Shamir sharing of ring vectors over Z_q, Lagrange reconstruction, nonce DKG

Sharing is coefficient-wise: a secret vector of shape ``(dim, 256)`` is the
constant term of a polynomial of degree T − 1 whose other coefficients are
uniform vectors mod q. Party ``i`` receives the evaluation at ``x = i``.
"""
import logging
import struct
from dataclasses import dataclass
from typing import Dict, Iterable, List, Mapping, Optional, Sequence

import numpy as np

from .mldsa_core import bit_pack, bit_unpack, canonical, centered, mat_vec
from .params import N, Q, ParamSet, get_params

logger = logging.getLogger(__name__)

SHARE_FORMAT_VERSION = 1


class DuplicatePartyError(Exception):
    def __init__(self, party_ids: Iterable[int]) -> None:
        super().__init__(f"Duplicate party ids in signing set: {sorted(party_ids)}")


class ShareMismatchError(Exception):
    def __init__(self, share_ids: Iterable[int], lagrange_ids: Iterable[int]) -> None:
        super().__init__(
            f"Share ids {sorted(share_ids)} do not match "
            f"Lagrange set {sorted(lagrange_ids)}"
        )


COEFF_BITS = 23


def vector_to_bytes(value: np.ndarray) -> bytes:
    """23-bit packed canonical coefficients"""
    return bit_pack(canonical(value), COEFF_BITS)


def vector_from_bytes(data: bytes, dim: int) -> np.ndarray:
    if len(data) != dim * N * COEFF_BITS // 8:
        raise ValueError(f"Expected {dim} packed polynomials, got {len(data)} bytes")
    values = bit_unpack(data, dim * N, COEFF_BITS).reshape(dim, N)
    if (values >= Q).any():
        raise ValueError("Packed coefficient outside [0, q)")
    return values


@dataclass
class Share:
    party_id: int
    value: np.ndarray

    def to_bytes(self, params: ParamSet) -> bytes:
        """Version byte, u16 party id, level tag, 23-bit packed coefficients"""
        dim = self.value.shape[0]
        header = struct.pack(
            ">BHBB", SHARE_FORMAT_VERSION, self.party_id, int(params.short_name), dim
        )
        return header + vector_to_bytes(self.value)

    @classmethod
    def from_bytes(cls, data: bytes) -> "Share":
        version, party_id, level, dim = struct.unpack(">BHBB", data[:5])
        if version != SHARE_FORMAT_VERSION:
            raise ValueError(f"Unsupported share format version: {version}")
        get_params(str(level))
        value = vector_from_bytes(data[5:], dim)
        return cls(party_id=party_id, value=value)


@dataclass
class LagrangeCoeffs:
    signing_set: tuple
    coeffs: Dict[int, int]

    def __getitem__(self, party_id: int) -> int:
        return self.coeffs[party_id]

    def centered(self, party_id: int) -> int:
        value = self.coeffs[party_id]
        return value - Q if value > Q // 2 else value

    @property
    def abs_sum(self) -> int:
        return sum(abs(self.centered(i)) for i in self.signing_set)


def lagrange_coeffs(signing_set: Iterable[int]) -> LagrangeCoeffs:
    """Interpolation weights at 0 for evaluation points = party ids"""
    ids = list(signing_set)
    if len(set(ids)) != len(ids):
        raise DuplicatePartyError(ids)
    for i in ids:
        if not 0 < i < Q:
            raise ValueError(f"Party id out of range: {i}")

    ids = sorted(ids)
    coeffs = {}
    for i in ids:
        value = 1
        for j in ids:
            if j != i:
                value = value * j % Q
                value = value * pow(j - i, -1, Q) % Q
        coeffs[i] = value
    return LagrangeCoeffs(signing_set=tuple(ids), coeffs=coeffs)


def random_polynomial(
    constant: np.ndarray, threshold: int, rng: np.random.Generator
) -> np.ndarray:
    """Coefficients (T, *constant.shape), constant term first"""
    constant = np.asarray(constant, dtype=np.int64)
    higher = rng.integers(0, Q, size=(threshold - 1,) + constant.shape, dtype=np.int64)
    return np.concatenate((constant[None, ...], higher), axis=0)


def evaluate(coeffs: np.ndarray, x: int) -> np.ndarray:
    """Horner evaluation mod q"""
    result = np.zeros(coeffs.shape[1:], dtype=np.int64)
    for coefficient in coeffs[::-1]:
        result = (result * x + coefficient) % Q
    return result


def share_secret(
    secret: np.ndarray, threshold: int, parties: int, rng: np.random.Generator
) -> List[Share]:
    if not 1 <= threshold <= parties < Q:
        raise ValueError(f"Need 1 <= T <= N < q, got T={threshold} N={parties}")
    coeffs = random_polynomial(canonical(secret), threshold, rng)
    return [
        Share(party_id=i, value=evaluate(coeffs, i)) for i in range(1, parties + 1)
    ]


def reconstruct(
    shares: Sequence[Share], lam: Optional[LagrangeCoeffs] = None
) -> np.ndarray:
    """f(0) from the given shares, centered"""
    share_ids = [share.party_id for share in shares]
    if lam is None:
        lam = lagrange_coeffs(share_ids)
    if sorted(share_ids) != list(lam.signing_set):
        raise ShareMismatchError(share_ids, lam.signing_set)

    total = np.zeros_like(shares[0].value, dtype=np.int64)
    for share in shares:
        total = (total + lam[share.party_id] * canonical(share.value)) % Q
    return centered(total)


def lagrange_combine(values: Mapping[int, np.ndarray], lam: LagrangeCoeffs) -> np.ndarray:
    """Σ λ_i · v_i mod q, canonical"""
    total = None
    for i in lam.signing_set:
        term = (lam[i] * canonical(values[i])) % Q
        total = term if total is None else (total + term) % Q
    return total


# Feldman-style commitments over the public matrix A


def feldman_commit(a_hat: np.ndarray, coeffs: np.ndarray) -> np.ndarray:
    """Φ_k = A · a_k for every polynomial coefficient, shape (T, k, 256)"""
    return mat_vec(a_hat, coeffs)


def feldman_expected(commitments: np.ndarray, x: int) -> np.ndarray:
    return evaluate(commitments, x)


def feldman_check(
    a_hat: np.ndarray, commitments: np.ndarray, x: int, share: np.ndarray
) -> bool:
    """A · f(x) == Σ_k Φ_k x^k (mod q)"""
    return bool(
        np.array_equal(mat_vec(a_hat, share), feldman_expected(commitments, x))
    )


# Shamir nonce DKG


@dataclass
class NoncePolynomial:
    owner: int
    coeffs: np.ndarray

    @property
    def constant(self) -> np.ndarray:
        return centered(self.coeffs[0])

    def evaluate(self, x: int) -> np.ndarray:
        return evaluate(self.coeffs, x)


def nonce_bound(params: ParamSet, signers: int) -> int:
    return params.gamma1 // signers


def sample_nonce_polynomial(
    owner: int, threshold: int, signers: int, params: ParamSet, rng: np.random.Generator
) -> NoncePolynomial:
    """g_h with constant in [−⌊γ1/|S|⌋+1, ⌊γ1/|S|⌋] and uniform higher terms"""
    bound = nonce_bound(params, signers)
    constant = rng.integers(-bound + 1, bound + 1, size=(params.l, N), dtype=np.int64)
    return NoncePolynomial(
        owner=owner, coeffs=random_polynomial(constant % Q, threshold, rng)
    )


@dataclass
class NonceDkg:
    polynomials: Dict[int, NoncePolynomial]
    shares: Dict[int, np.ndarray]
    pieces: Dict[int, np.ndarray]
    aggregate: np.ndarray


def nonce_dkg(
    signing_set: Sequence[int],
    threshold: int,
    params: ParamSet,
    rng: np.random.Generator,
) -> NonceDkg:
    """Every h ∈ S deals g_h; party i holds ŷ_i = Σ_h g_h(i)"""
    signing_set = sorted(signing_set)
    if len(signing_set) != threshold:
        raise ValueError(
            f"Nonce DKG needs |S| = T, got |S|={len(signing_set)} T={threshold}"
        )

    polynomials = {
        h: sample_nonce_polynomial(h, threshold, len(signing_set), params, rng)
        for h in signing_set
    }
    shares = {}
    for i in signing_set:
        total = np.zeros((params.l, N), dtype=np.int64)
        for polynomial in polynomials.values():
            total = (total + polynomial.evaluate(i)) % Q
        shares[i] = total
    pieces = {h: polynomial.constant for h, polynomial in polynomials.items()}
    aggregate = centered(sum(pieces.values()))

    logger.debug(f"Nonce DKG over {signing_set} done")
    return NonceDkg(
        polynomials=polynomials, shares=shares, pieces=pieces, aggregate=aggregate
    )
