"""Carry elimination: computing HighBits of a shared commitment

Two paths are kept:

* the Lagrange path, exact over the integers, used as a reference;
* the masked broadcast, where party h publishes its additive piece
  ŵ_h = H_h·α + b_h blinded by pairwise-cancelling ``maskH`` and a
  range-restricted ρ_h, and the only secret quantities left are the carry
  bit c = [Σρ > t] and the correction bit δ, produced by
  :mod:`talus.carry_compare`.

Everything is generalised to m = (q − 1)/α stripes, so the same formulas run
for all three parameter sets.
"""
import logging
from dataclasses import dataclass
from typing import Dict, Mapping, Sequence, Tuple

import numpy as np

from . import prf
from .mldsa_core import DecodeError, bit_pack, bit_unpack, canonical, high_bits
from .params import Q, ParamSet
from .shamir import LagrangeCoeffs

logger = logging.getLogger(__name__)


class LevelNotStriped(Exception):
    def __init__(self, params: ParamSet) -> None:
        super().__init__(f"{params}: (q − 1) is not a multiple of alpha={params.alpha}")


def inv_alpha(params: ParamSet) -> int:
    """α^{-1} mod q, which is q − m since α·m = q − 1"""
    if params.stripes * params.alpha + 1 != params.q:
        raise LevelNotStriped(params)
    return params.q - params.stripes


def b_bits(params: ParamSet) -> int:
    return (params.alpha - 1).bit_length()


def masked_broadcast_bytes(params: ParamSet) -> int:
    return params.nk * (params.w1_bits + b_bits(params)) // 8


# Lagrange reference path


@dataclass
class DecomposedShare:
    """w = w1_part·α + r0_part over the integers

    ``w1_part`` reaches m only on the sliver [q − 1 − γ2, q).
    """

    w1_part: np.ndarray
    r0_part: np.ndarray


def decompose_share(w: np.ndarray, params: ParamSet) -> DecomposedShare:
    w = canonical(w)
    r0 = w % params.alpha
    r0 = np.where(r0 > params.gamma2, r0 - params.alpha, r0)
    return DecomposedShare(w1_part=(w - r0) // params.alpha, r0_part=r0)


def lagrange_components(
    shares: Mapping[int, DecomposedShare], lam: LagrangeCoeffs
) -> Tuple[np.ndarray, np.ndarray]:
    """(W1, R) = (Σ λ_i w1_i, Σ λ_i r0_i) over ℤ with centered λ"""
    w1_sum = 0
    r_sum = 0
    for i in lam.signing_set:
        weight = lam.centered(i)
        w1_sum = w1_sum + weight * shares[i].w1_part
        r_sum = r_sum + weight * shares[i].r0_part
    return np.asarray(w1_sum, dtype=np.int64), np.asarray(r_sum, dtype=np.int64)


def lagrange_cef(
    shares: Mapping[int, DecomposedShare], lam: LagrangeCoeffs, params: ParamSet
) -> np.ndarray:
    w1_sum, r_sum = lagrange_components(shares, lam)
    return high_bits((params.alpha * (w1_sum % Q) + r_sum) % Q, params)


def naive_carry(r_sum, params: ParamSet) -> np.ndarray:
    """C = ⌊(R + γ2 − 1)/α⌋, statistics only"""
    return (np.asarray(r_sum, dtype=np.int64) + params.gamma2 - 1) // params.alpha


# Masks


@dataclass
class MaskSet:
    mask_h: Dict[int, np.ndarray]
    rho: Dict[int, np.ndarray]


def rho_bound(params: ParamSet, signers: int) -> int:
    return params.alpha // signers


def pair_mask(session_key: bytes, params: ParamSet) -> np.ndarray:
    words = prf.prf_words(session_key, prf.MASK_H, params.nk)
    return (words % params.stripes).reshape(params.k, params.n)


def mask_h_for(
    party: int,
    session_keys: Mapping[Tuple[int, int], bytes],
    signing_set: Sequence[int],
    params: ParamSet,
) -> np.ndarray:
    """(Σ_{j>i} r_ij − Σ_{j<i} r_ji) mod m"""
    total = np.zeros((params.k, params.n), dtype=np.int64)
    for j in signing_set:
        if j == party:
            continue
        r = pair_mask(session_keys[prf.pair(party, j)], params)
        total = total + r if j > party else total - r
    return total % params.stripes


def rho_for(local_key: bytes, signers: int, params: ParamSet) -> np.ndarray:
    """ρ_i uniform in [0, ⌊α/|S|⌋) from a party-private session key"""
    words = prf.prf_words(local_key, prf.RHO, params.nk)
    return (words % rho_bound(params, signers)).reshape(params.k, params.n)


def gen_masks(
    session_keys: Mapping[Tuple[int, int], bytes],
    signing_set: Sequence[int],
    params: ParamSet,
    local_keys: Mapping[int, bytes],
) -> MaskSet:
    signing_set = sorted(signing_set)
    return MaskSet(
        mask_h={
            i: mask_h_for(i, session_keys, signing_set, params) for i in signing_set
        },
        rho={i: rho_for(local_keys[i], len(signing_set), params) for i in signing_set},
    )


# Masked broadcast


@dataclass
class MaskedBroadcast:
    """H̃ mod m and b̃ mod α for every commitment coefficient

    The quotient ⌊(b + ρ)/α⌋ is folded into H̃, so the sum of H̃ and
    ⌊B/α⌋ and the remainder t = B mod α match the unreduced broadcast.
    """

    h_tilde: np.ndarray
    b_tilde: np.ndarray

    def to_bytes(self, params: ParamSet) -> bytes:
        packed = self.b_tilde | (self.h_tilde << b_bits(params))
        return bit_pack(packed, params.w1_bits + b_bits(params))

    @classmethod
    def from_bytes(cls, data: bytes, params: ParamSet) -> "MaskedBroadcast":
        if len(data) != masked_broadcast_bytes(params):
            raise DecodeError("masked broadcast", f"unexpected length {len(data)}")
        bits = b_bits(params)
        packed = bit_unpack(data, params.nk, params.w1_bits + bits).reshape(
            params.k, params.n
        )
        h_tilde = packed >> bits
        if (h_tilde >= params.stripes).any():
            raise DecodeError("masked broadcast", "H~ outside [0, m)")
        return cls(h_tilde=h_tilde, b_tilde=packed & ((1 << bits) - 1))


def unsigned_split(w: np.ndarray, params: ParamSet) -> Tuple[np.ndarray, np.ndarray]:
    """(H, b) = (⌊w/α⌋ mod m, w mod α) for w in [0, q)"""
    w = canonical(w)
    return (w // params.alpha) % params.stripes, w % params.alpha


def masked_broadcast(
    w_piece: np.ndarray, mask_h: np.ndarray, rho: np.ndarray, params: ParamSet
) -> MaskedBroadcast:
    high, low = unsigned_split(w_piece, params)
    blinded = low + rho
    return MaskedBroadcast(
        h_tilde=(high + mask_h + blinded // params.alpha) % params.stripes,
        b_tilde=blinded % params.alpha,
    )


def combine_masked(
    broadcasts: Sequence[MaskedBroadcast], params: ParamSet
) -> Tuple[np.ndarray, np.ndarray]:
    """(Σ H̃ mod m, B = Σ b̃)"""
    h_sum = sum(b.h_tilde for b in broadcasts) % params.stripes
    b_sum = sum(b.b_tilde for b in broadcasts)
    return h_sum, b_sum


def masked_w1(h_sum, b_sum, c, delta, params: ParamSet) -> np.ndarray:
    """w1 = (Σ H̃ + ⌊B/α⌋ − c + δ) mod m"""
    b_sum = np.asarray(b_sum, dtype=np.int64)
    return (
        np.asarray(h_sum, dtype=np.int64)
        + b_sum // params.alpha
        - np.asarray(c, dtype=np.int64)
        + np.asarray(delta, dtype=np.int64)
    ) % params.stripes


def carry_bit_ref(rho_sum, t) -> np.ndarray:
    return (np.asarray(rho_sum) > np.asarray(t)).astype(np.int64)


def floor_recover(b_sum, c, params: ParamSet) -> np.ndarray:
    """⌊Σb/α⌋ = ⌊B/α⌋ − c"""
    return np.asarray(b_sum, dtype=np.int64) // params.alpha - np.asarray(c)


def fips_thresholds(t, params: ParamSet) -> Tuple[np.ndarray, np.ndarray]:
    """Comparison thresholds k0 = t − γ2 − 1, k1 = t − γ2 + α − 1

    Clipped into the 19-bit comparator range; the clipped cases are exactly
    the ones :func:`fips_select` resolves without the comparison.
    """
    t = np.asarray(t, dtype=np.int64)
    k0 = np.maximum(t - params.gamma2 - 1, 0)
    k1 = np.minimum(t - params.gamma2 + params.alpha - 1, (1 << 19) - 1)
    return k0, k1


def fips_select(c, gt_k0, gt_k1, t, params: ParamSet) -> np.ndarray:
    """δ = c ? δ1 : δ0 with δ_b = ¬[Σρ > k_b] and the public shortcuts"""
    t = np.asarray(t, dtype=np.int64)
    delta0 = np.where(t <= params.gamma2, 0, 1 - np.asarray(gt_k0))
    delta1 = np.where(t >= params.gamma2, 1, 1 - np.asarray(gt_k1))
    return np.where(np.asarray(c) != 0, delta1, delta0).astype(np.int64)


def fips_delta(rho_sum, t, c, params: ParamSet) -> np.ndarray:
    rho_sum = np.asarray(rho_sum, dtype=np.int64)
    t = np.asarray(t, dtype=np.int64)
    delta0 = rho_sum <= t - params.gamma2 - 1
    delta1 = rho_sum <= t - params.gamma2 + params.alpha - 1
    return np.where(np.asarray(c) != 0, delta1, delta0).astype(np.int64)


def plain_carry(rho_sum, b_sum, params: ParamSet) -> Tuple[np.ndarray, np.ndarray]:
    """(c, δ) computed in the clear"""
    t = np.asarray(b_sum, dtype=np.int64) % params.alpha
    c = carry_bit_ref(rho_sum, t)
    return c, fips_delta(rho_sum, t, c, params)
