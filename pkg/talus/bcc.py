"""Boundary Clearance Condition

A commitment ``w`` clears the boundary when every low part r0 = LowBits(w)
keeps more than β distance from ±γ2. Then subtracting c·s2 (norm ≤ β) can not
move any coefficient into another stripe, and the hint is computable from
public data only.
"""
import logging
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from .mldsa_core import (
    PublicKey,
    canonical,
    expand_a,
    high_bits,
    low_bits,
    mat_vec,
    poly_vec_mul,
)
from .params import N, ParamSet

logger = logging.getLogger(__name__)


class HintOverweight(Exception):
    def __init__(self, weight: int, omega: int) -> None:
        self.weight = weight
        super().__init__(f"Hint weight {weight} exceeds omega={omega}")


@dataclass
class BoundaryReport:
    passes: bool
    min_distance: int
    failing_indices: List[Tuple[int, int]] = field(default_factory=list)


def boundary_distance(w: np.ndarray, params: ParamSet) -> np.ndarray:
    """γ2 − |r0| per coefficient"""
    return params.gamma2 - np.abs(low_bits(w, params))


def bcc_check(w: np.ndarray, params: ParamSet) -> BoundaryReport:
    distance = boundary_distance(w, params)
    failing = np.argwhere(distance <= params.beta)
    return BoundaryReport(
        passes=failing.size == 0,
        min_distance=int(distance.min()),
        failing_indices=[(int(i), int(j)) for i, j in failing],
    )


def bcc_passes(w: np.ndarray, params: ParamSet) -> np.ndarray:
    """Vectorised predicate over a leading batch axis"""
    distance = boundary_distance(w, params)
    return (distance > params.beta).reshape(distance.shape[0], -1).all(axis=1)


def analytic_rate(params: ParamSet) -> float:
    return (1 - params.beta / params.gamma2) ** params.nk


def shift_invariance(delta: int, params: ParamSet) -> float:
    """Fraction of the stripe interior that tolerates a shift of |delta|"""
    return max(0.0, 1 - abs(delta) / params.gamma2)


def bcc_trials(
    params: ParamSet,
    trials: int,
    rng: np.random.Generator,
    batch: int = 500,
    a_hat: Optional[np.ndarray] = None,
) -> int:
    """Number of fresh uniform nonces whose commitment A·y passes"""
    if trials < 1:
        raise ValueError(f"trials must be positive, got {trials}")
    if a_hat is None:
        a_hat = expand_a(rng.bytes(32), params)

    passed = 0
    remaining = trials
    while remaining > 0:
        size = min(batch, remaining)
        y = rng.integers(
            -params.gamma1 + 1, params.gamma1 + 1, size=(size, params.l, N), dtype=np.int64
        )
        passed += int(bcc_passes(mat_vec(a_hat, y), params).sum())
        remaining -= size

    logger.info(f"{params}: {passed}/{trials} nonces cleared the boundary")
    return passed


def bcc_rate(params: ParamSet, trials: int, rng: np.random.Generator) -> float:
    return bcc_trials(params, trials, rng) / trials


def compute_public_hint(
    pk: PublicKey,
    z: np.ndarray,
    c: np.ndarray,
    w1: np.ndarray,
    a_hat: Optional[np.ndarray] = None,
) -> np.ndarray:
    """h_j = [HighBits(r_j) ≠ w1_j] with r = A·z − c·t1·2^d"""
    params = pk.params
    if a_hat is None:
        a_hat = expand_a(pk.rho, params)
    r = canonical(mat_vec(a_hat, z) - poly_vec_mul(c, pk.t1 << params.d))
    return (high_bits(r, params) != np.asarray(w1)).astype(np.uint8)


def public_hint(
    pk: PublicKey,
    z: np.ndarray,
    c: np.ndarray,
    w1: np.ndarray,
    a_hat: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Hint from public data; raises :class:`HintOverweight` above ω"""
    h = compute_public_hint(pk, z, c, w1, a_hat)
    weight = int(h.sum())
    if weight > pk.params.omega:
        logger.warning(f"Hint weight {weight} above omega, nonce discarded")
        raise HintOverweight(weight, pk.params.omega)
    return h


def no_boundary_crossing(
    w: np.ndarray, c: np.ndarray, s2: np.ndarray, params: ParamSet
) -> bool:
    """HighBits(w − c·s2) == HighBits(w) for every coefficient"""
    shifted = canonical(w - poly_vec_mul(c, s2))
    return bool(np.array_equal(high_bits(shifted, params), high_bits(w, params)))
