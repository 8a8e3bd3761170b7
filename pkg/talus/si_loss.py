"""Security loss from the shape of the aggregate nonce

Every signer contributes a constant term uniform on [−⌊γ1/T⌋+1, ⌊γ1/T⌋], so
each aggregate coefficient is an Irwin-Hall sum. The distribution of that
sum is built exactly with integer counts, one box sum per contributor.
"""
import logging
import math
from dataclasses import dataclass
from typing import Union

import numpy as np

from .params import ParamSet, get_params
from .shamir import nonce_bound

logger = logging.getLogger(__name__)

METHODS = ("exact", "gaussian")


@dataclass(frozen=True)
class ShiftInvarianceLoss:
    parties: int
    chi2: float
    r2_vec: float
    bits: float
    gaussian: float
    max_ratio: float
    method: str

    @property
    def epsilon(self) -> float:
        """Per-session loss ε = R2_vec − 1"""
        return self.r2_vec - 1


def _zeros(size: int) -> np.ndarray:
    return np.zeros(size, dtype=object)


def irwin_hall_counts(parties: int, bound: int):
    """Integer counts of Σ of ``parties`` uniforms on [−bound+1, bound]

    Returns ``(counts, low)`` where ``counts[k]`` is the number of ways to
    reach ``low + k``. Counts are Python integers and never overflow.
    """
    if parties < 1 or bound < 1:
        raise ValueError(f"Need parties >= 1 and bound >= 1, got {parties}, {bound}")
    width = 2 * bound
    counts = np.ones(1, dtype=object)
    low = 0
    for _ in range(parties):
        extended = np.concatenate([counts, _zeros(width - 1)])
        running = np.cumsum(extended)
        lagged = np.concatenate([_zeros(width), running[:-width]])
        counts = running - lagged
        low += -bound + 1
    return counts, low


def gaussian_chi2(parties: int, params: ParamSet) -> float:
    return 3 * parties * params.beta**2 / params.gamma1**2


def exact_chi2(parties: int, params: ParamSet):
    """χ² divergence of the β-shifted sum from the sum itself

    Both distributions are restricted to |x| < γ1 − β and renormalized.
    Returns ``(chi2, max_ratio)``.
    """
    beta = params.beta
    counts, low = irwin_hall_counts(parties, nonce_bound(params, parties))
    shifted = np.concatenate([_zeros(beta), counts[:-beta]])

    x = low + np.arange(len(counts))
    region = (np.abs(x) < params.gamma1 - beta) & (counts > 0)
    p = counts[region]
    q = shifted[region]
    if sum(shifted[np.abs(x) < params.gamma1 - beta]) != sum(q):
        raise ValueError(f"Shifted sum leaves the support of T={parties} inside the region")

    z_p = int(p.sum())
    z_q = int(q.sum())
    weights = [int(c) / z_p for c in p]
    ratios = [int(b) / int(a) for a, b in zip(p, q)]
    scale = (z_p / z_q) ** 2
    total = math.fsum(w * r * r for w, r in zip(weights, ratios))
    return scale * total - 1, max(ratios) * z_p / z_q


def si_loss(
    parties: int, params: Union[ParamSet, str] = "65", method: str = "exact"
) -> ShiftInvarianceLoss:
    """Per-coordinate χ², vectorial R2 = (1 + χ²)^(nℓ) and its log2 in bits"""
    params = get_params(params)
    if parties < 2:
        raise ValueError(f"Shift-invariance loss needs T >= 2, got {parties}")
    if method not in METHODS:
        raise ValueError(f"Unknown method {method}, expected one of {METHODS}")

    gaussian = gaussian_chi2(parties, params)
    if method == "exact":
        chi2, max_ratio = exact_chi2(parties, params)
    else:
        chi2, max_ratio = gaussian, math.nan

    bits = params.nl * math.log1p(chi2) / math.log(2)
    r2_vec = math.exp(params.nl * math.log1p(chi2))
    logger.info(f"T={parties} {params}: chi2={chi2:.4e} ({method}), {bits:.4f} bits/session")
    return ShiftInvarianceLoss(
        parties=parties,
        chi2=chi2,
        r2_vec=r2_vec,
        bits=bits,
        gaussian=gaussian,
        max_ratio=max_ratio,
        method=method,
    )
