"""Experiment drivers behind ``talus experiment``

Each experiment takes an :class:`ExperimentConfig` and returns an
:class:`ExperimentReport` whose rows carry trial counts, estimates and, for
rates, 95% confidence half-widths. The success-rate experiments have two
engines: ``fast`` evaluates the signing equations on an aggregate nonce
directly, ``protocol`` runs the full message exchange through
:func:`talus.harness.run_protocol`.
"""
import asyncio
import csv
import io
import json
import logging
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Union

import numpy as np
from dilithium_py.ml_dsa import ML_DSA_44, ML_DSA_65, ML_DSA_87

from . import prf
from .bcc import analytic_rate, bcc_check, bcc_trials, compute_public_hint, shift_invariance
from .carry_compare import cscp
from .cef import (
    combine_masked,
    decompose_share,
    gen_masks,
    lagrange_cef,
    lagrange_components,
    masked_broadcast,
    masked_w1,
    naive_carry,
    plain_carry,
    rho_bound,
)
from .harness import ProtocolConfig, run_protocol
from .mldsa_core import (
    PublicKey,
    SecretKey,
    Signature,
    centered,
    challenge_hash,
    expand_a,
    high_bits,
    inf_norm,
    keygen,
    make_hint,
    mat_vec,
    poly_vec_mul,
    sample_in_ball,
    verify,
)
from .params import LEVELS, N, Q, ParamSet, get_params
from .shamir import lagrange_coeffs, nonce_bound, share_secret
from .si_loss import si_loss

logger = logging.getLogger(__name__)

Z95 = 1.959964

# Reference values the estimates are compared against
BCC_REFERENCE = {"44": 0.433, "65": 0.3166, "87": 0.392}
MPC_REFERENCE = {2: 0.316, 3: 0.311, 5: 0.315, 8: 0.318, 17: 0.328, 32: 0.334}
TEE_REFERENCE = 0.316
SI_REFERENCE = {
    2: 2.954e-6,
    3: 1.453e-6,
    5: 2.134e-6,
    8: 3.371e-6,
    17: 7.134e-6,
}


class UnknownExperiment(Exception):
    def __init__(self, name: str) -> None:
        super().__init__(
            f"Unknown experiment {name!r}, expected one of: {', '.join(sorted(EXPERIMENTS))}"
        )


@dataclass
class ExperimentConfig:
    trials: Optional[int] = None
    seed: int = 2025
    level: str = "65"
    thresholds: Optional[Sequence[int]] = None
    parties: int = 3
    engine: str = "fast"

    def rng(self, *stream: int) -> np.random.Generator:
        return np.random.default_rng([self.seed, *stream])

    def trials_or(self, default: int) -> int:
        return self.trials if self.trials is not None else default

    def thresholds_or(self, default: Sequence[int]) -> List[int]:
        return list(self.thresholds if self.thresholds is not None else default)


@dataclass
class ExperimentReport:
    name: str
    rows: List[Dict] = field(default_factory=list)

    @property
    def columns(self) -> List[str]:
        columns: List[str] = []
        for row in self.rows:
            columns.extend(key for key in row if key not in columns)
        return columns

    def to_csv(self) -> str:
        out = io.StringIO()
        writer = csv.DictWriter(out, fieldnames=self.columns, lineterminator="\n")
        writer.writeheader()
        writer.writerows(self.rows)
        return out.getvalue()

    def to_json(self) -> str:
        return json.dumps({"experiment": self.name, "rows": self.rows}, indent=2)

    def write(self, path: Union[str, Path], fmt: str = "csv") -> None:
        text = self.to_json() if fmt == "json" else self.to_csv()
        Path(path).write_text(text)
        logger.info(f"Wrote {len(self.rows)} rows of {self.name} to {path}")


def half_width(successes: int, trials: int) -> float:
    if trials == 0:
        return math.nan
    p = successes / trials
    return Z95 * math.sqrt(p * (1 - p) / trials)


def rate_columns(successes: int, trials: int) -> Dict:
    return {
        "trials": trials,
        "successes": successes,
        "rate": successes / trials if trials else math.nan,
        "half_width": half_width(successes, trials),
    }


# Signing equations on an aggregate nonce


def aggregate_nonce(
    signers: int, params: ParamSet, rng: np.random.Generator
) -> np.ndarray:
    """Σ of ``signers`` constant terms, each uniform on [−⌊γ1/T⌋+1, ⌊γ1/T⌋]"""
    bound = nonce_bound(params, signers)
    pieces = rng.integers(-bound + 1, bound + 1, size=(signers, params.l, N), dtype=np.int64)
    return pieces.sum(axis=0)


@dataclass
class AttemptOutcome:
    bcc: bool
    z_ok: bool
    hint_weight: int
    outcome: str


def signing_attempt(
    pk: PublicKey,
    sk: SecretKey,
    a_hat: np.ndarray,
    y: np.ndarray,
    msg: bytes,
    profile: str,
) -> AttemptOutcome:
    """One attempt as the coordinator sees it

    ``tee`` filters on the boundary check and builds the FIPS hint from t0
    and s2; ``mpc`` never sees w and builds the hint from public data only.
    """
    params = pk.params
    w = mat_vec(a_hat, y) % Q
    bcc = bcc_check(w, params).passes
    if profile == "tee" and not bcc:
        return AttemptOutcome(bcc=False, z_ok=False, hint_weight=0, outcome="bcc")

    w1 = high_bits(w, params)
    ctilde = challenge_hash(pk, msg, w1)
    c = sample_in_ball(ctilde, params)
    z = centered(y + poly_vec_mul(c, sk.s1))
    z_ok = inf_norm(z) < params.gamma1 - params.beta
    if not z_ok:
        return AttemptOutcome(bcc=bcc, z_ok=False, hint_weight=0, outcome="z-bound")

    overflow = False
    if profile == "tee":
        ct0 = poly_vec_mul(c, sk.t0)
        h = make_hint(-ct0, w - poly_vec_mul(c, sk.s2) + ct0, params)
        overflow = inf_norm(ct0) >= params.gamma2
    else:
        h = compute_public_hint(pk, z, c, w1, a_hat)
    weight = int(h.sum())
    if overflow or weight > params.omega:
        return AttemptOutcome(bcc=bcc, z_ok=True, hint_weight=weight, outcome="hint-weight")

    signature = Signature(ctilde=ctilde, z=z, h=h, params=params)
    outcome = "ok" if verify(pk, msg, signature) else "verify-failed"
    return AttemptOutcome(bcc=bcc, z_ok=True, hint_weight=weight, outcome=outcome)


def success_row(signers: int, attempts: Sequence[AttemptOutcome], omega: int) -> Dict:
    total = len(attempts)
    bcc = [a for a in attempts if a.bcc]
    successes = [a for a in attempts if a.outcome == "ok"]
    outcomes = Counter(a.outcome for a in attempts if a.outcome != "ok")
    return {
        "T": signers,
        **rate_columns(len(successes), total),
        "p_bcc": len(bcc) / total if total else math.nan,
        "z_ok_given_bcc": sum(a.z_ok for a in bcc) / len(bcc) if bcc else math.nan,
        "hint_ok_given_bcc": (
            sum(a.z_ok and a.hint_weight <= omega for a in bcc) / len(bcc) if bcc else math.nan
        ),
        "mean_hint_weight": (
            float(np.mean([a.hint_weight for a in successes])) if successes else math.nan
        ),
        "aborts": ";".join(f"{k}={v}" for k, v in sorted(outcomes.items())),
    }


def parties_for(threshold: int) -> int:
    """Smallest N the configuration guard accepts"""
    return threshold if threshold < 3 else 2 * threshold - 1


def success_fast(profile: str, config: ExperimentConfig, thresholds, trials) -> List[Dict]:
    params = get_params(config.level)
    rows = []
    for signers in thresholds:
        rng = config.rng(1, signers)
        pk, sk = keygen(rng.bytes(32), params)
        a_hat = expand_a(pk.rho, params)
        attempts = [
            signing_attempt(
                pk, sk, a_hat, aggregate_nonce(signers, params, rng), b"talus", profile
            )
            for _ in range(trials)
        ]
        rows.append(success_row(signers, attempts, params.omega))
        logger.info(f"{profile} T={signers}: success {rows[-1]['rate']:.4f}")
    return rows


def success_protocol(
    profile: str, config: ExperimentConfig, thresholds, trials
) -> List[Dict]:
    rows = []
    for signers in thresholds:
        outcome = asyncio.run(
            run_protocol(
                ProtocolConfig(
                    profile=profile,
                    level=config.level,
                    threshold=signers,
                    parties=parties_for(signers),
                    seed=config.seed + signers,
                    signatures=trials,
                    max_attempts=trials,
                    audit_failures=False,
                )
            )
        )
        successes = len(outcome.signatures)
        # TEE rates are per dealt nonce, MPC rates per online attempt
        total = sum(outcome.retries) if profile == "tee" else outcome.attempts
        rows.append(
            {
                "T": signers,
                **rate_columns(successes, total),
                "verified": outcome.verified,
                "aborts": ";".join(f"{k}={v}" for k, v in sorted(outcome.aborts.items())),
            }
        )
    return rows


def success_experiment(profile: str, config: ExperimentConfig, defaults) -> List[Dict]:
    thresholds = config.thresholds_or(defaults)
    trials = config.trials_or(3000)
    if config.engine == "protocol":
        rows = success_protocol(profile, config, thresholds, trials)
    elif config.engine == "fast":
        rows = success_fast(profile, config, thresholds, trials)
    else:
        raise ValueError(f"Unknown engine: {config.engine}")
    for row in rows:
        row["reference"] = (
            TEE_REFERENCE if profile == "tee" else MPC_REFERENCE.get(row["T"], math.nan)
        )
    return rows


# Experiments


def bcc_rate_experiment(config: ExperimentConfig) -> List[Dict]:
    trials = config.trials_or(100_000)
    rows = []
    for index, (level, params) in enumerate(sorted(LEVELS.items())):
        passed = bcc_trials(params, trials, config.rng(2, index))
        rows.append(
            {
                "level": level,
                **rate_columns(passed, trials),
                "analytic": analytic_rate(params),
                "reference": BCC_REFERENCE[level],
            }
        )
    return rows


def carry_identity_experiment(config: ExperimentConfig, batch: int = 250) -> List[Dict]:
    """Lagrange carry elimination against HighBits of the reconstructed value"""
    params = get_params(config.level)
    trials = config.trials_or(10_000)
    rows = []
    for signers in config.thresholds_or((2, 3, 4, 5, 8)):
        rng = config.rng(3, signers)
        lam = lagrange_coeffs(range(1, signers + 1))
        mismatches = 0
        done = 0
        while done < trials:
            size = min(batch, trials - done)
            w = rng.integers(0, Q, size=(size, params.k, N), dtype=np.int64)
            shares = {
                share.party_id: decompose_share(share.value, params)
                for share in share_secret(w, signers, signers, rng)
            }
            mismatches += int((lagrange_cef(shares, lam, params) != high_bits(w, params)).sum())
            done += size
        coefficients = trials * params.nk
        rows.append(
            {
                "T": signers,
                "trials": trials,
                "coefficients": coefficients,
                "mismatches": mismatches,
                "agreement": 1 - mismatches / coefficients,
            }
        )
    return rows


def carry_distribution_experiment(config: ExperimentConfig, batch: int = 250) -> List[Dict]:
    """Histogram of the integer carry C of the Lagrange combination"""
    params = get_params(config.level)
    trials = config.trials_or(2_000)
    rows = []
    for signers in config.thresholds_or((2, 3, 5, 8)):
        rng = config.rng(4, signers)
        lam = lagrange_coeffs(range(1, signers + 1))
        histogram: Counter = Counter()
        done = 0
        while done < trials:
            size = min(batch, trials - done)
            w = rng.integers(0, Q, size=(size, params.k, N), dtype=np.int64)
            shares = {
                share.party_id: decompose_share(share.value, params)
                for share in share_secret(w, signers, signers, rng)
            }
            _, r_sum = lagrange_components(shares, lam)
            values, counts = np.unique(naive_carry(r_sum, params), return_counts=True)
            histogram.update(dict(zip(values.tolist(), counts.tolist())))
            done += size
        total = sum(histogram.values())
        rows.extend(
            {
                "T": signers,
                "carry": carry,
                "count": histogram[carry],
                "fraction": histogram[carry] / total,
                "lambda_abs_sum": lam.abs_sum,
            }
            for carry in sorted(histogram)
        )
    return rows


def random_session_keys(parties: Sequence[int], rng: np.random.Generator):
    return {
        prf.pair(i, j): rng.bytes(prf.KEY_BYTES)
        for i in parties
        for j in parties
        if i < j
    }


def masked_broadcast_experiment(config: ExperimentConfig) -> List[Dict]:
    """w1 from the masked broadcast with (c, δ) in the clear, against HighBits"""
    params = get_params(config.level)
    trials = config.trials_or(10_000)
    signers = list(range(1, config.parties + 1))
    rng = config.rng(5, config.parties)

    nonce_mismatches = 0
    coefficient_mismatches = 0
    for _ in range(trials):
        pieces = {
            h: rng.integers(0, Q, size=(params.k, N), dtype=np.int64) for h in signers
        }
        masks = gen_masks(
            random_session_keys(signers, rng),
            signers,
            params,
            {h: rng.bytes(prf.KEY_BYTES) for h in signers},
        )
        broadcasts = [
            masked_broadcast(pieces[h], masks.mask_h[h], masks.rho[h], params) for h in signers
        ]
        h_sum, b_sum = combine_masked(broadcasts, params)
        c, delta = plain_carry(sum(masks.rho.values()), b_sum, params)
        w1 = masked_w1(h_sum, b_sum, c, delta, params)
        wrong = int((w1 != high_bits(sum(pieces.values()) % Q, params)).sum())
        coefficient_mismatches += wrong
        nonce_mismatches += wrong > 0

    return [
        {
            "N": len(signers),
            **rate_columns(trials - nonce_mismatches, trials),
            "nonce_mismatches": nonce_mismatches,
            "coefficient_mismatches": coefficient_mismatches,
            "bound": min(1.0, 2 * (len(signers) - 1) * params.nk / params.alpha),
        }
    ]


def cscp_equivalence_experiment(config: ExperimentConfig, batch: int = 32) -> List[Dict]:
    """Shared comparison circuit against the comparison in the clear"""
    params = get_params(config.level)
    sessions = config.trials_or(10_000)
    rows = []
    for signers in config.thresholds_or((2, 3, 5, 8)):
        parties = list(range(1, signers + 1))
        rng = config.rng(6, signers)
        mismatches = 0
        rounds = 0
        done = 0
        while done < sessions:
            size = min(batch, sessions - done) * params.nk
            rho = {
                i: rng.integers(0, rho_bound(params, signers), size=size, dtype=np.int64)
                for i in parties
            }
            t = rng.integers(0, params.alpha, size=size, dtype=np.int64)
            run = cscp(rho, t, random_session_keys(parties, rng), params)
            c, delta = plain_carry(sum(rho.values()), t, params)
            mismatches += int(
                ((run.result.c != c) | (run.result.delta != delta)).sum()
            )
            rounds = run.rounds
            done += size // params.nk
        rows.append(
            {
                "T": signers,
                "sessions": sessions,
                "coefficients": sessions * params.nk,
                "mismatches": mismatches,
                "rounds": rounds,
            }
        )
    return rows


def si_loss_experiment(config: ExperimentConfig) -> List[Dict]:
    rows = []
    for signers in config.thresholds_or((2, 3, 5, 8, 17)):
        loss = si_loss(signers, config.level)
        reference = SI_REFERENCE.get(signers, math.nan) if config.level == "65" else math.nan
        rows.append(
            {
                "T": signers,
                "chi2": loss.chi2,
                "reference": reference,
                "gaussian": loss.gaussian,
                "ratio_to_gaussian": loss.chi2 / loss.gaussian,
                "r2_vec": loss.r2_vec,
                "bits": loss.bits,
                "epsilon": loss.epsilon,
                "max_ratio": loss.max_ratio,
            }
        )
    return rows


def bcc_passing_commitment(params: ParamSet, rng: np.random.Generator) -> np.ndarray:
    while True:
        w = rng.integers(0, Q, size=(params.k, N), dtype=np.int64)
        if bcc_check(w, params).passes:
            return w


def shift_invariance_experiment(config: ExperimentConfig) -> List[Dict]:
    """Interior fractions per shift, then the no-crossing property on random c·s2"""
    params = get_params(config.level)
    rows = [
        {
            "check": f"interior fraction at {label}",
            "delta": delta,
            "value": shift_invariance(delta, params),
        }
        for label, delta in (
            ("beta", params.beta),
            ("2 beta", 2 * params.beta),
            ("tau 2^(d-1)", params.tau << (params.d - 1)),
        )
    ]

    trials = config.trials_or(10_000)
    rng = config.rng(7)
    crossings = 0
    too_large = 0
    for _ in range(trials):
        w = bcc_passing_commitment(params, rng)
        c = sample_in_ball(rng.bytes(params.ctilde_bytes), params)
        s2 = rng.integers(-params.eta, params.eta + 1, size=(params.k, N), dtype=np.int64)
        cs2 = poly_vec_mul(c, s2)
        too_large += inf_norm(cs2) > params.beta
        shifted = high_bits((w - cs2) % Q, params)
        crossings += not np.array_equal(shifted, high_bits(w, params))
    rows.append(
        {"check": "HighBits(w - c s2) != HighBits(w)", "trials": trials, "value": crossings}
    )
    rows.append({"check": "||c s2|| > beta", "trials": trials, "value": too_large})
    return rows


def highbits_additivity_experiment(config: ExperimentConfig) -> List[Dict]:
    """Searches a pair with HighBits(a + b) != HighBits(a) + HighBits(b) mod m"""
    params = get_params(config.level)
    samples = config.trials_or(100)
    rng = config.rng(8)
    for index in range(1, samples + 1):
        a, b = (int(x) for x in rng.integers(0, Q, size=2))
        together = int(high_bits(np.array([(a + b) % Q]), params)[0])
        apart = int(high_bits(np.array([a, b]), params).sum()) % params.stripes
        if together != apart:
            return [
                {
                    "samples": index,
                    "found": True,
                    "a": a,
                    "b": b,
                    "together": together,
                    "apart": apart,
                }
            ]
    return [{"samples": samples, "found": False}]


def cross_verify_experiment(config: ExperimentConfig) -> List[Dict]:
    """Signatures of both profiles checked by an independent ML-DSA implementation"""
    reference = {"44": ML_DSA_44, "65": ML_DSA_65, "87": ML_DSA_87}
    count = config.trials_or(10)
    message = b"talus cross verification"
    rows = []
    for level in sorted(LEVELS):
        for profile in ("tee", "mpc"):
            outcome = asyncio.run(
                run_protocol(
                    ProtocolConfig(
                        profile=profile,
                        level=level,
                        threshold=3,
                        parties=5,
                        message=message,
                        seed=config.seed,
                        signatures=count,
                        max_attempts=40 * count,
                        audit_failures=False,
                    )
                )
            )
            pk = outcome.pk.to_bytes()
            passed = sum(
                bool(reference[level].verify(pk, message, signature.to_bytes()))
                for signature in outcome.signatures
            )
            rows.append(
                {
                    "level": level,
                    "profile": profile,
                    "signatures": len(outcome.signatures),
                    "passed": passed,
                    "result": "PASS" if passed == count == len(outcome.signatures) else "FAIL",
                }
            )
    return rows


EXPERIMENTS: Dict[str, Callable[[ExperimentConfig], List[Dict]]] = {
    "bcc-rate": bcc_rate_experiment,
    "carry-identity": carry_identity_experiment,
    "tee-success": lambda config: success_experiment("tee", config, (2, 3, 5)),
    "mpc-success": lambda config: success_experiment("mpc", config, (2, 3, 5, 8)),
    "carry-distribution": carry_distribution_experiment,
    "si-loss": si_loss_experiment,
    "cross-verify": cross_verify_experiment,
    "masked-broadcast": masked_broadcast_experiment,
    "shift-invariance": shift_invariance_experiment,
    "cscp-equivalence": cscp_equivalence_experiment,
    "highbits-additivity": highbits_additivity_experiment,
}


def experiment(name: str, config: Optional[ExperimentConfig] = None) -> ExperimentReport:
    if name not in EXPERIMENTS:
        raise UnknownExperiment(name)
    config = config or ExperimentConfig()
    logger.info(f"Running experiment {name} with {config}")
    return ExperimentReport(name=name, rows=EXPERIMENTS[name](config))
