"""Coordinator-trusted profile

The coordinator keeps s2, t0 and the public commitments A·s1_i inside a
sealed :class:`TeeCoordinator`; signers hold Shamir shares of s1 only.
Preprocessing filters nonces through the boundary clearance condition, so an
accepted session signs in a single response round.
"""
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import (
    Callable,
    Dict,
    Iterable,
    List,
    Mapping,
    Optional,
    Sequence,
    Tuple,
    Union,
)

import numpy as np

from .bcc import bcc_check
from .message import BROADCAST, Message, MessageType
from .mldsa_core import (
    PublicKey,
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
    w1_encode,
)
from .network import Network
from .params import N, Q, ParamSet, get_params
from .shamir import (
    evaluate,
    feldman_check,
    feldman_commit,
    feldman_expected,
    lagrange_coeffs,
    lagrange_combine,
    random_polynomial,
    sample_nonce_polynomial,
    share_secret,
    vector_from_bytes,
    vector_to_bytes,
)
from .storage import (
    SessionCounter,
    load_arrays,
    pool_from_bytes,
    pool_to_bytes,
    save_arrays,
    write_atomic,
)

logger = logging.getLogger(__name__)

COORDINATOR = 0
MAX_ATTEMPTS = 1000


class SessionReuse(Exception):
    def __init__(self, tau: bytes) -> None:
        super().__init__(f"Nonce session {tau.hex()} already used")
        self.tau = tau


class SigningAbort(Exception):
    def __init__(self, reason: str, blamed: Iterable[int] = ()) -> None:
        self.reason = reason
        self.blamed = sorted(set(blamed))
        suffix = f", blamed {self.blamed}" if self.blamed else ""
        super().__init__(f"Signing aborted: {reason}{suffix}")


class RefreshRejected(Exception):
    def __init__(self, blamed: Iterable[int]) -> None:
        self.blamed = sorted(set(blamed))
        super().__init__(f"Refresh rejected, bad dealings from {self.blamed}")


def commitments_in(
    messages: Iterable[Message],
    message_type: MessageType,
    threshold: int,
    params: ParamSet,
) -> Dict[int, np.ndarray]:
    return {
        m.sender: vector_from_bytes(m.body, threshold * params.k).reshape(
            threshold, params.k, N
        )
        for m in messages
        if m.type == message_type
    }


@dataclass
class NonceSession:
    tau: bytes
    signing_set: Tuple[int, ...]
    w1: np.ndarray
    attempts: int = 1
    consumed: bool = False


@dataclass
class TeeSigner:
    party_id: int
    share: np.ndarray
    rng: np.random.Generator = field(repr=False)
    nonce_shares: Dict[bytes, np.ndarray] = field(default_factory=dict, repr=False)

    def _message(
        self, message_type, tau, round_index, body, receiver=BROADCAST
    ) -> Message:
        return Message(message_type, tau, round_index, self.party_id, receiver, body)

    def deal_nonce(
        self,
        tau: bytes,
        signing_set: Sequence[int],
        threshold: int,
        a_hat: np.ndarray,
        params: ParamSet,
    ) -> List[Message]:
        polynomial = sample_nonce_polynomial(
            self.party_id, threshold, len(signing_set), params, self.rng
        )
        self.nonce_shares[tau] = polynomial.evaluate(self.party_id)
        messages = [
            self._message(
                MessageType.NONCE_SHARE,
                tau,
                0,
                vector_to_bytes(polynomial.evaluate(i)),
                receiver=i,
            )
            for i in signing_set
            if i != self.party_id
        ]
        commitments = feldman_commit(a_hat, polynomial.coeffs)
        messages.append(
            self._message(
                MessageType.FELDMAN_COMMIT, tau, 0, vector_to_bytes(commitments.reshape(-1, N))
            )
        )
        return messages

    def absorb_nonce(
        self,
        tau: bytes,
        inbox: Sequence[Message],
        threshold: int,
        a_hat: np.ndarray,
        params: ParamSet,
    ) -> List[int]:
        """Adds the received shares to ŷ_i; returns dealers failing the Feldman check"""
        commits = commitments_in(inbox, MessageType.FELDMAN_COMMIT, threshold, params)
        cheaters = []
        total = self.nonce_shares[tau]
        for m in inbox:
            if m.type != MessageType.NONCE_SHARE:
                continue
            value = vector_from_bytes(m.body, params.l)
            if not feldman_check(a_hat, commits[m.sender], self.party_id, value):
                cheaters.append(m.sender)
                continue
            total = (total + value) % Q
        self.nonce_shares[tau] = total
        return cheaters

    def settle(self, tau: bytes, inbox: Sequence[Message]) -> None:
        """Keeps ŷ_i only when the coordinator accepted the session"""
        accepted = any(
            m.type == MessageType.COMMITMENT and m.sender == COORDINATOR and m.body
            for m in inbox
        )
        if not accepted:
            self.nonce_shares.pop(tau, None)

    def respond(
        self, tau: bytes, inbox: Sequence[Message], params: ParamSet
    ) -> List[Message]:
        y_share = self.nonce_shares.pop(tau, None)
        if y_share is None:
            raise SessionReuse(tau)
        challenge = next((m for m in inbox if m.type == MessageType.CHALLENGE), None)
        if challenge is None:
            raise SigningAbort("missing challenge")
        c = sample_in_ball(challenge.body, params)
        z_share = (y_share + poly_vec_mul(c, self.share)) % Q
        body = vector_to_bytes(z_share)
        return [self._message(MessageType.RESPONSE, tau, 1, body, receiver=COORDINATOR)]


class TeeCoordinator:
    """Sealed coordinator state; only the module's operations touch it"""

    def __init__(
        self,
        pk: PublicKey,
        s2: np.ndarray,
        t0: np.ndarray,
        share_commitments: Mapping[int, np.ndarray],
        threshold: int,
        parties: int,
    ) -> None:
        self.pk = pk
        self.params = pk.params
        self.a_hat = expand_a(pk.rho, self.params)
        self.threshold = threshold
        self.parties = parties
        self.__s2 = s2
        self.__t0 = t0
        self.share_commitments = dict(share_commitments)
        self.pool: Dict[bytes, NonceSession] = {}
        self.__w: Dict[bytes, np.ndarray] = {}
        self.__nonce_commitments: Dict[bytes, Dict[int, np.ndarray]] = {}
        self.retries: List[int] = []

    def fresh_sessions(self) -> List[NonceSession]:
        return [s for s in self.pool.values() if not s.consumed]

    def judge_nonce(
        self, tau: bytes, signing_set: Sequence[int], inbox: Sequence[Message]
    ) -> Optional[np.ndarray]:
        """w1 when A·Σŷ clears the boundary, None otherwise"""
        params = self.params
        commitments = commitments_in(
            inbox, MessageType.FELDMAN_COMMIT, self.threshold, params
        )
        w = sum(phi[0] for phi in commitments.values()) % Q
        if not bcc_check(w, params).passes:
            return None
        self.__w[tau] = w
        self.__nonce_commitments[tau] = {
            i: sum(feldman_expected(phi, i) for phi in commitments.values()) % Q
            for i in signing_set
        }
        return high_bits(w, params)

    def admit(self, session: NonceSession) -> None:
        self.pool[session.tau] = session

    def challenge(self, tau: bytes, msg: bytes, ctx: bytes = b"") -> Message:
        session = self.pool.get(tau)
        if session is None:
            raise KeyError(f"No pooled session {tau.hex()}")
        if session.consumed:
            raise SessionReuse(tau)
        session.consumed = True
        ctilde = challenge_hash(self.pk, msg, session.w1, ctx)
        return Message(MessageType.CHALLENGE, tau, 0, COORDINATOR, BROADCAST, ctilde)

    def blame(
        self, tau: bytes, responses: Mapping[int, np.ndarray], c: np.ndarray
    ) -> List[int]:
        """Signers whose response breaks A·z_i = A·ŷ_i + c·A·s1_i"""
        expected_y = self.__nonce_commitments[tau]
        blamed = []
        for i in self.pool[tau].signing_set:
            if i not in responses:
                blamed.append(i)
                continue
            expected = (expected_y[i] + poly_vec_mul(c, self.share_commitments[i])) % Q
            if not np.array_equal(mat_vec(self.a_hat, responses[i]), expected):
                blamed.append(i)
        return blamed

    def aggregate(
        self,
        tau: bytes,
        ctilde: bytes,
        msg: bytes,
        ctx: bytes,
        responses: Mapping[int, np.ndarray],
    ) -> Signature:
        params = self.params
        session = self.pool[tau]
        c = sample_in_ball(ctilde, params)
        # A·ŷ_i stays for blame, the full commitment goes with the attempt
        w = self.__w.pop(tau)

        missing = [i for i in session.signing_set if i not in responses]
        if missing:
            raise SigningAbort("missing response", missing)
        responses = {i: responses[i] for i in session.signing_set}

        z = centered(lagrange_combine(responses, lagrange_coeffs(session.signing_set)))
        if inf_norm(z) >= params.gamma1 - params.beta:
            raise SigningAbort("z-bound", self.blame(tau, responses, c))

        ct0 = poly_vec_mul(c, self.__t0)
        h = make_hint(-ct0, w - poly_vec_mul(c, self.__s2) + ct0, params)
        if inf_norm(ct0) >= params.gamma2 or int(h.sum()) > params.omega:
            logger.warning(f"Hint weight {int(h.sum())} for {tau.hex()}")
            raise SigningAbort("hint-weight", self.blame(tau, responses, c))

        signature = Signature(ctilde=ctilde, z=z, h=h, params=params)
        if not verify(self.pk, msg, signature, ctx):
            blamed = self.blame(tau, responses, c)
            raise SigningAbort("response check" if blamed else "verify-failed", blamed)
        return signature

    def apply_refresh(self, commitments: Mapping[int, np.ndarray]) -> List[int]:
        """Dealers whose F_{h,0} is not zero; A·s1_i changes only if there are none"""
        blamed = [h for h, phi in commitments.items() if phi[0].any()]
        if not blamed:
            self.share_commitments = {
                i: (value + sum(feldman_expected(phi, i) for phi in commitments.values()))
                % Q
                for i, value in self.share_commitments.items()
            }
        return blamed

    # Persistence

    def to_arrays(self) -> Dict[str, np.ndarray]:
        arrays = {
            "pk": np.frombuffer(self.pk.to_bytes(), dtype=np.uint8),
            "level": np.array([int(self.params.short_name)]),
            "shape": np.array([self.threshold, self.parties]),
            "s2": self.__s2,
            "t0": self.__t0,
        }
        for i, value in self.share_commitments.items():
            arrays[f"as1_{i}"] = value
        for tau, w in self.__w.items():
            arrays[f"w_{tau.hex()}"] = w
        for tau, commitments in self.__nonce_commitments.items():
            for i, value in commitments.items():
                arrays[f"ay_{tau.hex()}_{i}"] = value
        return arrays

    @classmethod
    def from_arrays(cls, arrays: Mapping[str, np.ndarray]) -> "TeeCoordinator":
        params = get_params(str(int(arrays["level"][0])))
        pk = PublicKey.from_bytes(arrays["pk"].tobytes(), params)
        threshold, parties = (int(x) for x in arrays["shape"])
        coordinator = cls(
            pk,
            arrays["s2"],
            arrays["t0"],
            {i: arrays[f"as1_{i}"] for i in range(1, parties + 1)},
            threshold,
            parties,
        )
        for name, value in arrays.items():
            if name.startswith("w_"):
                coordinator.__w[bytes.fromhex(name[2:])] = value
            elif name.startswith("ay_"):
                _, tau, i = name.split("_")
                coordinator.__nonce_commitments.setdefault(bytes.fromhex(tau), {})[
                    int(i)
                ] = value
        return coordinator


def tee_keygen(
    threshold: int,
    parties: int,
    seed: bytes,
    level="65",
    rng: Optional[np.random.Generator] = None,
) -> Tuple[PublicKey, Dict[int, TeeSigner], TeeCoordinator]:
    """Single-party key generation followed by Shamir sharing of s1"""
    params = get_params(level)
    rng = rng if rng is not None else np.random.default_rng()
    pk, sk = keygen(seed, params)
    shares = share_secret(sk.s1 % Q, threshold, parties, rng)
    a_hat = expand_a(pk.rho, params)

    signers = {
        share.party_id: TeeSigner(
            party_id=share.party_id,
            share=share.value,
            rng=np.random.default_rng(rng.integers(0, 2**63)),
        )
        for share in shares
    }
    coordinator = TeeCoordinator(
        pk,
        sk.s2,
        sk.t0,
        {share.party_id: mat_vec(a_hat, share.value) for share in shares},
        threshold,
        parties,
    )
    logger.info(f"TEE key generation for T={threshold} N={parties} at {params}")
    return pk, signers, coordinator


async def tee_preprocess(
    coordinator: TeeCoordinator,
    signers: Mapping[int, TeeSigner],
    signing_set: Sequence[int],
    network: Network,
    next_tau: Optional[Callable[[], bytes]] = None,
    max_attempts: int = MAX_ATTEMPTS,
) -> NonceSession:
    """Nonce DKG repeated until the aggregate commitment clears the boundary"""
    signing_set = tuple(sorted(signing_set))
    threshold = coordinator.threshold
    if len(signing_set) < threshold:
        raise ValueError(f"Signing set {signing_set} smaller than T={threshold}")
    next_tau = next_tau or SessionCounter().next_tau
    params = coordinator.params
    a_hat = coordinator.a_hat
    participants = (COORDINATOR,) + signing_set

    for attempt in range(1, max_attempts + 1):
        tau = next_tau()
        outbox = {
            h: signers[h].deal_nonce(tau, signing_set, threshold, a_hat, params)
            for h in signing_set
        }
        inbox = await network.exchange("tee-preprocess", outbox, participants)
        cheaters = set()
        for i in signing_set:
            cheaters.update(
                signers[i].absorb_nonce(tau, inbox[i], threshold, a_hat, params)
            )
        if cheaters:
            for i in signing_set:
                signers[i].nonce_shares.pop(tau, None)
            raise SigningAbort("nonce share fails its Feldman check", cheaters)

        w1 = coordinator.judge_nonce(tau, signing_set, inbox[COORDINATOR])
        body = b"" if w1 is None else w1_encode(w1, params)
        verdict = Message(MessageType.COMMITMENT, tau, 1, COORDINATOR, BROADCAST, body)
        inbox = await network.exchange(
            "tee-preprocess", {COORDINATOR: [verdict]}, participants
        )
        for i in signing_set:
            signers[i].settle(tau, inbox[i])

        if w1 is not None:
            session = NonceSession(
                tau=tau, signing_set=signing_set, w1=w1, attempts=attempt
            )
            coordinator.admit(session)
            coordinator.retries.append(attempt)
            logger.info(f"Nonce session {tau.hex()} accepted after {attempt} attempts")
            return session
        logger.debug(f"Nonce {tau.hex()} fails the boundary check")

    logger.warning(f"No nonce cleared the boundary in {max_attempts} attempts")
    raise SigningAbort(f"no nonce accepted in {max_attempts} attempts")


async def tee_sign(
    coordinator: TeeCoordinator,
    signers: Mapping[int, TeeSigner],
    tau: bytes,
    msg: bytes,
    network: Network,
    ctx: bytes = b"",
) -> Signature:
    """One response round over a pooled session"""
    params = coordinator.params
    challenge = coordinator.challenge(tau, msg, ctx)
    signing_set = coordinator.pool[tau].signing_set
    participants = (COORDINATOR,) + signing_set

    inbox = await network.exchange("sign", {COORDINATOR: [challenge]}, participants)
    outbox = {i: signers[i].respond(tau, inbox[i], params) for i in signing_set}
    inbox = await network.exchange("sign", outbox, participants)
    responses = {
        m.sender: vector_from_bytes(m.body, params.l)
        for m in inbox[COORDINATOR]
        if m.type == MessageType.RESPONSE
    }
    return coordinator.aggregate(tau, challenge.body, msg, ctx, responses)


def tee_blame(
    coordinator: TeeCoordinator,
    session: NonceSession,
    responses: Mapping[int, np.ndarray],
    c: np.ndarray,
) -> List[int]:
    return coordinator.blame(session.tau, responses, c)


async def tee_refresh(
    coordinator: TeeCoordinator,
    signers: Mapping[int, TeeSigner],
    network: Network,
    nonzero_constant: Iterable[int] = (),
) -> Dict[int, TeeSigner]:
    """Add a verifiable zero sharing to every share; pk and s1 are unchanged"""
    params = coordinator.params
    threshold = coordinator.threshold
    ids = sorted(signers)
    if len(ids) != coordinator.parties:
        raise ValueError(f"Refresh needs all {coordinator.parties} parties, got {ids}")
    faulty = set(nonzero_constant)
    tau = b"tee-refresh".ljust(16, b"\x00")

    polynomials = {}
    outbox = {}
    for h in ids:
        constant = np.zeros((params.l, N), dtype=np.int64)
        if h in faulty:
            constant[0, 0] = 1
        f = random_polynomial(constant, threshold, signers[h].rng)
        polynomials[h] = f
        commitments = vector_to_bytes(feldman_commit(coordinator.a_hat, f).reshape(-1, N))
        outbox[h] = [
            Message(MessageType.REFRESH_SHARE, tau, 0, h, j, vector_to_bytes(evaluate(f, j)))
            for j in ids
            if j != h
        ]
        outbox[h].append(
            Message(MessageType.REFRESH_COMMIT, tau, 0, h, BROADCAST, commitments)
        )
    inbox = await network.exchange("refresh", outbox, (COORDINATOR,) + tuple(ids))

    published = commitments_in(
        inbox[COORDINATOR], MessageType.REFRESH_COMMIT, threshold, params
    )
    blamed = {h for h, phi in published.items() if phi[0].any()}
    updates = {}
    for i in ids:
        commitments = commitments_in(inbox[i], MessageType.REFRESH_COMMIT, threshold, params)
        total = evaluate(polynomials[i], i)
        for m in inbox[i]:
            if m.type != MessageType.REFRESH_SHARE:
                continue
            value = vector_from_bytes(m.body, params.l)
            if not feldman_check(coordinator.a_hat, commitments[m.sender], i, value):
                blamed.add(m.sender)
            total = (total + value) % Q
        updates[i] = total
    if blamed:
        logger.warning(f"Refresh rejected, blamed {sorted(blamed)}")
        raise RefreshRejected(blamed)

    coordinator.apply_refresh(published)
    for i in ids:
        signers[i].share = (signers[i].share + updates[i]) % Q
    logger.info(f"Refreshed {len(ids)} TEE shares")
    return dict(signers)


# Persistence


def save_tee(
    directory: Union[str, Path],
    coordinator: TeeCoordinator,
    signers: Mapping[int, TeeSigner],
) -> None:
    directory = Path(directory)
    save_arrays(directory / "coordinator.npz", coordinator.to_arrays())
    arrays = {}
    for i, signer in signers.items():
        arrays[f"share_{i}"] = signer.share
        for tau, value in signer.nonce_shares.items():
            arrays[f"nonce_{i}_{tau.hex()}"] = value
    save_arrays(directory / "signers.npz", arrays)
    pool = pool_to_bytes(coordinator.pool.values(), coordinator.params)
    write_atomic(directory / "pool.bin", pool)


def load_tee(
    directory: Union[str, Path]
) -> Tuple[TeeCoordinator, Dict[int, TeeSigner]]:
    directory = Path(directory)
    coordinator = TeeCoordinator.from_arrays(load_arrays(directory / "coordinator.npz"))
    arrays = load_arrays(directory / "signers.npz")
    signers = {}
    for i in range(1, coordinator.parties + 1):
        signers[i] = TeeSigner(
            party_id=i, share=arrays[f"share_{i}"], rng=np.random.default_rng()
        )
        prefix = f"nonce_{i}_"
        for name, value in arrays.items():
            if name.startswith(prefix):
                signers[i].nonce_shares[bytes.fromhex(name[len(prefix) :])] = value
    pool_path = directory / "pool.bin"
    if pool_path.exists():
        for session in pool_from_bytes(pool_path.read_bytes(), NonceSession):
            coordinator.admit(session)
    return coordinator, signers
