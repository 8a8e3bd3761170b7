"""Fully distributed profile

Parties are independent state machines; the async drivers in this module move
their messages through a :class:`~talus.network.Network` one round at a time.
Party 0 is the signing coordinator: it sends the challenge, runs the
identifiable-abort check on every response and releases only signatures that
verify.
"""
import hashlib
import logging
import struct
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Set, Tuple

import numpy as np

from . import prf
from .bcc import HintOverweight, public_hint
from .carry_compare import (
    CarryBackend,
    backend_rounds,
    build_circuit,
    comparison_functionality,
    default_backend,
    party_backend,
    replay,
)
from .cef import (
    MaskedBroadcast,
    combine_masked,
    mask_h_for,
    masked_broadcast,
    masked_w1,
    rho_for,
)
from .message import BROADCAST, TAU_BYTES, Message, MessageType
from .mldsa_core import (
    DecodeError,
    PublicKey,
    Signature,
    centered,
    challenge_hash,
    expand_a,
    inf_norm,
    mat_vec,
    poly_vec_mul,
    power2round,
    sample_in_ball,
    verify,
)
from .network import Network, Transcript
from .params import N, Q, ParamSet, get_params
from .shamir import (
    COEFF_BITS,
    NoncePolynomial,
    evaluate,
    feldman_check,
    feldman_commit,
    feldman_expected,
    lagrange_coeffs,
    lagrange_combine,
    random_polynomial,
    sample_nonce_polynomial,
    vector_from_bytes,
    vector_to_bytes,
)

logger = logging.getLogger(__name__)

COORDINATOR = 0
KEYGEN_TAU = bytes(TAU_BYTES)
REFRESH_LABEL = b"talus-refresh"
COIN_LABEL = b"talus-coin"
EPOCH = struct.Struct(">Q")


class ConfigurationGuardError(Exception):
    def __init__(self, threshold: int, parties: int, reason: str) -> None:
        super().__init__(f"Refusing T={threshold} N={parties}: {reason}")
        self.threshold = threshold
        self.parties = parties


class DuplicateSession(Exception):
    def __init__(self, tau: bytes) -> None:
        super().__init__(f"Session id already used: {tau.hex()}")
        self.tau = tau


class Abort(Exception):
    """A signing attempt ended without a signature

    ``retry`` is set when a fresh preprocessing session is the right reaction.
    """

    def __init__(self, reason: str, retry: bool = True) -> None:
        super().__init__(f"Signing aborted: {reason}")
        self.reason = reason
        self.retry = retry


class Blame(Abort):
    def __init__(self, blamed: Iterable[int], reason: str) -> None:
        self.blamed = sorted(set(blamed))
        super().__init__(f"{reason}, blamed {self.blamed}", retry=False)


def check_configuration(threshold: int, parties: int) -> None:
    if threshold < 2:
        raise ConfigurationGuardError(threshold, parties, "threshold must be at least 2")
    if parties < threshold:
        raise ConfigurationGuardError(threshold, parties, "fewer parties than threshold")
    if threshold >= 3 and parties < 2 * threshold - 1:
        raise ConfigurationGuardError(
            threshold, parties, "N >= 2T - 1 is required for T >= 3"
        )


def contribution_plan(
    parties: Sequence[int], joint_coin: bytes, params: ParamSet
) -> Tuple[List[int], int]:
    """Contributing parties and their per-coefficient bound ⌊η/min(N, η)⌋"""
    parties = sorted(parties)
    if len(parties) <= params.eta:
        return parties, params.eta // len(parties)
    chooser = np.random.default_rng(int.from_bytes(joint_coin, "big"))
    chosen = chooser.choice(parties, size=params.eta, replace=False)
    return sorted(int(party) for party in chosen), 1


def coin_commitment(party: int, coin: bytes) -> bytes:
    return hashlib.sha3_256(COIN_LABEL + party.to_bytes(2, "big") + coin).digest()


def refreshed_seed(i: int, j: int, f_i_at_j: np.ndarray, f_j_at_i: np.ndarray) -> bytes:
    """s′_ij = H("talus-refresh" ∥ i ∥ j ∥ f_i(j) ∥ f_j(i)) for i < j"""
    return hashlib.shake_256(
        REFRESH_LABEL
        + i.to_bytes(2, "big")
        + j.to_bytes(2, "big")
        + vector_to_bytes(f_i_at_j)
        + vector_to_bytes(f_j_at_i)
    ).digest(prf.KEY_BYTES)


def refresh_tau(epoch: int) -> bytes:
    return b"refresh\x00" + EPOCH.pack(epoch)


def by_sender(messages: Iterable[Message], message_type: MessageType) -> Dict[int, bytes]:
    return {m.sender: m.body for m in messages if m.type == message_type}


def require_senders(
    received: Mapping[int, bytes], expected: Iterable[int], what: str
) -> None:
    missing = sorted(set(expected) - set(received))
    if missing:
        raise Blame(missing, f"missing {what}")


def commitments_from_bytes(data: bytes, threshold: int, params: ParamSet) -> np.ndarray:
    return vector_from_bytes(data, threshold * params.k).reshape(
        threshold, params.k, N
    )


@dataclass
class PartySession:
    tau: bytes
    signing_set: Tuple[int, ...]
    carry_backend: str
    local_key: bytes
    session_keys: Dict[Tuple[int, int], bytes]
    nonce: Optional[NoncePolynomial]
    backend: CarryBackend
    y_share: Optional[np.ndarray] = None
    commitments: Dict[int, np.ndarray] = field(default_factory=dict)
    broadcasts: Dict[int, MaskedBroadcast] = field(default_factory=dict)
    w1: Optional[np.ndarray] = None


class MpcParty:
    """One signer: its s1 share, pairwise seeds and open sessions"""

    party_id: int
    params: ParamSet
    threshold: int
    parties: int
    pk: Optional[PublicKey]
    s1_share: Optional[np.ndarray]
    share_commitments: Dict[int, np.ndarray]
    sessions: Dict[bytes, PartySession]
    used_taus: Set[bytes]

    def __init__(
        self,
        party_id: int,
        threshold: int,
        parties: int,
        params,
        rng: np.random.Generator,
    ) -> None:
        self.party_id = party_id
        self.threshold = threshold
        self.parties = parties
        self.params = get_params(params)
        self.rng = rng
        self.pk = None
        self.a_hat = None
        self.s1_share = None
        self.share_commitments = {}
        self.sessions = {}
        self.used_taus = set()
        self.refresh_epoch = 0
        self.__seeds: Dict[int, bytes] = {}
        self.__local_seed: Optional[bytes] = None
        self.__keygen: Dict[str, object] = {}
        self.__refresh: Dict[str, object] = {}

    def __repr__(self) -> str:
        return f"MpcParty({self.party_id}, T={self.threshold}, N={self.parties})"

    @property
    def others(self) -> List[int]:
        return [j for j in range(1, self.parties + 1) if j != self.party_id]

    def _message(
        self,
        message_type: MessageType,
        tau: bytes,
        round_index: int,
        body: bytes,
        receiver: int = BROADCAST,
    ) -> Message:
        return Message(
            type=message_type,
            tau=tau,
            round=round_index,
            sender=self.party_id,
            receiver=receiver,
            body=body,
        )

    # Key generation

    def keygen_commit(self) -> List[Message]:
        coin = self.rng.bytes(32)
        self.__keygen = {"coin": coin}
        body = coin_commitment(self.party_id, coin)
        return [self._message(MessageType.KEYGEN_COMMIT, KEYGEN_TAU, 0, body)]

    def keygen_reveal(self, inbox: Sequence[Message]) -> List[Message]:
        commits = by_sender(inbox, MessageType.KEYGEN_COMMIT)
        require_senders(commits, range(1, self.parties + 1), "coin commitment")
        self.__keygen["commits"] = commits
        return [
            self._message(
                MessageType.KEYGEN_REVEAL, KEYGEN_TAU, 1, self.__keygen["coin"]
            )
        ]

    def keygen_deal(self, inbox: Sequence[Message]) -> List[Message]:
        params = self.params
        coins = by_sender(inbox, MessageType.KEYGEN_REVEAL)
        require_senders(coins, range(1, self.parties + 1), "coin reveal")
        commits = self.__keygen["commits"]
        cheaters = [h for h, coin in coins.items() if coin_commitment(h, coin) != commits[h]]
        if cheaters:
            raise Blame(cheaters, "coin reveal does not match its commitment")

        joint = hashlib.shake_256(b"".join(coins[h] for h in sorted(coins))).digest(64)
        self.a_hat = expand_a(joint[:32], params)
        contributors, bound = contribution_plan(range(1, self.parties + 1), joint[32:], params)
        logger.info(
            f"Party {self.party_id}: contributors {contributors}, bound {bound}"
        )

        if self.party_id in contributors:
            v = self.rng.integers(-bound, bound + 1, size=(params.l, N), dtype=np.int64)
            e = self.rng.integers(-bound, bound + 1, size=(params.k, N), dtype=np.int64)
        else:
            v = np.zeros((params.l, N), dtype=np.int64)
            e = np.zeros((params.k, N), dtype=np.int64)
        f = random_polynomial(v % Q, self.threshold, self.rng)
        commitments = feldman_commit(self.a_hat, f)

        self.__local_seed = self.rng.bytes(prf.KEY_BYTES)
        messages = []
        for j in self.others:
            body = vector_to_bytes(evaluate(f, j))
            if self.party_id < j:
                self.__seeds[j] = self.rng.bytes(prf.KEY_BYTES)
                body += self.__seeds[j]
            messages.append(
                self._message(MessageType.KEYGEN_SHARE, KEYGEN_TAU, 2, body, receiver=j)
            )
        messages.append(
            self._message(
                MessageType.KEYGEN_PUBLIC,
                KEYGEN_TAU,
                2,
                vector_to_bytes(commitments.reshape(-1, N)) + vector_to_bytes(e % Q),
            )
        )
        self.__keygen.update(
            rho=joint[:32],
            contributors=contributors,
            bound=bound,
            own_share=evaluate(f, self.party_id),
        )
        return messages

    def keygen_finish(self, inbox: Sequence[Message]) -> PublicKey:
        params = self.params
        state = self.__keygen
        shares = by_sender(inbox, MessageType.KEYGEN_SHARE)
        publics = by_sender(inbox, MessageType.KEYGEN_PUBLIC)
        require_senders(shares, self.others, "key share")
        require_senders(publics, range(1, self.parties + 1), "key commitments")

        split = self.threshold * params.k * N * COEFF_BITS // 8
        commitments: Dict[int, np.ndarray] = {}
        s2_pieces: Dict[int, np.ndarray] = {}
        cheaters = set()
        for h, body in publics.items():
            try:
                commitments[h] = commitments_from_bytes(body[:split], self.threshold, params)
                s2_pieces[h] = centered(vector_from_bytes(body[split:], params.k))
            except ValueError:
                cheaters.add(h)
                continue
            if h in state["contributors"]:
                if inf_norm(s2_pieces[h]) > state["bound"]:
                    cheaters.add(h)
            elif s2_pieces[h].any() or commitments[h][0].any():
                cheaters.add(h)
        if cheaters:
            raise Blame(cheaters, "norm-bound violation on contributions")

        share_size = params.l * N * COEFF_BITS // 8
        total = state["own_share"]
        for h in self.others:
            body = shares[h]
            expected = share_size + (prf.KEY_BYTES if h < self.party_id else 0)
            if len(body) != expected:
                cheaters.add(h)
                continue
            value = vector_from_bytes(body[:share_size], params.l)
            if not feldman_check(self.a_hat, commitments[h], self.party_id, value):
                cheaters.add(h)
                continue
            total = (total + value) % Q
            if h < self.party_id:
                self.__seeds[h] = body[share_size:]
        if cheaters:
            raise Blame(cheaters, "key share fails its Feldman check")

        t = (sum(c[0] for c in commitments.values()) + sum(s2_pieces.values())) % Q
        t1, _ = power2round(t, params.d)
        self.pk = PublicKey(rho=state["rho"], t1=t1, params=params)
        self.s1_share = total
        self.share_commitments = {
            j: sum(feldman_expected(c, j) for c in commitments.values()) % Q
            for j in range(1, self.parties + 1)
        }
        # s2 pieces and the dealt polynomial are not kept
        self.__keygen = {}
        logger.info(f"Party {self.party_id}: key generation done")
        return self.pk

    # Preprocessing

    def local_key(self, tau: bytes) -> bytes:
        return prf.prf(self.__local_seed, prf.LOCAL + tau, prf.KEY_BYTES)

    def session_keys(
        self, tau: bytes, signing_set: Iterable[int]
    ) -> Dict[Tuple[int, int], bytes]:
        return {
            prf.pair(self.party_id, j): prf.session_key(self.__seeds[j], tau)
            for j in signing_set
            if j != self.party_id
        }

    def check_fresh(self, tau: bytes) -> None:
        if tau in self.used_taus:
            raise DuplicateSession(tau)

    def open_session(
        self,
        tau: bytes,
        signing_set: Sequence[int],
        carry_backend: str,
        functionality=None,
    ) -> List[Message]:
        """Round 0: nonce shares, Feldman commitments and the masked broadcast"""
        self.check_fresh(tau)
        self.used_taus.add(tau)

        params = self.params
        signing_set = tuple(sorted(signing_set))
        keys = self.session_keys(tau, signing_set)
        local_key = self.local_key(tau)
        rho = rho_for(local_key, len(signing_set), params)
        mask_h = mask_h_for(self.party_id, keys, signing_set, params)

        nonce = sample_nonce_polynomial(
            self.party_id, self.threshold, len(signing_set), params, self.rng
        )
        commitments = feldman_commit(self.a_hat, nonce.coeffs)
        broadcast = masked_broadcast(commitments[0], mask_h, rho, params)
        backend = party_backend(
            carry_backend, self.party_id, signing_set, rho, keys, params, functionality
        )
        self.sessions[tau] = PartySession(
            tau=tau,
            signing_set=signing_set,
            carry_backend=carry_backend,
            local_key=local_key,
            session_keys=keys,
            nonce=nonce,
            backend=backend,
        )

        messages = [
            self._message(
                MessageType.NONCE_SHARE, tau, 0, vector_to_bytes(nonce.evaluate(h)), receiver=h
            )
            for h in signing_set
            if h != self.party_id
        ]
        messages.append(
            self._message(MessageType.MASKED_BROADCAST, tau, 0, broadcast.to_bytes(params))
        )
        messages.append(
            self._message(
                MessageType.FELDMAN_COMMIT, tau, 0, vector_to_bytes(commitments.reshape(-1, N))
            )
        )
        gates = backend.message(0)
        if gates:
            messages.append(self._message(MessageType.CSA_GATES, tau, 0, gates))
        return messages

    def absorb_round0(self, tau: bytes, inbox: Sequence[Message]) -> None:
        params = self.params
        session = self.sessions[tau]
        signers = session.signing_set
        others = [h for h in signers if h != self.party_id]

        shares = by_sender(inbox, MessageType.NONCE_SHARE)
        commits = by_sender(inbox, MessageType.FELDMAN_COMMIT)
        broadcasts = by_sender(inbox, MessageType.MASKED_BROADCAST)
        require_senders(shares, others, "nonce share")
        require_senders(commits, signers, "nonce commitments")
        require_senders(broadcasts, signers, "masked broadcast")

        cheaters = set()
        for h in signers:
            try:
                session.commitments[h] = commitments_from_bytes(
                    commits[h], self.threshold, params
                )
                session.broadcasts[h] = MaskedBroadcast.from_bytes(broadcasts[h], params)
            except (ValueError, DecodeError):
                cheaters.add(h)
        if cheaters:
            raise Blame(cheaters, "malformed round 0 broadcast")

        y_share = session.nonce.evaluate(self.party_id)
        for h in others:
            try:
                value = vector_from_bytes(shares[h], params.l)
            except ValueError:
                cheaters.add(h)
                continue
            if not feldman_check(self.a_hat, session.commitments[h], self.party_id, value):
                cheaters.add(h)
                continue
            y_share = (y_share + value) % Q
        if cheaters:
            logger.warning(f"Party {self.party_id}: Feldman check failed for {sorted(cheaters)}")
            raise Blame(cheaters, "nonce share fails its Feldman check")
        session.y_share = y_share
        # only the share survives; the dealt polynomial is erased
        session.nonce = None

        gates = {h: b"" for h in signers}
        gates.update(by_sender(inbox, MessageType.CSA_GATES))
        session.backend.absorb(0, gates)
        _, b_sum = combine_masked([session.broadcasts[h] for h in signers], params)
        session.backend.set_threshold(b_sum % params.alpha)

    def carry_messages(self, tau: bytes, round_index: int) -> List[Message]:
        session = self.sessions[tau]
        body = session.backend.message(round_index)
        if not body:
            return []
        message_type = (
            MessageType.CSA_GATES
            if session.carry_backend == "cscp" and is_csa_round(session, round_index)
            else MessageType.PREFIX_GATES
        )
        return [self._message(message_type, tau, round_index, body)]

    def absorb_carry(self, tau: bytes, round_index: int, inbox: Sequence[Message]) -> None:
        session = self.sessions[tau]
        gates = {h: b"" for h in session.signing_set}
        gates.update(
            {
                m.sender: m.body
                for m in inbox
                if m.type in (MessageType.CSA_GATES, MessageType.PREFIX_GATES)
            }
        )
        session.backend.absorb(round_index, gates)

    def finish_preprocess(self, tau: bytes) -> np.ndarray:
        params = self.params
        session = self.sessions[tau]
        result = session.backend.result
        if result is None:
            raise RuntimeError(f"Carry comparison of {tau.hex()} did not finish")
        h_sum, b_sum = combine_masked(
            [session.broadcasts[h] for h in session.signing_set], params
        )
        shape = (params.k, N)
        session.w1 = masked_w1(
            h_sum, b_sum, result.c.reshape(shape), result.delta.reshape(shape), params
        )
        return session.w1

    # Signing

    def respond(self, tau: bytes, inbox: Sequence[Message]) -> List[Message]:
        """z_i = ŷ_i + c·s1_i; the nonce share is erased before returning"""
        session = self.sessions.get(tau)
        if session is None or session.y_share is None:
            raise DuplicateSession(tau)
        challenges = [
            m
            for m in inbox
            if m.type == MessageType.CHALLENGE and m.sender == COORDINATOR
        ]
        if len(challenges) != 1:
            raise Abort(f"expected one challenge, got {len(challenges)}", retry=True)
        c = sample_in_ball(challenges[0].body, self.params)
        z_share = (session.y_share + poly_vec_mul(c, self.s1_share)) % Q
        session.y_share = None
        return [self._message(MessageType.RESPONSE, tau, 1, vector_to_bytes(z_share))]

    # Blame

    def has_session(self, tau: bytes) -> bool:
        return tau in self.sessions

    def reveal(self, tau: bytes) -> List[Message]:
        """Session-derived keys only: the local key and K_hj for j in S \\ {h}"""
        session = self.sessions[tau]
        body = session.local_key + b"".join(
            session.session_keys[prf.pair(self.party_id, j)]
            for j in session.signing_set
            if j != self.party_id
        )
        return [self._message(MessageType.BLAME_REVEAL, tau, 0, body)]

    def close_session(self, tau: bytes) -> None:
        self.sessions.pop(tau, None)

    # Refresh

    def refresh_deal(self, nonzero_constant: bool = False) -> List[Message]:
        params = self.params
        tau = refresh_tau(self.refresh_epoch)
        constant = np.zeros((params.l, N), dtype=np.int64)
        if nonzero_constant:
            constant[0, 0] = 1
        f = random_polynomial(constant, self.threshold, self.rng)
        commitments = feldman_commit(self.a_hat, f)
        self.__refresh = {"f": f}

        messages = [
            self._message(
                MessageType.REFRESH_SHARE, tau, 0, vector_to_bytes(evaluate(f, j)), receiver=j
            )
            for j in self.others
        ]
        messages.append(
            self._message(
                MessageType.REFRESH_COMMIT, tau, 0, vector_to_bytes(commitments.reshape(-1, N))
            )
        )
        return messages

    def refresh_check(self, inbox: Sequence[Message]) -> List[int]:
        """Parties whose refresh polynomial is not a verifiable zero sharing"""
        params = self.params
        f = self.__refresh["f"]
        commits = by_sender(inbox, MessageType.REFRESH_COMMIT)
        shares = by_sender(inbox, MessageType.REFRESH_SHARE)
        require_senders(commits, range(1, self.parties + 1), "refresh commitments")
        require_senders(shares, self.others, "refresh share")

        cheaters = []
        received = {self.party_id: evaluate(f, self.party_id)}
        commitments = {}
        for h in range(1, self.parties + 1):
            try:
                commitments[h] = commitments_from_bytes(commits[h], self.threshold, params)
            except ValueError:
                cheaters.append(h)
                continue
            if commitments[h][0].any():
                cheaters.append(h)
                continue
            if h == self.party_id:
                continue
            try:
                value = vector_from_bytes(shares[h], params.l)
            except ValueError:
                cheaters.append(h)
                continue
            if not feldman_check(self.a_hat, commitments[h], self.party_id, value):
                cheaters.append(h)
                continue
            received[h] = value
        self.__refresh.update(received=received, commitments=commitments)
        return cheaters

    def refresh_apply(self) -> None:
        f = self.__refresh["f"]
        received = self.__refresh["received"]
        commitments = self.__refresh["commitments"]

        self.s1_share = (self.s1_share + sum(received.values())) % Q
        self.share_commitments = apply_refresh_commitments(
            self.share_commitments, commitments
        )
        for j in self.others:
            i = self.party_id
            if i < j:
                self.__seeds[j] = refreshed_seed(i, j, evaluate(f, j), received[j])
            else:
                self.__seeds[j] = refreshed_seed(j, i, received[j], evaluate(f, j))
        self.refresh_epoch += 1
        self.__refresh = {}

    def refresh_discard(self) -> None:
        self.refresh_epoch += 1
        self.__refresh = {}


def is_csa_round(session: PartySession, round_index: int) -> bool:
    """Compressor-tree layers travel as CSA_GATES, prefix and reveal as PREFIX_GATES"""
    layers = build_circuit(session.signing_set).layers
    return round_index < len(layers) and layers[round_index].name != "prefix"


def apply_refresh_commitments(
    share_commitments: Mapping[int, np.ndarray], commitments: Mapping[int, np.ndarray]
) -> Dict[int, np.ndarray]:
    return {
        j: (value + sum(feldman_expected(c, j) for c in commitments.values())) % Q
        for j, value in share_commitments.items()
    }


@dataclass
class CoordinatorSession:
    signing_set: Tuple[int, ...]
    commitments: Dict[int, np.ndarray]
    w1: Optional[np.ndarray] = None
    consumed: bool = False


class Coordinator:
    """Challenge, identifiable-abort check and pre-output verification"""

    def __init__(
        self,
        pk: PublicKey,
        share_commitments: Mapping[int, np.ndarray],
        threshold: int,
    ) -> None:
        self.pk = pk
        self.params = pk.params
        self.a_hat = expand_a(pk.rho, self.params)
        self.share_commitments = dict(share_commitments)
        self.threshold = threshold
        self.sessions: Dict[bytes, CoordinatorSession] = {}
        self.__pending: Dict[bytes, Tuple[bytes, bytes, bytes]] = {}

    def observe(
        self, tau: bytes, signing_set: Sequence[int], inbox: Sequence[Message]
    ) -> None:
        commits = by_sender(inbox, MessageType.FELDMAN_COMMIT)
        self.sessions[tau] = CoordinatorSession(
            signing_set=tuple(sorted(signing_set)),
            commitments={
                h: commitments_from_bytes(body, self.threshold, self.params)
                for h, body in commits.items()
            },
        )

    def accept(self, tau: bytes, w1: np.ndarray) -> None:
        self.sessions[tau].w1 = w1

    def challenge(self, tau: bytes, msg: bytes, ctx: bytes = b"") -> Message:
        session = self.sessions.get(tau)
        if session is None or session.w1 is None:
            raise KeyError(f"No preprocessed session {tau.hex()}")
        if session.consumed:
            raise DuplicateSession(tau)
        session.consumed = True
        ctilde = challenge_hash(self.pk, msg, session.w1, ctx)
        self.__pending[tau] = (ctilde, msg, ctx)
        return Message(
            type=MessageType.CHALLENGE,
            tau=tau,
            round=0,
            sender=COORDINATOR,
            receiver=BROADCAST,
            body=ctilde,
        )

    def check_responses(
        self, tau: bytes, c: np.ndarray, responses: Mapping[int, np.ndarray]
    ) -> List[int]:
        """Parties with A·z_i ≠ A·ŷ_i + c·A·s1_i"""
        session = self.sessions[tau]
        blamed = []
        for i in session.signing_set:
            if i not in responses:
                blamed.append(i)
                continue
            a_y = sum(feldman_expected(phi, i) for phi in session.commitments.values()) % Q
            expected = (a_y + poly_vec_mul(c, self.share_commitments[i])) % Q
            if not np.array_equal(mat_vec(self.a_hat, responses[i]), expected):
                blamed.append(i)
        return blamed

    def assemble(self, tau: bytes, inbox: Sequence[Message]) -> Signature:
        params = self.params
        session = self.sessions[tau]
        ctilde, msg, ctx = self.__pending.pop(tau)
        c = sample_in_ball(ctilde, params)

        responses = {}
        malformed = []
        for h, body in by_sender(inbox, MessageType.RESPONSE).items():
            try:
                responses[h] = vector_from_bytes(body, params.l)
            except ValueError:
                malformed.append(h)
        blamed = malformed + self.check_responses(
            tau, c, {h: z for h, z in responses.items() if h not in malformed}
        )
        if blamed:
            logger.warning(f"Identifiable abort in {tau.hex()}: {sorted(set(blamed))}")
            raise Blame(blamed, "response fails the linear check")

        z = centered(lagrange_combine(responses, lagrange_coeffs(session.signing_set)))
        if inf_norm(z) >= params.gamma1 - params.beta:
            raise Abort("z-bound")
        try:
            h = public_hint(self.pk, z, c, session.w1, self.a_hat)
        except HintOverweight:
            raise Abort("hint-weight")

        signature = Signature(ctilde=ctilde, z=z, h=h, params=params)
        if not verify(self.pk, msg, signature, ctx):
            raise Abort("verify-failed")
        return signature


# Drivers


@dataclass
class PreprocessResult:
    tau: bytes
    signing_set: Tuple[int, ...]
    w1: np.ndarray
    rounds: int
    carry_backend: str


async def mpc_keygen(
    parties: Mapping[int, MpcParty], network: Network
) -> Tuple[PublicKey, Coordinator]:
    """Three-round key generation: coin commit, coin reveal, shares"""
    first = next(iter(parties.values()))
    check_configuration(first.threshold, first.parties)
    ids = sorted(parties)
    participants = [COORDINATOR] + ids

    inbox = await network.exchange(
        "keygen", {i: parties[i].keygen_commit() for i in ids}, participants
    )
    inbox = await network.exchange(
        "keygen", {i: parties[i].keygen_reveal(inbox[i]) for i in ids}, participants
    )
    inbox = await network.exchange(
        "keygen", {i: parties[i].keygen_deal(inbox[i]) for i in ids}, participants
    )
    keys = {i: parties[i].keygen_finish(inbox[i]) for i in ids}

    encoded = {pk.to_bytes() for pk in keys.values()}
    if len(encoded) != 1:
        raise Abort("parties disagree on the public key", retry=False)
    pk = keys[ids[0]]
    return pk, Coordinator(pk, parties[ids[0]].share_commitments, first.threshold)


async def mpc_preprocess(
    parties: Mapping[int, MpcParty],
    coordinator: Coordinator,
    signing_set: Sequence[int],
    tau: bytes,
    network: Network,
    carry_backend: Optional[str] = None,
    dealer_rng: Optional[np.random.Generator] = None,
) -> PreprocessResult:
    signing_set = tuple(sorted(signing_set))
    threshold = coordinator.threshold
    if len(signing_set) != threshold:
        raise ValueError(f"Signing set {signing_set} must have exactly T={threshold} parties")
    for i in signing_set:
        parties[i].check_fresh(tau)

    kind = carry_backend or default_backend(len(signing_set))
    functionality = comparison_functionality(kind, signing_set, coordinator.params, dealer_rng)

    participants = (COORDINATOR,) + signing_set
    rounds = backend_rounds(kind, len(signing_set))
    outbox = {
        i: parties[i].open_session(tau, signing_set, kind, functionality)
        for i in signing_set
    }
    inbox = await network.exchange("preprocess", outbox, participants)
    blamed = set()
    for i in signing_set:
        try:
            parties[i].absorb_round0(tau, inbox[i])
        except Blame as blame:
            blamed.update(blame.blamed)
    if blamed:
        for i in signing_set:
            parties[i].close_session(tau)
        raise Blame(blamed, "round 0 of preprocessing")
    coordinator.observe(tau, signing_set, inbox[COORDINATOR])

    for round_index in range(1, rounds):
        outbox = {i: parties[i].carry_messages(tau, round_index) for i in signing_set}
        inbox = await network.exchange("preprocess", outbox, participants)
        for i in signing_set:
            parties[i].absorb_carry(tau, round_index, inbox[i])

    w1s = [parties[i].finish_preprocess(tau) for i in signing_set]
    if any(not np.array_equal(w1s[0], w1) for w1 in w1s[1:]):
        raise Abort("signers disagree on w1", retry=True)
    coordinator.accept(tau, w1s[0])
    logger.info(f"Session {tau.hex()} preprocessed in {rounds} rounds with {kind}")
    return PreprocessResult(
        tau=tau, signing_set=signing_set, w1=w1s[0], rounds=rounds, carry_backend=kind
    )


async def mpc_sign(
    parties: Mapping[int, MpcParty],
    coordinator: Coordinator,
    tau: bytes,
    msg: bytes,
    network: Network,
    ctx: bytes = b"",
) -> Signature:
    """One online attempt: challenge, one response broadcast per signer

    Raises :class:`Abort` with ``retry`` set when the nonce has to be
    discarded; session keys are kept for :func:`mpc_blame` in that case.
    """
    signing_set = coordinator.sessions[tau].signing_set
    participants = (COORDINATOR,) + signing_set

    challenge = coordinator.challenge(tau, msg, ctx)
    inbox = await network.exchange("sign", {COORDINATOR: [challenge]}, participants)
    outbox = {i: parties[i].respond(tau, inbox[i]) for i in signing_set}
    inbox = await network.exchange("sign", outbox, participants)

    try:
        signature = coordinator.assemble(tau, inbox[COORDINATOR])
    except Blame:
        for i in signing_set:
            parties[i].close_session(tau)
        raise
    for i in signing_set:
        parties[i].close_session(tau)
    return signature


def parse_reveal(
    party: int, body: bytes, signing_set: Sequence[int]
) -> Optional[Tuple[bytes, Dict[Tuple[int, int], bytes]]]:
    others = [j for j in signing_set if j != party]
    if len(body) != prf.KEY_BYTES * (1 + len(others)):
        return None
    chunks = [body[k : k + prf.KEY_BYTES] for k in range(0, len(body), prf.KEY_BYTES)]
    return chunks[0], {prf.pair(party, j): key for j, key in zip(others, chunks[1:])}


def judge_session(
    transcript: Transcript,
    tau: bytes,
    signing_set: Sequence[int],
    reveals: Mapping[int, bytes],
    params: ParamSet,
    threshold: int,
    carry_backend: Optional[str] = None,
    dealer_seed: Optional[bytes] = None,
) -> List[int]:
    """Replay a failed session from public records and revealed session keys

    Runs key consistency, masked-broadcast consistency and the carry replay in
    that order and returns the parties caught by the first failing step.
    """
    signers = sorted(signing_set)
    kind = carry_backend or default_backend(len(signers))

    local_keys: Dict[int, bytes] = {}
    claimed: Dict[int, Dict[Tuple[int, int], bytes]] = {}
    blamed = set()
    for h in signers:
        parsed = parse_reveal(h, reveals[h], signers) if h in reveals else None
        if parsed is None:
            blamed.add(h)
            continue
        local_keys[h], claimed[h] = parsed
    if blamed:
        return sorted(blamed)

    keys: Dict[Tuple[int, int], bytes] = {}
    for h in signers:
        for pair, key in claimed[h].items():
            if keys.setdefault(pair, key) != key:
                logger.warning(f"Revealed keys of pair {pair} disagree")
                blamed.update(pair)
    if blamed:
        return sorted(blamed)

    recorded = by_sender(
        transcript.messages("preprocess", message_type=MessageType.MASKED_BROADCAST, tau=tau),
        MessageType.MASKED_BROADCAST,
    )
    commits = by_sender(
        transcript.messages("preprocess", message_type=MessageType.FELDMAN_COMMIT, tau=tau),
        MessageType.FELDMAN_COMMIT,
    )
    rhos = {h: rho_for(local_keys[h], len(signers), params) for h in signers}
    for h in signers:
        w_piece = commitments_from_bytes(commits[h], threshold, params)[0]
        expected = masked_broadcast(
            w_piece, mask_h_for(h, keys, signers, params), rhos[h], params
        ).to_bytes(params)
        if recorded.get(h) != expected:
            logger.warning(f"Masked broadcast of {h} in {tau.hex()} is inconsistent")
            blamed.add(h)
    if blamed:
        return sorted(blamed)

    _, b_sum = combine_masked(
        [MaskedBroadcast.from_bytes(recorded[h], params) for h in signers], params
    )
    functionality = comparison_functionality(kind, signers, params, dealer_seed=dealer_seed)
    backends = {
        h: party_backend(kind, h, signers, rhos[h], keys, params, functionality)
        for h in signers
    }
    gates = [
        m
        for m in transcript.messages("preprocess", tau=tau)
        if m.type in (MessageType.CSA_GATES, MessageType.PREFIX_GATES)
    ]
    rounds = []
    for round_index in range(backend_rounds(kind, len(signers))):
        messages = {h: b"" for h in signers}
        messages.update({m.sender: m.body for m in gates if m.round == round_index})
        rounds.append(messages)
    deviation = replay(backends, b_sum % params.alpha, rounds)
    if deviation is not None:
        round_index, party = deviation
        logger.warning(f"Carry gates of {party} deviate in round {round_index}")
        return [party]
    return []


async def mpc_blame(
    parties: Mapping[int, MpcParty],
    tau: bytes,
    network: Network,
    carry_backend: Optional[str] = None,
) -> List[int]:
    """Reveal session keys of a failed session and name the deviating parties

    An empty result means an honest failure (BCC or q-wrap); the pairwise
    master seeds stay secret either way.
    """
    signers = sorted(i for i, party in parties.items() if party.has_session(tau))
    if not signers:
        raise KeyError(f"No party holds session {tau.hex()}")
    first = parties[signers[0]]
    signing_set = first.sessions[tau].signing_set
    kind = carry_backend or first.sessions[tau].carry_backend
    dealer_seed = first.sessions[tau].backend.dealer_opening()

    outbox = {i: parties[i].reveal(tau) for i in signers}
    inbox = await network.exchange("blame", outbox, (COORDINATOR,) + tuple(signers))
    reveals = by_sender(inbox[COORDINATOR], MessageType.BLAME_REVEAL)
    blamed = judge_session(
        network.transcript,
        tau,
        signing_set,
        reveals,
        first.params,
        first.threshold,
        kind,
        dealer_seed,
    )
    for i in signers:
        parties[i].close_session(tau)

    if blamed:
        logger.warning(f"Blame for {tau.hex()}: {blamed}")
    else:
        logger.info(f"Session {tau.hex()} failed without a deviation")
    return blamed


async def mpc_refresh(
    parties: Mapping[int, MpcParty],
    coordinator: Coordinator,
    network: Network,
    nonzero_constant: Iterable[int] = (),
) -> None:
    """Re-randomize every s1 share with zero-constant polynomials

    Nothing changes unless every party's dealing passes the public checks.
    """
    ids = sorted(parties)
    faulty = set(nonzero_constant)
    outbox = {i: parties[i].refresh_deal(i in faulty) for i in ids}
    inbox = await network.exchange("refresh", outbox, (COORDINATOR,) + tuple(ids))

    blamed = set()
    for i in ids:
        blamed.update(parties[i].refresh_check(inbox[i]))
    if blamed:
        for i in ids:
            parties[i].refresh_discard()
        raise Blame(blamed, "refresh dealing is not a zero sharing")

    for i in ids:
        parties[i].refresh_apply()
    commits = by_sender(inbox[COORDINATOR], MessageType.REFRESH_COMMIT)
    coordinator.share_commitments = apply_refresh_commitments(
        coordinator.share_commitments,
        {
            h: commitments_from_bytes(body, coordinator.threshold, coordinator.params)
            for h, body in commits.items()
        },
    )
    logger.info(f"Refreshed shares of {ids}")


def create_parties(
    level, threshold: int, parties: int, seed: Optional[int] = None
) -> Dict[int, MpcParty]:
    """Parties with independent deterministic randomness streams"""
    check_configuration(threshold, parties)
    params = get_params(level)
    return {
        i: MpcParty(
            i,
            threshold,
            parties,
            params,
            np.random.default_rng(None if seed is None else [seed, i]),
        )
        for i in range(1, parties + 1)
    }
