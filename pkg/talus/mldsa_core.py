"""ML-DSA arithmetic, sampling, rounding and encodings (FIPS 204)

Ring elements are numpy ``int64`` arrays whose last axis has length 256. A
polynomial vector is an array of shape ``(dim, 256)``. Internally values are
kept canonical in ``[0, q)``; :func:`centered` converts to the representative
in ``(-q/2, q/2]``.
"""
import hashlib
import hmac
import logging
from dataclasses import dataclass, field
from typing import Optional, Tuple, Union

import numpy as np

from .params import N, Q, ParamSet, get_params

logger = logging.getLogger(__name__)

Poly = np.ndarray
PolyVec = np.ndarray

# 256^-1 mod q
_N_INV = 8347681


class DecodeError(Exception):
    def __init__(self, what: str, reason: str) -> None:
        super().__init__(f"Cannot decode {what}: {reason}")


def _bitrev8(value: int) -> int:
    return int(f"{value:08b}"[::-1], 2)


_ZETAS = np.array([pow(1753, _bitrev8(i), Q) for i in range(N)], dtype=np.int64)


def canonical(a) -> np.ndarray:
    return np.asarray(a, dtype=np.int64) % Q


def centered(a) -> np.ndarray:
    a = canonical(a)
    return np.where(a > Q // 2, a - Q, a)


def inf_norm(a) -> int:
    a = centered(a)
    if a.size == 0:
        return 0
    return int(np.abs(a).max())


def ntt(a: np.ndarray) -> np.ndarray:
    """Forward NTT over the last axis, bit-reversed output order"""
    f = canonical(a)
    lead = f.shape[:-1]
    k = 1
    length = N // 2
    while length >= 1:
        blocks = N // (2 * length)
        zetas = _ZETAS[k : k + blocks, None]
        k += blocks
        f = f.reshape(lead + (blocks, 2, length))
        t = (zetas * f[..., 1, :]) % Q
        low = f[..., 0, :]
        f = np.stack(((low + t) % Q, (low - t) % Q), axis=-2)
        length //= 2
    return f.reshape(lead + (N,))


def intt(f: np.ndarray) -> np.ndarray:
    """Inverse NTT over the last axis, canonical output"""
    a = canonical(f)
    lead = a.shape[:-1]
    k = N - 1
    length = 1
    while length < N:
        blocks = N // (2 * length)
        zetas = _ZETAS[k - blocks + 1 : k + 1][::-1, None]
        k -= blocks
        a = a.reshape(lead + (blocks, 2, length))
        low = a[..., 0, :]
        high = a[..., 1, :]
        a = np.stack(((low + high) % Q, (zetas * ((high - low) % Q)) % Q), axis=-2)
        length *= 2
    return (a.reshape(lead + (N,)) * _N_INV) % Q


def ntt_mul(a: Poly, b: Poly) -> Poly:
    """Negacyclic product a·b in Z_q[X]/(X^256 + 1), centered"""
    return centered(intt((ntt(a) * ntt(b)) % Q))


def schoolbook_mul(a: Poly, b: Poly) -> Poly:
    """O(n^2) negacyclic convolution, used as a reference"""
    a = [int(x) for x in canonical(a)]
    b = [int(x) for x in canonical(b)]
    out = [0] * N
    for i, ai in enumerate(a):
        if ai == 0:
            continue
        for j, bj in enumerate(b):
            if i + j < N:
                out[i + j] += ai * bj
            else:
                out[i + j - N] -= ai * bj
    return centered(np.array([x % Q for x in out], dtype=np.int64))


def mat_vec(a_hat: np.ndarray, v: PolyVec) -> PolyVec:
    """A·v for A in the NTT domain (k, l, 256) and v of shape (..., l, 256)"""
    v_hat = ntt(v)
    products = (a_hat * v_hat[..., None, :, :]) % Q
    return intt(products.sum(axis=-2) % Q)


def poly_vec_mul(c: Poly, v: PolyVec) -> PolyVec:
    """c·v for a single polynomial c and a vector v, canonical"""
    return intt((ntt(c) * ntt(v)) % Q)


# Bit packing


def bit_pack(values, bits: int) -> bytes:
    """Little-endian packing of non-negative integers into ``bits`` bits each"""
    values = np.asarray(values, dtype=np.int64).reshape(-1)
    if bits == 0 or values.size == 0:
        return b""
    shifts = np.arange(bits, dtype=np.int64)
    planes = ((values[:, None] >> shifts) & 1).astype(np.uint8)
    return np.packbits(planes.reshape(-1), bitorder="little").tobytes()


def bit_unpack(data: bytes, count: int, bits: int) -> np.ndarray:
    if count == 0:
        return np.zeros(0, dtype=np.int64)
    needed = (count * bits + 7) // 8
    if len(data) < needed:
        raise DecodeError("bit string", f"need {needed} bytes, got {len(data)}")
    planes = np.unpackbits(
        np.frombuffer(data[:needed], dtype=np.uint8), bitorder="little"
    )[: count * bits]
    weights = np.int64(1) << np.arange(bits, dtype=np.int64)
    return (planes.reshape(count, bits).astype(np.int64) * weights).sum(axis=1)


# Sampling


def _shake128(data: bytes, length: int) -> np.ndarray:
    return np.frombuffer(hashlib.shake_128(data).digest(length), dtype=np.uint8)


def _shake256(data: bytes, length: int) -> bytes:
    return hashlib.shake_256(data).digest(length)


def _rej_ntt_poly(seed: bytes) -> Poly:
    need = 3 * 280
    while True:
        stream = _shake128(seed, need).astype(np.int64).reshape(-1, 3)
        candidates = (
            stream[:, 0] | (stream[:, 1] << 8) | ((stream[:, 2] & 0x7F) << 16)
        )
        candidates = candidates[candidates < Q]
        if candidates.size >= N:
            return candidates[:N]
        need += 3 * 64


def _rej_bounded_poly(seed: bytes, eta: int) -> Poly:
    need = 272
    while True:
        stream = np.frombuffer(_shake256(seed, need), dtype=np.uint8).astype(np.int64)
        nibbles = np.stack((stream & 0x0F, stream >> 4), axis=1).reshape(-1)
        if eta == 2:
            nibbles = nibbles[nibbles < 15]
            coeffs = 2 - (nibbles % 5)
        else:
            nibbles = nibbles[nibbles < 9]
            coeffs = 4 - nibbles
        if coeffs.size >= N:
            return coeffs[:N]
        need += 136


def expand_a(rho: bytes, params: ParamSet) -> np.ndarray:
    """Matrix A in the NTT domain, shape (k, l, 256), coefficients in [0, q)"""
    if len(rho) != 32:
        raise ValueError(f"rho must be 32 bytes, got {len(rho)}")
    return np.stack(
        [
            np.stack([_rej_ntt_poly(rho + bytes([s, r])) for s in range(params.l)])
            for r in range(params.k)
        ]
    )


def expand_s(rho_prime: bytes, params: ParamSet) -> Tuple[PolyVec, PolyVec]:
    s1 = np.stack(
        [
            _rej_bounded_poly(rho_prime + r.to_bytes(2, "little"), params.eta)
            for r in range(params.l)
        ]
    )
    s2 = np.stack(
        [
            _rej_bounded_poly(
                rho_prime + (r + params.l).to_bytes(2, "little"), params.eta
            )
            for r in range(params.k)
        ]
    )
    return s1, s2


def expand_mask(rho_pp: bytes, kappa: int, params: ParamSet) -> PolyVec:
    bits = params.gamma1_bits
    rows = []
    for r in range(params.l):
        stream = _shake256(rho_pp + (kappa + r).to_bytes(2, "little"), 32 * bits)
        rows.append(params.gamma1 - bit_unpack(stream, N, bits))
    return np.stack(rows)


def sample_in_ball(ctilde: bytes, params: ParamSet) -> Poly:
    """Challenge polynomial with exactly tau coefficients equal to ±1"""
    length = 8 + 4 * N
    stream = _shake256(ctilde, length)
    signs = int.from_bytes(stream[:8], "little")
    c = np.zeros(N, dtype=np.int64)
    pos = 8
    for i in range(N - params.tau, N):
        while True:
            if pos >= len(stream):
                length *= 2
                stream = _shake256(ctilde, length)
            j = stream[pos]
            pos += 1
            if j <= i:
                break
        c[i] = c[j]
        c[j] = 1 - 2 * ((signs >> (i + params.tau - N)) & 1)
    return c


# Rounding


def power2round(t: np.ndarray, d: int) -> Tuple[np.ndarray, np.ndarray]:
    r = canonical(t)
    r0 = r & ((1 << d) - 1)
    r0 = np.where(r0 > (1 << (d - 1)), r0 - (1 << d), r0)
    return (r - r0) >> d, r0


def decompose(r, params: ParamSet) -> Tuple[np.ndarray, np.ndarray]:
    """r = r1·α + r0 (mod q) with r1 in [0, m) and r0 in (−γ2, γ2]

    The q − 1 edge maps to r1 = 0 and a decremented r0.
    """
    r = canonical(r)
    alpha = params.alpha
    r0 = r % alpha
    r0 = np.where(r0 > params.gamma2, r0 - alpha, r0)
    edge = (r - r0) == Q - 1
    r1 = np.where(edge, 0, (r - r0) // alpha)
    r0 = np.where(edge, r0 - 1, r0)
    return r1, r0


def high_bits(r, params: ParamSet) -> np.ndarray:
    return decompose(r, params)[0]


def low_bits(r, params: ParamSet) -> np.ndarray:
    return decompose(r, params)[1]


def make_hint(z, r, params: ParamSet) -> np.ndarray:
    return (high_bits(r, params) != high_bits(canonical(r) + canonical(z), params)).astype(
        np.uint8
    )


def use_hint(h, r, params: ParamSet) -> np.ndarray:
    m = params.stripes
    r1, r0 = decompose(r, params)
    h = np.asarray(h)
    adjusted = np.where(r0 > 0, (r1 + 1) % m, (r1 - 1) % m)
    return np.where(h != 0, adjusted, r1)


# Keys and signatures


@dataclass
class PublicKey:
    rho: bytes
    t1: PolyVec
    params: ParamSet

    def to_bytes(self) -> bytes:
        return pk_encode(self)

    @classmethod
    def from_bytes(cls, data: bytes, params: ParamSet) -> "PublicKey":
        return pk_decode(data, params)

    @property
    def tr(self) -> bytes:
        return _shake256(self.to_bytes(), 64)


@dataclass
class SecretKey:
    rho: bytes
    key: bytes
    tr: bytes
    s1: PolyVec
    s2: PolyVec
    t0: PolyVec
    params: ParamSet

    def to_bytes(self) -> bytes:
        return sk_encode(self)

    @classmethod
    def from_bytes(cls, data: bytes, params: ParamSet) -> "SecretKey":
        return sk_decode(data, params)


@dataclass
class Signature:
    ctilde: bytes
    z: PolyVec
    h: np.ndarray
    params: ParamSet = field(repr=False)

    def to_bytes(self) -> bytes:
        return sig_encode(self)

    @classmethod
    def from_bytes(cls, data: bytes, params: ParamSet) -> "Signature":
        return sig_decode(data, params)

    @property
    def hint_weight(self) -> int:
        return int(np.count_nonzero(self.h))


def pk_encode(pk: PublicKey) -> bytes:
    return pk.rho + bit_pack(pk.t1, 10)


def pk_decode(data: bytes, params: ParamSet) -> PublicKey:
    expected = 32 + 320 * params.k
    if len(data) != expected:
        raise DecodeError("public key", f"expected {expected} bytes, got {len(data)}")
    t1 = bit_unpack(data[32:], params.k * N, 10).reshape(params.k, N)
    return PublicKey(rho=bytes(data[:32]), t1=t1, params=params)


def sk_encode(sk: SecretKey) -> bytes:
    params = sk.params
    half = 1 << (params.d - 1)
    return (
        sk.rho
        + sk.key
        + sk.tr
        + bit_pack(params.eta - centered(sk.s1), params.eta_bits)
        + bit_pack(params.eta - centered(sk.s2), params.eta_bits)
        + bit_pack(half - centered(sk.t0), params.d)
    )


def sk_decode(data: bytes, params: ParamSet) -> SecretKey:
    half = 1 << (params.d - 1)
    s_len = 32 * params.eta_bits
    expected = 128 + (params.l + params.k) * s_len + params.k * 32 * params.d
    if len(data) != expected:
        raise DecodeError("secret key", f"expected {expected} bytes, got {len(data)}")
    offset = 128
    s1 = params.eta - bit_unpack(data[offset:], params.l * N, params.eta_bits)
    offset += params.l * s_len
    s2 = params.eta - bit_unpack(data[offset:], params.k * N, params.eta_bits)
    offset += params.k * s_len
    t0 = half - bit_unpack(data[offset:], params.k * N, params.d)
    return SecretKey(
        rho=bytes(data[:32]),
        key=bytes(data[32:64]),
        tr=bytes(data[64:128]),
        s1=s1.reshape(params.l, N),
        s2=s2.reshape(params.k, N),
        t0=t0.reshape(params.k, N),
        params=params,
    )


def hint_encode(h: np.ndarray, params: ParamSet) -> bytes:
    if int(np.count_nonzero(h)) > params.omega:
        raise ValueError(f"Hint weight above omega={params.omega}")
    out = bytearray(params.omega + params.k)
    index = 0
    for i in range(params.k):
        for j in np.flatnonzero(h[i]):
            out[index] = int(j)
            index += 1
        out[params.omega + i] = index
    return bytes(out)


def hint_decode(data: bytes, params: ParamSet) -> np.ndarray:
    omega = params.omega
    h = np.zeros((params.k, N), dtype=np.uint8)
    index = 0
    for i in range(params.k):
        end = data[omega + i]
        if end < index or end > omega:
            raise DecodeError("hint", f"count byte {end} out of order")
        first = index
        while index < end:
            if index > first and data[index - 1] >= data[index]:
                raise DecodeError("hint", "positions are not strictly increasing")
            h[i, data[index]] = 1
            index += 1
    if any(data[index:omega]):
        raise DecodeError("hint", "nonzero padding after the last position")
    return h


def sig_encode(sig: Signature) -> bytes:
    params = sig.params
    return (
        sig.ctilde
        + bit_pack(params.gamma1 - centered(sig.z), params.gamma1_bits)
        + hint_encode(sig.h, params)
    )


def sig_decode(data: bytes, params: ParamSet) -> Signature:
    z_len = params.l * 32 * params.gamma1_bits
    expected = params.ctilde_bytes + z_len + params.omega + params.k
    if len(data) != expected:
        raise DecodeError("signature", f"expected {expected} bytes, got {len(data)}")
    offset = params.ctilde_bytes
    z = params.gamma1 - bit_unpack(
        data[offset : offset + z_len], params.l * N, params.gamma1_bits
    )
    h = hint_decode(data[offset + z_len :], params)
    return Signature(
        ctilde=bytes(data[:offset]),
        z=z.reshape(params.l, N),
        h=h,
        params=params,
    )


def w1_encode(w1: np.ndarray, params: ParamSet) -> bytes:
    return bit_pack(w1, params.w1_bits)


def _formatted_message(msg: bytes, ctx: bytes) -> bytes:
    if len(ctx) > 255:
        raise ValueError(f"Context string longer than 255 bytes: {len(ctx)}")
    return b"\x00" + bytes([len(ctx)]) + ctx + msg


def message_representative(pk: PublicKey, msg: bytes, ctx: bytes = b"") -> bytes:
    """mu = H(H(pk, 64) || M', 64)"""
    return _shake256(pk.tr + _formatted_message(msg, ctx), 64)


def challenge_hash(
    pk: PublicKey, msg: bytes, w1: np.ndarray, ctx: bytes = b""
) -> bytes:
    """Two-step challenge seed c~ = H(mu || w1Encode(w1), lambda/4)"""
    params = pk.params
    mu = message_representative(pk, msg, ctx)
    return _shake256(mu + w1_encode(w1, params), params.ctilde_bytes)


def keygen(seed: bytes, params: Union[ParamSet, str] = "65") -> Tuple[PublicKey, SecretKey]:
    params = get_params(params)
    if len(seed) != 32:
        raise ValueError(f"seed must be 32 bytes, got {len(seed)}")

    expanded = _shake256(seed + bytes([params.k, params.l]), 128)
    rho, rho_prime, key = expanded[:32], expanded[32:96], expanded[96:]

    a_hat = expand_a(rho, params)
    s1, s2 = expand_s(rho_prime, params)
    t = (mat_vec(a_hat, s1) + s2) % Q
    t1, t0 = power2round(t, params.d)

    pk = PublicKey(rho=rho, t1=t1, params=params)
    sk = SecretKey(rho=rho, key=key, tr=pk.tr, s1=s1, s2=s2, t0=t0, params=params)
    return pk, sk


def sign_single(
    sk: SecretKey,
    msg: bytes,
    rnd: Optional[bytes] = None,
    ctx: bytes = b"",
    max_attempts: int = 1000,
) -> Signature:
    """Single-party reference signer with the full rejection loop"""
    params = sk.params
    a_hat = expand_a(sk.rho, params)
    mu = _shake256(sk.tr + _formatted_message(msg, ctx), 64)
    rho_pp = _shake256(sk.key + (rnd or bytes(32)) + mu, 64)

    kappa = 0
    for attempt in range(max_attempts):
        y = expand_mask(rho_pp, kappa, params)
        kappa += params.l

        w = mat_vec(a_hat, y)
        w1 = high_bits(w, params)
        ctilde = _shake256(mu + w1_encode(w1, params), params.ctilde_bytes)
        c = sample_in_ball(ctilde, params)

        z = centered(y + poly_vec_mul(c, sk.s1))
        r0 = low_bits(w - poly_vec_mul(c, sk.s2), params)
        if inf_norm(z) >= params.gamma1 - params.beta:
            continue
        if int(np.abs(r0).max()) >= params.gamma2 - params.beta:
            continue

        ct0 = poly_vec_mul(c, sk.t0)
        h = make_hint(
            -ct0, w - poly_vec_mul(c, sk.s2) + ct0, params
        )
        if inf_norm(ct0) >= params.gamma2 or int(h.sum()) > params.omega:
            continue

        logger.debug(f"Reference signature after {attempt + 1} attempts")
        return Signature(ctilde=ctilde, z=z, h=h, params=params)

    raise RuntimeError(f"Signing failed after {max_attempts} attempts")


def verify(
    pk: PublicKey, msg: bytes, sig: Union[Signature, bytes], ctx: bytes = b""
) -> bool:
    params = pk.params
    if not isinstance(sig, Signature):
        try:
            sig = sig_decode(sig, params)
        except DecodeError as exception:
            logger.info(f"Rejecting signature: {exception}")
            return False

    if sig.hint_weight > params.omega:
        return False
    if inf_norm(sig.z) >= params.gamma1 - params.beta:
        return False

    a_hat = expand_a(pk.rho, params)
    c = sample_in_ball(sig.ctilde, params)
    w_approx = mat_vec(a_hat, sig.z) - poly_vec_mul(c, pk.t1 << params.d)
    w1 = use_hint(sig.h, w_approx, params)

    expected = challenge_hash(pk, msg, w1, ctx)
    return hmac.compare_digest(expected, sig.ctilde)
