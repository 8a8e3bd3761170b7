"""Shared carry comparison: (c, δ) from boolean-shared ρ values

Every party holds XOR shares of the 19-bit masks ρ_j of all signers. A
carry-save compressor tree reduces them to a pair (S, C) with S + C = Σρ and
a generate vector g = S ∧ C; a prefix comparison then decides Σρ > k for the
three public thresholds (t, k0, k1).

The circuit is a sequence of one-round polynomial layers. A layer opens a set
of masked linear combinations d_v = x_v ⊕ r_v of the shared wires, then every
party computes its share of each output polynomial from the public d values
and its shares of the subset products r_I = ∏_{v∈I} r_v. Those products are
derived from pairwise session keys, so they cost no communication:

* every party i other than the lowest id j0 takes all of its shares from
  PRF(K_{i,j0}, "and" ∥ layer);
* j0 takes its factor shares from PRF(K_{j0,j1}, "and" ∥ layer ∥ "swap"),
  with j1 the second lowest id, and its product shares are the corrections
  that make every product reconstruct.

The last prefix round publishes the group generate/propagate bits and every
party evaluates the final cascade in the clear.

For a signing set of two parties the default is the two-party comparison
functionality (:class:`DistributedComparison`), which needs only two
one-bit-per-coefficient broadcasts after Round 1.
"""
import logging
from dataclasses import dataclass, field
from functools import lru_cache
from itertools import combinations
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from . import prf
from .cef import carry_bit_ref, fips_delta, fips_select, fips_thresholds
from .params import ParamSet

logger = logging.getLogger(__name__)

WIDTH = 19
THRESHOLDS = 3
PREFIX_GROUPS = ((0, 4), (5, 9), (10, 14), (15, 18))

VarKey = Tuple[str, int]
PublicRef = Tuple[str, int]


class TripleExhausted(Exception):
    def __init__(self, party: int, layer: str) -> None:
        super().__init__(f"Party {party} has no unused randomness for layer {layer}")


class WrongPartyCount(Exception):
    def __init__(self, expected: str, got: int) -> None:
        super().__init__(f"Expected {expected} parties, got {got}")


def round_count(parties: int) -> int:
    """max(3, ⌈log2(N/2)⌉ + 2)"""
    if parties < 2:
        raise ValueError(f"Need at least 2 parties, got {parties}")
    return max(3, (parties - 1).bit_length() + 1)


# Symbolic polynomials over GF(2)


class Anf:
    """Algebraic normal form: XOR of monomials, each a set of variables"""

    __slots__ = ("monomials",)

    def __init__(self, monomials=()) -> None:
        self.monomials = frozenset(monomials)

    @classmethod
    def one(cls) -> "Anf":
        return cls((frozenset(),))

    @classmethod
    def var(cls, key: VarKey) -> "Anf":
        return cls((frozenset((key,)),))

    def __xor__(self, other: "Anf") -> "Anf":
        return Anf(self.monomials ^ other.monomials)

    def __and__(self, other: "Anf") -> "Anf":
        out = set()
        for a in self.monomials:
            for b in other.monomials:
                out ^= {a | b}
        return Anf(out)

    def __bool__(self) -> bool:
        return bool(self.monomials)

    @property
    def degree(self) -> int:
        return max((len(m) for m in self.monomials), default=0)

    @property
    def variables(self) -> frozenset:
        return frozenset().union(*self.monomials) if self.monomials else frozenset()


@dataclass(frozen=True)
class LinearForm:
    """XOR of wire rows, each optionally ANDed with a public bit row

    ``const`` is a public bit row added by the correcting party only.
    """

    terms: Tuple[Tuple[str, int, Optional[PublicRef]], ...] = ()
    const: Optional[PublicRef] = None


def lin(*terms, const: Optional[PublicRef] = None) -> LinearForm:
    kept = []
    for term in terms:
        wire, row = term[0], term[1]
        coef = term[2] if len(term) > 2 else None
        if 0 <= row < WIDTH and (coef is None or 0 <= coef[1] < WIDTH):
            kept.append((wire, row, coef))
    if const is not None and not 0 <= const[1] < WIDTH:
        const = None
    return LinearForm(terms=tuple(kept), const=const)


ZERO_FORM = LinearForm()


@dataclass
class RowPlan:
    linear: LinearForm
    # subset index (-1 for the empty set) -> remainders whose d-products XOR into coef_I
    coefficients: Dict[int, List[Tuple[int, ...]]]


@dataclass
class Layer:
    name: str
    variables: List[VarKey]
    definitions: Dict[VarKey, LinearForm]
    subsets: List[Tuple[int, ...]]
    outputs: Dict[str, List[RowPlan]]
    operands_after: Optional[List[str]] = None

    @property
    def singles(self) -> int:
        return sum(1 for subset in self.subsets if len(subset) == 1)

    def degree_counts(self) -> Dict[int, int]:
        """Number of correlated products per degree"""
        counts: Dict[int, int] = {}
        for subset in self.subsets:
            counts[len(subset)] = counts.get(len(subset), 0) + 1
        return counts


class LayerBuilder:
    def __init__(self, name: str) -> None:
        self.name = name
        self.__definitions: Dict[VarKey, LinearForm] = {}
        self.__outputs: Dict[str, List[Tuple[LinearForm, Anf]]] = {}

    def define(self, name: str, rows, form: Callable[[int], LinearForm]) -> None:
        for row in rows:
            self.__definitions[(name, row)] = form(row)

    def var(self, name: str, row: int) -> Anf:
        key = (name, row)
        return Anf.var(key) if key in self.__definitions else Anf()

    def output(self, wire: str, rows: List[Tuple[LinearForm, Anf]]) -> None:
        self.__outputs[wire] = rows

    def build(self, operands_after: Optional[List[str]] = None) -> Layer:
        used = set()
        for rows in self.__outputs.values():
            for _, anf in rows:
                used |= anf.variables
        variables = sorted(used)
        index = {key: i for i, key in enumerate(variables)}

        subsets = set()
        for rows in self.__outputs.values():
            for _, anf in rows:
                for monomial in anf.monomials:
                    members = sorted(index[key] for key in monomial)
                    for size in range(1, len(members) + 1):
                        subsets.update(combinations(members, size))
        subsets = sorted(subsets, key=lambda s: (len(s), s))
        subset_index = {subset: i for i, subset in enumerate(subsets)}

        outputs = {}
        for wire, rows in self.__outputs.items():
            plans = []
            for linear, anf in rows:
                coefficients: Dict[int, set] = {}
                for monomial in anf.monomials:
                    members = sorted(index[key] for key in monomial)
                    for size in range(len(members) + 1):
                        for subset in combinations(members, size):
                            remainder = tuple(m for m in members if m not in subset)
                            slot = subset_index[subset] if subset else -1
                            coefficients.setdefault(slot, set()).symmetric_difference_update(
                                {remainder}
                            )
                plans.append(
                    RowPlan(
                        linear=linear,
                        coefficients={
                            slot: sorted(remainders)
                            for slot, remainders in coefficients.items()
                            if remainders
                        },
                    )
                )
            outputs[wire] = plans

        return Layer(
            name=self.name,
            variables=variables,
            definitions={key: self.__definitions[key] for key in variables},
            subsets=subsets,
            outputs=outputs,
            operands_after=operands_after,
        )


# Circuit construction


def _rows(n: int = WIDTH) -> range:
    return range(n)


def _compress3(
    builder: LayerBuilder, tag: str, x: str, y: str, z: str, out: Tuple[str, str], final: bool
) -> Optional[List[Tuple[LinearForm, Anf]]]:
    body = range(WIDTH - 1)
    builder.define(f"{tag}.A", body, lambda b: lin((x, b), (z, b)))
    builder.define(f"{tag}.B", body, lambda b: lin((y, b), (z, b)))
    if final:
        builder.define(f"{tag}.s", body, lambda b: lin((x, b), (y, b), (z, b)))

    A = lambda j: builder.var(f"{tag}.A", j)  # noqa: E731
    B = lambda j: builder.var(f"{tag}.B", j)  # noqa: E731
    s = lambda j: builder.var(f"{tag}.s", j)  # noqa: E731

    builder.output(out[0], [(lin((x, b), (y, b), (z, b)), Anf()) for b in _rows()])

    carries = [(ZERO_FORM, Anf())]
    for b in range(1, WIDTH):
        if final:
            carries.append((ZERO_FORM, (A(b - 1) & B(b - 1)) ^ s(b - 1) ^ A(b - 1) ^ B(b - 1)))
        else:
            carries.append((lin((z, b - 1)), A(b - 1) & B(b - 1)))
    builder.output(out[1], carries)

    if not final:
        return None
    return [(ZERO_FORM, s(b) & carries[b][1]) if 0 < b else (ZERO_FORM, Anf()) for b in _rows()]


def _compress4(
    builder: LayerBuilder,
    tag: str,
    x: Sequence[str],
    out: Tuple[str, str],
    final: bool,
) -> Optional[List[Tuple[LinearForm, Anf]]]:
    x1, x2, x3, x4 = x
    body = range(WIDTH - 1)
    builder.define(f"{tag}.A", body, lambda b: lin((x1, b), (x3, b)))
    builder.define(f"{tag}.B", body, lambda b: lin((x2, b), (x3, b)))
    builder.define(f"{tag}.s", body, lambda b: lin((x1, b), (x2, b), (x3, b)))
    builder.define(f"{tag}.e", body, lambda b: lin((x4, b)))

    A = lambda j: builder.var(f"{tag}.A", j)  # noqa: E731
    B = lambda j: builder.var(f"{tag}.B", j)  # noqa: E731
    s = lambda j: builder.var(f"{tag}.s", j)  # noqa: E731
    e = lambda j: builder.var(f"{tag}.e", j)  # noqa: E731

    def inner_carry(j: int) -> Anf:
        # maj(x1, x2, x3) at row j
        return (A(j) & B(j)) ^ s(j) ^ A(j) ^ B(j)

    sums = [
        (lin((x1, b), (x2, b), (x3, b), (x4, b)), inner_carry(b - 1)) for b in _rows()
    ]
    carries = [(ZERO_FORM, Anf())]
    for b in range(1, WIDTH):
        carries.append(
            (
                ZERO_FORM,
                (s(b - 1) & e(b - 1)) ^ ((s(b - 1) ^ e(b - 1)) & inner_carry(b - 2)),
            )
        )
    builder.output(out[0], sums)
    builder.output(out[1], carries)

    if not final:
        return None
    generate = [(ZERO_FORM, Anf())]
    for b in range(1, WIDTH):
        total = s(b) ^ e(b) ^ inner_carry(b - 1)
        generate.append((ZERO_FORM, total & carries[b][1]))
    return generate


def _generate_only(builder: LayerBuilder, x: str, y: str) -> List[Tuple[LinearForm, Anf]]:
    body = range(WIDTH - 1)
    builder.define("x", body, lambda b: lin((x, b)))
    builder.define("y", body, lambda b: lin((y, b)))
    builder.output("S", [(lin((x, b)), Anf()) for b in _rows()])
    builder.output("C", [(lin((y, b)), Anf()) for b in _rows()])
    return [(ZERO_FORM, builder.var("x", b) & builder.var("y", b)) for b in _rows()]


def _prefix_layer() -> Layer:
    builder = LayerBuilder("prefix")
    for m in range(THRESHOLDS):
        key = f"K{m}"
        builder.define(f"u{m}", _rows(), lambda b: lin(("S", b), ("C", b), const=(key, b)))
        builder.define(
            f"v{m}",
            range(1, WIDTH),
            lambda b: lin(
                ("g", b - 1), ("S", b - 1, (key, b - 1)), ("C", b - 1, (key, b - 1))
            ),
        )
        builder.define(
            f"P{m}",
            range(1, WIDTH),
            lambda b: lin(
                ("S", b),
                ("C", b),
                ("g", b - 1),
                ("S", b - 1, (key, b - 1)),
                ("C", b - 1, (key, b - 1)),
                const=(key, b),
            ),
        )

        def propagate(b: int) -> Anf:
            return builder.var(f"P{m}", b) if b else builder.var(f"u{m}", 0)

        def generate(b: int) -> Anf:
            return builder.var(f"u{m}", b) & builder.var(f"v{m}", b)

        group_generate = []
        group_propagate = []
        for lo, hi in PREFIX_GROUPS:
            gg = Anf()
            for b in range(lo, hi + 1):
                term = generate(b)
                for later in range(b + 1, hi + 1):
                    term = term & propagate(later)
                gg = gg ^ term
            group_generate.append((ZERO_FORM, gg))

            pp = Anf()
            if lo > 0:
                pp = Anf.one()
                for b in range(lo, hi + 1):
                    pp = pp & propagate(b)
            group_propagate.append((ZERO_FORM, pp))

        top = WIDTH - 1
        builder.output(f"GG{m}", group_generate)
        builder.output(f"PP{m}", group_propagate)
        builder.output(
            f"V{m}", [(lin(("S", top, (key, top)), ("C", top, (key, top))), Anf())]
        )
    return builder.build()


@dataclass
class Circuit:
    parties: Tuple[int, ...]
    layers: List[Layer]

    @property
    def leader(self) -> int:
        return self.parties[0]

    @property
    def partner(self) -> int:
        return self.parties[1]

    @property
    def rounds(self) -> int:
        return len(self.layers) + 1

    @property
    def csa_levels(self) -> int:
        return sum(1 for layer in self.layers if layer.name.startswith("csa"))

    def layer(self, name: str) -> Layer:
        for layer in self.layers:
            if layer.name == name:
                return layer
        raise KeyError(name)


def operand_wire(party: int) -> str:
    return f"x{party}"


def build_circuit(signing_set: Sequence[int]) -> Circuit:
    return _build_circuit(tuple(sorted(signing_set)))


@lru_cache(maxsize=32)
def _build_circuit(parties: Tuple[int, ...]) -> Circuit:
    if len(parties) < 2:
        raise WrongPartyCount("at least 2", len(parties))

    layers = []
    operands = [operand_wire(j) for j in parties]
    if len(operands) == 2:
        builder = LayerBuilder("generate")
        builder.output("g", _generate_only(builder, *operands))
        layers.append(builder.build(operands_after=["S", "C"]))

    level = 0
    while len(operands) > 2:
        level += 1
        builder = LayerBuilder(f"csa{level}")
        final = len(operands) <= 4
        after: List[str] = []
        position = 0
        group = 0
        while position < len(operands):
            left = len(operands) - position
            if left >= 4:
                members = operands[position : position + 4]
                out = ("S", "C") if final else (f"l{level}.{group}.S", f"l{level}.{group}.C")
                generate = _compress4(builder, f"q{group}", members, out, final)
                position += 4
            elif left == 3:
                members = operands[position : position + 3]
                out = ("S", "C") if final else (f"l{level}.{group}.S", f"l{level}.{group}.C")
                generate = _compress3(builder, f"t{group}", *members, out, final)
                position += 3
            else:
                after.extend(operands[position:])
                break
            after.extend(out)
            if generate is not None:
                builder.output("g", generate)
            group += 1
        operands = after
        layers.append(builder.build(operands_after=list(operands)))

    layers.append(_prefix_layer())
    return Circuit(parties=parties, layers=layers)


# Correlated randomness


@dataclass
class TripleStore:
    party: int
    shares: Dict[str, np.ndarray]
    consumed: set = field(default_factory=set)

    def take(self, layer: str) -> np.ndarray:
        if layer not in self.shares or layer in self.consumed:
            raise TripleExhausted(self.party, layer)
        self.consumed.add(layer)
        return self.shares[layer]

    def peek(self, layer: str) -> np.ndarray:
        if layer not in self.shares:
            raise TripleExhausted(self.party, layer)
        return self.shares[layer]


def _layer_stream(key: bytes, layer: Layer, count: int, batch: int, swap: bool) -> np.ndarray:
    label = prf.AND + layer.name.encode() + (b"swap" if swap else b"")
    return prf_bits_rows(key, label, count, batch)


def prf_bits_rows(key: bytes, label: bytes, rows: int, batch: int) -> np.ndarray:
    return prf.prf_bits(key, label, rows * batch).reshape(rows, batch)


def _subset_products(singles: np.ndarray, subsets: Sequence[Tuple[int, ...]]) -> np.ndarray:
    products = np.empty((len(subsets), singles.shape[1]), dtype=np.uint8)
    for index, subset in enumerate(subsets):
        value = singles[subset[0]].copy()
        for member in subset[1:]:
            value &= singles[member]
        products[index] = value
    return products


def derive_layer(
    party: int,
    circuit: Circuit,
    layer: Layer,
    session_keys: Mapping[Tuple[int, int], bytes],
    batch: int,
) -> np.ndarray:
    """This party's shares of every subset product r_I, shape (subsets, batch)"""
    leader = circuit.leader
    count = len(layer.subsets)
    if party != leader:
        return _layer_stream(session_keys[prf.pair(party, leader)], layer, count, batch, False)

    singles = layer.singles
    own_singles = _layer_stream(
        session_keys[prf.pair(leader, circuit.partner)], layer, singles, batch, True
    )
    others = np.zeros((count, batch), dtype=np.uint8)
    factors = own_singles.copy()
    for other in circuit.parties[1:]:
        stream = _layer_stream(session_keys[prf.pair(other, leader)], layer, count, batch, False)
        others ^= stream
        factors ^= stream[:singles]

    shares = np.empty((count, batch), dtype=np.uint8)
    shares[:singles] = own_singles
    if count > singles:
        shares[singles:] = _subset_products(factors, layer.subsets[singles:]) ^ others[singles:]
    return shares


def derive_triples(
    party: int,
    session_keys: Mapping[Tuple[int, int], bytes],
    circuit: Circuit,
    batch: int,
) -> TripleStore:
    """All correlated randomness one party needs for one session"""
    return TripleStore(
        party=party,
        shares={
            layer.name: derive_layer(party, circuit, layer, session_keys, batch)
            for layer in circuit.layers
        },
    )


def triple_views(
    stores: Mapping[int, TripleStore], circuit: Circuit, layer_name: str, degree: int
) -> List[Tuple[List[np.ndarray], np.ndarray]]:
    """Reconstructed (factors, product) pairs of one degree, for checking"""
    layer = circuit.layer(layer_name)
    total = None
    for store in stores.values():
        shares = store.peek(layer_name)
        total = shares.copy() if total is None else total ^ shares
    views = []
    for index, subset in enumerate(layer.subsets):
        if len(subset) == degree:
            views.append(([total[m] for m in subset], total[index]))
    return views


# Layer evaluation


def bits_of(values: np.ndarray, width: int = WIDTH) -> np.ndarray:
    values = np.asarray(values, dtype=np.int64).reshape(-1)
    return ((values[None, :] >> np.arange(width, dtype=np.int64)[:, None]) & 1).astype(
        np.uint8
    )


def value_of(bits: np.ndarray) -> np.ndarray:
    weights = np.int64(1) << np.arange(bits.shape[0], dtype=np.int64)
    return (bits.astype(np.int64) * weights[:, None]).sum(axis=0)


def pack_bits(bits: np.ndarray) -> bytes:
    return np.packbits(bits.reshape(-1), bitorder="little").tobytes()


def unpack_bits(data: bytes, rows: int, batch: int) -> np.ndarray:
    if len(data) != (rows * batch + 7) // 8:
        raise ValueError(f"Expected {(rows * batch + 7) // 8} bytes, got {len(data)}")
    bits = np.unpackbits(np.frombuffer(data, dtype=np.uint8), bitorder="little")
    return bits[: rows * batch].reshape(rows, batch)


def _linear(
    form: LinearForm,
    wires: Mapping[str, np.ndarray],
    publics: Mapping[str, np.ndarray],
    add_const: bool,
    batch: int,
) -> np.ndarray:
    out = np.zeros(batch, dtype=np.uint8)
    for wire, row, coef in form.terms:
        bits = wires[wire][row]
        if coef is not None:
            bits = bits & publics[coef[0]][coef[1]]
        out ^= bits
    if add_const and form.const is not None:
        out ^= publics[form.const[0]][form.const[1]]
    return out


def layer_openings(
    layer: Layer,
    is_leader: bool,
    wires: Mapping[str, np.ndarray],
    publics: Mapping[str, np.ndarray],
    randomness: np.ndarray,
    batch: int,
) -> np.ndarray:
    """This party's shares of d_v = x_v ⊕ r_v"""
    opened = np.empty((len(layer.variables), batch), dtype=np.uint8)
    for index, key in enumerate(layer.variables):
        opened[index] = (
            _linear(layer.definitions[key], wires, publics, is_leader, batch)
            ^ randomness[index]
        )
    return opened


def layer_outputs(
    layer: Layer,
    is_leader: bool,
    wires: Mapping[str, np.ndarray],
    publics: Mapping[str, np.ndarray],
    randomness: np.ndarray,
    opened: np.ndarray,
    batch: int,
) -> Dict[str, np.ndarray]:
    ones = np.ones(batch, dtype=np.uint8)
    products: Dict[Tuple[int, ...], np.ndarray] = {(): ones}

    def product(remainder: Tuple[int, ...]) -> np.ndarray:
        if remainder not in products:
            products[remainder] = product(remainder[:-1]) & opened[remainder[-1]]
        return products[remainder]

    outputs = {}
    for wire, plans in layer.outputs.items():
        rows = np.zeros((len(plans), batch), dtype=np.uint8)
        for row, plan in enumerate(plans):
            value = _linear(plan.linear, wires, publics, is_leader, batch)
            for slot, remainders in plan.coefficients.items():
                coefficient = np.zeros(batch, dtype=np.uint8)
                for remainder in remainders:
                    coefficient ^= product(remainder)
                if slot < 0:
                    if is_leader:
                        value ^= coefficient
                else:
                    value ^= coefficient & randomness[slot]
            rows[row] = value
        outputs[wire] = rows
    return outputs


def threshold_publics(t: np.ndarray, params: ParamSet) -> Dict[str, np.ndarray]:
    """Bit rows of K′ = 2^19 − 1 − k for k in (t, k0, k1)"""
    k0, k1 = fips_thresholds(t, params)
    publics = {}
    for m, k in enumerate((np.asarray(t, dtype=np.int64), k0, k1)):
        publics[f"K{m}"] = bits_of(((1 << WIDTH) - 1) - k.reshape(-1))
    return publics


def cascade(revealed: Mapping[str, np.ndarray], m: int) -> np.ndarray:
    """Σρ > k_m from the published group bits"""
    gg = revealed[f"GG{m}"]
    pp = revealed[f"PP{m}"]
    carry = gg[0]
    for group in (1, 2, 3):
        carry = gg[group] ^ (pp[group] & carry)
    return revealed[f"V{m}"][0] ^ carry


REVEAL_ROWS = (
    (lambda m: f"GG{m}", (0, 1, 2, 3)),
    (lambda m: f"PP{m}", (1, 2, 3)),
    (lambda m: f"V{m}", (0,)),
)


def reveal_bits_per_coefficient() -> int:
    return THRESHOLDS * sum(len(rows) for _, rows in REVEAL_ROWS)


@dataclass
class CarryResult:
    c: np.ndarray
    delta: np.ndarray


class CarryBackend:
    """One party's view of a carry comparison, driven round by round

    Round 0 is merged with the masked broadcast; the threshold t must be set
    before :meth:`message` is called for round 1.
    """

    rounds: int
    result: Optional[CarryResult]

    def set_threshold(self, t: np.ndarray) -> None:
        raise NotImplementedError

    def message(self, round_index: int) -> bytes:
        raise NotImplementedError

    def absorb(self, round_index: int, messages: Mapping[int, bytes]) -> None:
        raise NotImplementedError

    def dealer_opening(self) -> Optional[bytes]:
        """Randomness a blame replay needs beyond the revealed session keys"""
        return None


def input_wires(
    party: int,
    parties: Sequence[int],
    rho: np.ndarray,
    session_keys: Mapping[Tuple[int, int], bytes],
    batch: int,
) -> Dict[str, np.ndarray]:
    """Boolean shares of every signer's ρ held by ``party``"""
    wires = {}
    own = bits_of(rho)
    for j in parties:
        if j == party:
            continue
        key = session_keys[prf.pair(party, j)]
        wires[operand_wire(j)] = prf_bits_rows(key, prf.RHO + j.to_bytes(2, "big"), WIDTH, batch)
        own ^= prf_bits_rows(key, prf.RHO + party.to_bytes(2, "big"), WIDTH, batch)
    wires[operand_wire(party)] = own
    return wires


class CarryCompareParty(CarryBackend):
    __party: int
    __circuit: Circuit
    __wires: Dict[str, np.ndarray]
    __publics: Dict[str, np.ndarray]
    __triples: TripleStore
    __randomness: Dict[str, np.ndarray]
    __t: Optional[np.ndarray]

    def __init__(
        self,
        party: int,
        circuit: Circuit,
        rho: np.ndarray,
        session_keys: Mapping[Tuple[int, int], bytes],
        params: ParamSet,
    ) -> None:
        self.__party = party
        self.__circuit = circuit
        self.__params = params
        self.batch = int(np.asarray(rho).size)
        self.__wires = input_wires(party, circuit.parties, rho, session_keys, self.batch)
        self.__triples = derive_triples(party, session_keys, circuit, self.batch)
        self.__publics = {}
        self.__randomness = {}
        self.__t = None
        self.rounds = circuit.rounds
        self.result = None

    @property
    def is_leader(self) -> bool:
        return self.__party == self.__circuit.leader

    @property
    def wires(self) -> Dict[str, np.ndarray]:
        return self.__wires

    def set_threshold(self, t: np.ndarray) -> None:
        self.__t = np.asarray(t, dtype=np.int64).reshape(-1)
        self.__publics.update(threshold_publics(self.__t, self.__params))

    def __layer_randomness(self, layer: Layer) -> np.ndarray:
        if layer.name not in self.__randomness:
            self.__randomness[layer.name] = self.__triples.take(layer.name)
        return self.__randomness[layer.name]

    def message(self, round_index: int) -> bytes:
        layers = self.__circuit.layers
        if round_index < len(layers):
            layer = layers[round_index]
            if layer.name == "prefix" and self.__t is None:
                raise RuntimeError("Threshold must be set before the prefix round")
            opened = layer_openings(
                layer,
                self.is_leader,
                self.__wires,
                self.__publics,
                self.__layer_randomness(layer),
                self.batch,
            )
            return pack_bits(opened)

        rows = [
            self.__wires[name(m)][row]
            for m in range(THRESHOLDS)
            for name, selected in REVEAL_ROWS
            for row in selected
        ]
        return pack_bits(np.stack(rows))

    def absorb(self, round_index: int, messages: Mapping[int, bytes]) -> None:
        layers = self.__circuit.layers
        if round_index < len(layers):
            layer = layers[round_index]
            opened = np.zeros((len(layer.variables), self.batch), dtype=np.uint8)
            for party in self.__circuit.parties:
                opened ^= unpack_bits(messages[party], len(layer.variables), self.batch)
            self.__wires.update(
                layer_outputs(
                    layer,
                    self.is_leader,
                    self.__wires,
                    self.__publics,
                    self.__layer_randomness(layer),
                    opened,
                    self.batch,
                )
            )
            return

        self.result = decode_reveal(
            messages, self.__circuit.parties, self.__t, self.__params
        )


def decode_reveal(
    messages: Mapping[int, bytes], parties: Sequence[int], t: np.ndarray, params: ParamSet
) -> CarryResult:
    """(c, δ) from the published group bits, computable by any observer"""
    t = np.asarray(t, dtype=np.int64).reshape(-1)
    batch = t.size
    rows = reveal_bits_per_coefficient()
    revealed_bits = np.zeros((rows, batch), dtype=np.uint8)
    for party in parties:
        revealed_bits ^= unpack_bits(messages[party], rows, batch)
    revealed: Dict[str, np.ndarray] = {}
    cursor = 0
    for m in range(THRESHOLDS):
        for name, selected in REVEAL_ROWS:
            wire = np.zeros((4, batch), dtype=np.uint8)
            for row in selected:
                wire[row] = revealed_bits[cursor]
                cursor += 1
            revealed[name(m)] = wire
    greater = [cascade(revealed, m) for m in range(THRESHOLDS)]
    c = greater[0].astype(np.int64)
    return CarryResult(c=c, delta=fips_select(c, greater[1], greater[2], t, params))


# Two-party comparison


class DistributedComparison:
    """Two-party comparison functionality for signing sets of size two

    Models the function-secret-sharing comparison as an ideal dealer: each
    party submits its ρ and receives XOR shares of c = [ρ1 + ρ2 > t], δ0 and
    δ1. The output masks come from a dealer seed neither party holds; the
    seed is opened only when a failed session is replayed for blame, at which
    point every ρ is revealed anyway.
    """

    def __init__(
        self,
        parties: Sequence[int],
        params: ParamSet,
        rng: Optional[np.random.Generator] = None,
        seed: Optional[bytes] = None,
    ) -> None:
        parties = tuple(sorted(parties))
        if len(parties) != 2:
            raise WrongPartyCount("exactly 2", len(parties))
        if seed is None:
            rng = rng if rng is not None else np.random.default_rng()
            seed = rng.bytes(prf.KEY_BYTES)
        self.parties = parties
        self.__seed = seed
        self.__params = params
        self.__rho: Dict[int, np.ndarray] = {}

    def submit(self, party: int, rho: np.ndarray) -> None:
        self.__rho[party] = np.asarray(rho, dtype=np.int64).reshape(-1)

    def opening(self) -> bytes:
        """Dealer seed, for the blame replay of a failed session"""
        return self.__seed

    def shares(self, party: int, t: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        t = np.asarray(t, dtype=np.int64).reshape(-1)
        total = self.__rho[self.parties[0]] + self.__rho[self.parties[1]]
        params = self.__params
        values = np.stack(
            (
                total > t,
                total <= t - params.gamma2 - 1,
                total <= t - params.gamma2 + params.alpha - 1,
            )
        ).astype(np.uint8)
        masks = prf_bits_rows(self.__seed, prf.CARRY, 3, t.size)
        return tuple(masks if party == self.parties[0] else masks ^ values)


def dcf_payload_bytes(nk: int) -> int:
    """Two broadcast bits per coefficient"""
    return 2 * nk // 8


class DcfParty(CarryBackend):
    def __init__(self, party: int, functionality: DistributedComparison, rho: np.ndarray) -> None:
        self.__party = party
        self.__functionality = functionality
        self.batch = int(np.asarray(rho).size)
        functionality.submit(party, rho)
        self.__shares = None
        self.__c = None
        self.rounds = 3
        self.result = None

    def set_threshold(self, t: np.ndarray) -> None:
        self.__shares = self.__functionality.shares(self.__party, t)

    def message(self, round_index: int) -> bytes:
        if round_index == 0:
            return b""
        if self.__shares is None:
            raise RuntimeError("Threshold must be set before comparison rounds")
        c_share, delta0, delta1 = self.__shares
        if round_index == 1:
            return pack_bits(c_share[None, :])
        return pack_bits(np.where(self.__c != 0, delta1, delta0)[None, :])

    def absorb(self, round_index: int, messages: Mapping[int, bytes]) -> None:
        if round_index == 0:
            return
        combined = combine_bit_shares(messages, self.__functionality.parties, self.batch)
        if round_index == 1:
            self.__c = combined
        else:
            self.result = CarryResult(c=self.__c.astype(np.int64), delta=combined.astype(np.int64))

    def dealer_opening(self) -> Optional[bytes]:
        return self.__functionality.opening()


def combine_bit_shares(
    messages: Mapping[int, bytes], parties: Sequence[int], batch: int
) -> np.ndarray:
    """XOR of one-bit-per-coefficient broadcasts"""
    combined = np.zeros(batch, dtype=np.uint8)
    for party in parties:
        combined ^= unpack_bits(messages[party], 1, batch)[0]
    return combined


class PlainComparison:
    """Comparison in the clear for statistics runs"""

    def __init__(self, params: ParamSet) -> None:
        self.__params = params
        self.__rho: Dict[int, np.ndarray] = {}

    def submit(self, party: int, rho: np.ndarray) -> None:
        self.__rho[party] = np.asarray(rho, dtype=np.int64).reshape(-1)

    def evaluate(self, t: np.ndarray) -> CarryResult:
        total = sum(self.__rho.values())
        c = carry_bit_ref(total, t)
        return CarryResult(c=c, delta=fips_delta(total, t, c, self.__params))


class PlainParty(CarryBackend):
    def __init__(
        self, party: int, functionality: PlainComparison, rho: np.ndarray, rounds: int
    ) -> None:
        functionality.submit(party, rho)
        self.__functionality = functionality
        self.__t = None
        self.rounds = rounds
        self.result = None

    def set_threshold(self, t: np.ndarray) -> None:
        self.__t = np.asarray(t, dtype=np.int64).reshape(-1)

    def message(self, round_index: int) -> bytes:
        return b""

    def absorb(self, round_index: int, messages: Mapping[int, bytes]) -> None:
        if round_index == self.rounds - 1:
            self.result = self.__functionality.evaluate(self.__t)


# Local all-party runners


def keys_for(
    party: int, session_keys: Mapping[Tuple[int, int], bytes]
) -> Dict[Tuple[int, int], bytes]:
    return {pair: key for pair, key in session_keys.items() if party in pair}


@dataclass
class CarrySaveState:
    parties: Tuple[int, ...]
    operands: List[str]
    shares: Dict[int, Dict[str, np.ndarray]]

    def value(self, wire: str) -> np.ndarray:
        bits = None
        for party in self.parties:
            share = self.shares[party][wire]
            bits = share.copy() if bits is None else bits ^ share
        return value_of(bits)

    def total(self) -> np.ndarray:
        return sum(self.value(wire) for wire in self.operands)


def initial_state(
    circuit: Circuit,
    rho: Mapping[int, np.ndarray],
    session_keys: Mapping[Tuple[int, int], bytes],
) -> CarrySaveState:
    batch = int(np.asarray(next(iter(rho.values()))).size)
    return CarrySaveState(
        parties=circuit.parties,
        operands=[operand_wire(j) for j in circuit.parties],
        shares={
            party: input_wires(
                party, circuit.parties, rho[party], keys_for(party, session_keys), batch
            )
            for party in circuit.parties
        },
    )


def csa_level(
    state: CarrySaveState,
    circuit: Circuit,
    stores: Mapping[int, TripleStore],
    level: int,
) -> CarrySaveState:
    """Run one compressor layer for all parties in memory"""
    layer = circuit.layer(f"csa{level}")
    batch = next(iter(state.shares.values()))[state.operands[0]].shape[1]
    randomness = {party: stores[party].take(layer.name) for party in state.parties}
    opened = np.zeros((len(layer.variables), batch), dtype=np.uint8)
    for party in state.parties:
        opened ^= layer_openings(
            layer, party == circuit.leader, state.shares[party], {}, randomness[party], batch
        )
    shares = {}
    for party in state.parties:
        wires = dict(state.shares[party])
        wires.update(
            layer_outputs(
                layer,
                party == circuit.leader,
                wires,
                {},
                randomness[party],
                opened,
                batch,
            )
        )
        shares[party] = wires
    return CarrySaveState(
        parties=state.parties, operands=list(layer.operands_after), shares=shares
    )


@dataclass
class CarryRun:
    result: CarryResult
    rounds: int
    messages: List[Dict[int, bytes]]

    def bytes_per_party(self, round_index: int) -> int:
        return max(len(m) for m in self.messages[round_index].values())


def drive(
    backends: Mapping[int, CarryBackend],
    t: np.ndarray,
    tamper: Optional[Callable[[int, int, bytes], bytes]] = None,
) -> CarryRun:
    """Lockstep exchange between in-memory parties"""
    rounds = next(iter(backends.values())).rounds
    transcript = []
    for round_index in range(rounds):
        if round_index == 1:
            for backend in backends.values():
                backend.set_threshold(t)
        messages = {}
        for party, backend in sorted(backends.items()):
            message = backend.message(round_index)
            if tamper is not None:
                message = tamper(round_index, party, message)
            messages[party] = message
        transcript.append(messages)
        for backend in backends.values():
            backend.absorb(round_index, messages)
    result = next(iter(backends.values())).result
    return CarryRun(result=result, rounds=rounds, messages=transcript)


def cscp(
    rho: Mapping[int, np.ndarray],
    t: np.ndarray,
    session_keys: Mapping[Tuple[int, int], bytes],
    params: ParamSet,
    tamper: Optional[Callable[[int, int, bytes], bytes]] = None,
) -> CarryRun:
    circuit = build_circuit(list(rho))
    backends = {
        party: CarryCompareParty(party, circuit, rho[party], keys_for(party, session_keys), params)
        for party in circuit.parties
    }
    return drive(backends, t, tamper)


def prefix_compare(
    state: CarrySaveState,
    circuit: Circuit,
    stores: Mapping[int, TripleStore],
    t: np.ndarray,
    params: ParamSet,
) -> CarryResult:
    """Both prefix rounds over a final (S, C, g) state, all parties in memory"""
    layer = circuit.layer("prefix")
    batch = np.asarray(t).size
    publics = threshold_publics(t, params)
    randomness = {party: stores[party].take(layer.name) for party in state.parties}
    opened = np.zeros((len(layer.variables), batch), dtype=np.uint8)
    for party in state.parties:
        opened ^= layer_openings(
            layer, party == circuit.leader, state.shares[party], publics, randomness[party], batch
        )
    revealed: Dict[str, np.ndarray] = {}
    for party in state.parties:
        outputs = layer_outputs(
            layer,
            party == circuit.leader,
            state.shares[party],
            publics,
            randomness[party],
            opened,
            batch,
        )
        for wire, rows in outputs.items():
            revealed[wire] = rows.copy() if wire not in revealed else revealed[wire] ^ rows
    greater = [cascade(revealed, m) for m in range(THRESHOLDS)]
    c = greater[0].astype(np.int64)
    return CarryResult(c=c, delta=fips_select(c, greater[1], greater[2], t, params))


def dcf_compare(
    rho: Mapping[int, np.ndarray],
    t: np.ndarray,
    params: ParamSet,
    rng: Optional[np.random.Generator] = None,
) -> CarryRun:
    functionality = DistributedComparison(list(rho), params, rng)
    backends = {
        party: DcfParty(party, functionality, rho[party]) for party in functionality.parties
    }
    return drive(backends, t)


def replay(
    backends: Mapping[int, CarryBackend],
    t: np.ndarray,
    recorded: Sequence[Mapping[int, bytes]],
) -> Optional[Tuple[int, int]]:
    """First (round, party) whose recorded message differs from an honest replay

    Honest parties absorb the recorded messages, so a deviation is found at
    the first round it appears in.
    """
    for round_index, messages in enumerate(recorded):
        if round_index == 1:
            for backend in backends.values():
                backend.set_threshold(t)
        for party, backend in sorted(backends.items()):
            if backend.message(round_index) != messages.get(party):
                logger.warning(f"Carry replay mismatch: party {party}, round {round_index}")
                return round_index, party
        for backend in backends.values():
            backend.absorb(round_index, messages)
    return None


# Backend selection

BACKENDS = ("cscp", "dcf", "plain")


def default_backend(signers: int) -> str:
    return "dcf" if signers == 2 else "cscp"


def backend_rounds(kind: str, signers: int) -> int:
    if kind == "cscp":
        return build_circuit(range(1, signers + 1)).rounds
    if kind == "dcf":
        return 3
    return round_count(signers)


def comparison_functionality(
    kind: str,
    parties: Sequence[int],
    params: ParamSet,
    rng: Optional[np.random.Generator] = None,
    dealer_seed: Optional[bytes] = None,
):
    """Shared ideal functionality of one session, None for the circuit

    ``dealer_seed`` rebuilds the functionality of a recorded session.
    """
    if kind not in BACKENDS:
        raise ValueError(f"Unknown carry backend: {kind}")
    if kind == "dcf":
        return DistributedComparison(parties, params, rng, dealer_seed)
    if kind == "plain":
        return PlainComparison(params)
    return None


def party_backend(
    kind: str,
    party: int,
    parties: Sequence[int],
    rho: np.ndarray,
    session_keys: Mapping[Tuple[int, int], bytes],
    params: ParamSet,
    functionality=None,
) -> CarryBackend:
    if kind == "cscp":
        return CarryCompareParty(
            party, build_circuit(parties), rho, keys_for(party, session_keys), params
        )
    if kind == "dcf":
        return DcfParty(party, functionality, rho)
    if kind == "plain":
        return PlainParty(party, functionality, rho, round_count(len(parties)))
    raise ValueError(f"Unknown carry backend: {kind}")
