from dataclasses import dataclass
from enum import Enum
from typing import Dict, Union


class Level(str, Enum):
    MLDSA44 = "ML-DSA-44"
    MLDSA65 = "ML-DSA-65"
    MLDSA87 = "ML-DSA-87"


Q = 8380417
N = 256
D = 13


@dataclass(frozen=True)
class ParamSet:
    """One ML-DSA parameter set

    ``alpha`` is the decomposition stripe width 2·γ2 and ``stripes`` the number
    of stripes m = (q − 1)/α, which is 16 for ML-DSA-65/87 and 44 for ML-DSA-44.
    """

    name: Level
    k: int
    l: int
    eta: int
    tau: int
    gamma1: int
    gamma2: int
    omega: int
    lam: int
    n: int = N
    q: int = Q
    d: int = D

    @property
    def beta(self) -> int:
        return self.tau * self.eta

    @property
    def alpha(self) -> int:
        return 2 * self.gamma2

    @property
    def stripes(self) -> int:
        return (self.q - 1) // self.alpha

    @property
    def ctilde_bytes(self) -> int:
        return self.lam // 4

    @property
    def w1_bits(self) -> int:
        return (self.stripes - 1).bit_length()

    @property
    def gamma1_bits(self) -> int:
        return (self.gamma1 - 1).bit_length() + 1

    @property
    def eta_bits(self) -> int:
        return (2 * self.eta).bit_length()

    @property
    def nk(self) -> int:
        return self.n * self.k

    @property
    def nl(self) -> int:
        return self.n * self.l

    @property
    def short_name(self) -> str:
        return self.name.value.rsplit("-", 1)[1]

    def __str__(self) -> str:
        return self.name.value


MLDSA44 = ParamSet(
    name=Level.MLDSA44,
    k=4,
    l=4,
    eta=2,
    tau=39,
    gamma1=1 << 17,
    gamma2=(Q - 1) // 88,
    omega=80,
    lam=128,
)
MLDSA65 = ParamSet(
    name=Level.MLDSA65,
    k=6,
    l=5,
    eta=4,
    tau=49,
    gamma1=1 << 19,
    gamma2=(Q - 1) // 32,
    omega=55,
    lam=192,
)
MLDSA87 = ParamSet(
    name=Level.MLDSA87,
    k=8,
    l=7,
    eta=2,
    tau=60,
    gamma1=1 << 19,
    gamma2=(Q - 1) // 32,
    omega=75,
    lam=256,
)

LEVELS: Dict[str, ParamSet] = {
    "44": MLDSA44,
    "65": MLDSA65,
    "87": MLDSA87,
}


def get_params(level: Union[str, int, ParamSet]) -> ParamSet:
    """Look up a parameter set by short name ("65"), full name or instance"""
    if isinstance(level, ParamSet):
        return level

    key = str(level)
    if key in LEVELS:
        return LEVELS[key]

    for params in LEVELS.values():
        if params.name.value == key:
            return params

    raise ValueError(f"Unknown ML-DSA level: {level}")
