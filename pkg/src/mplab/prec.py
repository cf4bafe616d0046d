"""Software emulation of reduced-precision floating-point formats.

The emulation is value-level: numbers are stored as binary64 and pushed
through ``round_value``/``round_array`` after every elementary operation,
so any format with at most 52 stored significand bits can be simulated
exactly inside ordinary double arithmetic. One rounding per operation,
no double rounding through intermediate formats.

Rounding modes: ``nearest-even``, ``toward-zero``, ``toward-plus``,
``toward-minus`` and ``stochastic`` (probability proportional to the
distance to the two neighboring representable values). Overflow behaves
like IEEE 754: round-to-nearest overflows to the signed infinity,
directed modes saturate on the side that rounds inward. With
``subnormals=False`` any result in the subnormal range is flushed to
(signed) zero after rounding.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from fractions import Fraction

import numpy as np

__all__ = [
    "Format",
    "FP16",
    "BF16",
    "FP32",
    "FP64",
    "FORMATS",
    "format_by_name",
    "make_rng",
    "round_value",
    "round_array",
    "rounded_op",
    "stochastic_expectation_probe",
]

ROUNDING_MODES = (
    "nearest-even",
    "toward-zero",
    "toward-plus",
    "toward-minus",
    "stochastic",
)


@dataclass(frozen=True)
class Format:
    """Descriptor of an emulated binary floating-point format.

    ``sig_bits`` counts stored significand bits, excluding the implicit
    leading bit, so IEEE binary16 is ``Format(5, 10)``.
    """

    exp_bits: int
    sig_bits: int
    subnormals: bool = True
    rounding: str = "nearest-even"

    def __post_init__(self):
        if not (2 <= self.exp_bits <= 11):
            raise ValueError(f"exp_bits must be in [2, 11], got {self.exp_bits}")
        if not (1 <= self.sig_bits <= 52):
            raise ValueError(f"sig_bits must be in [1, 52], got {self.sig_bits}")
        if self.exp_bits + self.sig_bits + 1 > 64:
            raise ValueError("exp_bits + sig_bits + 1 must not exceed 64")
        if self.rounding not in ROUNDING_MODES:
            raise ValueError(f"unknown rounding mode {self.rounding!r}")

    @property
    def bias(self) -> int:
        return 2 ** (self.exp_bits - 1) - 1

    @property
    def u(self) -> float:
        """Unit roundoff for round-to-nearest: 2^(-sig_bits-1)."""
        return 2.0 ** (-self.sig_bits - 1)

    @property
    def x_max(self) -> float:
        """Largest finite value: (2 - 2^-sig_bits) * 2^bias."""
        return (2.0 - 2.0 ** (-self.sig_bits)) * 2.0 ** self.bias

    @property
    def x_min(self) -> float:
        """Smallest positive normal value: 2^(1-bias)."""
        return 2.0 ** (1 - self.bias)

    @property
    def smallest_subnormal(self) -> float:
        return 2.0 ** (1 - self.bias - self.sig_bits)

    def with_rounding(self, rounding: str) -> "Format":
        return replace(self, rounding=rounding)

    def name(self) -> str:
        for label, fmt in FORMATS.items():
            if (fmt.exp_bits, fmt.sig_bits) == (self.exp_bits, self.sig_bits):
                return label
        return f"e{self.exp_bits}s{self.sig_bits}"

    def __str__(self) -> str:
        return self.name()


FP16 = Format(5, 10)
BF16 = Format(8, 7)
FP32 = Format(8, 23)
FP64 = Format(11, 52)

FORMATS = {"fp16": FP16, "bf16": BF16, "fp32": FP32, "fp64": FP64}


def format_by_name(name: str) -> Format:
    try:
        return FORMATS[name.lower()]
    except KeyError:
        raise ValueError(f"unknown format name {name!r}; expected one of {sorted(FORMATS)}") from None


Rng = np.random.Generator


def make_rng(seed: int) -> Rng:
    """Deterministic generator; identical seeds give identical streams."""
    return np.random.default_rng(seed)


def native_dtype(fmt: Format):
    """Numpy dtype whose hardware arithmetic matches one-rounding-per-op
    emulation of ``fmt``, or None.

    Valid for binary16/32/64 with round-to-nearest and subnormals: numpy
    computes float16/float32 elementary ops through a wider format, and
    double rounding through a format with p2 >= 2*p1 + 2 digits is exact
    for +,-,*,/,sqrt.
    """
    if fmt.rounding != "nearest-even" or not fmt.subnormals:
        return None
    key = (fmt.exp_bits, fmt.sig_bits)
    return {(5, 10): np.float16, (8, 23): np.float32, (11, 52): np.float64}.get(key)


def _is_identity(fmt: Format) -> bool:
    # Every binary64 value is representable, under any rounding mode.
    return fmt.exp_bits == 11 and fmt.sig_bits == 52 and fmt.subnormals


def round_array(x, fmt: Format, rng: Rng | None = None) -> np.ndarray:
    """Round each binary64 entry of ``x`` to ``fmt``.

    Returns float64 values that are exactly representable in ``fmt``.
    Overflow yields signed infinity (saturation for the inward directed
    modes), NaN and infinities propagate unchanged.
    """
    x = np.asarray(x, dtype=np.float64)
    stochastic = fmt.rounding == "stochastic"
    if stochastic and rng is None:
        raise ValueError("stochastic rounding requires an rng")
    if _is_identity(fmt):
        return x.copy()

    emin = 1 - fmt.bias
    sig = fmt.sig_bits
    finite = np.isfinite(x)
    xf = np.where(finite, x, 0.0)

    with np.errstate(over="ignore", invalid="ignore", under="ignore"):
        m, E = np.frexp(xf)            # xf = m * 2^E with m in [0.5, 1)
        e = E - 1                      # xf = f * 2^e with f in [1, 2)
        qe = np.where(e < emin, emin - sig, e - sig)
        z = np.ldexp(xf, -qe)          # exact: scaling by a power of two
        if fmt.rounding == "nearest-even":
            n = np.rint(z)
        elif fmt.rounding == "toward-zero":
            n = np.trunc(z)
        elif fmt.rounding == "toward-plus":
            n = np.ceil(z)
        elif fmt.rounding == "toward-minus":
            n = np.floor(z)
        else:
            lo = np.floor(z)
            frac = z - lo              # exact: both on the same grid
            n = lo + (rng.random(z.shape) < frac)
        r = np.ldexp(n, qe)

        over = np.abs(r) > fmt.x_max
        if over.any():
            pos = r > 0
            inf = np.float64(np.inf)
            if fmt.rounding in ("nearest-even", "stochastic"):
                r = np.where(over, np.where(pos, inf, -inf), r)
            elif fmt.rounding == "toward-zero":
                r = np.where(over, np.where(pos, fmt.x_max, -fmt.x_max), r)
            elif fmt.rounding == "toward-plus":
                r = np.where(over, np.where(pos, inf, -fmt.x_max), r)
            else:
                r = np.where(over, np.where(pos, fmt.x_max, -inf), r)

        if not fmt.subnormals:
            tiny = (np.abs(r) < fmt.x_min) & (r != 0)
            r = np.where(tiny, np.copysign(0.0, xf), r)

    # keep signed zeros from x itself
    r = np.where(xf == 0.0, xf, r)
    return np.where(finite, r, x)


def round_value(x: float, fmt: Format, rng: Rng | None = None) -> float:
    """Scalar ``round_array``; NaN/inf are values, not errors."""
    return float(round_array(np.float64(x), fmt, rng))


_BINARY_OPS = {
    "add": lambda a, b: a + b,
    "sub": lambda a, b: a - b,
    "mul": lambda a, b: a * b,
    "div": lambda a, b: a / b,
}


def rounded_op(op: str, a: float, b: float, c: float | None = None,
               fmt: Format = FP64, rng: Rng | None = None) -> float:
    """One emulated scalar operation: exact binary64 result, one rounding.

    ``op`` is one of add, sub, mul, div, fma. Inputs are expected to be
    representable in ``fmt`` already (round them first); fma rounds once
    after a*b + c, with the product formed exactly.
    """
    a = float(a)
    b = float(b)
    if op == "fma":
        if c is None:
            raise ValueError("fma needs c")
        # exact rational a*b + c, then one correctly rounded conversion
        if math.isfinite(a) and math.isfinite(b) and math.isfinite(c):
            exact = float(Fraction(a) * Fraction(b) + Fraction(c))
        else:
            exact = a * b + float(c)
        return round_value(exact, fmt, rng)
    try:
        fn = _BINARY_OPS[op]
    except KeyError:
        raise ValueError(f"unknown op {op!r}") from None
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        exact = fn(np.float64(a), np.float64(b))
    return round_value(float(exact), fmt, rng)


def stochastic_expectation_probe(x: float, fmt: Format, rng: Rng, trials: int) -> float:
    """Mean of ``trials`` independent stochastic roundings of ``x``."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    sfmt = fmt.with_rounding("stochastic")
    samples = round_array(np.full(trials, x, dtype=np.float64), sfmt, rng)
    return float(samples.mean())
