"""Codebook construction for n-hot powers-of-two quantization.

A value is "n-hot" if its integer magnitude can be written as a signed sum
of at most n distinct powers of two.  This module enumerates the
representable magnitude sets for the different quantization modes
(uniform, pot, one-hot, additive, nhot), counts them in closed form, and
produces the canonical signed shift-term decomposition of each magnitude.

All codebooks live in the integer-magnitude view: magnitudes are integers
in [0, 2**b - 1] and the deployed real value is magnitude * scale.  Signs
are handled externally by mirroring the magnitude set.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Optional

MODES = ("uniform", "pot", "one-hot", "additive", "nhot")


class NotInCodebookError(Exception):
    """Magnitude is inside the bit range but not representable with <= n terms."""


@dataclass(frozen=True)
class PotTerm:
    """One signed power-of-two term: sign * 2**exponent."""

    sign: int
    exponent: int

    def __post_init__(self) -> None:
        if self.sign not in (1, -1):
            raise ValueError(f"sign must be +1 or -1, got {self.sign}")
        if self.exponent < 0:
            raise ValueError(f"exponent must be >= 0, got {self.exponent}")

    @property
    def value(self) -> int:
        return self.sign * (1 << self.exponent)


@dataclass(frozen=True)
class NhotCode:
    """Canonical signed shift-term representation of one integer magnitude.

    Terms are ordered by strictly decreasing exponent; the empty code
    represents zero.
    """

    terms: tuple[PotTerm, ...]

    def __post_init__(self) -> None:
        exps = [t.exponent for t in self.terms]
        if any(later >= earlier for later, earlier in zip(exps[1:], exps)):
            raise ValueError("exponents must be strictly decreasing")

    @property
    def value(self) -> int:
        return sum(t.value for t in self.terms)

    def __len__(self) -> int:
        return len(self.terms)

    def __str__(self) -> str:
        if not self.terms:
            return "0"
        parts = []
        for i, t in enumerate(self.terms):
            op = "-" if t.sign < 0 else ("+" if i else "")
            parts.append(f"{op}2^{t.exponent}")
        return "".join(parts)


@dataclass(frozen=True)
class Codebook:
    """Representable magnitude set for a (bit_width, num_terms, mode) choice.

    ``code_of`` maps every magnitude to its canonical code; it is None for
    mode="uniform", where values are plain integers rather than shift terms.
    """

    bit_width: int
    num_terms: int
    mode: str
    magnitudes: tuple[int, ...]
    code_of: Optional[dict[int, NhotCode]] = field(hash=False, compare=False)

    def __len__(self) -> int:
        return len(self.magnitudes)


def gen_pot_values(b: int) -> list[int]:
    """Powers of two 2**0 .. 2**(b-1), the one-hot magnitude alphabet."""
    if b < 1:
        raise ValueError(f"bit width must be >= 1, got {b}")
    return [1 << i for i in range(b)]


def count_additive(b: int, n: int) -> int:
    """Closed-form count of magnitudes expressible as a sum of <= n distinct
    powers of two from a b-wide alphabet: sum of C(b, k) for k = 0..n."""
    if b < 1:
        raise ValueError(f"bit width must be >= 1, got {b}")
    if not 0 <= n <= b:
        raise ValueError(f"need 0 <= n <= b, got n={n}, b={b}")
    return sum(math.comb(b, k) for k in range(n + 1))


def count_nhot(b: int, n: int = 2) -> int:
    """Closed-form count for the addition-and-subtraction alphabet, n = 2.

    Subtraction adds one representation per run of m >= 3 consecutive ones,
    and a run of length m can start at b - m + 1 positions.
    """
    if n != 2:
        raise ValueError(f"closed-form count is only defined for n=2, got n={n}")
    if b < 3:
        raise ValueError(f"bit width must be >= 3, got {b}")
    return count_additive(b, 2) + sum(b - m + 1 for m in range(3, b + 1))


def _canon_key(code: NhotCode) -> tuple:
    # minimal term count, then fewest negatives, then greatest exponent
    # sequence (negated tuple makes min() pick the lexicographically largest)
    n_neg = sum(1 for t in code.terms if t.sign < 0)
    return (len(code), n_neg, tuple(-t.exponent for t in code.terms))


def _enumerate_codes(b: int, n: int, signed: bool, max_exp: int) -> dict[int, NhotCode]:
    """All canonical codes for magnitudes in [0, 2**b - 1] reachable with
    1..n terms over distinct exponents 0..max_exp."""
    limit = (1 << b) - 1
    signs = (1, -1) if signed else (1,)
    best: dict[int, NhotCode] = {0: NhotCode(())}
    for k in range(1, n + 1):
        for exps in itertools.combinations(range(max_exp, -1, -1), k):
            for sgns in itertools.product(signs, repeat=k):
                value = sum(s * (1 << e) for s, e in zip(sgns, exps))
                if not 1 <= value <= limit:
                    continue
                code = NhotCode(tuple(PotTerm(s, e) for s, e in zip(sgns, exps)))
                cur = best.get(value)
                if cur is None or _canon_key(code) < _canon_key(cur):
                    best[value] = code
    return best


@lru_cache(maxsize=None)
def gen_codebook(b: int, n: int, mode: str, pot_levels: Optional[int] = None) -> Codebook:
    """Build the magnitude codebook for one quantization mode.

    Modes:
      uniform  - all integers 0 .. 2**b - 1, no shift-term codes.
      one-hot  - single positive power of two (exponents 0..b-1), plus zero.
      pot      - alias of one-hot by default; ``pot_levels`` widens the
                 exponent range for variants with more levels.
      additive - sums of <= n distinct positive powers (exponents 0..b-1).
      nhot     - signed sums of <= n distinct powers; exponents reach b so
                 runs of ones touching the top bit stay two-term (e.g.
                 255 = 2**8 - 2**0 at b=8).
    """
    if b < 2:
        raise ValueError(f"bit width must be >= 2, got {b}")
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}, expected one of {MODES}")
    if mode in ("additive", "nhot") and not 1 <= n <= b:
        raise ValueError(f"need 1 <= n <= b, got n={n}, b={b}")
    if pot_levels is not None and mode != "pot":
        raise ValueError("pot_levels only applies to mode='pot'")

    if mode == "uniform":
        return Codebook(b, n, mode, tuple(range(1 << b)), None)
    if mode in ("pot", "one-hot"):
        levels = b if pot_levels is None else pot_levels
        codes = {0: NhotCode(())}
        for e in range(levels):
            codes[1 << e] = NhotCode((PotTerm(1, e),))
        return Codebook(b, 1, mode, tuple(sorted(codes)), codes)
    if mode == "additive":
        codes = _enumerate_codes(b, n, signed=False, max_exp=b - 1)
    else:  # nhot
        codes = _enumerate_codes(b, n, signed=True, max_exp=b)
    return Codebook(b, n, mode, tuple(sorted(codes)), codes)


def decompose(magnitude: int, b: int, n: int) -> NhotCode:
    """Canonical <= n-term signed decomposition of an integer magnitude.

    Raises NotInCodebookError if the magnitude is in range but needs more
    than n terms; plain ValueError if it is outside [0, 2**b - 1].
    """
    if not 0 <= magnitude <= (1 << b) - 1:
        raise ValueError(f"magnitude {magnitude} outside [0, {(1 << b) - 1}]")
    book = gen_codebook(b, n, "nhot")
    assert book.code_of is not None
    try:
        return book.code_of[magnitude]
    except KeyError:
        raise NotInCodebookError(
            f"{magnitude} is not representable with <= {n} signed terms at b={b}"
        ) from None
