"""Bit-exact software model of the shift-add multiplier datapath.

Each quantized weight is decomposed offline into at most n signed shift
terms.  A multiply then selects +/- the activation, shifts it by the
stored amount, and accumulates, once per slot.  Plans always carry n
slots; codes shorter than n get explicit no-op padding because the cost
model charges n shifts per multiply regardless.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .codebook import NhotCode
from .codec import QuantizedTensor


class UnsupportedModeError(ValueError):
    """Weight tensor mode has no shift-term codes (mode='uniform')."""


@dataclass(frozen=True)
class ShiftSlot:
    sign: int
    shift: int


@dataclass(frozen=True)
class ShiftPlan:
    """Fixed-width slot list for one weight magnitude; None slots are padding."""

    slots: tuple[Optional[ShiftSlot], ...]

    @property
    def active(self) -> tuple[ShiftSlot, ...]:
        return tuple(s for s in self.slots if s is not None)

    def value(self) -> int:
        return sum(s.sign << s.shift for s in self.active)


@dataclass(frozen=True)
class MacStep:
    step: int
    sign: int
    shift: int
    partial: int


@dataclass(frozen=True)
class MacTrace:
    steps: tuple[MacStep, ...]
    result: int

    def dump(self) -> str:
        """Line-oriented trace: step, sign, shift, partial (tab separated)."""
        return "\n".join(
            f"{s.step}\t{s.sign:+d}\t{s.shift}\t{s.partial}" for s in self.steps
        )


def plan(code: NhotCode, n: int) -> ShiftPlan:
    """Offline decomposition of a canonical code into n shift slots."""
    if len(code) > n:
        raise ValueError(f"code has {len(code)} terms, plan width is {n}")
    slots = tuple(ShiftSlot(t.sign, t.exponent) for t in code.terms)
    return ShiftPlan(slots + (None,) * (n - len(slots)))


def shift_add_multiply(activation: int, shift_plan: ShiftPlan, b_a: int = 8) -> tuple[int, MacTrace]:
    """Multiply an unsigned activation by the planned weight magnitude.

    Every slot produces one trace step; padding slots leave the
    accumulator unchanged (sign 0, shift 0).
    """
    if not 0 <= activation < (1 << b_a):
        raise ValueError(f"activation {activation} outside [0, {(1 << b_a) - 1}]")
    acc = 0
    steps = []
    max_shift = max((s.shift for s in shift_plan.active), default=0)
    bound = 1 << (b_a + max_shift + 2)  # two's-complement accumulator width
    for i, slot in enumerate(shift_plan.slots):
        if slot is not None:
            acc += slot.sign * (activation << slot.shift)
            assert -bound <= acc < bound, "accumulator overflow"
            steps.append(MacStep(i, slot.sign, slot.shift, acc))
        else:
            steps.append(MacStep(i, 0, 0, acc))
    return acc, MacTrace(tuple(steps), acc)


def matmul_shift_add(activations, weights: QuantizedTensor, b_a: int = 8) -> tuple[np.ndarray, float]:
    """Integer matrix multiply where every scalar product runs through the
    shift-add datapath.  Returns the integer output and the weight scale."""
    if weights.mode == "uniform":
        raise UnsupportedModeError("uniform weights use the reference integer path")
    acts = np.asarray(activations)
    if acts.ndim != 2 or len(weights.shape) != 2:
        raise ValueError("activations and weights must both be 2-D")
    p, q = acts.shape
    qw, r = weights.shape
    if q != qw:
        raise ValueError(f"inner dimensions disagree: {q} vs {qw}")
    book = weights.codebook
    assert book.code_of is not None
    mags = book.magnitudes
    signs = weights.signs.reshape(weights.shape)
    indices = weights.indices.reshape(weights.shape)
    plans = {}
    for idx in np.unique(indices):
        plans[int(idx)] = plan(book.code_of[mags[int(idx)]], weights.num_terms)
    out = np.zeros((p, r), dtype=np.int64)
    for i in range(p):
        for j in range(r):
            acc = 0
            for k in range(q):
                prod, _ = shift_add_multiply(int(acts[i, k]), plans[int(indices[k, j])], b_a)
                acc += int(signs[k, j]) * prod
            out[i, j] = acc
    return out, weights.params.scale


def reference_matmul(activations, weights: QuantizedTensor) -> np.ndarray:
    """Golden oracle: plain integer matmul against sign * magnitude weights."""
    acts = np.asarray(activations, dtype=np.int64)
    mags = np.asarray(weights.codebook.magnitudes, dtype=np.int64)
    w_int = (weights.signs.astype(np.int64) * mags[weights.indices]).reshape(weights.shape)
    return acts @ w_int
