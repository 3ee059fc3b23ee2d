"""bitOPs and theoretical storage accounting over layer specifications.

A multiply between a b_a-bit activation and a b_w-bit uniform weight costs
b_a * b_w bitOPs; a weight with at most n shift terms costs b_a * n.
Storage charges ceil(log2(D)) bits per weight, where D is the number of
distinct signed values of the weight's codebook.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Optional

from .codebook import gen_codebook

LAYER_KINDS = ("conv", "depthwise", "deconv", "dense", "other")


@dataclass(frozen=True)
class Scheme:
    """Weight quantization scheme: uniform(b), pot/one-hot, or nhot(b, n)."""

    mode: str
    b: int
    n: int = 1

    def __post_init__(self) -> None:
        if self.mode not in ("uniform", "pot", "one-hot", "additive", "nhot"):
            raise ValueError(f"unknown scheme mode {self.mode!r}")
        if self.b < 1:
            raise ValueError(f"bit width must be >= 1, got {self.b}")
        if self.n < 1:
            raise ValueError(f"term count must be >= 1, got {self.n}")

    @classmethod
    def parse(cls, text: str) -> "Scheme":
        """Parse "uniform:8", "pot:8", "nhot:8:2" style scheme strings."""
        parts = text.split(":")
        mode = parts[0]
        if mode in ("uniform", "pot", "one-hot"):
            if len(parts) != 2:
                raise ValueError(f"expected {mode}:<bits>, got {text!r}")
            return cls(mode, int(parts[1]))
        if mode in ("additive", "nhot"):
            if len(parts) != 3:
                raise ValueError(f"expected {mode}:<bits>:<terms>, got {text!r}")
            return cls(mode, int(parts[1]), int(parts[2]))
        raise ValueError(f"unknown scheme {text!r}")

    def __str__(self) -> str:
        if self.mode in ("additive", "nhot"):
            return f"{self.mode}:{self.b}:{self.n}"
        return f"{self.mode}:{self.b}"


@dataclass(frozen=True)
class LayerSpec:
    name: str
    kind: str
    macs: int
    weight_count: int
    b_a: int
    weight_scheme: Scheme
    unquantized_bytes: int = 0

    def __post_init__(self) -> None:
        if self.kind not in LAYER_KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")
        if self.macs < 0 or self.weight_count < 0 or self.unquantized_bytes < 0:
            raise ValueError("counts must be non-negative")
        if self.b_a < 1:
            raise ValueError(f"activation bit width must be >= 1, got {self.b_a}")

    @classmethod
    def from_dict(cls, d: dict) -> "LayerSpec":
        scheme = d["weight_scheme"]
        if isinstance(scheme, str):
            scheme = Scheme.parse(scheme)
        else:
            scheme = Scheme(scheme["mode"], scheme["b"], scheme.get("n", 1))
        return cls(
            name=d["name"],
            kind=d["kind"],
            macs=int(d["macs"]),
            weight_count=int(d["weight_count"]),
            b_a=int(d["b_a"]),
            weight_scheme=scheme,
            unquantized_bytes=int(d.get("unquantized_bytes", 0)),
        )


def bitops(layer: LayerSpec) -> int:
    """bitOPs for one layer; non-uniform schemes charge n shifts per multiply."""
    s = layer.weight_scheme
    if s.mode == "uniform":
        per_mac = layer.b_a * s.b
    elif s.mode in ("pot", "one-hot"):
        per_mac = layer.b_a * 1
    else:
        per_mac = layer.b_a * s.n
    return layer.macs * per_mac


def codebook_size(scheme: Scheme) -> int:
    """Number of magnitudes (zero included) for a weight scheme."""
    if scheme.mode == "uniform":
        return 1 << scheme.b
    return len(gen_codebook(scheme.b, scheme.n, scheme.mode))


def storage_bits_per_weight(scheme: Scheme, uniform_signless: bool = False) -> int:
    """Bits per stored weight: ceil(log2(#distinct signed values)).

    ``uniform_signless`` switches the uniform baseline to a plain b-bit
    two's-complement budget instead of sign + b-bit magnitude.
    """
    if scheme.mode == "uniform" and uniform_signless:
        return scheme.b
    distinct = 2 * (codebook_size(scheme) - 1) + 1
    return max(1, math.ceil(math.log2(distinct)))


def effective_terms(scheme: Scheme) -> Optional[float]:
    """Mean shift-term count over the codebook (None for uniform)."""
    if scheme.mode == "uniform":
        return None
    book = gen_codebook(scheme.b, scheme.n, scheme.mode)
    assert book.code_of is not None
    return sum(len(c) for c in book.code_of.values()) / len(book)


@dataclass
class CostReport:
    layers: list[dict] = field(default_factory=list)
    totals: dict = field(default_factory=dict)

    def to_json(self, indent: Optional[int] = 2) -> str:
        return json.dumps({"layers": self.layers, "totals": self.totals},
                          indent=indent, sort_keys=True)


def model_report(layers: list[LayerSpec], baseline: Scheme) -> CostReport:
    """Aggregate bitOPs and storage per layer, with ratios vs a baseline
    in which every layer's weight scheme is replaced by ``baseline``."""
    if not layers:
        raise ValueError("layer list is empty")
    report = CostReport()
    tot_ops = tot_bits = base_ops = base_bits = 0
    for layer in layers:
        ops = bitops(layer)
        bits = layer.weight_count * storage_bits_per_weight(layer.weight_scheme)
        bits += 8 * layer.unquantized_bytes
        ref = LayerSpec(layer.name, layer.kind, layer.macs, layer.weight_count,
                        layer.b_a, baseline, layer.unquantized_bytes)
        ref_ops = bitops(ref)
        ref_bits = layer.weight_count * storage_bits_per_weight(baseline)
        ref_bits += 8 * layer.unquantized_bytes
        eff = effective_terms(layer.weight_scheme)
        report.layers.append({
            "name": layer.name,
            "kind": layer.kind,
            "scheme": str(layer.weight_scheme),
            "bitops": ops,
            "storage_bits": bits,
            "storage_bytes": bits / 8,
            "bits_per_weight": storage_bits_per_weight(layer.weight_scheme),
            "effective_terms": eff,
            "bitops_effective": None if eff is None else layer.macs * layer.b_a * eff,
        })
        tot_ops += ops
        tot_bits += bits
        base_ops += ref_ops
        base_bits += ref_bits
    report.totals = {
        "baseline": str(baseline),
        "bitops": tot_ops,
        "storage_bits": tot_bits,
        "storage_bytes": tot_bits / 8,
        "baseline_bitops": base_ops,
        "baseline_storage_bits": base_bits,
        "bitops_ratio": tot_ops / base_ops if base_ops else None,
        "storage_ratio": tot_bits / base_bits if base_bits else None,
    }
    return report


def load_layers(text: str) -> list[LayerSpec]:
    """Parse the JSON layer-spec document (top-level array of objects)."""
    doc = json.loads(text)
    if not isinstance(doc, list):
        raise ValueError("layer spec document must be a JSON array")
    return [LayerSpec.from_dict(d) for d in doc]
