import json
import math

import pytest

from nhotquant.codebook import gen_codebook
from nhotquant.cost import (
    LayerSpec,
    Scheme,
    bitops,
    codebook_size,
    effective_terms,
    load_layers,
    model_report,
    storage_bits_per_weight,
)


def layer(macs=10**9, scheme=Scheme("nhot", 8, 2), b_a=8, weights=1000, extra=0):
    return LayerSpec("l0", "conv", macs, weights, b_a, scheme, extra)


class TestScheme:
    def test_parse(self):
        assert Scheme.parse("uniform:8") == Scheme("uniform", 8)
        assert Scheme.parse("nhot:8:2") == Scheme("nhot", 8, 2)
        assert Scheme.parse("pot:6") == Scheme("pot", 6)

    def test_parse_rejects_garbage(self):
        for bad in ("nhot:8", "uniform", "uniform:8:2", "foo:8"):
            with pytest.raises(ValueError):
                Scheme.parse(bad)

    def test_round_trip_str(self):
        for text in ("uniform:8", "nhot:8:2", "one-hot:6", "additive:5:2"):
            assert str(Scheme.parse(text)) == text


class TestBitops:
    def test_uniform_vs_nhot_headline(self):
        uni = bitops(layer(scheme=Scheme("uniform", 8)))
        prop = bitops(layer(scheme=Scheme("nhot", 8, 2)))
        assert uni == 64 * 10**9
        assert prop == 16 * 10**9
        assert prop / uni == 0.25  # "about 75%" fewer operations

    def test_reported_table_ratios(self):
        assert abs(0.697 / 2.79 - 2 / 8) / (2 / 8) < 0.005
        assert abs(0.348 / 2.79 - 1 / 8) / (1 / 8) < 0.005

    def test_pot_single_shift(self):
        assert bitops(layer(scheme=Scheme("pot", 8))) == 8 * 10**9

    def test_ratio_is_n_over_bw(self):
        for n in (1, 2, 3):
            prop = bitops(layer(scheme=Scheme("nhot", 8, n)))
            uni = bitops(layer(scheme=Scheme("uniform", 8)))
            assert prop * 8 == uni * n


class TestStorageBits:
    @pytest.mark.parametrize("scheme,expected", [
        (Scheme("uniform", 8), 9),
        (Scheme("uniform", 6), 7),
        (Scheme("nhot", 8, 2), 7),
        (Scheme("nhot", 3, 2), 4),
        (Scheme("uniform", 3), 4),
    ])
    def test_expected_bits(self, scheme, expected):
        assert storage_bits_per_weight(scheme) == expected

    def test_uniform_signless_variant(self):
        assert storage_bits_per_weight(Scheme("uniform", 8), uniform_signless=True) == 8

    def test_matches_codebook_cardinality(self):
        for scheme in (Scheme("nhot", 6, 2), Scheme("additive", 8, 2), Scheme("one-hot", 8)):
            n_mag = len(gen_codebook(scheme.b, scheme.n, scheme.mode))
            assert codebook_size(scheme) == n_mag
            assert storage_bits_per_weight(scheme) == math.ceil(math.log2(2 * n_mag - 1))

    def test_monotone_in_cardinality(self):
        sizes_bits = [
            (codebook_size(s), storage_bits_per_weight(s))
            for s in (Scheme("one-hot", 8), Scheme("additive", 8, 2),
                      Scheme("nhot", 8, 2), Scheme("uniform", 8))
        ]
        sizes_bits.sort()
        bits = [b for _, b in sizes_bits]
        assert bits == sorted(bits)


class TestModelReport:
    def test_baseline_ratio_one(self):
        rep = model_report([layer(scheme=Scheme("uniform", 8))], Scheme("uniform", 8))
        assert rep.totals["bitops_ratio"] == 1.0
        assert rep.totals["storage_ratio"] == 1.0

    def test_additivity(self):
        one = model_report([layer()], Scheme("uniform", 8))
        two = model_report([layer(), layer()], Scheme("uniform", 8))
        assert two.totals["bitops"] == 2 * one.totals["bitops"]
        assert two.totals["storage_bits"] == 2 * one.totals["storage_bits"]

    def test_permutation_invariance(self):
        a = layer(macs=5, scheme=Scheme("nhot", 8, 2))
        b = layer(macs=9, scheme=Scheme("uniform", 6))
        r1 = model_report([a, b], Scheme("uniform", 8)).totals
        r2 = model_report([b, a], Scheme("uniform", 8)).totals
        assert r1 == r2

    def test_synthetic_size_reduction(self):
        """A model with 90% of bytes in 8-bit quantized weights shrinks by
        7/9 on the quantized part: total ratio 0.9 * 7/9 + 0.1 = 0.8."""
        quantized_bits = 9 * 9000  # 9000 weights at uniform-8 baseline (9 bits)
        extra_bytes = quantized_bits // 8 // 9  # 10% of total in raw bytes
        total_base = quantized_bits + 8 * extra_bytes
        assert abs(quantized_bits / total_base - 0.9) < 0.01
        spec = layer(weights=9000, scheme=Scheme("nhot", 8, 2), extra=extra_bytes)
        rep = model_report([spec], Scheme("uniform", 8))
        expected = (7 * 9000 + 8 * extra_bytes) / total_base
        assert rep.totals["storage_ratio"] == pytest.approx(expected)
        assert rep.totals["storage_ratio"] == pytest.approx(0.9 * 7 / 9 + 0.1, abs=0.01)

    def test_effective_terms_reported(self):
        rep = model_report([layer()], Scheme("uniform", 8))
        d = rep.layers[0]
        assert 1.0 < d["effective_terms"] < 2.0
        assert d["bitops_effective"] < d["bitops"]
        assert effective_terms(Scheme("uniform", 8)) is None

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            model_report([], Scheme("uniform", 8))

    def test_json_round_trip(self):
        rep = model_report([layer()], Scheme("uniform", 8))
        doc = json.loads(rep.to_json())
        assert doc["totals"]["bitops"] == rep.totals["bitops"]
        assert doc["layers"][0]["name"] == "l0"


class TestLayerIngestion:
    def test_load_layers(self):
        doc = json.dumps([
            {"name": "conv1", "kind": "conv", "macs": 100, "weight_count": 50,
             "b_a": 8, "weight_scheme": "nhot:8:2", "unquantized_bytes": 16},
            {"name": "fc", "kind": "dense", "macs": 10, "weight_count": 10,
             "b_a": 8, "weight_scheme": {"mode": "uniform", "b": 8}},
        ])
        layers = load_layers(doc)
        assert layers[0].weight_scheme == Scheme("nhot", 8, 2)
        assert layers[1].weight_scheme == Scheme("uniform", 8)
        assert layers[0].unquantized_bytes == 16

    def test_bad_document(self):
        with pytest.raises(ValueError):
            load_layers('{"not": "a list"}')
        with pytest.raises(ValueError):
            load_layers(json.dumps([{"name": "x", "kind": "warp", "macs": 1,
                                     "weight_count": 1, "b_a": 8,
                                     "weight_scheme": "uniform:8"}]))
