"""Bit-exact toolkit for n-hot powers-of-two quantization."""

from .codebook import (
    Codebook,
    NhotCode,
    NotInCodebookError,
    PotTerm,
    count_additive,
    count_nhot,
    decompose,
    gen_codebook,
    gen_pot_values,
)
from .codec import (
    DegenerateRangeError,
    FormatError,
    QuantParams,
    QuantizedTensor,
    dequantize,
    pack,
    pack_floats,
    project,
    quantize_tensor,
    uniform_quantize,
    unpack,
    unpack_floats,
)
from .cost import LayerSpec, Scheme, bitops, model_report, storage_bits_per_weight
from .datapath import MacTrace, ShiftPlan, matmul_shift_add, plan, shift_add_multiply
from .qat import (
    Network,
    TrainConfig,
    TrainingDivergedError,
    cosine_lr,
    make_toy_dataset,
    ste_backward,
    train_single_stage,
    train_two_stage,
)

__version__ = "0.1.0"
