"""Inference engine for ternary-weight, int8-activation transformers.

Core pieces: absmean/absmax quantizers (quant), 2-bit weight packing
(pack), exact integer matmul kernels (kernel), the transformer forward
pass and decoder (model), the on-disk container and converter
(modelfile), latency/energy measurement (bench), and a CLI (cli).
"""

from .bench import (
    BenchReport,
    DEFAULT_ENERGY_TABLE,
    EnergyTable,
    count_weight_macs,
    estimate_energy,
    latency_stats,
    measure_tpot,
)
from .chat import ChatMessage, apply_chat_template, encode_chat
from .errors import (
    BadMagicError,
    CapacityError,
    ChatTemplateError,
    CorruptDataError,
    FormatError,
    InvalidInputError,
    InvalidRecordError,
    InvalidTokenError,
    OverlappingRecordsError,
    ShapeError,
    TernkitError,
    TruncatedFileError,
    UnsupportedVersionError,
)
from .kernel import (
    AccumulatorMatrix,
    dequantize_output,
    gemm_lut,
    gemm_packed,
    gemm_reference,
)
from .model import (
    LAYER_TENSOR_ORDER,
    GenerationParams,
    GenerationResult,
    KVCache,
    LayerWeights,
    Model,
    ModelConfig,
    attention_forward,
    bitlinear_forward,
    ffn_forward,
    forward_pass,
    generate,
    model_from_tensors,
    model_tensor_names,
    model_to_tensors,
    random_model,
    relu_squared,
    rmsnorm,
    rope_apply,
    sample,
)
from .modelfile import (
    ConversionReport,
    TensorRecord,
    convert_checkpoint,
    inspect_model,
    read_model,
    write_model,
)
from .pack import (
    PackedTernaryTensor,
    pack_ternary,
    packed_size_bytes,
    unpack_ternary,
    validate_payload,
)
from .quant import (
    QuantizedActivations,
    TernaryWeights,
    absmax_quantize,
    absmax_quantize_row,
    absmean_quantize_weights,
    dequantize_activations,
    dequantize_weights,
    round_half_away_from_zero,
)
from .tokenizer import (
    BEGIN_OF_TEXT_ID,
    EOT_ID,
    PAD_ID,
    VOCAB_SIZE,
    ByteTokenizer,
    byte_detokenize,
    byte_tokenize,
)

__version__ = "0.1.0"
