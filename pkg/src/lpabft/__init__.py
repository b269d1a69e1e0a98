"""Soft error detection for int8 GEMM and EmbeddingBag via checksums."""

from .embedding import (
    EbCheckedResult,
    IndexBag,
    QuantEmbeddingTable,
    abft_embedding_bag,
    batch_abft_eb,
    embedding_bag,
    load_table,
    precompute_row_sums,
    save_table,
)
from .gemm import (
    AbftGemmResult,
    BlockLayout,
    PackedEncodedWeight,
    WeightChecksum,
    abft_gemm,
    compute_row_checksums,
    encode_weight,
    pack_encoded_weight,
    packed_product,
    reference_dual_encoded_check,
    verify_checksums,
)
from .kernels import BACKEND
from .quant import (
    IntermediateMatrix,
    QuantizedMatrix,
    RequantParams,
    dequantize,
    quantize_affine,
    reference_quantized_product,
    requantize,
)

__version__ = "0.1.0"
