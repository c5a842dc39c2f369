from .core import (
    CACHE_WINDOW,
    COARSEST,
    FINEST,
    IFRAME_INTERVAL,
    LADDER_Q8,
    RUNGS,
    SEARCH_RANGE,
    CodecError,
    CodedTensor,
    EncodedFrame,
    IPatch,
    QualityLevel,
    Reception,
    ReferenceState,
    TensorCache,
    decode,
    encode_i,
    encode_p,
    fast_redecode,
    feasible_patch_count,
    ipatch_region,
    lossless_reference,
    requantize_residual,
)
