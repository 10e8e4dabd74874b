"""Token-level generalization-bound certification toolkit."""

from .bounds import (
    BoundContext,
    BoundResult,
    azuma_term,
    bpd_vacuity_threshold,
    complexity_nats,
    evaluate_bpd_bound,
    evaluate_topk_bound,
    split_failure_probability,
    subsample_penalty,
    topk_vacuity_threshold,
)
from .coding import (
    CompressedArtifact,
    FrequencyTable,
    HeaderField,
    arith_decode,
    arith_encode,
    compress_weights,
    decompress_weights,
    deflate_size,
    quantize_uniform,
    read_artifact,
    total_compressed_bits,
    write_artifact,
)
from .corpus import TokenStream, read_corpus, synthetic_corpus, write_corpus
from .errors import DecodeError, TraceFormatError, UnsupportedKError
from .markov import SparseMarkov, markov_bound
from .smoothing import (
    DEFAULT_ALPHA_GRID,
    SmoothingPlan,
    grid_search_global_alpha,
    interval_width,
    optimize_per_token_alpha,
    smooth_prob,
)
from .structured import (
    DenseLinear,
    KroneckerLinear,
    LoRALinear,
    MonarchLinear,
    SubspaceExpansion,
    fd_gradient_check,
    make_layer,
    subspace_expand,
)
from .seqgen import gen_random_baseline, gen_structured, memorization_experiment
from .toymodel import ToyModel, train_toy_model
from .trace import RiskTrace, TraceHeader, read_trace, subsample_positions, write_text
from .validate import run_bound_validation

__version__ = "0.1.0"
