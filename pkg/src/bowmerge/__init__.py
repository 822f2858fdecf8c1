"""Multi-vocabulary bag-of-visual-words retrieval with overlap-aware merging."""

from .bayes import (
    MergeConfig,
    SetDecomposition,
    bayes_weight,
    decompose,
    term1,
    term2,
    term3,
)
from .core import (
    Corpus,
    FeatureRef,
    ImageRecord,
    PostingEntry,
    Vocabulary,
    read_descriptors,
    read_ground_truth,
    read_vocabulary,
    write_descriptors,
    write_ground_truth,
    write_vocabulary,
)
from .evaluation import (
    BENCHMARK_KMEANS_ITERS,
    BENCHMARK_VOCAB_SEEDS,
    BENCHMARK_VOCAB_SIZE,
    STANDARD_BENCHMARK,
    SyntheticSpec,
    average_precision,
    calibrate_term2,
    clip_term2_line,
    generate_synthetic,
    histogram_mean,
    mean_average_precision,
    mean_ns_score,
    ns_score,
    prepare_setup,
    ratio_histogram,
)
from .index import (
    HammingParams,
    IndexBundle,
    InvertedFile,
    build_index,
    compute_signature,
    fit_hamming,
    hamming_distance,
    load_index,
    save_index,
)
from .retrieval import (
    RankedResult,
    ScoringMethod,
    match_b0,
    match_b1,
    match_b2,
    rank_aggregate,
    read_results,
    score_queries,
    score_query,
    write_results,
)
from .vocab import QuantizedFeature, kmeans, quantize, train_vocabulary

__version__ = "0.1.0"
