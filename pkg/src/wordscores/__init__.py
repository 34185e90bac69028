"""Supervised text scaling with wordscores, plus validation tooling."""

from .corpus import (
    Corpus,
    CorpusError,
    CorpusStats,
    Document,
    OverlapDiagnostics,
    PreprocessConfig,
    TermDocumentMatrix,
    apply_stoplist,
    build_matrix,
    corpus_stats,
    diagnose_overlap,
    load_documents,
    preprocess_corpus,
    tokenize,
    tokenize_corpus,
    top_k_stopwords,
)
from .scaling import (
    ReferenceSet,
    ScalingError,
    TransformError,
    TransformSpec,
    UnscorableDocumentError,
    VirginEstimate,
    WordProbabilityTable,
    WordScoreTable,
    build_wordscores,
    compare_variants,
    default_anchors,
    export_wordscores,
    lbg_transform,
    mv_tradeoff,
    mv_transform,
    score_virgin,
    word_probabilities,
    word_scores,
)
from .validation import (
    ConcordanceResult,
    EstimateTable,
    ValidationError,
    benchmark_matrix,
    bootstrap_ccc_ci,
    ccc,
    ccc_ci,
    merge_estimates,
    pearson,
    rescale_unit,
)
from .construct import (
    ConstructError,
    DesignMatrix,
    ModelFit,
    bic,
    bic_evidence,
    compare_models,
    count_r2,
    fit_multinomial,
    intercept_only,
    mcfadden_r2,
    predict,
)

__version__ = "0.1.0"
