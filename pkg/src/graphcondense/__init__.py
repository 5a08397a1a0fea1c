"""Graph condensation by per-class gradient matching, plus the companion
spectral and error-decomposition tooling."""

from .condense import (
    AdjacencyGenerator,
    CondenseConfig,
    DivergenceError,
    SyntheticGraph,
    TrajectoryLog,
    build_adjacency,
    condense,
    finalize,
)
from .data import (
    GeneratorSpec,
    GraphDataset,
    generate_graph,
    load_dataset,
    make_dataset,
    normalize_adjacency,
    propagate,
    save_dataset,
)
from .diagnostics import ErrorDecomposition, error_decomposition, trajectory_report
from .evaluation import (
    EvalReport,
    evaluate,
    heldout_accuracy,
    oracle_accuracy,
    random_coreset_baseline,
    train_evaluator,
)
from .initfeat import (
    ClassBudget,
    derive_budget,
    init_features_kmeans,
    init_features_random,
    kmeans,
)
from .matching import (
    MatchConfig,
    column_distance,
    cosine_gap,
    l2_gap,
    layer_distance,
    magnitude_gap,
    match_loss,
)
from .models import GradientSet, ModelParams, ModelSpec, class_loss_grad, forward, init_params
from .spectral import (
    EigenDecomposition,
    FreqGradConfig,
    SpectralReport,
    fidelity_pearson,
    freq_grad_experiment,
    gdft,
    high_freq_area,
    jacobi_eigh,
    laplacian,
    pearson,
    spearman,
    spectral_metrics,
)

__version__ = "0.1.0"
