"""Lipschitz-normalized margin dynamics of neural-network training runs.

Raw prediction margins are comparable across training epochs only after
dividing by the network's Lipschitz scale. This package estimates that
scale from weights (closed-form kernel bounds or power iteration), builds
normalized margin dynamics from per-epoch run files, and derives the
diagnostics that make margin curves actionable: threshold/quantile
selection by rank correlation with test error, phase-transition detection,
early-stopping suggestions, and a flag for runs whose training margins
improve uniformly while generalization worsens.
"""

from .analysis import (
    CorrelationHeatmap,
    DilemmaReport,
    PhaseSummary,
    PredictorSelection,
    StopSuggestion,
    breiman_dilemma_flag,
    correlation_heatmap,
    detect_phase_transition,
    pooled_margin_grid,
    select_predictor,
    suggest_early_stop,
    suggest_stop_from_curve,
)
from .convops import (
    ConvKernel,
    conv_adjoint,
    conv_forward,
    materialize_operator,
    matmul,
    matvec,
)
from .correlation import CorrelationResult, kendall_tau, rank_correlations, spearman_rho
from .errors import (
    AnalysisError,
    DataError,
    EstimationError,
    FormatError,
    NumericError,
    OracleSizeError,
    ShapeError,
)
from .estimators import LipschitzEstimator, MarginDynamicsAnalyzer, ToyNetClassifier
from .margins import (
    BoundParams,
    FixedThresholdBound,
    MarginDynamics,
    QuantileMarginBound,
    RampParams,
    empirical_margin_cdf,
    fixed_threshold_bound,
    inverse_quantile_curve,
    margin,
    margin_error,
    margin_error_curve,
    margins_from_logits,
    normalize_run,
    quantile_margin,
    quantile_margin_bound,
    quantile_margin_curve,
    ramp_loss,
)
from .network import (
    ActivationLayer,
    BatchNormLayer,
    ConvLayer,
    DenseLayer,
    NetworkSpec,
    PoolLayer,
    ResidualBlock,
)
from .norms import (
    NormEstimate,
    bn_rescale_factor,
    conv_power_norm,
    exact_operator_norm,
    l1_bound_multichannel,
    l1_bound_single_channel,
    l1_bound_stride,
    matrix_power_norm,
    network_lipschitz,
    power_iteration,
    residual_block_bound,
)
from .runio import (
    EpochSnapshot,
    RunManifest,
    RunRecord,
    read_network,
    read_run,
    read_run_list,
    read_tensor,
    write_network,
    write_run,
    write_tensor,
)
from .trainer import BlobSpec, Blobs, ToyRun, TrainConfig, make_blobs, train

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
