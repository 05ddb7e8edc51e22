"""Summary-data multivariable Mendelian randomization.

Debiased and pairwise clustering-and-shrinkage (PACS) estimation under weak
instruments, Gaussian data thinning for cross-validation and post-selection
inference, signal-group identification, and a Monte Carlo harness.
"""

from mvmrpacs._core import (
    CvCandidate,
    CvResult,
    DgpConfig,
    DgpDesign,
    ExperimentResult,
    ExperimentRow,
    FitResult,
    GroupInference,
    InstrumentStrength,
    NumericalError,
    PacsWeights,
    PipelineConfig,
    PipelineResult,
    PsdProjection,
    ReplicateMetrics,
    SignalGroup,
    SignalGroupSet,
    StabilityRun,
    StabilitySummary,
    SummaryDataset,
    ThinnedReplicates,
    ThinningPlan,
    TuningGrid,
    ValidationError,
    __version__,
    build_lambda_grid,
    compute_metrics,
    cv_pacs,
    cv_ridge,
    exposure_correlation,
    extract_signal_groups,
    fit_divw,
    fit_dlasso,
    fit_dridge,
    fit_ivw,
    fit_pacs,
    grouped_inference,
    instrument_strength,
    load_dataset,
    make_design,
    nearest_psd_maxnorm,
    pacs_weights,
    post_selection_pipeline,
    run_experiment,
    simulate_summary_stats,
    stability_summary,
    thin_multi_fold,
    thin_two_fold,
    training_complement,
    write_dataset,
)

__all__ = [name for name in dir() if not name.startswith("_")] + ["__version__"]
