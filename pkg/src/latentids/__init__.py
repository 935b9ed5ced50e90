"""VAE-based network intrusion detection with latent-space confidence.

Trains a variational autoencoder on NSL-KDD connection records, flags
intrusions by thresholding the normalized reconstruction error, and attaches
to every prediction a confidence score: the Mahalanobis distance from the
sample's latent embedding to its nearest training embedding. The evaluation
harness quantifies how well that score predicts classification error.

Modules
-------
ingest       NSL-KDD parsing, label binarization, one-hot + min-max encoding.
numcore      Layers with hand-written backward passes, Adam, Cholesky, Pearson.
vae          Encoder/decoder architecture, training loop, checkpoints.
detector     Reconstruction errors, threshold fitting, confusion metrics.
confidence   Mahalanobis / Euclidean / cosine / Choquet nearest-neighbor scores.
evaluation   Prediction error, conditioned correlations, sweeps, timing study.
kernels      Compiled nearest-neighbor scan with a NumPy fallback.
cli          ``latentids train | evaluate | sweep``.
"""

from latentids.confidence import (
    ConfidenceScore,
    LatentIndex,
    build_index,
    choquet_confidence,
    cosine_confidence,
    euclidean_confidence,
    feature_space_confidence,
    mahalanobis_confidence,
)
from latentids.detector import (
    DetectionResult,
    ThresholdModel,
    classify,
    confusion_and_metrics,
    fit_threshold,
    normalize_errors,
    reconstruction_errors,
)
from latentids.evaluation import (
    CorrelationReport,
    EvalOptions,
    beta_sweep,
    correlation_report,
    distance_comparison,
    evaluate_model,
    latent_dim_sweep,
    prediction_error,
    run_pipeline,
    timing_comparison,
)
from latentids.ingest import (
    EncodedDataset,
    PreprocessorState,
    RawRecord,
    binarize_label,
    dataset_stats,
    fit_preprocessor,
    parse_records,
    transform,
)
from latentids.vae import (
    TrainReport,
    VaeConfig,
    VariationalAutoencoder,
    load_checkpoint,
    save_checkpoint,
    train,
)

__version__ = "0.1.0"
