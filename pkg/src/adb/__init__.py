"""Open-set classification with adaptive spherical decision boundaries."""

from .boundary import (
    AdbModel,
    BoundaryParams,
    BoundaryTrainConfig,
    Centroids,
    adam_step,
    boundary_gradient,
    boundary_loss,
    compute_centroids,
    finite_difference_loss_gradient,
    softplus,
    train_boundaries,
)
from .data_io import (
    OPEN_LABEL,
    EmbeddedDataset,
    LabelMap,
    SplitResult,
    generate_synthetic,
    load_dataset,
    load_model,
    make_known_open_split,
    mean_pool,
    save_model,
    subsample_labeled,
)
from .evaluation import (
    ExperimentConfig,
    boundary_ratio_sweep,
    compute_metrics,
    confusion_matrix,
    labeled_ratio_sweep,
    run_experiment,
)
from .inference import Prediction, classify, classify_batch, msp_classify
from .representation import (
    RepresentationModel,
    RepTrainConfig,
    cross_entropy,
    embed_dataset,
    rep_forward,
    train_representation,
)

__version__ = "0.1.0"
