"""surgecast: storm-surge emulation with a convolutional recurrent network.

A self-contained toolkit: a from-scratch reverse-mode tensor engine, a
ConvLSTM encoder-decoder surge network with a forward-Euler residual
connection, a synthetic storm dataset generator, a PCA + Gaussian-process
comparison baseline, and a CLI tying the pipeline together.
"""

from .autodiff import Tensor, backward, conv2d, dense, finite_difference_gradient
from .errors import (
    ConditioningError,
    ConfigError,
    ContractError,
    DataError,
    ShapeError,
    TrainingDivergedError,
    VersionError,
)
from .evaluate import EvalReport, export_scatter, export_timeseries, predict_record, rmse
from .gp_baseline import GpEmulator, KernelConfig, gp_fit, gp_predict, pca_fit, pca_project, pca_reconstruct
from .layers import ConvLSTMParams, ConvLSTMState, convlstm_step, pixel_shuffle, pixel_unshuffle
from .model import (
    ArchitectureConfig,
    ModelParams,
    ModelState,
    forward_sequence,
    forward_step,
    load_params,
    save_params,
    trace_shapes,
)
from .storm_data import (
    GeneratorConfig,
    GridSpec,
    StormRecord,
    generate_dataset,
    generate_storm,
    read_dataset,
    surge_oracle,
    synchronize_landfall,
    write_dataset,
)
from .training import (
    Adam,
    LabelTransform,
    PreprocessBundle,
    StandardizationStats,
    TrainConfig,
    apply_standardization,
    denormalize_labels,
    fit_label_transform,
    fit_standardization,
    l2_loss,
    normalize_labels,
    random_search,
    train,
)

__version__ = "0.1.0"
