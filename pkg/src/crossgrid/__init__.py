"""Cross-building energy forecasting toolkit.

Models an unseen building from its key-value description alone: similar
source buildings are selected by contextual distance, their historical
daily series are assembled into one training set, and a recurrent
forecaster predicts the next week of consumption.  The evaluation module
reproduces the cross-building transfer study behind that idea.
"""

from .metadata import (
    BuildingDescription,
    ColumnSchema,
    DescriptionEncoder,
    DescriptionTable,
    EncodedMatrix,
    MetadataError,
    encode_labels,
    impute_most_frequent,
    load_descriptions,
    minmax_scale_columns,
    one_hot_encode,
)
from .model import (
    ForecastModel,
    ModelConfig,
    TrainHistory,
    backward_bptt,
    forward,
    init_model,
    load_checkpoint,
    predict_week,
    rmse,
    save_checkpoint,
    train,
)
from .selection import SelectionResult, TopK, WithinDistance, assemble_training_set, select_sources
from .similarity import (
    ClusterAssignment,
    DistanceMatrix,
    LinkageTree,
    cut_at_fraction,
    linkage,
    minmax_scale_matrix,
    pairwise_euclidean,
    symmetrize,
)
from .timeseries import (
    DailySeries,
    NormStats,
    RawSeries,
    SequenceDataset,
    build_windows,
    fit_minmax,
    load_raw,
    resample_daily_mean,
    resample_daily_sum,
)

__version__ = "0.1.0"
