"""Post-hoc calibration of classifier logits with learned feature groupings.

The library operates entirely on precomputed logits, deep features and
labels. Calibration error is measured by comparing prediction and label
statistics inside the groups of one or more input-space partitions; the
calibration method learns those partitions from features and fits a
temperature (or temperature ensemble) per group.
"""

from .calibrators import (
    EnsembleTemperatureScaling,
    HistogramBinning,
    TemperatureScaling,
    apply_ets,
    apply_histogram_binning,
    apply_temperature,
    fit_ets,
    fit_histogram_binning,
    fit_temperature,
)
from .dataio import (
    Dataset,
    SplitRole,
    assemble_dataset,
    load_csv,
    load_labels,
    load_npy,
    make_dataset,
    save_labels_npy,
    save_npy,
)
from .errors import CsvParseError, InvalidInputError, NpyParseError, NumericError
from .grouping import (
    GcTrainConfig,
    GroupingModel,
    GroupTemperatures,
    gc_ts_loss,
    hard_assign,
    soft_assign,
    train_grouping,
)
from .metrics import (
    BinningScheme,
    MetricReport,
    Partition,
    accuracy,
    brier,
    classwise_ece,
    ece,
    nll,
    nll_from_probs,
    partition_from_bins,
    pce,
)
from .optim import MinimizeResult, OptimizerConfig, check_gradient, minimize
from .pipeline import (
    PartitionEnsemble,
    SyntheticSpec,
    calibrate,
    evaluate,
    fit_ensemble,
    generate_synthetic,
    learned_partitions,
    paired_t,
    repeated_trials,
)
from .tensor import argmax_rows, log_sum_exp_rows, one_hot, softmax_rows

__version__ = "0.1.0"
