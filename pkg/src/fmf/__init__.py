"""Feature-driven matrix factorization toolkit.

Predictions are driven by three sparse feature groups (global, user,
item) rather than raw ids, so one trainer covers plain factorization,
mean baselines, pairwise ranking, temporal interpolation, neighborhood
offsets, taxonomy sharing, and shared-feedback factors. Training is
stochastic gradient descent over a binary on-disk buffer fed through a
prefetching bounded queue, keeping memory independent of dataset size.
"""

from .core import (
    EMPTY_VEC,
    Instance,
    LossConfig,
    Model,
    ModelDims,
    Prediction,
    SparseVector,
    activate,
    gradient_scalar,
    item_factor_sum,
    linear_score,
    loss_value,
    predict,
    score,
    user_factor_sum,
)
from .errors import (
    ConfigError,
    CorruptBufferError,
    DimensionMismatchError,
    DivergenceError,
    FeatureError,
    FmfError,
    InvalidLabelError,
    ModelFileError,
    ParseError,
)
from .metrics import eval_logloss, eval_pairacc, eval_rmse
from .pipeline import (
    BufferInfo,
    format_instance,
    load_model,
    make_buffer,
    parse_line,
    prefetch,
    read_buffer,
    read_buffer_header,
    save_model,
    shuffle_file,
    write_buffer,
)
from .trainer import (
    FeedbackBlock,
    TrainConfig,
    TrainReport,
    group_blocks,
    init_model,
    sgd_step,
    train_block,
    train_epoch,
)

__version__ = "0.1.0"
