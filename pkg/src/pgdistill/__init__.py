"""Quality-guided foreground weighting and distillation losses for dense
detector tensors, with a normative on-disk bundle format and CLI."""

from .attention import (
    AttentionPair,
    BackgroundMask,
    attention_pair,
    background_mask,
    channel_attention,
    spatial_attention,
)
from .core import (
    Box,
    DistillConfig,
    FeatureTensor,
    LevelGeometry,
    PredictionField,
    SceneBundle,
    ValidationError,
    box_cell_mask,
    cell_center,
    point_in_box,
)
from .evaluate import (
    DEFAULT_IOU_THRESHOLDS,
    Detection,
    MaskoutCurve,
    average_precision,
    iou,
    maskout_experiment,
    nms,
)
from .losses import (
    LossGradients,
    LossReport,
    att_cls_loss,
    att_reg_loss,
    fea_cls_loss,
    fea_reg_loss,
    finite_difference_gradients,
    loss_gradients,
    max_relative_gradient_error,
    total_loss,
)
from .pgw import (
    GaussianFit,
    RankedPosition,
    WeightMask,
    WeightStrategy,
    fit_gaussian,
    importance,
    merge_importance,
    normalize_mask,
    pgw_mask,
    select_topk,
    strategy_mask,
)
from .quality import (
    QualityField,
    box_quality,
    object_quality_field,
    quality_fields,
    quality_heatmap,
)
from .synth import GenerationError, SynthSpec, generate_bundle
from .tensor_io import (
    FormatError,
    read_array,
    read_bundle,
    read_tensor,
    write_array,
    write_bundle,
    write_tensor,
)

__version__ = "0.1.0"
