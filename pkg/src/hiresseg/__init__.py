"""Segmentation-side pipeline: region attention, mask pooling/enhancement, dual-score selection."""
from .encoder import FeatureMaps, load_features, pseudo_encode
from .errors import (
    ConfigError,
    DegenerateMaskError,
    FormatError,
    HiResSegError,
    NumericError,
    TrainingError,
)
from .geometry import GridConfig, make_views, region_index
from .hre import HreParams, hre_forward
from .hrp import AttentionParams, HybridFeatures, fuse, hrp_forward, mask_pool, region_attention
from .objectives import EvalReport, LossConfig, evaluate, iop, iou, loss_sim, loss_sup, loss_total
from .selection import SelectionHeads, SelectionOutcome, Strategy, project_seg, score, select
from .tensor_io import read_tensor, write_tensor

__version__ = "0.1.0"
