"""IoU-based payoff sampling for box coordinates, detection metrics and a toy coordinate trainer."""
from .dataset import AnnotationRecord, DatasetError, UIElement, load_records, write_augmented
from .geometry import BBox, InvalidBoxError, Point, RawBBox, iou
from .metrics import DEFAULT_THRESHOLDS, EvalReport, click_accuracy, evaluate, prf
from .payoff import DiscreteDistribution, PayoffBins, bin_payoff, exact_payoff, reward_index
from .sampler import AugmentationConfig, SamplingError, augment_bbox, derive_stream, replicate

__version__ = "0.1.0"

__all__ = [
    "AnnotationRecord", "AugmentationConfig", "BBox", "DEFAULT_THRESHOLDS", "DatasetError",
    "DiscreteDistribution", "EvalReport", "InvalidBoxError", "PayoffBins", "Point", "RawBBox",
    "SamplingError", "UIElement", "augment_bbox", "bin_payoff", "click_accuracy", "derive_stream",
    "evaluate", "exact_payoff", "iou", "load_records", "prf", "replicate", "reward_index",
    "write_augmented",
]
