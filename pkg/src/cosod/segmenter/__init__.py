from .crf import CrfConfig, dense_crf
from .pipeline import GroupSegmentation, SegmentConfig, dump_intermediates, segment_group
from .regions import RefineConfig, RefineResult, area_downsample, connected_components, refine_regions
from .threshold import CatConfig, adaptive_threshold, confidence_stats, fixed_threshold

__all__ = [
    "CatConfig",
    "CrfConfig",
    "GroupSegmentation",
    "RefineConfig",
    "RefineResult",
    "SegmentConfig",
    "adaptive_threshold",
    "area_downsample",
    "confidence_stats",
    "connected_components",
    "dense_crf",
    "dump_intermediates",
    "fixed_threshold",
    "refine_regions",
    "segment_group",
]
