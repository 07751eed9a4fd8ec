from .events import VulnEvent, QueueSeries, parse_trace, parse_trace_text, reconstruct_queue, write_trace
from .segmentation import QLDSegmenter, Segmentation, segment_qld
from .model import SegmentModel, SegmentedFit, SegmentedQueueModel, fit_segment, validate_model
from .synthetic import Regime, SyntheticTrace, regime_trace, two_regime_trace, stationary_trace

__all__ = [
    "VulnEvent", "QueueSeries", "parse_trace", "parse_trace_text", "reconstruct_queue", "write_trace",
    "QLDSegmenter", "Segmentation", "segment_qld",
    "SegmentModel", "SegmentedFit", "SegmentedQueueModel", "fit_segment", "validate_model",
    "Regime", "SyntheticTrace", "regime_trace", "two_regime_trace", "stationary_trace",
]
