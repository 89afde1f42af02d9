"""Multi-scale cytology slide classification pipeline.

Region-driven x34 augmentation, curriculum-ordered training with a
class-weighted loss, a multi-region attention head, metrics and Grad-CAM.
"""
__version__ = "0.1.0"

from .core import ClassLabel, ImageRecord, PredictionVector, Split, SplitSpec  # noqa: E402

__all__ = ["ClassLabel", "ImageRecord", "PredictionVector", "Split", "SplitSpec", "__version__"]
