"""Scene question generation, validation and balancing."""

from .models import (BINARY_CATEGORIES, DEFAULT_N_TOTAL, EXACT_CATEGORIES, DEFAULT_RATIOS,
                     CategoryQuota, DescribedObject, FrameSample, QACategory, QAItem, QAStatus,
                     SceneDescription)
from .pipeline import (GenerationResult, SamplingPolicy, VQASettings, aggregate_descriptions,
                       balance_questions, category_counts, describe_frame, describe_frames,
                       generate_questions, normalize_binary, sample_keyframes,
                       validate_questions)
from .store import QASet, load_qa_set, store_qa_set

__all__ = [
    "BINARY_CATEGORIES", "DEFAULT_N_TOTAL", "EXACT_CATEGORIES", "DEFAULT_RATIOS", "CategoryQuota",
    "DescribedObject", "FrameSample", "QACategory", "QAItem", "QAStatus", "SceneDescription",
    "GenerationResult", "SamplingPolicy", "VQASettings", "aggregate_descriptions",
    "balance_questions", "category_counts", "describe_frame", "describe_frames",
    "generate_questions", "normalize_binary", "sample_keyframes", "validate_questions",
    "QASet", "load_qa_set", "store_qa_set",
]
