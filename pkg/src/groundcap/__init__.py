"""Grounding-feature adapter for frozen language models, with its evaluation toolkit."""

from .adapter import (
    AdapterConfig,
    FeatureAdapter,
    FeatureBundle,
    ProjectionOnly,
    adapter_forward,
    compress_tokens,
    fuse,
    integrate_tokens,
    project,
)
from .dataset import (
    BBox,
    Sample,
    SyntheticSpec,
    compute_stats,
    gen_synthetic_dataset,
    load_annotations,
    save_annotations,
    stratified_split,
)
from .grounding import FeatureShape, GroundingRequest, generate_features, load_features, save_features
from .language import TinyLM, Vocab, build_vocab, caption_loss, generate, lm_forward, prepare_lm
from .metrics import Detection, GroundTruth, evaluate_captions, mean_ap
from .training import TrainConfig, TrainItem, freeze_audit, lr_at, run_ablation, train_adapter
from .verify import build_structured_prompt, cross_verify, export_review_queue

__version__ = "0.1.0"
