"""maskrefine: upgrade coarse segmentation label maps to fine-boundary ones.

The pipeline pairs a per-object local refinement stage (confidence-map
prompts plus cascaded decoding) with an image-wide proposal stage (point
grid, NMS, category voting) on top of any promptable segmenter backend.
"""
from .core import (
    BinaryMask,
    BoxPrompt,
    ConfidenceMap,
    DownsampledMask,
    FeatureMap,
    ForegroundFeatureSet,
    GridSpec,
    Image,
    LabelMap,
    MaskProposal,
    PointPrompt,
    PromptSet,
    downsample_mask,
    load_image,
    load_label_map,
    save_image,
    save_label_map,
    split_by_class,
)
from .errors import MaskRefineError
from .global_fuse import (
    CropBox,
    GlobalProposalSet,
    category_vote_fuse,
    generate_crop_boxes,
    generate_grid,
    image_wide_segment,
)
from .local_refine import (
    ObjectPrompts,
    RefinementResult,
    build_confidence_map,
    cascaded_refine,
    refine_object,
    select_box,
    select_points,
)
from .maskops import (
    Component,
    boundary_band,
    connected_components,
    largest_component_containing,
    mask_iou,
    nms_filter,
)
from .metrics import ConfusionMatrix, EvalReport, confusion, evaluate, miou
from .pipeline import PipelineConfig, run_eval, run_refine, run_stats
from .segmenter import DecodeRequest, OracleBackend, OracleScene, SegmenterBackend
from .synth import CorruptionSpec, SceneSpec, SplitMix64, generate_scene
from .wire import BridgeBackend, decode_frame, encode_frame

__version__ = "0.1.0"
