"""Linear-complexity anchor attention with an exact softmax baseline."""

__version__ = "0.1.0"

from .anchor import (
    DEFAULT_ANCHORS,
    AffinityState,
    AnchorParams,
    MultiHeadParams,
    TransferMatrix,
    anchor_affinity,
    anchor_attention_explicit,
    anchor_attention_fast,
    anchor_fixed_point_step,
    build_transfer_matrix,
    init_anchors,
    init_multi_head,
    multi_head_attention,
    refine_anchors,
    surrogate_objective,
    token_similarity,
)
from .reference import AttentionInputs, ProjectionWeights, project_tokens, vanilla_attention, vanilla_flops

__all__ = [
    "DEFAULT_ANCHORS",
    "AffinityState",
    "AnchorParams",
    "AttentionInputs",
    "MultiHeadParams",
    "ProjectionWeights",
    "TransferMatrix",
    "anchor_affinity",
    "anchor_attention_explicit",
    "anchor_attention_fast",
    "anchor_fixed_point_step",
    "build_transfer_matrix",
    "init_anchors",
    "init_multi_head",
    "multi_head_attention",
    "project_tokens",
    "refine_anchors",
    "surrogate_objective",
    "token_similarity",
    "vanilla_attention",
    "vanilla_flops",
]
