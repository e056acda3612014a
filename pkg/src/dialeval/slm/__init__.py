"""The dual-encoder small language model (SLM) and its single-pair operations."""

from .features import Featurizer, GraphInput, ShapeError, SlmBatch, TokenSequence, Vocab, collate, tokenize
from .model import GraphEncoder, RelationAttention, SelfAttention, SequenceEncoder, SlmModel, SlmOutput
from .ops import (
    AttentionMap,
    FusedRepresentation,
    GraphStates,
    SequenceStates,
    SlmScore,
    classify,
    encode_graph,
    encode_sequence,
    export_attention_maps,
    fuse_gate,
    load_checkpoint,
    save_checkpoint,
    score_pair,
    score_pairs,
    write_attention_bundle,
)
