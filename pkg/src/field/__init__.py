"""
Image-conditioned implicit field
"""
from .decoder import FieldOutput, SharedDecoder, TwoBranchDecoder, TwoStageDecoder, make_decoder
from .hash_encoding import HashEncoder, hash_index
from .model import SpiderModel
from .sampler import sample_point_features

__all__ = [
    "HashEncoder",
    "hash_index",
    "sample_point_features",
    "SharedDecoder",
    "TwoBranchDecoder",
    "TwoStageDecoder",
    "make_decoder",
    "FieldOutput",
    "SpiderModel",
]
