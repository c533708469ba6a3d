"""Closed-loop sparse channel estimation for wideband hybrid planar-array links."""

from .array_model import ArrayGeometry, ChannelRealization, PathSet, freq_channel, sample_pathset
from .errors import ConsistencyError, DomainError, EstimationError
from .mdu_esprit import FrequencyEstimates, MduEsprit, SmoothingPlan, estimate_frequencies
from .pipeline import ChannelEstimate, downlink_estimate, ml_pair_and_gains, reconstruct_channel, uplink_estimate

__all__ = [
    "ArrayGeometry", "ChannelRealization", "PathSet", "freq_channel", "sample_pathset",
    "ConsistencyError", "DomainError", "EstimationError",
    "FrequencyEstimates", "MduEsprit", "SmoothingPlan", "estimate_frequencies",
    "ChannelEstimate", "downlink_estimate", "ml_pair_and_gains", "reconstruct_channel", "uplink_estimate",
]
