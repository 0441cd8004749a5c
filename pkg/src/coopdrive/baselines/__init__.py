"""Comparison policies and observation variants."""
from .observation import (
    EARLY_FUSION_POINT_CAP,
    ObservationBundle,
    ObservationSchema,
    ObservationVariant,
    SensingConfig,
    assemble,
    build_observation,
    centralised_state,
    early_fusion_bandwidth,
    encoder_input,
    exchange,
    fuse_scans,
    metadata_vector,
    parse_variant,
    sense,
)
from .ttc import TtcController, TtcParams, route_crossings, ttc_policy

__all__ = [
    "EARLY_FUSION_POINT_CAP", "ObservationBundle", "ObservationSchema", "ObservationVariant", "SensingConfig",
    "TtcController", "TtcParams", "assemble", "build_observation", "centralised_state", "early_fusion_bandwidth",
    "encoder_input", "exchange", "fuse_scans", "metadata_vector", "parse_variant", "route_crossings", "sense",
    "ttc_policy",
]
