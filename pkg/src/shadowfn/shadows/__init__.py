"""Random-Clifford classical shadows for determinant overlaps."""

from .archive import ArchiveMismatch, ShadowArchive, ShadowConfig, ShadowRecord, collect_shadows
from .estimator import OverlapOracle, estimate_overlap, estimate_overlaps, overlap_oracle, record_estimates
from .tableau import ClassicalPrefix, CliffordTableau, clifford_to_circuit, sample_clifford, stabilizer_amplitude

__all__ = [
    "ArchiveMismatch",
    "ClassicalPrefix",
    "CliffordTableau",
    "OverlapOracle",
    "ShadowArchive",
    "ShadowConfig",
    "ShadowRecord",
    "clifford_to_circuit",
    "collect_shadows",
    "estimate_overlap",
    "estimate_overlaps",
    "overlap_oracle",
    "record_estimates",
    "sample_clifford",
    "stabilizer_amplitude",
]
