"""GSECnet ground segmentation pipeline (C++ core)."""

from ._core import (
    DataError,
    Error,
    complexity,
    estimate_normals,
    focal_loss,
    pillarize,
    read_label_records,
    read_scan,
    run_cli,
    scores,
    section_weights,
    semantic_class,
    synthetic_frame,
    undersample,
    write_scan,
)

__all__ = [
    "DataError",
    "Error",
    "complexity",
    "estimate_normals",
    "focal_loss",
    "pillarize",
    "read_label_records",
    "read_scan",
    "run_cli",
    "scores",
    "section_weights",
    "semantic_class",
    "synthetic_frame",
    "undersample",
    "write_scan",
]
