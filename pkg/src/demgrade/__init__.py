"""Dementia-level classification from MRI slices with watershed features
and random forest, polynomial SVM and small-CNN classifiers."""

from .errors import (
    ArgumentError,
    CorruptModelError,
    DecodeError,
    DemgradeError,
    EmptyDatasetError,
    MarkerError,
    PathError,
    ShapeError,
    StratifyError,
    VersionError,
)

__version__ = "0.1.0"
