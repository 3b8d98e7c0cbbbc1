"""
Data validation utilities for restoration datasets
Checks volumes, slice pairs and whole datasets before they reach training
"""
from typing import Any, Dict, List, Optional

import numpy as np

from ..utils.errors import ValidationError
from ..utils.logging_config import get_logger
from .dataset import PairedDataset
from .volume import Volume

logger = get_logger(__name__)


class ValidationResult:
    """Result of a validation operation"""

    def __init__(self, is_valid: bool = True, errors: List[str] = None, warnings: List[str] = None):
        self.is_valid = is_valid
        self.errors = errors or []
        self.warnings = warnings or []

    def add_error(self, error: str):
        """Add a validation error"""
        self.errors.append(error)
        self.is_valid = False

    def add_warning(self, warning: str):
        """Add a validation warning"""
        self.warnings.append(warning)

    def merge(self, other: "ValidationResult", prefix: str = "") -> "ValidationResult":
        for error in other.errors:
            self.add_error(f"{prefix}{error}")
        for warning in other.warnings:
            self.add_warning(f"{prefix}{warning}")
        return self

    def raise_for_errors(self, what: str = "data") -> "ValidationResult":
        if not self.is_valid:
            raise ValidationError(f"Invalid {what}: {'; '.join(self.errors)}", errors=self.errors)
        return self

    def to_dict(self) -> Dict[str, Any]:
        """Convert to dictionary"""
        return {
            'is_valid': self.is_valid,
            'errors': self.errors,
            'warnings': self.warnings
        }


class VolumeValidator:
    """Validator for a single volume"""

    def __init__(self, divisor: Optional[int] = None, require_nonnegative: bool = False):
        self.divisor = divisor
        self.require_nonnegative = require_nonnegative

    def validate(self, volume: Volume) -> ValidationResult:
        """
        Validate a volume against geometry and intensity expectations

        Args:
            volume: Volume to check

        Returns:
            ValidationResult object
        """
        result = ValidationResult()
        voxels = volume.voxels

        if volume.spacing is None:
            result.add_warning("Voxel spacing is unknown; smoothing will be unavailable")
        elif any(s <= 0 for s in volume.spacing):
            result.add_error(f"Non-positive voxel spacing: {volume.spacing}")

        if self.divisor:
            _, rows, cols = voxels.shape
            if rows % self.divisor or cols % self.divisor:
                result.add_warning(
                    f"Slice plane {rows}x{cols} is not divisible by {self.divisor}; it will be padded"
                )

        negative = int(np.count_nonzero(voxels < 0))
        if negative:
            message = f"{negative} negative voxels"
            if self.require_nonnegative:
                result.add_error(message)
            else:
                result.add_warning(message)

        if not np.any(voxels):
            result.add_warning("Volume is all zeros")

        return result


class DatasetValidator:
    """Validator for a paired multi-domain dataset"""

    def __init__(self, divisor: Optional[int] = None):
        self.volume_validator = VolumeValidator(divisor=divisor, require_nonnegative=True)

    def validate(self, dataset: PairedDataset) -> ValidationResult:
        result = ValidationResult()

        if not dataset.training_domains:
            result.add_error("Dataset has no training domains")

        indices = sorted(d.spec.index for d in dataset.training_domains)
        if indices != list(range(len(indices))):
            result.add_error(f"Training domain indices must be 0..N-1, got {indices}")

        for domain in dataset.training_domains:
            if not domain.subjects_in("train"):
                result.add_error(f"Domain '{domain.spec.name}' has no training subjects")
            if not domain.subjects_in("val"):
                result.add_warning(f"Domain '{domain.spec.name}' has no validation subjects")

        for domain in dataset.domains:
            for subject in domain.subjects:
                prefix = f"{domain.spec.name}/{subject.subject_id}: "
                if subject.short.shape != subject.standard.shape:
                    result.add_error(
                        f"{prefix}short {subject.short.shape} and standard {subject.standard.shape} differ"
                    )
                result.merge(self.volume_validator.validate(subject.standard), prefix)

        if result.warnings:
            logger.warning("dataset_warnings", count=len(result.warnings), first=result.warnings[0])
        return result
