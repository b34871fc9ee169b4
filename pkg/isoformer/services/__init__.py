"""
Services for IsoFormer.

This package contains the orchestration layer used by the command-line
entry point: experiment runs (dataset building, synthesis, training,
evaluation, ablations) and attention analysis.
"""

from .analysis_service import AnalysisService
from .experiment_service import ExperimentService, apply_runtime_settings

__all__ = [
    'AnalysisService',
    'ExperimentService',
    'apply_runtime_settings',
]
