from .export import ExportError, ExportResult, ExportSpec, export_backbone, supported_models
from .verify import ParityReport, verify_export

__all__ = [
    "ExportError",
    "ExportResult",
    "ExportSpec",
    "ParityReport",
    "export_backbone",
    "supported_models",
    "verify_export",
]
