"""Convert mainstream ML checkpoints into weightprov container + manifest files."""

from .exporter import (
    ExportError,
    ExportSpec,
    MissingTensorError,
    UnknownFamilyError,
    export_checkpoint,
    load_template,
    read_checkpoint,
)

__version__ = "0.1.0"
