"""Trace exporter: checkpoints in, certified-evaluation trace files out."""

from .export import ExportJob, export_records, export_trace
from .formats import (
    Corpus,
    TraceRecords,
    checkpoint_size,
    read_corpus,
    subsample_positions,
    write_trace,
)
from .models import EchoStub, HuggingFaceModel, UniformStub, load_model

__version__ = "0.1.0"
