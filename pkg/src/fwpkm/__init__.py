"""Fast-weight product key memory."""

from .errors import (
    ArgumentError,
    ConfigMismatchError,
    DimensionError,
    FwPKMError,
    NumericError,
    StorageError,
)
from .memory import MemoryConfig, MemoryState, RetrievalResult, WriteRecord, init, load, retrieve, save
from .product_key import Selection, SubScores, select, split_query, score_dot, score_idw
from .updater import ChunkBatch, UpdateReport, update_chunk

__version__ = "0.1.0"
