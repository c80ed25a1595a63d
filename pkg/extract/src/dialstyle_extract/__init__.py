"""Feature-extraction toolkit emitting the engine's portable file formats."""

from .backends import Backend, BackendUnavailable, hashed_backend
from .extractor import (
    ExtractorConfig,
    extract_corpus,
    extract_dialogue_bundle,
    extract_speaker_table,
    load_dialogues,
)
from .refweights import gen_reference_weights
from .sdeb import RawBundle, SdebError, validate_bundles, write_bundles, write_tensors

__version__ = "0.1.0"
