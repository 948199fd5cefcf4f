"""
Utility modules for the CDF toolkit.

This package contains:
- Signal processing (WAV input, filterbanks, splicing, CMVN)
- The numpy network engine and its training loop
- Stage networks, the cascade and spectrum reconstruction
- Synthetic corpora, evaluation and report emission
- Storage (binary formats, manifests, configuration)
- Translations (the message catalog of the command line)
"""

from .errors import CDFError, ConfigError, DataError, MissingStageError
from .translations import load_translation, message
from .storage import (
    load_config,
    default_config,
    save_config,
    load_manifest,
    save_manifest,
    load_features,
    save_features,
    load_network,
    save_network,
)

__all__ = [
    # Errors
    "CDFError",
    "ConfigError",
    "DataError",
    "MissingStageError",
    # Translations
    "load_translation",
    "message",
    # Storage
    "load_config",
    "default_config",
    "save_config",
    "load_manifest",
    "save_manifest",
    "load_features",
    "save_features",
    "load_network",
    "save_network",
]
