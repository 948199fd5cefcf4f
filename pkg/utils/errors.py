"""
Exception hierarchy for the CDF toolkit.

User-facing failures (bad config, missing stage output, bad input data) derive
from CDFError so the command line can map them to exit code 2. Shape and
programming errors inside the numerical engine stay plain ValueError.
"""


class CDFError(Exception):
    """Base class for errors caused by user input, config or data."""


class ConfigError(CDFError, ValueError):
    """Malformed or inconsistent run configuration."""


class DataError(CDFError, ValueError):
    """Input data that cannot be used (bad WAV, misaligned streams, too little speech)."""


class MissingStageError(CDFError, FileNotFoundError):
    """
    A pipeline stage whose output is required has not been produced yet.

    Attributes:
        stage (str): Name of the stage whose model or factor cache is absent
    """

    def __init__(self, stage: str, detail: str = "") -> None:
        self.stage = stage
        message = f"stage '{stage}' has not been run"
        if detail:
            message = f"{message}: {detail}"
        super().__init__(message)
