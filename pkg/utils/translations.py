"""
Translation utilities for the CDF toolkit.

This module loads the message catalogs the command line prints from.
"""

import json
from functools import lru_cache
from pathlib import Path
from typing import Any, Dict

LOCALS_DIR = Path(__file__).resolve().parent.parent / "locals"


@lru_cache(maxsize=None)
def load_translation(language_code: str = "en") -> Dict[str, Any]:
    """
    Load the message catalog for the specified language.

    Args:
        language_code: ISO 639-1 language code (e.g., 'en')

    Returns:
        dict: Catalog with Commands, Options, Messages and Errors sections

    Raises:
        FileNotFoundError: If the catalog doesn't exist
        json.JSONDecodeError: If the catalog is malformed
    """
    translation_path = LOCALS_DIR / f"{language_code}.json"

    if not translation_path.exists():
        raise FileNotFoundError(f"Translation file not found: {translation_path}")

    with open(translation_path, "r", encoding="utf-8") as f:
        return json.load(f)


def message(section: str, key: str, language_code: str = "en", **values: Any) -> str:
    """
    Look up a catalog entry and fill in its placeholders.

    Args:
        section: Catalog section (e.g., 'Messages')
        key: Entry name
        language_code: Catalog language
        **values: Placeholder values

    Returns:
        str: Formatted text
    """
    return load_translation(language_code)[section][key].format(**values)
