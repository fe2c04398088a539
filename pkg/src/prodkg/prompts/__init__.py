"""Frozen prompt templates, one text file per stage.

Replay fixtures are keyed on the exact prompt text, so editing a template
invalidates recorded fixtures. Changes go into a new version directory.
"""

from __future__ import annotations

from functools import lru_cache
from importlib import resources
from string import Template

PROMPT_VERSION = "v1"


@lru_cache(maxsize=None)
def _template(name: str, version: str) -> Template:
    text = resources.files(__name__).joinpath(version, f"{name}.txt").read_text(encoding="utf-8")
    # Only the final newline is dropped; the unit prompt relies on its trailing space.
    return Template(text.removesuffix("\n"))


def render(name: str, version: str = PROMPT_VERSION, **values: str) -> str:
    return _template(name, version).substitute(values)
