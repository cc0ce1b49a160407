"""Versioned prompt templates.

Each template is a plain-text file with a ``<<SYSTEM>>`` and a ``<<USER>>``
section; ``$name`` placeholders are filled via ``string.Template`` so literal
JSON braces need no escaping. ``render`` returns the template's content hash
alongside the text so dataset lineage can pin the exact prompt version.
"""

from __future__ import annotations

import hashlib
from functools import lru_cache
from importlib import resources
from string import Template

_SYSTEM_MARK = "<<SYSTEM>>"
_USER_MARK = "<<USER>>"


@lru_cache(maxsize=None)
def _load(template_id: str) -> tuple[str, str, str]:
    raw = resources.files(__package__).joinpath(f"{template_id}.txt").read_text("utf-8")
    if _SYSTEM_MARK not in raw or _USER_MARK not in raw:
        raise ValueError(f"template {template_id!r} is missing section markers")
    system_part, user_part = raw.split(_USER_MARK, 1)
    system = system_part.replace(_SYSTEM_MARK, "", 1).strip()
    user = user_part.strip()
    digest = hashlib.sha256(raw.encode("utf-8")).hexdigest()[:16]
    return system, user, digest


def template_hash(template_id: str) -> str:
    return _load(template_id)[2]


def render(template_id: str, **values: str) -> tuple[str, str, str]:
    """Render a template; returns (system, user, template_hash)."""
    system, user, digest = _load(template_id)
    return Template(system).substitute(**values), Template(user).substitute(**values), digest
