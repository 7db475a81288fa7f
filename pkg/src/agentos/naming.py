"""Identifier grammar and name-mangling helpers."""

from __future__ import annotations

import re

# Grammar shared by tool names, parameter names, event names and keys.
IDENT_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_]*")

# {key} placeholders; doubled braces escape a literal brace.
PLACEHOLDER_RE = re.compile(r"\{([A-Za-z_][A-Za-z0-9_]*)\}")


def is_identifier(name: str) -> bool:
    return bool(IDENT_RE.fullmatch(name))


def snake_case(name: str) -> str:
    """Mangle a display name into an identifier: "Web Agent" -> "web_agent"."""
    out = re.sub(r"[^A-Za-z0-9]+", "_", name.strip()).strip("_").lower()
    if not out:
        out = "agent"
    if out[0].isdigit():
        out = "_" + out
    return out


def placeholders(text: str) -> list[str]:
    """Placeholder keys in ``text``, in order, ignoring {{ }} escapes."""
    masked = text.replace("{{", "\x00\x00").replace("}}", "\x01\x01")
    return PLACEHOLDER_RE.findall(masked)
