"""Prompt template loading and rendering.

Templates are plain text files with ``string.Template`` placeholders. The
package ships defaults under ``hyporefine/prompts``; a directory of
overrides may shadow any subset of them. Core code never hard-codes prompt
prose.
"""

from __future__ import annotations

import hashlib
import string
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

TEMPLATE_NAMES = (
    "propose",
    "refine",
    "compare",
    "aggregate",
    "recombine",
    "ambiguate",
    "decompose",
    "score",
)


class TemplateError(Exception):
    """Raised when a template is missing or a placeholder is unbound."""


def _builtin_text(name: str) -> str:
    ref = resources.files("hyporefine").joinpath(f"prompts/{name}.txt")
    return ref.read_text(encoding="utf-8")


@dataclass(frozen=True)
class TemplateSet:
    """A resolved set of prompt templates plus their content hashes."""

    texts: dict[str, str] = field(default_factory=dict)

    @classmethod
    def load(cls, override_dir: str | Path | None = None) -> "TemplateSet":
        texts = {}
        for name in TEMPLATE_NAMES:
            path = Path(override_dir) / f"{name}.txt" if override_dir else None
            if path is not None and path.exists():
                texts[name] = path.read_text(encoding="utf-8")
            else:
                texts[name] = _builtin_text(name)
        return cls(texts=texts)

    def render(self, name: str, **values: str) -> str:
        if name not in self.texts:
            raise TemplateError(f"unknown template: {name}")
        try:
            return string.Template(self.texts[name]).substitute(**values)
        except KeyError as exc:
            raise TemplateError(f"template {name!r} missing value for {exc}") from exc

    def hashes(self) -> dict[str, str]:
        """sha256 of each template, recorded in run manifests for replay."""
        return {
            name: hashlib.sha256(text.encode("utf-8")).hexdigest()
            for name, text in sorted(self.texts.items())
        }
