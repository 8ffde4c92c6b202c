"""Prompt templates ship as editable text files; this module resolves and
renders them."""

from __future__ import annotations

from pathlib import Path

from .errors import ConfigError

PACKAGE_TEMPLATES = Path(__file__).parent / "templates"

LANGUAGE_NAMES = {
    "en": "English",
    "de": "German",
    "fr": "French",
    "ru": "Russian",
    "ja": "Japanese",
    "ko": "Korean",
    "fi": "Finnish",
    "hi": "Hindi",
    "fa": "Persian",
}


def language_name(code: str) -> str:
    return LANGUAGE_NAMES.get(code.lower(), code)


def load_template(name: str, templates_dir: str | Path | None = None) -> str:
    """Load `<name>.txt`, preferring `templates_dir` over the packaged set."""
    candidates = []
    if templates_dir is not None:
        candidates.append(Path(templates_dir) / f"{name}.txt")
    candidates.append(PACKAGE_TEMPLATES / f"{name}.txt")
    for path in candidates:
        if path.is_file():
            return path.read_text(encoding="utf-8")
    raise ConfigError(f"template {name!r} not found (looked in {[str(p) for p in candidates]})")


def render(template: str, slots: dict[str, str]) -> str:
    try:
        return template.format_map(slots)
    except KeyError as exc:
        raise ConfigError(f"template references unknown slot {exc}") from None
