"""Logging constants: module map, colors."""

from __future__ import annotations

# ---------------------------------------------------------------------------
# Module color / abbreviation map
# ---------------------------------------------------------------------------

MODULE_MAP: dict[str, tuple[str, str]] = {
    "diffmath":     ("DIF", "\033[90m"),
    "camera":       ("CAM", "\033[96m"),
    "scene":        ("SCN", "\033[94m"),
    "render":       ("RND", "\033[92m"),
    "depthsup":     ("DEP", "\033[38;5;208m"),
    "adversary":    ("ADV", "\033[91m"),
    "trainer":      ("TRN", "\033[93m"),
    "evalkit":      ("EVL", "\033[95m"),
    "dataset":      ("DAT", "\033[38;5;39m"),
    "checkpoint":   ("CKP", "\033[38;5;147m"),
    "experiments":  ("EXP", "\033[38;5;117m"),
    "cli":          ("CLI", "\033[38;5;248m"),
    "config":       ("CFG", "\033[38;5;243m"),
}

RESET = "\033[0m"
DIM = "\033[2m"

LEVEL_COLORS: dict[str, str] = {
    "DEBUG":    "\033[90m",
    "INFO":     "\033[0m",
    "WARNING":  "\033[33m",
    "ERROR":    "\033[31m",
    "CRITICAL": "\033[97;41m",
}


def module_key(name: str) -> str:
    """Extract last dotted segment: 'tridepth.render' -> 'render'."""
    return name.rsplit(".", 1)[-1]
