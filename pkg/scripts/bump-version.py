#!/usr/bin/env python3
"""Bump the deepcso version in pyproject.toml and src/deepcso/__init__.py.

Usage: python scripts/bump-version.py <new-version>
Example: python scripts/bump-version.py 0.2.0

Validate with: uv run pytest tests/test_version.py
"""

from __future__ import annotations

import re
import sys
from pathlib import Path

ROOT = Path(__file__).resolve().parents[1]
TARGETS = {
    ROOT / "pyproject.toml": re.compile(r'^(version\s*=\s*")(\d+\.\d+\.\d+)(")', re.MULTILINE),
    ROOT / "src" / "deepcso" / "__init__.py": re.compile(r'^(__version__\s*=\s*")(\d+\.\d+\.\d+)(")', re.MULTILINE),
}


def current_version() -> str:
    path = ROOT / "pyproject.toml"
    match = TARGETS[path].search(path.read_text())
    if not match:
        sys.exit("Error: could not find version in pyproject.toml")
    return match.group(2)


def rewrite(path: Path, pattern: re.Pattern[str], new: str) -> None:
    text, count = pattern.subn(rf"\g<1>{new}\g<3>", path.read_text(), count=1)
    if count != 1:
        sys.exit(f"Error: no version string in {path.relative_to(ROOT)}")
    path.write_text(text)
    print(f"  Updated {path.relative_to(ROOT)}")


def main() -> None:
    if len(sys.argv) != 2 or not re.fullmatch(r"\d+\.\d+\.\d+", sys.argv[1]):
        print(f"Current version: {current_version()}", file=sys.stderr)
        sys.exit(f"Usage: {sys.argv[0]} <X.Y.Z>")
    new = sys.argv[1]
    old = current_version()
    if old == new:
        sys.exit(f"Version is already {new}")

    print(f"Bumping version: {old} -> {new}")
    for path, pattern in TARGETS.items():
        rewrite(path, pattern, new)
    print("\nDone. Validate with:\n  uv run pytest tests/test_version.py")


if __name__ == "__main__":
    main()
