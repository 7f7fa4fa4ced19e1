"""Render SCENARIOS-*.md from the approved CLI scenario output.

A suite's conftest.py calls ``generate_report()`` at session end. Approved
files are named ``TestSection_N.test_M_title.approved.txt``: ``N`` orders the
sections, ``M`` orders scenarios inside one, and both numbers are stripped
from the headings.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path

AUTOGEN_HEADER = "> Generated from the approved scenario files; edit those, then re-run `pytest`.\n"
UNORDERED = 999
APPROVED_RE = re.compile(r"^(?:(?P<cls>Test\w*?)(?:_(?P<section>\d+))?\.)?(?P<test>test_\w+)\.approved\.txt$")


@dataclass(frozen=True)
class ApprovedScenario:
    section: str
    section_order: int
    order: int
    title: str
    path: Path


def _heading(class_name: str | None) -> str:
    if not class_name:
        return "Other"
    words = re.sub(r"(?<=[a-z])(?=[A-Z])|(?<=[A-Z])(?=[A-Z][a-z])", " ", class_name.removeprefix("Test"))
    return words.replace(" And ", " & ")


def parse_approved_name(path: Path) -> ApprovedScenario | None:
    match = APPROVED_RE.match(path.name)
    if match is None:
        return None
    test = match["test"]
    numbered = re.match(r"test_(\d+)_(.*)", test)
    order, title = (int(numbered[1]), numbered[2]) if numbered else (UNORDERED, test.removeprefix("test_"))
    return ApprovedScenario(
        section=_heading(match["cls"]),
        section_order=int(match["section"]) if match["section"] else UNORDERED,
        order=order,
        title=title.replace("_", " ").capitalize(),
        path=path,
    )


def fence(content: str) -> str:
    """A backtick fence longer than any backtick run in ``content``."""
    longest = max((len(run) for run in re.findall(r"`+", content)), default=0)
    return "`" * max(3, longest + 1)


def generate_report(*, title: str, approved_dir: Path, output_path: Path) -> None:
    scenarios = [s for s in map(parse_approved_name, sorted(approved_dir.glob("*.approved.txt"))) if s is not None]
    if not scenarios:
        return
    scenarios.sort(key=lambda s: (s.section_order, s.section, s.order))

    lines = [f"# {title}\n", AUTOGEN_HEADER]
    section = None
    for number, s in enumerate(scenarios, start=1):
        if s.section != section:
            section = s.section
            lines.append(f"\n## {section}\n")
        content = s.path.read_text().strip()
        marks = fence(content)
        lines.append(f"### {number}. {s.title}\n")
        lines.append(f"{marks}\n{content}\n{marks}\n")
    output_path.write_text("\n".join(lines) + "\n")
