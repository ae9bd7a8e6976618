"""Parsers for structured model replies.

Every stage demands one fenced code block; prose around it is tolerated
and the last block wins. Inside the block the format is strict: any
violation raises ParseError with a message precise enough to be quoted
back to the model in a repair round.
"""

from __future__ import annotations

import re
from typing import Sequence

from ..datamodel import (
    ContentCategory,
    DdxSource,
    Diagnosis,
    DifferentialDiagnosis,
    EvidenceClustering,
    Fact,
    Importance,
    Omission,
    Polarity,
    SubCluster,
    Summary,
    parse_fact_id,
)

MAX_DDX_ENTRIES = 10


class ParseError(ValueError):
    """A format violation in a model reply; the message is shown to the
    model verbatim when asking for a repair."""


_FENCE_RE = re.compile(r"```[^\n]*\n(.*?)```", re.DOTALL)


def extract_last_fenced_block(text: str) -> str:
    matches = _FENCE_RE.findall(text)
    if not matches:
        raise ParseError("the reply contains no fenced code block")
    return matches[-1].strip("\n")


def _non_empty_lines(block: str) -> list[str]:
    return [line.strip() for line in block.splitlines() if line.strip()]


_TRUNCATION_RE = re.compile(r"^LAST_SUBJECTIVE_TURN:\s*(\d+)$")


def parse_truncation(block: str, n_turns: int) -> int:
    lines = _non_empty_lines(block)
    if len(lines) != 1:
        raise ParseError(
            f"expected exactly one LAST_SUBJECTIVE_TURN line, got {len(lines)} lines"
        )
    match = _TRUNCATION_RE.match(lines[0])
    if not match:
        raise ParseError(
            f"line {lines[0]!r} does not match LAST_SUBJECTIVE_TURN: <turn number>"
        )
    index = int(match.group(1))
    if not 0 <= index < n_turns:
        raise ParseError(
            f"turn number {index} is outside the transcript range 0..{n_turns - 1}"
        )
    return index


_SUMMARY_HEADERS = (
    ("chief_complaint", "CHIEF COMPLAINT"),
    ("history_of_present_illness", "HISTORY OF PRESENT ILLNESS"),
    ("past_social_history", "PAST SOCIAL HISTORY"),
)


def parse_summary(block: str, encounter_id: str) -> Summary:
    upper_lines = [(line, line.strip().upper()) for line in block.splitlines()]
    positions = []
    for key, header in _SUMMARY_HEADERS:
        found = [
            i
            for i, (_, upper) in enumerate(upper_lines)
            if upper.startswith(header + ":")
        ]
        if len(found) != 1:
            raise ParseError(
                f"expected the header {header}: exactly once, found it {len(found)} times"
            )
        positions.append((found[0], key, header))
    if [p[0] for p in positions] != sorted(p[0] for p in positions):
        raise ParseError("summary section headers are out of order")

    sections = {}
    lines = block.splitlines()
    for rank, (start, key, header) in enumerate(positions):
        end = positions[rank + 1][0] if rank + 1 < len(positions) else len(lines)
        first = lines[start].strip()[len(header) + 1 :].strip()
        body_lines = ([first] if first else []) + [
            line.rstrip() for line in lines[start + 1 : end]
        ]
        body = "\n".join(body_lines).strip()
        if body.upper() == "NONE":
            body = ""
        sections[key] = body
    try:
        return Summary(encounter_id=encounter_id, sections=sections)
    except ValueError as exc:
        raise ParseError(str(exc)) from exc


def parse_facts(block: str) -> list[Fact]:
    lines = _non_empty_lines(block)
    if not lines:
        raise ParseError("the fact list is empty")
    facts = []
    for position, line in enumerate(lines):
        if ":" not in line:
            raise ParseError(f"fact line {line!r} has no F<number>: prefix")
        raw_id, rest = line.split(":", 1)
        try:
            fact_id = parse_fact_id(raw_id)
        except ValueError as exc:
            raise ParseError(f"fact line {line!r}: {exc}") from exc
        if fact_id != f"F{position}":
            raise ParseError(
                f"fact ids must be contiguous from F0 in order; line {position} "
                f"has {fact_id} instead of F{position}"
            )
        if "|" not in rest:
            raise ParseError(f"fact line {line!r} has no | <category> suffix")
        text, raw_category = rest.rsplit("|", 1)
        category = raw_category.strip().lower()
        try:
            content_category = ContentCategory(category)
        except ValueError as exc:
            raise ParseError(
                f"unknown content category {category!r} on fact {fact_id}"
            ) from exc
        text = text.strip()
        if not text:
            raise ParseError(f"fact {fact_id} has empty text")
        facts.append(
            Fact(fact_id=fact_id, text=text, content_category=content_category)
        )
    return facts


_DDX_LINE_RE = re.compile(r"^(\d+)\.\s*(.+)$")


def parse_ddx(block: str, encounter_id: str, source: DdxSource) -> DifferentialDiagnosis:
    lines = _non_empty_lines(block)
    if not lines:
        raise ParseError("the differential diagnosis is empty")
    if len(lines) > MAX_DDX_ENTRIES:
        raise ParseError(
            f"{len(lines)} entries exceeds the maximum of {MAX_DDX_ENTRIES}"
        )
    entries = []
    seen_names = set()
    for position, line in enumerate(lines):
        match = _DDX_LINE_RE.match(line)
        if not match:
            raise ParseError(f"line {line!r} does not match <rank>. <condition> | ...")
        rank = int(match.group(1))
        if rank != position + 1:
            raise ParseError(
                f"ranks must start at 1 and increase by 1; line {position + 1} has rank {rank}"
            )
        parts = [part.strip() for part in match.group(2).split("|")]
        if len(parts) != 3:
            raise ParseError(
                f"line {line!r} must have exactly three |-separated fields "
                "(condition, likelihood, rationale)"
            )
        name, raw_likelihood, explanation = parts
        if not name:
            raise ParseError(f"line {line!r} has an empty condition name")
        lowered = name.lower()
        if lowered in seen_names:
            raise ParseError(f"condition {name!r} appears more than once")
        seen_names.add(lowered)
        try:
            likelihood = Diagnosis(
                rank=rank,
                name=name,
                likelihood=raw_likelihood.lower(),
                explanation=explanation,
            )
        except ValueError as exc:
            raise ParseError(
                f"unknown likelihood {raw_likelihood!r} on rank {rank} "
                "(use probable, possible, or unlikely)"
            ) from exc
        entries.append(likelihood)
    try:
        return DifferentialDiagnosis(
            encounter_id=encounter_id, source=source, entries=tuple(entries)
        )
    except ValueError as exc:
        raise ParseError(str(exc)) from exc


_NO_OMISSIONS_RE = re.compile(r"^OMITTED:\s*NONE$", re.IGNORECASE)


def parse_omissions(block: str, known_fact_ids: Sequence[str]) -> list[Omission]:
    lines = _non_empty_lines(block)
    if not lines:
        raise ParseError("the omission list is empty; write OMITTED: NONE if nothing is missing")
    if len(lines) == 1 and _NO_OMISSIONS_RE.match(lines[0]):
        return []
    known = set(known_fact_ids)
    omissions = []
    seen = set()
    for line in lines:
        if _NO_OMISSIONS_RE.match(line):
            raise ParseError("OMITTED: NONE must be the only line when present")
        if ":" not in line:
            raise ParseError(f"omission line {line!r} has no F<number>: prefix")
        raw_id, explanation = line.split(":", 1)
        try:
            fact_id = parse_fact_id(raw_id)
        except ValueError as exc:
            raise ParseError(f"omission line {line!r}: {exc}") from exc
        if fact_id not in known:
            raise ParseError(f"omission references unknown fact {fact_id}")
        if fact_id in seen:
            raise ParseError(f"fact {fact_id} is listed as omitted more than once")
        seen.add(fact_id)
        explanation = explanation.strip()
        if not explanation:
            raise ParseError(f"omission {fact_id} has no explanation")
        omissions.append(Omission(fact_id=fact_id, explanation=explanation))
    return omissions


_CATEGORY_HEADERS = (
    (Importance.CRITICAL, "CRITICAL"),
    (Importance.IMPORTANT, "IMPORTANT"),
    (Importance.OTHER, "OTHER"),
)


def _parse_id_csv(text: str, context: str) -> list[str]:
    text = text.strip()
    if not text or text.upper() == "NONE":
        return []
    ids = []
    for token in text.split(","):
        token = token.strip()
        if not token:
            raise ParseError(f"{context}: empty entry in the fact id list")
        try:
            ids.append(parse_fact_id(token))
        except ValueError as exc:
            raise ParseError(f"{context}: {exc}") from exc
    return ids


def parse_categorization(block: str, facts: Sequence[Fact]) -> list[Fact]:
    lines = block.splitlines()
    positions = []
    for importance, header in _CATEGORY_HEADERS:
        found = [
            i
            for i, line in enumerate(lines)
            if line.strip().upper().startswith(header + ":")
        ]
        if len(found) != 1:
            raise ParseError(
                f"expected the section {header}: exactly once, found it {len(found)} times"
            )
        positions.append((found[0], importance, header))
    if [p[0] for p in positions] != sorted(p[0] for p in positions):
        raise ParseError("importance sections are out of order")

    by_importance: dict[str, Importance] = {}
    for rank, (start, importance, header) in enumerate(positions):
        end = positions[rank + 1][0] if rank + 1 < len(positions) else len(lines)
        chunks = [lines[start].strip()[len(header) + 1 :]]
        chunks.extend(lines[start + 1 : end])
        ids = _parse_id_csv(",".join(c for c in chunks if c.strip()), header)
        for fact_id in ids:
            if fact_id in by_importance:
                raise ParseError(f"fact {fact_id} appears in more than one section")
            by_importance[fact_id] = importance

    known = {fact.fact_id for fact in facts}
    unknown = sorted(set(by_importance) - known)
    if unknown:
        raise ParseError(f"unknown fact ids {unknown} in the categorization")
    missing = sorted(known - set(by_importance))
    if missing:
        raise ParseError(f"facts {missing} are missing from the categorization")
    return [fact.with_importance(by_importance[fact.fact_id]) for fact in facts]


_GROUP_HEADERS = {
    "SYMPTOMS": "symptoms",
    "TESTS": "tests",
    "TREATMENTS": "treatments",
    "SOCIAL DETERMINANT OF HEALTH": "social_determinant_of_health",
    # Common misspelling; accepted as the same group.
    "SOCIAL DETERMINATE OF HEALTH": "social_determinant_of_health",
    "OTHER": "other",
}

_DIAGNOSIS_RE = re.compile(r"^DIAGNOSIS:\s*(.+)$", re.IGNORECASE)
_SUBCLUSTER_RE = re.compile(r"^-\s*(.+?):\s*(.+)$")

_REQUIRED_GROUPS = ("symptoms", "tests", "treatments", "social_determinant_of_health", "other")


def parse_clusters(
    block: str,
    diagnosis_names: Sequence[str],
    known_fact_ids: Sequence[str],
    polarity: Polarity,
) -> list[EvidenceClustering]:
    lines = block.splitlines()
    sections: list[tuple[str, list[str]]] = []
    current: list[str] | None = None
    for line in lines:
        match = _DIAGNOSIS_RE.match(line.strip())
        if match:
            current = []
            sections.append((match.group(1).strip(), current))
        elif current is not None:
            current.append(line)
        elif line.strip():
            raise ParseError(f"unexpected content before the first DIAGNOSIS line: {line!r}")

    expected = list(diagnosis_names)
    got = [name for name, _ in sections]
    if sorted(got) != sorted(expected):
        raise ParseError(
            f"diagnosis sections {got} do not match the requested diagnoses {expected}"
        )

    known = set(known_fact_ids)
    by_name = {}
    for name, body in sections:
        by_name[name] = _parse_cluster_section(name, body, known, polarity)
    return [by_name[name] for name in expected]


def _parse_cluster_section(
    diagnosis_name: str, lines: list[str], known: set[str], polarity: Polarity
) -> EvidenceClustering:
    positions = []
    for i, line in enumerate(lines):
        stripped = line.strip()
        upper = stripped.upper()
        for header, group in _GROUP_HEADERS.items():
            if upper == header + ":" or upper.startswith(header + ":"):
                positions.append((i, group, header, stripped[len(header) + 1 :].strip()))
                break
    found_groups = [g for _, g, _, _ in positions]
    for group in _REQUIRED_GROUPS:
        if found_groups.count(group) != 1:
            raise ParseError(
                f"diagnosis {diagnosis_name!r}: expected the heading for group "
                f"{group} exactly once, found it {found_groups.count(group)} times"
            )

    subclusters = []
    for rank, (start, group, header, inline) in enumerate(positions):
        end = positions[rank + 1][0] if rank + 1 < len(positions) else len(lines)
        content = ([inline] if inline else []) + [
            line.strip() for line in lines[start + 1 : end] if line.strip()
        ]
        if len(content) == 1 and content[0].upper() == "NONE":
            continue
        if not content:
            raise ParseError(
                f"diagnosis {diagnosis_name!r}, group {header}: write NONE or "
                "subcluster lines"
            )
        for line in content:
            match = _SUBCLUSTER_RE.match(line)
            if not match:
                raise ParseError(
                    f"diagnosis {diagnosis_name!r}, group {header}: line {line!r} "
                    "does not match - <mechanism>: <fact ids>"
                )
            mechanism = match.group(1).strip()
            context = f"diagnosis {diagnosis_name!r}, subcluster {mechanism!r}"
            ids = _parse_id_csv(match.group(2), context)
            if not ids:
                raise ParseError(f"{context}: no fact ids")
            dupes = sorted({i for i in ids if ids.count(i) > 1})
            if dupes:
                raise ParseError(f"{context}: fact ids {dupes} are listed more than once")
            unknown = sorted(set(ids) - known)
            if unknown:
                raise ParseError(f"{context}: unknown fact ids {unknown}")
            subclusters.append(
                SubCluster(group=group, mechanism_label=mechanism, fact_ids=tuple(ids))
            )
    return EvidenceClustering(
        diagnosis_name=diagnosis_name, polarity=polarity, subclusters=tuple(subclusters)
    )
