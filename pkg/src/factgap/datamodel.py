"""Domain types shared by every pipeline stage.

All values are immutable after construction and validate their own
invariants, so a constructed object is always safe to share across
concurrent workers. Cross-object consistency (dangling fact references,
duplicated subcluster members) is checked by
:func:`validate_encounter_bundle`, which reports violations as data
rather than raising.

Every type serializes to a canonical JSON dict carrying
``schema_version: "1"`` and round-trips through ``from_json_dict``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Mapping, Optional, Sequence

SCHEMA_VERSION = "1"

# Denominators smaller than this make a completion-margin ratio undefined.
MARGIN_EPSILON = 1e-9

# Section keys of a subjective summary, in display order.
SUMMARY_SECTIONS = (
    "chief_complaint",
    "history_of_present_illness",
    "past_social_history",
)

SECTION_TITLES = {
    "chief_complaint": "CHIEF COMPLAINT",
    "history_of_present_illness": "HISTORY OF PRESENT ILLNESS",
    "past_social_history": "PAST SOCIAL HISTORY",
}


class Speaker(str, Enum):
    DOCTOR = "doctor"
    PATIENT = "patient"
    OTHER = "other"


class SourceTag(str, Enum):
    ORIGINAL = "original"
    TRUNCATED = "truncated"


class ContentCategory(str, Enum):
    MEDICAL = "medical"
    CARE_ACCESS_OR_SDOH = "care_access_or_sdoh"
    NON_MEDICAL = "non_medical"


class Importance(str, Enum):
    CRITICAL = "critical"
    IMPORTANT = "important"
    OTHER = "other"


class Likelihood(str, Enum):
    PROBABLE = "probable"
    POSSIBLE = "possible"
    UNLIKELY = "unlikely"


class DdxSource(str, Enum):
    FROM_CHAT = "from_chat"
    FROM_SUMMARY = "from_summary"


class Polarity(str, Enum):
    SUPPORTING = "supporting"
    REFUTING = "refuting"


class ClusterGroup(str, Enum):
    SYMPTOMS = "symptoms"
    TESTS = "tests"
    TREATMENTS = "treatments"
    SOCIAL_DETERMINANT_OF_HEALTH = "social_determinant_of_health"
    OTHER = "other"


MAX_DDX_ENTRIES = 10


def _check_schema_version(data: Mapping[str, Any], type_name: str) -> None:
    version = data.get("schema_version")
    if version != SCHEMA_VERSION:
        raise ValueError(
            f"{type_name}: unsupported schema_version {version!r} (expected {SCHEMA_VERSION!r})"
        )


def parse_fact_id(raw: str) -> str:
    """Normalize a fact identifier like ``" F14: "`` to ``"F14"``.

    Accepts surrounding whitespace and a trailing colon; anything else is
    a ValueError.
    """
    cleaned = raw.strip()
    if cleaned.endswith(":"):
        cleaned = cleaned[:-1].rstrip()
    if len(cleaned) < 2 or cleaned[0] != "F" or not cleaned[1:].isdigit():
        raise ValueError(f"malformed fact id {raw!r}")
    return "F" + str(int(cleaned[1:]))


def fact_id_index(fact_id: str) -> int:
    return int(parse_fact_id(fact_id)[1:])


@dataclass(frozen=True)
class Turn:
    index: int
    speaker: Speaker
    text: str

    def __post_init__(self) -> None:
        if self.index < 0:
            raise ValueError(f"turn index must be non-negative, got {self.index}")
        if not isinstance(self.speaker, Speaker):
            object.__setattr__(self, "speaker", Speaker(self.speaker))
        if not self.text.strip():
            raise ValueError(f"turn {self.index} has empty text")

    def to_json_dict(self) -> dict[str, Any]:
        return {"index": self.index, "speaker": self.speaker.value, "text": self.text}

    @classmethod
    def from_json_dict(cls, data: Mapping[str, Any]) -> "Turn":
        return cls(index=data["index"], speaker=Speaker(data["speaker"]), text=data["text"])


@dataclass(frozen=True)
class Dialogue:
    """A speaker-tagged patient-provider conversation.

    Invariants: turns non-empty, indices contiguous from 0, every turn
    has a valid speaker and non-empty text.
    """

    encounter_id: str
    turns: tuple[Turn, ...]
    source_tag: SourceTag = SourceTag.ORIGINAL

    def __post_init__(self) -> None:
        if not self.encounter_id:
            raise ValueError("encounter_id must be non-empty")
        object.__setattr__(self, "turns", tuple(self.turns))
        if not isinstance(self.source_tag, SourceTag):
            object.__setattr__(self, "source_tag", SourceTag(self.source_tag))
        if not self.turns:
            raise ValueError(f"dialogue {self.encounter_id}: no turns")
        for position, turn in enumerate(self.turns):
            if turn.index != position:
                raise ValueError(
                    f"dialogue {self.encounter_id}: turn at position {position} "
                    f"has index {turn.index} (indices must be contiguous from 0)"
                )

    def text(self) -> str:
        """Render as ``[speaker] text`` lines, one turn per line."""
        return "\n".join(f"[{t.speaker.value}] {t.text}" for t in self.turns)

    def numbered_text(self) -> str:
        """Render with leading turn numbers, for prompts that cite turns."""
        return "\n".join(f"{t.index} [{t.speaker.value}] {t.text}" for t in self.turns)

    def prefix(self, last_turn_index: int, source_tag: SourceTag = SourceTag.TRUNCATED) -> "Dialogue":
        """New dialogue keeping turns 0..last_turn_index inclusive."""
        if not 0 <= last_turn_index < len(self.turns):
            raise ValueError(
                f"dialogue {self.encounter_id}: turn index {last_turn_index} out of range "
                f"0..{len(self.turns) - 1}"
            )
        return Dialogue(
            encounter_id=self.encounter_id,
            turns=self.turns[: last_turn_index + 1],
            source_tag=source_tag,
        )

    def to_json_dict(self) -> dict[str, Any]:
        return {
            "schema_version": SCHEMA_VERSION,
            "encounter_id": self.encounter_id,
            "source_tag": self.source_tag.value,
            "turns": [t.to_json_dict() for t in self.turns],
        }

    @classmethod
    def from_json_dict(cls, data: Mapping[str, Any]) -> "Dialogue":
        _check_schema_version(data, "Dialogue")
        return cls(
            encounter_id=data["encounter_id"],
            turns=tuple(Turn.from_json_dict(t) for t in data["turns"]),
            source_tag=SourceTag(data["source_tag"]),
        )


@dataclass(frozen=True)
class Summary:
    """A subjective note split into its three sections.

    At least one section must be non-empty; empty sections are legal and
    are flagged by the pipeline rather than rejected here.
    """

    encounter_id: str
    sections: Mapping[str, str]
    generator_tag: str = ""

    def __post_init__(self) -> None:
        if not self.encounter_id:
            raise ValueError("encounter_id must be non-empty")
        normalized = dict(self.sections)
        unknown = set(normalized) - set(SUMMARY_SECTIONS)
        if unknown:
            raise ValueError(f"summary {self.encounter_id}: unknown sections {sorted(unknown)}")
        for name in SUMMARY_SECTIONS:
            normalized.setdefault(name, "")
        object.__setattr__(self, "sections", normalized)
        if not any(text.strip() for text in normalized.values()):
            raise ValueError(f"summary {self.encounter_id}: every section is empty")

    def empty_sections(self) -> list[str]:
        return [name for name in SUMMARY_SECTIONS if not self.sections[name].strip()]

    def text(self) -> str:
        """Render with section titles, skipping empty sections."""
        parts = []
        for name in SUMMARY_SECTIONS:
            body = self.sections[name].strip()
            if body:
                parts.append(f"{SECTION_TITLES[name]}:\n{body}")
        return "\n\n".join(parts)

    def to_json_dict(self) -> dict[str, Any]:
        return {
            "schema_version": SCHEMA_VERSION,
            "encounter_id": self.encounter_id,
            "generator_tag": self.generator_tag,
            "sections": {name: self.sections[name] for name in SUMMARY_SECTIONS},
        }

    @classmethod
    def from_json_dict(cls, data: Mapping[str, Any]) -> "Summary":
        _check_schema_version(data, "Summary")
        return cls(
            encounter_id=data["encounter_id"],
            sections=dict(data["sections"]),
            generator_tag=data.get("generator_tag", ""),
        )


@dataclass(frozen=True)
class Fact:
    """An atomic statement extracted from the dialogue.

    ``importance`` stays unset until the categorization stage has run;
    scoring refuses facts with unset importance.
    """

    fact_id: str
    text: str
    content_category: ContentCategory
    importance: Optional[Importance] = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "fact_id", parse_fact_id(self.fact_id))
        if not self.text.strip():
            raise ValueError(f"fact {self.fact_id}: empty text")
        if not isinstance(self.content_category, ContentCategory):
            object.__setattr__(self, "content_category", ContentCategory(self.content_category))
        if self.importance is not None and not isinstance(self.importance, Importance):
            object.__setattr__(self, "importance", Importance(self.importance))

    def with_importance(self, importance: Importance) -> "Fact":
        return Fact(
            fact_id=self.fact_id,
            text=self.text,
            content_category=self.content_category,
            importance=importance,
        )

    def to_json_dict(self) -> dict[str, Any]:
        return {
            "schema_version": SCHEMA_VERSION,
            "fact_id": self.fact_id,
            "text": self.text,
            "content_category": self.content_category.value,
            "importance": self.importance.value if self.importance else None,
        }

    @classmethod
    def from_json_dict(cls, data: Mapping[str, Any]) -> "Fact":
        _check_schema_version(data, "Fact")
        importance = data.get("importance")
        return cls(
            fact_id=data["fact_id"],
            text=data["text"],
            content_category=ContentCategory(data["content_category"]),
            importance=Importance(importance) if importance else None,
        )


def check_fact_id_contiguity(facts: Sequence[Fact]) -> list[str]:
    """Return violations of the F0..F(n-1) identifier discipline."""
    violations = []
    seen: dict[str, int] = {}
    for fact in facts:
        seen[fact.fact_id] = seen.get(fact.fact_id, 0) + 1
    for fact_id, count in seen.items():
        if count > 1:
            violations.append(f"fact id {fact_id} appears {count} times")
    expected = {f"F{i}" for i in range(len(facts))}
    missing = sorted(expected - set(seen), key=fact_id_index)
    extra = sorted(set(seen) - expected, key=fact_id_index)
    if missing or extra:
        violations.append(
            "fact ids are not contiguous from F0: "
            f"missing {missing or 'none'}, unexpected {extra or 'none'}"
        )
    return violations


@dataclass(frozen=True)
class Diagnosis:
    rank: int
    name: str
    likelihood: Likelihood
    explanation: str = ""

    def __post_init__(self) -> None:
        if self.rank < 1:
            raise ValueError(f"diagnosis rank must be positive, got {self.rank}")
        if not self.name.strip():
            raise ValueError("diagnosis name must be non-empty")
        if not isinstance(self.likelihood, Likelihood):
            object.__setattr__(self, "likelihood", Likelihood(self.likelihood))

    def to_json_dict(self) -> dict[str, Any]:
        return {
            "rank": self.rank,
            "name": self.name,
            "likelihood": self.likelihood.value,
            "explanation": self.explanation,
        }

    @classmethod
    def from_json_dict(cls, data: Mapping[str, Any]) -> "Diagnosis":
        return cls(
            rank=data["rank"],
            name=data["name"],
            likelihood=Likelihood(data["likelihood"]),
            explanation=data.get("explanation", ""),
        )


@dataclass(frozen=True)
class DifferentialDiagnosis:
    """Ranked candidate conditions, at most 10, rank 1 first."""

    encounter_id: str
    source: DdxSource
    entries: tuple[Diagnosis, ...]

    def __post_init__(self) -> None:
        if not self.encounter_id:
            raise ValueError("encounter_id must be non-empty")
        if not isinstance(self.source, DdxSource):
            object.__setattr__(self, "source", DdxSource(self.source))
        object.__setattr__(self, "entries", tuple(self.entries))
        if not self.entries:
            raise ValueError(f"ddx {self.encounter_id}: no entries")
        if len(self.entries) > MAX_DDX_ENTRIES:
            raise ValueError(
                f"ddx {self.encounter_id}: {len(self.entries)} entries exceeds the "
                f"maximum of {MAX_DDX_ENTRIES}"
            )
        ranks = [d.rank for d in self.entries]
        if ranks != sorted(ranks) or len(set(ranks)) != len(ranks):
            raise ValueError(f"ddx {self.encounter_id}: ranks must be unique and ascending")

    def top(self) -> Diagnosis:
        return self.entries[0]

    def top_non_probable(self) -> Optional[Diagnosis]:
        """First entry in rank order whose likelihood is not probable."""
        for entry in self.entries:
            if entry.likelihood != Likelihood.PROBABLE:
                return entry
        return None

    def text(self) -> str:
        return "\n".join(
            f"{d.rank}. {d.name} ({d.likelihood.value}): {d.explanation}".rstrip(": ")
            for d in self.entries
        )

    def to_json_dict(self) -> dict[str, Any]:
        return {
            "schema_version": SCHEMA_VERSION,
            "encounter_id": self.encounter_id,
            "source": self.source.value,
            "entries": [d.to_json_dict() for d in self.entries],
        }

    @classmethod
    def from_json_dict(cls, data: Mapping[str, Any]) -> "DifferentialDiagnosis":
        _check_schema_version(data, "DifferentialDiagnosis")
        return cls(
            encounter_id=data["encounter_id"],
            source=DdxSource(data["source"]),
            entries=tuple(Diagnosis.from_json_dict(d) for d in data["entries"]),
        )


@dataclass(frozen=True)
class SubCluster:
    """Facts that point at the same pathophysiological mechanism.

    Duplicate members are representable here so that
    validate_encounter_bundle can report them; the stage parsers reject
    them before an object ever reaches a report.
    """

    group: ClusterGroup
    mechanism_label: str
    fact_ids: tuple[str, ...]

    def __post_init__(self) -> None:
        if not isinstance(self.group, ClusterGroup):
            object.__setattr__(self, "group", ClusterGroup(self.group))
        if not self.mechanism_label.strip():
            raise ValueError("subcluster mechanism_label must be non-empty")
        object.__setattr__(
            self, "fact_ids", tuple(parse_fact_id(fid) for fid in self.fact_ids)
        )
        if not self.fact_ids:
            raise ValueError(f"subcluster {self.mechanism_label!r}: no fact ids")

    @property
    def size(self) -> int:
        return len(self.fact_ids)

    def to_json_dict(self) -> dict[str, Any]:
        return {
            "group": self.group.value,
            "mechanism_label": self.mechanism_label,
            "fact_ids": list(self.fact_ids),
        }

    @classmethod
    def from_json_dict(cls, data: Mapping[str, Any]) -> "SubCluster":
        return cls(
            group=ClusterGroup(data["group"]),
            mechanism_label=data["mechanism_label"],
            fact_ids=tuple(data["fact_ids"]),
        )


@dataclass(frozen=True)
class EvidenceClustering:
    """All subclusters of one polarity for one diagnosis."""

    diagnosis_name: str
    polarity: Polarity
    subclusters: tuple[SubCluster, ...]

    def __post_init__(self) -> None:
        if not self.diagnosis_name.strip():
            raise ValueError("clustering diagnosis_name must be non-empty")
        if not isinstance(self.polarity, Polarity):
            object.__setattr__(self, "polarity", Polarity(self.polarity))
        object.__setattr__(self, "subclusters", tuple(self.subclusters))

    def to_json_dict(self) -> dict[str, Any]:
        return {
            "schema_version": SCHEMA_VERSION,
            "diagnosis_name": self.diagnosis_name,
            "polarity": self.polarity.value,
            "subclusters": [s.to_json_dict() for s in self.subclusters],
        }

    @classmethod
    def from_json_dict(cls, data: Mapping[str, Any]) -> "EvidenceClustering":
        _check_schema_version(data, "EvidenceClustering")
        return cls(
            diagnosis_name=data["diagnosis_name"],
            polarity=Polarity(data["polarity"]),
            subclusters=tuple(SubCluster.from_json_dict(s) for s in data["subclusters"]),
        )


@dataclass(frozen=True)
class Omission:
    """A fact wholly or partially missing from the summary."""

    fact_id: str
    explanation: str

    def __post_init__(self) -> None:
        object.__setattr__(self, "fact_id", parse_fact_id(self.fact_id))
        if not self.explanation.strip():
            raise ValueError(f"omission {self.fact_id}: empty explanation")

    def to_json_dict(self) -> dict[str, Any]:
        return {
            "schema_version": SCHEMA_VERSION,
            "fact_id": self.fact_id,
            "explanation": self.explanation,
        }

    @classmethod
    def from_json_dict(cls, data: Mapping[str, Any]) -> "Omission":
        _check_schema_version(data, "Omission")
        return cls(fact_id=data["fact_id"], explanation=data["explanation"])


IMPORTANCE_WEIGHTS = {
    Importance.CRITICAL: 1.0,
    Importance.IMPORTANT: 0.5,
    Importance.OTHER: 0.1,
}

_VALID_IMPORTANCE_WEIGHTS = frozenset(IMPORTANCE_WEIGHTS.values())


@dataclass(frozen=True)
class FactScore:
    """Per-fact penalty: max of the importance weight and every 1/|S|."""

    fact_id: str
    importance_weight: float
    uniqueness_weights: tuple[float, ...]
    combined: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "fact_id", parse_fact_id(self.fact_id))
        object.__setattr__(self, "uniqueness_weights", tuple(self.uniqueness_weights))
        if self.importance_weight not in _VALID_IMPORTANCE_WEIGHTS:
            raise ValueError(
                f"fact {self.fact_id}: importance weight {self.importance_weight} is not one of "
                f"{sorted(_VALID_IMPORTANCE_WEIGHTS)}"
            )
        for weight in self.uniqueness_weights:
            if not 0.0 < weight <= 1.0:
                raise ValueError(
                    f"fact {self.fact_id}: uniqueness weight {weight} outside (0, 1]"
                )
        if self.combined < self.importance_weight or any(
            self.combined < w for w in self.uniqueness_weights
        ):
            raise ValueError(f"fact {self.fact_id}: combined score below a component weight")
        if not 0.0 < self.combined <= 1.0:
            raise ValueError(f"fact {self.fact_id}: combined score {self.combined} outside (0, 1]")

    def to_json_dict(self) -> dict[str, Any]:
        return {
            "schema_version": SCHEMA_VERSION,
            "fact_id": self.fact_id,
            "importance_weight": self.importance_weight,
            "uniqueness_weights": list(self.uniqueness_weights),
            "combined": self.combined,
        }

    @classmethod
    def from_json_dict(cls, data: Mapping[str, Any]) -> "FactScore":
        _check_schema_version(data, "FactScore")
        return cls(
            fact_id=data["fact_id"],
            importance_weight=data["importance_weight"],
            uniqueness_weights=tuple(data["uniqueness_weights"]),
            combined=data["combined"],
        )


@dataclass(frozen=True)
class CompletionMargin:
    """Top-vs-alternative completion score gaps, chat vs summary.

    ``ratio`` is None (undefined) when the summary-side gap is smaller
    than epsilon; callers must never see a non-finite ratio.
    """

    l_c0: float
    l_c1: float
    l_s0: float
    l_s1: float
    ratio: Optional[float]
    epsilon: float = MARGIN_EPSILON

    def __post_init__(self) -> None:
        if self.epsilon <= 0:
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")
        denominator = self.l_s0 - self.l_s1
        if self.ratio is None:
            if abs(denominator) >= self.epsilon:
                raise ValueError(
                    "margin ratio marked undefined but the summary gap "
                    f"{denominator} is above tolerance"
                )
        else:
            if abs(denominator) < self.epsilon:
                raise ValueError(
                    f"margin ratio {self.ratio} defined with a summary gap below tolerance"
                )
            expected = (self.l_c0 - self.l_c1) / denominator
            if self.ratio != expected:
                raise ValueError(
                    f"margin ratio {self.ratio} does not equal (l_c0-l_c1)/(l_s0-l_s1) = {expected}"
                )

    def to_json_dict(self) -> dict[str, Any]:
        return {
            "schema_version": SCHEMA_VERSION,
            "l_c0": self.l_c0,
            "l_c1": self.l_c1,
            "l_s0": self.l_s0,
            "l_s1": self.l_s1,
            "ratio": self.ratio,
            "epsilon": self.epsilon,
        }

    @classmethod
    def from_json_dict(cls, data: Mapping[str, Any]) -> "CompletionMargin":
        _check_schema_version(data, "CompletionMargin")
        return cls(
            l_c0=data["l_c0"],
            l_c1=data["l_c1"],
            l_s0=data["l_s0"],
            l_s1=data["l_s1"],
            ratio=data["ratio"],
            epsilon=data.get("epsilon", MARGIN_EPSILON),
        )


def _exact_sum(values: Sequence[float]) -> float:
    # fsum is exactly rounded, so the total is independent of ordering.
    import math

    return math.fsum(values)


@dataclass(frozen=True)
class OmissionReport:
    """Everything the metric says about one encounter's summary."""

    encounter_id: str
    omissions: tuple[tuple[Omission, FactScore], ...]
    omission_count: int
    cumulative_weight: float
    margin: Optional[CompletionMargin] = None

    def __post_init__(self) -> None:
        if not self.encounter_id:
            raise ValueError("encounter_id must be non-empty")
        object.__setattr__(self, "omissions", tuple(tuple(pair) for pair in self.omissions))
        for omission, score in self.omissions:
            if omission.fact_id != score.fact_id:
                raise ValueError(
                    f"report {self.encounter_id}: omission {omission.fact_id} paired "
                    f"with score for {score.fact_id}"
                )
        if self.omission_count != len(self.omissions):
            raise ValueError(
                f"report {self.encounter_id}: omission_count {self.omission_count} "
                f"!= {len(self.omissions)} omissions"
            )
        expected = _exact_sum([score.combined for _, score in self.omissions])
        if self.cumulative_weight != expected:
            raise ValueError(
                f"report {self.encounter_id}: cumulative_weight {self.cumulative_weight} "
                f"!= sum of combined scores {expected}"
            )
        if (self.cumulative_weight == 0.0) != (not self.omissions):
            raise ValueError(
                f"report {self.encounter_id}: cumulative_weight must be 0 exactly when "
                "there are no omissions"
            )

    def to_json_dict(self) -> dict[str, Any]:
        return {
            "schema_version": SCHEMA_VERSION,
            "encounter_id": self.encounter_id,
            "omissions": [
                {"omission": o.to_json_dict(), "score": s.to_json_dict()}
                for o, s in self.omissions
            ],
            "omission_count": self.omission_count,
            "cumulative_weight": self.cumulative_weight,
            "margin": self.margin.to_json_dict() if self.margin else None,
        }

    @classmethod
    def from_json_dict(cls, data: Mapping[str, Any]) -> "OmissionReport":
        _check_schema_version(data, "OmissionReport")
        margin = data.get("margin")
        return cls(
            encounter_id=data["encounter_id"],
            omissions=tuple(
                (
                    Omission.from_json_dict(entry["omission"]),
                    FactScore.from_json_dict(entry["score"]),
                )
                for entry in data["omissions"]
            ),
            omission_count=data["omission_count"],
            cumulative_weight=data["cumulative_weight"],
            margin=CompletionMargin.from_json_dict(margin) if margin else None,
        )


def validate_encounter_bundle(
    dialogue: Dialogue,
    facts: Sequence[Fact],
    clusters: Sequence[EvidenceClustering],
    omissions: Sequence[Omission],
) -> list[str]:
    """Check cross-reference invariants over one encounter's artifacts.

    Returns one description per violation; an empty list means the bundle
    is consistent. Violations are data, not errors.
    """
    violations = list(check_fact_id_contiguity(facts))
    known = {fact.fact_id for fact in facts}
    for omission in omissions:
        if omission.fact_id not in known:
            violations.append(f"omission references unknown fact {omission.fact_id}")
    seen_omitted = set()
    for omission in omissions:
        if omission.fact_id in seen_omitted:
            violations.append(f"fact {omission.fact_id} omitted more than once")
        seen_omitted.add(omission.fact_id)
    for clustering in clusters:
        for subcluster in clustering.subclusters:
            label = (
                f"{clustering.polarity.value}/{clustering.diagnosis_name}/"
                f"{subcluster.group.value}/{subcluster.mechanism_label}"
            )
            counts: dict[str, int] = {}
            for fact_id in subcluster.fact_ids:
                counts[fact_id] = counts.get(fact_id, 0) + 1
                if fact_id not in known:
                    violations.append(
                        f"subcluster {label} references unknown fact {fact_id}"
                    )
            for fact_id, count in counts.items():
                if count > 1:
                    violations.append(
                        f"subcluster {label} lists fact {fact_id} {count} times"
                    )
    return violations


def bundle_warnings(clusters: Sequence[EvidenceClustering]) -> list[str]:
    """Non-fatal oddities: NONE mechanism labels and facts that both
    support and refute the same diagnosis."""
    warnings = []
    for clustering in clusters:
        for subcluster in clustering.subclusters:
            if subcluster.mechanism_label.strip().upper() == "NONE":
                warnings.append(
                    f"subcluster under {clustering.polarity.value}/"
                    f"{clustering.diagnosis_name}/{subcluster.group.value} has "
                    'mechanism label "NONE"'
                )
    by_diagnosis: dict[str, dict[Polarity, set[str]]] = {}
    for clustering in clusters:
        sides = by_diagnosis.setdefault(clustering.diagnosis_name, {})
        members = sides.setdefault(clustering.polarity, set())
        for subcluster in clustering.subclusters:
            members.update(subcluster.fact_ids)
    for diagnosis_name, sides in sorted(by_diagnosis.items()):
        overlap = sides.get(Polarity.SUPPORTING, set()) & sides.get(Polarity.REFUTING, set())
        for fact_id in sorted(overlap, key=fact_id_index):
            warnings.append(
                f"fact {fact_id} both supports and refutes diagnosis {diagnosis_name}"
            )
    return warnings
