"""Stage execution: one model call per stage plus a bounded repair loop.

A stage sends its prompt, extracts the last fenced block from the reply
and parses it. On a format violation the model gets exactly
``repair_budget`` follow-ups quoting the violation; if the final attempt
still fails the stage raises StageError carrying the stage name, the
last violation, the failing request fingerprint, and how many calls were
made.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Any, Callable, Optional, Sequence

from ..config import RunConfig
from ..datamodel import (
    DdxSource,
    Dialogue,
    DifferentialDiagnosis,
    EvidenceClustering,
    Fact,
    Omission,
    Polarity,
    Summary,
)
from ..gateway import GenerationRequest, LlmGateway
from . import parsers, templates

log = logging.getLogger(__name__)

STAGE_ORDER = (
    "truncate",
    "summarize",
    "extract_facts",
    "ddx_chat",
    "detect_omissions",
    "categorize",
    "cluster_supporting",
    "cluster_refuting",
    "ddx_summary",
)


class StageError(Exception):
    def __init__(self, stage: str, message: str, fingerprint: str, attempts: int):
        super().__init__(f"stage {stage} failed after {attempts} attempt(s): {message}")
        self.stage = stage
        self.message = message
        self.fingerprint = fingerprint
        self.attempts = attempts


@dataclass(frozen=True)
class StageOutput:
    stage: str
    value: Any
    raw_text: str
    fingerprint: str
    attempts: int

    def __post_init__(self) -> None:
        if self.stage not in STAGE_ORDER:
            raise ValueError(f"unknown stage {self.stage!r}")
        if self.attempts < 1:
            raise ValueError("attempts must be at least 1")


@dataclass(frozen=True)
class StageContext:
    gateway: LlmGateway
    config: RunConfig

    @property
    def metric_model(self) -> str:
        return self.config.models.metric

    @property
    def summary_model(self) -> str:
        return self.config.models.summary

    @property
    def repair_budget(self) -> int:
        return self.config.thresholds.repair_budget

    @property
    def max_tokens(self) -> int:
        return self.config.max_gen_tokens


def _repair_message(error: parsers.ParseError) -> str:
    return (
        f"Your previous reply violated the required format: {error}. "
        "Reply again with exactly one fenced code block in the format the "
        "instructions specify."
    )


def run_stage(
    ctx: StageContext,
    stage: str,
    request: GenerationRequest,
    parse: Callable[[str], Any],
) -> StageOutput:
    attempts = 0
    current = request
    last_error: Optional[parsers.ParseError] = None
    while attempts <= ctx.repair_budget:
        text = ctx.gateway.generate(current)
        attempts += 1
        try:
            block = parsers.extract_last_fenced_block(text)
            value = parse(block)
        except parsers.ParseError as exc:
            last_error = exc
            if attempts <= ctx.repair_budget:
                log.info("stage %s attempt %d rejected: %s", stage, attempts, exc)
                current = current.extended(text, _repair_message(exc))
            continue
        return StageOutput(
            stage=stage,
            value=value,
            raw_text=text,
            fingerprint=current.fingerprint,
            attempts=attempts,
        )
    assert last_error is not None
    raise StageError(
        stage=stage,
        message=str(last_error),
        fingerprint=current.fingerprint,
        attempts=attempts,
    )


def stage_truncate(ctx: StageContext, dialogue: Dialogue) -> StageOutput:
    request = templates.build_request(
        ctx.metric_model,
        "truncate",
        ctx.max_tokens,
        dialogue_numbered=dialogue.numbered_text(),
    )
    return run_stage(
        ctx,
        "truncate",
        request,
        lambda block: parsers.parse_truncation(block, len(dialogue.turns)),
    )


def stage_summarize(ctx: StageContext, dialogue: Dialogue) -> StageOutput:
    request = templates.build_request(
        ctx.summary_model, "summary", ctx.max_tokens, dialogue=dialogue.text()
    )
    return run_stage(
        ctx,
        "summarize",
        request,
        lambda block: parsers.parse_summary(block, dialogue.encounter_id),
    )


def stage_extract_facts(ctx: StageContext, dialogue: Dialogue) -> StageOutput:
    request = templates.build_request(
        ctx.metric_model, "facts", ctx.max_tokens, dialogue=dialogue.text()
    )
    return run_stage(ctx, "extract_facts", request, parsers.parse_facts)


def _facts_text(facts: Sequence[Fact]) -> str:
    return "\n".join(f"{fact.fact_id}: {fact.text}" for fact in facts)


def stage_ddx(
    ctx: StageContext, encounter_id: str, context_text: str, source: DdxSource
) -> StageOutput:
    stage = "ddx_chat" if source is DdxSource.FROM_CHAT else "ddx_summary"
    request = templates.build_request(
        ctx.metric_model, "ddx", ctx.max_tokens, context=context_text
    )
    return run_stage(
        ctx,
        stage,
        request,
        lambda block: parsers.parse_ddx(block, encounter_id, source),
    )


def stage_detect_omissions(
    ctx: StageContext, facts: Sequence[Fact], summary: Summary
) -> StageOutput:
    request = templates.build_request(
        ctx.metric_model,
        "omissions",
        ctx.max_tokens,
        facts=_facts_text(facts),
        summary=summary.text(),
    )
    known = [fact.fact_id for fact in facts]
    return run_stage(
        ctx,
        "detect_omissions",
        request,
        lambda block: parsers.parse_omissions(block, known),
    )


def stage_categorize(ctx: StageContext, facts: Sequence[Fact]) -> StageOutput:
    request = templates.build_request(
        ctx.metric_model, "categorize", ctx.max_tokens, facts=_facts_text(facts)
    )
    return run_stage(
        ctx,
        "categorize",
        request,
        lambda block: parsers.parse_categorization(block, facts),
    )


_POLARITY_WORDS = {Polarity.SUPPORTING: "supports", Polarity.REFUTING: "refutes"}


def stage_cluster(
    ctx: StageContext,
    ddx: DifferentialDiagnosis,
    facts: Sequence[Fact],
    polarity: Polarity,
) -> StageOutput:
    stage = "cluster_supporting" if polarity is Polarity.SUPPORTING else "cluster_refuting"
    names = [entry.name for entry in ddx.entries]
    request = templates.build_request(
        ctx.metric_model,
        "cluster",
        ctx.max_tokens,
        polarity_word=_POLARITY_WORDS[polarity],
        diagnoses="\n".join(f"- {name}" for name in names),
        facts=_facts_text(facts),
    )
    known = [fact.fact_id for fact in facts]
    return run_stage(
        ctx,
        stage,
        request,
        lambda block: parsers.parse_clusters(block, names, known, polarity),
    )
