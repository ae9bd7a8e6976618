"""Encounter orchestration and artifact persistence.

Stages run in a fixed order per encounter; encounters can run in
parallel. Every artifact is written as canonical JSON the moment its
stage completes, so two replay runs over the same cassette produce
byte-identical ``encounters/`` subtrees and a failed encounter leaves
behind everything that succeeded plus a failure marker.
"""

from __future__ import annotations

import logging
import shutil
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

from ..config import RunConfig
from ..datamodel import (
    DdxSource,
    Dialogue,
    OmissionReport,
    Polarity,
    bundle_warnings,
    validate_encounter_bundle,
)
from ..dataset import Corpus, Encounter, RunManifest
from ..gateway import GatewayError, LlmGateway
from ..jsonutil import write_json
from ..scoring import (
    build_report,
    completion_continuation,
    completion_margin,
    completion_prompt,
    margin_plan,
)
from .stages import (
    StageContext,
    StageError,
    StageOutput,
    stage_categorize,
    stage_cluster,
    stage_ddx,
    stage_detect_omissions,
    stage_extract_facts,
    stage_summarize,
    stage_truncate,
)

log = logging.getLogger(__name__)

ENCOUNTERS_SUBDIR = "encounters"
MANIFEST_NAME = "manifest.json"


@dataclass(frozen=True)
class EncounterResult:
    encounter_id: str
    status: str
    report: Optional[OmissionReport] = None
    reason: str = ""
    stage: str = ""

    def __post_init__(self) -> None:
        if self.status not in ("ok", "skipped", "failed"):
            raise ValueError(f"unknown status {self.status!r}")
        if (self.status == "ok") != (self.report is not None):
            raise ValueError("exactly the ok results carry a report")


class _ArtifactDir:
    """Writes canonical JSON artifacts under one encounter directory."""

    def __init__(self, root: Optional[Path]):
        self.root = root
        if root is not None:
            root.mkdir(parents=True, exist_ok=True)

    def write(self, name: str, payload: dict) -> None:
        if self.root is not None:
            write_json(self.root / name, payload)

    def write_text(self, name: str, text: str) -> None:
        if self.root is not None:
            path = self.root / name
            path.write_text(text, encoding="utf-8")


def _stages_payload(outputs: Sequence[StageOutput]) -> dict:
    return {
        "stages": [
            {
                "stage": out.stage,
                "attempts": out.attempts,
                "fingerprint": out.fingerprint,
                "raw_text": out.raw_text,
            }
            for out in outputs
        ]
    }


def _check_encounter_id(encounter_id: str) -> None:
    if encounter_id in (".", "..") or any(c in encounter_id for c in "/\\\0"):
        raise ValueError(f"encounter id {encounter_id!r} is not filesystem-safe")


def run_encounter(
    config: RunConfig,
    gateway: LlmGateway,
    encounter: Encounter,
    out_dir: Optional[Path] = None,
) -> EncounterResult:
    dialogue = encounter.dialogue
    encounter_id = dialogue.encounter_id
    _check_encounter_id(encounter_id)
    ctx = StageContext(gateway=gateway, config=config)
    art = _ArtifactDir(
        (out_dir / ENCOUNTERS_SUBDIR / encounter_id) if out_dir is not None else None
    )
    outputs: list[StageOutput] = []
    current_stage = "truncate"

    def flush_stages() -> None:
        art.write("stages.json", _stages_payload(outputs))

    try:
        art.write("dialogue.json", dialogue.to_json_dict())
        if encounter.reference_note:
            art.write_text("reference.txt", encounter.reference_note)

        truncate_out = stage_truncate(ctx, dialogue)
        outputs.append(truncate_out)
        cut = truncate_out.value
        truncated = dialogue.prefix(cut)
        art.write("truncated.json", truncated.to_json_dict())

        minimum = config.thresholds.min_truncated_turns
        if len(truncated.turns) < minimum:
            reason = (
                f"truncated dialogue has {len(truncated.turns)} turns, "
                f"below the minimum of {minimum}"
            )
            flush_stages()
            art.write(
                "skip.json",
                {
                    "encounter_id": encounter_id,
                    "reason": reason,
                    "cut_turn_index": cut,
                    "truncated_turns": len(truncated.turns),
                },
            )
            log.info("skipping %s: %s", encounter_id, reason)
            return EncounterResult(encounter_id=encounter_id, status="skipped", reason=reason)

        current_stage = "summarize"
        summary_out = stage_summarize(ctx, truncated)
        outputs.append(summary_out)
        summary = summary_out.value
        art.write("summary.json", summary.to_json_dict())

        current_stage = "extract_facts"
        facts_out = stage_extract_facts(ctx, truncated)
        outputs.append(facts_out)
        facts = facts_out.value

        current_stage = "ddx_chat"
        ddx_chat_out = stage_ddx(ctx, encounter_id, truncated.text(), DdxSource.FROM_CHAT)
        outputs.append(ddx_chat_out)
        ddx_chat = ddx_chat_out.value
        art.write("ddx_chat.json", ddx_chat.to_json_dict())

        current_stage = "detect_omissions"
        omissions_out = stage_detect_omissions(ctx, facts, summary)
        outputs.append(omissions_out)
        omissions = omissions_out.value
        art.write(
            "omissions.json",
            {"encounter_id": encounter_id, "omissions": [o.to_json_dict() for o in omissions]},
        )

        current_stage = "categorize"
        categorize_out = stage_categorize(ctx, facts)
        outputs.append(categorize_out)
        facts = categorize_out.value
        art.write(
            "facts.json",
            {"encounter_id": encounter_id, "facts": [f.to_json_dict() for f in facts]},
        )

        clusters = []
        for polarity, artifact in (
            (Polarity.SUPPORTING, "clusters_supporting.json"),
            (Polarity.REFUTING, "clusters_refuting.json"),
        ):
            current_stage = (
                "cluster_supporting" if polarity is Polarity.SUPPORTING else "cluster_refuting"
            )
            cluster_out = stage_cluster(ctx, ddx_chat, facts, polarity)
            outputs.append(cluster_out)
            art.write(
                artifact,
                {
                    "encounter_id": encounter_id,
                    "polarity": polarity.value,
                    "clusters": [c.to_json_dict() for c in cluster_out.value],
                },
            )
            clusters.extend(cluster_out.value)

        margin = None
        if config.models.margin:
            current_stage = "ddx_summary"
            ddx_summary_out = stage_ddx(
                ctx, encounter_id, summary.text(), DdxSource.FROM_SUMMARY
            )
            outputs.append(ddx_summary_out)
            ddx_summary = ddx_summary_out.value
            art.write("ddx_summary.json", ddx_summary.to_json_dict())

            plan = margin_plan(ddx_chat, ddx_summary)
            if plan is not None:
                current_stage = "margin_scores"
                chat_prefix = completion_prompt(truncated.text())
                summary_prefix = completion_prompt(summary.text())
                aggregation = config.aggregation

                def score(prefix: str, diagnosis: str) -> float:
                    return gateway.score_continuation(
                        config.models.margin,
                        prefix,
                        completion_continuation(diagnosis),
                        aggregation,
                    ).score

                margin = completion_margin(
                    l_c0=score(chat_prefix, plan.target),
                    l_c1=score(chat_prefix, plan.chat_alternative),
                    l_s0=score(summary_prefix, plan.target),
                    l_s1=score(summary_prefix, plan.summary_alternative),
                    epsilon=config.thresholds.margin_epsilon,
                )

        violations = validate_encounter_bundle(truncated, facts, clusters, omissions)
        warnings = bundle_warnings(clusters)
        art.write(
            "validation.json",
            {"encounter_id": encounter_id, "violations": violations, "warnings": warnings},
        )
        for warning in warnings:
            log.warning("%s: %s", encounter_id, warning)
        if violations:
            flush_stages()
            reason = "; ".join(violations)
            art.write(
                "failure.json",
                {
                    "encounter_id": encounter_id,
                    "stage": "validation",
                    "message": reason,
                    "fingerprint": "",
                    "attempts": 0,
                },
            )
            return EncounterResult(
                encounter_id=encounter_id, status="failed", reason=reason, stage="validation"
            )

        report = build_report(
            encounter_id,
            facts,
            omissions,
            clusters,
            margin=margin,
            polarity_mode=config.uniqueness_polarity,
        )
        art.write("report.json", report.to_json_dict())
        flush_stages()
        return EncounterResult(encounter_id=encounter_id, status="ok", report=report)

    except StageError as exc:
        flush_stages()
        art.write(
            "failure.json",
            {
                "encounter_id": encounter_id,
                "stage": exc.stage,
                "message": exc.message,
                "fingerprint": exc.fingerprint,
                "attempts": exc.attempts,
            },
        )
        log.error("%s failed at %s: %s", encounter_id, exc.stage, exc.message)
        return EncounterResult(
            encounter_id=encounter_id, status="failed", reason=exc.message, stage=exc.stage
        )
    except GatewayError as exc:
        flush_stages()
        art.write(
            "failure.json",
            {
                "encounter_id": encounter_id,
                "stage": current_stage,
                "message": str(exc),
                "fingerprint": "",
                "attempts": 0,
            },
        )
        log.error("%s failed at %s: %s", encounter_id, current_stage, exc)
        return EncounterResult(
            encounter_id=encounter_id, status="failed", reason=str(exc), stage=current_stage
        )


def run_corpus(
    config: RunConfig,
    gateway: LlmGateway,
    corpus: Corpus,
    corpus_path: str,
    out_dir: Path,
    workers: int = 1,
    only: Optional[Sequence[str]] = None,
    force: bool = False,
) -> tuple[RunManifest, list[EncounterResult]]:
    if workers < 1:
        raise ValueError(f"workers must be at least 1, got {workers}")
    if only:
        corpus = corpus.subset(only)

    encounters_dir = out_dir / ENCOUNTERS_SUBDIR
    if encounters_dir.exists() and any(encounters_dir.iterdir()):
        if not force:
            raise FileExistsError(
                f"{encounters_dir} already has artifacts; pass force to overwrite"
            )
        shutil.rmtree(encounters_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    manifest = RunManifest(
        corpus_path=str(corpus_path),
        out_dir=str(out_dir),
        mode=config.mode.value,
        models={
            "summary": config.models.summary,
            "metric": config.models.metric,
            "margin": config.models.margin,
        },
    )

    def run_one(encounter: Encounter) -> EncounterResult:
        return run_encounter(config, gateway, encounter, out_dir)

    if workers == 1:
        results = [run_one(encounter) for encounter in corpus.encounters]
    else:
        with ThreadPoolExecutor(max_workers=workers) as executor:
            results = list(executor.map(run_one, corpus.encounters))

    for result in results:
        manifest.record(result.encounter_id, result.status, result.reason, result.stage)
    manifest.finish()
    manifest.write(out_dir / MANIFEST_NAME)
    return manifest, results
