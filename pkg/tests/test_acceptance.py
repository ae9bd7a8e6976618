"""Acceptance suite: one test per shipping criterion, each printing an
explicit pass or fail line (visible with ``pytest -v -s``).

The criteria pin golden document scores, oracle parity for the scorer
and the ngram baselines, correlation parity against scipy, margin
arithmetic, byte-level replay determinism, repair-then-fail behavior on
malformed model replies, and truncation fidelity against human cut
annotations.
"""

import contextlib
import json
import math
import random
import time
from pathlib import Path

import pytest
import scipy.stats

from factgap.baselines import pearson, rouge_all, spearman
from factgap.config import (
    BackendConfig,
    ModelsConfig,
    RunConfig,
    build_gateway,
    load_config,
)
from factgap.dataset import load_corpus
from factgap.gateway import GatewayMode
from factgap.jsonutil import read_json
from factgap.pipeline.runner import ENCOUNTERS_SUBDIR, run_corpus, run_encounter
from factgap.pipeline.stages import StageContext, stage_truncate
from factgap.scoring import PolarityMode, completion_margin, document_score, score_omissions

from corpus_fixtures import EXPECTED_REPORTS, MALFORMED_SCENARIOS
from rouge_oracle import all_variants as oracle_variants
from scoring_fixtures import (
    EDWARD_EXPECTED,
    MARTHA_EXPECTED,
    STEPHANIE_EXPECTED,
    edward_bundle,
    martha_bundle,
    stephanie_bundle,
)
from scoring_oracle import brute_force_document_score, random_instance

FIXTURES = Path(__file__).parent / "fixtures"


@contextlib.contextmanager
def criterion(label):
    try:
        yield
    except BaseException:
        print(f"[FAIL] {label}")
        raise
    print(f"[PASS] {label}")


def test_c1_pinned_document_score_goldens():
    with criterion("pinned document scores match the goldens exactly in under 1s"):
        started = time.perf_counter()
        for bundle, expected in (
            (martha_bundle(), MARTHA_EXPECTED),
            (stephanie_bundle(), STEPHANIE_EXPECTED),
            (edward_bundle(), EDWARD_EXPECTED),
        ):
            facts, omissions, clusters = bundle
            count, weight = document_score(facts, omissions, clusters)
            assert (count, weight) == expected
        assert time.perf_counter() - started < 1.0


def test_c2_randomized_scoring_matches_brute_force_oracle():
    with criterion(
        "1000 randomized instances match the brute-force oracle with zero tolerance in under 10s"
    ):
        started = time.perf_counter()
        rng = random.Random(20240817)
        for _ in range(1000):
            facts, omissions, clusters = random_instance(rng)
            for mode in (PolarityMode.BOTH, PolarityMode.SUPPORTING_ONLY):
                got = document_score(facts, omissions, clusters, mode)
                want = brute_force_document_score(facts, omissions, clusters, mode.value)
                assert got == want
        assert time.perf_counter() - started < 10.0


def test_c3_weight_bounds_and_monotonicity():
    with criterion(
        "cumulative weight stays within [0.1 * count, count] and never drops when an omission is added"
    ):
        rng = random.Random(911)
        for _ in range(300):
            facts, omissions, clusters = random_instance(rng)
            count, weight = document_score(facts, omissions, clusters)
            assert count == len(omissions)
            assert weight <= count + 1e-12
            assert weight >= 0.1 * count - 1e-12
            for score in score_omissions(facts, omissions, clusters):
                assert 0.1 <= score.combined <= 1.0
                assert score.combined >= score.importance_weight
                for uniqueness in score.uniqueness_weights:
                    assert score.combined >= uniqueness

            if omissions:
                fewer_count, fewer_weight = document_score(
                    facts, omissions[:-1], clusters
                )
                assert fewer_count == count - 1
                assert fewer_weight <= weight


def test_c4_margin_fixtures_and_degenerate_denominator():
    with criterion(
        "margin ratio fixtures give 2.0, 0.0, and 1.0 exactly and a vanishing denominator yields no ratio"
    ):
        spread = completion_margin(l_c0=-1.0, l_c1=-3.0, l_s0=-2.0, l_s1=-3.0)
        assert spread.ratio == 2.0
        no_gap = completion_margin(l_c0=-2.5, l_c1=-2.5, l_s0=-1.0, l_s1=-4.0)
        assert no_gap.ratio == 0.0
        even = completion_margin(l_c0=-1.5, l_c1=-3.5, l_s0=-1.5, l_s1=-3.5)
        assert even.ratio == 1.0

        degenerate = completion_margin(l_c0=-1.0, l_c1=-2.5, l_s0=-2.0, l_s1=-2.0 - 1e-12)
        assert degenerate.ratio is None
        for value in (degenerate.l_c0, degenerate.l_c1, degenerate.l_s0, degenerate.l_s1):
            assert math.isfinite(value)
        round_tripped = type(degenerate).from_json_dict(degenerate.to_json_dict())
        assert round_tripped.ratio is None

        with pytest.raises(ValueError):
            completion_margin(l_c0=float("nan"), l_c1=-1.0, l_s0=-1.0, l_s1=-2.0)
        with pytest.raises(ValueError):
            completion_margin(l_c0=float("inf"), l_c1=-1.0, l_s0=-1.0, l_s1=-2.0)


_WORDS = (
    "patient blood pressure swelling ankle medication history summary "
    "report fatigue iron daily stress work sleep therapy visit exam note plan"
).split()


def _random_text(rng):
    sentences = []
    for _ in range(rng.randint(1, 6)):
        sentence = " ".join(rng.choice(_WORDS) for _ in range(rng.randint(3, 12)))
        sentences.append(sentence)
    separators = [rng.choice([". ", "! ", "? ", "\n"]) for _ in sentences]
    return "".join(s + sep for s, sep in zip(sentences, separators))


def test_c5_ngram_overlap_parity_with_independent_oracle():
    with criterion(
        "ngram overlap scores match an independently written oracle within 1e-6 on 50 random pairs"
    ):
        rng = random.Random(5150)
        pairs = [(_random_text(rng), _random_text(rng)) for _ in range(47)]
        same = _random_text(rng)
        pairs.append((same, same))
        pairs.append(("", _random_text(rng)))
        pairs.append((_random_text(rng), ""))
        assert len(pairs) == 50
        for candidate, reference in pairs:
            mine = rouge_all(candidate, reference)
            oracle = oracle_variants(candidate, reference)
            for variant in ("rouge1", "rouge2", "rougeL", "rougeLsum"):
                got = mine[variant]
                want_p, want_r, want_f1 = oracle[variant]
                assert got.precision == pytest.approx(want_p, abs=1e-6)
                assert got.recall == pytest.approx(want_r, abs=1e-6)
                assert got.f1 == pytest.approx(want_f1, abs=1e-6)


def _random_vector(rng, n=30):
    while True:
        values = [round(rng.uniform(0.0, 5.0), 1) for _ in range(n)]
        if len(set(values)) > 1:
            return values


def test_c6_correlation_parity_with_scipy():
    with criterion(
        "correlation statistics and p-values match scipy within 1e-9 on 20 tied random vectors"
    ):
        rng = random.Random(60302)
        for _ in range(20):
            x = _random_vector(rng)
            y = _random_vector(rng)
            mine = pearson(x, y)
            reference = scipy.stats.pearsonr(x, y)
            assert mine.statistic == pytest.approx(reference.statistic, abs=1e-9)
            assert mine.p_value == pytest.approx(reference.pvalue, abs=1e-9)

            mine = spearman(x, y)
            reference = scipy.stats.spearmanr(x, y)
            assert mine.statistic == pytest.approx(reference.statistic, abs=1e-9)
            assert mine.p_value == pytest.approx(reference.pvalue, abs=1e-9)


def _subtree_bytes(root):
    return {
        str(path.relative_to(root)): path.read_bytes()
        for path in sorted(root.rglob("*"))
        if path.is_file()
    }


def test_c7_replay_determinism_end_to_end(tmp_path):
    with criterion(
        "two cassette replays over the fixture corpus produce byte-identical artifacts and golden scores"
    ):
        config = load_config(FIXTURES / "replay_config.json")
        corpus = load_corpus(FIXTURES / "corpus.json")
        trees = []
        for name in ("first", "second"):
            out_dir = tmp_path / name
            _, results = run_corpus(
                config, build_gateway(config), corpus, "corpus.json", out_dir, workers=2
            )
            for result in results:
                assert result.status == "ok"
                count, weight, ratio = EXPECTED_REPORTS[result.encounter_id]
                assert result.report.omission_count == count
                assert result.report.cumulative_weight == weight
                assert result.report.margin is not None
                assert result.report.margin.ratio == ratio
            trees.append(_subtree_bytes(out_dir / ENCOUNTERS_SUBDIR))
        assert trees[0] == trees[1]


def _replay_run_config(cassette):
    return RunConfig(
        models=ModelsConfig(summary="summarizer-v1", metric="metric-v1"),
        backend=BackendConfig(kind="mock", path=str(cassette)),
        cassette=str(cassette),
        mode=GatewayMode.REPLAY,
    )


def test_c8_malformed_replies_repair_once_then_fail(tmp_path):
    with criterion(
        "each malformed-reply cassette triggers exactly one repair round and the pinned terminal error"
    ):
        corpus = load_corpus(FIXTURES / "corpus.json")
        edward = corpus.get("enc-edward")
        for name, (_, stage, fragment) in MALFORMED_SCENARIOS.items():
            cassette = FIXTURES / "cassettes" / f"malformed_{name}.jsonl"
            config = _replay_run_config(cassette)
            out_dir = tmp_path / name
            result = run_encounter(config, build_gateway(config), edward, out_dir)

            assert result.status == "failed", name
            assert result.stage == stage, name
            assert fragment in result.reason, name

            failure = read_json(out_dir / ENCOUNTERS_SUBDIR / "enc-edward" / "failure.json")
            assert failure["attempts"] == 2, name
            assert failure["stage"] == stage, name
            assert fragment in failure["message"], name

            # The cassette's final record is the repair request: the
            # original prompt plus the bad reply and one fix-it message.
            records = [
                json.loads(line)
                for line in cassette.read_text(encoding="utf-8").splitlines()
            ]
            assert len(records[-1]["request"]["messages"]) == 3, name
            assert len(records[-2]["request"]["messages"]) == 1, name


def test_c9_truncation_cuts_match_annotations(tmp_path):
    with criterion(
        "replayed cut points agree with at least 4 of 5 human annotations and the short dialogue is skipped"
    ):
        corpus = load_corpus(FIXTURES / "truncation_corpus.json")
        annotations = read_json(FIXTURES / "truncation_annotations.json")
        cassette = FIXTURES / "cassettes" / "truncation.jsonl"
        config = _replay_run_config(cassette)
        ctx = StageContext(gateway=build_gateway(config), config=config)

        matches = 0
        for encounter_id, annotated_cut in annotations.items():
            encounter = corpus.get(encounter_id)
            cut = stage_truncate(ctx, encounter.dialogue).value
            if cut == annotated_cut:
                matches += 1
        assert len(annotations) == 5
        assert matches >= 4

        result = run_encounter(
            config, build_gateway(config), corpus.get("trunc-6"), tmp_path
        )
        assert result.status == "skipped"
        skip = read_json(tmp_path / ENCOUNTERS_SUBDIR / "trunc-6" / "skip.json")
        assert "below the minimum" in skip["reason"]
        assert skip["truncated_turns"] < 6
