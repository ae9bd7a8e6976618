"""Reference-based baseline metrics and correlation analysis.

ROUGE here is self-contained: lowercase tokenization on alphanumeric
runs, optional Porter stemming, and the summary-level union-LCS variant
with double-count prevention. Correlations (Spearman, Pearson) ship with
two-sided p-values computed from the t distribution through a native
regularized incomplete beta, so the package has no runtime dependency on
a stats library.
"""

from __future__ import annotations

import csv
import math
import re
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

_TOKEN_RE = re.compile(r"[a-z0-9]+")
_SENTENCE_SPLIT_RE = re.compile(r"[.!?]+")

_VOWELS = frozenset("aeiou")


def _is_consonant(word: str, i: int) -> bool:
    ch = word[i]
    if ch in _VOWELS:
        return False
    if ch == "y":
        return i == 0 or not _is_consonant(word, i - 1)
    return True


def _measure(stem: str) -> int:
    # Count vowel-to-consonant transitions: the m of [C](VC)^m[V].
    m = 0
    prev_vowel = False
    for i in range(len(stem)):
        if _is_consonant(stem, i):
            if prev_vowel:
                m += 1
            prev_vowel = False
        else:
            prev_vowel = True
    return m


def _has_vowel(stem: str) -> bool:
    return any(not _is_consonant(stem, i) for i in range(len(stem)))


def _ends_double_consonant(word: str) -> bool:
    return (
        len(word) >= 2
        and word[-1] == word[-2]
        and _is_consonant(word, len(word) - 1)
    )


def _ends_cvc(word: str) -> bool:
    if len(word) < 3:
        return False
    return (
        _is_consonant(word, len(word) - 3)
        and not _is_consonant(word, len(word) - 2)
        and _is_consonant(word, len(word) - 1)
        and word[-1] not in "wxy"
    )


def _replace_suffix(word: str, suffix: str, replacement: str, min_measure: int) -> Optional[str]:
    if not word.endswith(suffix):
        return None
    stem = word[: len(word) - len(suffix)]
    if _measure(stem) > min_measure:
        return stem + replacement
    return word


_STEP2_RULES = (
    ("ational", "ate"), ("tional", "tion"), ("enci", "ence"), ("anci", "ance"),
    ("izer", "ize"), ("abli", "able"), ("alli", "al"), ("entli", "ent"),
    ("eli", "e"), ("ousli", "ous"), ("ization", "ize"), ("ation", "ate"),
    ("ator", "ate"), ("alism", "al"), ("iveness", "ive"), ("fulness", "ful"),
    ("ousness", "ous"), ("aliti", "al"), ("iviti", "ive"), ("biliti", "ble"),
)

_STEP3_RULES = (
    ("icate", "ic"), ("ative", ""), ("alize", "al"), ("iciti", "ic"),
    ("ical", "ic"), ("ful", ""), ("ness", ""),
)

_STEP4_SUFFIXES = (
    "al", "ance", "ence", "er", "ic", "able", "ible", "ant", "ement",
    "ment", "ent", "ou", "ism", "ate", "iti", "ous", "ive", "ize",
)


def porter_stem(word: str) -> str:
    """The 1980 Porter algorithm over a lowercase alphabetic word."""
    if len(word) <= 2:
        return word

    # Step 1a
    if word.endswith("sses"):
        word = word[:-2]
    elif word.endswith("ies"):
        word = word[:-2]
    elif word.endswith("ss"):
        pass
    elif word.endswith("s"):
        word = word[:-1]

    # Step 1b
    if word.endswith("eed"):
        if _measure(word[:-3]) > 0:
            word = word[:-1]
    elif word.endswith("ed") and _has_vowel(word[:-2]):
        word = word[:-2]
        word = _step1b_cleanup(word)
    elif word.endswith("ing") and _has_vowel(word[:-3]):
        word = word[:-3]
        word = _step1b_cleanup(word)

    # Step 1c
    if word.endswith("y") and _has_vowel(word[:-1]):
        word = word[:-1] + "i"

    # Step 2
    for suffix, replacement in _STEP2_RULES:
        result = _replace_suffix(word, suffix, replacement, 0)
        if result is not None:
            word = result
            break

    # Step 3
    for suffix, replacement in _STEP3_RULES:
        result = _replace_suffix(word, suffix, replacement, 0)
        if result is not None:
            word = result
            break

    # Step 4
    for suffix in _STEP4_SUFFIXES:
        if word.endswith(suffix):
            if _measure(word[: len(word) - len(suffix)]) > 1:
                word = word[: len(word) - len(suffix)]
            break
    else:
        if word.endswith("ion") and len(word) > 3 and word[-4] in "st":
            if _measure(word[:-3]) > 1:
                word = word[:-3]

    # Step 5a
    if word.endswith("e"):
        stem = word[:-1]
        m = _measure(stem)
        if m > 1 or (m == 1 and not _ends_cvc(stem)):
            word = stem

    # Step 5b
    if word.endswith("ll") and _measure(word) > 1:
        word = word[:-1]

    return word


def _step1b_cleanup(word: str) -> str:
    if word.endswith(("at", "bl", "iz")):
        return word + "e"
    if _ends_double_consonant(word) and word[-1] not in "lsz":
        return word[:-1]
    if _measure(word) == 1 and _ends_cvc(word):
        return word + "e"
    return word


def tokenize(text: str, use_stemmer: bool = False) -> list[str]:
    """Lowercase alphanumeric runs; everything else is a separator."""
    tokens = _TOKEN_RE.findall(text.lower())
    if use_stemmer:
        # Very short tokens are left alone; stemming them loses more
        # than it normalizes.
        tokens = [porter_stem(t) if len(t) > 3 else t for t in tokens]
    return tokens


def split_sentences(text: str) -> list[str]:
    """Sentences end at newlines or terminal punctuation runs."""
    sentences = []
    for line in text.splitlines():
        for chunk in _SENTENCE_SPLIT_RE.split(line):
            chunk = chunk.strip()
            if chunk:
                sentences.append(chunk)
    return sentences


@dataclass(frozen=True)
class RougeScore:
    precision: float
    recall: float
    f1: float

    def __post_init__(self) -> None:
        for label, value in (
            ("precision", self.precision),
            ("recall", self.recall),
            ("f1", self.f1),
        ):
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"{label} {value} outside [0, 1]")


def _f1(precision: float, recall: float) -> float:
    if precision + recall == 0.0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


def _score(overlap: int, candidate_total: int, reference_total: int) -> RougeScore:
    if candidate_total == 0 or reference_total == 0:
        return RougeScore(0.0, 0.0, 0.0)
    precision = overlap / candidate_total
    recall = overlap / reference_total
    return RougeScore(precision, recall, _f1(precision, recall))


def _ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def rouge_n(candidate: str, reference: str, n: int, use_stemmer: bool = False) -> RougeScore:
    if n < 1:
        raise ValueError(f"n must be positive, got {n}")
    cand = _ngrams(tokenize(candidate, use_stemmer), n)
    ref = _ngrams(tokenize(reference, use_stemmer), n)
    overlap = sum(min(count, ref[gram]) for gram, count in cand.items())
    return _score(overlap, sum(cand.values()), sum(ref.values()))


def _lcs_table(a: Sequence[str], b: Sequence[str]) -> list[list[int]]:
    rows = [[0] * (len(b) + 1) for _ in range(len(a) + 1)]
    for i in range(1, len(a) + 1):
        for j in range(1, len(b) + 1):
            if a[i - 1] == b[j - 1]:
                rows[i][j] = rows[i - 1][j - 1] + 1
            else:
                rows[i][j] = max(rows[i - 1][j], rows[i][j - 1])
    return rows


def lcs_length(a: Sequence[str], b: Sequence[str]) -> int:
    if not a or not b:
        return 0
    return _lcs_table(a, b)[len(a)][len(b)]


def rouge_l(candidate: str, reference: str, use_stemmer: bool = False) -> RougeScore:
    cand = tokenize(candidate, use_stemmer)
    ref = tokenize(reference, use_stemmer)
    return _score(lcs_length(cand, ref), len(cand), len(ref))


def _lcs_indices(ref: Sequence[str], cand: Sequence[str]) -> set[int]:
    """Positions in ref participating in one LCS with cand."""
    if not ref or not cand:
        return set()
    table = _lcs_table(ref, cand)
    indices = set()
    i, j = len(ref), len(cand)
    while i > 0 and j > 0:
        if ref[i - 1] == cand[j - 1]:
            indices.add(i - 1)
            i -= 1
            j -= 1
        elif table[i - 1][j] >= table[i][j - 1]:
            i -= 1
        else:
            j -= 1
    return indices


def rouge_lsum(candidate: str, reference: str, use_stemmer: bool = False) -> RougeScore:
    """Summary-level LCS: per reference sentence, union the LCS hits
    against every candidate sentence, then cap each token's credit by
    its count on both sides so nothing is matched twice."""
    cand_sents = [tokenize(s, use_stemmer) for s in split_sentences(candidate)]
    ref_sents = [tokenize(s, use_stemmer) for s in split_sentences(reference)]
    cand_sents = [s for s in cand_sents if s]
    ref_sents = [s for s in ref_sents if s]
    cand_total = sum(len(s) for s in cand_sents)
    ref_total = sum(len(s) for s in ref_sents)
    if cand_total == 0 or ref_total == 0:
        return RougeScore(0.0, 0.0, 0.0)

    cand_counts = Counter(t for s in cand_sents for t in s)
    ref_counts = Counter(t for s in ref_sents for t in s)
    hits = 0
    for ref_sent in ref_sents:
        union: set[int] = set()
        for cand_sent in cand_sents:
            union |= _lcs_indices(ref_sent, cand_sent)
        for index in union:
            token = ref_sent[index]
            if cand_counts[token] > 0 and ref_counts[token] > 0:
                hits += 1
                cand_counts[token] -= 1
                ref_counts[token] -= 1
    return _score(hits, cand_total, ref_total)


ROUGE_VARIANTS = ("rouge1", "rouge2", "rougeL", "rougeLsum")


def rouge_all(candidate: str, reference: str, use_stemmer: bool = False) -> dict[str, RougeScore]:
    return {
        "rouge1": rouge_n(candidate, reference, 1, use_stemmer),
        "rouge2": rouge_n(candidate, reference, 2, use_stemmer),
        "rougeL": rouge_l(candidate, reference, use_stemmer),
        "rougeLsum": rouge_lsum(candidate, reference, use_stemmer),
    }


def _betacf(a: float, b: float, x: float) -> float:
    """Continued fraction for the incomplete beta, modified Lentz."""
    max_iterations = 300
    epsilon = 3e-16
    tiny = 1e-300

    qab = a + b
    qap = a + 1.0
    qam = a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < tiny:
        d = tiny
    d = 1.0 / d
    h = d
    for m in range(1, max_iterations + 1):
        m2 = 2 * m
        numerator = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + numerator * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + numerator / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        h *= d * c
        numerator = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + numerator * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + numerator / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < epsilon:
            return h
    raise ArithmeticError(f"incomplete beta failed to converge for a={a} b={b} x={x}")


def regularized_incomplete_beta(a: float, b: float, x: float) -> float:
    if a <= 0 or b <= 0:
        raise ValueError(f"shape parameters must be positive, got a={a} b={b}")
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    ln_front = (
        math.lgamma(a + b)
        - math.lgamma(a)
        - math.lgamma(b)
        + a * math.log(x)
        + b * math.log1p(-x)
    )
    front = math.exp(ln_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def _two_sided_p_from_t(t: float, df: float) -> float:
    if math.isinf(t):
        return 0.0
    return regularized_incomplete_beta(df / 2.0, 0.5, df / (df + t * t))


@dataclass(frozen=True)
class CorrelationResult:
    method: str
    statistic: float
    p_value: float
    n: int

    def __post_init__(self) -> None:
        if self.method not in ("pearson", "spearman"):
            raise ValueError(f"unknown correlation method {self.method!r}")
        if not -1.0 <= self.statistic <= 1.0:
            raise ValueError(f"correlation {self.statistic} outside [-1, 1]")
        if not 0.0 <= self.p_value <= 1.0:
            raise ValueError(f"p-value {self.p_value} outside [0, 1]")


def _validate_pair(x: Sequence[float], y: Sequence[float]) -> None:
    if len(x) != len(y):
        raise ValueError(f"length mismatch: {len(x)} vs {len(y)}")
    if len(x) < 3:
        raise ValueError(f"need at least 3 paired observations, got {len(x)}")
    for label, values in (("x", x), ("y", y)):
        for v in values:
            if not math.isfinite(v):
                raise ValueError(f"{label} contains a non-finite value {v}")


def pearson(x: Sequence[float], y: Sequence[float]) -> CorrelationResult:
    _validate_pair(x, y)
    n = len(x)
    mean_x = math.fsum(x) / n
    mean_y = math.fsum(y) / n
    dx = [v - mean_x for v in x]
    dy = [v - mean_y for v in y]
    ss_x = math.fsum(v * v for v in dx)
    ss_y = math.fsum(v * v for v in dy)
    if ss_x == 0.0 or ss_y == 0.0:
        raise ValueError("correlation undefined for a constant input")
    r = math.fsum(a * b for a, b in zip(dx, dy)) / math.sqrt(ss_x * ss_y)
    # Floating error can push |r| a hair past 1.
    r = max(-1.0, min(1.0, r))
    df = n - 2
    if abs(r) == 1.0:
        p = 0.0
    else:
        t = r * math.sqrt(df / (1.0 - r * r))
        p = _two_sided_p_from_t(t, df)
    return CorrelationResult(method="pearson", statistic=r, p_value=p, n=n)


def average_ranks(values: Sequence[float]) -> list[float]:
    """1-based ranks with ties sharing their average rank."""
    n = len(values)
    order = sorted(range(n), key=lambda i: values[i])
    ranks = [0.0] * n
    i = 0
    while i < n:
        j = i
        while j + 1 < n and values[order[j + 1]] == values[order[i]]:
            j += 1
        average = (i + j) / 2.0 + 1.0
        for k in range(i, j + 1):
            ranks[order[k]] = average
        i = j + 1
    return ranks


def spearman(x: Sequence[float], y: Sequence[float]) -> CorrelationResult:
    _validate_pair(x, y)
    result = pearson(average_ranks(x), average_ranks(y))
    return CorrelationResult(
        method="spearman", statistic=result.statistic, p_value=result.p_value, n=result.n
    )


@dataclass(frozen=True)
class MetricVector:
    """A named per-encounter scalar metric."""

    name: str
    values: Mapping[str, float]

    def __post_init__(self) -> None:
        if not self.name:
            raise ValueError("metric name must be non-empty")
        frozen = dict(self.values)
        if not frozen:
            raise ValueError(f"metric {self.name}: no values")
        for encounter_id, value in frozen.items():
            if not isinstance(value, (int, float)) or not math.isfinite(value):
                raise ValueError(
                    f"metric {self.name}: non-finite value {value!r} for {encounter_id}"
                )
        object.__setattr__(self, "values", frozen)

    def aligned(self, other: "MetricVector") -> tuple[list[float], list[float], list[str]]:
        shared = sorted(set(self.values) & set(other.values))
        return (
            [self.values[k] for k in shared],
            [other.values[k] for k in shared],
            shared,
        )


def import_external_metric(path: Path | str, metric_name: Optional[str] = None) -> MetricVector:
    """Load one per-encounter metric from a CSV with an encounter_id
    column. With no explicit name the file must have exactly one other
    column."""
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as handle:
        reader = csv.DictReader(handle)
        if reader.fieldnames is None:
            raise ValueError(f"{path}: empty CSV")
        fields = list(reader.fieldnames)
        if "encounter_id" not in fields:
            raise ValueError(f"{path}: no encounter_id column (found {fields})")
        candidates = [f for f in fields if f != "encounter_id"]
        if metric_name is None:
            if len(candidates) != 1:
                raise ValueError(
                    f"{path}: ambiguous metric column, specify one of {candidates}"
                )
            metric_name = candidates[0]
        elif metric_name not in candidates:
            raise ValueError(f"{path}: no column {metric_name!r} (found {candidates})")
        values: dict[str, float] = {}
        for row_no, row in enumerate(reader, start=2):
            encounter_id = (row.get("encounter_id") or "").strip()
            if not encounter_id:
                raise ValueError(f"{path}:{row_no}: blank encounter_id")
            if encounter_id in values:
                raise ValueError(f"{path}:{row_no}: duplicate encounter_id {encounter_id}")
            raw = (row.get(metric_name) or "").strip()
            try:
                values[encounter_id] = float(raw)
            except ValueError as exc:
                raise ValueError(
                    f"{path}:{row_no}: {metric_name} value {raw!r} is not a number"
                ) from exc
    if not values:
        raise ValueError(f"{path}: no data rows")
    return MetricVector(name=metric_name, values=values)


@dataclass(frozen=True)
class CorrelationRow:
    metric_name: str
    n: int
    spearman_r: float
    spearman_p: float
    pearson_r: float
    pearson_p: float


def correlation_table(
    target: MetricVector, baselines: Iterable[MetricVector]
) -> list[CorrelationRow]:
    """Correlate the target metric against each baseline over the
    encounters they share."""
    rows = []
    for baseline in baselines:
        x, y, shared = target.aligned(baseline)
        if len(shared) < 3:
            raise ValueError(
                f"metrics {target.name} and {baseline.name} share only "
                f"{len(shared)} encounters; need at least 3"
            )
        s = spearman(x, y)
        p = pearson(x, y)
        rows.append(
            CorrelationRow(
                metric_name=baseline.name,
                n=s.n,
                spearman_r=s.statistic,
                spearman_p=s.p_value,
                pearson_r=p.statistic,
                pearson_p=p.p_value,
            )
        )
    return rows


def render_correlation_table(target_name: str, rows: Sequence[CorrelationRow]) -> str:
    header = f"correlations against {target_name}"
    columns = f"{'metric':<20} {'n':>4} {'spearman':>9} {'p':>8} {'pearson':>9} {'p':>8}"
    lines = [header, "-" * len(columns), columns]
    for row in rows:
        lines.append(
            f"{row.metric_name:<20} {row.n:>4} {row.spearman_r:>9.4f} "
            f"{row.spearman_p:>8.4f} {row.pearson_r:>9.4f} {row.pearson_p:>8.4f}"
        )
    return "\n".join(lines)


def rouge_vectors(
    pairs: Mapping[str, tuple[str, str]], use_stemmer: bool = False
) -> list[MetricVector]:
    """Per-encounter ROUGE F1 vectors over (candidate, reference) pairs."""
    collected: dict[str, dict[str, float]] = {name: {} for name in ROUGE_VARIANTS}
    for encounter_id, (candidate, reference) in pairs.items():
        for name, score in rouge_all(candidate, reference, use_stemmer).items():
            collected[name][encounter_id] = score.f1
    return [MetricVector(name=name, values=collected[name]) for name in ROUGE_VARIANTS]
