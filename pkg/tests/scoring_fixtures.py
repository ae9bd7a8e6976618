"""Hand-pinned encounter bundles with known document scores.

Three encounters exercise the scoring rules end to end:

* martha: 19 facts, two supporting clusters, one refuting cluster with a
  two-fact subcluster; five omissions totalling 1.7.
* stephanie: uniqueness dominance; the low-hemoglobin fact is only
  "important" (0.5) but sits alone in a subcluster, so its penalty is
  1.0. Five omissions totalling 1.8.
* edward: one critical omission, score (1, 1.0).
"""

from factgap.datamodel import (
    ClusterGroup,
    ContentCategory,
    EvidenceClustering,
    Fact,
    Importance,
    Omission,
    Polarity,
    SubCluster,
)

_MEDICAL = ContentCategory.MEDICAL
_SDOH = ContentCategory.CARE_ACCESS_OR_SDOH
_NON_MEDICAL = ContentCategory.NON_MEDICAL


def _fact(fact_id, text, category, importance):
    return Fact(
        fact_id=fact_id,
        text=text,
        content_category=category,
        importance=Importance(importance),
    )


MARTHA_FACTS = [
    _fact("F0", "Martha is a 50-year-old female", _NON_MEDICAL, "other"),
    _fact(
        "F1",
        "Martha has a past medical history of congestive heart failure, depression, and hypertension",
        _MEDICAL,
        "critical",
    ),
    _fact("F2", "Martha lives with her husband", _NON_MEDICAL, "other"),
    _fact("F3", "Martha works as an accountant", _NON_MEDICAL, "other"),
    _fact("F4", "Martha's daughter recently moved back home", _NON_MEDICAL, "other"),
    _fact("F5", "Martha drinks two cups of coffee a day", _NON_MEDICAL, "other"),
    _fact("F6", "Martha walks her dog in the evenings", _NON_MEDICAL, "other"),
    _fact(
        "F7",
        "Martha reports her home blood pressure readings have been higher than usual",
        _MEDICAL,
        "important",
    ),
    _fact("F8", "Martha has been sleeping poorly over the past month", _MEDICAL, "important"),
    _fact("F9", "Martha takes her heart failure medications every day", _MEDICAL, "important"),
    _fact("F10", "Martha has had no swelling in her legs", _MEDICAL, "important"),
    _fact("F11", "Martha had a flu shot last fall", _MEDICAL, "other"),
    _fact("F12", "Martha attends weekly therapy sessions", _MEDICAL, "important"),
    _fact("F13", "Martha's pharmacy is a twenty minute drive away", _SDOH, "other"),
    _fact(
        "F14",
        "Martha is forgetting to take her blood pressure medication",
        _MEDICAL,
        "critical",
    ),
    _fact(
        "F15",
        "Martha's blood pressure has been going up with work stress",
        _MEDICAL,
        "critical",
    ),
    _fact("F16", "Martha has been working long hours", _SDOH, "important"),
    _fact(
        "F17",
        "Martha has to get data ready for the end of the fiscal year",
        _SDOH,
        "important",
    ),
    _fact(
        "F18",
        "Martha's workload should lighten after the fiscal year closes",
        _SDOH,
        "important",
    ),
]

MARTHA_CLUSTERS = [
    EvidenceClustering(
        diagnosis_name="Uncontrolled Hypertension",
        polarity=Polarity.SUPPORTING,
        subclusters=(
            SubCluster(
                group=ClusterGroup.SOCIAL_DETERMINANT_OF_HEALTH,
                mechanism_label="Work-related stress",
                fact_ids=("F15",),
            ),
            SubCluster(
                group=ClusterGroup.SYMPTOMS,
                mechanism_label="Stress-induced hypertension",
                fact_ids=("F15",),
            ),
            SubCluster(
                group=ClusterGroup.TREATMENTS,
                mechanism_label="Medication non-adherence",
                fact_ids=("F14",),
            ),
        ),
    ),
    EvidenceClustering(
        diagnosis_name="Well-managed Congestive Heart Failure",
        polarity=Polarity.SUPPORTING,
        subclusters=(
            SubCluster(
                group=ClusterGroup.OTHER,
                mechanism_label="Past medical history",
                fact_ids=("F1",),
            ),
            SubCluster(
                group=ClusterGroup.SYMPTOMS,
                mechanism_label="NONE",
                fact_ids=("F10",),
            ),
            SubCluster(
                group=ClusterGroup.TREATMENTS,
                mechanism_label="Medication adherence",
                fact_ids=("F9",),
            ),
        ),
    ),
    EvidenceClustering(
        diagnosis_name="Uncontrolled Hypertension",
        polarity=Polarity.REFUTING,
        subclusters=(
            SubCluster(
                group=ClusterGroup.TREATMENTS,
                mechanism_label="Antihypertensive Medication Adherence",
                fact_ids=("F14", "F9"),
            ),
        ),
    ),
]

MARTHA_OMISSIONS = [
    Omission(fact_id="F17", explanation="fiscal year deadline pressure is not in the summary"),
    Omission(fact_id="F18", explanation="expected workload relief is not in the summary"),
    Omission(fact_id="F4", explanation="daughter moving back home is not in the summary"),
    Omission(fact_id="F6", explanation="evening dog walks are not in the summary"),
    Omission(fact_id="F8", explanation="poor sleep over the past month is not in the summary"),
]

# importance-only penalties: 0.5 + 0.5 + 0.1 + 0.1 + 0.5
MARTHA_EXPECTED = (5, 1.7)


STEPHANIE_FACTS = [
    _fact("F0", "Stephanie is a 34-year-old female", _NON_MEDICAL, "other"),
    _fact("F1", "Stephanie has a history of iron deficiency anemia", _MEDICAL, "critical"),
    _fact(
        "F2",
        "Stephanie's last echocardiogram showed normal heart function",
        _MEDICAL,
        "important",
    ),
    _fact("F3", "Stephanie takes an iron supplement most mornings", _MEDICAL, "important"),
    _fact("F4", "Stephanie has been feeling more tired than usual", _MEDICAL, "important"),
    _fact("F5", "Stephanie recently traveled to Vermont", _NON_MEDICAL, "other"),
    _fact("F6", "Stephanie has been eating a lot of cheeseburgers", _NON_MEDICAL, "other"),
    _fact("F7", "Stephanie denies shortness of breath", _MEDICAL, "other"),
    _fact("F8", "Stephanie's recent labs showed low hemoglobin", _MEDICAL, "important"),
    _fact(
        "F9",
        "Stephanie is planning to start a new exercise program",
        _NON_MEDICAL,
        "other",
    ),
]

STEPHANIE_CLUSTERS = [
    EvidenceClustering(
        diagnosis_name="Iron Deficiency Anemia",
        polarity=Polarity.SUPPORTING,
        subclusters=(
            SubCluster(
                group=ClusterGroup.TESTS,
                mechanism_label="Low hemoglobin",
                fact_ids=("F8",),
            ),
            SubCluster(
                group=ClusterGroup.SYMPTOMS,
                mechanism_label="Fatigue",
                fact_ids=("F4",),
            ),
            SubCluster(
                group=ClusterGroup.TREATMENTS,
                mechanism_label="Iron supplementation",
                fact_ids=("F3",),
            ),
        ),
    ),
    EvidenceClustering(
        diagnosis_name="Congestive Heart Failure",
        polarity=Polarity.REFUTING,
        subclusters=(
            SubCluster(
                group=ClusterGroup.TESTS,
                mechanism_label="Normal cardiac and anemia workup",
                fact_ids=("F2", "F8"),
            ),
        ),
    ),
]

STEPHANIE_OMISSIONS = [
    Omission(fact_id="F2", explanation="normal heart function is not in the summary"),
    Omission(fact_id="F5", explanation="travel to Vermont is not in the summary"),
    Omission(fact_id="F6", explanation="diet details are not in the summary"),
    Omission(fact_id="F7", explanation="absence of shortness of breath is not in the summary"),
    Omission(fact_id="F8", explanation="the low hemoglobin result is not in the summary"),
]

# 0.5 (importance) + 0.1 + 0.1 + 0.1 + 1.0 (singleton subcluster)
STEPHANIE_EXPECTED = (5, 1.8)


EDWARD_FACTS = [
    _fact("F0", "Edward is a 58-year-old male", _NON_MEDICAL, "other"),
    _fact("F1", "Edward has a history of hypertension", _MEDICAL, "important"),
    _fact("F2", "Edward has new swelling in both ankles", _MEDICAL, "critical"),
    _fact(
        "F3",
        "Edward's blood pressure medication was changed last month",
        _MEDICAL,
        "important",
    ),
]

EDWARD_CLUSTERS = [
    EvidenceClustering(
        diagnosis_name="Medication-induced edema",
        polarity=Polarity.SUPPORTING,
        subclusters=(
            SubCluster(
                group=ClusterGroup.SYMPTOMS,
                mechanism_label="Peripheral edema",
                fact_ids=("F2", "F3"),
            ),
        ),
    ),
]

EDWARD_OMISSIONS = [
    Omission(fact_id="F2", explanation="the new ankle swelling is not in the summary"),
]

EDWARD_EXPECTED = (1, 1.0)


def martha_bundle():
    return MARTHA_FACTS, MARTHA_OMISSIONS, MARTHA_CLUSTERS


def stephanie_bundle():
    return STEPHANIE_FACTS, STEPHANIE_OMISSIONS, STEPHANIE_CLUSTERS


def edward_bundle():
    return EDWARD_FACTS, EDWARD_OMISSIONS, EDWARD_CLUSTERS
