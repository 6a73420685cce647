"""Equal error rate over scored trials, by discrete threshold sweep.

Scores are oriented higher = more bonafide everywhere in this package. The
candidate thresholds are the unique scores plus +inf; at a threshold t,
FAR(t) is the fraction of spoof trials with score >= t and FRR(t) the
fraction of bonafide trials with score < t. EER is (FAR+FRR)/2 at the
threshold minimizing |FAR - FRR| (ties to the lower threshold), which makes
the result exactly reproducible by exhaustive sweep and invariant under any
strictly increasing transform of the scores. ROC-interpolation variants
differ from this by O(1/N).
"""

from dataclasses import dataclass

import numpy as np

BONAFIDE_LABEL = "bonafide"
SPOOF_LABEL = "spoof"


class MetricUndefinedError(ValueError):
    """EER needs at least one trial of each class."""


@dataclass(frozen=True)
class ScoredTrial:
    id: str
    score: float
    label: str  # "bonafide" or "spoof"


def _split_scores(trials):
    bona, spoof = [], []
    for t in trials:
        if not np.isfinite(t.score):
            raise ValueError(f"trial {t.id}: non-finite score {t.score}")
        if t.label == BONAFIDE_LABEL:
            bona.append(t.score)
        elif t.label == SPOOF_LABEL:
            spoof.append(t.score)
        else:
            raise ValueError(f"trial {t.id}: unknown label {t.label!r}")
    if not bona or not spoof:
        raise MetricUndefinedError(
            f"EER undefined: {len(bona)} bonafide and {len(spoof)} spoof trials"
        )
    return np.sort(np.asarray(bona)), np.sort(np.asarray(spoof))


def _far_frr(bona, spoof, threshold):
    far = np.searchsorted(spoof, threshold, side="left")
    frr = np.searchsorted(bona, threshold, side="left")
    return (len(spoof) - far) / len(spoof), frr / len(bona)


def eer(trials):
    """(equal error rate, operating threshold) for a list of ScoredTrial."""
    bona, spoof = _split_scores(trials)
    thresholds = np.concatenate([np.unique(np.concatenate([bona, spoof])), [np.inf]])
    best = None
    for t in thresholds:
        far, frr = _far_frr(bona, spoof, t)
        gap = abs(far - frr)
        if best is None or gap < best[0]:
            best = (gap, t, (far + frr) / 2.0)
    return best[2], best[1]


def det_points(trials):
    """(threshold, FAR, FRR) at each unique score, with -inf/+inf endpoints.

    FAR is non-increasing and FRR non-decreasing along the list; the
    endpoints contribute (1, 0) and (0, 1).
    """
    bona, spoof = _split_scores(trials)
    thresholds = np.unique(np.concatenate([bona, spoof]))
    points = [(-np.inf, 1.0, 0.0)]
    for t in thresholds:
        far, frr = _far_frr(bona, spoof, t)
        points.append((float(t), far, frr))
    points.append((np.inf, 0.0, 1.0))
    return points


# ---------------------------------------------------------------------------
# score files: TSV with columns id, score, label; '#' lines are comments
# ---------------------------------------------------------------------------


def write_score_file(path, trials):
    with open(path, "w", encoding="utf-8") as f:
        f.write("# id\tscore\tlabel\n")
        for t in trials:
            f.write(f"{t.id}\t{t.score!r}\t{t.label}\n")


def read_score_file(path):
    trials = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise ValueError(f"{path}:{lineno}: expected 3 tab-separated fields")
            trials.append(ScoredTrial(id=parts[0], score=float(parts[1]), label=parts[2]))
    return trials
