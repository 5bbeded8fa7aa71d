"""Automatic evaluation and the centroid baselines.

A riddle's score is the highest distributional cosine between its
groundtruth and any of the top ten answers; a dataset's accuracy is the mean
score as a percentage.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import OutOfVocabularyError
from .kgraph import KnowledgeStore, mapped

TOP_N = 10


@dataclass(frozen=True)
class RiddleScore:
    riddle_id: str
    max_sim: float
    best_answer: str
    excluded: bool = False


def score_riddle(answers, groundtruth, store: KnowledgeStore, riddle_id: str = "") -> RiddleScore:
    """Best raw cosine between the groundtruth phrase and the top ten answers.

    ``answers`` holds tokens (or phrases) in rank order. An answer with no
    in-vocabulary token counts as -1. A groundtruth with no in-vocabulary
    token marks the riddle as excluded.
    """
    answers = list(answers)[:TOP_N]
    if not answers:
        raise ValueError("need at least one answer")
    gt = store.phrase_tokens(list(groundtruth))
    if not gt:
        return RiddleScore(riddle_id, float("nan"), "", excluded=True)
    best, best_answer = -np.inf, ""
    for ans in answers:
        try:
            sim = store.phrase_similarity(store.phrase_tokens(ans), gt)
        except OutOfVocabularyError:
            sim = -1.0
        if sim > best:
            best, best_answer = sim, ans if isinstance(ans, str) else " ".join(ans)
    return RiddleScore(riddle_id, float(best), best_answer)


def dataset_accuracy(scores) -> float:
    kept = [s.max_sim for s in scores if not s.excluded]
    if not kept:
        raise ValueError("no scored riddles")
    return 100.0 * float(np.mean(kept))


def nearest_concepts(vector, store: KnowledgeStore, k: int = TOP_N):
    """Top ``k`` vocabulary concepts by w2v cosine to ``vector``, mapped scores."""
    norm = np.linalg.norm(vector)
    if norm == 0:
        raise ValueError("query vector is all-zero")
    cos = np.clip(store.unit_vectors("w2v") @ (vector / norm), -1.0, 1.0)
    order = np.lexsort((np.arange(len(cos)), -np.round(cos, 12)))[:k]
    from .pipeline import AnswerList
    return AnswerList(tuple((int(i), float(mapped(cos[i]))) for i in order))


def baseline_vb(riddle, store: KnowledgeStore, k: int = TOP_N):
    """Nearest concepts to the mean of the images' confidence-weighted centroids."""
    unit = store.unit_vectors("w2v")
    centroids = []
    for ss in riddle.images:
        w = ss.weights
        if w.sum() <= 0:
            raise ValueError(f"image {ss.image_id}: seed weights sum to zero")
        centroids.append(w @ unit[ss.concepts] / w.sum())
    return nearest_concepts(np.mean(centroids, axis=0), store, k)


def centroid_answers(candidates, store: KnowledgeStore, top: int, k: int = TOP_N):
    """Nearest concepts to the mean over images of each image's top-target mean."""
    unit = store.unit_vectors("w2v")
    means = [unit[list(c.targets[:top])].mean(axis=0) for c in candidates if c.targets]
    if not means:
        raise ValueError("no ranked targets in any image")
    return nearest_concepts(np.mean(means, axis=0), store, k)


def baseline_rr(riddle, store: KnowledgeStore, theta=None, variant: str = "GUR"):
    from .pipeline import solve_riddle
    return solve_riddle(riddle, store, theta, variant, stage="RR")


def write_report(path, scores, accuracy: float):
    lines = []
    for s in scores:
        value = "excluded" if s.excluded else f"{s.max_sim:.6f}"
        lines.append(f"{s.riddle_id}\t{value}\t{s.best_answer}")
    lines.append(f"TOTAL\t{accuracy:.1f}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
