"""End-to-end riddle solving: ingest, reweight, retrieve, rank, infer.

For each image the seeds are reweighted to correct the detector's bias, each
seed retrieves visually related targets, the targets are ranked against the
image's confidence vector, and a per-image PSL model (Stage I) scores them.
The survivors of all four images then compete in one joint model (Stage II).
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import hlmrf
from .errors import RiddleFormatError
from .kgraph import KnowledgeStore, normalize_token
from .rules import SeedSet, TargetCandidateSet, ThetaConfig, build_stage1, build_stage2
from .vissim import retrieve_targets

log = logging.getLogger(__name__)

VARIANTS = ("UR", "GUR", "BUR")
STAGES = ("VB", "RR", "All")
N_IMAGES = 4
DEFAULT_CONCRETENESS = 3.0


@dataclass(frozen=True)
class Riddle:
    id: str
    images: tuple[SeedSet, ...]
    groundtruth: tuple[str, ...] = ()
    warnings: tuple[str, ...] = ()

    def __post_init__(self):
        if len(self.images) != N_IMAGES:
            raise RiddleFormatError(f"riddle {self.id!r} has {len(self.images)} images, need {N_IMAGES}")

    def with_images(self, images) -> "Riddle":
        return Riddle(self.id, tuple(images), self.groundtruth, self.warnings)


@dataclass(frozen=True)
class BurScores:
    ecs: np.ndarray
    cr: np.ndarray
    cs: np.ndarray


@dataclass(frozen=True)
class BurFlowGraph:
    nodes: tuple[int, ...]                  # seed positions, decreasing CS
    edges: tuple[tuple[int, int], ...]      # (u, v) seed positions
    resources: tuple[float, ...]            # initial confidence per seed position


@dataclass(frozen=True)
class AnswerList:
    answers: tuple[tuple[int, float], ...]

    def __len__(self):
        return len(self.answers)

    def __iter__(self):
        return iter(self.answers)

    @property
    def ids(self):
        return [c for c, _ in self.answers]

    def tokens(self, store: KnowledgeStore):
        return [store.token(c) for c, _ in self.answers]


@dataclass
class RiddleTrace:
    """Intermediate results of one solve, kept for inspection and tests."""

    reweighted: tuple[SeedSet, ...] = ()
    retrieved: list = field(default_factory=list)     # per image, per seed: [(cid, score)]
    candidates: list = field(default_factory=list)    # per image TargetCandidateSet
    stage1_models: list = field(default_factory=list)
    stage1_scores: list = field(default_factory=list)  # per image {cid: score}
    survivors: list = field(default_factory=list)      # per image {cid: score}
    stage2_model: object = None
    stage2_scores: dict = field(default_factory=dict)


# ingest

def parse_riddle(data: dict, store: KnowledgeStore, name: str = "") -> Riddle:
    """Build a Riddle from its JSON object.

    Labels outside the vocabulary are dropped with a warning; confidences are
    clamped to [0, 1]; a label repeated within an image keeps its highest
    confidence.
    """
    if not isinstance(data, dict):
        raise RiddleFormatError(f"{name}: top level must be an object")
    rid = str(data.get("id", name))
    images = data.get("images")
    if not isinstance(images, list) or len(images) != N_IMAGES:
        n = len(images) if isinstance(images, list) else "no"
        raise RiddleFormatError(f"riddle {rid!r}: {n} images, need {N_IMAGES}")
    warnings = []
    seedsets = []
    for k, image in enumerate(images):
        try:
            detections = image["detections"]
            tag = str(image.get("classifier_tag", ""))
        except (TypeError, KeyError):
            raise RiddleFormatError(f"riddle {rid!r}: image {k} has no detections") from None
        best: dict[int, float] = {}
        for det in detections:
            try:
                label, conf = det["label"], float(det["confidence"])
            except (TypeError, KeyError, ValueError):
                raise RiddleFormatError(f"riddle {rid!r}: bad detection {det!r} in image {k}") from None
            if not np.isfinite(conf):
                raise RiddleFormatError(f"riddle {rid!r}: non-finite confidence in image {k}")
            token = normalize_token(str(label))
            if token not in store:
                warnings.append(f"image {k}: dropped out-of-vocabulary label {token!r}")
                continue
            cid = store.id(token)
            conf = min(max(conf, 0.0), 1.0)
            best[cid] = max(conf, best.get(cid, 0.0))
        if not best:
            raise RiddleFormatError(f"riddle {rid!r}: image {k} has no in-vocabulary detections")
        seedsets.append(SeedSet(k, tuple(best.items()), tag))
    for w in warnings:
        log.warning("%s: %s", rid, w)
    gt = data.get("groundtruth", [])
    if isinstance(gt, str):
        gt = [gt]
    return Riddle(rid, tuple(seedsets), tuple(normalize_token(str(t)) for t in gt), tuple(warnings))


def ingest_riddle(path, store: KnowledgeStore) -> Riddle:
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise RiddleFormatError(f"{path}: {exc}") from None
    return parse_riddle(data, store, path.stem)


# reweighting

def _normalized(seedset: SeedSet, weights) -> SeedSet:
    weights = np.asarray(weights, dtype=float)
    total = weights.sum()
    if total <= 0:
        raise ValueError(f"image {seedset.image_id}: seed weights sum to zero")
    return seedset.with_weights(weights / total)


def reweight_ur(seedset: SeedSet) -> SeedSet:
    return _normalized(seedset, seedset.weights)


def gur_weights(riddle: Riddle, store: KnowledgeStore) -> list[np.ndarray]:
    """Unnormalized cross-image weights.

    A seed's weight is the mean over images of the cosine between its
    association-space similarities to that image's seeds and that image's
    confidence vector.
    """
    out = []
    for ss in riddle.images:
        w = np.zeros(len(ss.seeds))
        for i, s in enumerate(ss.concepts):
            parts = []
            for other in riddle.images:
                v_s = np.array([store.similarity("cn", s, t) for t in other.concepts])
                v = other.weights
                denom = np.linalg.norm(v_s) * np.linalg.norm(v)
                if denom > 0:
                    parts.append(float(np.dot(v_s, v) / denom))
            # exactly rounded, so image order cannot change the result
            w[i] = math.fsum(parts) / N_IMAGES
        out.append(w)
    return out


def reweight_gur(riddle: Riddle, store: KnowledgeStore) -> Riddle:
    weights = gur_weights(riddle, store)
    return riddle.with_images(_normalized(ss, w) for ss, w in zip(riddle.images, weights))


def bur_scores(seedset: SeedSet, store: KnowledgeStore) -> BurScores:
    ecs = np.array([store.centrality_of(c) for c in seedset.concepts])
    cr = np.array([store.concreteness_of(c) or DEFAULT_CONCRETENESS for c in seedset.concepts])
    cs = (_minmax(ecs) + _minmax(-cr)) / 2.0
    return BurScores(ecs, cr, cs)


def _minmax(x):
    span = x.max() - x.min()
    if span == 0:
        return np.zeros_like(x)
    return (x - x.min()) / span


def bur_graph(seedset: SeedSet, store: KnowledgeStore, theta: ThetaConfig) -> BurFlowGraph:
    """Specificity flow graph over one image's seeds.

    Seeds are scanned by decreasing CS. Each seed is linked from its
    predecessor when their association similarity exceeds the threshold,
    otherwise from the nearest earlier seed that does.
    """
    cs = bur_scores(seedset, store).cs
    concepts = seedset.concepts
    order = sorted(range(len(concepts)), key=lambda i: (-cs[i], concepts[i]))
    edges = []
    for pos in range(1, len(order)):
        v = order[pos]
        for prev in range(pos - 1, -1, -1):
            u = order[prev]
            if store.similarity("cn", concepts[u], concepts[v]) > theta.sim_seed_edge:
                edges.append((u, v))
                break
    return BurFlowGraph(tuple(order), tuple(edges), tuple(seedset.weights.tolist()))


def bur_problem(graph: BurFlowGraph) -> hlmrf.HlMrfProblem:
    """The resource-flow LP as an HL-MRF: one linear hinge per edge."""
    conf = graph.resources
    in_graph = sorted({u for e in graph.edges for u in e})
    evidence = {u: conf[u] for u in range(len(conf)) if u not in in_graph}
    terms = [hlmrf.HingeTerm(1.0, ((u, 1.0), (v, -1.0)), 0.0) for u, v in graph.edges]
    cons = []
    if in_graph:
        cons.append(hlmrf.LinearConstraint(tuple((u, 1.0) for u in in_graph),
                                           float(sum(conf[u] for u in in_graph)), "eq"))
        cons.extend(hlmrf.LinearConstraint(((u, -1.0),), -0.5 * conf[u]) for u in in_graph)
    return hlmrf.HlMrfProblem(len(conf), evidence, terms, cons)


def reweight_bur(seedset: SeedSet, store: KnowledgeStore, theta: ThetaConfig) -> SeedSet:
    graph = bur_graph(seedset, store, theta)
    if not graph.edges:
        return reweight_ur(seedset)
    sol = hlmrf.solve(bur_problem(graph), theta.tol, theta.max_iter)
    return _normalized(seedset, np.clip(sol.values, 0.0, None))


def reweight(riddle: Riddle, store: KnowledgeStore, theta: ThetaConfig, variant: str) -> Riddle:
    if variant == "UR":
        return riddle.with_images(reweight_ur(ss) for ss in riddle.images)
    if variant == "GUR":
        return reweight_gur(riddle, store)
    if variant == "BUR":
        return riddle.with_images(reweight_bur(ss, store, theta) for ss in riddle.images)
    raise ValueError(f"unknown variant {variant!r}; expected one of {VARIANTS}")


# targets

def retrieve_all(seedset: SeedSet, store: KnowledgeStore, theta: ThetaConfig):
    keep = min(theta.n_retrieve, theta.pool_size)
    return [retrieve_targets(s, store, theta.pool_size, keep) for s in seedset.concepts]


def rank_targets(seedset: SeedSet, retrieved, theta: ThetaConfig) -> TargetCandidateSet:
    """Rank the union of retrieved targets against the image's confidences.

    Parameters
    ----------
    seedset : SeedSet
    retrieved : list, one entry per seed, of (concept id, score) lists
    theta : ThetaConfig

    Returns
    -------
    TargetCandidateSet
        Top ``n_targets`` by cosine between a target's score column over the
        seeds and the confidence vector; ties by ascending id. Targets whose
        column is all zero are dropped.
    """
    if len(retrieved) != len(seedset.seeds):
        raise ValueError("need one retrieval list per seed")
    ids = sorted({t for lst in retrieved for t, _ in lst})
    if not ids:
        raise ValueError(f"image {seedset.image_id}: no retrieved targets")
    col = {t: j for j, t in enumerate(ids)}
    wm = np.zeros((len(seedset.seeds), len(ids)))
    for i, lst in enumerate(retrieved):
        for t, score in lst:
            wm[i, col[t]] = score
    conf = seedset.weights
    norms = np.linalg.norm(wm, axis=0) * np.linalg.norm(conf)
    keep = norms > 0
    scores = np.zeros(len(ids))
    scores[keep] = (conf @ wm[:, keep]) / norms[keep]
    ranked = sorted((j for j in range(len(ids)) if keep[j]), key=lambda j: (-scores[j], ids[j]))
    ranked = ranked[:theta.n_targets]
    return TargetCandidateSet(seedset.image_id, tuple(ids[j] for j in ranked),
                              wm[:, ranked], tuple(float(scores[j]) for j in ranked))


def image_targets(seedset: SeedSet, store: KnowledgeStore, theta: ThetaConfig):
    retrieved = retrieve_all(seedset, store, theta)
    return retrieved, rank_targets(seedset, retrieved, theta)


# inference

def stage1(seedset, candidates, store, theta):
    model = build_stage1(seedset, candidates, store, theta)
    sol = hlmrf.solve(model.problem, theta.tol, theta.max_iter)
    scores = {t: float(sol.values[v]) for t, v in model.target_vars.items()}
    return model, scores


def survivors(scores: dict, theta: ThetaConfig) -> dict:
    kept = sorted(((t, s) for t, s in scores.items() if s > theta.survivor_min),
                  key=lambda ts: (-ts[1], ts[0]))
    return dict(kept[:theta.survivor_cap])


def _rank(scores: dict):
    return sorted(scores.items(), key=lambda ts: (-round(ts[1], 9), ts[0]))


def solve_riddle(riddle: Riddle, store: KnowledgeStore, theta: ThetaConfig | None = None,
                 variant: str = "GUR", stage: str = "All",
                 trace: RiddleTrace | None = None) -> AnswerList:
    """Answer a riddle.

    Parameters
    ----------
    riddle : Riddle
    store : KnowledgeStore
    theta : ThetaConfig, optional
    variant : {'UR', 'GUR', 'BUR'}
        Seed reweighting.
    stage : {'VB', 'RR', 'All'}
        Where to cut the pipeline: the centroid baseline, the retrieval-only
        baseline, or full two-stage inference.
    trace : RiddleTrace, optional
        Filled with intermediate results when given.

    Returns
    -------
    AnswerList
        Ranked by score, ties by ascending id. For ``All`` the list is padded
        to ``n_answers`` with further Stage I candidates at score 0.
    """
    theta = theta or ThetaConfig()
    if stage not in STAGES:
        raise ValueError(f"unknown stage {stage!r}; expected one of {STAGES}")
    trace = trace if trace is not None else RiddleTrace()
    rw = reweight(riddle, store, theta, variant)
    trace.reweighted = rw.images
    if stage == "VB":
        from .evaluation import baseline_vb
        return baseline_vb(rw, store)

    for ss in rw.images:
        retrieved, cands = image_targets(ss, store, theta)
        trace.retrieved.append(retrieved)
        trace.candidates.append(cands)
    if stage == "RR":
        from .evaluation import centroid_answers
        return centroid_answers(trace.candidates, store, theta.rr_top)

    for ss, cands in zip(rw.images, trace.candidates):
        if cands.targets:
            model, scores = stage1(ss, cands, store, theta)
        else:
            model, scores = None, {}
        trace.stage1_models.append(model)
        trace.stage1_scores.append(scores)
        trace.survivors.append(survivors(scores, theta))

    model = build_stage2(trace.survivors, rw.images, store, theta)
    sol = hlmrf.solve(model.problem, theta.tol, theta.max_iter)
    # solver noise far below tol would otherwise reorder near-zero scores
    final = {t: round(float(np.clip(sol.values[v], 0.0, 1.0)), 9)
             for t, v in model.target_vars.items()}
    trace.stage2_model = model
    trace.stage2_scores = final
    ranked = _rank(final)

    if len(ranked) < theta.n_answers:
        # pad with the best remaining Stage I candidates
        best1: dict[int, float] = {}
        for scores in trace.stage1_scores:
            for t, s in scores.items():
                if t not in final:
                    best1[t] = max(s, best1.get(t, 0.0))
        extra = _rank(best1)[:theta.n_answers - len(ranked)]
        ranked += [(t, 0.0) for t, _ in extra]
    return AnswerList(tuple((int(t), float(s)) for t, s in ranked))


def write_answers(path, answers: AnswerList, store: KnowledgeStore):
    lines = [f"{r}\t{store.token(c)}\t{s:.6f}" for r, (c, s) in enumerate(answers, start=1)]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_answers(path) -> list[tuple[str, float]]:
    out = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise ValueError(f"{path}: malformed answer line {line!r}")
        out.append((parts[1], float(parts[2])))
    return out
