"""Grounding of the two riddle models into HL-MRF problems.

Stage I (per image): each seed implies each candidate target, weighted by
association and distributional similarity plus a popularity penalty; each
target is tied to its most similar fellow targets in both directions; the
target scores share a budget.

Stage II (joint): seeds of every image imply the surviving targets of every
image, and all targets share a budget of 1.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from .hlmrf import HlMrfProblem, LinearConstraint, ground_rule
from .kgraph import KnowledgeStore


@dataclass(frozen=True)
class ThetaConfig:
    """Model parameters. Field names are the keys accepted by ``--theta``."""

    n_targets: int = 2500          # targets kept per image after ranking
    alpha_cn: float = 1.0          # association-similarity weight
    alpha_w2v: float = 4.0         # distributional-similarity weight
    n_pair: int = 1                # most-similar partner targets per target
    sim_gate: float = 0.8          # seed-target similarity threshold
    sum_stage1: float = 2.0        # Stage I budget
    sum_stage2: float = 1.0        # Stage II budget
    sim_seed_edge: float = 0.6     # seed-seed edge threshold for BUR
    tol: float = 1e-4
    max_iter: int = 20000
    pool_size: int = 10000         # association-space neighbours per seed
    n_retrieve: int = 2500         # re-ranked targets kept per seed
    survivor_min: float = 0.01     # Stage I score needed to enter Stage II
    survivor_cap: int = 100        # Stage I survivors per image
    rr_top: int = 10               # targets per image averaged by the RR cut
    n_answers: int = 10            # minimum answer-list length

    def __post_init__(self):
        checks = {
            "n_targets": self.n_targets >= 1,
            "alpha_cn": self.alpha_cn >= 0,
            "alpha_w2v": self.alpha_w2v >= 0,
            "n_pair": self.n_pair >= 0,
            "sim_gate": 0.0 <= self.sim_gate <= 1.0,
            "sum_stage1": self.sum_stage1 in (1.0, 2.0),
            "sum_stage2": self.sum_stage2 == 1.0,
            "sim_seed_edge": 0.0 <= self.sim_seed_edge <= 1.0,
            "tol": self.tol > 0,
            "max_iter": self.max_iter >= 1,
            "pool_size": self.pool_size >= 1,
            "n_retrieve": 1 <= self.n_retrieve <= self.pool_size,
            "survivor_min": 0.0 <= self.survivor_min < 1.0,
            "survivor_cap": self.survivor_cap >= 1,
            "rr_top": self.rr_top >= 1,
            "n_answers": self.n_answers >= 1,
        }
        bad = [k for k, ok in checks.items() if not ok]
        if bad:
            raise ValueError(f"theta values out of range: {', '.join(bad)}")
        if self.alpha_cn + self.alpha_w2v <= 0:
            raise ValueError("alpha_cn + alpha_w2v must be positive")

    def with_overrides(self, overrides: dict) -> "ThetaConfig":
        """Copy with string or typed overrides applied (``{'sim_gate': '0.7'}``)."""
        types = {f.name: f.type for f in dataclasses.fields(self)}
        values = {}
        for key, raw in overrides.items():
            if key not in types:
                raise ValueError(f"unknown theta key {key!r}")
            cast = int if types[key] in (int, "int") else float
            values[key] = cast(raw) if isinstance(raw, str) else raw
        return dataclasses.replace(self, **values)

    def as_dict(self):
        return dataclasses.asdict(self)


@dataclass(frozen=True)
class SeedSet:
    image_id: int
    seeds: tuple[tuple[int, float], ...]
    tag: str = ""

    def __post_init__(self):
        seeds = tuple((int(c), float(w)) for c, w in self.seeds)
        if not seeds:
            raise ValueError(f"image {self.image_id} has no seeds")
        if len({c for c, _ in seeds}) != len(seeds):
            raise ValueError(f"image {self.image_id} has repeated seeds")
        for c, w in seeds:
            if not 0.0 <= w <= 1.0:
                raise ValueError(f"seed confidence {w} outside [0, 1]")
        object.__setattr__(self, "seeds", seeds)

    @property
    def concepts(self):
        return [c for c, _ in self.seeds]

    @property
    def weights(self):
        return np.array([w for _, w in self.seeds])

    def with_weights(self, weights) -> "SeedSet":
        return SeedSet(self.image_id, tuple(zip(self.concepts, (float(w) for w in weights))), self.tag)


@dataclass(frozen=True)
class TargetCandidateSet:
    image_id: int
    targets: tuple[int, ...]
    sim_matrix: np.ndarray         # seeds x targets visual similarity
    scores: tuple[float, ...] = ()  # image-vector cosine used for ranking

    def __post_init__(self):
        if len(set(self.targets)) != len(self.targets):
            raise ValueError("targets must be distinct")


@dataclass(frozen=True)
class StageModel:
    """A grounded stage: the problem plus which variable holds which target."""

    problem: HlMrfProblem
    target_vars: dict[int, int] = field(default_factory=dict)
    seed_target_terms: int = 0
    pair_terms: int = 0


def rule_weight(seed: int, target: int, store: KnowledgeStore, theta: ThetaConfig) -> float:
    return (theta.alpha_cn * store.similarity("cn", seed, target)
            + theta.alpha_w2v * store.similarity("w2v", seed, target)
            + 1.0 / store.centrality_of(target))


def pair_weight(t1: int, t2: int, store: KnowledgeStore, theta: ThetaConfig) -> float:
    return (theta.alpha_cn * store.similarity("cn", t1, t2)
            + theta.alpha_w2v * store.similarity("w2v", t1, t2))


def gate_similarity(seed: int, target: int, store: KnowledgeStore, theta: ThetaConfig) -> float:
    """Weighted mean of the two mapped similarities, compared with ``sim_gate``."""
    return pair_weight(seed, target, store, theta) / (theta.alpha_cn + theta.alpha_w2v)


def gated(seed, target, store, theta) -> bool:
    return gate_similarity(seed, target, store, theta) >= theta.sim_gate


def build_stage1(seedset: SeedSet, candidates: TargetCandidateSet, store: KnowledgeStore,
                 theta: ThetaConfig) -> StageModel:
    """Ground the per-image model.

    Variables ``0..S-1`` are the seeds (fixed to their weights) and
    ``S..S+T-1`` the candidate targets.
    """
    if not candidates.targets:
        raise ValueError("no candidate targets")
    seeds = seedset.seeds
    n_s = len(seeds)
    targets = list(candidates.targets)
    tvar = {t: n_s + j for j, t in enumerate(targets)}
    evidence = {i: w for i, (_, w) in enumerate(seeds)}
    labels = [store.token(c) for c, _ in seeds] + [store.token(t) for t in targets]

    terms = []
    for i, (s, _) in enumerate(seeds):
        for t in targets:
            if gated(s, t, store, theta):
                terms.append(ground_rule(rule_weight(s, t, store, theta), [i], [tvar[t]]))
    n_st = len(terms)

    for t in targets:
        for m in most_similar_targets(t, targets, store, theta):
            w = pair_weight(t, m, store, theta)
            terms.append(ground_rule(w, [tvar[t]], [tvar[m]]))
            terms.append(ground_rule(w, [tvar[m]], [tvar[t]]))

    budget = LinearConstraint(tuple((tvar[t], 1.0) for t in targets), theta.sum_stage1)
    problem = HlMrfProblem(n_s + len(targets), evidence, terms, [budget], tuple(labels))
    return StageModel(problem, tvar, n_st, len(terms) - n_st)


def most_similar_targets(t: int, targets, store: KnowledgeStore, theta: ThetaConfig) -> list[int]:
    others = [m for m in targets if m != t]
    others.sort(key=lambda m: (-pair_weight(t, m, store, theta), m))
    return others[:theta.n_pair]


def build_stage2(inferred, seedsets, store: KnowledgeStore, theta: ThetaConfig) -> StageModel:
    """Ground the joint model.

    Parameters
    ----------
    inferred : sequence of mapping target -> Stage I score, one per image
        Only membership is used; a target shared by several images becomes a
        single variable.
    seedsets : sequence of SeedSet
    """
    targets = sorted({t for per_image in inferred for t in per_image})
    if not targets:
        raise ValueError("Stage II needs at least one inferred target")
    # seeds in a canonical order so that image order cannot change the problem
    seeds = sorted((c, w) for ss in seedsets for c, w in ss.seeds)
    n_s = len(seeds)
    tvar = {t: n_s + j for j, t in enumerate(targets)}
    evidence = {i: w for i, (_, w) in enumerate(seeds)}
    labels = [store.token(c) for c, _ in seeds] + [store.token(t) for t in targets]
    terms = []
    for i, (s, _) in enumerate(seeds):
        for t in targets:
            if gated(s, t, store, theta):
                terms.append(ground_rule(rule_weight(s, t, store, theta), [i], [tvar[t]]))
    budget = LinearConstraint(tuple((tvar[t], 1.0) for t in targets), theta.sum_stage2)
    problem = HlMrfProblem(n_s + len(targets), evidence, terms, [budget], tuple(labels))
    return StageModel(problem, tvar, len(terms), 0)
