"""Relation-profile ("visual") similarity between a seed and a target concept.

A seed is described by the (relation, word) pairs it and its direct
superclasses hold under the physical relations below; a target is read off on
the same dimensions. Candidates retrieved from the association space are
re-ranked by the cosine of these profiles.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .kgraph import KnowledgeStore, mapped

PROFILE_RELATIONS = ("HasA", "HasProperty", "PartOf", "MemberOf")
DEFAULT_POOL = 10000


@dataclass(frozen=True)
class RelationProfile:
    owner: int
    dims: tuple[tuple[str, str], ...]
    values: np.ndarray

    @property
    def empty(self):
        return not self.dims


def build_seed_profile(seed: int, store: KnowledgeStore) -> RelationProfile:
    """Profile of ``seed`` over its own and its IsA parents' relation pairs.

    The seed's own weight wins when a pair occurs on both the seed and a parent.
    """
    head = store.token(seed)
    own = store.assertions_of(head)
    parents = [a.tail for a in own if a.relation == "IsA"]
    dims, values = [], []
    seen = set()
    for source in [head] + parents:
        for a in (own if source == head else store.assertions_of(source)):
            if a.relation not in PROFILE_RELATIONS:
                continue
            dim = (a.relation, a.tail)
            if dim in seen:
                continue
            seen.add(dim)
            dims.append(dim)
            values.append(a.weight)
    return RelationProfile(seed, tuple(dims), np.array(values, dtype=float))


def build_target_profile(target: int, dims, store: KnowledgeStore) -> RelationProfile:
    head = store.token(target)
    values = [store.assertion_weight(head, rel, word) or 0.0 for rel, word in dims]
    return RelationProfile(target, tuple(dims), np.array(values, dtype=float))


def profile_similarity(seed_profile: RelationProfile, target: int, store: KnowledgeStore) -> float:
    if seed_profile.empty:
        return store.similarity("cn", seed_profile.owner, target)
    if target == seed_profile.owner:
        return 1.0
    tv = build_target_profile(target, seed_profile.dims, store).values
    sv = seed_profile.values
    ns, nt = np.linalg.norm(sv), np.linalg.norm(tv)
    if nt == 0.0 or ns == 0.0:
        return 0.0
    return float(mapped(np.clip(np.dot(sv, tv) / (ns * nt), -1.0, 1.0)))


def visual_similarity(seed: int, target: int, store: KnowledgeStore) -> float:
    """Mapped cosine between the seed's profile and the target's reading of it.

    Falls back to association-space similarity for a seed without any
    qualifying relation pairs; an all-zero target vector scores 0.
    """
    return profile_similarity(build_seed_profile(seed, store), target, store)


def retrieve_targets(seed: int, store: KnowledgeStore, pool_size: int = DEFAULT_POOL,
                     keep: int = 2500) -> list[tuple[int, float]]:
    """Nearest concepts to ``seed`` in the association space, re-ranked by
    visual similarity.

    Parameters
    ----------
    seed : int
    store : KnowledgeStore
    pool_size : int
        Number of association-space neighbours considered; clipped to the
        vocabulary size minus one.
    keep : int
        Number of re-ranked targets returned.

    Returns
    -------
    list of (concept id, visual similarity)
        Descending score, ties by ascending id.
    """
    if not pool_size >= keep >= 1:
        raise ValueError("need pool_size >= keep >= 1")
    pool = store.top_k_similar("cn", seed, min(pool_size, len(store) - 1))
    profile = build_seed_profile(seed, store)
    if profile.empty:
        scored = pool
    else:
        scored = [(t, profile_similarity(profile, t, store)) for t, _ in pool]
    scored.sort(key=lambda ts: (-ts[1], ts[0]))
    return scored[:keep]
