"""Knowledge sources: vocabulary, embedding spaces, assertions, centrality and
concreteness.

Concepts are lowercase tokens (phrases joined with underscores) addressed by a
dense integer id. Two embedding spaces are served: ``cn`` (the association
space of the commonsense graph) and ``w2v`` (distributional word vectors).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import ConvergenceError, OutOfVocabularyError

log = logging.getLogger(__name__)

SPACES = ("cn", "w2v")

# ConceptNet 5 relation labels.
RELATIONS = frozenset({
    "RelatedTo", "FormOf", "IsA", "PartOf", "HasA", "UsedFor", "CapableOf",
    "AtLocation", "Causes", "HasSubevent", "HasFirstSubevent",
    "HasLastSubevent", "HasPrerequisite", "HasProperty", "MotivatedByGoal",
    "ObstructedBy", "Desires", "CreatedBy", "Synonym", "Antonym",
    "DistinctFrom", "DerivedFrom", "SymbolOf", "DefinedAs", "MannerOf",
    "LocatedNear", "HasContext", "SimilarTo", "EtymologicallyRelatedTo",
    "EtymologicallyDerivedFrom", "CausesDesire", "MadeOf", "ReceivesAction",
    "MemberOf", "InstanceOf", "Entails", "NotDesires", "NotUsedFor",
    "NotCapableOf", "NotHasProperty",
})

CENTRALITY_FLOOR = 1e-4
_DENSE_CENTRALITY_LIMIT = 6000


def normalize_token(token: str) -> str:
    return "_".join(token.strip().lower().split())


def cosine_similarity(a, b) -> float:
    """Cosine of the angle between two real vectors.

    Raises ``ValueError`` on a dimension mismatch or a zero-norm vector.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise ValueError("cosine of a zero-norm vector is undefined")
    return float(np.clip(np.dot(a, b) / (na * nb), -1.0, 1.0))


def mapped(cos):
    """Map a cosine in [-1, 1] onto [0, 1]."""
    return (cos + 1.0) / 2.0


def eigenvector_centrality(adjacency, tol: float = 1e-9, max_iter: int = 1000) -> np.ndarray:
    """Dominant-eigenvector scores of a nonnegative square matrix.

    Power iteration with an adaptive shift ``A + rho I`` where ``rho`` is the
    current Rayleigh-style estimate of the leading eigenvalue. The shift keeps
    bipartite graphs from oscillating and makes the iterates independent of a
    positive rescaling of ``adjacency``. Scores are normalized to max 1.

    Parameters
    ----------
    adjacency : array_like or object supporting ``@`` with shape ``(n, n)``
    tol : float
        Convergence threshold on the max-norm difference of successive iterates.
    max_iter : int

    Returns
    -------
    numpy.ndarray
        Nonnegative scores with maximum exactly 1.
    """
    if isinstance(adjacency, np.ndarray) or isinstance(adjacency, (list, tuple)):
        A = np.asarray(adjacency, dtype=float)
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise ValueError(f"adjacency must be square, got {A.shape}")
        if (A < 0).any():
            raise ValueError("adjacency must be nonnegative")
        if not A.any():
            raise ValueError("adjacency has no nonzero entry")
        n = A.shape[0]
    else:
        A = adjacency
        n = A.shape[0]

    x = np.ones(n)
    residual = math.inf
    for _ in range(max_iter):
        y = A @ x
        rho = float(np.max(y))
        if rho <= 0.0:
            raise ValueError("adjacency has no nonzero entry")
        y = y + rho * x
        y /= y.max()
        residual = float(np.max(np.abs(y - x)))
        x = y
        if residual < tol:
            return x
    raise ConvergenceError(
        f"eigenvector centrality did not converge in {max_iter} iterations "
        f"(residual {residual:.3e})", residual=residual)


@dataclass(frozen=True)
class Assertion:
    head: str
    relation: str
    tail: str
    weight: float


class _BlockedSimilarity:
    """Matrix-free adjacency of mapped cosine similarities with entries < 0.5
    and the diagonal zeroed."""

    def __init__(self, unit: np.ndarray, block: int = 2048):
        self.unit = unit
        self.block = block
        self.shape = (unit.shape[0], unit.shape[0])

    def __matmul__(self, x):
        out = np.empty(self.shape[0])
        for start in range(0, self.shape[0], self.block):
            rows = _similarity_rows(self.unit, start, min(start + self.block, self.shape[0]))
            out[start:start + rows.shape[0]] = rows @ x
        return out


def _similarity_rows(unit, start, stop):
    s = mapped(unit[start:stop] @ unit.T)
    s[s < 0.5] = 0.0
    s[np.arange(stop - start), np.arange(start, stop)] = 0.0
    return s


def similarity_adjacency(vectors: np.ndarray):
    """Centrality adjacency for an embedding matrix.

    Dense for small vocabularies, a blocked operator otherwise.
    """
    unit = vectors / np.linalg.norm(vectors, axis=1, keepdims=True)
    if unit.shape[0] <= _DENSE_CENTRALITY_LIMIT:
        return _similarity_rows(unit, 0, unit.shape[0])
    return _BlockedSimilarity(unit)


class KnowledgeStore:
    """Immutable bundle of the knowledge sources used by the pipeline.

    Parameters
    ----------
    tokens : sequence of str
        Vocabulary; position is the concept id.
    cn, w2v : numpy.ndarray
        One row per token in each embedding space.
    assertions : iterable of Assertion, optional
    concreteness : mapping token -> rating in [1, 5], optional
    centrality : array_like, optional
        Precomputed centrality scores; computed from ``cn`` when omitted.
    """

    def __init__(self, tokens: Sequence[str], cn, w2v,
                 assertions: Iterable[Assertion] = (),
                 concreteness: Mapping[str, float] | None = None,
                 centrality=None):
        tokens = tuple(normalize_token(t) for t in tokens)
        if len(set(tokens)) != len(tokens):
            raise ValueError("vocabulary tokens must be unique after normalization")
        self.tokens = tokens
        self._index = {t: i for i, t in enumerate(tokens)}

        self._vectors = {}
        self._unit = {}
        for name, mat in (("cn", cn), ("w2v", w2v)):
            mat = np.array(mat, dtype=float)
            if mat.ndim != 2 or mat.shape[0] != len(tokens):
                raise ValueError(f"{name} space must have one row per token")
            norms = np.linalg.norm(mat, axis=1)
            if (norms == 0).any():
                bad = tokens[int(np.argmin(norms))]
                raise ValueError(f"{name} vector for {bad!r} is all-zero")
            mat.setflags(write=False)
            unit = mat / norms[:, None]
            unit.setflags(write=False)
            self._vectors[name] = mat
            self._unit[name] = unit

        self._by_head: dict[str, list[Assertion]] = {}
        self._weights: dict[tuple[str, str, str], float] = {}
        for a in assertions:
            if a.weight < 0:
                raise ValueError(f"negative assertion weight: {a}")
            if a.relation not in RELATIONS:
                raise ValueError(f"unknown relation {a.relation!r}")
            key = (a.head, a.relation, a.tail)
            if key in self._weights:
                # duplicates keep the strongest edge
                if a.weight <= self._weights[key]:
                    continue
                self._by_head[a.head] = [b for b in self._by_head[a.head]
                                         if (b.relation, b.tail) != (a.relation, a.tail)]
            self._weights[key] = a.weight
            self._by_head.setdefault(a.head, []).append(a)

        self._concreteness = {}
        for tok, rating in (concreteness or {}).items():
            if not 1.0 <= rating <= 5.0:
                raise ValueError(f"concreteness rating for {tok!r} outside [1, 5]: {rating}")
            self._concreteness[normalize_token(tok)] = float(rating)

        if centrality is None:
            centrality = eigenvector_centrality(similarity_adjacency(self._vectors["cn"]))
        centrality = np.maximum(np.asarray(centrality, dtype=float), CENTRALITY_FLOOR)
        if centrality.shape != (len(tokens),):
            raise ValueError("centrality must have one score per token")
        centrality.setflags(write=False)
        self.centrality = centrality

    # vocabulary

    def __len__(self):
        return len(self.tokens)

    def __contains__(self, token):
        return normalize_token(token) in self._index

    def id(self, token: str) -> int:
        try:
            return self._index[normalize_token(token)]
        except KeyError:
            raise OutOfVocabularyError(token) from None

    def token(self, cid: int) -> str:
        self._check(cid)
        return self.tokens[cid]

    def _check(self, cid):
        if not 0 <= cid < len(self.tokens):
            raise OutOfVocabularyError(cid)

    # embeddings

    def vector(self, space: str, cid: int) -> np.ndarray:
        self._check(cid)
        return self._vectors[space][cid]

    def vectors(self, space: str) -> np.ndarray:
        return self._vectors[space]

    def unit_vectors(self, space: str) -> np.ndarray:
        return self._unit[space]

    def similarity(self, space: str, a: int, b: int) -> float:
        """Cosine similarity in ``space`` mapped to [0, 1]."""
        self._check(a)
        self._check(b)
        if a == b:
            return 1.0
        u = self._unit[space]
        return float(mapped(np.clip(np.dot(u[a], u[b]), -1.0, 1.0)))

    def similarities(self, space: str, a: int) -> np.ndarray:
        """Mapped similarity of concept ``a`` to every concept."""
        self._check(a)
        u = self._unit[space]
        s = mapped(np.clip(u @ u[a], -1.0, 1.0))
        s[a] = 1.0
        return s

    def top_k_similar(self, space: str, seed: int, k: int) -> list[tuple[int, float]]:
        """The ``k`` most similar concepts to ``seed``, excluding the seed.

        Descending score, ties by ascending id; truncated when ``k`` exceeds
        the vocabulary.
        """
        if k < 1:
            raise ValueError("k must be >= 1")
        s = self.similarities(space, seed)
        ids = np.arange(len(s))
        # rounding keeps exact ties tied despite summation-order noise
        order = np.lexsort((ids, -np.round(s, 12)))
        order = order[order != seed][:k]
        return [(int(i), float(s[i])) for i in order]

    def phrase_tokens(self, text) -> list[str]:
        """Resolve a phrase to in-vocabulary tokens.

        A whole underscore-joined phrase is used when present; otherwise its
        parts are tried individually. OOV parts are dropped.
        """
        if isinstance(text, str):
            text = [text]
        out = []
        for item in text:
            tok = normalize_token(item)
            if tok in self._index:
                out.append(tok)
                continue
            out.extend(p for p in tok.split("_") if p in self._index)
        return out

    def phrase_similarity(self, tokens_a, tokens_b, space: str = "w2v") -> float:
        """Raw cosine between the mean vectors of two token lists.

        OOV tokens are dropped first; a side left empty raises
        ``OutOfVocabularyError``.
        """
        va = self._phrase_mean(space, tokens_a)
        vb = self._phrase_mean(space, tokens_b)
        return cosine_similarity(va, vb)

    def _phrase_mean(self, space, tokens):
        ids = [self._index[normalize_token(t)] for t in tokens
               if normalize_token(t) in self._index]
        if not ids:
            raise OutOfVocabularyError(list(tokens))
        return self._vectors[space][ids].mean(axis=0)

    # assertions

    def assertions_of(self, head: str) -> list[Assertion]:
        return list(self._by_head.get(normalize_token(head), ()))

    def assertion_weight(self, head: str, relation: str, tail: str) -> float | None:
        return self._weights.get((normalize_token(head), relation, normalize_token(tail)))

    @property
    def num_assertions(self):
        return len(self._weights)

    # scores

    def centrality_of(self, cid: int) -> float:
        self._check(cid)
        return float(self.centrality[cid])

    def concreteness_of(self, cid: int) -> float | None:
        self._check(cid)
        return self._concreteness.get(self.tokens[cid])

    # loading

    @classmethod
    def load(cls, cn_path, w2v_path, assertions_path=None, concreteness_path=None,
             centrality_path=None) -> "KnowledgeStore":
        """Load a store from text files.

        The vocabulary is the set of tokens present in both embedding files, in
        the order of the ``cn`` file.
        """
        cn_tokens, cn = read_embeddings(cn_path)
        w2v_tokens, w2v = read_embeddings(w2v_path)
        w2v_index = {t: i for i, t in enumerate(w2v_tokens)}
        keep = [i for i, t in enumerate(cn_tokens) if t in w2v_index]
        dropped = len(cn_tokens) - len(keep)
        if dropped or len(w2v_tokens) != len(keep):
            log.warning("vocabulary restricted to %d tokens shared by both spaces "
                        "(%d cn-only, %d w2v-only dropped)", len(keep), dropped,
                        len(w2v_tokens) - len(keep))
        tokens = [cn_tokens[i] for i in keep]
        cn = cn[keep]
        w2v = w2v[[w2v_index[t] for t in tokens]]
        assertions = read_assertions(assertions_path) if assertions_path else ()
        concreteness = read_concreteness(concreteness_path) if concreteness_path else None
        centrality = None
        if centrality_path:
            scores = read_concreteness(centrality_path, check_range=False)
            centrality = [scores.get(t, 0.0) for t in tokens]
        return cls(tokens, cn, w2v, assertions, concreteness, centrality)

    @classmethod
    def from_dir(cls, path) -> "KnowledgeStore":
        """Load ``cn.txt``, ``w2v.txt`` and, when present, ``assertions.tsv``,
        ``concreteness.tsv`` and ``centrality.tsv`` from a directory."""
        path = Path(path)
        optional = {name: path / name for name in
                    ("assertions.tsv", "concreteness.tsv", "centrality.tsv")}
        optional = {k: (v if v.exists() else None) for k, v in optional.items()}
        return cls.load(path / "cn.txt", path / "w2v.txt", optional["assertions.tsv"],
                        optional["concreteness.tsv"], optional["centrality.tsv"])


def read_embeddings(path) -> tuple[list[str], np.ndarray]:
    """Read ``D`` on the first line, then ``token d1 ... dD`` per line."""
    tokens, rows, seen = [], [], set()
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().split()
        if len(header) != 1:
            raise ValueError(f"{path}: first line must hold the dimension")
        dim = int(header[0])
        for lineno, line in enumerate(fh, start=2):
            parts = line.rstrip("\n").split(" ")
            if not parts or parts == [""]:
                continue
            if len(parts) != dim + 1:
                raise ValueError(f"{path}:{lineno}: expected {dim} components")
            tok = normalize_token(parts[0])
            if tok in seen:
                log.warning("%s:%d: duplicate token %r ignored", path, lineno, tok)
                continue
            vec = np.array(parts[1:], dtype=float)
            if not vec.any():
                log.warning("%s:%d: all-zero vector for %r dropped", path, lineno, tok)
                continue
            seen.add(tok)
            tokens.append(tok)
            rows.append(vec)
    if not rows:
        raise ValueError(f"{path}: no vectors")
    return tokens, np.vstack(rows)


def read_assertions(path) -> list[Assertion]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 4:
                raise ValueError(f"{path}:{lineno}: expected 4 tab-separated fields")
            head, rel, tail, weight = parts
            rel = rel.removeprefix("/r/")
            out.append(Assertion(normalize_token(head), rel, normalize_token(tail), float(weight)))
    return out


def read_concreteness(path, check_range=True) -> dict[str, float]:
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            tok, value = line.split("\t")
            value = float(value)
            if check_range and not 1.0 <= value <= 5.0:
                raise ValueError(f"{path}:{lineno}: rating {value} outside [1, 5]")
            out[normalize_token(tok)] = value
    return out


def write_embeddings(path, tokens, vectors):
    vectors = np.asarray(vectors, dtype=float)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{vectors.shape[1]}\n")
        for tok, vec in zip(tokens, vectors):
            fh.write(tok + " " + " ".join(repr(float(v)) for v in vec) + "\n")
