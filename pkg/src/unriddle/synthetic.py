"""Synthetic knowledge bases with planted riddle answers.

Each riddle lives in its own block of orthogonal directions:

* the answer ``A`` points along ``a``;
* every image has one key seed close to ``A`` in both spaces (the four key
  seeds sit on a simplex around ``a`` so they are far less similar to each
  other than to ``A``);
* every image has distractor seeds that share a global "hub" direction in
  the distributional space but nothing in the association space;
* each distractor seed has a private neighbour that is its only gated target;
* "bridge" targets are visually tied to all seeds of one image and lean
  towards the answer in the distributional space without being gated to any
  seed.

Averaging seeds (VB) is pulled towards the hub words, averaging retrieved
targets (RR) lands on the bridges, and only joint inference recovers ``A``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .kgraph import Assertion, KnowledgeStore, write_embeddings

# regular tetrahedron: four unit vectors with pairwise cosine -1/3
_SIMPLEX = np.array([[1, 1, 1], [1, -1, -1], [-1, 1, -1], [-1, -1, 1]]) / np.sqrt(3.0)


@dataclass(frozen=True)
class SuiteSpec:
    n_riddles: int = 20
    n_hubs: int = 4
    n_distractors: int = 3          # per image
    n_bridges: int = 4              # per image
    key_conf: float = 0.95
    distractor_conf: tuple = (0.7, 0.6, 0.5)
    seed: int = 7


@dataclass
class SyntheticKB:
    tokens: list
    cn: np.ndarray
    w2v: np.ndarray
    assertions: list
    concreteness: dict
    riddles: list                   # JSON-ready riddle dicts

    def store(self) -> KnowledgeStore:
        return KnowledgeStore(self.tokens, self.cn, self.w2v, self.assertions, self.concreteness)

    def write(self, path):
        """Write the knowledge files and one JSON file per riddle under ``path``."""
        path = Path(path)
        (path / "riddles").mkdir(parents=True, exist_ok=True)
        write_embeddings(path / "cn.txt", self.tokens, self.cn)
        write_embeddings(path / "w2v.txt", self.tokens, self.w2v)
        with open(path / "assertions.tsv", "w", encoding="utf-8") as fh:
            for a in self.assertions:
                fh.write(f"{a.head}\t{a.relation}\t{a.tail}\t{a.weight:g}\n")
        with open(path / "concreteness.tsv", "w", encoding="utf-8") as fh:
            for tok, rating in sorted(self.concreteness.items()):
                fh.write(f"{tok}\t{rating:g}\n")
        for r in self.riddles:
            (path / "riddles" / f"{r['id']}.json").write_text(json.dumps(r, indent=1) + "\n",
                                                              encoding="utf-8")


class _Basis:
    """Hands out orthonormal directions by name."""

    def __init__(self):
        self.names = {}

    def __call__(self, name):
        return self.names.setdefault(name, len(self.names))


def generate(cfg: SuiteSpec = SuiteSpec(), names=None) -> SyntheticKB:
    """Build a knowledge base holding ``cfg.n_riddles`` planted riddles.

    ``names`` optionally maps role labels (``answer``, ``key0``..``key3``,
    ``d{i}_{m}``, ``n{i}_{m}``, ``b{i}_{j}``, ``hub{h}``) of a single riddle
    to readable tokens.
    """
    basis = _Basis()
    rows = {}          # token -> ({dir: coef} in cn, {dir: coef} in w2v)
    assertions = []
    concreteness = {}
    riddles = []

    def name(r, role):
        if names and role in names:
            return names[role]
        if role.startswith("hub"):
            return role
        return f"r{r:02d}_{role}"

    hubs = [name(0, f"hub{h}") for h in range(cfg.n_hubs)]
    for h, tok in enumerate(hubs):
        rows[tok] = ({basis(f"hub_cn{h}"): 1.0},
                     {basis("hub"): 0.95, basis(f"hub_w{h}"): 0.31})
        concreteness[tok] = 2.0

    for r in range(cfg.n_riddles):
        a = basis(f"a{r}")
        c = basis(f"c{r}")
        simplex = [basis(f"e{r}_{k}") for k in range(3)]
        answer = name(r, "answer")
        rows[answer] = ({a: 1.0}, {a: 1.0})
        concreteness[answer] = 3.5
        images = []
        for i in range(4):
            key = name(r, f"key{i}")
            e = dict(zip(simplex, _SIMPLEX[i]))
            rows[key] = ({a: 0.95, **{d: 0.31 * v for d, v in e.items()}},
                         {a: 0.6, **{d: 0.8 * v for d, v in e.items()}})
            concreteness[key] = 4.5
            assertions += [Assertion(key, "HasProperty", f"{key}_look", 1.0),
                           Assertion(key, "HasA", f"{key}_part", 0.8),
                           Assertion(answer, "HasProperty", f"{key}_look", 1.0)]
            dets = [(key, cfg.key_conf)]
            for m in range(cfg.n_distractors):
                d = name(r, f"d{i}_{m}")
                p = basis(f"p{r}_{i}_{m}")
                rows[d] = ({p: 0.95, a: -0.3}, {basis("hub"): 0.7, basis(f"pw{r}_{i}_{m}"): 0.714})
                concreteness[d] = 3.0
                assertions.append(Assertion(d, "HasA", f"{d}_part", 1.0))
                n = name(r, f"n{i}_{m}")
                q = basis(f"q{r}_{i}_{m}")
                rows[n] = ({p: 0.85 * 0.95, a: -0.85 * 0.3, q: 0.5},
                           {basis("hub"): 0.6, basis(f"pw{r}_{i}_{m}"): 0.68, q: 0.42})
                assertions.append(Assertion(n, "HasA", f"{d}_part", 1.0))
                concreteness[n] = 3.5
                conf = cfg.distractor_conf[m % len(cfg.distractor_conf)]
                dets.append((d, conf))
            for j in range(cfg.n_bridges):
                b = name(r, f"b{i}_{j}")
                rows[b] = ({basis(f"bc{r}_{i}_{j}"): 1.0},
                           {a: 0.5, c: 0.7, basis(f"f{r}_{i}_{j}"): 0.51})
                assertions += [Assertion(b, "HasProperty", f"{key}_look", 0.9),
                               Assertion(b, "HasA", f"{key}_part", 0.8)]
                assertions += [Assertion(b, "HasA", f"{name(r, f'd{i}_{m}')}_part", 0.7)
                               for m in range(cfg.n_distractors)]
                concreteness[b] = 4.0
            images.append({"classifier_tag": "synthetic",
                           "detections": [{"label": t, "confidence": w} for t, w in dets]})
        riddles.append({"id": f"riddle{r:02d}", "groundtruth": [answer], "images": images})

    tokens = list(rows)
    dim = len(basis.names)
    rot = np.linalg.qr(np.random.default_rng(cfg.seed).standard_normal((dim, dim)))[0]
    spaces = []
    for k in range(2):
        mat = np.zeros((len(tokens), dim))
        for t, tok in enumerate(tokens):
            for d, v in rows[tok][k].items():
                mat[t, d] = v
        mat /= np.linalg.norm(mat, axis=1, keepdims=True)
        spaces.append(mat @ rot.T)
    return SyntheticKB(tokens, spaces[0], spaces[1], assertions, concreteness, riddles)


_TOY_IMAGES = [
    # key seed, distractor seeds, their neighbours, bridges
    ("autumn_leaves", ["tree", "park", "bench"], ["oak", "playground", "seat"],
     ["maple", "foliage", "orange", "rake"]),
    ("waterfall", ["river", "rock", "mist"], ["stream", "boulder", "fog"],
     ["cascade", "cliff", "splash", "gorge"]),
    ("skydiving", ["sky", "plane", "helmet"], ["cloud", "jet", "goggles"],
     ["parachute", "jump", "freefall", "altitude"]),
    ("tumble", ["child", "grass", "shoe"], ["kid", "lawn", "sneaker"],
     ["trip", "slip", "stumble", "bruise"]),
]

TOY_NAMES = {"answer": "fall", "hub0": "person", "hub1": "outdoors", "hub2": "daylight",
             "hub3": "nature"}
for _i, (_key, _ds, _ns, _bs) in enumerate(_TOY_IMAGES):
    TOY_NAMES[f"key{_i}"] = _key
    TOY_NAMES.update({f"d{_i}_{m}": t for m, t in enumerate(_ds)})
    TOY_NAMES.update({f"n{_i}_{m}": t for m, t in enumerate(_ns)})
    TOY_NAMES.update({f"b{_i}_{j}": t for j, t in enumerate(_bs)})


def toy_kb() -> SyntheticKB:
    """The single-riddle toy knowledge base shipped with the package."""
    kb = generate(SuiteSpec(n_riddles=1), names=TOY_NAMES)
    kb.riddles[0]["id"] = "fall"
    return kb


def main(argv=None):
    import argparse
    ap = argparse.ArgumentParser(description="Write a synthetic knowledge base and riddles.")
    ap.add_argument("out", help="output directory")
    ap.add_argument("--suite", action="store_true", help="the multi-riddle suite instead of the toy")
    ap.add_argument("--riddles", type=int, default=SuiteSpec.n_riddles)
    args = ap.parse_args(argv)
    kb = generate(SuiteSpec(n_riddles=args.riddles)) if args.suite else toy_kb()
    kb.write(args.out)


if __name__ == "__main__":
    main()
