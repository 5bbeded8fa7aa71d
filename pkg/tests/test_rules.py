import numpy as np
import pytest

from conftest import tiny_store
from oracles import grid_minimum
from unriddle.hlmrf import solve
from unriddle.rules import (SeedSet, TargetCandidateSet, ThetaConfig, build_stage1, build_stage2,
                            gate_similarity, gated, most_similar_targets, pair_weight, rule_weight)

THETA = ThetaConfig()


def _store(vectors, centrality=None):
    return tiny_store(vectors, centrality=centrality)


def _cands(image_id, targets, n_seeds):
    return TargetCandidateSet(image_id, tuple(targets), np.ones((n_seeds, len(targets))))


def test_theta_defaults_match_parameter_table():
    t = ThetaConfig()
    assert (t.n_targets, t.alpha_cn, t.alpha_w2v, t.n_pair, t.sim_gate, t.sum_stage1,
            t.sum_stage2) == (2500, 1.0, 4.0, 1, 0.8, 2.0, 1.0)
    assert (t.tol, t.max_iter) == (1e-4, 20000)


@pytest.mark.parametrize("bad", [{"sum_stage1": 1.5}, {"sum_stage2": 2.0}, {"sim_gate": 1.2},
                                 {"n_targets": 0}, {"alpha_cn": -1.0},
                                 {"alpha_cn": 0.0, "alpha_w2v": 0.0}, {"n_retrieve": 20000}])
def test_theta_validation(bad):
    with pytest.raises(ValueError):
        ThetaConfig(**bad)


def test_theta_overrides():
    t = THETA.with_overrides({"sim_gate": "0.7", "n_pair": "2", "tol": 1e-5})
    assert t.sim_gate == 0.7 and t.n_pair == 2 and isinstance(t.n_pair, int) and t.tol == 1e-5
    with pytest.raises(ValueError, match="unknown"):
        THETA.with_overrides({"bogus": "1"})
    assert t.as_dict()["sim_gate"] == 0.7


def test_seedset_validation():
    with pytest.raises(ValueError):
        SeedSet(0, ())
    with pytest.raises(ValueError):
        SeedSet(0, ((1, 0.5), (1, 0.2)))
    with pytest.raises(ValueError):
        SeedSet(0, ((1, 1.5),))
    ss = SeedSet(0, ((3, 0.5), (1, 0.25)))
    assert ss.concepts == [3, 1] and ss.weights.tolist() == [0.5, 0.25]
    assert ss.with_weights([0.1, 0.9]).seeds == ((3, 0.1), (1, 0.9))


def test_weight_examples():
    # orthogonal vectors -> mapped similarity 0.5; antipodal -> 0
    s = _store({"s": [1, 0], "t": [0, 1], "u": [-1, 0]}, centrality=[1.0, 1.0, 1.0])
    assert rule_weight(0, 1, s, THETA) == pytest.approx(3.5, abs=1e-12)
    assert rule_weight(0, 2, s, THETA) == pytest.approx(1.0, abs=1e-12)
    assert pair_weight(0, 0, s, THETA) == pytest.approx(5.0, abs=1e-12)
    assert pair_weight(0, 2, s, THETA) == pytest.approx(0.0, abs=1e-12)


def test_weight_recomputation_oracle(toy_store):
    rng = np.random.default_rng(0)
    cn, w2v = toy_store.unit_vectors("cn"), toy_store.unit_vectors("w2v")
    for a, b in rng.integers(0, len(toy_store), (40, 2)):
        scn = (np.clip(cn[a] @ cn[b], -1, 1) + 1) / 2
        sw = (np.clip(w2v[a] @ w2v[b], -1, 1) + 1) / 2
        c = max(toy_store.centrality[b], 1e-4)
        assert rule_weight(a, b, toy_store, THETA) == pytest.approx(scn + 4 * sw + 1 / c, rel=1e-12)
        assert pair_weight(a, b, toy_store, THETA) == pytest.approx(scn + 4 * sw, rel=1e-12)
        assert rule_weight(a, b, toy_store, THETA) > 0


def test_gate():
    s = _store({"s": [1, 0], "near": [0.9, 0.1], "far": [0, 1]})
    assert gated(0, 1, s, THETA) and not gated(0, 2, s, THETA)
    assert gate_similarity(0, 2, s, THETA) == pytest.approx(0.5)


def _two_seed_store():
    return _store({"s1": [1, 0.1, 0], "s2": [1, -0.1, 0], "a": [1, 0, 0.05], "b": [1, 0, -0.05],
                   "far": [-1, 0, -0.05]})   # antipodal to "a": zero pair weight


def test_stage1_counts():
    s = _two_seed_store()
    ss = SeedSet(0, ((0, 0.9), (1, 0.8)))
    m = build_stage1(ss, _cands(0, [2, 3], 2), s, THETA)
    assert m.seed_target_terms == 4 and m.pair_terms == 4
    assert len(m.problem.constraints) == 1
    assert m.problem.constraints[0].rhs == 2.0
    assert m.problem.evidence == {0: 0.9, 1: 0.8}
    assert m.target_vars == {2: 2, 3: 3}
    assert all(t.weight >= 0 and np.isfinite(t.weight) for t in m.problem.terms)


def test_stage1_gate_drops_term():
    s = _two_seed_store()
    ss = SeedSet(0, ((0, 0.9), (1, 0.8)))
    m = build_stage1(ss, _cands(0, [2, 4], 2), s, THETA)
    assert m.seed_target_terms == 2        # "far" is gated out for both seeds
    assert m.pair_terms == 4
    with pytest.raises(ValueError):
        build_stage1(ss, _cands(0, [], 2), s, THETA)


def test_most_similar_ties_by_id():
    s = _store({"t": [1, 0], "x": [0, 1], "y": [0, -1], "z": [0, 1]})
    assert most_similar_targets(0, [0, 1, 2, 3], s, THETA) == [1]
    assert most_similar_targets(0, [0, 3, 1], s, ThetaConfig(n_pair=2)) == [1, 3]


def test_stage1_similar_target_wins_grid_oracle():
    s = _two_seed_store()
    ss = SeedSet(0, ((0, 0.9), (1, 0.8)))
    m = build_stage1(ss, _cands(0, [2, 4], 2), s, THETA)
    a = solve(m.problem)
    g, arg = grid_minimum(m.problem)
    assert abs(a.objective - g) <= 2e-2
    assert a[m.target_vars[2]] > a[m.target_vars[4]]
    # "far" carries no evidence, so (0.9, 0) is as good as the grid's own argmin
    from unriddle.hlmrf import objective
    assert objective(m.problem, [0.9, 0.8, 0.9, 0.0]) <= g + 1e-9
    assert arg[0] == pytest.approx(0.9)


def test_stage2_four_images_beat_one():
    vec = {f"s{k}": [1.0, 0.5 * np.cos(k), 0.5 * np.sin(k)] for k in range(4)}
    vec["hub"] = [1.0, 0, 0]              # gated to all four seeds
    vec["lone"] = [0.3, 1.0, 0]           # gated to s0 only
    s = _store(vec, centrality=[1.0] * 6)
    seedsets = [SeedSet(k, ((k, 0.9),)) for k in range(4)]
    hub, lone = 4, 5
    assert [gated(k, hub, s, THETA) for k in range(4)] == [True] * 4
    assert [gated(k, lone, s, THETA) for k in range(4)] == [True, False, False, False]
    m = build_stage2([{hub: 0.5}, {lone: 0.5}, {}, {}], seedsets, s, THETA)
    assert m.problem.constraints[0].rhs == 1.0
    a = solve(m.problem)
    g, arg = grid_minimum(m.problem)
    assert abs(a.objective - g) <= 2e-2
    assert a[m.target_vars[hub]] > a[m.target_vars[lone]]
    assert sum(a[v] for v in m.target_vars.values()) <= 1 + 1e-6


def test_stage2_unifies_and_rejects_empty():
    s = _two_seed_store()
    seedsets = [SeedSet(k, ((k % 2, 0.5),)) for k in range(4)]
    m = build_stage2([{2: 0.3}, {2: 0.1}, {3: 0.2}, {}], seedsets, s, THETA)
    assert m.target_vars == {2: 4, 3: 5}   # four seed slots, then the shared targets
    with pytest.raises(ValueError):
        build_stage2([{}, {}, {}, {}], seedsets, s, THETA)


def test_stage2_single_image_caps_budget():
    s = _two_seed_store()
    ss = SeedSet(0, ((0, 0.9), (1, 0.8)))
    m = build_stage2([{2: 0.9, 3: 0.9}], [ss], s, THETA)
    a = solve(m.problem)
    assert a[2] + a[3] <= 1 + 1e-6
    assert a[2] + a[3] == pytest.approx(1.0, abs=1e-3)


@pytest.mark.parametrize("conf", [(0.3, 0.6), (0.5, 0.9), (0.1, 0.2)])
def test_monotone_in_seed_confidence(conf):
    # target 2 is gated only to seed 0, target 3 only to seed 1
    s = _store({"s0": [1, 0, 0], "s1": [0, 0, 1], "a": [1, 0.1, 0], "b": [0, 0.1, 1]},
               centrality=[1.0] * 4)
    scores = []
    for c in conf:
        ss = SeedSet(0, ((0, c), (1, 0.7)))
        m = build_stage1(ss, _cands(0, [2, 3], 2), s, THETA.with_overrides({"sum_stage1": 1.0}))
        assert m.seed_target_terms == 2
        _, arg = grid_minimum(m.problem)
        scores.append((solve(m.problem)[2], arg[0]))
    assert scores[1][0] >= scores[0][0] - 2e-4
    assert scores[1][1] >= scores[0][1]
