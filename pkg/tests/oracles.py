"""Independent reference computations used by the tests.

Nothing here calls the solver or the pipeline; oracles work from the raw
problem data only.
"""

import itertools

import numpy as np

from unriddle.hlmrf import HingeTerm, HlMrfProblem, LinearConstraint

GRID = np.round(np.linspace(0.0, 1.0, 101), 10)


def _energy(problem, cols):
    """Hinge energy over a batch of full assignments given as column arrays."""
    total = np.zeros(np.broadcast(*cols).shape) if cols else 0.0
    for t in problem.terms:
        lin = t.offset + sum(c * cols[i] for i, c in t.coeffs)
        total = total + t.weight * np.maximum(lin, 0.0) ** t.power
    return total


def _feasible(problem, cols, atol=1e-12):
    ok = np.ones(np.broadcast(*cols).shape, dtype=bool)
    for c in problem.constraints:
        lhs = sum(a * cols[i] for i, a in c.coeffs)
        if c.kind == "eq":
            ok &= np.abs(lhs - c.rhs) <= atol
        else:
            ok &= lhs <= c.rhs + atol
    return ok


def grid_minimum(problem: HlMrfProblem):
    """Minimum of the energy over the 0.01 grid of feasible free-variable values.

    Up to three free variables are enumerated outright. With four, the first
    three are enumerated and the last is searched exactly along its grid line:
    a convex function sampled on a grid is a convex sequence and the feasible
    part of a line is an interval, so bisection on forward differences finds
    the line minimum.
    """
    free = problem.free_vars
    n = len(free)
    base = [problem.evidence.get(i, 0.0) for i in range(problem.num_vars)]
    if n <= 3:
        mesh = np.meshgrid(*([GRID] * n), indexing="ij") if n else []
        cols = [np.full(mesh[0].shape if n else (), v) for v in base]
        for k, v in enumerate(free):
            cols[v] = mesh[k]
        e = np.where(_feasible(problem, cols), _energy(problem, cols), np.inf)
        k = np.unravel_index(np.argmin(e), e.shape) if n else ()
        return float(e[k]), [float(GRID[j]) for j in k]
    if n != 4:
        raise ValueError("grid oracle supports at most 4 free variables")
    # float32 halves memory traffic; rounding noise is far below test tolerances
    g32 = GRID.astype(np.float32)
    mesh = np.meshgrid(g32, g32, g32, indexing="ij")
    shape = mesh[0].shape
    last = free[3]
    cols = [np.float32(v) for v in base]
    for k in range(3):
        cols[free[k]] = mesh[k]

    def partial(coeffs, offset):
        out = np.full(shape, offset, dtype=np.float32)
        for i, a in coeffs:
            if i != last:
                out += np.float32(a) * cols[i]
        return out

    # terms split into a part fixed on the line and a slope along it
    const = np.zeros(shape, dtype=np.float32)
    moving = []
    for t in problem.terms:
        slope = dict(t.coeffs).get(last, 0.0)
        fixed = partial(t.coeffs, t.offset)
        if slope == 0.0:
            const += np.float32(t.weight) * np.maximum(fixed, 0) ** t.power
        else:
            moving.append((np.float32(t.weight), t.power, fixed, np.float32(slope)))

    def energy(idx):
        x = g32[idx]
        total = const.copy()
        buf = np.empty(shape, dtype=np.float32)
        for w, p, fixed, slope in moving:
            np.multiply(x, slope, out=buf)
            buf += fixed
            np.maximum(buf, 0, out=buf)
            if p == 2:
                buf *= buf
            buf *= w
            total += buf
        return total

    # feasible index interval of the last variable
    lo = np.zeros(shape, dtype=int)
    hi = np.full(shape, 100)
    for c in problem.constraints:
        coef = dict(c.coeffs).get(last, 0.0)
        rest = partial(c.coeffs, 0.0)
        if coef == 0.0:
            viol = rest - c.rhs
            bad = np.abs(viol) > 1e-12 if c.kind == "eq" else viol > 1e-12
            hi = np.where(bad, -1, hi)
            continue
        bound = (c.rhs - rest) / coef
        if c.kind == "eq":
            k = np.round(bound * 100)
            exact = np.abs(k / 100 - bound) <= 1e-12
            lo = np.where(exact, np.maximum(lo, k), 101).astype(int)
            hi = np.where(exact, np.minimum(hi, k), -1).astype(int)
        elif coef > 0:
            hi = np.minimum(hi, np.floor(bound * 100 + 1e-9)).astype(int)
        else:
            lo = np.maximum(lo, np.ceil(bound * 100 - 1e-9)).astype(int)
    empty = lo > hi
    a = np.clip(lo, 0, 100)
    b = np.maximum(a, np.clip(hi, 0, 100))
    while True:
        open_ = a < b
        if not open_.any():
            break
        m = (a + b) // 2
        go_left = energy(np.minimum(m + 1, 100)) >= energy(m)
        b = np.where(open_ & go_left, m, b)
        a = np.where(open_ & ~go_left, m + 1, a)
    e = np.where(empty, np.inf, energy(a))
    k = np.unravel_index(np.argmin(e), shape)
    point = [float(GRID[j]) for j in k] + [float(GRID[a[k]])]
    # re-evaluate the winner in double precision
    full = list(base)
    for v, x in zip(free, point):
        full[v] = x
    return float(_energy(problem, [np.float64(x) for x in full])), point


def random_problem(rng, max_vars=4, max_terms=8, max_cons=2, powers=(1, 1, 2)):
    """Random PSL-shaped instance: +-1 coefficients on 1-3 variables, offsets
    and sum-constraint bounds on the 0.01 grid."""
    n = int(rng.integers(1, max_vars + 1))
    terms = []
    for _ in range(int(rng.integers(1, max_terms + 1))):
        k = int(rng.integers(1, min(n, 3) + 1))
        vs = rng.choice(n, k, replace=False)
        coeffs = tuple((int(v), float(rng.choice([-1.0, 1.0]))) for v in vs)
        terms.append(HingeTerm(float(rng.uniform(0.1, 1.0)), coeffs,
                               float(np.round(rng.uniform(-1.0, 1.0), 2)),
                               int(rng.choice(powers))))
    cons = []
    for _ in range(int(rng.integers(0, max_cons + 1))):
        k = int(rng.integers(1, n + 1))
        vs = rng.choice(n, k, replace=False)
        cons.append(LinearConstraint(tuple((int(v), 1.0) for v in vs),
                                     float(np.round(rng.uniform(0.2, k), 2))))
    return HlMrfProblem(n, {}, terms, cons)


def lp_grid_minimum(weights_edges, conf, in_graph, step=0.01):
    """Brute-force minimum of the seed resource-flow LP over a 0.01 grid.

    ``sum max(w_u - w_v, 0)`` over edges subject to ``sum w = sum conf``,
    ``w_u = conf_u`` off the graph, ``w_u >= conf_u / 2`` on it, ``w`` in
    [0, 1]. The last graph node absorbs the equality.
    """
    n = len(conf)
    nodes = [u for u in range(n) if in_graph[u]]
    if not nodes:
        return 0.0, list(conf)
    total = sum(conf[u] for u in nodes)
    grid = np.round(np.arange(0.0, 1.0 + step / 2, step), 10)
    best, arg = np.inf, None
    for combo in itertools.product(grid, repeat=len(nodes) - 1):
        w = list(conf)
        for u, v in zip(nodes[:-1], combo):
            w[u] = v
        w[nodes[-1]] = total - sum(combo)
        if not all(-1e-12 <= w[u] <= 1 + 1e-12 and w[u] >= conf[u] / 2 - 1e-12 for u in nodes):
            continue
        f = sum(max(w[u] - w[v], 0.0) for u, v in weights_edges)
        if f < best:
            best, arg = f, w
    return best, arg


def gur_oracle(cn_vectors, images):
    """Cross-image seed weights straight from the formula.

    ``images`` is four lists of (row index, confidence). Similarities are
    mapped cosines of the raw ``cn_vectors`` rows.
    """
    V = np.asarray(cn_vectors, dtype=float)
    U = V / np.linalg.norm(V, axis=1, keepdims=True)
    sim = (np.clip(U @ U.T, -1.0, 1.0) + 1.0) / 2.0
    out = []
    for img in images:
        w = []
        for s, _ in img:
            total = 0.0
            for other in images:
                a = np.array([sim[s, t] for t, _ in other])
                b = np.array([c for _, c in other])
                total += a @ b / (np.linalg.norm(a) * np.linalg.norm(b))
            w.append(total / len(images))
        w = np.array(w)
        out.append(w / w.sum())
    return out


def rank_oracle(wm, conf):
    """Target order by cosine of each column with ``conf``; zero columns dropped."""
    wm = np.asarray(wm, dtype=float)
    conf = np.asarray(conf, dtype=float)
    scored = []
    for j in range(wm.shape[1]):
        col = wm[:, j]
        n = np.linalg.norm(col)
        if n > 0:
            scored.append((-(col @ conf) / (n * np.linalg.norm(conf)), j))
    return [j for _, j in sorted(scored)]


def random_bur_instance(rng, max_seeds=3):
    """Random seed vectors, centralities, concreteness and grid confidences."""
    n = int(rng.integers(2, max_seeds + 1))
    base = rng.standard_normal(3)
    vecs = base + rng.uniform(0.2, 1.5) * rng.standard_normal((n, 3))
    centrality = rng.uniform(0.05, 1.0, n)
    concreteness = np.round(rng.uniform(1.0, 5.0, n), 2)
    conf = np.round(rng.uniform(0.05, 1.0, n), 2)
    return vecs, centrality, concreteness, conf
