"""Hinge-loss Markov random fields: Lukasiewicz operators, rule grounding and
constrained MAP inference.

A problem minimizes ``sum_j w_j * max(l_j(y), 0) ** p_j`` over free variables
``y`` in the unit box subject to linear equalities and inequalities. Evidence
variables are fixed and folded into term offsets and constraint right-hand
sides before solving.

MAP inference is posed as a convex QP (one epigraph slack per hinge) and solved
with a Mehrotra predictor-corrector interior-point method. Ties among optima
are broken towards the minimum-norm point by a second solve restricted to the
optimal set, the exact limit of adding a vanishing ridge ``eps * ||y||^2``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import ConvergenceError, InfeasibleError

DEFAULT_TOL = 1e-4
DEFAULT_MAX_ITER = 20000

_DENSE_LIMIT = 600
_STALL_LIMIT = 200
# static regularization of the Newton system; residuals stay exact
_KKT_REG = 1e-12


def _unit(x, name):
    if not 0.0 <= x <= 1.0:
        raise ValueError(f"{name} must lie in [0, 1], got {x}")


def luk_and(a: float, b: float) -> float:
    _unit(a, "a")
    _unit(b, "b")
    # a + 1 - 1 can round away from a; keep the identity exact
    if b == 1.0:
        return float(a)
    if a == 1.0:
        return float(b)
    return max(0.0, a + b - 1.0)


def luk_or(a: float, b: float) -> float:
    _unit(a, "a")
    _unit(b, "b")
    return min(1.0, a + b)


def luk_neg(a: float) -> float:
    _unit(a, "a")
    return 1.0 - a


@dataclass(frozen=True)
class HingeTerm:
    """``weight * max(offset + sum(c * y[i]), 0) ** power``."""

    weight: float
    coeffs: tuple[tuple[int, float], ...]
    offset: float
    power: int = 1

    def __post_init__(self):
        if not self.weight >= 0 or not math.isfinite(self.weight):
            raise ValueError(f"term weight must be finite and >= 0, got {self.weight}")
        if self.power not in (1, 2):
            raise ValueError(f"term power must be 1 or 2, got {self.power}")
        object.__setattr__(self, "coeffs", tuple((int(i), float(c)) for i, c in self.coeffs))

    def linear(self, values) -> float:
        return self.offset + sum(c * values[i] for i, c in self.coeffs)

    def value(self, values) -> float:
        return self.weight * max(self.linear(values), 0.0) ** self.power


@dataclass(frozen=True)
class LinearConstraint:
    """``sum(c * y[i]) <= rhs`` (``kind='leq'``) or ``== rhs`` (``kind='eq'``)."""

    coeffs: tuple[tuple[int, float], ...]
    rhs: float
    kind: str = "leq"

    def __post_init__(self):
        if not self.coeffs:
            raise ValueError("constraint needs at least one coefficient")
        if self.kind not in ("leq", "eq"):
            raise ValueError(f"constraint kind must be 'leq' or 'eq', got {self.kind!r}")
        object.__setattr__(self, "coeffs", tuple((int(i), float(c)) for i, c in self.coeffs))

    def lhs(self, values) -> float:
        return sum(c * values[i] for i, c in self.coeffs)

    def violation(self, values) -> float:
        d = self.lhs(values) - self.rhs
        return abs(d) if self.kind == "eq" else max(d, 0.0)


@dataclass(frozen=True)
class HlMrfProblem:
    num_vars: int
    evidence: Mapping[int, float] = field(default_factory=dict)
    terms: tuple[HingeTerm, ...] = ()
    constraints: tuple[LinearConstraint, ...] = ()
    labels: tuple[str, ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "terms", tuple(self.terms))
        object.__setattr__(self, "constraints", tuple(self.constraints))
        object.__setattr__(self, "evidence", {int(k): float(v) for k, v in self.evidence.items()})
        for i, v in self.evidence.items():
            if not 0 <= i < self.num_vars:
                raise ValueError(f"evidence variable {i} out of range")
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"evidence value {v} for variable {i} outside [0, 1]")
        for part in self.terms + self.constraints:
            for i, _ in part.coeffs:
                if not 0 <= i < self.num_vars:
                    raise ValueError(f"variable {i} out of range (num_vars={self.num_vars})")

    @property
    def free_vars(self) -> list[int]:
        return [i for i in range(self.num_vars) if i not in self.evidence]

    def full(self, free_values) -> np.ndarray:
        out = np.zeros(self.num_vars)
        out[self.free_vars] = free_values
        for i, v in self.evidence.items():
            out[i] = v
        return out


@dataclass(frozen=True)
class Assignment:
    values: np.ndarray
    objective: float
    free: tuple[int, ...]
    iterations: int = 0

    def __getitem__(self, var):
        return float(self.values[var])


def ground_rule(weight: float, body: Sequence[int], head: Sequence[int]) -> HingeTerm:
    """Distance to satisfaction of ``AND(body) -> OR(head)``.

    ``max(1 - sum(head) - sum(1 - body), 0)``; for ``s -> t`` this is
    ``max(y_s - y_t, 0)``.
    """
    if not body and not head:
        raise ValueError("a rule needs a body or a head")
    if weight < 0:
        raise ValueError(f"rule weight must be >= 0, got {weight}")
    coeffs: dict[int, float] = {}
    for i in body:
        coeffs[i] = coeffs.get(i, 0.0) + 1.0
    for i in head:
        coeffs[i] = coeffs.get(i, 0.0) - 1.0
    return HingeTerm(weight, tuple(coeffs.items()), 1.0 - len(body), 1)


def objective(problem: HlMrfProblem, values) -> float:
    """Weighted hinge energy at a full assignment (evidence taken from the problem)."""
    values = np.array(values, dtype=float)
    for i, v in problem.evidence.items():
        values[i] = v
    return float(sum(t.value(values) for t in problem.terms))


def max_violation(problem: HlMrfProblem, values) -> float:
    return max((c.violation(values) for c in problem.constraints), default=0.0)


class _Reduced:
    """Terms and constraints restricted to the free variables, with evidence
    folded into offsets and right-hand sides."""

    def __init__(self, problem: HlMrfProblem):
        free = problem.free_vars
        pos = {v: k for k, v in enumerate(free)}
        ev = problem.evidence
        self.n = len(free)
        self.terms = []
        for t in problem.terms:
            off = t.offset + sum(c * ev[i] for i, c in t.coeffs if i in ev)
            fc = [(pos[i], c) for i, c in t.coeffs if i not in ev and c != 0.0]
            if fc:
                self.terms.append((t.weight, t.power, off, fc))
        self.leq, self.eq = [], []
        for c in problem.constraints:
            rhs = c.rhs - sum(a * ev[i] for i, a in c.coeffs if i in ev)
            fc = [(pos[i], a) for i, a in c.coeffs if i not in ev and a != 0.0]
            if not fc:
                bad = abs(rhs) > 1e-9 if c.kind == "eq" else rhs < -1e-9
                if bad:
                    raise InfeasibleError(f"constraint fixed by evidence is violated: {c}")
                continue
            (self.eq if c.kind == "eq" else self.leq).append((fc, rhs))

    def hinge(self, j, y):
        _, _, off, fc = self.terms[j]
        return max(off + sum(a * y[i] for i, a in fc), 0.0)


class _Rows:
    def __init__(self, dim):
        self.dim = dim
        self.rows, self.cols, self.vals, self.rhs = [], [], [], []

    def add(self, entries, rhs):
        r = len(self.rhs)
        for i, a in entries:
            self.rows.append(r)
            self.cols.append(i)
            self.vals.append(a)
        self.rhs.append(rhs)

    def matrix(self):
        return (sp.csr_matrix((self.vals, (self.rows, self.cols)), shape=(len(self.rhs), self.dim)),
                np.array(self.rhs, dtype=float))


def _common_rows(red, G, E):
    for i in range(red.n):
        G.add([(i, -1.0)], 0.0)
        G.add([(i, 1.0)], 1.0)
    for fc, rhs in red.leq:
        G.add(fc, rhs)
    for fc, rhs in red.eq:
        E.add(fc, rhs)


def _energy_qp(red) -> "_QP":
    # minimize sum_j w_j s_j^p_j with s_j >= l_j(y), s_j >= 0
    n, m = red.n, len(red.terms)
    P = np.zeros(n + m)
    q = np.zeros(n + m)
    G, E = _Rows(n + m), _Rows(n + m)
    z0 = np.zeros(n + m)
    z0[:n] = 0.5
    for j, (w, p, off, fc) in enumerate(red.terms):
        if p == 1:
            q[n + j] = w
        else:
            P[n + j] = 2.0 * w
        G.add(fc + [(n + j, -1.0)], -off)
        G.add([(n + j, -1.0)], 0.0)
        z0[n + j] = red.hinge(j, z0[:n]) + 1.0
    _common_rows(red, G, E)
    return _QP(P, q, *G.matrix(), *E.matrix(), z0)


def _min_norm_qp(red, y_opt, slack) -> "_QP":
    # minimize ||y||^2 over the near-optimal set of the energy. Squared hinges
    # are capped at their optimal level, linear hinges share a total budget.
    lin = [j for j, t in enumerate(red.terms) if t[1] == 1]
    n = red.n
    dim = n + len(lin)
    P = np.zeros(dim)
    P[:n] = 2.0
    G, E = _Rows(dim), _Rows(dim)
    z0 = np.zeros(dim)
    z0[:n] = y_opt
    budget = 0.0
    for k, j in enumerate(lin):
        w, _, off, fc = red.terms[j]
        G.add(fc + [(n + k, -1.0)], -off)
        G.add([(n + k, -1.0)], 0.0)
        z0[n + k] = red.hinge(j, y_opt)
        budget += w * z0[n + k]
    if lin:
        G.add([(n + k, red.terms[j][0]) for k, j in enumerate(lin)], budget + slack)
    for j, (w, p, off, fc) in enumerate(red.terms):
        if p == 2:
            G.add(fc, red.hinge(j, y_opt) - off + slack)
    _common_rows(red, G, E)
    return _QP(P, np.zeros(dim), *G.matrix(), *E.matrix(), z0)


class _QP:
    """Convex QP with diagonal Hessian, solved by a Mehrotra predictor-corrector
    interior-point method: minimize ``0.5 z'diag(P)z + q'z`` subject to
    ``Gz <= h`` and ``Az = b``."""

    def __init__(self, P, q, G, h, A, b, z0):
        self.P, self.q, self.G, self.h, self.A, self.b, self.z0 = P, q, G, h, A, b, z0
        self.dense = P.shape[0] + A.shape[0] <= _DENSE_LIMIT
        if self.dense:
            self.Gd = G.toarray()
            self.Ad = A.toarray()

    def value(self, z):
        return float(0.5 * z @ (self.P * z) + self.q @ z)

    def solve(self, max_iter, gap_rel):
        P, q, h, b = self.P, self.q, self.h, self.b
        G, A = (self.Gd, self.Ad) if self.dense else (self.G, self.A)
        mi, me = G.shape[0], A.shape[0]
        z = self.z0.copy()
        s = np.maximum(h - G @ z, 1.0)
        lam = np.ones(mi)
        nu = np.zeros(me)
        scale = 1.0 + max(np.max(np.abs(q), initial=0.0), np.max(P, initial=0.0))
        p_tol = 1e-10 * (1.0 + max(np.max(np.abs(h), initial=0.0), np.max(np.abs(b), initial=0.0)))
        d_tol = 1e-9 * scale
        stalls = 0
        best = None
        for it in range(1, max_iter + 1):
            r_d = P * z + q + G.T @ lam + A.T @ nu
            r_p = A @ z - b
            r_i = G @ z + s - h
            gap = float(s @ lam)
            pres = max(np.max(np.abs(r_i), initial=0.0), np.max(np.abs(r_p), initial=0.0))
            dres = float(np.max(np.abs(r_d), initial=0.0))
            gap_tol = gap_rel * (scale + abs(self.value(z)))
            if pres <= p_tol and dres <= d_tol and gap <= gap_tol:
                return z, it
            if pres <= 1e2 * p_tol and dres <= 1e3 * d_tol and gap <= 1e3 * gap_tol:
                best = z.copy()
                # complementarity far past its target while a residual is stuck
                # at rounding level: more steps only drive s towards underflow
                if gap <= 1e-6 * gap_tol:
                    return best, it
            mu = gap / mi
            with np.errstate(over="ignore", divide="ignore"):
                d = lam / s
            # squaring d below would overflow; precision is exhausted anyway
            if not np.all(np.isfinite(d)) or np.max(d, initial=0.0) > 1e100:
                return best, it
            try:
                step = self._factor(d)
            except (np.linalg.LinAlgError, RuntimeError):
                return best, it

            def newton(r_c):
                rhs = -r_d - G.T @ ((r_c + lam * r_i) / s)
                dz, dnu = step(rhs, -r_p)
                ds = -r_i - G @ dz
                dl = (r_c - lam * ds) / s
                return dz, dnu, ds, dl

            dz, dnu, ds, dl = newton(-s * lam)
            a_aff = min(_max_step(s, ds), _max_step(lam, dl))
            mu_aff = float((s + a_aff * ds) @ (lam + a_aff * dl)) / mi
            sigma = (mu_aff / mu) ** 3
            dz, dnu, ds, dl = newton(-s * lam - ds * dl + sigma * mu)
            alpha = min(1.0, 0.99 * min(_max_step(s, ds), _max_step(lam, dl)))
            z += alpha * dz
            nu += alpha * dnu
            s += alpha * ds
            lam += alpha * dl
            if not (np.all(np.isfinite(z)) and np.all(np.isfinite(lam))):
                return best, it
            stalls = stalls + 1 if alpha < 1e-8 else 0
            if stalls >= 5 or it >= _STALL_LIMIT:
                return best, it
        return best, max_iter

    def _factor(self, d):
        n_z = self.P.shape[0]
        me = self.A.shape[0]
        if self.dense:
            H = self.Gd.T @ (d[:, None] * self.Gd)
            H[np.diag_indices(n_z)] += self.P
            reg = _KKT_REG
            for _ in range(5):
                K = H + reg * np.eye(n_z)
                if me:
                    K = np.block([[K, self.Ad.T], [self.Ad, -reg * np.eye(me)]])
                    with warnings.catch_warnings():
                        warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
                        lu = scipy.linalg.lu_factor(K, check_finite=False)
                    if np.all(np.abs(np.diag(lu[0])) > 0):
                        def solve_kkt(r1, r2, lu=lu):
                            x = scipy.linalg.lu_solve(lu, np.concatenate([r1, r2]), check_finite=False)
                            return x[:n_z], x[n_z:]
                        return solve_kkt
                else:
                    try:
                        cf = scipy.linalg.cho_factor(K, check_finite=False)
                    except np.linalg.LinAlgError:
                        pass
                    else:
                        return lambda r1, r2, cf=cf: (
                            scipy.linalg.cho_solve(cf, r1, check_finite=False), np.zeros(0))
                reg *= 1e3
            raise np.linalg.LinAlgError("Newton system is singular")
        H = (self.G.T @ sp.diags(d) @ self.G + sp.diags(self.P)).tocsc()
        reg = _KKT_REG
        H = H + reg * sp.identity(n_z, format="csc")
        if me:
            K = sp.bmat([[H, self.A.T], [self.A, -reg * sp.identity(me)]], format="csc")
        else:
            K = H
        lu = spla.splu(K)

        def solve_sparse(r1, r2):
            x = lu.solve(np.concatenate([r1, r2]))
            return x[:n_z], x[n_z:]
        return solve_sparse


def _max_step(x, dx):
    neg = dx < 0
    if not neg.any():
        return 1.0
    with np.errstate(over="ignore"):
        return float(min(1.0, np.min(-x[neg] / dx[neg])))


def solve(problem: HlMrfProblem, tol: float = DEFAULT_TOL,
          max_iter: int = DEFAULT_MAX_ITER) -> Assignment:
    """MAP assignment of an HL-MRF.

    Two interior-point solves: the first minimizes the hinge energy, the
    second returns the minimum-norm point among (near-)minimizers, so the
    reported point is unique.

    Parameters
    ----------
    problem : HlMrfProblem
    tol : float
        Accuracy required of the reported objective. The interior-point
        method runs to a much tighter duality gap than this.
    max_iter : int
        Iteration cap for each interior-point solve.

    Returns
    -------
    Assignment
        Full-length values (evidence included), clipped to the box.

    Raises
    ------
    InfeasibleError
        The constraints have no solution inside the box.
    ConvergenceError
        The solver stopped without meeting its tolerances.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    red = _Reduced(problem)
    if red.n == 0:
        values = problem.full([])
        if max_violation(problem, values) > 1e-9:
            raise InfeasibleError("evidence violates the constraints")
        return Assignment(values, objective(problem, values), (), 0)

    z, iters = _energy_qp(red).solve(max_iter, 1e-11)
    if z is None:
        _diagnose(problem, iters, max_iter)
    y = np.clip(z[:red.n], 0.0, 1.0)
    energy = objective(problem, problem.full(y))
    slack = min(1e-9 * (1.0 + energy), 0.1 * tol)
    zb, iters_b = _min_norm_qp(red, y, slack).solve(max_iter, 1e-13)
    if zb is not None:
        yb = np.clip(zb[:red.n], 0.0, 1.0)
        if objective(problem, problem.full(yb)) <= energy + tol:
            y = yb
    values = problem.full(y)
    return Assignment(values, objective(problem, values), tuple(problem.free_vars), iters + iters_b)


def _diagnose(problem, iters, max_iter):
    # distance to feasibility, itself an unconstrained hinge problem
    terms = []
    for c in problem.constraints:
        terms.append(HingeTerm(1.0, c.coeffs, -c.rhs))
        if c.kind == "eq":
            terms.append(HingeTerm(1.0, tuple((i, -a) for i, a in c.coeffs), c.rhs))
    phase1 = HlMrfProblem(problem.num_vars, problem.evidence, terms, ())
    red = _Reduced(phase1)
    z, _ = _energy_qp(red).solve(_STALL_LIMIT, 1e-11) if red.n else (np.zeros(0), 0)
    if z is not None:
        values = phase1.full(np.clip(z[:red.n], 0.0, 1.0))
        violation = objective(phase1, values)
        if violation > 1e-7:
            raise InfeasibleError(f"constraints are infeasible (total violation {violation:.3e})")
    if iters >= max_iter:
        raise ConvergenceError(f"MAP solve hit max_iter={max_iter}")
    raise ConvergenceError(f"MAP solve stalled after {iters} iterations")


def dump_problem(problem: HlMrfProblem) -> str:
    """Line-oriented text form of a grounded problem, for golden files."""
    lines = []
    for i in range(problem.num_vars):
        if i in problem.evidence:
            lines.append(f"VAR {i} = {problem.evidence[i]!r}")
        else:
            lines.append(f"VAR {i}")
    for t in problem.terms:
        body = " ".join(f"({i}:{c!r})" for i, c in t.coeffs)
        lines.append(f"TERM {t.weight!r} {t.power} {t.offset!r} {body}")
    for c in problem.constraints:
        body = " ".join(f"({i}:{a!r})" for i, a in c.coeffs)
        lines.append(f"CON {c.kind} {c.rhs!r} {body}")
    return "\n".join(lines) + "\n"


def parse_problem(text: str) -> HlMrfProblem:
    num_vars, evidence, terms, cons = 0, {}, [], []

    def pairs(items):
        out = []
        for item in items:
            i, c = item.strip("()").split(":")
            out.append((int(i), float(c)))
        return tuple(out)

    for line in text.splitlines():
        parts = line.split()
        if not parts:
            continue
        if parts[0] == "VAR":
            i = int(parts[1])
            num_vars = max(num_vars, i + 1)
            if len(parts) == 4:
                evidence[i] = float(parts[3])
        elif parts[0] == "TERM":
            terms.append(HingeTerm(float(parts[1]), pairs(parts[4:]), float(parts[3]), int(parts[2])))
        elif parts[0] == "CON":
            cons.append(LinearConstraint(pairs(parts[3:]), float(parts[2]), parts[1]))
        else:
            raise ValueError(f"unrecognized line: {line!r}")
    return HlMrfProblem(num_vars, evidence, terms, cons)
