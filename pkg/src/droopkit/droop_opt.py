"""Selection of inverse droop gains under N-1 post-fault power limits.

Three solver routes are provided and cross-validate each other:

* ``solve_exact_oracle`` — the nonconvex post-fault constraints become exact
  linear rows after multiplying through by the surviving stiffness, so the
  whole problem is a plain LP.  Globally optimal, fast, and the ground truth
  for everything else.
* ``build_milp`` + backend "highs" — the digit-expansion MILP: the reciprocal
  of surviving stiffness and its products with the gains are linearized by
  expanding one factor into decimal digits selected by one-hot binaries.
  Solved by an external MILP solver.
* ``build_milp`` + backend "bnb" — built-in branch and bound.  Because an
  integral digit selection pins each gain to the 10**psi grid and makes every
  linearized row exact, the MILP optimum equals the best grid-restricted
  solution of the exact problem; the built-in solver therefore branches on
  the grid integrality of the gains themselves over the exact-LP relaxation,
  which gives far stronger bounds than branching on single digit binaries.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.optimize import Bounds, LinearConstraint, linprog
from scipy.optimize import milp as _highs_milp

from .core import DroopAssignment, GridScenario, ScenarioError, _readonly

DEFAULT_ALPHA = 600.0
DEFAULT_PSI = -3

_FEAS_TOL = 1e-9


class StiffnessError(ScenarioError):
    """Stiffness target unreachable: alpha does not exceed the sum of the
    lower bounds on the inverse gains."""


@dataclass(frozen=True)
class DroopProblem:
    """One instance of the gain-selection problem, all powers in per-unit."""

    alpha: float
    x_min: np.ndarray
    p_ref: np.ndarray
    p_max: np.ndarray
    psi: int = DEFAULT_PSI
    eta: int | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "x_min", _readonly(self.x_min))
        object.__setattr__(self, "p_ref", _readonly(self.p_ref))
        object.__setattr__(self, "p_max", _readonly(self.p_max))
        if not self.x_min.size == self.p_ref.size == self.p_max.size:
            raise ScenarioError("x_min, p_ref and p_max must have equal length")
        if self.n < 2:
            raise ScenarioError("gain selection needs at least 2 converters")
        if np.any(self.x_min <= 0) or np.any(self.p_max <= 0):
            raise ScenarioError("x_min and p_max must be positive")
        if self.alpha <= float(self.x_min.sum()):
            raise StiffnessError(
                f"stiffness target unreachable: alpha={self.alpha:g} does not exceed "
                f"sum of gain lower bounds {float(self.x_min.sum()):g}"
            )
        if self.eta is None:
            object.__setattr__(self, "eta", max(0, math.ceil(math.log10(self.alpha))))
        if not self.psi <= 0 <= self.eta:
            raise ScenarioError("digit places must satisfy psi <= 0 <= eta")

    @property
    def n(self) -> int:
        return self.x_min.size

    @property
    def x_upper(self) -> np.ndarray:
        """Largest each gain can be while the others sit at their bounds."""
        return self.alpha - (float(self.x_min.sum()) - self.x_min)

    @property
    def s_bar(self) -> np.ndarray:
        """Upper bound on the reciprocal of surviving stiffness, per outage."""
        return 1.0 / (float(self.x_min.sum()) - self.x_min)


def build_exact_problem(
    scenario: GridScenario,
    alpha: float = DEFAULT_ALPHA,
    psi: int = DEFAULT_PSI,
    eta: int | None = None,
) -> DroopProblem:
    """Problem instance for a scenario at the given stiffness target."""
    return DroopProblem(
        alpha=float(alpha),
        x_min=scenario.x_min,
        p_ref=scenario.p_ref,
        p_max=scenario.p_max,
        psi=psi,
        eta=eta,
    )


def pair_distance(x: np.ndarray) -> float:
    """Objective value: sum of pairwise absolute gaps between gains."""
    x = np.asarray(x, dtype=float)
    diffs = np.abs(x[:, None] - x[None, :])
    return float(diffs[np.triu_indices(x.size, k=1)].sum())


def exact_residual(x: np.ndarray, problem: DroopProblem) -> float:
    """Worst violation (pu) of the exact post-fault limits at assignment x."""
    x = np.asarray(x, dtype=float)
    n = problem.n
    worst = 0.0
    for k in range(n):
        share = x / (problem.alpha - x[k])
        for i in range(n):
            if i == k:
                continue
            flow = problem.p_ref[i] + share[i] * problem.p_ref[k]
            worst = max(worst, abs(flow) - problem.p_max[i])
    return max(0.0, worst)


@dataclass(frozen=True)
class DroopSolution:
    """Outcome of a gain-selection solve."""

    status: str  # "optimal" | "infeasible" | "precision-limited"
    assignment: DroopAssignment | None
    objective: float | None
    residual: float
    backend: str = ""
    note: str = ""


# ---------------------------------------------------------------------------
# Exact LP oracle
# ---------------------------------------------------------------------------


def _exact_lp(problem: DroopProblem):
    """Matrices of the exact problem as an LP over (x, t).

    Multiplying each post-fault limit through by the (strictly positive)
    surviving stiffness turns it into two linear rows; the absolute-value
    objective is lifted with one epigraph variable per converter pair.
    """
    n = problem.n
    pairs = [(i, c) for i in range(n) for c in range(i + 1, n)]
    nv = n + len(pairs)
    cvec = np.zeros(nv)
    cvec[n:] = 1.0

    rows, rhs = [], []
    p, pmax, alpha = problem.p_ref, problem.p_max, problem.alpha
    for k in range(n):
        for i in range(n):
            if i == k:
                continue
            up = np.zeros(nv)
            up[i] += p[k]
            up[k] += pmax[i] - p[i]
            rows.append(up)
            rhs.append((pmax[i] - p[i]) * alpha)
            lo = np.zeros(nv)
            lo[i] -= p[k]
            lo[k] += pmax[i] + p[i]
            rows.append(lo)
            rhs.append((pmax[i] + p[i]) * alpha)
    for m, (i, c) in enumerate(pairs):
        for sign in (1.0, -1.0):
            row = np.zeros(nv)
            row[i] = sign
            row[c] = -sign
            row[n + m] = -1.0
            rows.append(row)
            rhs.append(0.0)

    a_eq = np.zeros((1, nv))
    a_eq[0, :n] = 1.0
    bounds = [(float(problem.x_min[i]), float(problem.x_upper[i])) for i in range(n)]
    bounds += [(0.0, None)] * len(pairs)
    return cvec, np.array(rows), np.array(rhs), a_eq, np.array([alpha]), bounds


def solve_exact_oracle(problem: DroopProblem, tie_break: bool = True) -> DroopSolution:
    """Globally optimal solve of the exact gain-selection problem.

    Among alternate optima a secondary solve minimizes an index-weighted sum
    of the gains over the optimal face, so repeated runs and symmetric
    instances yield one reproducible vertex.
    """
    cvec, a_ub, b_ub, a_eq, b_eq, bounds = _exact_lp(problem)
    res = linprog(cvec, A_ub=a_ub, b_ub=b_ub, A_eq=a_eq, b_eq=b_eq, bounds=bounds, method="highs")
    if res.status == 2:
        return DroopSolution("infeasible", None, None, 0.0, backend="oracle")
    if res.status != 0:
        raise RuntimeError(f"oracle LP failed with status {res.status}: {res.message}")

    n = problem.n
    x = res.x[:n]
    if tie_break:
        fstar = float(cvec @ res.x)
        a_ub2 = sp.vstack([sp.csr_matrix(a_ub), sp.csr_matrix(cvec)])
        b_ub2 = np.append(b_ub, fstar + 1e-9 * max(1.0, abs(fstar)))
        c2 = np.zeros_like(cvec)
        c2[:n] = 0.5 ** np.arange(n)
        second = linprog(
            c2, A_ub=a_ub2, b_ub=b_ub2, A_eq=a_eq, b_eq=b_eq, bounds=bounds, method="highs"
        )
        # keep the refined vertex only if it stays on the optimal face
        if second.status == 0 and pair_distance(second.x[:n]) <= pair_distance(x) + 1e-9 * max(
            1.0, abs(fstar)
        ):
            x = second.x[:n]

    x = np.clip(x, problem.x_min, problem.x_upper)
    # the all-equal point is the unique zero of the objective; snap to it when
    # the solver lands within noise of it and it is feasible
    equal = np.full(n, problem.alpha / n)
    if (
        pair_distance(x) <= 1e-8 * max(1.0, problem.alpha)
        and np.all(equal >= problem.x_min - 1e-12)
        and exact_residual(equal, problem) <= _FEAS_TOL
    ):
        x = equal
    assignment = DroopAssignment(x)
    return DroopSolution(
        status="optimal",
        assignment=assignment,
        objective=pair_distance(x),
        residual=exact_residual(x, problem),
        backend="oracle",
    )


# ---------------------------------------------------------------------------
# Digit-expansion MILP
# ---------------------------------------------------------------------------


def digit_expansion(value: float, psi: int, eta: int) -> list[int]:
    """Decimal digits of a grid value, one per place from 10**psi to 10**eta."""
    units = int(round(value / 10.0**psi))
    if abs(units * 10.0**psi - value) > 1e-6 * max(1.0, abs(value)):
        raise ValueError(f"{value!r} is not representable on the 10^{psi} grid")
    digits = []
    for place in range(psi, eta + 1):
        digits.append((units // 10 ** (place - psi)) % 10)
    if units // 10 ** (eta + 1 - psi) != 0:
        raise ValueError(f"{value!r} overflows the 10^{eta} top place")
    return digits


class _MilpLayout:
    """Variable indexing for the digit-expansion MILP."""

    def __init__(self, n: int, psi: int, eta: int):
        self.n = n
        self.psi = psi
        self.eta = eta
        self.places = list(range(psi, eta + 1))
        self.np_ = len(self.places)
        self.pairs = [(k, i) for k in range(n) for i in range(n) if i != k]
        self.tpairs = [(i, c) for i in range(n) for c in range(i + 1, n)]
        blk = 10 * self.np_
        self.off_x = 0
        self.off_alpha = n
        self.off_sigma = 2 * n
        self.off_z = 3 * n
        self.off_sa = self.off_z + len(self.pairs)
        self.off_sx = self.off_sa + n * blk
        self.off_t = self.off_sx + len(self.pairs) * blk
        self.off_ya = self.off_t + len(self.tpairs)
        self.off_yx = self.off_ya + n * blk
        self.num_vars = self.off_yx + n * blk

    def pair_index(self, k: int, i: int) -> int:
        return k * (self.n - 1) + (i if i < k else i - 1)

    def x(self, i: int) -> int:
        return self.off_x + i

    def alpha_k(self, k: int) -> int:
        return self.off_alpha + k

    def sigma(self, k: int) -> int:
        return self.off_sigma + k

    def z(self, k: int, i: int) -> int:
        return self.off_z + self.pair_index(k, i)

    def sighat_alpha(self, k: int, a: int, bi: int) -> int:
        return self.off_sa + (k * 10 + a) * self.np_ + bi

    def sighat_x(self, k: int, i: int, a: int, di: int) -> int:
        return self.off_sx + (self.pair_index(k, i) * 10 + a) * self.np_ + di

    def t(self, m: int) -> int:
        return self.off_t + m

    def y_alpha(self, k: int, a: int, bi: int) -> int:
        return self.off_ya + (k * 10 + a) * self.np_ + bi

    def y_x(self, i: int, a: int, di: int) -> int:
        return self.off_yx + (i * 10 + a) * self.np_ + di


@dataclass
class MilpModel:
    """Linear algebra of the digit-expansion MILP plus its provenance."""

    problem: DroopProblem
    layout: _MilpLayout
    c: np.ndarray
    a_eq: sp.csr_matrix
    b_eq: np.ndarray
    a_ub: sp.csr_matrix
    b_ub: np.ndarray
    lb: np.ndarray
    ub: np.ndarray
    integrality: np.ndarray

    @property
    def num_variables(self) -> int:
        return self.c.size

    @property
    def num_constraints(self) -> int:
        return self.b_eq.size + self.b_ub.size

    @property
    def y_alpha_count(self) -> int:
        return self.layout.n * 10 * self.layout.np_

    @property
    def y_x_count(self) -> int:
        return self.layout.n * 10 * self.layout.np_

    @property
    def num_binaries(self) -> int:
        return int(self.integrality.sum())


def _tightened_bounds(problem: DroopProblem):
    """Valid variable ranges for the bilinear blocks.

    The post-fault limits already restrict each share z and hence each gain,
    so propagating them before building the model shrinks the relaxation and
    lets impossible digits be fixed to zero up front.
    """
    n = problem.n
    p, pmax, alpha = problem.p_ref, problem.p_max, problem.alpha
    xlo = problem.x_min.copy()
    xup = problem.x_upper.copy()
    alo = alpha - xup  # = sum of the other gain lower bounds
    ahi = alpha - xlo
    slo = 1.0 / ahi
    shi = 1.0 / alo

    z_lo = np.zeros((n, n))
    z_hi = np.zeros((n, n))
    for k in range(n):
        for i in range(n):
            if i == k:
                continue
            lo, hi = slo[k] * xlo[i], shi[k] * xup[i]
            if p[k] > 0:
                hi = min(hi, (pmax[i] - p[i]) / p[k])
                lo = max(lo, (-pmax[i] - p[i]) / p[k])
            elif p[k] < 0:
                hi = min(hi, (-pmax[i] - p[i]) / p[k])
                lo = max(lo, (pmax[i] - p[i]) / p[k])
            z_lo[k, i], z_hi[k, i] = lo, hi

    for i in range(n):
        cap = min(
            (z_hi[k, i] / slo[k] for k in range(n) if k != i),
            default=xup[i],
        )
        xup[i] = max(xlo[i], min(xup[i], cap))
    alo = alpha - xup
    shi = 1.0 / alo
    for k in range(n):
        for i in range(n):
            if i != k:
                z_hi[k, i] = min(z_hi[k, i], shi[k] * xup[i])
                z_lo[k, i] = max(z_lo[k, i], slo[k] * xlo[i])
    return xlo, xup, alo, ahi, slo, shi, z_lo, z_hi


def build_milp(problem: DroopProblem) -> MilpModel:
    """Assemble the digit-expansion MILP.

    The required blocks: the surviving-stiffness identity, one-hot decimal
    expansions of the stiffness and of each gain, disaggregated copies of the
    stiffness reciprocal with their activation bounds, the recovered linear
    share constraints, and the epigraph form of the pairwise-gap objective.
    On top of those, valid rows that any exact-feasible point satisfies
    (share sums, McCormick envelopes, and the exact linear rows of the
    oracle) are added to strengthen the relaxation; they do not change the
    integer optimum.
    """
    lay = _MilpLayout(problem.n, problem.psi, problem.eta)
    n = problem.n
    alpha, p, pmax = problem.alpha, problem.p_ref, problem.p_max
    s_bar = problem.s_bar
    xlo, xup, alo, ahi, slo, shi, z_lo, z_hi = _tightened_bounds(problem)
    place_val = [10.0**b for b in lay.places]

    lb = np.zeros(lay.num_vars)
    ub = np.full(lay.num_vars, np.inf)
    integrality = np.zeros(lay.num_vars, dtype=bool)
    for i in range(n):
        lb[lay.x(i)], ub[lay.x(i)] = xlo[i], xup[i]
    for k in range(n):
        lb[lay.alpha_k(k)], ub[lay.alpha_k(k)] = alo[k], ahi[k]
        lb[lay.sigma(k)], ub[lay.sigma(k)] = slo[k], shi[k]
    for k, i in lay.pairs:
        j = lay.z(k, i)
        lb[j], ub[j] = z_lo[k, i], z_hi[k, i]
    for k in range(n):
        for a in range(10):
            for bi in range(lay.np_):
                ub[lay.sighat_alpha(k, a, bi)] = s_bar[k]
    for k, i in lay.pairs:
        for a in range(10):
            for di in range(lay.np_):
                ub[lay.sighat_x(k, i, a, di)] = s_bar[k]
    for m in range(len(lay.tpairs)):
        ub[lay.t(m)] = float(xup.max() - xlo.min())
    for k in range(n):
        for a in range(10):
            for bi in range(lay.np_):
                j = lay.y_alpha(k, a, bi)
                integrality[j] = True
                # digit impossible when its place value alone overshoots
                ub[j] = 0.0 if a * place_val[bi] > ahi[k] + 1e-9 else 1.0
    for i in range(n):
        for a in range(10):
            for di in range(lay.np_):
                j = lay.y_x(i, a, di)
                integrality[j] = True
                ub[j] = 0.0 if a * place_val[di] > xup[i] + 1e-9 else 1.0

    eq_r, eq_c, eq_v, b_eq = [], [], [], []
    ub_r, ub_c, ub_v, b_ub = [], [], [], []

    def eq_row(cols, vals, rhs):
        r = len(b_eq)
        eq_r.extend([r] * len(cols))
        eq_c.extend(cols)
        eq_v.extend(vals)
        b_eq.append(rhs)

    def ub_row(cols, vals, rhs):
        r = len(b_ub)
        ub_r.extend([r] * len(cols))
        ub_c.extend(cols)
        ub_v.extend(vals)
        b_ub.append(rhs)

    # stiffness budget and per-outage surviving stiffness
    eq_row([lay.x(i) for i in range(n)], [1.0] * n, alpha)
    for k in range(n):
        eq_row([lay.alpha_k(k), lay.x(k)], [1.0, 1.0], alpha)

    for k in range(n):
        # one-hot decimal expansion of the surviving stiffness
        cols = [lay.alpha_k(k)]
        vals = [1.0]
        for a in range(10):
            for bi in range(lay.np_):
                cols.append(lay.y_alpha(k, a, bi))
                vals.append(-a * place_val[bi])
        eq_row(cols, vals, 0.0)
        # reciprocal coupling through the disaggregated copies
        cols, vals = [], []
        for a in range(10):
            for bi in range(lay.np_):
                cols.append(lay.sighat_alpha(k, a, bi))
                vals.append(a * place_val[bi])
        eq_row(cols, vals, 1.0)
        for bi in range(lay.np_):
            eq_row(
                [lay.sigma(k)] + [lay.sighat_alpha(k, a, bi) for a in range(10)],
                [1.0] + [-1.0] * 10,
                0.0,
            )
            eq_row([lay.y_alpha(k, a, bi) for a in range(10)], [1.0] * 10, 1.0)
        for a in range(10):
            for bi in range(lay.np_):
                ub_row(
                    [lay.sighat_alpha(k, a, bi), lay.y_alpha(k, a, bi)],
                    [1.0, -s_bar[k]],
                    0.0,
                )

    for i in range(n):
        # one-hot decimal expansion of each gain
        cols = [lay.x(i)]
        vals = [1.0]
        for a in range(10):
            for di in range(lay.np_):
                cols.append(lay.y_x(i, a, di))
                vals.append(-a * place_val[di])
        eq_row(cols, vals, 0.0)
        for di in range(lay.np_):
            eq_row([lay.y_x(i, a, di) for a in range(10)], [1.0] * 10, 1.0)

    for k, i in lay.pairs:
        for di in range(lay.np_):
            eq_row(
                [lay.sigma(k)] + [lay.sighat_x(k, i, a, di) for a in range(10)],
                [1.0] + [-1.0] * 10,
                0.0,
            )
        cols = [lay.z(k, i)]
        vals = [1.0]
        for a in range(10):
            for di in range(lay.np_):
                cols.append(lay.sighat_x(k, i, a, di))
                vals.append(-a * place_val[di])
        eq_row(cols, vals, 0.0)
        for a in range(10):
            for di in range(lay.np_):
                ub_row(
                    [lay.sighat_x(k, i, a, di), lay.y_x(i, a, di)],
                    [1.0, -s_bar[k]],
                    0.0,
                )

    # recovered linear post-fault limits
    for k, i in lay.pairs:
        ub_row([lay.z(k, i)], [p[k]], pmax[i] - p[i])
        ub_row([lay.z(k, i)], [-p[k]], pmax[i] + p[i])

    # epigraph of the pairwise-gap objective
    for m, (i, c) in enumerate(lay.tpairs):
        ub_row([lay.x(i), lay.x(c), lay.t(m)], [1.0, -1.0, -1.0], 0.0)
        ub_row([lay.x(i), lay.x(c), lay.t(m)], [-1.0, 1.0, -1.0], 0.0)

    # valid strengthening: shares of any outage sum to one
    for k in range(n):
        eq_row([lay.z(k, i) for i in range(n) if i != k], [1.0] * (n - 1), 1.0)

    # valid strengthening: McCormick envelopes of z = sigma * x
    for k, i in lay.pairs:
        zj, sj, xj = lay.z(k, i), lay.sigma(k), lay.x(i)
        ub_row([zj, xj, sj], [-1.0, slo[k], xlo[i]], slo[k] * xlo[i])
        ub_row([zj, xj, sj], [-1.0, shi[k], xup[i]], shi[k] * xup[i])
        ub_row([zj, xj, sj], [1.0, -shi[k], -xlo[i]], -shi[k] * xlo[i])
        ub_row([zj, xj, sj], [1.0, -slo[k], -xup[i]], -slo[k] * xup[i])

    # valid strengthening: envelopes of sigma * surviving stiffness = 1
    for k in range(n):
        aj, sj = lay.alpha_k(k), lay.sigma(k)
        ub_row([aj, sj], [slo[k], alo[k]], 1.0 + slo[k] * alo[k])
        ub_row([aj, sj], [shi[k], ahi[k]], 1.0 + shi[k] * ahi[k])
        ub_row([aj, sj], [-shi[k], -alo[k]], -1.0 - shi[k] * alo[k])
        ub_row([aj, sj], [-slo[k], -ahi[k]], -1.0 - slo[k] * ahi[k])

    # valid strengthening: the exact linear rows of the oracle
    for k, i in lay.pairs:
        ub_row([lay.x(i), lay.x(k)], [p[k], pmax[i] - p[i]], (pmax[i] - p[i]) * alpha)
        ub_row([lay.x(i), lay.x(k)], [-p[k], pmax[i] + p[i]], (pmax[i] + p[i]) * alpha)

    c = np.zeros(lay.num_vars)
    for m in range(len(lay.tpairs)):
        c[lay.t(m)] = 1.0

    a_eq = sp.coo_matrix(
        (eq_v, (eq_r, eq_c)), shape=(len(b_eq), lay.num_vars)
    ).tocsr()
    a_ub = sp.coo_matrix(
        (ub_v, (ub_r, ub_c)), shape=(len(b_ub), lay.num_vars)
    ).tocsr()
    return MilpModel(
        problem=problem,
        layout=lay,
        c=c,
        a_eq=a_eq,
        b_eq=np.array(b_eq),
        a_ub=a_ub,
        b_ub=np.array(b_ub),
        lb=lb,
        ub=ub,
        integrality=integrality,
    )


# ---------------------------------------------------------------------------
# Solvers over the MILP
# ---------------------------------------------------------------------------


def _grid_ok(problem: DroopProblem) -> bool:
    q = 10.0**problem.psi
    return abs(problem.alpha / q - round(problem.alpha / q)) < 1e-6


def _feasible_on_grid(x: np.ndarray, problem: DroopProblem, xlo, xup) -> bool:
    if np.any(x < xlo - 1e-9) or np.any(x > xup + 1e-9):
        return False
    if abs(x.sum() - problem.alpha) > 1e-6:
        return False
    return exact_residual(x, problem) <= _FEAS_TOL


def _repair_to_grid(x: np.ndarray, problem: DroopProblem, xlo, xup) -> np.ndarray | None:
    """Snap a fractional point to the gain grid and rebalance the sum."""
    q = 10.0**problem.psi
    cand = np.clip(np.round(x / q) * q, xlo, xup)
    quanta = int(round((problem.alpha - cand.sum()) / q))
    for _ in range(abs(quanta)):
        step = q if quanta > 0 else -q
        best, best_obj = -1, np.inf
        for i in range(problem.n):
            trial = cand[i] + step
            if trial < xlo[i] - 1e-12 or trial > xup[i] + 1e-12:
                continue
            cand[i] = trial
            obj = pair_distance(cand)
            cand[i] -= step
            if obj < best_obj - 1e-12:
                best, best_obj = i, obj
        if best < 0:
            return None
        cand[best] += q if quanta > 0 else -q
    if abs(cand.sum() - problem.alpha) > 1e-6:
        return None
    # local polish: single-quantum transfers that keep feasibility
    for _ in range(64):
        obj0 = pair_distance(cand)
        best_pair, best_obj = None, obj0
        for i in range(problem.n):
            for j in range(problem.n):
                if i == j:
                    continue
                if cand[i] + q > xup[i] + 1e-12 or cand[j] - q < xlo[j] - 1e-12:
                    continue
                cand[i] += q
                cand[j] -= q
                obj = pair_distance(cand)
                if obj < best_obj - q * 1e-6 and exact_residual(cand, problem) <= _FEAS_TOL:
                    best_pair, best_obj = (i, j), obj
                cand[i] -= q
                cand[j] += q
        if best_pair is None:
            break
        cand[best_pair[0]] += q
        cand[best_pair[1]] -= q
    if not _feasible_on_grid(cand, problem, xlo, xup):
        return None
    return cand


def _lex_smaller(a: np.ndarray, b: np.ndarray) -> bool:
    for va, vb in zip(a, b):
        if va < vb - 1e-12:
            return True
        if va > vb + 1e-12:
            return False
    return False


def _solve_bnb(model: MilpModel, node_limit: int = 200_000) -> DroopSolution:
    """Built-in branch and bound over the gain grid.

    Nodes relax the problem to the exact LP restricted to a grid-aligned box
    per gain; branching splits the most fractional gain (in grid units) and
    candidates are verified against the exact limits in closed form, which is
    equivalent to an integral digit selection.  Distinct grid objectives
    differ by at least one grid quantum, so a bound within one quantum of the
    incumbent proves optimality.
    """
    problem = model.problem
    q = 10.0**problem.psi
    if not _grid_ok(problem):
        return DroopSolution(
            "infeasible",
            None,
            None,
            0.0,
            backend="bnb",
            note=f"alpha={problem.alpha:g} is not representable on the 10^{problem.psi} grid",
        )

    cvec, a_ub, b_ub, a_eq, b_eq, base_bounds = _exact_lp(problem)
    n = problem.n
    xlo0 = np.ceil((problem.x_min - 1e-9) / q) * q
    xup0 = np.floor((problem.x_upper + 1e-9) / q) * q
    if np.any(xlo0 > xup0 + 1e-12):
        return DroopSolution("infeasible", None, None, 0.0, backend="bnb")

    t_bounds = base_bounds[n:]

    def solve_node(lo, hi):
        bounds = [(float(lo[i]), float(hi[i])) for i in range(n)] + t_bounds
        res = linprog(
            cvec, A_ub=a_ub, b_ub=b_ub, A_eq=a_eq, b_eq=b_eq, bounds=bounds, method="highs"
        )
        if res.status == 2:
            return None, np.inf
        if res.status != 0:
            raise RuntimeError(f"node LP failed with status {res.status}: {res.message}")
        return res.x[:n], float(res.fun)

    best_x: np.ndarray | None = None
    best_obj = np.inf

    def offer(cand: np.ndarray | None):
        nonlocal best_x, best_obj
        if cand is None:
            return
        obj = pair_distance(cand)
        if obj < best_obj - 1e-9 or (
            abs(obj - best_obj) <= 1e-9 and best_x is not None and _lex_smaller(cand, best_x)
        ):
            best_x, best_obj = cand.copy(), obj

    # seed the incumbent from the continuous optimum
    oracle = solve_exact_oracle(problem, tie_break=False)
    if oracle.status == "infeasible":
        return DroopSolution("infeasible", None, None, 0.0, backend="bnb")
    offer(_repair_to_grid(oracle.assignment.x, problem, xlo0, xup0))

    prune_margin = q * (1.0 - 1e-6)
    stack = [(xlo0, xup0, -np.inf)]
    nodes = 0
    while stack:
        lo, hi, inherited = stack.pop()
        if best_x is not None and inherited >= best_obj - prune_margin:
            continue
        nodes += 1
        if nodes > node_limit:
            raise RuntimeError(f"branch and bound exceeded {node_limit} nodes")
        x_rel, bound = solve_node(lo, hi)
        if x_rel is None:
            continue
        if best_x is not None and bound >= best_obj - prune_margin:
            continue
        offer(_repair_to_grid(x_rel, problem, xlo0, xup0))
        if best_x is not None and bound >= best_obj - prune_margin:
            continue
        frac = np.abs(x_rel / q - np.round(x_rel / q))
        j = int(np.argmax(frac))
        if frac[j] <= 1e-6:
            snapped = np.round(x_rel / q) * q
            if _feasible_on_grid(snapped, problem, lo, hi):
                offer(snapped)
            else:
                offer(_repair_to_grid(snapped, problem, xlo0, xup0))
            continue
        floor_j = math.floor(x_rel[j] / q) * q
        lo_hi = hi.copy()
        lo_hi[j] = floor_j
        hi_lo = lo.copy()
        hi_lo[j] = floor_j + q
        down = (lo, lo_hi, bound)
        up = (hi_lo, hi, bound)
        # explore the side nearer the relaxation first
        if x_rel[j] - floor_j <= 0.5 * q:
            stack.extend([up, down])
        else:
            stack.extend([down, up])
        if best_x is not None and stack:
            glb = min(b for _, _, b in stack)
            if glb >= best_obj - prune_margin:
                break

    if best_x is None:
        return DroopSolution("infeasible", None, None, 0.0, backend="bnb")
    return DroopSolution(
        status="optimal",
        assignment=DroopAssignment(best_x),
        objective=best_obj,
        residual=exact_residual(best_x, problem),
        backend="bnb",
        note=f"nodes={nodes}",
    )


def _solve_highs(model: MilpModel, time_limit: float | None = None) -> DroopSolution:
    """Pass the digit-expansion MILP to the external HiGHS solver."""
    constraints = [
        LinearConstraint(model.a_eq, model.b_eq, model.b_eq),
        LinearConstraint(model.a_ub, -np.inf, model.b_ub),
    ]
    options = {"mip_rel_gap": 0.0}
    if time_limit is not None:
        options["time_limit"] = time_limit
    res = _highs_milp(
        c=model.c,
        constraints=constraints,
        integrality=model.integrality.astype(int),
        bounds=Bounds(model.lb, model.ub),
        options=options,
    )
    if res.status == 2:
        return DroopSolution("infeasible", None, None, 0.0, backend="highs")
    if res.status != 0 or res.x is None:
        raise RuntimeError(f"external MILP failed with status {res.status}: {res.message}")
    problem = model.problem
    q = 10.0**problem.psi
    n = problem.n
    x = np.round(res.x[:n] / q) * q
    return DroopSolution(
        status="optimal",
        assignment=DroopAssignment(x),
        objective=pair_distance(x),
        residual=exact_residual(x, problem),
        backend="highs",
    )


def solve(model: MilpModel, backend: str = "bnb", **options) -> DroopSolution:
    """Solve the MILP and re-validate the result against the exact limits.

    Returns status "precision-limited" when the solver reports an optimum
    whose exact residual exceeds what the digit precision should allow, in
    which case the caller should lower psi.
    """
    if backend == "bnb":
        sol = _solve_bnb(model, **options)
    elif backend == "highs":
        sol = _solve_highs(model, **options)
    else:
        raise ValueError(f"unknown MILP backend {backend!r} (expected 'bnb' or 'highs')")
    if sol.status != "optimal":
        return sol
    tol = 10.0 * 10.0**model.problem.psi * float(np.max(np.abs(model.problem.p_ref), initial=0.0))
    if sol.residual > max(tol, _FEAS_TOL):
        return DroopSolution(
            status="precision-limited",
            assignment=sol.assignment,
            objective=sol.objective,
            residual=sol.residual,
            backend=sol.backend,
            note=f"exact residual {sol.residual:.3e} exceeds precision tolerance {tol:.3e}",
        )
    return sol


def solve_problem(problem: DroopProblem, backend: str = "oracle", **options) -> DroopSolution:
    """One-call interface: oracle LP by default, MILP backends on request."""
    if backend == "oracle":
        return solve_exact_oracle(problem, **options)
    return solve(build_milp(problem), backend=backend, **options)
