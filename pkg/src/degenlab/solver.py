"""Dirichlet solver for the weighted monotone scheme and related checks.

The discrete problem at interior nodes is ``omega_eps(x) * c(x) * Fbar_h(u)(x) = f(x)``
with ``u = g`` on the boundary nodes. ``Fbar_h`` is a maximum (or minimum)
of linear monotone operators, so two solvers are offered:

``howard``
    Policy iteration: freeze the maximizing linear operator, solve the
    sparse linear system, repeat until the residual is below tolerance.
    Exact in one step for the trace kind.
``relax``
    Damped red-black relaxation ``u <- u + tau * r / D`` with ``D`` the
    largest possible diagonal of the weighted operator at the node. Slow
    but needs no linear algebra; useful as an independent check.

The regularization ladder solves a decreasing sequence of ``eps`` values and
is the working definition of the selected (L^p viscosity) solution.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import InconsistentRowError, PreconditionError
from .lattice import Field, Grid, WeightSpec, eval_weight, hat_weight
from .operators import (EllipticityPair, OperatorSpec, StencilSet,
                        discrete_operator, _interior_shift, _step2)

__all__ = [
    "DirichletProblem",
    "SolveReport",
    "LadderLevel",
    "solve_dirichlet",
    "regularization_ladder",
    "MembershipReport",
    "extremal_membership",
    "NonuniquenessReport",
    "nonuniqueness_demo",
    "default_tol",
]

LADDER_TOL = 1e-3


def default_tol(f: Field) -> float:
    return 1e-8 * (1.0 + f.max_abs(~f.boundary))


@dataclass(frozen=True, eq=False)
class DirichletProblem:
    """Weighted Dirichlet problem on a grid.

    ``g`` is a field whose boundary nodes give the Dirichlet data; its
    interior values, if any, are only used as a cold-start guess.

    ``weight_rule`` selects how the weight enters each row. ``"node"`` uses
    ``omega(x)``. ``"hat"`` (default) uses :func:`~degenlab.lattice.hat_weight`,
    the weight averaged against the second-difference hat along ``x_d``,
    which removes the ``O(h**(1-a))`` quadrature error of ``f / omega`` near
    the interface. When that average is infinite (``eps == 0``, ``a >= 1``)
    the node value is used.
    """

    grid: Grid
    op: OperatorSpec
    weight: WeightSpec
    f: Field
    g: Field
    stencils: Optional[StencilSet] = None
    tau: float = 1.0
    max_iters: int = 100_000
    tol: Optional[float] = None
    method: str = "howard"
    weight_rule: str = "hat"

    def __post_init__(self):
        if self.f.grid != self.grid or self.g.grid != self.grid:
            raise ValueError("f and g must live on the problem grid")
        if not self.tau > 0:
            raise ValueError("damping tau must be positive")
        if self.tol is not None and not self.tol > 0:
            raise ValueError("tolerance must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")
        if self.method not in ("howard", "relax"):
            raise ValueError(f"unknown method {self.method!r}")
        if self.weight_rule not in ("hat", "node"):
            raise ValueError(f"unknown weight rule {self.weight_rule!r}")
        b = self.grid.boundary_mask
        if not np.all(np.isfinite(self.g.values[b])):
            raise ValueError("boundary data must be finite on every boundary node")
        s = StencilSet.axes(self.grid.d) if self.stencils is None else self.stencils
        if s.d != self.grid.d:
            raise ValueError("stencil dimension does not match the grid")
        if len(s.frames) > 1:
            self.grid.h  # diagonal directions need uniform spacing
        object.__setattr__(self, "stencils", s)
        if self.tol is None:
            object.__setattr__(self, "tol", default_tol(self.f))

    def with_weight(self, weight: WeightSpec) -> "DirichletProblem":
        return replace(self, weight=weight)


@dataclass(frozen=True)
class LadderLevel:
    eps: float
    iterations: int
    residual: float
    converged: bool
    difference: float  # max-norm change from the previous level (or start)


@dataclass(frozen=True, eq=False)
class SolveReport:
    solution: Field
    iterations: int
    residual: float
    converged: bool
    tol: float
    method: str = "howard"
    history: tuple = ()
    ladder_converged: Optional[bool] = None

    @property
    def differences(self) -> list:
        """Max-norm differences between successive ladder levels."""
        return [lv.difference for lv in self.history[1:]]

    def to_dict(self) -> dict:
        out = {
            "iterations": int(self.iterations),
            "residual": float(self.residual),
            "converged": bool(self.converged),
            "tol": float(self.tol),
            "method": self.method,
        }
        if self.history:
            out["levels"] = [
                {"eps": lv.eps, "iterations": lv.iterations, "residual": lv.residual,
                 "converged": lv.converged, "difference": lv.difference}
                for lv in self.history]
            out["ladder_converged"] = self.ladder_converged
        return out


def _row_weights(p: DirichletProblem):
    g = p.grid
    core = (slice(1, -1),) * g.d
    pts = np.stack(g.coords, axis=-1)[core]
    coef = p.op.coef(pts)
    omega = eval_weight(p.weight, pts) * coef
    f = p.f.values[core]
    zero = omega == 0
    if np.any(zero & (f != 0)):
        idx = tuple(int(i) + 1 for i in np.argwhere(zero & (f != 0))[0])
        raise InconsistentRowError(
            f"weight vanishes at interior node {idx} where f = {p.f.values[idx]}")
    if np.any(zero):
        idx = tuple(int(i) + 1 for i in np.argwhere(zero)[0])
        raise PreconditionError(
            f"weight vanishes at interior node {idx}; use eps > 0 or an offset grid")
    w = p.weight
    if p.weight_rule == "hat" and (w.eps > 0 or w.a < 1):
        omega = hat_weight(w, pts, g.spacing[-1]) * coef
    return omega, f


def _initial_guess(p: DirichletProblem, u0):
    if u0 is not None:
        if u0.grid != p.grid:
            raise ValueError("initial guess lives on a different grid")
        U = np.array(u0.values, dtype=float)
    else:
        U = np.array(p.g.values, dtype=float)
        bad = ~np.isfinite(U)
        U[bad] = 0.0
    b = p.grid.boundary_mask
    U[b] = p.g.values[b]
    U[~np.isfinite(U)] = 0.0
    return U


class _Assembler:
    """Sparse assembly of the linear operator selected by a policy."""

    def __init__(self, grid: Grid, stencils: StencilSet):
        shape = grid.shape
        self.m_shape = tuple(n - 2 for n in shape)
        full = np.arange(grid.size).reshape(shape)
        to_int = -np.ones(grid.size, dtype=np.int64)
        core = (slice(1, -1),) * grid.d
        to_int[full[core].ravel()] = np.arange(int(np.prod(self.m_shape)))
        self.rows = np.arange(int(np.prod(self.m_shape)))
        self.h2 = [_step2(v, grid.spacing) for v in stencils.directions]
        self.nbrs = []
        for v in stencils.directions:
            pair = []
            for sgn in (1, -1):
                nb = _interior_shift(full, tuple(sgn * x for x in v)).ravel()
                pair.append((nb, to_int[nb]))
            self.nbrs.append(pair)

    def build(self, coeffs, Uflat):
        m = self.rows.size
        diag = np.zeros(m)
        rhs = np.zeros(m)
        rows, cols, data = [], [], []
        for k, pair in enumerate(self.nbrs):
            c = coeffs[k].ravel() / self.h2[k]
            if not np.any(c):
                continue
            diag -= 2.0 * c
            for nb_full, nb_int in pair:
                inside = nb_int >= 0
                rows.append(self.rows[inside])
                cols.append(nb_int[inside])
                data.append(c[inside])
                rhs[~inside] -= c[~inside] * Uflat[nb_full[~inside]]
        rows.append(self.rows)
        cols.append(self.rows)
        data.append(diag)
        A = sp.csc_matrix((np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))),
                          shape=(m, m))
        return A, rhs


def _solve_howard(p, U, omega, f):
    grid, s = p.grid, p.stencils
    core = (slice(1, -1),) * grid.d
    asm = _Assembler(grid, s)
    target = f / omega
    prev_coeffs = None
    it = 0
    while True:
        value, coeffs = discrete_operator(p.op, U, s, grid.spacing)
        res = float(np.max(np.abs(omega * value - f))) if value.size else 0.0
        if res <= p.tol or it >= p.max_iters:
            break
        if prev_coeffs is not None and np.array_equal(coeffs, prev_coeffs):
            break  # policy fixed point; residual is at round-off level
        A, rhs = asm.build(coeffs, U.ravel())
        U[core] = spla.spsolve(A, target.ravel() + rhs).reshape(asm.m_shape)
        prev_coeffs = coeffs
        it += 1
    return U, it, res


def _max_diagonal(p: DirichletProblem) -> float:
    s, spacing = p.stencils, p.grid.spacing
    inv = np.array([2.0 / _step2(v, spacing) for v in s.directions])
    if p.op.kind == "trace":
        return p.op.ell.lam * inv[: s.d].sum()
    if p.op.kind == "hjb":
        from .operators import _decompose
        return max(float(_decompose(A, s) @ inv) for A in p.op.matrices)
    return p.op.ell.Lam * max(inv[sl].sum() for sl in s.frame_slices())


def _solve_relax(p, U, omega, f):
    grid, s = p.grid, p.stencils
    core = (slice(1, -1),) * grid.d
    D = omega * _max_diagonal(p)
    parity = sum(np.indices(tuple(n - 2 for n in grid.shape))) % 2
    colors = [parity == 0, parity == 1]
    it = 0
    res = np.inf
    while it < p.max_iters:
        for color in colors:
            value, _ = discrete_operator(p.op, U, s, grid.spacing)
            r = omega * value - f
            inner = U[core]
            inner[color] += p.tau * r[color] / D[color]
            U[core] = inner
        it += 1
        value, _ = discrete_operator(p.op, U, s, grid.spacing)
        res = float(np.max(np.abs(omega * value - f)))
        if res <= p.tol:
            break
    return U, it, res


def solve_dirichlet(p: DirichletProblem, u0: Optional[Field] = None) -> SolveReport:
    """Solve the weighted Dirichlet problem.

    Parameters
    ----------
    p : DirichletProblem
        Requires ``omega > 0`` at every interior node: ``eps > 0`` or an
        offset grid that keeps nodes off the interface.
    u0 : Field, optional
        Initial guess (warm start). Boundary values are overwritten by ``g``.

    Returns
    -------
    SolveReport
        ``converged`` is True iff the max-norm scheme residual is at most
        ``p.tol``. Running out of iterations is reported, not raised.

    Raises
    ------
    InconsistentRowError
        The weight vanishes at an interior node where ``f != 0``.
    PreconditionError
        The weight vanishes at an interior node (the row carries no equation).
    """
    omega, f = _row_weights(p)
    U = _initial_guess(p, u0)
    if p.method == "howard":
        U, it, res = _solve_howard(p, U, omega, f)
    else:
        U, it, res = _solve_relax(p, U, omega, f)
    return SolveReport(Field(p.grid, U), it, res, res <= p.tol, p.tol, p.method)


def _check_schedule(eps_schedule, grid: Grid):
    eps = [float(e) for e in eps_schedule]
    if not eps:
        raise ValueError("empty eps schedule")
    if any(e < 0 for e in eps) or any(e == 0 for e in eps[:-1]):
        raise ValueError("eps schedule must be positive (a final 0 is allowed)")
    if any(b >= a for a, b in zip(eps, eps[1:])):
        raise ValueError("eps schedule must be strictly decreasing")
    if eps[-1] == 0 and not grid.offset:
        raise ValueError("a final eps = 0 level needs an offset grid")
    return eps


def regularization_ladder(p: DirichletProblem, eps_schedule: Sequence[float],
                          ladder_tol: float = LADDER_TOL, warm_start: bool = True,
                          u0: Optional[Field] = None,
                          resolution: Optional[float] = None) -> SolveReport:
    """Solve along a decreasing regularization schedule.

    Each level replaces the weight's ``eps`` and, with ``warm_start``,
    starts from the previous level's solution. Level ``k`` records the
    max-norm difference to level ``k - 1`` (level 0: to the initial guess).

    The ladder is declared converged when the successive differences
    decrease and the last one is at most ``ladder_tol``. Differences at or
    below ``resolution`` (default ``1e-12 * (1 + max|u|)``) mean the levels
    agree to round-off and count as decreasing.

    A nonconverged level stops the ladder; the report then carries the
    partial history and ``converged=False``.
    """
    eps = _check_schedule(eps_schedule, p.grid)
    U_prev = _initial_guess(p, u0)
    start = Field(p.grid, U_prev)
    history = []
    report = None
    total = 0
    for e in eps:
        pk = p.with_weight(p.weight.with_eps(e))
        rep = solve_dirichlet(pk, start if (warm_start or report is None) else
                              (u0 if u0 is not None else None))
        U = rep.solution.values
        diff = float(np.max(np.abs(U - U_prev)))
        history.append(LadderLevel(e, rep.iterations, rep.residual, rep.converged, diff))
        total += rep.iterations
        report = rep
        if not rep.converged:
            return SolveReport(rep.solution, total, rep.residual, False, rep.tol,
                               p.method, tuple(history), False)
        U_prev = U
        start = rep.solution
    floor = resolution
    if floor is None:
        floor = 1e-12 * (1.0 + float(np.max(np.abs(report.solution.values))))
    diffs = [lv.difference for lv in history[1:]]
    decreasing = all(b < a or b <= floor for a, b in zip(diffs, diffs[1:]))
    last_ok = (diffs[-1] if diffs else 0.0) <= ladder_tol
    return SolveReport(report.solution, total, report.residual, True, report.tol,
                       p.method, tuple(history), bool(decreasing and last_ok))


@dataclass(frozen=True)
class MembershipReport:
    side: str
    violations: tuple  # ((node index, margin), ...)

    @property
    def holds(self) -> bool:
        return not self.violations


def extremal_membership(u: Field, f: Field, w: WeightSpec, ell: EllipticityPair,
                        s: Optional[StencilSet] = None, side: str = "upper",
                        tol: Optional[float] = None) -> MembershipReport:
    """Nodewise check of the weighted extremal inequalities.

    ``side="upper"`` tests ``omega * M^-_h(u) <= f`` (the class S-bar),
    ``side="lower"`` tests ``omega * M^+_h(u) >= f`` (S-underbar). A node
    violates when the inequality fails by more than ``tol`` (default
    ``1e-8 * (1 + max|f|)``); the margin is the amount of failure.
    """
    if u.grid != f.grid:
        raise ValueError("u and f must live on the same grid")
    grid = u.grid
    s = StencilSet.axes(grid.d) if s is None else s
    tol = 1e-8 * (1.0 + f.max_abs()) if tol is None else tol
    core = (slice(1, -1),) * grid.d
    omega = eval_weight(w, np.stack(grid.coords, axis=-1)[core])
    if side == "upper":
        val, _ = discrete_operator(OperatorSpec("pucci-minus", ell), u.values, s, grid.spacing)
        margin = omega * val - f.values[core]
    elif side == "lower":
        val, _ = discrete_operator(OperatorSpec("pucci-plus", ell), u.values, s, grid.spacing)
        margin = f.values[core] - omega * val
    else:
        raise ValueError(f"side must be 'upper' or 'lower', got {side!r}")
    bad = np.argwhere(margin > tol)
    viol = tuple((tuple(int(i) + 1 for i in idx), float(margin[tuple(idx)])) for idx in bad)
    return MembershipReport(side, viol)


@dataclass(frozen=True, eq=False)
class NonuniquenessReport:
    t: np.ndarray                 # interior node coordinates
    node_residual: np.ndarray     # omega(t) * d2u, eps = 0
    regularized_residual: np.ndarray
    zero_index: int               # position of t = 0 within ``t``
    eps: float
    predicted_at_zero: float      # eps**a * (slope_plus + slope_minus) / h

    @property
    def node_max(self) -> float:
        return float(np.max(np.abs(self.node_residual)))

    @property
    def regularized_at_zero(self) -> float:
        return float(self.regularized_residual[self.zero_index])


def nonuniqueness_demo(a: float, slope_plus: float, slope_minus: float,
                       grid: Optional[Grid] = None, eps: float = 0.1,
                       n: int = 257) -> NonuniquenessReport:
    """Residuals of the kink ``slope_plus * t_+ + slope_minus * t_-``.

    Under the node-weight scheme (``omega(t) = |t|**a``, weight evaluated at
    the node) the kink has zero residual everywhere: off the origin its
    second difference vanishes and at the origin the weight does. The
    regularized weight ``(t**2 + eps**2)**(a/2)`` keeps a residual of
    ``eps**a * (slope_plus + slope_minus) / h`` at the origin.
    """
    if not 0 < a < 1:
        raise ValueError("the kink example needs 0 < a < 1")
    if grid is None:
        from .lattice import build_grid
        grid = build_grid(1, (-1.0, 1.0), n)
    if grid.d != 1:
        raise ValueError("the kink example is one-dimensional")
    t_all = grid.axes[0]
    hits = np.flatnonzero(np.abs(t_all) <= 1e-14 * max(1.0, np.max(np.abs(t_all))))
    if hits.size == 0 or grid.offset:
        raise ValueError("grid must contain the node t = 0 (disable the offset)")
    i0 = int(hits[0])
    if i0 == 0 or i0 == grid.n - 1:
        raise ValueError("t = 0 must be an interior node")
    u = slope_plus * np.maximum(t_all, 0.0) + slope_minus * np.maximum(-t_all, 0.0)
    h = grid.h
    d2 = (u[2:] - 2.0 * u[1:-1] + u[:-2]) / (h * h)
    t = t_all[1:-1].copy()
    node = np.abs(t) ** a * d2
    node[i0 - 1] = 0.0 * d2[i0 - 1] if t[i0 - 1] == 0 else node[i0 - 1]
    reg = (t * t + eps * eps) ** (0.5 * a) * d2
    pred = eps ** a * (slope_plus + slope_minus) / h
    return NonuniquenessReport(t, node, reg, i0 - 1, float(eps), float(pred))
