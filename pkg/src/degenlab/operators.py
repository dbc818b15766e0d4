"""Second differences, Pucci extremal operators and the model operators F.

An operator here has the form ``F(M, x) = c(x) * Fbar(M)`` where ``Fbar``
is uniformly elliptic with constants ``lam <= Lam`` and ``c`` is an optional
coefficient describing explicit x-dependence (``None`` means ``c == 1``).
The degenerate weight is kept separate (see :class:`~degenlab.lattice.WeightSpec`)
and enters through :func:`weighted_residual`.

Discretization uses wide-stencil frames: a frame is a complete orthogonal
set of lattice directions. Pucci operators take the best frame, which makes
the scheme monotone. Directions are integer vectors with entries in
``{-1, 0, 1}`` so every interior node has a full stencil.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import StencilError
from .lattice import Field, WeightSpec, eval_weight

__all__ = [
    "EllipticityPair",
    "StencilSet",
    "PowerCoefficient",
    "FunctionCoefficient",
    "OperatorSpec",
    "second_difference",
    "directional_second_differences",
    "pucci",
    "pucci_matrix",
    "discrete_operator",
    "weighted_residual",
    "rescale_operator",
    "operator_gap",
    "default_probes",
    "oscillation_beta",
    "oscillation_decay",
    "ellipticity_sandwich",
    "positive_part_norm",
]

KINDS = ("pucci-plus", "pucci-minus", "trace", "hjb")


@dataclass(frozen=True)
class EllipticityPair:
    lam: float
    Lam: float

    def __post_init__(self):
        lam, Lam = float(self.lam), float(self.Lam)
        if not (math.isfinite(lam) and math.isfinite(Lam)) or not 0 < lam <= Lam:
            raise ValueError(f"need 0 < lambda <= Lambda < inf, got ({lam}, {Lam})")
        object.__setattr__(self, "lam", lam)
        object.__setattr__(self, "Lam", Lam)


def _as_lattice(v) -> tuple:
    v = np.asarray(v, dtype=float)
    if not np.any(v):
        raise ValueError("zero direction")
    v = v / np.max(np.abs(v))
    r = np.rint(v)
    if np.max(np.abs(v - r)) > 1e-9:
        raise ValueError(f"direction {tuple(v)} is not a nearest-neighbour lattice direction")
    return tuple(int(x) for x in r)


@dataclass(frozen=True)
class StencilSet:
    """Orthogonal frames of lattice directions.

    The first frame is always the coordinate axes, so the trace operator
    and the Pucci operators share their axis stencil.
    """

    frames: tuple

    def __post_init__(self):
        frames = tuple(tuple(_as_lattice(v) for v in fr) for fr in self.frames)
        if not frames:
            raise ValueError("empty frame set")
        d = len(frames[0][0])
        for fr in frames:
            if len(fr) != d or any(len(v) != d for v in fr):
                raise ValueError("each frame must contain d directions of length d")
            for v, w in itertools.combinations(fr, 2):
                if np.dot(v, w) != 0:
                    raise ValueError(f"frame directions {v}, {w} are not orthogonal")
        axes = tuple(tuple(int(i == j) for j in range(d)) for i in range(d))
        if frames[0] != axes:
            raise ValueError("the first frame must be the coordinate axes")
        dirs = [v for fr in frames for v in fr]
        for v, w in itertools.combinations(dirs, 2):
            if np.linalg.matrix_rank(np.array([v, w])) < 2:
                raise ValueError(f"directions {v} and {w} are parallel")
        object.__setattr__(self, "frames", frames)

    @classmethod
    def axes(cls, d) -> "StencilSet":
        return cls((tuple(tuple(int(i == j) for j in range(d)) for i in range(d)),))

    @classmethod
    def wide(cls, d) -> "StencilSet":
        """Axis frame plus, in 2D, the 45-degree frame."""
        if d != 2:
            return cls.axes(d)
        return cls((((1, 0), (0, 1)), ((1, 1), (1, -1))))

    @property
    def d(self) -> int:
        return len(self.frames[0])

    @property
    def directions(self) -> tuple:
        return tuple(v for fr in self.frames for v in fr)

    def frame_slices(self):
        start = 0
        for fr in self.frames:
            yield slice(start, start + len(fr))
            start += len(fr)


def _step2(v, spacing) -> float:
    return float(sum((vi * hi) ** 2 for vi, hi in zip(v, spacing)))


def second_difference(u: Field, node, e, h=None) -> float:
    """Centred second difference of ``u`` at ``node`` along direction ``e``.

    ``e`` may be a lattice vector such as ``(1, 1)`` or the matching unit
    vector. The result approximates the second derivative along the unit
    vector, ``(u(x + v) - 2 u(x) + u(x - v)) / |v|**2`` with ``v`` the
    lattice step. ``h`` overrides the grid spacing.
    """
    g = u.grid
    v = _as_lattice(e)
    if len(v) != g.d:
        raise ValueError("direction has the wrong dimension")
    node = tuple(int(i) for i in np.atleast_1d(node))
    plus = tuple(i + vi for i, vi in zip(node, v))
    minus = tuple(i - vi for i, vi in zip(node, v))
    for idx in (node, plus, minus):
        if any(i < 0 or i >= g.n for i in idx):
            raise StencilError(f"stencil at node {node} along {v} leaves the grid")
    spacing = g.spacing if h is None else (float(h),) * g.d
    U = u.values
    return float((U[plus] - 2.0 * U[node] + U[minus]) / _step2(v, spacing))


def _interior_shift(a, v):
    return a[tuple(slice(1 + vi, a.shape[i] - 1 + vi) for i, vi in enumerate(v))]


def directional_second_differences(values, stencils: StencilSet, spacing) -> np.ndarray:
    """Second differences along every stencil direction at interior nodes.

    Returns an array of shape ``(n_directions,) + interior_shape``.
    """
    values = np.asarray(values, dtype=float)
    centre = 2.0 * _interior_shift(values, (0,) * values.ndim)
    out = []
    for v in stencils.directions:
        neg = tuple(-x for x in v)
        out.append((_interior_shift(values, v) - centre + _interior_shift(values, neg))
                   / _step2(v, spacing))
    return np.stack(out)


def pucci(values, ell: EllipticityPair, side: str = "plus"):
    """Discrete Pucci operator from second differences grouped by frame.

    ``values`` has shape ``(n_frames, frame_size, ...)``. The plus side is
    the maximum over frames of ``sum(Lam * max(v, 0) - lam * max(-v, 0))``;
    the minus side is the minimum over frames of
    ``sum(lam * max(v, 0) - Lam * max(-v, 0))``. Ties between frames go to
    the first one.

    >>> pucci([[1.0, -1.0]], EllipticityPair(1, 2), "plus")
    1.0
    """
    v = np.asarray(values, dtype=float)
    if v.ndim < 2 or v.shape[0] == 0 or v.shape[1] == 0:
        raise ValueError("pucci needs a nonempty frame set of shape (frames, dirs, ...)")
    pos = np.maximum(v, 0.0)
    neg = np.maximum(-v, 0.0)
    if side == "plus":
        out = (ell.Lam * pos - ell.lam * neg).sum(axis=1).max(axis=0)
    elif side == "minus":
        out = (ell.lam * pos - ell.Lam * neg).sum(axis=1).min(axis=0)
    else:
        raise ValueError(f"side must be 'plus' or 'minus', got {side!r}")
    return out[()] if np.ndim(out) == 0 else out


def pucci_matrix(M, ell: EllipticityPair, side: str = "plus"):
    """Continuous Pucci operator of symmetric matrices ``(..., d, d)``."""
    eig = np.linalg.eigvalsh(np.asarray(M, dtype=float))
    return pucci(np.moveaxis(eig, -1, 0)[None], ell, side)


def positive_part_norm(N):
    """Sum of the positive eigenvalues, the norm used for ellipticity checks."""
    eig = np.linalg.eigvalsh(np.asarray(N, dtype=float))
    return np.maximum(eig, 0.0).sum(axis=-1)


@dataclass(frozen=True)
class PowerCoefficient:
    """``c(x) = sum_k coef_k * |x_d|**p_k`` for terms ``((coef, p), ...)``."""

    terms: tuple

    def __post_init__(self):
        object.__setattr__(self, "terms",
                           tuple((float(k), float(p)) for k, p in self.terms))

    def __call__(self, x):
        xd = np.abs(np.asarray(x, dtype=float)[..., -1])
        out = np.zeros_like(xd)
        for k, p in self.terms:
            out = out + k * xd ** p
        return out

    def rescale(self, mu, a) -> "PowerCoefficient":
        return PowerCoefficient(tuple((k * mu ** (p - a), p) for k, p in self.terms))


@dataclass(frozen=True)
class FunctionCoefficient:
    """Arbitrary coefficient ``c(x)``; ``fn`` maps ``(..., d)`` points to values."""

    fn: Callable

    def __call__(self, x):
        return np.asarray(self.fn(np.asarray(x, dtype=float)), dtype=float)

    def rescale(self, mu, a) -> "FunctionCoefficient":
        fn = self.fn
        return FunctionCoefficient(lambda x: mu ** (-a) * fn(mu * np.asarray(x, float)))


def _decompose(A, stencils: StencilSet) -> np.ndarray:
    """Nonnegative weights c with ``A = sum_e c_e w_e w_e^T`` over stencil directions."""
    d = stencils.d
    dirs = stencils.directions
    c = np.zeros(len(dirs))
    if d == 1:
        c[0] = A[0, 0]
        return c
    off = A - np.diag(np.diag(A))
    if d == 2 and np.any(off):
        try:
            ip = dirs.index((1, 1))
            im = dirs.index((1, -1))
        except ValueError:
            raise ValueError("off-diagonal coefficients need the 45-degree frame") from None
        a12 = A[0, 1]
        c[ip] = 2.0 * max(a12, 0.0)
        c[im] = 2.0 * max(-a12, 0.0)
        c[0] = A[0, 0] - abs(a12)
        c[1] = A[1, 1] - abs(a12)
    elif np.any(off):
        raise ValueError("off-diagonal coefficients are only supported in 2D")
    else:
        c[:d] = np.diag(A)
    if np.any(c < -1e-12):
        raise ValueError("coefficient matrix is not diagonally dominant; "
                         "no monotone representation on this stencil")
    return np.maximum(c, 0.0)


@dataclass(frozen=True, eq=False)
class OperatorSpec:
    """Operator ``F(M, x) = c(x) * Fbar(M)``.

    kind
        ``pucci-plus`` and ``pucci-minus`` are the extremal operators,
        ``trace`` is ``lam * tr M`` (requires ``lam == Lam``) and ``hjb`` is
        ``max_j tr(A_j M)`` over the given coefficient matrices.
    """

    kind: str
    ell: EllipticityPair
    matrices: tuple = ()
    coefficient: Optional[object] = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown operator kind {self.kind!r}; expected one of {KINDS}")
        if self.kind == "trace" and self.ell.lam != self.ell.Lam:
            raise ValueError("trace kind requires lambda == Lambda")
        mats = tuple(np.array(A, dtype=float) for A in self.matrices)
        if self.kind == "hjb":
            if not mats:
                raise ValueError("hjb kind needs at least one coefficient matrix")
            d = mats[0].shape[0]
            for A in mats:
                if A.shape != (d, d) or not np.allclose(A, A.T, atol=1e-14):
                    raise ValueError("coefficient matrices must be square and symmetric")
                eig = np.linalg.eigvalsh(A)
                tol = 1e-12 * self.ell.Lam
                if eig[0] < self.ell.lam - tol or eig[-1] > self.ell.Lam + tol:
                    raise ValueError(
                        f"coefficient eigenvalues {eig} outside [{self.ell.lam}, {self.ell.Lam}]")
                A.flags.writeable = False
        elif mats:
            raise ValueError(f"{self.kind} takes no coefficient matrices")
        object.__setattr__(self, "matrices", mats)

    @classmethod
    def trace(cls, c=1.0, coefficient=None):
        return cls("trace", EllipticityPair(c, c), coefficient=coefficient)

    def fbar(self, M):
        """Uniformly elliptic part evaluated on matrices ``(..., d, d)``."""
        M = np.asarray(M, dtype=float)
        if self.kind == "pucci-plus":
            return pucci_matrix(M, self.ell, "plus")
        if self.kind == "pucci-minus":
            return pucci_matrix(M, self.ell, "minus")
        if self.kind == "trace":
            return self.ell.lam * np.trace(M, axis1=-2, axis2=-1)
        vals = np.stack([np.einsum("ij,...ij->...", A, M) for A in self.matrices])
        return vals.max(axis=0)

    def coef(self, x):
        x = np.asarray(x, dtype=float)
        if self.coefficient is None:
            return np.ones(x.shape[:-1]) if x.ndim > 1 else np.float64(1.0)
        return self.coefficient(x)

    def F(self, M, x):
        """Full operator ``c(x) * Fbar(M)``; broadcasts over leading axes."""
        return self.coef(x) * self.fbar(M)


def discrete_operator(op: OperatorSpec, values, stencils: StencilSet, spacing):
    """Evaluate ``Fbar_h`` at interior nodes and the maximizing policy.

    Returns ``(value, coeffs)`` where ``coeffs`` has shape
    ``(n_directions,) + interior_shape`` and ``value == sum(coeffs * d2u)``:
    the linear operator selected at each node. Ties in the frame or matrix
    selection go to the first candidate.
    """
    d2 = directional_second_differences(values, stencils, spacing)
    lam, Lam = op.ell.lam, op.ell.Lam
    coeffs = np.zeros_like(d2)
    if op.kind == "trace":
        d = stencils.d
        coeffs[:d] = lam
        return lam * d2[:d].sum(axis=0), coeffs
    if op.kind in ("pucci-plus", "pucci-minus"):
        plus = op.kind == "pucci-plus"
        if plus:
            c = np.where(d2 >= 0.0, Lam, lam)
        else:
            c = np.where(d2 >= 0.0, lam, Lam)
        terms = c * d2
        frame_vals = np.stack([terms[s].sum(axis=0) for s in stencils.frame_slices()])
        best = frame_vals.argmax(axis=0) if plus else frame_vals.argmin(axis=0)
        value = np.take_along_axis(frame_vals, best[None], axis=0)[0]
        for k, s in enumerate(stencils.frame_slices()):
            coeffs[s] = np.where(best == k, c[s], 0.0)
        return value, coeffs
    C = np.stack([_decompose(A, stencils) for A in op.matrices])  # (J, n_dirs)
    vals = np.tensordot(C, d2, axes=(1, 0))
    best = vals.argmax(axis=0)
    value = np.take_along_axis(vals, best[None], axis=0)[0]
    coeffs = np.moveaxis(C[best], -1, 0)
    return value, coeffs


def weighted_residual(op: OperatorSpec, w: WeightSpec, u: Field, f: Field,
                      s: Optional[StencilSet] = None, g: Optional[Field] = None) -> Field:
    """Nodewise residual ``omega(x) * c(x) * Fbar_h(u)(x) - f(x)``.

    Interior nodes carry the scheme residual. Boundary nodes carry ``u - g``
    when boundary data ``g`` is given and are left unset (NaN) otherwise.
    """
    if u.grid != f.grid or (g is not None and g.grid != u.grid):
        raise ValueError("u, f (and g) must live on the same grid")
    grid = u.grid
    s = StencilSet.axes(grid.d) if s is None else s
    if s.d != grid.d:
        raise ValueError("stencil dimension does not match the grid")
    Fh, _ = discrete_operator(op, u.values, s, grid.spacing)
    pts = np.stack(grid.coords, axis=-1)
    core = (slice(1, -1),) * grid.d
    omega = eval_weight(w, pts[core]) * op.coef(pts[core])
    out = np.full(grid.shape, np.nan)
    out[core] = omega * Fh - f.values[core]
    if g is not None:
        b = grid.boundary_mask
        out[b] = u.values[b] - g.values[b]
    return Field(grid, out)


def rescale_operator(op: OperatorSpec, w: WeightSpec, mu: float) -> OperatorSpec:
    """Zoomed operator ``(M, x) -> mu**(-a) * F(M, mu * x)``.

    >>> op = OperatorSpec.trace(coefficient=PowerCoefficient([(1, 0.5), (1, 1)]))
    >>> rescale_operator(op, WeightSpec(a=0.5), 0.01).coefficient.terms
    ((1.0, 0.5), (0.1, 1.0))
    """
    if not (mu > 0):
        raise ValueError(f"rescaling factor must be positive, got {mu}")
    coef = op.coefficient
    if coef is None:
        new = PowerCoefficient(((mu ** (-w.a), 0.0),))
    elif hasattr(coef, "rescale"):
        new = coef.rescale(mu, w.a)
    else:
        raise ValueError("coefficient does not support rescaling")
    return OperatorSpec(op.kind, op.ell, op.matrices, new)


def operator_gap(op1: OperatorSpec, op2: OperatorSpec, points, probes) -> float:
    """``max |F1(M, x) - F2(M, x)|`` over sample points and probe matrices."""
    pts = np.asarray(points, dtype=float)
    worst = 0.0
    for M in probes:
        diff = np.abs(op1.F(M, pts) - op2.F(M, pts))
        worst = max(worst, float(np.max(diff)))
    return worst


def default_probes(d, n_random=8, seed=0) -> list:
    """Probe matrices for the finite sup over symmetric matrices.

    ``I``, ``-I``, every ``e_i e_i^T``, every ``e_i e_j^T + e_j e_i^T`` and
    ``n_random`` seeded rank-one matrices ``+-v v^T`` with unit ``v``.
    """
    I = np.eye(d)
    probes = [I, -I]
    for i in range(d):
        probes.append(np.outer(I[i], I[i]))
    for i, j in itertools.combinations(range(d), 2):
        probes.append(np.outer(I[i], I[j]) + np.outer(I[j], I[i]))
    rng = np.random.default_rng(seed)
    for k in range(n_random):
        v = rng.normal(size=d)
        v /= np.linalg.norm(v)
        probes.append((1 if k % 2 == 0 else -1) * np.outer(v, v))
    return probes


def oscillation_beta(op: OperatorSpec, x0, x, probes=None):
    """Finite-probe lower bound for the oscillation of ``F`` at ``x0``.

    Returns ``max_M |F(M, x) - F(M, x0)| / |M|`` over the probe set, with
    ``|M|`` the Frobenius norm. ``x`` may be a single point or an array of
    points ``(..., d)``.
    """
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    x = np.asarray(x, dtype=float)
    if x.ndim == 0:
        x = x[None]
    probes = default_probes(x0.size) if probes is None else list(probes)
    if not probes:
        raise ValueError("empty probe set")
    best = np.zeros(x.shape[:-1])
    for M in probes:
        M = np.asarray(M, dtype=float)
        nrm = np.linalg.norm(M)
        if nrm == 0:
            raise ValueError("probe matrices must be nonzero")
        r = np.abs(op.F(M, x) - op.F(M, x0)) / nrm
        best = np.maximum(best, r)
    return float(best) if best.ndim == 0 else best


@dataclass(frozen=True)
class DecayReport:
    radii: np.ndarray
    values: np.ndarray
    slope: float
    threshold: float

    @property
    def normalized(self) -> np.ndarray:
        """``values / r**threshold``; tends to 0 iff the decay is o(r^threshold)."""
        return self.values / self.radii ** self.threshold


def oscillation_decay(op: OperatorSpec, x0, radii, threshold, probes=None, m=128) -> DecayReport:
    """Quadrature of ``r**-1 * (int_{B_r(x0)} beta**d)**(1/d)`` over radii.

    The integral uses the midpoint rule on an ``m**d`` cell-centred grid of
    the cube around the ball, restricted to the ball. The log-log slope of
    the values is compared with ``threshold`` (the weight exponent ``a``).
    """
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    d = x0.size
    probes = default_probes(d) if probes is None else probes
    radii = np.asarray(radii, dtype=float)
    vals = []
    for r in radii:
        t = -r + (np.arange(m) + 0.5) * (2 * r / m)
        pts = np.stack(np.meshgrid(*([t] * d), indexing="ij"), axis=-1)
        inside = np.sum(pts ** 2, axis=-1) <= r * r
        beta = oscillation_beta(op, x0, pts[inside] + x0, probes)
        integral = np.sum(beta ** d) * (2 * r / m) ** d
        vals.append(integral ** (1.0 / d) / r)
    vals = np.asarray(vals)
    slope = float(np.polyfit(np.log(radii), np.log(vals), 1)[0])
    return DecayReport(radii, vals, slope, float(threshold))


@dataclass(frozen=True)
class SandwichReport:
    lower_margin: float
    upper_margin: float
    n_pairs: int

    @property
    def ok(self) -> bool:
        return self.lower_margin >= 0 and self.upper_margin >= 0


def ellipticity_sandwich(op: OperatorSpec, w: WeightSpec, x, n_pairs=64, seed=0,
                         tol=1e-12) -> SandwichReport:
    """Check ``lam w |N| <= w (F(M+N) - F(M)) <= Lam w |N|`` on random pairs.

    ``M`` is a random symmetric matrix and ``N`` a random positive
    semidefinite one; ``|N|`` is the sum of positive eigenvalues. Margins
    are the worst slacks, relative to ``1 + w |N|``; both are nonnegative
    (up to ``tol``) when the inequality holds.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    d = x.size
    rng = np.random.default_rng(seed)
    om = float(eval_weight(w, x))
    lo = hi = np.inf
    for _ in range(n_pairs):
        A = rng.normal(size=(d, d))
        M = A + A.T
        B = rng.normal(size=(d, d)) * rng.uniform(0, 2)
        N = B @ B.T
        dF = om * float(op.F(M + N, x) - op.F(M, x))
        nN = om * float(positive_part_norm(N))
        scale = 1.0 + nN
        lo = min(lo, (dF - op.ell.lam * nN) / scale + tol)
        hi = min(hi, (op.ell.Lam * nN - dF) / scale + tol)
    return SandwichReport(float(lo), float(hi), n_pairs)
