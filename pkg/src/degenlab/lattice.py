"""Cartesian grids, the degenerate weight, and nodal fields.

The weight is ``omega(x) = ((x_d - psi(x'))**2 + eps**2)**(a/2)`` where the
interface is the graph ``x_d = psi(x')`` of a polynomial of degree at most 4.
With ``eps = 0`` this is ``|x_d - psi(x')|**a``, vanishing exactly on the
interface.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field, replace
from functools import cached_property
from pathlib import Path
from typing import Callable, Union

import numpy as np
from scipy import special

from ._expr import compile_expression
from .errors import SamplingError

__all__ = [
    "Grid",
    "WeightSpec",
    "Field",
    "build_grid",
    "eval_weight",
    "hat_weight",
    "sample_field",
    "write_field_csv",
    "read_field_csv",
]

MAX_PSI_DEGREE = 4


def _readonly(a):
    a = np.asarray(a)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class Grid:
    """Uniform Cartesian grid on an axis-aligned box.

    Without offset the nodes include the box corners and the spacing along
    an axis of length ``L`` is ``L / (n - 1)``. With ``offset=True`` the
    nodes are cell centres, spacing ``L / n``, so that on the flat interface
    ``x_d = 0`` of a symmetric box no node lies on it (the closest nodes
    sit at ``|x_d| = h/2``).
    """

    d: int
    bounds: tuple
    n: int
    offset: bool = False

    def __post_init__(self):
        if self.d not in (1, 2, 3):
            raise ValueError(f"dimension must be 1, 2 or 3, got {self.d}")
        if int(self.n) != self.n or self.n < 3:
            raise ValueError(f"need at least 3 points per axis, got n={self.n}")
        bounds = tuple((float(lo), float(hi)) for lo, hi in self.bounds)
        if len(bounds) != self.d:
            raise ValueError(f"expected {self.d} bound pairs, got {len(bounds)}")
        for lo, hi in bounds:
            if not (math.isfinite(lo) and math.isfinite(hi)) or not hi > lo:
                raise ValueError(f"degenerate or inverted bounds ({lo}, {hi})")
        object.__setattr__(self, "bounds", bounds)
        object.__setattr__(self, "n", int(self.n))
        object.__setattr__(self, "offset", bool(self.offset))

    @cached_property
    def spacing(self) -> tuple:
        m = self.n if self.offset else self.n - 1
        return tuple((hi - lo) / m for lo, hi in self.bounds)

    @property
    def h(self) -> float:
        """Common spacing; raises if the axes are spaced differently."""
        s = self.spacing
        if max(s) - min(s) > 1e-12 * max(s):
            raise ValueError(f"grid spacing is not uniform: {s}")
        return s[0]

    @cached_property
    def axes(self) -> tuple:
        out = []
        for (lo, hi), h in zip(self.bounds, self.spacing):
            if self.offset:
                x = lo + (np.arange(self.n) + 0.5) * h
            else:
                x = np.linspace(lo, hi, self.n)
            out.append(_readonly(x))
        return tuple(out)

    @property
    def shape(self) -> tuple:
        return (self.n,) * self.d

    @property
    def size(self) -> int:
        return self.n ** self.d

    @cached_property
    def coords(self) -> tuple:
        return tuple(_readonly(c) for c in np.meshgrid(*self.axes, indexing="ij"))

    @cached_property
    def points(self) -> np.ndarray:
        """Node coordinates as an ``(size, d)`` array in C order."""
        return _readonly(np.stack([c.ravel() for c in self.coords], axis=-1))

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    @cached_property
    def boundary_mask(self) -> np.ndarray:
        mask = np.zeros(self.shape, dtype=bool)
        for ax in range(self.d):
            idx = [slice(None)] * self.d
            idx[ax] = 0
            mask[tuple(idx)] = True
            idx[ax] = -1
            mask[tuple(idx)] = True
        return _readonly(mask)

    @property
    def interior_mask(self) -> np.ndarray:
        return ~self.boundary_mask

    def ball_mask(self, radius, center=None) -> np.ndarray:
        c = np.zeros(self.d) if center is None else np.asarray(center, float)
        r2 = sum((x - ci) ** 2 for x, ci in zip(self.coords, c))
        return r2 <= radius * radius * (1 + 1e-12)

    def cube_mask(self, side, center=None) -> np.ndarray:
        """Nodes of the closed axis-aligned cube of the given side length."""
        c = np.zeros(self.d) if center is None else np.asarray(center, float)
        half = 0.5 * side * (1 + 1e-12)
        mask = np.ones(self.shape, dtype=bool)
        for x, ci in zip(self.coords, c):
            mask &= np.abs(x - ci) <= half
        return mask

    def nearest_node(self, x) -> tuple:
        x = np.atleast_1d(np.asarray(x, float))
        return tuple(int(np.argmin(np.abs(ax - xi))) for ax, xi in zip(self.axes, x))


def build_grid(d, bounds, n, offset=False) -> Grid:
    """Build a uniform grid.

    ``bounds`` is either one ``(lo, hi)`` pair, reused on every axis, or a
    sequence of ``d`` pairs.

    >>> build_grid(1, (-1, 1), 5).axes[0].tolist()
    [-1.0, -0.5, 0.0, 0.5, 1.0]
    """
    b = np.asarray(bounds, dtype=float)
    if b.shape == (2,):
        b = np.tile(b, (d, 1))
    return Grid(d, tuple(map(tuple, b)), n, offset)


def _normalize_psi(psi):
    if psi is None:
        return ()
    if isinstance(psi, dict):
        items = psi.items()
    else:
        psi = list(psi)
        if psi and isinstance(psi[0], (tuple, list)) and len(psi[0]) == 2 \
                and isinstance(psi[0][0], (tuple, list)):
            items = [(tuple(e), c) for e, c in psi]
        else:
            items = [((k,), c) for k, c in enumerate(psi)]
    terms = []
    for exps, coef in items:
        exps = (exps,) if isinstance(exps, int) else tuple(int(e) for e in exps)
        if any(e < 0 for e in exps):
            raise ValueError("negative exponent in interface polynomial")
        if sum(exps) > MAX_PSI_DEGREE:
            raise ValueError(f"interface polynomial degree exceeds {MAX_PSI_DEGREE}")
        coef = float(coef)
        if coef != 0.0:
            terms.append((exps, coef))
    return tuple(sorted(terms))


@dataclass(frozen=True)
class WeightSpec:
    """Degenerate weight ``((x_d - psi(x'))**2 + eps**2)**(a/2)``.

    ``psi`` accepts a sequence of univariate coefficients ``c0, c1, ...`` in
    ``x1``, or a mapping from exponent tuples over ``x'`` to coefficients.
    It is stored as a sorted tuple of ``(exponents, coefficient)`` terms.
    """

    a: float
    psi: tuple = ()
    eps: float = 0.0

    def __post_init__(self):
        if not (math.isfinite(self.a) and self.a > 0):
            raise ValueError(f"weight exponent must be positive, got a={self.a}")
        if not (math.isfinite(self.eps) and self.eps >= 0):
            raise ValueError(f"regularization must be nonnegative, got eps={self.eps}")
        object.__setattr__(self, "a", float(self.a))
        object.__setattr__(self, "eps", float(self.eps))
        object.__setattr__(self, "psi", _normalize_psi(self.psi))

    @property
    def is_flat(self) -> bool:
        return not self.psi

    def with_eps(self, eps) -> "WeightSpec":
        return replace(self, eps=eps)

    def interface_offset(self, x) -> np.ndarray:
        """``x_d - psi(x')`` for points ``x`` of shape ``(..., d)``."""
        x = np.asarray(x, dtype=float)
        if x.ndim == 0:
            x = x[None]
        xd = x[..., -1]
        if not self.psi:
            return xd
        xp = x[..., :-1]
        val = np.zeros_like(xd)
        for exps, coef in self.psi:
            if len(exps) > xp.shape[-1] and any(exps[xp.shape[-1]:]):
                raise ValueError("interface polynomial uses more variables than x'")
            term = np.full_like(xd, coef)
            for i, e in enumerate(exps):
                if e:
                    term = term * xp[..., i] ** e
            val = val + term
        return xd - val

    def on_grid(self, grid: Grid) -> np.ndarray:
        return eval_weight(self, np.stack(grid.coords, axis=-1))


def eval_weight(w: WeightSpec, x) -> np.ndarray:
    """Evaluate the weight at a point or an array of points ``(..., d)``.

    >>> float(eval_weight(WeightSpec(a=1.0, eps=0.3), [0.4]))
    0.5
    """
    s = w.interface_offset(x)
    if w.eps == 0.0:
        out = np.abs(s) ** w.a
    else:
        out = (s * s + w.eps * w.eps) ** (0.5 * w.a)
    return out[()] if out.ndim == 0 else out


def _inv_weight_antiderivatives(s, a, eps):
    """Antiderivatives of ``g = omega**-1`` and ``s * g`` in the offset ``s``."""
    if eps == 0.0:
        g0 = np.sign(s) * np.abs(s) ** (1.0 - a) / (1.0 - a)
        g1 = np.abs(s) ** (2.0 - a) / (2.0 - a)
    else:
        g0 = s * eps ** (-a) * special.hyp2f1(0.5, 0.5 * a, 1.5, -(s / eps) ** 2)
        g1 = (s * s + eps * eps) ** (1.0 - 0.5 * a) / (2.0 - a)
    return g0, g1


def hat_weight(w: WeightSpec, x, h: float) -> np.ndarray:
    """Weight seen by a centred second difference of step ``h`` along ``x_d``.

    Returns ``1 / mean(1 / omega)`` where the mean is taken against the hat
    function on ``[x_d - h, x_d + h]``. For ``u'' = f / omega`` with constant
    ``f`` the centred second difference of the exact solution equals
    ``f`` divided by this value, so it removes the quadrature error of the
    singular quotient. Needs ``a < 1`` when ``eps == 0``.

    >>> round(float(hat_weight(WeightSpec(a=0.5), [10.0], 1e-3) / 10.0 ** 0.5), 9)
    1.0
    """
    if w.eps == 0.0 and w.a >= 1.0:
        raise ValueError("hat-averaged weight needs a < 1 when eps = 0")
    t = np.asarray(w.interface_offset(x), dtype=float)
    h = float(h)
    m0, m1 = _inv_weight_antiderivatives(t - h, w.a, w.eps)
    c0, c1 = _inv_weight_antiderivatives(t, w.a, w.eps)
    p0, p1 = _inv_weight_antiderivatives(t + h, w.a, w.eps)
    # int hat * g  with hat(s) = 1 - |s - t| / h, written around s = t
    left = (h - t) * (c0 - m0) + (c1 - m1)
    right = (h + t) * (p0 - c0) - (p1 - c1)
    mean = (left + right) / (h * h)
    # the closed form cancels badly where g is smooth on the hat's support
    far = (np.abs(t) > 4.0 * h) | (w.eps > 4.0 * h)
    if np.any(far):
        tf = t[far] if t.ndim else t
        nodes, wts = np.polynomial.legendre.leggauss(8)
        acc = 0.0
        for side in (-1.0, 1.0):
            z = 0.5 * (nodes + 1.0)          # distance from t in units of h
            s_ = tf[..., None] + side * h * z
            acc = acc + np.sum(0.5 * wts * (1.0 - z) / eval_weight(w, s_[..., None]), axis=-1)
        if t.ndim:
            mean[far] = acc
        else:
            mean = acc
    out = 1.0 / mean
    return out[()] if out.ndim == 0 else out


@dataclass(frozen=True, eq=False)
class Field:
    """Nodal values on a grid.

    Interior values must be finite. Boundary values may be NaN, which marks
    them as unset (used by residual fields without attached boundary data).
    """

    grid: Grid
    values: np.ndarray
    boundary: np.ndarray = field(default=None)

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.size != self.grid.size:
            raise ValueError(
                f"field has {v.size} values but the grid has {self.grid.size} nodes")
        v = v.reshape(self.grid.shape)
        b = self.grid.boundary_mask if self.boundary is None else \
            np.asarray(self.boundary, dtype=bool).reshape(self.grid.shape)
        if not np.all(np.isfinite(v[~b])):
            raise ValueError("field values must be finite at interior nodes")
        if np.any(np.isinf(v[b])):
            raise ValueError("field values must be finite or unset (NaN) on the boundary")
        object.__setattr__(self, "values", _readonly(v))
        object.__setattr__(self, "boundary", _readonly(b))

    @classmethod
    def constant(cls, grid, c) -> "Field":
        return cls(grid, np.full(grid.shape, float(c)))

    def with_values(self, values) -> "Field":
        return Field(self.grid, values, self.boundary)

    @property
    def interior(self) -> np.ndarray:
        return self.values[~self.boundary]

    def max_abs(self, mask=None) -> float:
        v = self.values if mask is None else self.values[mask]
        return float(np.nanmax(np.abs(v))) if v.size else 0.0


Expr = Union[str, float, int, Callable]


def sample_field(expr: Expr, g: Grid) -> Field:
    """Evaluate a closed-form function at every node of ``g``.

    ``expr`` may be a number, a callable taking the coordinate arrays
    ``(x1, ..., xd)``, or an expression string (see ``degenlab._expr``).

    Raises
    ------
    SamplingError
        If any node evaluates to a non-finite value.
    """
    if isinstance(expr, str):
        fn = compile_expression(expr, g.d)
    elif callable(expr):
        fn = expr
    else:
        c = float(expr)
        fn = lambda *coords: c  # noqa: E731
    with np.errstate(all="ignore"):
        vals = np.broadcast_to(np.asarray(fn(*g.coords), dtype=float), g.shape).copy()
    bad = ~np.isfinite(vals)
    if bad.any():
        idx = tuple(int(i) for i in np.argwhere(bad)[0])
        x = tuple(float(c[idx]) for c in g.coords)
        raise SamplingError(f"non-finite value at node {idx} (x={x})", idx)
    return Field(g, vals)


def _fmt(v):
    return "%.17g" % v


def write_field_csv(f: Field, dest) -> None:
    """Write ``x1,...,xd,value`` rows, one per node in C order."""
    header = ",".join([f"x{i + 1}" for i in range(f.grid.d)] + ["value"])
    pts = f.grid.points
    vals = f.values.ravel()
    buf = io.StringIO()
    buf.write(header + "\n")
    for p, v in zip(pts, vals):
        buf.write(",".join([_fmt(c) for c in p] + [_fmt(v)]) + "\n")
    text = buf.getvalue()
    if hasattr(dest, "write"):
        dest.write(text)
    else:
        Path(dest).write_text(text)


def read_field_csv(src, grid: Grid) -> Field:
    """Read a field written by :func:`write_field_csv` onto ``grid``."""
    text = src.read() if hasattr(src, "read") else Path(src).read_text()
    lines = text.strip().splitlines()
    header = lines[0].split(",")
    if len(header) != grid.d + 1 or header[-1] != "value":
        raise ValueError(f"unexpected CSV header {lines[0]!r}")
    data = np.array([[float(x) for x in ln.split(",")] for ln in lines[1:]])
    if data.shape[0] != grid.size:
        raise ValueError(f"CSV has {data.shape[0]} rows, grid has {grid.size} nodes")
    scale = max(max(abs(lo), abs(hi)) for lo, hi in grid.bounds)
    if np.max(np.abs(data[:, :-1] - grid.points)) > 1e-12 * max(scale, 1.0):
        raise ValueError("CSV node coordinates do not match the grid")
    return Field(grid, data[:, -1].reshape(grid.shape))
