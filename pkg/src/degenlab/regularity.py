"""Pointwise C^{1,alpha} diagnostics from sup-norm affine fits on shrinking balls.

A field is C^{1,alpha} at ``x0`` when the Chebyshev distance ``K(r)`` from
``u`` to the best affine function on ``B_r(x0)`` decays like ``r**(1+alpha)``.
The exponent is read off a log-log regression over dyadic radii.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy import stats
from scipy.optimize import linprog
from scipy.spatial import ConvexHull, QhullError

from .lattice import Field

__all__ = [
    "AffineFit",
    "ExponentReport",
    "MapEntry",
    "ExponentMap",
    "IterationAudit",
    "best_affine_fit",
    "exponent_estimate",
    "exponent_map",
    "iteration_audit",
]

CAP = 1.0
CAP_MARGIN = 0.05
MIN_BAND = 0.02


@dataclass(frozen=True, eq=False)
class AffineFit:
    """``ell(y) = a + b . (y - x0)`` minimizing ``max |u - ell|`` over ``B_r(x0)``."""

    x0: np.ndarray
    a: float
    b: np.ndarray
    r: float
    K: float
    n_nodes: int


def _strip_1d(t, y):
    """Exact minimal vertical strip: candidate slopes are hull edge slopes."""
    order = np.argsort(t, kind="stable")
    t, y = t[order], y[order]

    def chain(sign):
        hull = []
        for i in range(t.size):
            while len(hull) >= 2:
                o, a = hull[-2], hull[-1]
                cross = (t[a] - t[o]) * (sign * (y[i] - y[o])) - (sign * (y[a] - y[o])) * (t[i] - t[o])
                if cross > 0:
                    break
                hull.pop()
            hull.append(i)
        return hull

    slopes = []
    for hull in (chain(1.0), chain(-1.0)):
        h = np.array(hull)
        dt = t[h[1:]] - t[h[:-1]]
        slopes.extend(((y[h[1:]] - y[h[:-1]]) / dt)[dt > 0].tolist())
    best = None
    for b in slopes or [0.0]:
        z = y - b * t
        width = float(z.max() - z.min())
        if best is None or width < best[0]:
            best = (width, b, 0.5 * (z.max() + z.min()))
    return best[2], np.array([best[1]])


def _lp_fit(X, y):
    """Chebyshev fit by linear programming on the lifted hull vertices."""
    n, d = X.shape
    pts = np.column_stack([X, y])
    idx = np.arange(n)
    if n > 4 * (d + 2):
        try:
            idx = ConvexHull(pts).vertices
        except (QhullError, ValueError):
            pass
    Xs, ys = X[idx], y[idx]
    m = len(idx)
    # variables: a, b (d), t ; minimize t
    c = np.zeros(d + 2)
    c[-1] = 1.0
    ones = np.ones((m, 1))
    A_ub = np.vstack([np.hstack([-ones, -Xs, -ones]), np.hstack([ones, Xs, -ones])])
    b_ub = np.concatenate([-ys, ys])
    bounds = [(None, None)] * (d + 1) + [(0, None)]
    res = linprog(c, A_ub=A_ub, b_ub=b_ub, bounds=bounds, method="highs")
    if res.status != 0:
        raise RuntimeError(f"affine fit LP failed: {res.message}")
    return float(res.x[0]), np.asarray(res.x[1:d + 1])


def best_affine_fit(u: Field, x0, r: float) -> AffineFit:
    """Best sup-norm affine approximation of ``u`` on the nodes of ``B_r(x0)``.

    1D fits are exact (minimal strip over hull edge slopes). In higher
    dimensions the fit is a linear program solved on the vertices of the
    lifted convex hull; the residual ``K`` is then recomputed on every node.
    Coordinates and values are normalized before solving.

    >>> from degenlab.lattice import build_grid, sample_field
    >>> g = build_grid(1, (-1, 1), 201)
    >>> fit = best_affine_fit(sample_field("t**2", g), [0.0], 0.5)
    >>> round(fit.K, 12)
    0.125
    """
    g = u.grid
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    if x0.size != g.d:
        raise ValueError("base point has the wrong dimension")
    if not r > 0:
        raise ValueError("radius must be positive")
    mask = g.ball_mask(r, x0)
    n = int(mask.sum())
    if n < g.d + 2:
        raise ValueError(f"B_r(x0) holds {n} nodes; need at least {g.d + 2}")
    X = (g.points[mask.ravel()] - x0) / r
    y = u.values[mask]
    shift = float(y.mean())
    scale = float(np.max(np.abs(y - shift))) or 1.0
    ys = (y - shift) / scale
    # least-squares seed; an exact affine field stops here
    A = np.column_stack([np.ones(n), X])
    coef, *_ = np.linalg.lstsq(A, ys, rcond=None)
    if np.max(np.abs(ys - A @ coef)) <= 1e-13:
        a_n, b_n = float(coef[0]), coef[1:]
    elif g.d == 1:
        a_n, b_n = _strip_1d(X[:, 0], ys)
    else:
        a_n, b_n = _lp_fit(X, ys)
    a = shift + scale * a_n
    b = scale * np.asarray(b_n) / r
    resid = y - a - (g.points[mask.ravel()] - x0) @ b
    return AffineFit(x0, float(a), b, float(r), float(np.max(np.abs(resid))), n)


@dataclass(frozen=True, eq=False)
class ExponentReport:
    x0: np.ndarray
    rho: float
    radii: np.ndarray
    residuals: np.ndarray
    fits: tuple
    alpha: float          # fitted exponent, or the cap when capped
    slope: float          # raw log-log slope (nan when too few residuals resolve)
    band: float           # half-width of the 95% band (at least MIN_BAND)
    capped: bool

    def to_dict(self) -> dict:
        return {"x0": self.x0.tolist(), "rho": self.rho, "radii": self.radii.tolist(),
                "residuals": self.residuals.tolist(), "alpha": self.alpha,
                "slope": self.slope, "band": self.band, "capped": self.capped}


def _regress(radii, residuals, floor):
    """``(alpha_hat, slope, band, capped)`` from the log-log regression."""
    keep = residuals > floor
    if keep.sum() < 2:
        return CAP, math.nan, 0.0, True
    lr = stats.linregress(np.log(radii[keep]), np.log(residuals[keep]))
    m = int(keep.sum())
    band = float(stats.t.ppf(0.975, m - 2) * lr.stderr) if m > 2 else 0.0
    band = max(band, MIN_BAND)
    alpha = float(lr.slope - 1.0)
    if alpha >= CAP - CAP_MARGIN:
        return CAP, float(lr.slope), band, True
    return alpha, float(lr.slope), band, False


def _floor(u: Field) -> float:
    return 1e-12 * (1.0 + u.max_abs())


def _radii(rho, k_range, r0):
    k0, k1 = k_range
    if not 0 < rho < 1:
        raise ValueError("rho must lie in (0, 1)")
    if k1 <= k0:
        raise ValueError("k_range needs at least two radii")
    return r0 * rho ** np.arange(k0, k1 + 1, dtype=float)


def exponent_estimate(u: Field, x0, rho: float = 0.5, k_range=(1, 8),
                      r0: float = 1.0) -> ExponentReport:
    """Estimate the pointwise Hoelder exponent of ``Du`` at ``x0``.

    Radii are ``r0 * rho**k`` for ``k`` in ``k_range`` (inclusive). The
    smallest radius must be at least ``4 h``. ``alpha_hat = slope - 1`` where
    ``slope`` is the least-squares slope of ``log K`` against ``log r``.
    Residuals at or below ``1e-12 (1 + max|u|)`` carry no information; if
    fewer than two remain, or ``alpha_hat >= 0.95``, the report is capped at
    1 (the affine fit cannot resolve more smoothness than that).

    Raises
    ------
    ValueError
        The resolution guard fails.
    """
    g = u.grid
    radii = _radii(rho, k_range, r0)
    if radii[-1] < 4 * max(g.spacing) * (1 - 1e-12):
        raise ValueError(
            f"smallest radius {radii[-1]:.4g} is below 4h = {4 * max(g.spacing):.4g}")
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    fits = tuple(best_affine_fit(u, x0, r) for r in radii)
    K = np.array([f.K for f in fits])
    alpha, slope, band, capped = _regress(radii, K, _floor(u))
    return ExponentReport(x0, float(rho), radii, K, fits, alpha, slope, band, capped)


@dataclass(frozen=True)
class MapEntry:
    point: tuple
    alpha: float
    band: float
    capped: bool
    error: Optional[str] = None


@dataclass(frozen=True)
class ExponentMap:
    entries: tuple

    def to_csv(self, dest=None) -> str:
        """CSV with columns ``x1..xd, alpha, band, capped, error``."""
        d = len(self.entries[0].point) if self.entries else 1
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow([f"x{i + 1}" for i in range(d)] + ["alpha", "band", "capped", "error"])
        for e in self.entries:
            w.writerow(["%.17g" % c for c in e.point]
                       + ["%.17g" % e.alpha, "%.17g" % e.band, int(e.capped), e.error or ""])
        text = buf.getvalue()
        if dest is not None:
            Path(dest).write_text(text)
        return text


def exponent_map(u: Field, probes: Sequence, rho: float = 0.5, k_range=(1, 8),
                 r0: float = 1.0) -> ExponentMap:
    """Exponent reports at several probe points; failures are recorded, not raised."""
    out = []
    for p in probes:
        pt = tuple(float(c) for c in np.atleast_1d(p))
        try:
            rep = exponent_estimate(u, pt, rho, k_range, r0)
            out.append(MapEntry(pt, rep.alpha, rep.band, rep.capped))
        except (ValueError, RuntimeError) as exc:
            out.append(MapEntry(pt, math.nan, math.nan, False, str(exc)))
    return ExponentMap(tuple(out))


@dataclass(frozen=True)
class IterationAudit:
    alpha: float
    C_residual: float     # max_n K_n / r_n^(1+alpha)
    C_increment: float    # max_n (|a_n - a_{n-1}| + r_n |b_n - b_{n-1}|) / r_{n-1}^(1+alpha)
    residual_constants: tuple
    increment_constants: tuple
    alpha_hat: float
    band: float
    blowup: bool

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def iteration_audit(fits: Sequence[AffineFit], rho: float, alpha: float,
                    u: Optional[Field] = None) -> IterationAudit:
    """Constants of the geometric iteration for a sequence of fits at ``r_n``.

    The radii must form a geometric sequence with ratio ``rho``. Blow-up
    (the constants growing with ``n``) is declared when the regression
    exponent of the residuals falls significantly below ``alpha``:
    ``alpha_hat < alpha - band``, with the same regression and floor as
    :func:`exponent_estimate` (pass ``u`` to use its floor).
    """
    fits = list(fits)
    if len(fits) < 2:
        raise ValueError("need at least two fits")
    x0 = fits[0].x0
    for f in fits[1:]:
        if f.x0.shape != x0.shape or np.max(np.abs(f.x0 - x0)) > 1e-12:
            raise ValueError("fits do not share the base point")
    radii = np.array([f.r for f in fits])
    ratios = radii[1:] / radii[:-1]
    if np.max(np.abs(ratios - rho)) > 1e-9 * rho:
        raise ValueError("radii are not a geometric sequence with ratio rho")
    K = np.array([f.K for f in fits])
    e = 1.0 + alpha
    res_c = K / radii ** e
    inc_c = []
    for prev, cur in zip(fits, fits[1:]):
        inc = abs(cur.a - prev.a) + cur.r * float(np.max(np.abs(cur.b - prev.b)))
        inc_c.append(inc / prev.r ** e)
    floor = _floor(u) if u is not None else 1e-12 * (1.0 + float(np.max(np.abs(
        [f.a for f in fits]))))
    a_hat, _, band, capped = _regress(radii, K, floor)
    blow = (not capped) and a_hat < alpha - band
    return IterationAudit(float(alpha), float(res_c.max()), float(max(inc_c)),
                          tuple(res_c.tolist()), tuple(inc_c), float(a_hat), float(band),
                          bool(blow))
