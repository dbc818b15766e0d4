"""Jensen sup/inf-convolution envelopes, their property audit, and convex envelopes.

The upper envelope of ``u`` with respect to a node set ``U`` is

    u^eps(x0) = max_{x in U} u(x) + eps - |x - x0|**2 / eps

taken exactly over the nodes (brute force, chunked). The lower envelope is
``-(upper envelope of -u)``. Convex envelopes are exact lower hulls in 1D and
iterated line hulls along every stencil direction in higher dimensions.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .lattice import Field, Grid
from .operators import StencilSet, _step2

__all__ = [
    "EnvelopeParams",
    "EnvelopeResult",
    "ContactSet",
    "ConvexEnvelope",
    "PropertyCheck",
    "EnvelopeAudit",
    "eps_envelope",
    "envelope_audit",
    "convex_envelope",
    "lower_hull_1d",
    "erode",
]

_CHUNK = 1 << 22  # pair evaluations per block


def erode(mask: np.ndarray, steps: int = 1) -> np.ndarray:
    """Nodes of ``mask`` whose axis neighbours (``steps`` deep) are all in ``mask``."""
    out = np.asarray(mask, dtype=bool).copy()
    for _ in range(steps):
        cur = out.copy()
        for ax in range(cur.ndim):
            lo = [slice(None)] * cur.ndim
            hi = [slice(None)] * cur.ndim
            lo[ax], hi[ax] = slice(1, None), slice(None, -1)
            shifted = np.zeros_like(cur)
            shifted[tuple(hi)] = cur[tuple(lo)]
            out &= shifted
            shifted = np.zeros_like(cur)
            shifted[tuple(lo)] = cur[tuple(hi)]
            out &= shifted
    return out


@dataclass(frozen=True, eq=False)
class EnvelopeParams:
    """Regularization ``eps``, source node set and evaluation node set.

    The evaluation set must sit strictly inside the source set: every
    evaluation node has all of its axis neighbours in the source set.
    ``evaluation=None`` means the source set eroded by one node.
    """

    eps: float
    source: np.ndarray
    evaluation: Optional[np.ndarray] = None

    def __post_init__(self):
        if not (np.isfinite(self.eps) and self.eps > 0):
            raise ValueError(f"eps must be positive, got {self.eps}")
        src = np.asarray(self.source, dtype=bool)
        if not src.any():
            raise ValueError("empty source region")
        inner = erode(src)
        ev = inner if self.evaluation is None else np.asarray(self.evaluation, dtype=bool)
        if ev.shape != src.shape:
            raise ValueError("source and evaluation masks differ in shape")
        if not ev.any():
            raise ValueError("empty evaluation region")
        if np.any(ev & ~inner):
            raise ValueError("evaluation region must lie strictly inside the source region")
        object.__setattr__(self, "eps", float(self.eps))
        object.__setattr__(self, "source", src)
        object.__setattr__(self, "evaluation", ev)

    @classmethod
    def whole(cls, grid: Grid, eps: float, margin: int = 1) -> "EnvelopeParams":
        src = np.ones(grid.shape, dtype=bool)
        return cls(eps, src, erode(src, margin))

    def with_eps(self, eps: float) -> "EnvelopeParams":
        return EnvelopeParams(eps, self.source, self.evaluation)


@dataclass(frozen=True, eq=False)
class EnvelopeResult:
    """Envelope values at every grid node and the maximizing source node.

    ``argmax`` holds flat (C-order) node indices into the grid.
    """

    envelope: Field
    argmax: np.ndarray
    side: str
    eps: float


def _upper(u: Field, src: np.ndarray, eps: float):
    g = u.grid
    pts = g.points
    src_idx = np.flatnonzero(src.ravel())
    sp = pts[src_idx]
    su = u.values.ravel()[src_idx]
    if not np.all(np.isfinite(su)):
        raise ValueError("u must be finite on the source region")
    out = np.empty(g.size)
    arg = np.empty(g.size, dtype=np.int64)
    step = max(1, _CHUNK // max(1, src_idx.size))
    for start in range(0, g.size, step):
        x0 = pts[start:start + step]
        d2 = np.zeros((x0.shape[0], sp.shape[0]))
        for k in range(g.d):
            diff = x0[:, k, None] - sp[None, :, k]
            d2 += diff * diff
        cand = (su + eps)[None, :] - d2 / eps
        j = np.argmax(cand, axis=1)
        out[start:start + step] = cand[np.arange(x0.shape[0]), j]
        arg[start:start + step] = src_idx[j]
    return out.reshape(g.shape), arg.reshape(g.shape)


def eps_envelope(u: Field, p: EnvelopeParams, side: str = "upper") -> EnvelopeResult:
    """Exact discrete sup (or inf) convolution over the source node set.

    Ties in the maximization go to the lowest node index. The lower envelope
    is the negated upper envelope of ``-u``, so the duality holds bit-exactly.

    >>> from degenlab.lattice import build_grid
    >>> g = build_grid(1, (-1, 1), 5)
    >>> r = eps_envelope(Field.constant(g, 2.0), EnvelopeParams.whole(g, 0.5))
    >>> r.envelope.values.tolist()
    [2.5, 2.5, 2.5, 2.5, 2.5]
    """
    if p.source.shape != u.grid.shape:
        raise ValueError("mask shape does not match the grid")
    if side == "upper":
        vals, arg = _upper(u, p.source, p.eps)
    elif side == "lower":
        vals, arg = _upper(u.with_values(-u.values), p.source, p.eps)
        vals = -vals
    else:
        raise ValueError(f"side must be 'upper' or 'lower', got {side!r}")
    return EnvelopeResult(Field(u.grid, vals), arg, side, p.eps)


@dataclass(frozen=True)
class PropertyCheck:
    name: str
    passed: bool
    worst_margin: float  # smallest slack; negative means violated
    node: Optional[tuple]
    violations: int

    def to_dict(self) -> dict:
        return {"passed": self.passed, "worst_margin": self.worst_margin,
                "node": list(self.node) if self.node is not None else None,
                "violations": self.violations}


def _check(name, slack, idx_nodes, tol=0.0) -> PropertyCheck:
    slack = np.asarray(slack, dtype=float).ravel()
    if slack.size == 0:
        return PropertyCheck(name, True, float("inf"), None, 0)
    k = int(np.argmin(slack))
    bad = int(np.sum(slack < -tol))
    node = tuple(int(i) for i in idx_nodes[k])
    return PropertyCheck(name, bad == 0, float(slack[k]), node, bad)


@dataclass(frozen=True)
class EnvelopeAudit:
    eps: float
    eps_prime: float
    checks: dict

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks.values())

    @property
    def violations(self) -> int:
        return sum(c.violations for c in self.checks.values())

    def to_dict(self) -> dict:
        return {"eps": self.eps, "eps_prime": self.eps_prime, "passed": self.passed,
                "checks": {k: c.to_dict() for k, c in self.checks.items()}}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def _pairwise_lipschitz(pts, vals, chunk=2048) -> float:
    best = 0.0
    for s in range(0, len(pts), chunk):
        dx = np.sqrt(((pts[s:s + chunk, None, :] - pts[None, :, :]) ** 2).sum(-1))
        dv = np.abs(vals[s:s + chunk, None] - vals[None, :])
        with np.errstate(divide="ignore", invalid="ignore"):
            q = np.where(dx > 0, dv / dx, 0.0)
        best = max(best, float(q.max()))
    return best


def envelope_audit(u: Field, p: EnvelopeParams, eps_prime: float,
                   ladder: Optional[Sequence[float]] = None,
                   stencils: Optional[StencilSet] = None) -> EnvelopeAudit:
    """Audit the envelope properties on the evaluation region.

    Checks (slack >= 0 means satisfied):

    ``above``
        ``u^eps >= u + eps``, exact.
    ``lipschitz``
        ``|u^eps(x0) - u^eps(x1)| <= 3 diam(U) |x0 - x1| / eps`` on all node
        pairs; ``diam`` is the bounding-box diagonal of the source nodes.
    ``monotone``
        ``u^eps <= u^eps_prime`` for ``eps < eps_prime``.
    ``argmax``
        ``|x0* - x0|**2 <= eps * osc_U u``.
    ``gap``
        ``0 < u^eps - u <= u(x0*) - u + eps``.
    ``semiconvex``
        every directional second difference of ``u^eps`` is ``>= -2/eps``.
    ``convergence``
        ``sup(u^e - u)`` is nonincreasing along the ladder of ``e`` values
        and bounded by ``e * (1 + L**2 / 4)`` with ``L`` the discrete
        Lipschitz constant of ``u`` on the source set.

    Round-off slack is ``1e-12 * (1 + max|u|)`` for value comparisons and
    that amount divided by the squared step for second differences.
    """
    if not eps_prime > p.eps:
        raise ValueError("eps_prime must exceed eps")
    g = u.grid
    eps = p.eps
    s = StencilSet.wide(g.d) if stencils is None else stencils
    ev = p.evaluation
    nodes = np.argwhere(ev)
    scale = 1.0 + float(np.max(np.abs(u.values[p.source])))
    tol = 1e-12 * scale
    res = eps_envelope(u, p, "upper")
    res2 = eps_envelope(u, p.with_eps(eps_prime), "upper")
    U = res.envelope.values
    u0 = u.values
    checks = {}

    # the candidate x = x0 gives fl(u + eps) exactly, so compare against that
    checks["above"] = _check("above", (U - (u0 + eps))[ev], nodes)

    src_pts = g.points[p.source.ravel()]
    diam = float(np.linalg.norm(src_pts.max(0) - src_pts.min(0)))
    pts = g.points[ev.ravel()]
    vals = U[ev]
    worst, worst_node, bad = np.inf, None, 0
    for st in range(0, len(pts), 1024):
        dx = np.sqrt(((pts[st:st + 1024, None, :] - pts[None, :, :]) ** 2).sum(-1))
        dv = np.abs(vals[st:st + 1024, None] - vals[None, :])
        slack = 3.0 * diam * dx / eps - dv
        k = np.unravel_index(np.argmin(slack), slack.shape)
        bad += int(np.sum(slack < -tol))
        if slack[k] < worst:
            worst, worst_node = float(slack[k]), tuple(int(i) for i in nodes[st + k[0]])
    checks["lipschitz"] = PropertyCheck("lipschitz", bad == 0, worst, worst_node, bad)

    checks["monotone"] = _check("monotone", (res2.envelope.values - U)[ev], nodes, tol)

    osc = float(np.ptp(u0[p.source]))
    star = g.points[res.argmax.ravel()].reshape(g.shape + (g.d,))
    here = np.stack(g.coords, axis=-1)
    dist2 = ((star - here) ** 2).sum(-1)
    checks["argmax"] = _check("argmax", (eps * osc - dist2)[ev], nodes, tol)

    ustar = u0.ravel()[res.argmax.ravel()].reshape(g.shape)
    gap = U - u0
    slack6 = np.minimum(gap, ustar - u0 + eps - gap)
    # the strict left inequality gets no round-off allowance
    slack6 = np.where(gap > 0, slack6, np.minimum(gap, -np.finfo(float).tiny))
    checks["gap"] = _check("gap", slack6[ev], nodes, tol)

    d2_tol = tol / min(g.spacing) ** 2
    worst, worst_node, bad = np.inf, None, 0
    for v in s.directions:
        h2 = _step2(v, g.spacing)
        plus = _shift_mask(ev, v, g.shape)
        ok = plus & _shift_mask(ev, tuple(-x for x in v), g.shape)
        if not ok.any():
            continue
        cidx = np.argwhere(ok)
        a = U[tuple((cidx + np.array(v)).T)]
        b = U[tuple((cidx - np.array(v)).T)]
        d2 = (a - 2.0 * U[tuple(cidx.T)] + b) / h2
        slack = d2 + 2.0 / eps
        k = int(np.argmin(slack))
        bad += int(np.sum(slack < -d2_tol))
        if slack[k] < worst:
            worst, worst_node = float(slack[k]), tuple(int(i) for i in cidx[k])
    checks["semiconvex"] = PropertyCheck("semiconvex", bad == 0,
                                         float(worst), worst_node, bad)

    ladder = [eps_prime, eps, eps / 2, eps / 4] if ladder is None else list(ladder)
    L = _pairwise_lipschitz(src_pts, u0[p.source])
    sups = []
    for e in ladder:
        r = eps_envelope(u, p.with_eps(e), "upper")
        sups.append(float(np.max((r.envelope.values - u0)[ev])))
    bound_slack = [e * (1 + L * L / 4) - sv for e, sv in zip(ladder, sups)]
    order = np.argsort(ladder)[::-1]
    mono = [sups[order[i]] - sups[order[i + 1]] for i in range(len(order) - 1)]
    slack = np.array(bound_slack + mono)
    k = int(np.argmin(slack))
    bad = int(np.sum(slack < -tol))
    checks["convergence"] = PropertyCheck("convergence", bad == 0, float(slack[k]), None, bad)
    return EnvelopeAudit(eps, float(eps_prime), checks)


def _shift_mask(mask, v, shape):
    """True where ``x + v`` is a node inside ``mask`` (and on the grid)."""
    out = np.zeros(shape, dtype=bool)
    src = []
    dst = []
    for vi, n in zip(v, shape):
        if vi >= 0:
            dst.append(slice(0, n - vi))
            src.append(slice(vi, n))
        else:
            dst.append(slice(-vi, n))
            src.append(slice(0, n + vi))
    out[tuple(dst)] = mask[tuple(src)]
    return out


@dataclass(frozen=True, eq=False)
class ContactSet:
    """Nodes where a function meets its convex envelope (within ``tol``)."""

    mask: np.ndarray
    measure: float
    tol: float

    @property
    def count(self) -> int:
        return int(self.mask.sum())


@dataclass(frozen=True, eq=False)
class ConvexEnvelope:
    """Convex envelope on a node region; unpacks as ``(envelope, contact)``.

    Outside the region the envelope field carries the input values.
    """

    envelope: Field
    contact: ContactSet
    region: np.ndarray
    sweeps: int
    residual: float
    converged: bool

    def __iter__(self):
        yield self.envelope
        yield self.contact


def lower_hull_1d(x, y) -> np.ndarray:
    """Lower convex hull of points with increasing ``x``, evaluated at ``x``.

    Monotone chain with an orientation test scaled by the size of ``y``, so
    points collinear up to roundoff are dropped. A few extra passes settle the
    last ulps, which makes the map idempotent bit for bit. The result never
    exceeds ``y``.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.size <= 2:
        return y.copy()
    out = _hull_pass(x, y)
    for _ in range(8):  # settle roundoff so that a second call is the identity
        nxt = _hull_pass(x, out)
        if np.array_equal(nxt, out):
            break
        out = nxt
    return out


def _hull_pass(x, y):
    tol = 64 * np.finfo(float).eps
    hull = []
    for i in range(x.size):
        while len(hull) >= 2:
            o, a = hull[-2], hull[-1]
            dxa, dxi = x[a] - x[o], x[i] - x[o]
            t1 = dxa * (y[i] - y[o])
            t2 = (y[a] - y[o]) * dxi
            # the error scale is the size of y, not of its differences
            err = tol * (dxa * (abs(y[i]) + abs(y[o])) + dxi * (abs(y[a]) + abs(y[o])))
            if t1 - t2 > err:
                break
            hull.pop()
        hull.append(i)
    out = np.interp(x, x[hull], y[hull])
    return np.minimum(out, y)


def _lines(shape, v):
    """Index arrays of every lattice line along direction ``v`` (length >= 1)."""
    v = np.array(v)
    starts = []
    for idx in np.ndindex(*shape):
        prev = np.array(idx) - v
        if np.any(prev < 0) or np.any(prev >= np.array(shape)):
            starts.append(idx)
    lines = []
    for st in starts:
        pts = []
        p = np.array(st)
        while np.all(p >= 0) and np.all(p < np.array(shape)):
            pts.append(p.copy())
            p = p + v
        lines.append(tuple(np.array(pts).T))
    return lines


def _runs(flags):
    """Start/stop pairs of consecutive True runs."""
    f = np.concatenate([[False], flags, [False]]).astype(np.int8)
    d = np.diff(f)
    return zip(np.flatnonzero(d == 1), np.flatnonzero(d == -1))


def convex_envelope(v: Field, region: Optional[np.ndarray] = None, extend: bool = False,
                    R: Optional[float] = None, center=None,
                    stencils: Optional[StencilSet] = None, tol: float = 1e-10,
                    max_sweeps: int = 10_000) -> ConvexEnvelope:
    """Convex envelope of a grid function over a node region.

    Parameters
    ----------
    v : Field
    region : bool array, optional
        Nodes where the envelope is taken (default: all nodes). Each lattice
        line should meet it in one contiguous run, as balls and boxes do.
    extend : bool
        Replace ``v`` by ``min(v, 0)`` inside the ball ``B_R`` and by 0 on the
        rest of the region (the region is then typically ``B_{2R}``).
    tol : float
        Fixed-point tolerance of the directional sweeps (d >= 2).

    Returns
    -------
    ConvexEnvelope
        With the contact set ``{v - Gamma <= 1e-8 (1 + osc v)}`` on the region.
        In 1D the hull is exact; otherwise line hulls along every stencil
        direction are iterated until the largest change is at most ``tol``.
    """
    g = v.grid
    reg = np.ones(g.shape, dtype=bool) if region is None else np.asarray(region, dtype=bool)
    if reg.shape != g.shape or not reg.any():
        raise ValueError("region must be a nonempty mask on the grid")
    vals = np.array(v.values, dtype=float)
    if extend:
        if R is None:
            raise ValueError("extend=True needs the inner radius R")
        inner = g.ball_mask(R, center)
        vals = np.where(inner, np.minimum(vals, 0.0), 0.0)
    if not np.all(np.isfinite(vals[reg])):
        raise ValueError("v must be finite on the region")
    G = vals.copy()
    sweeps, change = 0, 0.0
    if g.d == 1:
        for a, b in _runs(reg):
            G[a:b] = lower_hull_1d(g.axes[0][a:b], vals[a:b])
        converged = True
    else:
        s = StencilSet.wide(g.d) if stencils is None else stencils
        all_lines = []
        for dvec in s.directions:
            h = np.sqrt(_step2(dvec, g.spacing))
            for line in _lines(g.shape, dvec):
                flags = reg[line]
                for a, b in _runs(flags):
                    if b - a >= 3:
                        sub = tuple(ix[a:b] for ix in line)
                        all_lines.append((sub, h * np.arange(b - a)))
        converged = False
        while sweeps < max_sweeps:
            sweeps += 1
            change = 0.0
            for sub, t in all_lines:
                old = G[sub]
                new = lower_hull_1d(t, old)
                if np.any(new != old):
                    change = max(change, float(np.max(old - new)))
                    G[sub] = new
            if change <= tol:
                converged = True
                break
    out = np.where(reg, G, vals)
    osc = float(np.ptp(vals[reg]))
    ctol = 1e-8 * (1.0 + osc)
    contact = reg & (vals - out <= ctol)
    cs = ContactSet(contact, float(contact.sum() * g.cell_volume), ctol)
    return ConvexEnvelope(v.with_values(out), cs, reg, sweeps, change, converged)
