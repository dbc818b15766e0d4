"""Scenario configuration files.

Scenarios are TOML documents: flat typed key-value pairs grouped under
section headers. The recognised sections are

``[scenario]``
    ``name`` (str, required), ``steps`` (list of step names, required),
    ``seed`` (int, default 0).
``[grid]``
    ``d`` (1, 2 or 3), ``bounds`` (``[lo, hi]`` or one pair per axis),
    ``n`` (int >= 3), ``offset`` (bool, default false).
``[weight]``
    ``a`` (float > 0), ``psi`` (list of coefficients in ``x1``, default
    flat), ``eps`` (float >= 0, default 0).
``[operator]``
    ``kind`` (``trace``, ``pucci-plus``, ``pucci-minus``, ``hjb``),
    ``lambda`` and ``Lambda`` (``0 < lambda <= Lambda``), ``matrices``
    (``hjb`` only, nested lists, row-major).
``[output]``
    ``dir`` (str), used when no ``--out`` is given.

Each entry of ``steps`` names a further section with that step's keys; see
:data:`STEP_KEYS`. Expressions (``f``, ``g``, ``exact``, ``u``, ...) are
strings over the coordinates ``x1 .. x3``, ``t``, ``xd`` and ``r``.
Unknown keys are rejected so typos cannot silently fall back to defaults.
"""

from __future__ import annotations

import hashlib
import json
import sys
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from ._expr import compile_expression
from .errors import ConfigError
from .lattice import WeightSpec, build_grid
from .operators import EllipticityPair, OperatorSpec

STEP_KEYS = {
    "solve": {"f", "g", "u0", "epsilon_schedule", "tol", "tau", "max_iters", "method",
              "weight_rule", "ladder_tol", "exact", "max_error", "require_ladder",
              "compare_cold"},
    "exponent": {"u", "probes", "rho", "k_range", "r0", "expect"},
    "envelope_audit": {"seeds", "eps", "eps_prime_factor", "pieces"},
    "barrier": {"dims", "lambda", "Lambdas", "h", "a", "tol"},
    "abp": {"u", "f", "R", "ns", "scale", "expect", "rate_tol", "scale_tol"},
    "nonuniqueness": {"a", "slopes", "eps", "n", "node_tol", "rel_tol"},
}
SECTION_KEYS = {
    "scenario": {"name", "steps", "seed"},
    "grid": {"d", "bounds", "n", "offset"},
    "weight": {"a", "psi", "eps"},
    "operator": {"kind", "lambda", "Lambda", "matrices"},
    "output": {"dir"},
}
# steps that build fields on the scenario grid
_NEEDS_GRID = {"solve", "exponent", "envelope_audit"}


@dataclass(frozen=True)
class ScenarioConfig:
    """Validated scenario: raw tables plus the objects built from them."""

    name: str
    steps: tuple
    seed: int
    raw: dict
    source: str = ""
    grid: Any = None
    weight: Any = None
    operator: Any = None
    out_dir: str | None = None

    def section(self, name) -> dict:
        return self.raw.get(name, {})

    def with_seed(self, seed: int) -> "ScenarioConfig":
        """Copy with ``scenario.seed`` replaced (the hash changes with it)."""
        raw = json.loads(json.dumps(self.raw))
        raw.setdefault("scenario", {})["seed"] = int(seed)
        return replace(self, seed=int(seed), raw=raw)

    @property
    def config_hash(self) -> str:
        """sha256 of the canonical JSON form of the parsed configuration."""
        text = json.dumps(self.raw, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()


def _get(table, key, kind, path, default=None, required=False):
    if key not in table:
        if required:
            raise ConfigError(f"{path}: missing required key", key=path)
        return default
    v = table[key]
    if kind is float and isinstance(v, int) and not isinstance(v, bool):
        v = float(v)
    if kind is not None and not isinstance(v, kind) or isinstance(v, bool) and kind is not bool:
        name = kind.__name__ if isinstance(kind, type) else "/".join(k.__name__ for k in kind)
        raise ConfigError(f"{path}: expected {name}, got {type(v).__name__}", key=path)
    return v


def _floats(table, key, path, default=None, required=False):
    v = _get(table, key, list, path, default, required)
    if v is None:
        return None
    try:
        return [float(x) for x in v]
    except (TypeError, ValueError):
        raise ConfigError(f"{path}: expected a list of numbers", key=path) from None


def _check_keys(table, allowed, section):
    for k in table:
        if k not in allowed:
            raise ConfigError(f"{section}.{k}: unknown key", key=f"{section}.{k}")


def _expr(table, key, section, d, required=False, default=None):
    src = _get(table, key, (str, int, float), f"{section}.{key}", default, required)
    if src is None:
        return None
    src = str(src)
    try:
        compile_expression(src, d)
    except ValueError as exc:
        raise ConfigError(f"{section}.{key}: {exc}", key=f"{section}.{key}") from None
    return src


def _build_grid(t):
    d = _get(t, "d", int, "grid.d", required=True)
    n = _get(t, "n", int, "grid.n", required=True)
    bounds = _get(t, "bounds", list, "grid.bounds", [-1.0, 1.0])
    offset = _get(t, "offset", bool, "grid.offset", False)
    if d not in (1, 2, 3):
        raise ConfigError("grid.d: dimension must be 1, 2 or 3", key="grid.d")
    if n < 3:
        raise ConfigError(f"grid.n: need at least 3 points per axis, got {n}", key="grid.n")
    try:
        return build_grid(d, bounds, n, offset)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"grid.bounds: {exc}", key="grid.bounds") from None


def _build_weight(t):
    a = _get(t, "a", float, "weight.a", required=True)
    psi = _get(t, "psi", list, "weight.psi", [])
    eps = _get(t, "eps", float, "weight.eps", 0.0)
    if not a > 0:
        raise ConfigError(f"weight.a: exponent must be positive, got {a}", key="weight.a")
    if not eps >= 0:
        raise ConfigError(f"weight.eps: must be nonnegative, got {eps}", key="weight.eps")
    try:
        return WeightSpec(a, psi, eps)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"weight.psi: {exc}", key="weight.psi") from None


def _build_operator(t):
    kind = _get(t, "kind", str, "operator.kind", "trace")
    lam = _get(t, "lambda", float, "operator.lambda", 1.0)
    Lam = _get(t, "Lambda", float, "operator.Lambda", lam)
    if not (0 < lam <= Lam):
        raise ConfigError(
            f"operator.lambda: ellipticity requires 0 < lambda <= Lambda, got "
            f"lambda={lam}, Lambda={Lam}", key="operator.lambda")
    mats = _get(t, "matrices", list, "operator.matrices", [])
    try:
        return OperatorSpec(kind, EllipticityPair(lam, Lam), tuple(mats))
    except (ValueError, TypeError) as exc:
        key = "operator.kind" if "kind" in str(exc) else "operator.matrices"
        raise ConfigError(f"{key}: {exc}", key=key) from None


def _validate_step(step, t, d):
    sec = step
    if step == "solve":
        _expr(t, "f", sec, d, required=True)
        _expr(t, "g", sec, d, required=True)
        _expr(t, "u0", sec, d)
        _expr(t, "exact", sec, d)
        sched = _floats(t, "epsilon_schedule", f"{sec}.epsilon_schedule")
        if sched is not None:
            if not sched or any(e < 0 for e in sched) or any(
                    b >= a for a, b in zip(sched, sched[1:])) or 0.0 in sched[:-1]:
                raise ConfigError(f"{sec}.epsilon_schedule: must be strictly decreasing "
                                  "and positive (a final 0 is allowed)",
                                  key=f"{sec}.epsilon_schedule")
        for k in ("tol", "tau", "max_error", "ladder_tol"):
            v = _get(t, k, float, f"{sec}.{k}")
            if v is not None and not v > 0:
                raise ConfigError(f"{sec}.{k}: must be positive", key=f"{sec}.{k}")
        mi = _get(t, "max_iters", int, f"{sec}.max_iters")
        if mi is not None and mi < 1:
            raise ConfigError(f"{sec}.max_iters: must be >= 1", key=f"{sec}.max_iters")
        m = _get(t, "method", str, f"{sec}.method", "howard")
        if m not in ("howard", "relax"):
            raise ConfigError(f"{sec}.method: unknown method {m!r}", key=f"{sec}.method")
        r = _get(t, "weight_rule", str, f"{sec}.weight_rule", "hat")
        if r not in ("hat", "node"):
            raise ConfigError(f"{sec}.weight_rule: unknown rule {r!r}", key=f"{sec}.weight_rule")
        _get(t, "require_ladder", bool, f"{sec}.require_ladder")
        _get(t, "compare_cold", bool, f"{sec}.compare_cold")
    elif step == "exponent":
        _expr(t, "u", sec, d)
        probes = _get(t, "probes", list, f"{sec}.probes", required=True)
        if not probes or any(not isinstance(p, list) or len(p) != d for p in probes):
            raise ConfigError(f"{sec}.probes: expected a list of {d}-dimensional points",
                              key=f"{sec}.probes")
        rho = _get(t, "rho", float, f"{sec}.rho", 0.5)
        if not 0 < rho < 1:
            raise ConfigError(f"{sec}.rho: must lie in (0, 1)", key=f"{sec}.rho")
        kr = _get(t, "k_range", list, f"{sec}.k_range", [1, 8])
        if len(kr) != 2 or not all(isinstance(k, int) for k in kr) or kr[0] >= kr[1]:
            raise ConfigError(f"{sec}.k_range: expected [k_min, k_max] integers",
                              key=f"{sec}.k_range")
        _get(t, "r0", float, f"{sec}.r0", 1.0)
        expect = _get(t, "expect", list, f"{sec}.expect", [])
        if expect and len(expect) != len(probes):
            raise ConfigError(f"{sec}.expect: one entry per probe", key=f"{sec}.expect")
        for e in expect:
            ok = e == "capped" or (isinstance(e, list) and len(e) == 2
                                   and all(isinstance(v, (int, float)) for v in e))
            if not ok:
                raise ConfigError(f"{sec}.expect: entries are [lo, hi] or \"capped\"",
                                  key=f"{sec}.expect")
    elif step == "envelope_audit":
        seeds = _get(t, "seeds", list, f"{sec}.seeds", required=True)
        if not seeds or not all(isinstance(s, int) for s in seeds):
            raise ConfigError(f"{sec}.seeds: expected a list of integers", key=f"{sec}.seeds")
        eps = _floats(t, "eps", f"{sec}.eps", required=True)
        if not eps or min(eps) <= 0:
            raise ConfigError(f"{sec}.eps: positive values required", key=f"{sec}.eps")
        fac = _get(t, "eps_prime_factor", float, f"{sec}.eps_prime_factor", 2.0)
        if not fac > 1:
            raise ConfigError(f"{sec}.eps_prime_factor: must exceed 1",
                              key=f"{sec}.eps_prime_factor")
        pieces = _get(t, "pieces", list, f"{sec}.pieces", [2, 6])
        if len(pieces) != 2 or not 1 <= pieces[0] <= pieces[1]:
            raise ConfigError(f"{sec}.pieces: expected [min, max] breakpoints",
                              key=f"{sec}.pieces")
    elif step == "barrier":
        dims = _get(t, "dims", list, f"{sec}.dims", required=True)
        if not dims or any(k not in (1, 2, 3) for k in dims):
            raise ConfigError(f"{sec}.dims: entries must be 1, 2 or 3", key=f"{sec}.dims")
        lam = _get(t, "lambda", float, f"{sec}.lambda", 1.0)
        for L in _floats(t, "Lambdas", f"{sec}.Lambdas", required=True):
            if not 0 < lam <= L:
                raise ConfigError(f"{sec}.Lambdas: ellipticity requires 0 < lambda <= Lambda",
                                  key=f"{sec}.Lambdas")
        for k in ("h", "a", "tol"):
            v = _get(t, k, float, f"{sec}.{k}", 1.0)
            if not v > 0:
                raise ConfigError(f"{sec}.{k}: must be positive", key=f"{sec}.{k}")
    elif step == "abp":
        _expr(t, "u", sec, d, required=True)
        _expr(t, "f", sec, d, required=True)
        R = _get(t, "R", float, f"{sec}.R", required=True)
        if not R > 0:
            raise ConfigError(f"{sec}.R: must be positive", key=f"{sec}.R")
        ns = _get(t, "ns", list, f"{sec}.ns", required=True)
        if len(ns) < 2 or not all(isinstance(n, int) and n >= 3 for n in ns):
            raise ConfigError(f"{sec}.ns: at least two grid sizes >= 3", key=f"{sec}.ns")
        for k in ("scale", "expect", "rate_tol", "scale_tol"):
            _get(t, k, float, f"{sec}.{k}")
    elif step == "nonuniqueness":
        a = _get(t, "a", float, f"{sec}.a", required=True)
        if not 0 < a < 1:
            raise ConfigError(f"{sec}.a: must lie in (0, 1)", key=f"{sec}.a")
        sl = _floats(t, "slopes", f"{sec}.slopes", required=True)
        if len(sl) != 2:
            raise ConfigError(f"{sec}.slopes: expected [slope_plus, slope_minus]",
                              key=f"{sec}.slopes")
        for k in ("eps", "node_tol", "rel_tol"):
            v = _get(t, k, float, f"{sec}.{k}", 1.0)
            if not v > 0:
                raise ConfigError(f"{sec}.{k}: must be positive", key=f"{sec}.{k}")
        n = _get(t, "n", int, f"{sec}.n", 257)
        if n < 3 or n % 2 == 0:
            raise ConfigError(f"{sec}.n: odd size >= 3 needed for a node at 0", key=f"{sec}.n")


def parse_config(text: str, source: str = "<string>") -> ScenarioConfig:
    """Parse and validate scenario text.

    Raises
    ------
    ConfigError
        With ``key`` set to the dotted key at fault; TOML syntax errors
        carry the line and column in the message.
    """
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{source}: {exc}") from None
    for sec, table in raw.items():
        if sec in SECTION_KEYS:
            allowed = SECTION_KEYS[sec]
        elif sec in STEP_KEYS:
            allowed = STEP_KEYS[sec]
        else:
            raise ConfigError(f"{sec}: unknown section", key=sec)
        if not isinstance(table, dict):
            raise ConfigError(f"{sec}: expected a section", key=sec)
        _check_keys(table, allowed, sec)

    scen = raw.get("scenario", {})
    name = _get(scen, "name", str, "scenario.name", required=True)
    steps = _get(scen, "steps", list, "scenario.steps", required=True)
    seed = _get(scen, "seed", int, "scenario.seed", 0)
    if not steps:
        raise ConfigError("scenario.steps: at least one step is required", key="scenario.steps")
    for s in steps:
        if s not in STEP_KEYS:
            raise ConfigError(f"scenario.steps: unknown step {s!r}", key="scenario.steps")

    grid = weight = op = None
    if "grid" in raw or _NEEDS_GRID & set(steps):
        grid = _build_grid(raw.get("grid", {}))
    if "weight" in raw or {"solve", "abp"} & set(steps):
        weight = _build_weight(raw.get("weight", {}))
    op = _build_operator(raw.get("operator", {}))
    if "solve" in steps and op.kind == "hjb" and op.matrices[0].shape[0] != grid.d:
        raise ConfigError("operator.matrices: size does not match grid.d",
                          key="operator.matrices")
    if "exponent" in steps and "solve" not in steps and "u" not in raw.get("exponent", {}):
        raise ConfigError("exponent.u: needed when no solve step precedes the estimate",
                          key="exponent.u")
    if "abp" in steps and grid is None:
        raise ConfigError("grid: the abp step needs a [grid] section", key="grid")
    d = grid.d if grid is not None else 1
    for s in steps:
        _validate_step(s, raw.get(s, {}), d)
    out = raw.get("output", {})
    out_dir = _get(out, "dir", str, "output.dir")
    return ScenarioConfig(name, tuple(steps), seed, raw, source, grid, weight, op, out_dir)


def load_config(path, seed: int | None = None) -> ScenarioConfig:
    """Read a scenario file; ``seed`` overrides ``scenario.seed``."""
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read ({exc.strerror})") from None
    cfg = parse_config(text, str(p))
    return cfg if seed is None else cfg.with_seed(seed)
