"""Scenario execution: steps, assertions, manifests and bundled suites."""

from __future__ import annotations

import csv
import io
import json
import math
import time
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from . import __version__
from .config import ScenarioConfig, load_config, parse_config
from .envelopes import EnvelopeParams, envelope_audit
from .estimates import abp_estimate, build_barrier, verify_barrier
from .lattice import Field, WeightSpec, build_grid, sample_field, write_field_csv
from .operators import EllipticityPair
from .regularity import exponent_map
from .solver import (DirichletProblem, nonuniqueness_demo, regularization_ladder,
                     solve_dirichlet)

SUITES = {
    "sharp-1d": ("sharp-1d-a025", "sharp-1d-a050", "sharp-1d-a075"),
    "division": ("division",),
    "envelope-audit": ("envelope-audit",),
    "barrier": ("barrier",),
    "abp": ("abp",),
    "nonuniqueness": ("nonuniqueness",),
    "exponent-map-2d": ("exponent-map-2d",),
}
SUITES["all"] = tuple(c for k in list(SUITES) for c in SUITES[k])


@dataclass
class Assertion:
    name: str
    passed: bool
    value: float
    bound: object

    def to_dict(self) -> dict:
        v = self.value
        return {"name": self.name, "passed": bool(self.passed),
                "value": v if isinstance(v, (str, type(None))) else float(v),
                "bound": self.bound}


@dataclass
class StepResult:
    name: str
    status: str = "pending"   # pass | fail | error
    seconds: float = 0.0
    assertions: list = field(default_factory=list)
    files: list = field(default_factory=list)
    error: Optional[str] = None

    def check(self, name, passed, value, bound):
        self.assertions.append(Assertion(name, bool(passed), value, bound))

    def to_dict(self) -> dict:
        return {"name": self.name, "status": self.status, "seconds": round(self.seconds, 3),
                "assertions": [a.to_dict() for a in self.assertions],
                "files": list(self.files), "error": self.error}


@dataclass
class RunManifest:
    """Record of one scenario run.

    The config hash depends only on the parsed configuration, so reruns of
    an identical file share it; wall-clock times are the only
    run-dependent entries.
    """

    scenario: str
    config_hash: str
    version: str
    seed: int
    steps: list = field(default_factory=list)
    files: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return bool(self.steps) and all(s.status == "pass" for s in self.steps)

    @property
    def failed_step(self) -> Optional[str]:
        return next((s.name for s in self.steps if s.status != "pass"), None)

    def to_dict(self) -> dict:
        return {"scenario": self.scenario, "config_hash": self.config_hash,
                "version": self.version, "seed": self.seed, "passed": self.passed,
                "failed_step": self.failed_step,
                "steps": [s.to_dict() for s in self.steps], "files": list(self.files)}


def _write(out: Path, name: str, text: str, step: StepResult) -> None:
    path = out / name
    path.write_text(text)
    step.files.append(name)


def _csv(rows, header) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow(["%.17g" % v if isinstance(v, float) else v for v in r])
    return buf.getvalue()


def _json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, default=float) + "\n"


# -- steps ------------------------------------------------------------------

def _step_solve(cfg: ScenarioConfig, out: Path, ctx: dict, step: StepResult) -> None:
    t = cfg.section("solve")
    g = cfg.grid
    f = sample_field(t["f"], g)
    gfield = sample_field(t["g"], g)
    u0 = sample_field(t["u0"], g) if "u0" in t else None
    p = DirichletProblem(g, cfg.operator, cfg.weight, f, gfield,
                         tau=float(t.get("tau", 1.0)),
                         max_iters=int(t.get("max_iters", 100_000)),
                         tol=float(t["tol"]) if "tol" in t else None,
                         method=t.get("method", "howard"),
                         weight_rule=t.get("weight_rule", "hat"))
    sched = t.get("epsilon_schedule")
    ladder_tol = float(t.get("ladder_tol", 1e-3))
    if sched is not None:
        rep = regularization_ladder(p, [float(e) for e in sched], ladder_tol=ladder_tol, u0=u0)
    else:
        rep = solve_dirichlet(p, u0)
    summary = rep.to_dict()
    step.check("converged", rep.converged, rep.residual, rep.tol)
    if sched is not None and t.get("require_ladder", True):
        last = rep.differences[-1] if rep.differences else 0.0
        step.check("ladder_converged", rep.ladder_converged, last, ladder_tol)
    if sched is not None and t.get("compare_cold", False):
        cold = regularization_ladder(p, [float(e) for e in sched], ladder_tol=ladder_tol,
                                     u0=u0, warm_start=False)
        gap = float(np.max(np.abs(cold.solution.values - rep.solution.values)))
        summary["cold_start_gap"] = gap
        step.check("warm_cold_agree", cold.converged and gap <= 2 * rep.tol, gap, 2 * rep.tol)
    if "exact" in t:
        exact = sample_field(t["exact"], g)
        err = float(np.max(np.abs(rep.solution.values - exact.values)))
        summary["max_error"] = err
        bound = float(t.get("max_error", 1e-2))
        step.check("max_error", err <= bound, err, bound)
    ctx["solution"] = rep.solution
    _write(out, "solve.json", _json(summary), step)
    buf = io.StringIO()
    write_field_csv(rep.solution, buf)
    _write(out, "solution.csv", buf.getvalue(), step)


def _step_exponent(cfg: ScenarioConfig, out: Path, ctx: dict, step: StepResult) -> None:
    t = cfg.section("exponent")
    u = ctx.get("solution")
    if "u" in t:
        u = sample_field(t["u"], cfg.grid)
    probes = [tuple(float(c) for c in p) for p in t["probes"]]
    emap = exponent_map(u, probes, rho=float(t.get("rho", 0.5)),
                        k_range=tuple(t.get("k_range", (1, 8))), r0=float(t.get("r0", 1.0)))
    for e, want in zip(emap.entries, t.get("expect", [])):
        label = "alpha@(" + ",".join("%g" % c for c in e.point) + ")"
        if e.error:
            step.check(label, False, e.error, want)
        elif want == "capped":
            step.check(label, e.capped, e.alpha, ">= 1 (capped)")
        else:
            lo, hi = float(want[0]), float(want[1])
            step.check(label, not e.capped and lo <= e.alpha <= hi, e.alpha, [lo, hi])
    _write(out, "exponent_map.csv", emap.to_csv(), step)


def piecewise_linear_field(grid, seed: int, pieces=(2, 6)) -> Field:
    """Seeded separable piecewise-linear field with values in ``[-1, 1]``.

    Each axis gets an interpolant through ``k`` random interior knots,
    ``k`` drawn from ``pieces``; the field is their sum divided by ``d``.
    """
    rng = np.random.default_rng(seed)
    total = np.zeros(grid.shape)
    for i, (lo, hi) in enumerate(grid.bounds):
        k = int(rng.integers(pieces[0], pieces[1] + 1))
        xs = np.sort(rng.uniform(lo, hi, k))
        ys = rng.uniform(-1.0, 1.0, k + 2)
        shape = [1] * grid.d
        shape[i] = -1
        vals = np.interp(grid.axes[i], np.r_[lo, xs, hi], ys)
        total = total + vals.reshape(shape)
    return Field(grid, total / grid.d)


def _step_envelope_audit(cfg: ScenarioConfig, out: Path, ctx: dict, step: StepResult) -> None:
    t = cfg.section("envelope_audit")
    g = cfg.grid
    seeds = list(t["seeds"])
    if cfg.seed != 0:
        # an explicit seed shifts the whole versioned seed list
        seeds = [cfg.seed + s for s in seeds]
    fac = float(t.get("eps_prime_factor", 2.0))
    pieces = tuple(t.get("pieces", (2, 6)))
    rows, reports = [], []
    for seed in seeds:
        u = piecewise_linear_field(g, seed, pieces)
        for eps in t["eps"]:
            eps = float(eps)
            audit = envelope_audit(u, EnvelopeParams.whole(g, eps), fac * eps)
            reports.append({"seed": seed, **audit.to_dict()})
            for name, c in audit.checks.items():
                rows.append((seed, eps, name, int(c.passed), float(c.worst_margin),
                             int(c.violations)))
    by_prop = {}
    for seed, eps, name, ok, margin, nv in rows:
        cur = by_prop.setdefault(name, [0, math.inf])
        cur[0] += nv
        cur[1] = min(cur[1], margin)
    for name, (nv, margin) in by_prop.items():
        step.check(f"{name}_violations", nv == 0, nv, 0)
    _write(out, "envelope_audit.json", _json(reports), step)
    _write(out, "envelope_audit.csv",
           _csv(rows, ["seed", "eps", "property", "passed", "worst_margin", "violations"]), step)


def _barrier_grid(d: int, h: float):
    # nonnegative orthant out to beyond |x| = 2 sqrt(d); phi is radial
    n = int(round((2.0 * math.sqrt(d) + 2 * h) / h)) + 1
    return build_grid(d, (0.0, (n - 1) * h), n)


def _step_barrier(cfg: ScenarioConfig, out: Path, ctx: dict, step: StepResult) -> None:
    t = cfg.section("barrier")
    lam = float(t.get("lambda", 1.0))
    h = float(t.get("h", 0.02))
    w = WeightSpec(float(t.get("a", 0.5)))
    tol = float(t.get("tol", 1e-6))
    rows, reports = [], []
    for d in t["dims"]:
        for Lam in t["Lambdas"]:
            b = build_barrier(int(d), EllipticityPair(lam, float(Lam)))
            rep = verify_barrier(b, w, _barrier_grid(int(d), h), tol=tol)
            equality = b.alpha == (d - 1) * Lam / lam - 1
            reports.append({"barrier": b.to_dict(), "equality_case": equality,
                            **rep.to_dict()})
            rows.append((int(d), lam, float(Lam), float(b.alpha), float(b.M1), float(b.M2),
                         int(equality), float(rep.max_outer), float(rep.C), int(rep.passed)))
            failed = [k for k, c in rep.checks.items() if not c["passed"]]
            step.check(f"barrier(d={d},Lambda={Lam:g})", rep.passed,
                       rep.max_outer, "all checks" if not failed else "failed: " + ",".join(failed))
    _write(out, "barrier.json", _json(reports), step)
    _write(out, "barrier.csv", _csv(rows, ["d", "lambda", "Lambda", "alpha", "M1", "M2",
                                           "equality_case", "max_outer", "C", "passed"]), step)


def _step_abp(cfg: ScenarioConfig, out: Path, ctx: dict, step: StepResult) -> None:
    t = cfg.section("abp")
    g0 = cfg.grid
    R = float(t["R"])
    s = float(t.get("scale", 3.7))
    expect = t.get("expect")
    rate_tol = float(t.get("rate_tol", 1.0))
    scale_tol = float(t.get("scale_tol", 1e-10))
    rows = []
    for n in t["ns"]:
        g = build_grid(g0.d, g0.bounds, int(n), g0.offset)
        u = sample_field(t["u"], g)
        f = sample_field(t["f"], g)
        r1 = abp_estimate(u, f, cfg.weight, R)
        r2 = abp_estimate(u.with_values(s * u.values), f.with_values(s * f.values),
                          cfg.weight, R)
        drift = abs(r1.C_hat - r2.C_hat)
        rows.append((int(n), float(g.h), r1.sup_neg, r1.integral, r1.C_hat, drift))
        step.check(f"scale_invariance(n={n})", drift <= scale_tol, drift, scale_tol)
        if expect is not None:
            err = abs(r1.C_hat - float(expect))
            step.check(f"C_hat_rate(n={n})", err <= rate_tol * g.h, err,
                       f"{rate_tol:g}*h")
    _write(out, "abp.csv", _csv(rows, ["n", "h", "sup_neg", "integral", "C_hat",
                                       "scale_drift"]), step)


def _step_nonuniqueness(cfg: ScenarioConfig, out: Path, ctx: dict, step: StepResult) -> None:
    t = cfg.section("nonuniqueness")
    a = float(t["a"])
    sp, sm = (float(v) for v in t["slopes"])
    eps = float(t.get("eps", 0.1))
    n = int(t.get("n", 257))
    node_tol = float(t.get("node_tol", 1e-12))
    rel_tol = float(t.get("rel_tol", 1e-8))
    rep = nonuniqueness_demo(a, sp, sm, eps=eps, n=n)
    step.check("node_residual", rep.node_max <= node_tol, rep.node_max, node_tol)
    rel = abs(rep.regularized_at_zero / rep.predicted_at_zero - 1.0)
    step.check("regularized_at_zero", rel <= rel_tol, rep.regularized_at_zero,
               rep.predicted_at_zero)
    # the regularized scheme keeps the linear function with these boundary values
    lin = nonuniqueness_demo(a, 0.5 * (sp - sm), -0.5 * (sp - sm), eps=eps, n=n)
    worst = max(lin.node_max, float(np.max(np.abs(lin.regularized_residual))))
    step.check("linear_control", worst <= node_tol, worst, node_tol)
    rows = list(zip(rep.t.tolist(), rep.node_residual.tolist(),
                    rep.regularized_residual.tolist()))
    _write(out, "nonuniqueness.csv", _csv(rows, ["t", "node_residual",
                                                 "regularized_residual"]), step)
    _write(out, "nonuniqueness.json", _json({
        "node_max": rep.node_max, "regularized_at_zero": rep.regularized_at_zero,
        "predicted_at_zero": rep.predicted_at_zero, "eps": eps, "a": a,
        "slopes": [sp, sm], "h": 2.0 / (n - 1)}), step)


STEPS: dict = {
    "solve": _step_solve,
    "exponent": _step_exponent,
    "envelope_audit": _step_envelope_audit,
    "barrier": _step_barrier,
    "abp": _step_abp,
    "nonuniqueness": _step_nonuniqueness,
}


def run_config(cfg: ScenarioConfig, out_dir, log: Optional[Callable] = None) -> RunManifest:
    """Execute the steps of a validated config and write ``manifest.json``.

    A step that raises is recorded with status ``error`` and stops the run;
    the manifest is written either way.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    man = RunManifest(cfg.name, cfg.config_hash, __version__, cfg.seed)
    ctx: dict = {}  # fields handed from one step to the next
    for name in cfg.steps:
        step = StepResult(name)
        man.steps.append(step)
        t0 = time.perf_counter()
        try:
            STEPS[name](cfg, out, ctx, step)
            step.status = "pass" if all(a.passed for a in step.assertions) else "fail"
        except Exception as exc:  # recorded, run stops here
            step.status = "error"
            step.error = f"{type(exc).__name__}: {exc}"
        step.seconds = time.perf_counter() - t0
        man.files.extend(step.files)
        if log is not None:
            log(cfg.name, step)
        if step.status == "error":
            break
    man.files.append("manifest.json")
    (out / "manifest.json").write_text(_json(man.to_dict()))
    return man


def run_scenario(path, out_dir=None, seed: Optional[int] = None,
                 log: Optional[Callable] = None) -> RunManifest:
    """Load, validate and run a scenario file."""
    cfg = load_config(path, seed)
    if out_dir is None:
        out_dir = cfg.out_dir or Path("degenlab-out") / cfg.name
    return run_config(cfg, out_dir, log)


def bundled_config(name: str, seed: Optional[int] = None) -> ScenarioConfig:
    """Parse one of the packaged scenario files by stem."""
    text = resources.files("degenlab").joinpath("scenarios", f"{name}.toml").read_text()
    cfg = parse_config(text, f"scenarios/{name}.toml")
    return cfg if seed is None else cfg.with_seed(seed)


def run_suite(name: str, out_dir, seed: Optional[int] = None,
              log: Optional[Callable] = None) -> list:
    """Run every bundled scenario of suite ``name``; returns the manifests.

    Raises
    ------
    KeyError
        ``name`` is not a known suite.
    """
    if name not in SUITES:
        raise KeyError(name)
    # validate the whole bundle before computing anything
    cfgs = [bundled_config(stem, seed) for stem in SUITES[name]]
    return [run_config(cfg, Path(out_dir) / stem, log)
            for stem, cfg in zip(SUITES[name], cfgs)]
