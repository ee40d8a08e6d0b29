"""Experiment configs and the run pipeline: solve, extract Gamma, analyze, write artifacts."""

from __future__ import annotations

import csv
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Callable

import numpy as np

from . import manufactured
from .freeboundary import FreeBoundary, extract_gamma, jump_condition_survey
from .grid import Grid2D, ScalarField2D, make_grid, sample, write_field_csv
from .manufactured import ExactSolution
from .operators import BellmanProblem, SmoothedNonlinearity
from .regularity import (
    SeminormReport,
    blowup_classify,
    c21_seminorm,
    dyadic_decay_check,
    dyadic_radii,
    fit_cubic_expansion,
    lipschitz_seminorm,
)
from .solver import (
    SolveOutcome,
    second_derivative_field,
    smoothed_residual_max,
    solve_policy_iteration,
    solve_smoothed,
)
from .twophase import (
    ComparisonFunction,
    FluxLaw,
    TwoPlaneSolution,
    dominating_shift,
    g_profile_solve,
    maximum_principle_check,
    parabolic_window_radius,
    subsolution_check,
    sufficient_parabolic_constant,
)

logger = logging.getLogger(__name__)

SCHEMA_VERSION = "1.0"
ANALYSES = ("seminorms", "jump_survey", "blowup", "expansion", "decay")
MANUFACTURED_KINDS = ("manufactured_cubic", "tilted_cubic", "glued_cubic", "quadratic_saddle", "bilinear")
DEFAULT_PARAMS: dict[str, Any] = {
    "window": 0.5,  # sup-distance from the center for surveyed Gamma vertices
    "seminorm_radius": 0.5,
    "blowup_points": 10,
    "blowup_window": 0.25,
    "blowup_r_max": 0.25,
    "fit_tol": 0.05,
    "b_floor": 0.02,
    "flux_tol": 0.1,
    "expansion_r_max": 0.25,
    "decay_r_max": 0.5,
    "alpha_probe": 0.5,
    "noise_floor": "auto",
    "band_tol": "auto",  # |u| below this counts as zero; auto = 10 * residual_max
}


class ConfigError(ValueError):
    """Invalid experiment configuration (reported before any compute)."""


class StageError(RuntimeError):
    def __init__(self, stage: str, exc: BaseException):
        super().__init__(f"stage '{stage}' failed: {exc}")
        self.stage = stage
        self.original = exc


# --- configuration ---------------------------------------------------------


@dataclass
class ExperimentConfig:
    n: int = 129
    half_width: float = 1.0
    center: list[float] = field(default_factory=lambda: [0.0, 0.0])
    m: float | None = None
    A1: list[list[float]] | None = None
    A2: list[list[float]] | None = None
    boundary: dict[str, Any] = field(default_factory=lambda: {"kind": "glued_cubic"})
    method: str = "policy_iteration"
    tol: float = 1e-8
    eps: float | None = None
    max_policy_updates: int = 50
    analyses: dict[str, bool] = field(default_factory=lambda: {k: True for k in ANALYSES})
    params: dict[str, Any] = field(default_factory=dict)
    out: str | None = None

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> ExperimentConfig:
        if not isinstance(d, dict):
            raise ConfigError("config must be a JSON object")
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {unknown}")
        cfg = cls(**d)
        cfg.check()
        return cfg

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def load(cls, path: str | Path) -> ExperimentConfig:
        try:
            with open(path) as fh:
                data = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        return cls.from_dict(data)

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def replace(self, **kw: Any) -> ExperimentConfig:
        d = self.to_dict()
        d.update(kw)
        return ExperimentConfig.from_dict(d)

    def check(self) -> None:
        """Cheap structural validation; ``prepare`` does the rest."""
        if not isinstance(self.n, int) or isinstance(self.n, bool):
            raise ConfigError(f"n must be an integer, got {self.n!r}")
        if self.n < 17 or self.n % 2 == 0:
            raise ConfigError(f"n must be odd and >= 17, got {self.n}")
        if not self.half_width > 0:
            raise ConfigError("half_width must be positive")
        if len(self.center) != 2:
            raise ConfigError("center must have two coordinates")
        if self.method not in ("policy_iteration", "smoothed"):
            raise ConfigError(f"unknown method {self.method!r}")
        if not self.tol > 0:
            raise ConfigError("tol must be positive")
        if self.method == "smoothed" and not (self.eps is not None and self.eps > 0):
            raise ConfigError("smoothed method needs eps > 0")
        bad = sorted(set(self.analyses) - set(ANALYSES))
        if bad:
            raise ConfigError(f"unknown analyses: {bad}")
        bad = sorted(set(self.params) - set(DEFAULT_PARAMS))
        if bad:
            raise ConfigError(f"unknown analysis params: {bad}")
        if not isinstance(self.boundary, dict) or "kind" not in self.boundary:
            raise ConfigError("boundary must be an object with a 'kind'")

    def param(self, key: str) -> Any:
        return self.params.get(key, DEFAULT_PARAMS[key])

    def enabled(self, analysis: str) -> bool:
        return bool(self.analyses.get(analysis, False))


_BOUNDARY_KEYS = {
    "manufactured_cubic": {"m", "b", "angle_deg"},
    "tilted_cubic": {"m", "b", "angle_deg"},
    "glued_cubic": {"m", "b", "rotation_deg"},
    "quadratic_saddle": {"m"},
    "bilinear": {"m"},
    "polynomial": {"terms"},
    "expression": {"expr"},
}


def _problem_cfg(cfg: ExperimentConfig) -> dict[str, Any] | None:
    if cfg.m is not None:
        if cfg.A1 is not None or cfg.A2 is not None:
            raise ConfigError("give either m or A1/A2, not both")
        return {"m": cfg.m}
    if cfg.A1 is not None or cfg.A2 is not None:
        return {"A1": cfg.A1, "A2": cfg.A2}
    return None


def polynomial_function(terms: list) -> Callable[[np.ndarray, np.ndarray], np.ndarray]:
    """``sum c x^p y^q`` from ``[[p, q, c], ...]``."""
    parsed = []
    for t in terms:
        if len(t) != 3 or int(t[0]) != t[0] or int(t[1]) != t[1] or t[0] < 0 or t[1] < 0:
            raise ConfigError(f"bad polynomial term {t!r}; expected [p, q, coefficient]")
        parsed.append((int(t[0]), int(t[1]), float(t[2])))

    def f(x1: np.ndarray, x2: np.ndarray) -> np.ndarray:
        out = np.zeros(np.broadcast(x1, x2).shape)
        for p, q, c in parsed:
            out = out + c * x1**p * x2**q
        return out

    return f


def expression_function(expr: str) -> Callable[[np.ndarray, np.ndarray], np.ndarray]:
    """Parse a closed-form expression in ``x, y`` (aliases ``x1, x2``) with sympy."""
    import sympy

    x, y = sympy.symbols("x y")
    try:
        e = sympy.sympify(expr, locals={"x1": x, "x2": y, "x": x, "y": y})
    except (sympy.SympifyError, TypeError, SyntaxError) as exc:
        raise ConfigError(f"cannot parse boundary expression {expr!r}: {exc}") from exc
    extra = e.free_symbols - {x, y}
    if extra:
        raise ConfigError(f"boundary expression has unknown symbols {sorted(map(str, extra))}")
    fn = sympy.lambdify((x, y), e, "numpy")
    return lambda x1, x2: np.broadcast_to(np.asarray(fn(x1, x2), float), np.broadcast(x1, x2).shape)


@dataclass(frozen=True)
class Prepared:
    grid: Grid2D
    problem: BellmanProblem
    boundary: ScalarField2D
    exact: ExactSolution | None
    law: FluxLaw | None


def _is_reduced(problem: BellmanProblem) -> bool:
    if problem.m is None:
        return False
    ref = BellmanProblem.reduced(problem.m)
    return np.allclose(problem.op1.matrix, ref.op1.matrix, atol=1e-14) and np.allclose(
        problem.op2.matrix, ref.op2.matrix, atol=1e-14
    )


def prepare(cfg: ExperimentConfig) -> Prepared:
    """Validate everything that can be validated without solving."""
    cfg.check()
    try:
        grid = make_grid(cfg.center, cfg.half_width, cfg.n)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    bcfg = dict(cfg.boundary)
    kind = bcfg.pop("kind")
    if kind not in _BOUNDARY_KEYS:
        raise ConfigError(f"unknown boundary kind {kind!r}")
    bad = sorted(set(bcfg) - _BOUNDARY_KEYS[kind])
    if bad:
        raise ConfigError(f"unknown keys {bad} for boundary kind {kind!r}")
    pcfg = _problem_cfg(cfg)
    exact = None
    try:
        if kind in MANUFACTURED_KINDS:
            if pcfg is not None and "m" in pcfg and "m" not in cfg.boundary:
                bcfg["m"] = pcfg["m"]
            exact = manufactured.from_config({"kind": kind, **bcfg})
            problem = exact.problem
            if pcfg is not None:
                given = BellmanProblem.from_config(pcfg)
                if not (
                    np.allclose(given.op1.matrix, problem.op1.matrix)
                    and np.allclose(given.op2.matrix, problem.op2.matrix)
                ):
                    raise ConfigError("problem does not match the manufactured boundary data")
            fn: Callable = exact
        else:
            if pcfg is None:
                raise ConfigError("boundary kind needs a problem: give m or A1/A2")
            problem = BellmanProblem.from_config(pcfg)
            if kind == "polynomial":
                fn = polynomial_function(bcfg.get("terms", []))
            else:
                fn = expression_function(str(bcfg.get("expr", "")))
        problem.op1.stencil()
        problem.op2.stencil()
        boundary = sample(fn, grid)
    except ConfigError:
        raise
    except (ValueError, KeyError, TypeError) as exc:
        raise ConfigError(str(exc)) from exc
    law = FluxLaw.bellman_reduced(problem.m) if _is_reduced(problem) else None
    needs_law = [a for a in ("jump_survey", "blowup", "decay", "expansion") if cfg.enabled(a)]
    if cfg.method == "smoothed" and law is None:
        raise ConfigError("the smoothed solver needs the reduced operator pair (give m)")
    if needs_law and law is None:
        raise ConfigError(f"analyses {needs_law} need the reduced operator pair (give m)")
    for a, key in (("blowup", "blowup_r_max"), ("decay", "blowup_r_max"), ("decay", "decay_r_max"),
                   ("expansion", "expansion_r_max")):
        if cfg.enabled(a) and not dyadic_radii(cfg.param(key), grid.h):
            raise ConfigError(f"{key}={cfg.param(key)} is below the 8h floor on this grid; refine or enlarge it")
    return Prepared(grid, problem, boundary, exact, law)


# --- run ---------------------------------------------------------------------


def _float(x: Any) -> Any:
    if isinstance(x, dict):
        return {k: _float(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_float(v) for v in x]
    if isinstance(x, np.ndarray):
        return _float(x.tolist())
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if math.isfinite(x) else str(x)
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, np.bool_):
        return bool(x)
    return x


def write_json(path: Path, obj: Any) -> None:
    with open(path, "w") as fh:
        json.dump(_float(obj), fh, indent=2, sort_keys=True)
        fh.write("\n")


@dataclass
class RunReport:
    config: dict[str, Any]
    sections: dict[str, Any] = field(default_factory=dict)
    timings: dict[str, float] = field(default_factory=dict)
    failed_stage: str | None = None
    fields: dict[str, ScalarField2D] = field(default_factory=dict, repr=False)
    gamma: FreeBoundary | None = field(default=None, repr=False)

    def to_dict(self) -> dict[str, Any]:
        out = {"schema_version": SCHEMA_VERSION, "config": self.config, **self.sections}
        if self.failed_stage is not None:
            out["failed_stage"] = self.failed_stage
        return _float(out)


def two_phase_field(v: ScalarField2D) -> ScalarField2D:
    """``u = v22`` for the reduced pair."""
    return second_derivative_field(v)


def _solve(cfg: ExperimentConfig, prep: Prepared) -> tuple[ScalarField2D, SolveOutcome | None, dict]:
    if cfg.method == "smoothed":
        nl = SmoothedNonlinearity(prep.problem.m, cfg.eps)
        v = solve_smoothed(nl, prep.boundary, tol=cfg.tol)
        return v, None, {"method": "smoothed", "eps": cfg.eps, "residual_max": smoothed_residual_max(nl, v)}
    out = solve_policy_iteration(
        prep.problem, prep.boundary, tol=cfg.tol, max_policy_updates=cfg.max_policy_updates
    )
    meta = {
        "method": "policy_iteration",
        "residual_max": out.residual_max,
        "policy_updates": out.policy_updates,
        "linear_solves": out.linear_iterations,
    }
    return out.v, out, meta


def _gamma_points(fb: FreeBoundary, grid: Grid2D, count: int, window: float) -> list[int]:
    """Indices of up to ``count`` Gamma vertices inside the window, evenly spaced."""
    V = fb.vertices()
    if not len(V):
        return []
    d = np.abs(V - np.asarray(grid.center)).max(axis=1)
    idx = np.flatnonzero(d <= window)
    if len(idx) <= count:
        return idx.tolist()
    pick = np.linspace(0, len(idx) - 1, count).round().astype(int)
    return idx[pick].tolist()


def _band_tol(cfg: ExperimentConfig, residual_max: float) -> float:
    bt = cfg.param("band_tol")
    return 10 * residual_max if bt == "auto" else float(bt)


def _noise_floor(cfg: ExperimentConfig, prep: Prepared, u: ScalarField2D) -> float:
    nf = cfg.param("noise_floor")
    if nf != "auto":
        return float(nf)
    if prep.exact is None:
        return 0.0
    X, Y = prep.grid.mesh()
    err = np.abs(u.values - prep.exact.u_field(X, Y))
    return float(np.nanmax(err))


def run(cfg: ExperimentConfig, out_dir: str | Path | None = None) -> RunReport:
    """Solve, then run every enabled analysis; artifacts go to ``out_dir`` if given.

    A failure in any stage is re-raised as :class:`StageError` after
    ``report.json`` has been written with the ``failed_stage`` marker.
    """
    prep = prepare(cfg)
    out = Path(out_dir or cfg.out) if (out_dir or cfg.out) else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    rep = RunReport(config=cfg.to_dict())
    stage = "solve"

    def flush() -> None:
        if out is not None:
            write_json(out / "report.json", rep.to_dict())
            write_json(out / "timings.json", rep.timings)

    try:
        t0 = time.perf_counter()
        v, outcome, meta = _solve(cfg, prep)
        rep.timings["solve"] = time.perf_counter() - t0
        meta["grid"] = {"n": prep.grid.n, "h": prep.grid.h, "half_width": prep.grid.half_width,
                        "center": list(prep.grid.center)}
        if prep.exact is not None:
            err = np.abs(v.values - prep.exact(*prep.grid.mesh()))
            meta["max_error_vs_exact"] = float(err.max())
        rep.sections["solve"] = meta
        rep.fields["v"] = v
        if out is not None:
            write_field_csv(v, out / "v.csv")
            if outcome is not None:
                write_field_csv(
                    ScalarField2D(prep.grid, outcome.policy.choice.astype(float)), out / "policy.csv"
                )
            write_json(out / "solve_meta.json", meta)

        if prep.law is None:
            flush()
            return rep
        stage = "free_boundary"
        t0 = time.perf_counter()
        u = two_phase_field(v)
        rep.fields["u"] = u
        fb = extract_gamma(u, _band_tol(cfg, meta["residual_max"]))
        rep.gamma = fb
        rep.sections["free_boundary"] = {
            "one_phase": fb.one_phase,
            "segments": len(fb.segments),
            "vertices": int(len(fb.vertices())),
            "degenerate_cells": fb.degenerate_cells,
        }
        if out is not None:
            write_field_csv(u, out / "u.csv")
            fb.write_csv(out / "gamma.csv")
        rep.timings["free_boundary"] = time.perf_counter() - t0
        _analyses(cfg, prep, rep, v, u, fb, out)
        stage = "done"
    except Exception as exc:  # noqa: BLE001 - surfaced with the stage name
        failed = getattr(exc, "_stage", stage)
        rep.failed_stage = failed
        flush()
        raise StageError(failed, exc) from exc
    rep.sections["regularity"] = _regularity_summary(rep, prep)
    if out is not None:
        write_json(out / "regularity_report.json", rep.sections["regularity"])
    flush()
    return rep


def _regularity_summary(rep: RunReport, prep: Prepared) -> dict[str, Any]:
    g = prep.grid
    out: dict[str, Any] = {"grid": {"n": g.n, "h": g.h, "half_width": g.half_width, "center": list(g.center)}}
    for key in ("seminorms", "blowup", "expansion", "decay"):
        if key in rep.sections:
            out[key] = rep.sections[key]
    return out


def _analyses(
    cfg: ExperimentConfig,
    prep: Prepared,
    rep: RunReport,
    v: ScalarField2D,
    u: ScalarField2D,
    fb: FreeBoundary,
    out: Path | None,
) -> None:
    g = prep.grid
    law = prep.law
    assert law is not None

    def timed(name: str, fn: Callable[[], Any]) -> Any:
        t0 = time.perf_counter()
        try:
            res = fn()
        except Exception as exc:
            exc._stage = name  # type: ignore[attr-defined]
            raise
        rep.timings[name] = time.perf_counter() - t0
        return res

    if cfg.enabled("seminorms"):
        r = cfg.param("seminorm_radius")

        def seminorms() -> dict:
            s = SeminormReport(lipschitz_seminorm(u, r), c21_seminorm(v, r), g.h, r)
            return asdict(s)

        rep.sections["seminorms"] = timed("seminorms", seminorms)

    if cfg.enabled("jump_survey"):

        def survey() -> dict:
            if fb.empty:
                if out is not None:
                    with open(out / "jump_survey.csv", "w") as fh:
                        fh.write("x,y,nu_x,nu_y,u_plus,u_minus,predicted_plus,relative_error,constrained\n")
                return {"one_phase": True, "vertices_measured": 0}
            sv = jump_condition_survey(u, fb, law, window=cfg.param("window"))
            if out is not None:
                sv.write_csv(out / "jump_survey.csv")
            return {"one_phase": False, **sv.summary()}

        rep.sections["jump_survey"] = timed("jump_survey", survey)

    points = _gamma_points(fb, g, cfg.param("blowup_points"), cfg.param("blowup_window"))
    blowups = []
    if cfg.enabled("blowup") or cfg.enabled("decay"):

        def classify() -> list:
            radii = dyadic_radii(cfg.param("blowup_r_max"), g.h)
            V = fb.vertices()
            return [
                blowup_classify(
                    u, V[k], law, radii,
                    fit_tol=cfg.param("fit_tol"),
                    b_floor=cfg.param("b_floor"),
                    flux_tol=cfg.param("flux_tol"),
                )
                for k in points
            ]

        blowups = timed("blowup", classify)
    if cfg.enabled("blowup"):
        if fb.empty:
            rep.sections["blowup"] = {"verdict": "one_phase", "reason": "empty free boundary", "points": []}
        else:
            verdicts = [bc.verdict for bc in blowups]
            rep.sections["blowup"] = {
                "counts": {k: verdicts.count(k) for k in ("two_plane", "one_phase", "unresolved")},
                "points": [bc.summary() for bc in blowups],
            }

    if cfg.enabled("expansion"):

        def expansion() -> dict:
            if fb.empty:
                return {"skipped": "empty free boundary"}
            V, N = fb.vertices(), fb.all_normals()
            k = int(np.argmin(np.abs(V - np.asarray(g.center)).max(axis=1)))
            radii = dyadic_radii(cfg.param("expansion_r_max"), g.h)
            fit = fit_cubic_expansion(v, V[k], N[k], radii, problem=prep.problem)
            return fit.summary()

        rep.sections["expansion"] = timed("expansion", expansion)

    if cfg.enabled("decay"):

        def decay() -> dict:
            floor = _noise_floor(cfg, prep, u)
            if fb.empty:
                return {"skipped": "empty free boundary", "noise_floor": floor}
            radii = dyadic_radii(cfg.param("decay_r_max"), g.h)
            checks = []
            for bc in blowups:
                p = bc.two_plane
                dc = dyadic_decay_check(
                    u, bc.x0, p, radii, alpha_probe=cfg.param("alpha_probe"), noise_floor=floor
                )
                checks.append((bc, dc))
            if out is not None:
                with open(out / "decay_table.csv", "w", newline="") as fh:
                    w = csv.writer(fh)
                    w.writerow(["r", "sup_diff", "ratio"])
                    if checks:
                        for row in checks[0][1].rows():
                            w.writerow([f"{x:.17g}" for x in row])
            return {
                "noise_floor": floor,
                "alpha_probe": cfg.param("alpha_probe"),
                "radii": radii,
                "points": [
                    {
                        "x0": list(bc.x0),
                        "p": None if bc.two_plane is None else "two_plane",
                        "sup_diff": dc.sup_diff,
                        "ratios": dc.ratios,
                        "growth_slope": dc.growth_slope,
                        "bounded": dc.bounded,
                    }
                    for bc, dc in checks
                ],
                "all_bounded": all(dc.bounded for _, dc in checks),
            }

        rep.sections["decay"] = timed("decay", decay)


# --- convergence study -------------------------------------------------------


@dataclass(frozen=True)
class ConvergenceTable:
    rows: list[dict[str, float]]
    exact: bool

    def orders(self, key: str) -> list[float]:
        return [r[f"order_{key}"] for r in self.rows[1:]]


def _order(e_coarse: float, e_fine: float) -> float:
    if e_coarse > 0 and e_fine > 0:
        return math.log2(e_coarse / e_fine)
    return float("nan")


def convergence_study(
    base: ExperimentConfig, n_list: list[int], out_dir: str | Path | None = None,
    exact_tol: float = 1e-10,
) -> ConvergenceTable:
    """Max-norm error of v and relative jump-ratio error for each n; orders between
    consecutive entries (``log2`` of the error ratio, i.e. per halving of h)."""
    if len(n_list) < 3:
        raise ConfigError("convergence study needs at least three grid sizes")
    if any(b <= a for a, b in zip(n_list, n_list[1:])):
        raise ConfigError("grid sizes must be increasing")
    base = base.replace(analyses={}, out=None)
    prep0 = prepare(base)
    if prep0.exact is None:
        raise ConfigError("convergence study needs manufactured boundary data")
    configs = [base.replace(n=int(n)) for n in n_list]
    for c in configs:
        prepare(c)
    exact = prep0.exact
    rows = []
    for c in configs:
        prep = prepare(c)
        v, _, meta = _solve(c, prep)
        err_v = float(np.max(np.abs(v.values - exact(*prep.grid.mesh()))))
        err_j = float("nan")
        if prep.law is not None and exact.has_interface:
            u = two_phase_field(v)
            fb = extract_gamma(u, _band_tol(c, meta["residual_max"]))
            if not fb.empty:
                sv = jump_condition_survey(u, fb, prep.law, window=c.param("window"))
                a, b = exact.jump_slopes
                err_j = abs(sv.median_ratio - a / b) / (a / b)
        rows.append({"n": c.n, "h": prep.grid.h, "err_v": err_v, "err_jump": err_j})
    for k, r in enumerate(rows):
        for key in ("v", "jump"):
            r[f"order_{key}"] = float("nan") if k == 0 else _order(rows[k - 1][f"err_{key}"], r[f"err_{key}"])
    is_exact = all(r["err_v"] <= exact_tol for r in rows)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "convergence.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["n", "h", "err_v", "order_v", "err_jump", "order_jump", "flag"])
            for r in rows:
                w.writerow(
                    [r["n"]]
                    + [f"{r[k]:.17g}" for k in ("h", "err_v", "order_v", "err_jump", "order_jump")]
                    + ["exact" if is_exact else ""]
                )
    return ConvergenceTable(rows, is_exact)


# --- comparison suite ----------------------------------------------------------

_COMPARISON_KEYS = {"m", "A1", "A2", "n", "eps", "deltas", "nu2sq", "gamma", "s", "trials", "mp_n"}


def parabolic_window(grid: Grid2D, C: float) -> np.ndarray:
    """Interior nodes of the ball where ``|x2 - x1^2| <= 1/(4C)`` is guaranteed."""
    X, Y = grid.mesh()
    r = parabolic_window_radius(C) if C > 0 else 0.5
    mask = np.hypot(X - grid.center[0], Y - grid.center[1]) <= r
    mask[0, :] = mask[-1, :] = mask[:, 0] = mask[:, -1] = False
    return mask


def maximum_principle_suite(
    m: float, trials: int = 100, seed: int = 0, n: int = 65
) -> dict[str, Any]:
    """Randomized ``(u, p, region)`` triples with ``p`` shifted to dominate ``u`` on
    the region boundary; counts interior violations beyond the tolerance.

    ``u`` comes from policy-iteration solves of tilted cubic data and the
    tolerance is twice that solve's max error in ``u``.
    """
    law = FluxLaw.bellman_reduced(m)
    grid = make_grid((0.0, 0.0), 1.0, n)
    X, Y = grid.mesh()
    pool = []
    for ang in (0.0, 15.0, -30.0):
        sol = manufactured.tilted_cubic(m, 1.0, np.deg2rad(ang))
        v = solve_policy_iteration(sol.problem, sample(sol, grid)).v
        u = second_derivative_field(v)
        err = float(np.nanmax(np.abs(u.values - sol.u_field(X, Y))))
        pool.append((u, 2 * err + 1e-12))
    rng = np.random.default_rng(seed)
    violations = 0
    not_dominated = 0
    worst = -np.inf
    for _ in range(trials):
        u, tol = pool[int(rng.integers(len(pool)))]
        th = rng.uniform(0.0, 2 * np.pi)
        p = TwoPlaneSolution.from_law(
            law, rng.uniform(0.2, 3.0), (np.cos(th), np.sin(th)), rng.uniform(-0.3, 0.3, 2)
        )
        c = rng.uniform(-0.4, 0.4, 2)
        region = np.hypot(X - c[0], Y - c[1]) <= rng.uniform(0.15, 0.5)
        region[0, :] = region[-1, :] = region[:, 0] = region[:, -1] = False
        direction = str(rng.choice(["below", "above"]))
        p = dominating_shift(u, p, region, direction)
        res = maximum_principle_check(u, p, region, tol, direction)
        not_dominated += not res.boundary_dominated
        violations += not res.holds
        worst = max(worst, res.worst_violation / tol)
    return {
        "trials": trials,
        "seed": seed,
        "violations": violations,
        "not_dominated": not_dominated,
        "worst_over_tol": worst,
    }


def comparison_suite(cfg: dict[str, Any], seed: int = 0) -> dict[str, Any]:
    """Margins of every comparison family, g-profile checks and the randomized
    maximum principle, as one JSON-ready report."""
    bad = sorted(set(cfg) - _COMPARISON_KEYS)
    if bad:
        raise ConfigError(f"unknown comparison config keys: {bad}")
    pcfg = {k: cfg[k] for k in ("m", "A1", "A2") if k in cfg}
    if not pcfg:
        raise ConfigError("comparison config needs m or A1/A2")
    try:
        problem = BellmanProblem.from_config(pcfg)
        grid = make_grid((0.0, 0.0), 1.0, int(cfg.get("n", 129)))
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    C = sufficient_parabolic_constant(problem)
    out: dict[str, Any] = {"C": C, "window_radius": parabolic_window_radius(C)}
    fams = {}
    for name, c in (
        ("phi_parabolic", ComparisonFunction.phi_parabolic(C)),
        ("phi_parabolic_C0", ComparisonFunction.phi_parabolic(0.0)),
        ("line_family", ComparisonFunction.line_family(float(cfg.get("s", 0.5)))),
    ):
        rep = subsolution_check(c, problem, grid, parabolic_window(grid, C))
        fams[name] = {"margins": rep.margins, "passed": rep.passed}
    if _is_reduced(problem):
        law = FluxLaw.bellman_reduced(problem.m)
        psi = ComparisonFunction.psi_twophase(C, float(cfg.get("gamma", 1.0)), law)
        rep = subsolution_check(psi, problem, grid, parabolic_window(grid, C), law)
        fams["psi_twophase"] = {
            "margins": rep.margins, "slope_margin": rep.slope_margin, "passed": rep.passed
        }
        m = problem.m
        eps = float(cfg.get("eps", 1e-4))
        profiles = []
        for nu2sq in cfg.get("nu2sq", [0.0, 0.5, float(np.cos(np.deg2rad(15.0)) ** 2), 1.0]):
            prof = g_profile_solve(m, nu2sq, 0.0, eps)
            pred = (1 - nu2sq) + m * nu2sq
            ratio = prof.slope_ratio()
            profiles.append(
                {"nu2sq": nu2sq, "delta": 0.0, "slope_ratio": ratio, "predicted": pred,
                 "relative_error": abs(ratio - pred) / pred}
            )
        for delta in cfg.get("deltas", [0.1, 0.5]):
            if delta <= 0:
                continue
            prof = g_profile_solve(m, 0.5, float(delta), eps)
            profiles.append(
                {"nu2sq": 0.5, "delta": delta,
                 "min_second_difference": float(prof.second_differences().min())}
            )
        out["g_profiles"] = profiles
        out["maximum_principle"] = maximum_principle_suite(
            m, int(cfg.get("trials", 100)), seed, int(cfg.get("mp_n", 65))
        )
    out["families"] = fams
    return _float(out)
