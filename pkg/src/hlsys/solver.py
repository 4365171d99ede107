"""Fixed-point solution of the coupled system and the contraction probe."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from scipy.optimize import minimize_scalar

from .exponents import DomainError, ExponentConfig
from .radial_grid import (
    FitError,
    GridMismatchError,
    RadialFunction,
    RadialGrid,
    _power_integral,
    fit_tail,
)
from .riesz import DivergenceError, RieszKernelTable, apply_riesz, build_kernel_table

OSCILLATION_RUN = 5
DECAY_RATIO = 0.01


class PreconditionError(ValueError):
    pass


class ParameterRelationError(ValueError):
    pass


@dataclass
class SolverSettings:
    max_iters: int = 200
    # the dilation mode drifts by ~3e-6 per step on M=2000 grids; tighter tol never triggers
    tol: float = 1e-5
    damping: float = 0.7
    normalization: str = "value-at-zero"  # or "lp-norm"

    def __post_init__(self):
        if not self.tol > 0.0:
            raise DomainError("tol must be positive")
        if not 0.0 < self.damping <= 1.0:
            raise DomainError("damping must lie in (0, 1]")
        if self.normalization not in ("value-at-zero", "lp-norm"):
            raise DomainError(f"unknown normalization {self.normalization!r}")
        if int(self.max_iters) != self.max_iters or self.max_iters < 1:
            raise DomainError("max_iters must be a positive integer")


@dataclass
class IterateRecord:
    iteration: int
    residual: float
    gamma_u: float
    gamma_v: float
    monotone: bool


@dataclass
class SolverReport:
    iterates: list[IterateRecord]
    residual: dict
    decay: dict
    converged: bool
    iterations: int
    damping_final: float
    multiplier: float
    amplitude: float

    def to_dict(self) -> dict:
        d = asdict(self)
        d["iterates"] = [asdict(r) for r in self.iterates]
        return d

    def write_history(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iter", "residual", "gamma_u", "gamma_v"])
            for r in self.iterates:
                w.writerow([r.iteration, repr(r.residual), repr(r.gamma_u), repr(r.gamma_v)])

    def write_json(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))


# ---------------------------------------------------------------------------
# residuals


def _region_norm(grid: RadialGrid, vals: np.ndarray, n: int, e: float, lo: float, hi: float) -> float:
    a = np.abs(vals)
    total = _power_integral(grid.nodes, a, n, e, hi) - _power_integral(grid.nodes, a, n, e, lo)
    return max(total, 0.0) ** (1.0 / e)


def _relative(diff: np.ndarray, ref: np.ndarray, other: np.ndarray) -> float:
    denom = max(np.max(np.abs(ref)), np.max(np.abs(other)))
    return float(np.max(np.abs(diff)) / denom) if denom > 0 else 0.0


def system_residual(cfg: ExponentConfig, table: RieszKernelTable, u: RadialFunction,
                    v: RadialFunction, inner: float | None = None) -> dict:
    """Relative residuals of u = I(v^q), v = I(u^p) on [inner, R_max/4].

    Each residual is divided by the larger of the two compared quantities so a
    vanishing profile gives order one rather than infinity. ``inner`` defaults
    to R_max/20 for clipped profiles and 0 otherwise.
    """
    if not (u.grid.same_as(v.grid) and u.grid.same_as(table.grid)):
        raise GridMismatchError("u, v and the kernel table must share one grid")
    grid = u.grid
    if inner is None:
        inner = grid.R_max / 20.0 if (u.clipped or v.clipped) else 0.0
    hi = grid.R_max / 4.0
    Iv = apply_riesz(table, v.power(cfg.q)).values
    Iu = apply_riesz(table, u.power(cfg.p)).values
    m = (grid.nodes >= inner) & (grid.nodes <= hi)
    sup_u = _relative(u.values[m] - Iv[m], u.values[m], Iv[m])
    sup_v = _relative(v.values[m] - Iu[m], v.values[m], Iu[m])
    n = cfg.n
    eu, ev = cfg.p + 1.0, cfg.q + 1.0
    du = _region_norm(grid, u.values - Iv, n, eu, inner, hi)
    dv = _region_norm(grid, v.values - Iu, n, ev, inner, hi)
    nu = max(_region_norm(grid, u.values, n, eu, inner, hi), _region_norm(grid, Iv, n, eu, inner, hi))
    nv = max(_region_norm(grid, v.values, n, ev, inner, hi), _region_norm(grid, Iu, n, ev, inner, hi))
    lp_u = du / nu if nu > 0 else 0.0
    lp_v = dv / nv if nv > 0 else 0.0
    return {
        "sup_u": sup_u,
        "sup_v": sup_v,
        "lp_u": lp_u,
        "lp_v": lp_v,
        "residual": max(sup_u, sup_v, lp_u, lp_v),
        "region": [inner, hi],
    }


def decay_check(u: RadialFunction, v: RadialFunction) -> dict:
    """Fitted tail exponents plus the check that values at R_max are below 1% of values at 0."""
    out = {}
    ok = True
    for name, f in (("u", u), ("v", v)):
        try:
            fit = fit_tail(f, store=False)
            gam = fit.gamma
        except FitError as exc:
            gam = float("nan")
            out[f"fit_error_{name}"] = str(exc)
        ratio = f.values[-1] / f.values[0] if f.values[0] > 0 else math.inf
        decays = bool(gam > 0.0)
        small = bool(ratio <= DECAY_RATIO)
        out[f"gamma_{name}"] = gam
        out[f"edge_ratio_{name}"] = float(ratio)
        out[f"tail_decays_{name}"] = decays
        out[f"small_at_edge_{name}"] = small
        ok = ok and decays and small
    out["passed"] = ok
    return out


# ---------------------------------------------------------------------------
# Picard iteration


def _normalize(f: RadialFunction, mode: str, p: float) -> tuple[RadialFunction, float]:
    if mode == "value-at-zero":
        s = f.values[0]
    else:
        s = _power_integral(f.grid.nodes, f.values, f.n, p + 1.0, f.grid.R_max) ** (1.0 / (p + 1.0))
    if not s > 0.0:
        raise PreconditionError("profile cannot be normalized (zero scale)")
    return f.scaled(1.0 / s), float(s)


def _gamma(f: RadialFunction) -> float:
    return f.tail_exponent if f.has_tail else float("nan")


def _mix(u: RadialFunction, w: RadialFunction, d: float) -> RadialFunction:
    new = u.replace(values=(1.0 - d) * u.values + d * w.values)
    try:
        fit_tail(new)
    except FitError:
        new.tail_coefficient, new.tail_exponent = w.tail_coefficient, w.tail_exponent
    return new


def _check_integrable(f: RadialFunction, e: float, alpha: float, name: str) -> None:
    if f.has_tail and f.tail_exponent * e <= alpha:
        raise DivergenceError(
            f"tail of {name}^{e:g} decays like s^-{f.tail_exponent * e:.4g}, not faster than s^-{alpha:g}"
        )


def _composed(cfg: ExponentConfig, table: RieszKernelTable, u: RadialFunction):
    _check_integrable(u, cfg.p, cfg.alpha, "u")
    v = apply_riesz(table, u.power(cfg.p))
    _check_integrable(v, cfg.q, cfg.alpha, "v")
    w = apply_riesz(table, v.power(cfg.q))
    return v, w


def picard_solve(cfg: ExponentConfig, grid: RadialGrid, table: RieszKernelTable, u0: RadialFunction,
                 settings: SolverSettings | None = None) -> tuple[RadialFunction, RadialFunction, SolverReport]:
    """Damped, normalized iteration of u -> I((I(u^p))^q).

    The normalized fixed point satisfies I(I(u^p)^q) = mu u. The returned pair
    is scaled by a = mu^(-1/(pq-1)), which solves the system exactly because the
    composed map is homogeneous of degree pq.
    """
    settings = settings or SolverSettings()
    if not u0.grid.same_as(grid) or not table.grid.same_as(grid):
        raise GridMismatchError("u0 and the kernel table must live on the given grid")
    if not np.any(u0.values > 0.0):
        raise PreconditionError("initial profile vanishes identically")
    p, q = cfg.p, cfg.q
    u, _ = _normalize(u0, settings.normalization, p)
    damping = settings.damping
    halved = False
    flips = 0
    history: list[IterateRecord] = []
    converged = False
    for k in range(1, settings.max_iters + 1):
        v, w = _composed(cfg, table, u)
        wn, _ = _normalize(w, settings.normalization, p)
        new = _mix(u, wn, damping)
        change = float(np.max(np.abs(new.values - u.values)) / np.max(np.abs(u.values)))
        history.append(IterateRecord(k, change, _gamma(new), _gamma(v),
                                     bool(np.all(np.diff(new.values) <= 0.0))))
        u = new
        if change < settings.tol:
            converged = True
            break
        if len(history) >= 3:
            a, b, c = (history[-3].residual, history[-2].residual, history[-1].residual)
            flips = flips + 1 if (b - a) * (c - b) < 0.0 else 0
            if flips >= OSCILLATION_RUN and not halved:
                damping *= 0.5
                halved = True
                flips = 0

    v, w = _composed(cfg, table, u)
    hi = grid.R_max / 4.0
    m = grid.nodes <= hi
    mu = float(np.dot(w.values[m], u.values[m]) / np.dot(u.values[m], u.values[m]))
    amp = mu ** (-1.0 / (p * q - 1.0))
    u_s = u.scaled(amp)
    v_s = v.scaled(amp**p)
    u_s.label, v_s.label = "u", "v"
    res = system_residual(cfg, table, u_s, v_s)
    report = SolverReport(
        iterates=history,
        residual=res,
        decay=decay_check(u_s, v_s),
        converged=converged,
        iterations=len(history),
        damping_final=damping,
        multiplier=mu,
        amplitude=amp,
    )
    return u_s, v_s, report


def fit_bubble_shape(u: RadialFunction, exponent: float, r_hi: float = 10.0) -> dict:
    """Fit (1 + r^2/c)^(-exponent) to u/u(0) on [0, r_hi] by minimizing the sup distance."""
    r = u.grid.nodes
    m = r <= r_hi
    y = u.values[m] / u.values[0]

    def dist(logc):
        return float(np.max(np.abs(y - (1.0 + r[m] ** 2 / math.exp(logc)) ** (-exponent))))

    best = minimize_scalar(dist, bounds=(math.log(1e-4), math.log(1e4)), method="bounded",
                           options={"xatol": 1e-10})
    return {"c_star": math.exp(best.x), "sup_distance": float(best.fun), "window": [0.0, r_hi]}


# ---------------------------------------------------------------------------
# contraction probe


@dataclass
class ProbeParams:
    alpha: float
    beta: float
    r: float
    a: float
    b: float
    R: float
    p: float | None = None

    def relation_gap(self, n: int) -> float:
        lhs = 1.0 / (self.r * self.a) + 1.0 / self.b
        rhs = self.alpha / (self.r * n) + self.beta / n
        return lhs - rhs

    def p_range(self, n: int) -> tuple[float, float]:
        """Open interval of L^p exponents with n/(n-beta) < p and alpha/n < r/p + 1/a < 1."""
        lo = max(n / (n - self.beta), self.r / (1.0 - 1.0 / self.a))
        slack = self.alpha / n - 1.0 / self.a
        hi = self.r / slack if slack > 0 else math.inf
        return lo, hi

    def norm_exponent(self, n: int) -> float:
        lo, hi = self.p_range(n)
        if self.p is not None:
            return float(self.p)
        return 2.0 * lo if 2.0 * lo < hi else 0.5 * (lo + hi)


def validate_probe(params: ProbeParams, n: int) -> None:
    if not (0 < params.alpha < n and 0 < params.beta < n):
        raise ParameterRelationError("alpha and beta must lie in (0, n)")
    if not (params.a > 1 and params.b > 1 and params.r >= 1):
        raise ParameterRelationError("need a, b > 1 and r >= 1")
    gap = params.relation_gap(n)
    if abs(gap) > 1e-12:
        raise ParameterRelationError(f"1/(ra) + 1/b - alpha/(rn) - beta/n = {gap:.3e}")
    lo, hi = params.p_range(n)
    pe = params.norm_exponent(n)
    if not lo < pe < hi:
        raise ParameterRelationError(f"norm exponent {pe} outside the admissible range ({lo}, {hi})")


def cubic_cutoff(r: np.ndarray, R: float) -> np.ndarray:
    """1 on [0, R/2], 0 beyond R, cubic smoothstep in between."""
    t = np.clip((np.asarray(r, dtype=float) - 0.5 * R) / (0.5 * R), 0.0, 1.0)
    return 1.0 - t * t * (3.0 - 2.0 * t)


@dataclass
class ContractionOperator:
    """phi -> eta * K_beta[V * (K_alpha[U |phi|^r])^(1/r)] on the ball of radius R."""

    params: ProbeParams
    inner: RieszKernelTable
    outer: RieszKernelTable
    U: np.ndarray
    V: np.ndarray
    eta: np.ndarray

    @property
    def grid(self) -> RadialGrid:
        return self.inner.grid

    def __call__(self, phi: np.ndarray) -> np.ndarray:
        r = self.params.r
        inner = self.inner.entries @ (self.U * np.abs(phi) ** r)
        return self.eta * (self.outer.entries @ (self.V * np.maximum(inner, 0.0) ** (1.0 / r)))

    def with_U(self, U: np.ndarray) -> "ContractionOperator":
        return ContractionOperator(self.params, self.inner, self.outer, np.asarray(U, float), self.V, self.eta)


def make_contraction_operator(params: ProbeParams, U: RadialFunction, V: RadialFunction,
                              eta: np.ndarray | None = None, jobs: int = 1,
                              tables: tuple[RieszKernelTable, RieszKernelTable] | None = None
                              ) -> ContractionOperator:
    n = U.n
    validate_probe(params, n)
    grid = U.grid
    if not grid.same_as(V.grid):
        raise GridMismatchError("U and V must share one grid")
    if abs(grid.R_max - params.R) > 1e-12 * params.R:
        raise DomainError(f"grid radius {grid.R_max} must equal the probe radius {params.R}")
    if tables is None:
        tables = (build_kernel_table((n, params.alpha), grid, jobs=jobs),
                  build_kernel_table((n, params.beta), grid, jobs=jobs))
    ka, kb = tables
    if ka.basis != "linear" or kb.basis != "linear":
        raise DomainError("the probe needs the nonnegative linear-basis tables")
    eta = cubic_cutoff(grid.nodes, params.R) if eta is None else np.asarray(eta, float)
    return ContractionOperator(params, ka, kb, U.values.copy(), V.values.copy(), eta)


def _ball_norm(grid: RadialGrid, vals: np.ndarray, n: int, e: float) -> float:
    return _power_integral(grid.nodes, np.abs(vals), n, e, grid.R_max) ** (1.0 / e)


def smallness(op: ContractionOperator, n: int) -> float:
    """||U||_a^(1/r) ||V||_b over B_R."""
    P, g = op.params, op.grid
    nu = _ball_norm(g, op.U, n, P.a) if math.isfinite(P.a) else float(np.max(op.U))
    nv = _ball_norm(g, op.V, n, P.b) if math.isfinite(P.b) else float(np.max(op.V))
    return nu ** (1.0 / P.r) * nv


def contraction_probe(op: ContractionOperator, phi: np.ndarray, psi: np.ndarray, n: int) -> dict:
    phi = np.asarray(phi, float)
    psi = np.asarray(psi, float)
    Tphi, Tpsi = op(phi), op(psi)
    Tdiff = op(np.abs(phi - psi))
    margin = float(np.min(Tdiff - np.abs(Tphi - Tpsi)))
    pe = op.params.norm_exponent(n)
    num = _ball_norm(op.grid, Tphi - Tpsi, n, pe)
    den = _ball_norm(op.grid, phi - psi, n, pe)
    return {
        "domination_margin": margin,
        "lipschitz_ratio": num / den if den > 0 else 0.0,
        "norm_exponent": pe,
        "smallness": smallness(op, n),
    }


def lipschitz_sweep(op: ContractionOperator, pairs, amplitudes, n: int) -> dict:
    """Max Lipschitz ratio over ``pairs`` with U scaled by each amplitude.

    Also reports the smallness value where the ratio crosses 1/2, found by
    log-log interpolation between sampled amplitudes.
    """
    rows = []
    for amp in amplitudes:
        scaled = op.with_U(amp * op.U)
        ratio = max(contraction_probe(scaled, a, b, n)["lipschitz_ratio"] for a, b in pairs)
        rows.append({"amplitude": float(amp), "smallness": smallness(scaled, n), "lipschitz_ratio": ratio})
    rows.sort(key=lambda d: d["smallness"])
    threshold = None
    for lo, hi in zip(rows, rows[1:]):
        if lo["lipschitz_ratio"] <= 0.5 <= hi["lipschitz_ratio"] and hi["lipschitz_ratio"] > lo["lipschitz_ratio"]:
            x0, x1 = math.log(lo["smallness"]), math.log(hi["smallness"])
            y0, y1 = math.log(lo["lipschitz_ratio"]), math.log(hi["lipschitz_ratio"])
            threshold = math.exp(x0 + (math.log(0.5) - y0) * (x1 - x0) / (y1 - y0))
            break
    return {"rows": rows, "threshold_smallness": threshold}
