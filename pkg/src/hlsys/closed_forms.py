"""Exact solution families: the bubble, the singular power-law pair, and scaling."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicSpline

from .exponents import DomainError, ExponentConfig, InfeasibleError
from .radial_grid import RadialFunction, RadialGrid
from .riesz import RieszKernelTable, apply_riesz

BUBBLE_SPREAD_TOL = 1e-4
SINGULAR_FLATNESS_TOL = 1e-2


class ConformalityError(ValueError):
    """The operation needs p = q = (n+alpha)/(n-alpha)."""


class ResamplingWarning(UserWarning):
    pass


@dataclass
class BubbleParams:
    lam: float = 1.0
    center: np.ndarray | None = None
    c: float | None = None  # None means unnormalized (c = 1)

    def __post_init__(self):
        if not self.lam > 0.0:
            raise DomainError(f"bubble scale must be positive, got {self.lam}")

    @property
    def amplitude(self) -> float:
        return 1.0 if self.c is None else float(self.c)


def bubble_values(n: int, alpha: float, r, lam: float = 1.0, c: float = 1.0) -> np.ndarray:
    r = np.asarray(r, dtype=float)
    return c * (lam / (lam * lam + r * r)) ** ((n - alpha) / 2.0)


def bubble_profile(cfg: ExponentConfig, params: BubbleParams, grid: RadialGrid) -> RadialFunction:
    """c (lam / (lam^2 + r^2))^((n-alpha)/2) on the grid with its exact r^-(n-alpha) tail."""
    if not cfg.is_conformal:
        raise ConformalityError(f"bubble needs p = q = {cfg.conformal_exponent}, got p={cfg.p}, q={cfg.q}")
    n, a = cfg.n, cfg.alpha
    c = params.amplitude
    vals = bubble_values(n, a, grid.nodes, params.lam, c)
    return RadialFunction(
        grid, vals, n,
        tail_coefficient=c * params.lam ** ((n - a) / 2.0),
        tail_exponent=n - a,
        label="bubble",
        meta={"lam": params.lam, "c": c},
    )


@dataclass
class BubbleReport:
    ratio_mean: float
    ratio_spread: float
    annulus: tuple
    grid_meta: dict
    r: np.ndarray = field(repr=False)
    rho: np.ndarray = field(repr=False)
    threshold: float = BUBBLE_SPREAD_TOL

    @property
    def passed(self) -> bool:
        return self.ratio_spread <= self.threshold

    def to_dict(self) -> dict:
        return {
            "ratio_mean": self.ratio_mean,
            "ratio_spread": self.ratio_spread,
            "annulus": list(self.annulus),
            "grid_meta": self.grid_meta,
            "threshold": self.threshold,
            "passed": self.passed,
        }


def ratio_report(u: RadialFunction, table: RieszKernelTable, p: float, r_hi: float | None = None,
                 threshold: float = BUBBLE_SPREAD_TOL) -> BubbleReport:
    """rho(r) = I(u^p)(r) / u(r) over [0, r_hi]; spread is (max - min) / mean."""
    grid = u.grid
    r_hi = grid.R_max / 2.0 if r_hi is None else r_hi
    Iu = apply_riesz(table, u.power(p))
    mask = grid.nodes <= r_hi * (1 + 1e-14)
    rho = Iu.values[mask] / u.values[mask]
    mean = float(np.mean(rho))
    spread = float((rho.max() - rho.min()) / mean)
    return BubbleReport(mean, spread, (0.0, r_hi), {**grid.meta(), "n": table.n, "alpha": table.alpha,
                                                   "basis": table.basis},
                        grid.nodes[mask], rho, threshold)


def verify_bubble(cfg: ExponentConfig, grid: RadialGrid, table: RieszKernelTable,
                  params: BubbleParams | None = None, threshold: float = BUBBLE_SPREAD_TOL) -> BubbleReport:
    """Check that I(u_b^p) / u_b is constant on [0, R_max/2]."""
    params = params or BubbleParams()
    u = bubble_profile(cfg, params, grid)
    return ratio_report(u, table, cfg.p, threshold=threshold)


def exact_bubble_pair(cfg: ExponentConfig, grid: RadialGrid, table: RieszKernelTable,
                      lam: float = 1.0, rho: float | None = None) -> tuple[RadialFunction, RadialFunction]:
    """Bubble scaled so that u = I(u^p) exactly; rho defaults to the measured ratio mean."""
    if rho is None:
        rho = verify_bubble(cfg, grid, table, BubbleParams(lam=lam)).ratio_mean
    c = rho ** (-1.0 / (cfg.p - 1.0))
    u = bubble_profile(cfg, BubbleParams(lam=lam, c=c), grid)
    return u, u.replace()


# ---------------------------------------------------------------------------
# singular solutions


@dataclass
class SingularPair:
    c_u: float
    c_v: float
    u_exponent: float
    v_exponent: float

    def to_dict(self) -> dict:
        return {"c_u": self.c_u, "c_v": self.c_v, "u_exponent": self.u_exponent,
                "v_exponent": self.v_exponent}


def power_profile(grid: RadialGrid, n: int, c: float, exponent: float, label: str = "") -> RadialFunction:
    """c s^-exponent with node 0 clipped to the node-1 value."""
    vals = np.empty_like(grid.nodes)
    vals[1:] = c * grid.nodes[1:] ** (-exponent)
    vals[0] = vals[1]
    return RadialFunction(grid, vals, n, tail_coefficient=c, tail_exponent=exponent,
                          clipped=True, label=label)


def singular_profiles(cfg: ExponentConfig, grid: RadialGrid, c_u: float = 1.0,
                      c_v: float = 1.0) -> tuple[RadialFunction, RadialFunction]:
    return (power_profile(grid, cfg.n, c_u, cfg.u_exponent, "u_singular"),
            power_profile(grid, cfg.n, c_v, cfg.v_exponent, "v_singular"))


def singular_annulus(grid: RadialGrid) -> tuple[float, float]:
    return grid.R_max / 20.0, grid.R_max / 4.0


def _ratio_constant(table: RieszKernelTable, grid: RadialGrid, n: int, src_exp: float,
                    out_exp: float, annulus: tuple) -> tuple[float, float]:
    src = power_profile(grid, n, 1.0, src_exp)
    I = apply_riesz(table, src, refit=False).values
    r = grid.nodes
    m = (r >= annulus[0]) & (r <= annulus[1])
    ratio = I[m] * r[m] ** out_exp
    mean = float(ratio.mean())
    return mean, float((ratio.max() - ratio.min()) / mean)


def singular_pair(cfg: ExponentConfig, grid: RadialGrid, table: RieszKernelTable,
                  flatness_tol: float = SINGULAR_FLATNESS_TOL) -> tuple[SingularPair, dict]:
    """Measure the constants making (c_u s^-n/(p+1), c_v s^-n/(q+1)) solve the system."""
    from .solver import system_residual

    n, p, q = cfg.n, cfg.p, cfg.q
    ann = singular_annulus(grid)
    # I(s^-np/(p+1)) = gamma_u s^-n/(q+1); I(s^-nq/(q+1)) = gamma_v s^-n/(p+1)
    gu, flat_u = _ratio_constant(table, grid, n, n * p / (p + 1.0), cfg.v_exponent, ann)
    gv, flat_v = _ratio_constant(table, grid, n, n * q / (q + 1.0), cfg.u_exponent, ann)
    if flat_u > flatness_tol or flat_v > flatness_tol:
        raise InfeasibleError(
            f"ratio constants not flat on the annulus (spreads {flat_u:.2e}, {flat_v:.2e})"
        )
    c_u = (gv * gu**q) ** (1.0 / (1.0 - p * q))
    c_v = gu * c_u**p
    pair = SingularPair(c_u, c_v, cfg.u_exponent, cfg.v_exponent)
    u, v = singular_profiles(cfg, grid, c_u, c_v)
    res = system_residual(cfg, table, u, v, inner=ann[0])
    report = {
        "pair": pair.to_dict(),
        "gamma_u": gu,
        "gamma_v": gv,
        "flatness_u": flat_u,
        "flatness_v": flat_v,
        "annulus": list(ann),
        "residual": res,
        "grid_meta": grid.meta(),
    }
    return pair, report


# ---------------------------------------------------------------------------
# scaling


def _resample(f: RadialFunction, lam: float, amp: float) -> RadialFunction:
    grid = f.grid
    x = lam * grid.nodes
    R = grid.R_max
    spline = CubicSpline(grid.nodes, f.values, bc_type=((1, 0.0), "not-a-knot"))
    inside = x <= R
    vals = np.empty_like(x)
    vals[inside] = spline(x[inside])
    if np.any(~inside):
        vals[~inside] = f.tail_coefficient * x[~inside] ** (-f.tail_exponent)
    vals = amp * np.maximum(vals, 0.0)
    out = f.replace(
        values=vals,
        tail_coefficient=amp * f.tail_coefficient * lam ** (-f.tail_exponent),
    )
    if f.clipped:
        out.values[0] = out.values[1]
    return out


def scale_transform(pair: tuple[RadialFunction, RadialFunction], cfg: ExponentConfig,
                    lam: float) -> tuple[RadialFunction, RadialFunction]:
    """u'(r) = lam^(n/(p+1)) u(lam r), v'(r) = lam^(n/(q+1)) v(lam r)."""
    if not lam > 0.0:
        raise DomainError(f"scale must be positive, got {lam}")
    u, v = pair
    if lam == 1.0:
        return u.replace(), v.replace()
    if lam > 1.0:
        for f in (u, v):
            if not f.has_tail or not f.seam_ok():
                warnings.warn(
                    f"scale {lam} reads beyond R_max/{lam:g} where the tail model of "
                    f"{f.label or 'profile'} is not validated", ResamplingWarning, stacklevel=2)
    return (_resample(u, lam, lam**cfg.u_exponent), _resample(v, lam, lam**cfg.v_exponent))
