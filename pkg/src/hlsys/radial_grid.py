"""Graded radial grids, piecewise-linear radial profiles and power-law tails."""

from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import gamma as gamma_fn

from .exponents import DomainError

SEAM_TOL = 0.05
TAIL_WINDOW_FRACTION = 0.2

_GL_X, _GL_W = np.polynomial.legendre.leggauss(8)
_GL_X = 0.5 * (_GL_X + 1.0)
_GL_W = 0.5 * _GL_W


class FitError(ValueError):
    pass


class GridMismatchError(ValueError):
    pass


def sphere_area(n: int) -> float:
    """Surface area of the unit sphere in R^n."""
    return 2.0 * math.pi ** (n / 2.0) / float(gamma_fn(n / 2.0))


@dataclass(frozen=True, eq=False)
class RadialGrid:
    nodes: np.ndarray
    grading: float
    R_max: float

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=float)
        nodes.setflags(write=False)
        object.__setattr__(self, "nodes", nodes)
        if nodes[0] != 0.0 or np.any(np.diff(nodes) <= 0.0):
            raise DomainError("grid nodes must start at 0 and increase strictly")

    @property
    def M(self) -> int:
        return len(self.nodes) - 1

    @property
    def widths(self) -> np.ndarray:
        return np.diff(self.nodes)

    @property
    def cell_boundaries(self) -> np.ndarray:
        """Midpoint cells [0, m_0, ..., m_{M-1}, R_max]; cell i holds node i."""
        mids = 0.5 * (self.nodes[1:] + self.nodes[:-1])
        return np.concatenate([[0.0], mids, [self.R_max]])

    def weights(self, n: int) -> np.ndarray:
        """Quadrature weights sigma * int hat_i(s) s^(n-1) ds for piecewise-linear data."""
        r = self.nodes
        a, b = r[:-1], r[1:]
        h = b - a
        # int_a^b s^(n-1) (b-s)/h ds and int_a^b s^(n-1) (s-a)/h ds, exact
        m_n = (b**n - a**n) / n
        m_n1 = (b ** (n + 1) - a ** (n + 1)) / (n + 1)
        left = (b * m_n - m_n1) / h
        right = (m_n1 - a * m_n) / h
        w = np.zeros_like(r)
        w[:-1] += left
        w[1:] += right
        return sphere_area(n) * w

    def meta(self) -> dict:
        return {"R_max": self.R_max, "M": self.M, "grading": self.grading}

    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.nodes).tobytes())
        return h.hexdigest()[:16]

    def same_as(self, other: "RadialGrid") -> bool:
        return self is other or (
            len(self.nodes) == len(other.nodes) and np.array_equal(self.nodes, other.nodes)
        )


def make_grid(R_max: float, M: int, grading: float = 2.0) -> RadialGrid:
    """Nodes r_i = R_max (i/M)^grading, i = 0..M."""
    if not R_max > 0.0:
        raise DomainError(f"R_max must be positive, got {R_max}")
    if int(M) != M or M < 1:
        raise DomainError(f"M must be a positive integer, got {M}")
    if grading < 1.0:
        raise DomainError(f"grading must be >= 1, got {grading}")
    i = np.arange(M + 1, dtype=float)
    nodes = R_max * (i / M) ** grading
    nodes[-1] = R_max
    return RadialGrid(nodes=nodes, grading=float(grading), R_max=float(R_max))


@dataclass(eq=False)
class RadialFunction:
    """Nodal values on a radial grid plus a tail A s^-gamma beyond R_max."""

    grid: RadialGrid
    values: np.ndarray
    n: int
    tail_coefficient: float = 0.0
    tail_exponent: float = 1.0
    clipped: bool = False
    label: str = ""
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != self.grid.nodes.shape:
            raise GridMismatchError("values must have one entry per grid node")
        if not np.all(np.isfinite(self.values)):
            raise DomainError("profile values must be finite")
        if np.any(self.values < 0.0):
            raise DomainError("profile values must be nonnegative")
        if self.tail_coefficient < 0.0 or self.tail_exponent <= 0.0:
            raise DomainError("tail needs A >= 0 and gamma > 0")

    @property
    def has_tail(self) -> bool:
        return self.tail_coefficient > 0.0

    def seam_error(self) -> float:
        """Relative mismatch between the last node value and the tail model at R_max."""
        if not self.has_tail:
            return 0.0
        last = self.values[-1]
        model = self.tail_coefficient * self.grid.R_max ** (-self.tail_exponent)
        if last == 0.0:
            return math.inf
        return abs(last - model) / last

    def seam_ok(self) -> bool:
        return self.seam_error() <= SEAM_TOL

    def __call__(self, r) -> np.ndarray:
        r = np.asarray(r, dtype=float)
        inside = np.interp(r, self.grid.nodes, self.values)
        if not self.has_tail:
            return np.where(r <= self.grid.R_max, inside, 0.0)
        with np.errstate(divide="ignore"):
            tail = self.tail_coefficient * np.power(np.maximum(r, self.grid.R_max), -self.tail_exponent)
        return np.where(r <= self.grid.R_max, inside, tail)

    def replace(self, values=None, **kw) -> "RadialFunction":
        out = RadialFunction(
            grid=self.grid,
            values=self.values.copy() if values is None else values,
            n=self.n,
            tail_coefficient=self.tail_coefficient,
            tail_exponent=self.tail_exponent,
            clipped=self.clipped,
            label=self.label,
            meta=dict(self.meta),
        )
        for k, v in kw.items():
            setattr(out, k, v)
        return out

    def power(self, e: float) -> "RadialFunction":
        """Pointwise power with the tail transformed exactly."""
        return self.replace(
            values=self.values**e,
            tail_coefficient=self.tail_coefficient**e if self.has_tail else 0.0,
            tail_exponent=self.tail_exponent * e,
        )

    def scaled(self, c: float) -> "RadialFunction":
        return self.replace(
            values=c * self.values,
            tail_coefficient=c * self.tail_coefficient,
        )

    def sidecar(self) -> dict:
        return {
            "A": self.tail_coefficient,
            "gamma": self.tail_exponent,
            "R_max": self.grid.R_max,
            "n": self.n,
            "M": self.grid.M,
            "grading": self.grid.grading,
            "clipped": self.clipped,
        }


def _check_grid(f: RadialFunction, g: RadialFunction) -> None:
    if not f.grid.same_as(g.grid):
        raise GridMismatchError("profiles live on different grids")


def lp_norm(f: RadialFunction, exponent: float, radius: float | None = None, include_tail: bool = False) -> float:
    """L^exponent norm over the ball of the given radius, with f linear between nodes.

    ``include_tail`` adds the analytic tail contribution beyond R_max; it
    requires ``radius`` to be None and gamma*exponent > n.
    """
    if exponent < 1.0:
        raise DomainError(f"exponent must be >= 1, got {exponent}")
    grid = f.grid
    R = grid.R_max if radius is None else float(radius)
    if R > grid.R_max * (1 + 1e-14):
        raise DomainError(f"radius {R} exceeds R_max {grid.R_max}")
    total = _power_integral(grid.nodes, f.values, f.n, exponent, R)
    if include_tail and f.has_tail:
        ge = f.tail_exponent * exponent
        if ge <= f.n:
            return math.inf
        total += f.tail_coefficient**exponent * grid.R_max ** (f.n - ge) / (ge - f.n)
    return (sphere_area(f.n) * total) ** (1.0 / exponent)


def _power_integral(r: np.ndarray, vals: np.ndarray, n: int, e: float, R: float) -> float:
    k = int(np.searchsorted(r, R, side="right")) - 1
    k = min(k, len(r) - 2)
    a = r[: k + 1].copy()
    b = r[1 : k + 2].copy()
    fa = vals[: k + 1]
    fb = vals[1 : k + 2]
    # truncate the last cell at R
    frac = np.ones_like(a)
    frac[-1] = (R - a[-1]) / (b[-1] - a[-1])
    b_eff = a + frac * (b - a)
    s = a[:, None] + (b_eff - a)[:, None] * _GL_X[None, :]
    t = ((s - a[:, None]) / (b - a)[:, None])
    fs = fa[:, None] * (1.0 - t) + fb[:, None] * t
    integrand = np.abs(fs) ** e * s ** (n - 1)
    return float(np.sum((b_eff - a) * (integrand @ _GL_W)))


@dataclass
class TailFit:
    A: float
    gamma: float
    residual: float
    window: tuple


def fit_tail(f: RadialFunction, window: tuple | None = None, store: bool = True) -> TailFit:
    """Least-squares fit of log f against log s over nodes in ``window``."""
    grid = f.grid
    if window is None:
        window = ((1.0 - TAIL_WINDOW_FRACTION) * grid.R_max, grid.R_max)
    lo, hi = window
    if lo <= 0.0 or hi > grid.R_max * (1 + 1e-14) or lo >= hi:
        raise FitError(f"window {window} must lie in (0, R_max]")
    mask = (grid.nodes >= lo) & (grid.nodes <= hi)
    if mask.sum() < 4:
        raise FitError(f"fewer than 4 nodes in window {window}")
    y = f.values[mask]
    if np.any(y <= 0.0):
        raise FitError("nonpositive values in tail window")
    x = np.log(grid.nodes[mask])
    ly = np.log(y)
    slope, intercept = np.polyfit(x, ly, 1)
    resid = ly - (slope * x + intercept)
    fit = TailFit(A=float(math.exp(intercept)), gamma=float(-slope),
                  residual=float(np.sqrt(np.mean(resid**2))), window=(lo, hi))
    if store:
        if fit.gamma <= 0.0:
            raise FitError(f"fitted tail exponent {fit.gamma} is not a decay")
        f.tail_coefficient = fit.A
        f.tail_exponent = fit.gamma
    return fit


def from_callable(grid: RadialGrid, n: int, func, tail: tuple[float, float] | None = None,
                  label: str = "") -> RadialFunction:
    vals = np.asarray(func(grid.nodes), dtype=float)
    A, gam = tail if tail is not None else (0.0, 1.0)
    return RadialFunction(grid, vals, n, tail_coefficient=A, tail_exponent=gam, label=label)


def save_profile(f: RadialFunction, csv_path: str | Path) -> Path:
    """Write ``r,value`` CSV plus a JSON sidecar next to it."""
    csv_path = Path(csv_path)
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["r", "value"])
        for r, v in zip(f.grid.nodes, f.values):
            w.writerow([repr(float(r)), repr(float(v))])
    side = csv_path.with_suffix(".json")
    side.write_text(json.dumps(f.sidecar(), indent=2))
    return side


def load_profile(csv_path: str | Path, grid: RadialGrid | None = None) -> RadialFunction:
    csv_path = Path(csv_path)
    data = np.loadtxt(csv_path, delimiter=",", skiprows=1, ndmin=2)
    side = json.loads(csv_path.with_suffix(".json").read_text())
    nodes, vals = data[:, 0], data[:, 1]
    if grid is None:
        grid = RadialGrid(nodes=nodes, grading=float(side.get("grading", 1.0)), R_max=float(side["R_max"]))
    elif len(grid.nodes) != len(nodes) or not np.allclose(grid.nodes, nodes, rtol=1e-14, atol=0.0):
        # resample: linear inside the stored range, stored tail beyond it
        A, gam = float(side["A"]), float(side["gamma"])
        x = grid.nodes
        inside = np.interp(x, nodes, vals)
        with np.errstate(divide="ignore"):
            tail = A * np.power(np.maximum(x, nodes[-1]), -gam)
        vals = np.where(x <= nodes[-1], inside, tail)
    return RadialFunction(grid, vals, int(side["n"]), tail_coefficient=float(side["A"]),
                          tail_exponent=float(side["gamma"]), clipped=bool(side.get("clipped", False)))
