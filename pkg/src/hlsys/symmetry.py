"""Moving-plane diagnostics on Cartesian samples of radial profiles."""

from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np
from scipy.ndimage import map_coordinates

from .exponents import DomainError
from .radial_grid import RadialFunction

MONOTONE_TOL = 1e-9
DECAY_FRACTION = 0.01


class CoverageError(ValueError):
    pass


class NonDecayError(ValueError):
    pass


@dataclass(eq=False)
class CartesianField:
    """Values on origin + h * index, index in [0, extents) per axis.

    ``extension`` maps an (..., n) array of points to values and is used for
    queries outside the sampled box. ``uncovered`` marks cells whose values were
    copied from the base field because no extension was available.
    """

    n: int
    origin: np.ndarray
    h: float
    values: np.ndarray
    extension: Callable[[np.ndarray], np.ndarray] | None = None
    plateau_radius: float = 0.0
    uncovered: np.ndarray | None = None

    def __post_init__(self):
        self.origin = np.asarray(self.origin, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if self.n not in (2, 3) or self.values.ndim != self.n or self.origin.shape != (self.n,):
            raise DomainError("field must be 2-D or 3-D with a matching origin")
        if not self.h > 0.0:
            raise DomainError("spacing must be positive")
        if not np.all(np.isfinite(self.values)) or np.any(self.values < 0.0):
            raise DomainError("field values must be finite and nonnegative")

    @property
    def extents(self) -> tuple[int, ...]:
        return self.values.shape

    def axis_coords(self, axis: int) -> np.ndarray:
        return self.origin[axis] + self.h * np.arange(self.extents[axis])

    def upper(self) -> np.ndarray:
        return self.origin + self.h * (np.asarray(self.extents) - 1)

    def points(self) -> np.ndarray:
        axes = [self.axis_coords(k) for k in range(self.n)]
        return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)

    def interpolate(self, pts: np.ndarray) -> np.ndarray:
        """Multilinear interpolation inside the box; NaN outside."""
        pts = np.asarray(pts, dtype=float)
        idx = (pts - self.origin) / self.h
        flat = idx.reshape(-1, self.n).T
        out = map_coordinates(self.values, flat, order=1, mode="constant", cval=np.nan)
        inside = np.all((flat >= -1e-9) & (flat <= (np.asarray(self.extents)[:, None] - 1) + 1e-9), axis=0)
        out[~inside] = np.nan
        return out.reshape(pts.shape[:-1])


def sample_field(profile, center, lo=-4.0, hi=4.0, h: float = 0.05, n: int = 2) -> CartesianField:
    """Sample u(|x - center|) on the cube [lo, hi]^n with spacing h.

    ``profile`` is a RadialFunction (linear in radius, tail beyond R_max) or
    any callable of the radius. The profile itself is attached as the
    extension used for off-box reflections.
    """
    center = np.asarray(center, dtype=float)
    if center.shape != (n,):
        raise DomainError(f"center must have {n} coordinates")
    if np.any(center < lo) or np.any(center > hi):
        raise CoverageError(f"center {center.tolist()} outside the box [{lo}, {hi}]^{n}")
    count = int(round((hi - lo) / h)) + 1
    origin = np.full(n, float(lo))

    def ext(pts):
        return np.asarray(profile(np.linalg.norm(np.asarray(pts) - center, axis=-1)), dtype=float)

    axes = [origin[k] + h * np.arange(count) for k in range(n)]
    pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
    plateau = 0.0
    if isinstance(profile, RadialFunction) and profile.clipped:
        plateau = float(profile.grid.nodes[1])
    return CartesianField(n, origin, h, ext(pts), extension=ext, plateau_radius=plateau)


def _reflect_points(pts: np.ndarray, axis: int, lam: float) -> np.ndarray:
    out = np.array(pts, dtype=float, copy=True)
    out[..., axis] = 2.0 * lam - out[..., axis]
    return out


def reflect(field: CartesianField, axis: int, lam: float) -> CartesianField:
    """u_lam(x) = u(x with x[axis] replaced by 2 lam - x[axis]).

    Reflections landing on grid planes are exact index permutations. Off-box
    queries use the extension; without one they keep the base value and are
    flagged in ``uncovered``.
    """
    if not 0 <= axis < field.n:
        raise DomainError(f"axis {axis} out of range")
    h, o = field.h, field.origin[axis]
    m = field.extents[axis]
    shift = 2.0 * (lam - o) / h  # reflected index = shift - k
    k = np.arange(m)
    src = shift - k
    aligned = abs(shift - round(shift)) < 1e-9
    vals = np.moveaxis(field.values, axis, 0)
    out = np.empty_like(vals)
    missing = np.zeros(m, dtype=bool)
    if aligned:
        si = int(round(shift)) - k
        ok = (si >= 0) & (si < m)
        out[ok] = vals[si[ok]]
        missing = ~ok
    else:
        lo = np.floor(src).astype(int)
        t = src - lo
        ok = (lo >= 0) & (lo + 1 < m)
        tb = t[ok].reshape((-1,) + (1,) * (vals.ndim - 1))
        out[ok] = (1.0 - tb) * vals[lo[ok]] + tb * vals[lo[ok] + 1]
        missing = ~ok
    uncovered = np.zeros(field.extents, dtype=bool)
    if np.any(missing):
        pts = np.moveaxis(field.points(), axis, 0)[missing]
        if field.extension is not None:
            out[missing] = field.extension(_reflect_points(pts, axis, lam))
        else:
            out[missing] = vals[missing]
            np.moveaxis(uncovered, axis, 0)[missing] = True
    ext = None
    if field.extension is not None:
        base = field.extension
        ext = lambda pts, base=base: base(_reflect_points(pts, axis, lam))  # noqa: E731
    return CartesianField(field.n, field.origin.copy(), h, np.moveaxis(out, 0, axis), extension=ext,
                          plateau_radius=field.plateau_radius, uncovered=uncovered)


@dataclass
class BadSet:
    cells: np.ndarray
    measure: float
    uncovered: int

    @property
    def empty(self) -> bool:
        return len(self.cells) == 0


def bad_set(field: CartesianField, axis: int, lam: float, tol: float = MONOTONE_TOL,
            reflected: CartesianField | None = None) -> BadSet:
    """Cells with x[axis] < lam and u_lam(x) > u(x) + tol."""
    refl = reflect(field, axis, lam) if reflected is None else reflected
    coords = field.axis_coords(axis)
    shape = [1] * field.n
    shape[axis] = -1
    half = coords.reshape(shape) < lam
    unc = refl.uncovered if refl.uncovered is not None else np.zeros(field.extents, bool)
    mask = half & (refl.values > field.values + tol) & ~unc
    cells = np.argwhere(mask)
    return BadSet(cells, len(cells) * field.h**field.n, int(np.count_nonzero(half & unc)))


def write_bad_set(field: CartesianField, axis: int, lam: float, path: str | Path,
                  tol: float = MONOTONE_TOL) -> int:
    refl = reflect(field, axis, lam)
    bs = bad_set(field, axis, lam, tol, reflected=refl)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"x{k + 1}" for k in range(field.n)] + ["u", "u_lambda"])
        for idx in bs.cells:
            x = field.origin + field.h * idx
            w.writerow([*map(float, x), float(field.values[tuple(idx)]), float(refl.values[tuple(idx)])])
    return len(bs.cells)


def check_decay(field: CartesianField) -> float:
    """Largest boundary value over the field maximum; raises if above 1%.

    A field carrying an extension is judged on the extension far outside the
    box (100 half-widths), since reflections read values there and only decay
    at infinity is needed for the planes to start.
    """
    vmax = float(field.values.max())
    if vmax <= 0.0:
        raise NonDecayError("field vanishes identically")
    if field.extension is not None:
        lo, hi = field.origin, field.upper()
        mid, half = 0.5 * (lo + hi), 0.5 * (hi - lo)
        probes = np.array([mid + 100.0 * half * np.array(s) for s in itertools.product((-1.0, 1.0), repeat=field.n)]
                          + [mid + 100.0 * half[k] * np.eye(field.n)[k] * s for k in range(field.n) for s in (-1.0, 1.0)])
        edge = float(np.max(field.extension(probes)))
    else:
        v = field.values
        edge = max(float(np.max(np.take(v, [0, -1], axis=k))) for k in range(field.n))
    ratio = edge / vmax
    if ratio > DECAY_FRACTION:
        raise NonDecayError(f"boundary value is {ratio:.3g} of the maximum, above {DECAY_FRACTION}")
    return ratio


def _mirror(field: CartesianField, axis: int) -> CartesianField:
    """g(x) = u(x with x[axis] negated)."""
    origin = field.origin.copy()
    origin[axis] = -field.upper()[axis]
    ext = None
    if field.extension is not None:
        base = field.extension
        ext = lambda pts, base=base: base(_reflect_points(pts, axis, 0.0))  # noqa: E731
    unc = None if field.uncovered is None else np.flip(field.uncovered, axis)
    return CartesianField(field.n, origin, field.h, np.flip(field.values, axis).copy(), extension=ext,
                          plateau_radius=field.plateau_radius, uncovered=unc)


def empirical_lambda0(field: CartesianField, axis: int, tol: float = MONOTONE_TOL,
                      orientation: int = 1, check: bool = True) -> float:
    """Smallest sampled plane position past which every bad set is empty.

    Planes are sampled every h/2 so reflections map grid points to grid
    points. With ``orientation=-1`` the plane moves in from the opposite side
    and the returned position is in the original coordinates.
    """
    if check:
        check_decay(field)
    if orientation == -1:
        return -empirical_lambda0(_mirror(field, axis), axis, tol, 1, check=False)
    lo, hi = field.origin[axis], field.upper()[axis]
    steps = int(round(2.0 * (hi - lo) / field.h))
    lams = lo + 0.5 * field.h * np.arange(steps, -1, -1)
    best = hi
    for lam in lams:
        if not bad_set(field, axis, float(lam), tol).empty:
            break
        best = float(lam)
    return best


def _ray_directions(n: int) -> list[np.ndarray]:
    dirs = [s * np.eye(n)[k] for k in range(n) for s in (1.0, -1.0)]
    dirs += [np.array(s) / math.sqrt(n) for s in itertools.product((1.0, -1.0), repeat=n)]
    return dirs


def center_and_monotonicity_report(field: CartesianField, tol: float = MONOTONE_TOL) -> dict:
    """Locate the symmetry center by moving planes, then test strict radial decrease along rays."""
    check_decay(field)
    planes = []
    center = np.empty(field.n)
    for k in range(field.n):
        up = empirical_lambda0(field, k, tol, 1, check=False)
        down = empirical_lambda0(field, k, tol, -1, check=False)
        planes.append({"axis": k, "from_above": up, "from_below": down})
        center[k] = 0.5 * (up + down)
    lo, hi = field.origin, field.upper()
    worst = -math.inf
    worst_at = None
    for d in _ray_directions(field.n):
        # diagonal steps of h*sqrt(n) stay on grid points when the center is one
        step = field.h * (math.sqrt(field.n) if np.count_nonzero(d) > 1 else 1.0)
        # largest t keeping center + t d inside the box
        with np.errstate(divide="ignore", invalid="ignore"):
            tmax = np.min(np.where(d > 0, (hi - center) / d, np.where(d < 0, (lo - center) / d, np.inf)))
        t = np.arange(0.0, tmax + 1e-12, step)
        t = t[t > field.plateau_radius]
        if len(t) < 2:
            continue
        pts = center[None, :] + t[:, None] * d[None, :]
        vals = field.interpolate(pts)
        inc = np.diff(vals)
        j = int(np.nanargmax(inc))
        if inc[j] > worst:
            worst = float(inc[j])
            worst_at = pts[j + 1].tolist()
    return {
        "center": center.tolist(),
        "center_error_bar": field.h,
        "planes": planes,
        "radial_decrease": bool(worst < -tol),
        "worst_violation": worst,
        "worst_violation_at": worst_at,
        "tol": tol,
    }


def theta_inequality_check(theta: float, a: float, b: float, c: float) -> bool:
    """(a+c)^theta - (b+c)^theta <= a^theta - b^theta for 0 < theta <= 1, a >= b >= 0, c >= 0."""
    if not (0.0 < theta <= 1.0 and a >= b >= 0.0 and c >= 0.0):
        raise DomainError(f"need 0 < theta <= 1, a >= b >= 0, c >= 0; got {(theta, a, b, c)}")
    lhs = (a + c) ** theta - (b + c) ** theta
    rhs = a**theta - b**theta
    # rounding slack scaled to the largest power involved
    return bool(lhs <= rhs + 1e-12 * max(1.0, (a + c) ** theta))
