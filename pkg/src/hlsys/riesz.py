"""Radial Riesz potential I_alpha f(x) = int f(y) |x-y|^(alpha-n) dy.

For radial f the potential reduces to a one-dimensional weakly singular
integral against the spherical mean kernel

    k(r, s) = sigma_{n-2} int_0^pi (r^2 - 2 r s cos t + s^2)^(-(n-alpha)/2) sin^(n-2) t dt
            = |S^{n-1}| max(r,s)^(alpha-n) 2F1((n-alpha)/2, 1-alpha/2; n/2; (min/max)^2).

The kernel has a |r-s|^(alpha-1) (log for alpha = 1) singularity on the
diagonal.  Product integration against the hat basis of the radial grid is
done once into a dense table; applying the potential is then a mat-vec plus
an exact contribution of the power-law tail beyond R_max.
"""

from __future__ import annotations

import json
import math
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
from scipy.special import hyp2f1, roots_jacobi

from .exponents import DomainError, ExponentConfig
from .radial_grid import (
    FitError,
    GridMismatchError,
    RadialFunction,
    RadialGrid,
    fit_tail,
    sphere_area,
)

GRADED_LEVELS = 24
_CACHE_MAGIC = b"HLSK0001"


class DivergenceError(ValueError):
    """The potential of the given profile diverges (tail decays too slowly)."""


class KernelBuildError(RuntimeError):
    pass


def _gl(q: int) -> tuple[np.ndarray, np.ndarray]:
    x, w = np.polynomial.legendre.leggauss(q)
    return 0.5 * (x + 1.0), 0.5 * w


_GL4 = _gl(4)
_GL8 = _gl(8)
_GL16 = _gl(16)


def _gj01(q: int, beta: float) -> tuple[np.ndarray, np.ndarray]:
    """Nodes/weights for int_0^1 t^beta g(t) dt."""
    x, w = roots_jacobi(q, 0.0, beta)
    return 0.5 * (x + 1.0), w * 2.0 ** (-beta - 1.0)


def _n3_profile(alpha: float, t: np.ndarray) -> np.ndarray:
    """2F1 factor for n = 3 in elementary form; t = min/max in [0, 1]."""
    out = np.empty_like(t)
    small = t < 0.05
    if np.any(small):
        out[small] = hyp2f1((3.0 - alpha) / 2.0, 1.0 - alpha / 2.0, 1.5, t[small] ** 2)
    big = ~small
    tb = t[big]
    with np.errstate(divide="ignore"):
        if alpha == 1.0:
            out[big] = np.arctanh(tb) / tb
        else:
            out[big] = ((1.0 + tb) ** (alpha - 1.0) - (1.0 - tb) ** (alpha - 1.0)) / (
                2.0 * tb * (alpha - 1.0)
            )
    return out


def radial_kernel(n: int, alpha: float, r, s) -> np.ndarray:
    """Spherical-mean kernel k(r, s) with int_{|y|=s} |x-y|^(alpha-n) dS(y) = s^(n-1) k(|x|, s)."""
    r = np.asarray(r, dtype=float)
    s = np.asarray(s, dtype=float)
    r, s = np.broadcast_arrays(r, s)
    big = np.maximum(r, s)
    small = np.minimum(r, s)
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(big > 0.0, small / big, 0.0)
        if n == 3:
            prof = _n3_profile(alpha, t.ravel()).reshape(t.shape)
        else:
            prof = hyp2f1((n - alpha) / 2.0, 1.0 - alpha / 2.0, n / 2.0, t * t)
        return sphere_area(n) * big ** (alpha - n) * prof


def angular_kernel_quadrature(n: int, alpha: float, r: float, s: float, order: int = 200) -> float:
    """k(r, s) from Gauss-Jacobi quadrature in x = cos(theta), weight (1-x^2)^((n-3)/2)."""
    e = (n - 3) / 2.0
    x, w = roots_jacobi(order, e, e)
    sig = 2.0 if n == 2 else sphere_area(n - 1)
    vals = (r * r - 2.0 * r * s * x + s * s) ** (-(n - alpha) / 2.0)
    return float(sig * np.sum(w * vals))


def graded_rule(a: float, b: float, beta: float, levels: int = GRADED_LEVELS,
                q: int = 8) -> tuple[np.ndarray, np.ndarray]:
    """Quadrature on [a, b] (either orientation) for integrands singular at ``a``.

    Dyadic pieces shrink toward ``a``; the innermost piece uses Gauss-Jacobi
    with weight |s-a|^beta (beta > -1), folded back into plain weights.
    """
    L = abs(b - a)
    sign = 1.0 if b >= a else -1.0
    if a != 0.0:
        # 2F1 overflows once 1 - (r/s)^2 nears 1e-14; stop refining at 1e-10 |a|
        levels = int(min(levels, max(1, math.floor(math.log2(L / (1e-10 * abs(a)))))))
    gx, gw = _gl(q)
    k = np.arange(levels)
    lo = L * 2.0 ** (-(k + 1.0))
    width = lo  # piece [lo, 2 lo]
    d = (lo[:, None] + width[:, None] * gx[None, :]).ravel()
    wt = (width[:, None] * gw[None, :]).ravel()
    eps = L * 2.0 ** (-levels)
    if beta != 0.0:
        tj, wj = _gj01(q, beta)
        d_in = eps * tj
        w_in = eps * wj * tj ** (-beta)
    else:
        d_in = eps * gx
        w_in = eps * gw
    d = np.concatenate([d, d_in])
    wt = np.concatenate([wt, w_in])
    return a + sign * d, wt


@dataclass(eq=False)
class RieszKernelTable:
    n: int
    alpha: float
    grid: RadialGrid
    entries: np.ndarray
    basis: str = "linear"
    _tails: dict = field(default_factory=dict, repr=False)

    @property
    def cfg_key(self) -> tuple:
        return (self.n, self.alpha, self.grid.digest())

    def tail_response(self, gamma: float) -> np.ndarray:
        """int_{R_max}^inf k(r_i, s) s^(n-1-gamma) ds at every node (needs gamma > alpha)."""
        if gamma <= self.alpha:
            raise DivergenceError(f"tail exponent {gamma} <= alpha={self.alpha}: potential diverges")
        key = round(float(gamma), 13)
        if key not in self._tails:
            self._tails[key] = _tail_integrals(self.n, self.alpha, self.grid, gamma)
        return self._tails[key]

    def apply(self, values: np.ndarray) -> np.ndarray:
        return self.entries @ values


def _row_moments(n: int, alpha: float, r: np.ndarray, i: int, beta: float) -> np.ndarray:
    """Cell moments int_cell k(r_i, s) s^(n-1) t^m ds, m = 0..3, t the local cell coordinate."""
    M = len(r) - 1
    ri = r[i]
    a, b = r[:-1], r[1:]
    h = b - a
    mom = np.zeros((M, 4))
    powers = np.arange(4)

    cells = np.arange(M)
    adjacent = (cells == i) | (cells == i - 1)
    dist = np.maximum(np.maximum(a - ri, ri - b), 0.0) / h
    groups = [
        (~adjacent & (dist < 4.0), _GL16),
        (~adjacent & (dist >= 4.0) & (dist < 32.0), _GL8),
        (~adjacent & (dist >= 32.0), _GL4),
    ]
    for mask, (gx, gw) in groups:
        if not np.any(mask):
            continue
        ac, hc = a[mask], h[mask]
        s = ac[:, None] + hc[:, None] * gx[None, :]
        k = radial_kernel(n, alpha, ri, s) * s ** (n - 1) * (hc[:, None] * gw[None, :])
        mom[mask] = k @ (gx[:, None] ** powers[None, :])

    for c in np.nonzero(adjacent)[0]:
        ac, bc = a[c], b[c]
        if ri == ac:
            s, w = graded_rule(ac, bc, beta)
        else:
            s, w = graded_rule(bc, ac, beta)
        k = radial_kernel(n, alpha, ri, s) * s ** (n - 1) * w
        t = (s - ac) / (bc - ac)
        mom[c] = k @ (t[:, None] ** powers[None, :])
    return mom


def _cubic_stencils(r: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-cell 4-node stencils and Lagrange coefficients in the local coordinate t.

    Returns (idx, coef) with idx[c] the stencil node indices and
    coef[c, k, m] the t^m coefficient of the basis polynomial of node idx[c, k].
    """
    M = len(r) - 1
    c = np.arange(M)
    start = np.clip(c - 1, 0, max(M - 3, 0))
    idx = start[:, None] + np.arange(4)[None, :]
    h = r[1:] - r[:-1]
    t = (r[idx] - r[c][:, None]) / h[:, None]
    V = t[:, :, None] ** np.arange(4)[None, None, :]
    coef = np.linalg.inv(V).transpose(0, 2, 1)
    return idx, coef


def _assemble_row(mom: np.ndarray, basis: str, stencil=None) -> np.ndarray:
    M = mom.shape[0]
    row = np.zeros(M + 1)
    if basis == "linear":
        row[:-1] += mom[:, 0] - mom[:, 1]
        row[1:] += mom[:, 1]
    else:
        idx, coef = stencil
        contrib = np.einsum("ckm,cm->ck", coef, mom)
        np.add.at(row, idx.ravel(), contrib.ravel())
    return row


def _tail_integrals(n: int, alpha: float, grid: RadialGrid, gamma: float) -> np.ndarray:
    R = grid.R_max
    r = grid.nodes
    beta = min(alpha - 1.0, 0.0)
    # [R, 2R]: graded toward s = R, where the last node is singular
    s1, w1 = graded_rule(R, 2.0 * R, beta, levels=40, q=8)
    k1 = radial_kernel(n, alpha, r[:, None], s1[None, :]) * s1[None, :] ** (n - 1.0 - gamma)
    near = k1 @ w1
    # [2R, inf): s = 2R/t, integrand sigma (2R)^(alpha-gamma) t^(gamma-alpha-1) F((r t / 2R)^2)
    tj, wj = _gj01(40, gamma - alpha - 1.0)
    s2 = 2.0 * R / tj
    k2 = radial_kernel(n, alpha, r[:, None], s2[None, :]) * s2[None, :] ** (n - alpha)
    far = (2.0 * R) ** (alpha - gamma) * (k2 @ wj)
    return near + far


def build_kernel_table(cfg: ExponentConfig | tuple, grid: RadialGrid, jobs: int = 1,
                       basis: str = "linear") -> RieszKernelTable:
    """Assemble K[i, j] = int k(r_i, s) phi_j(s) s^(n-1) ds.

    ``basis="linear"`` uses hat functions (nonnegative entries, the default);
    ``basis="cubic"`` uses local 4-point Lagrange interpolation, which is
    fourth-order accurate for smooth profiles but loses entrywise positivity.
    """
    if basis not in ("linear", "cubic"):
        raise ValueError(f"unknown basis {basis!r}")
    n, alpha = (cfg.n, cfg.alpha) if isinstance(cfg, ExponentConfig) else (int(cfg[0]), float(cfg[1]))
    if n < 2 or not (0.0 < alpha < n):
        raise DomainError(f"need n >= 2 and 0 < alpha < n, got n={n}, alpha={alpha}")
    r = grid.nodes
    beta = min(alpha - 1.0, 0.0)
    M = grid.M
    if basis == "cubic" and M < 3:
        raise DomainError("cubic basis needs at least 3 cells")
    K = np.empty((M + 1, M + 1))
    stencil = _cubic_stencils(r) if basis == "cubic" else None

    def fill(rows):
        for i in rows:
            K[i] = _assemble_row(_row_moments(n, alpha, r, i, beta), basis, stencil)

    if jobs > 1:
        chunks = np.array_split(np.arange(M + 1), jobs * 4)
        with ThreadPoolExecutor(max_workers=jobs) as ex:
            list(ex.map(fill, chunks))
    else:
        fill(range(M + 1))
    if not np.all(np.isfinite(K)):
        bad = np.argwhere(~np.isfinite(K))[0]
        raise KernelBuildError(f"non-finite kernel entry at {tuple(bad)}")
    if basis == "linear" and np.any(K < 0.0):
        raise KernelBuildError("negative kernel entry")
    return RieszKernelTable(n=n, alpha=alpha, grid=grid, entries=K, basis=basis)


def apply_riesz(table: RieszKernelTable, f: RadialFunction, refit: bool = True) -> RadialFunction:
    """Riesz potential of a radial profile at the grid nodes, tail included exactly."""
    if not f.grid.same_as(table.grid):
        raise GridMismatchError("profile and kernel table use different grids")
    if f.n != table.n:
        raise GridMismatchError(f"profile dimension {f.n} != table dimension {table.n}")
    g = table.apply(f.values)
    if f.has_tail:
        g = g + f.tail_coefficient * table.tail_response(f.tail_exponent)
    g = np.maximum(g, 0.0)
    out = RadialFunction(table.grid, g, table.n, label=f"I[{f.label}]" if f.label else "")
    if refit and np.any(g > 0.0):
        try:
            fit_tail(out)
        except FitError:
            out.tail_coefficient = 0.0
    return out


def save_table(table: RieszKernelTable, path: str | Path) -> Path:
    """Binary cache: magic, header length, JSON header, row-major float64 entries."""
    path = Path(path)
    header = {
        "n": table.n,
        "alpha": table.alpha,
        "M": table.grid.M,
        "R_max": table.grid.R_max,
        "grading": table.grid.grading,
        "grid_hash": table.grid.digest(),
        "basis": table.basis,
    }
    hb = json.dumps(header).encode()
    with open(path, "wb") as fh:
        fh.write(_CACHE_MAGIC)
        fh.write(struct.pack("<I", len(hb)))
        fh.write(hb)
        fh.write(np.ascontiguousarray(table.entries, dtype="<f8").tobytes())
    return path


def load_table(path: str | Path, grid: RadialGrid) -> RieszKernelTable:
    with open(path, "rb") as fh:
        if fh.read(len(_CACHE_MAGIC)) != _CACHE_MAGIC:
            raise ValueError(f"{path} is not a kernel cache file")
        (hlen,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(hlen))
        if header["grid_hash"] != grid.digest() or header["M"] != grid.M:
            raise GridMismatchError("cached table was built on a different grid")
        m = header["M"] + 1
        data = np.frombuffer(fh.read(8 * m * m), dtype="<f8").reshape(m, m).copy()
    return RieszKernelTable(n=header["n"], alpha=header["alpha"], grid=grid, entries=data,
                            basis=header.get("basis", "linear"))


def cached_table(n: int, alpha: float, grid: RadialGrid, cache_dir: str | Path | None,
                 jobs: int = 1, basis: str = "linear") -> RieszKernelTable:
    if cache_dir is None:
        return build_kernel_table((n, alpha), grid, jobs=jobs, basis=basis)
    cache_dir = Path(cache_dir)
    cache_dir.mkdir(parents=True, exist_ok=True)
    path = cache_dir / f"kernel_n{n}_a{alpha!r}_{basis}_{grid.digest()}.bin"
    if path.exists():
        try:
            table = load_table(path, grid)
            if table.basis == basis:
                return table
        except (ValueError, GridMismatchError):
            pass
    table = build_kernel_table((n, alpha), grid, jobs=jobs, basis=basis)
    save_table(table, path)
    return table


# ---------------------------------------------------------------------------
# n-D brute force oracle


def _pyramid_rule(n: int, alpha: float, h: float, q: int = 8):
    """Offsets and weights integrating g(y) |y|^(alpha-n) over the cube [-h/2, h/2]^n.

    The cube is split into 2n pyramids with apex at the centre; in each the
    radial variable carries the t^(alpha-1) singularity via Gauss-Jacobi.
    """
    tj, wj = _gj01(q, alpha - 1.0)
    gx, gw = np.polynomial.legendre.leggauss(q)
    half = h / 2.0
    mesh = np.meshgrid(*([gx] * (n - 1)), indexing="ij")
    wmesh = np.meshgrid(*([gw] * (n - 1)), indexing="ij")
    face_w = np.stack([m.ravel() for m in mesh], axis=1) if n > 1 else np.zeros((1, 0))
    face_wt = np.prod(np.stack([m.ravel() for m in wmesh], axis=1), axis=1)
    pts, wts = [], []
    norm = (1.0 + np.sum(face_w**2, axis=1)) ** ((alpha - n) / 2.0)
    for axis in range(n):
        for sgn in (-1.0, 1.0):
            base = np.zeros((face_w.shape[0], n))
            base[:, axis] = sgn
            others = [d for d in range(n) if d != axis]
            base[:, others] = face_w
            # y = t * half * base; |y|^(alpha-n) dy = half^alpha t^(alpha-1) norm dt dw
            p = tj[:, None, None] * half * base[None, :, :]
            w = (half**alpha) * wj[:, None] * (face_wt * norm)[None, :]
            pts.append(p.reshape(-1, n))
            wts.append(w.ravel())
    return np.concatenate(pts), np.concatenate(wts)


def brute_force_riesz(cfg: ExponentConfig | tuple, f: Callable[[np.ndarray], np.ndarray], x,
                      box: tuple[float, int], box_center=None, far_order: int = 3,
                      near_order: int = 8) -> float:
    """Tensor-product quadrature of int_box f(y) |x-y|^(alpha-n) dy.

    The lattice of cells is centred on ``x`` (spacing 2*half_width/resolution),
    so the singular cell is the one around ``x`` and is integrated with the
    pyramid rule.  Cells whose centre lies outside the box are dropped, so ``f``
    should vanish near the box boundary.
    """
    n, alpha = (cfg.n, cfg.alpha) if isinstance(cfg, ExponentConfig) else (int(cfg[0]), float(cfg[1]))
    if n not in (2, 3):
        raise DomainError("brute force oracle supports n = 2, 3")
    half, res = float(box[0]), int(box[1])
    x = np.asarray(x, dtype=float)
    c0 = np.zeros(n) if box_center is None else np.asarray(box_center, dtype=float)
    h = 2.0 * half / res
    lo = np.ceil((c0 - half - x) / h - 0.5)
    hi = np.floor((c0 + half - x) / h + 0.5)
    axes = [np.arange(lo[d], hi[d] + 1) for d in range(n)]
    ks = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, n)
    centers = x + h * ks
    inside = np.all(np.abs(centers - c0) <= half + 1e-12 * h, axis=1)
    ks, centers = ks[inside], centers[inside]
    cheb = np.max(np.abs(ks), axis=1)

    total = 0.0
    # far cells
    for order, mask in ((far_order, cheb >= 3), (near_order, (cheb >= 1) & (cheb < 3))):
        if not np.any(mask):
            continue
        gx, gw = np.polynomial.legendre.leggauss(order)
        off = np.stack(np.meshgrid(*([gx * h / 2.0] * n), indexing="ij"), axis=-1).reshape(-1, n)
        ow = np.prod(np.stack(np.meshgrid(*([gw * h / 2.0] * n), indexing="ij"), axis=-1).reshape(-1, n), axis=1)
        cc = centers[mask]
        for start in range(0, len(cc), 4096):
            block = cc[start:start + 4096]
            y = block[:, None, :] + off[None, :, :]
            d = np.linalg.norm(y - x, axis=-1)
            fy = f(y.reshape(-1, n)).reshape(d.shape)
            total += float(np.sum(fy * d ** (alpha - n) * ow[None, :]))
    if np.any(cheb == 0):
        py, pw = _pyramid_rule(n, alpha, h, q=near_order)
        total += float(np.sum(f(x[None, :] + py) * pw))
    return total
