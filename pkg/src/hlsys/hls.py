"""The bilinear fractional-integral functional and its alternating maximization."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .exponents import ExponentConfig
from .radial_grid import FitError, RadialFunction, fit_tail, sphere_area
from .riesz import DivergenceError, RieszKernelTable, apply_riesz

MONOTONE_SLACK = 1e-12


@dataclass
class AscentSettings:
    tol: float = 1e-8
    max_half_steps: int = 500


@dataclass
class AscentReport:
    J_history: list[float]
    J: float
    iterations: int
    converged: bool
    f: RadialFunction = field(repr=False)
    g: RadialFunction = field(repr=False)
    J_full: float = float("nan")

    @property
    def min_increment(self) -> float:
        """Smallest relative J change between consecutive half-steps."""
        h = np.asarray(self.J_history)
        return float(np.min(np.diff(h) / np.abs(h[1:]))) if len(h) > 1 else 0.0

    def to_dict(self) -> dict:
        return {
            "J": self.J,
            "J_full": self.J_full,
            "iterations": self.iterations,
            "converged": self.converged,
            "min_increment": self.min_increment,
            "J_history": list(self.J_history),
        }

    def write_history(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["half_step", "J"])
            for k, j in enumerate(self.J_history):
                w.writerow([k, repr(j)])

    def write_json(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))


def _tail_pair_integral(f: RadialFunction, h: RadialFunction) -> float:
    """int_R^inf f h s^(n-1) ds for two power tails, times the sphere area."""
    if not (f.has_tail and h.has_tail):
        return 0.0
    e = f.tail_exponent + h.tail_exponent - f.n
    if e <= 0.0:
        raise DivergenceError(f"tail product decays like s^-{e + f.n:.4g}, not integrable in dimension {f.n}")
    R = f.grid.R_max
    return sphere_area(f.n) * f.tail_coefficient * h.tail_coefficient * R ** (-e) / e


def _one_sided(table: RieszKernelTable, f: RadialFunction, g: RadialFunction, w: np.ndarray) -> float:
    Ig = apply_riesz(table, g)
    return float(np.dot(w, f.values * Ig.values)) + _tail_pair_integral(f, Ig)


def hls_functional(cfg: ExponentConfig, table: RieszKernelTable, f: RadialFunction, g: RadialFunction) -> float:
    """Double integral of f(x) g(y) |x-y|^(alpha-n) over R^n x R^n.

    Computed as the average of int f I(g) and int g I(f), which makes the
    discrete value exactly symmetric in (f, g).
    """
    w = f.grid.weights(f.n)
    return 0.5 * (_one_sided(table, f, g, w) + _one_sided(table, g, f, w))


class _DiscreteForm:
    """f^T B g with B = (W K + K^T W)/2 on the truncated ball, plus lumped norms."""

    def __init__(self, table: RieszKernelTable, n: int):
        self.w = table.grid.weights(n)
        WK = self.w[:, None] * table.entries
        self.B = 0.5 * (WK + WK.T)

    def norm(self, f: np.ndarray, e: float) -> float:
        return float(np.dot(self.w, np.abs(f) ** e)) ** (1.0 / e)

    def potential(self, f: np.ndarray) -> np.ndarray:
        return (self.B @ f) / self.w

    def value(self, f: np.ndarray, g: np.ndarray) -> float:
        return float(f @ (self.B @ g))

    def best_response(self, f: np.ndarray, e: float) -> np.ndarray:
        """Maximizer of value(f, .) over unit L^e vectors; Hölder equality case."""
        h = self.potential(f)
        dual = e / (e - 1.0)
        out = np.maximum(h, 0.0) ** (dual - 1.0)
        return out / self.norm(out, e)


def _as_profile(template: RadialFunction, vals: np.ndarray, label: str) -> RadialFunction:
    out = template.replace(values=vals, tail_coefficient=0.0, label=label, clipped=False)
    try:
        fit_tail(out)
    except FitError:
        out.tail_coefficient = 0.0
    return out


def alternating_ascent(cfg: ExponentConfig, table: RieszKernelTable, f0: RadialFunction,
                       settings: AscentSettings | None = None) -> AscentReport:
    """Alternate the Hölder-saturating updates of g given f and f given g.

    Norms and the bilinear form are discretized with the same node weights, so
    each half-step is an exact maximization and J never decreases.
    """
    settings = settings or AscentSettings()
    n = f0.n
    form = _DiscreteForm(table, n)
    p0, q0 = cfg.p0, cfg.q0
    f = f0.values.copy()
    nf = form.norm(f, p0)
    if not nf > 0.0:
        raise ValueError("starting profile vanishes identically")
    f /= nf
    g = f / form.norm(f, q0)
    history = [form.value(f, g)]
    converged = False
    steps = 0
    while steps < settings.max_half_steps:
        g = form.best_response(f, q0)
        history.append(form.value(f, g))
        f = form.best_response(g, p0)
        history.append(form.value(f, g))
        steps += 2
        if abs(history[-1] - history[-3]) <= settings.tol * abs(history[-1]):
            converged = True
            break
    fr = _as_profile(f0, f, "f")
    gr = _as_profile(f0, g, "g")
    try:
        J_full = hls_functional(cfg, table, fr, gr)
    except DivergenceError:
        J_full = float("nan")
    return AscentReport(history, history[-1], steps, converged, fr, gr, J_full)


def normalized_maximizer(cfg: ExponentConfig, table: RieszKernelTable, lam: float = 1.0,
                         exponent: float | None = None) -> RadialFunction:
    """(lam/(lam^2+r^2))^(n/exponent) scaled to unit discrete L^exponent norm (default p0)."""
    n = table.n
    e = cfg.p0 if exponent is None else exponent
    r = table.grid.nodes
    vals = (lam / (lam * lam + r * r)) ** (n / e)
    form_w = table.grid.weights(n)
    vals = vals / float(np.dot(form_w, vals**e)) ** (1.0 / e)
    f = RadialFunction(table.grid, vals, n, label="maximizer")
    fit_tail(f)
    return f


def maximizer_to_solution(cfg: ExponentConfig, table: RieszKernelTable, f: RadialFunction,
                          g: RadialFunction) -> tuple[RadialFunction, RadialFunction, dict]:
    """Map (f, g) to (u, v) = (f^(p0-1), g^(q0-1)) and fix the two multiplier scales.

    v = m1 I(u^p) and u = m2 I(v^q) hold at a maximizer; the multipliers are
    least-squares fits on [0, R_max/4], then u -> a u and v -> b v with
    a^(pq-1) = m1^q m2 and b = a^p / m1.
    """
    from .solver import system_residual

    p, q = cfg.p, cfg.q
    u = f.power(cfg.p0 - 1.0)
    v = g.power(cfg.q0 - 1.0)
    grid = u.grid
    m = grid.nodes <= grid.R_max / 4.0

    def ls(target, model):
        return float(np.dot(target[m], model[m]) / np.dot(model[m], model[m]))

    Iu = apply_riesz(table, u.power(p)).values
    Iv = apply_riesz(table, v.power(q)).values
    m1 = ls(v.values, Iu)
    m2 = ls(u.values, Iv)
    a = (m1**q * m2) ** (1.0 / (p * q - 1.0))
    b = a**p / m1
    u_s, v_s = u.scaled(a), v.scaled(b)
    u_s.label, v_s.label = "u", "v"
    res = system_residual(cfg, table, u_s, v_s)
    return u_s, v_s, {"m1": m1, "m2": m2, "a": a, "b": b, "residual": res}
