"""Admissible exponent algebra for the integral system u = I(v^q), v = I(u^p)."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

IDENTITY_TOL = 1e-12


class DomainError(ValueError):
    """An argument lies outside the domain of an operation."""


class InfeasibleError(ValueError):
    """No admissible configuration exists for the requested parameters."""


@dataclass(frozen=True)
class ExponentConfig:
    n: int
    alpha: float
    p: float
    q: float

    @property
    def p0(self) -> float:
        return (self.p + 1.0) / self.p

    @property
    def q0(self) -> float:
        return (self.q + 1.0) / self.q

    @property
    def lower_bound(self) -> float:
        return self.alpha / (self.n - self.alpha)

    @property
    def conformal_exponent(self) -> float:
        return (self.n + self.alpha) / (self.n - self.alpha)

    @property
    def is_conformal(self) -> bool:
        c = self.conformal_exponent
        return abs(self.p - c) <= 1e-10 * c and abs(self.q - c) <= 1e-10 * c

    @property
    def u_exponent(self) -> float:
        """Decay exponent n/(p+1) of the singular u."""
        return self.n / (self.p + 1.0)

    @property
    def v_exponent(self) -> float:
        return self.n / (self.q + 1.0)

    def swapped(self) -> "ExponentConfig":
        return ExponentConfig(self.n, self.alpha, self.q, self.p)

    def to_dict(self) -> dict:
        return {"n": self.n, "alpha": self.alpha, "p": self.p, "q": self.q}

    @classmethod
    def from_dict(cls, data: dict) -> "ExponentConfig":
        """Build from ``{n, alpha, p[, q]}`` or ``{n, alpha, p0}``.

        A supplied ``q`` is checked against the critical relation rather
        than trusted.
        """
        for key in ("n", "alpha"):
            if key not in data:
                raise KeyError(key)
        if "p" in data:
            cfg = make_config(int(data["n"]), float(data["alpha"]), float(data["p"]))
            if "q" in data and data["q"] is not None:
                if abs(cfg.q - float(data["q"])) > 1e-9 * max(1.0, cfg.q):
                    raise InfeasibleError(
                        f"q={data['q']} violates the critical relation (expected {cfg.q})"
                    )
            return cfg
        if "p0" in data:
            return make_config_from_p0(int(data["n"]), float(data["alpha"]), float(data["p0"]))
        raise KeyError("p")

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


def _validate(cfg: ExponentConfig) -> ExponentConfig:
    n, alpha, p, q = cfg.n, cfg.alpha, cfg.p, cfg.q
    lo = alpha / (n - alpha)
    if not (p > lo and q > lo):
        raise InfeasibleError(f"exponents p={p}, q={q} must exceed alpha/(n-alpha)={lo}")
    crit = 1.0 / (p + 1.0) + 1.0 / (q + 1.0) + alpha / n - 1.0
    if abs(crit) > IDENTITY_TOL:
        raise InfeasibleError(f"critical relation off by {crit:.3e}")
    return cfg


def _check_domain(n: int, alpha: float) -> None:
    if int(n) != n or n < 2:
        raise DomainError(f"dimension must be an integer >= 2, got {n}")
    if not (0.0 < alpha < n):
        raise DomainError(f"alpha must lie in (0, n), got {alpha}")


def make_config(n: int, alpha: float, p: float) -> ExponentConfig:
    """Solve the critical relation for q given (n, alpha, p)."""
    _check_domain(n, alpha)
    lo = alpha / (n - alpha)
    if not p > lo:
        raise InfeasibleError(f"p={p} must exceed alpha/(n-alpha)={lo}")
    denom = 1.0 - alpha / n - 1.0 / (p + 1.0)
    if denom <= 0.0:
        raise InfeasibleError(f"no admissible q for p={p}")
    q = 1.0 / denom - 1.0
    return _validate(ExponentConfig(int(n), float(alpha), float(p), float(q)))


def make_config_from_p0(n: int, alpha: float, p0: float) -> ExponentConfig:
    """Construct from the HLS exponent p0, with 1/p0 + 1/q0 = 1 + alpha/n."""
    _check_domain(n, alpha)
    if not (1.0 < p0 < n / alpha):
        raise InfeasibleError(f"p0={p0} must lie in (1, n/alpha)")
    return make_config(n, alpha, 1.0 / (p0 - 1.0))


@dataclass(frozen=True)
class RChoice:
    r: float
    swapped: bool
    p_major: float
    q_minor: float


def choose_r(cfg: ExponentConfig) -> RChoice:
    """Auxiliary index r = p - (alpha/n)(p+1), taking p as the larger exponent."""
    swapped = cfg.p < cfg.q
    p, q = (cfg.q, cfg.p) if swapped else (cfg.p, cfg.q)
    upper = p - cfg.alpha / cfg.n * (p + 1.0)
    r = upper
    # slack covers the conformal case where r == 1 up to rounding
    assert r >= 1.0 - 1e-12, f"r={r} < 1"
    assert r <= upper
    assert q * r >= 1.0 - 1e-12, f"q*r={q * r} < 1"
    return RChoice(r=r, swapped=swapped, p_major=p, q_minor=q)


def identity_audit(cfg: ExponentConfig) -> dict:
    """Scaled discrepancies of the exponent identities used by the regularity argument."""
    n, a, p, q = cfg.n, cfg.alpha, cfg.p, cfg.q
    an = a / n
    if p < q:
        pm, qm = q, p
    else:
        pm, qm = p, q
    rows = {
        "critical_relation": (1.0 / (p + 1.0) + 1.0 / (q + 1.0) + an, 1.0),
        "pq_identity": (p * q - 1.0, an * (p + 1.0) * (q + 1.0)),
        "r_identity": ((pm - an * (pm + 1.0)) * qm - 1.0, an * (pm + 1.0)),
        "singular_exponent": (n * p / (p + 1.0) - a, n / (q + 1.0)),
        "dual_exponents": (1.0 / cfg.p0 + 1.0 / cfg.q0, 1.0 + an),
    }
    # scaled by max(1, |rhs|): pq - 1 grows like p*q and carries rounding of that size
    discrepancies = {k: abs(lhs - rhs) / max(1.0, abs(rhs)) for k, (lhs, rhs) in rows.items()}
    return {
        "config": cfg.to_dict(),
        "lhs": {k: v[0] for k, v in rows.items()},
        "rhs": {k: v[1] for k, v in rows.items()},
        "discrepancies": discrepancies,
        "max_discrepancy": max(discrepancies.values()),
        "passed": all(d <= IDENTITY_TOL for d in discrepancies.values()),
    }


def load_config(path: str | Path) -> ExponentConfig:
    with open(path) as fh:
        return ExponentConfig.from_dict(json.load(fh))
