"""Command-line front end.

Settings are resolved as built-in defaults, then the JSON config file, then
command-line flags; later sources win.
"""

from __future__ import annotations

import argparse
import copy
import hashlib
import json
import platform
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .closed_forms import (
    BubbleParams,
    ConformalityError,
    bubble_values,
    singular_pair,
    verify_bubble,
)
from .exponents import (
    DomainError,
    ExponentConfig,
    InfeasibleError,
    identity_audit,
    make_config,
)
from .hls import AscentSettings, alternating_ascent, hls_functional, maximizer_to_solution, normalized_maximizer
from .radial_grid import RadialFunction, from_callable, load_profile, lp_norm, make_grid, save_profile
from .riesz import DivergenceError, cached_table
from .solver import (
    ParameterRelationError,
    PreconditionError,
    ProbeParams,
    SolverSettings,
    contraction_probe,
    lipschitz_sweep,
    make_contraction_operator,
    picard_solve,
)
from .symmetry import CoverageError, NonDecayError, center_and_monotonicity_report, sample_field

EXIT_OK, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2

DEFAULTS: dict = {
    "grid": {"R_max": 20.0, "M": 2000, "grading": 2.0, "basis": "linear"},
    "threshold": 1e-4,
    "solver": {"max_iters": 200, "tol": 1e-5, "damping": 0.7, "normalization": "value-at-zero"},
    "initial": "gaussian",
    "ascent": {"tol": 1e-8, "max_half_steps": 500, "start": "maximizer"},
    "symmetry": {"n": 2, "alpha": 1.0, "lam": 1.0, "center": [0.0, 0.0], "box": [-4.0, 4.0], "h": 0.05,
                 "profile": "bubble"},
    "probe": {"n": 3, "alpha": 2.0, "beta": 1.0, "r": 2.0, "a": 3.0, "b": 2.0, "R": 1.0, "p": None,
              "M": 400, "pairs": 100, "amplitudes": [1.0, 0.5, 0.25, 0.125, 0.0625, 0.03125]},
    "audit": {"fuzz": 0},
    "seed": 0,
    "cache_dir": None,
    "jobs": 1,
}


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# configuration


def _merge(base: dict, extra: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in extra.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def resolve_config(args: argparse.Namespace) -> dict:
    cfg = copy.deepcopy(DEFAULTS)
    if args.config:
        try:
            cfg = _merge(cfg, json.loads(Path(args.config).read_text()))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from exc
    exps = dict(cfg.get("exponents") or {})
    for flag, key in (("n", "n"), ("alpha", "alpha"), ("p", "p"), ("p0", "p0")):
        val = getattr(args, flag, None)
        if val is not None:
            exps[key] = val
            if key == "p0":
                exps.pop("p", None)
    if exps:
        cfg["exponents"] = exps
    for flag, key in (("M", "M"), ("R_max", "R_max"), ("grading", "grading"), ("basis", "basis")):
        val = getattr(args, flag, None)
        if val is not None:
            cfg["grid"][key] = val
    if args.out is not None:
        cfg["output"] = args.out
    if args.seed is not None:
        cfg["seed"] = args.seed
    if args.jobs is not None:
        cfg["jobs"] = args.jobs
    cfg.setdefault("output", "out")
    return cfg


def _require(cfg: dict, *path: str):
    node = cfg
    for i, key in enumerate(path):
        if not isinstance(node, dict) or key not in node or node[key] is None:
            raise ConfigError(f"missing config field '{'.'.join(path[: i + 1])}'")
        node = node[key]
    return node


def _exponents(cfg: dict) -> ExponentConfig:
    ex = _require(cfg, "exponents")
    _require(cfg, "exponents", "n")
    _require(cfg, "exponents", "alpha")
    if "p" not in ex and "p0" not in ex:
        raise ConfigError("missing config field 'exponents.p' (or 'exponents.p0')")
    return ExponentConfig.from_dict(ex)


def _grid(cfg: dict):
    g = cfg["grid"]
    return make_grid(float(_require(cfg, "grid", "R_max")), int(_require(cfg, "grid", "M")),
                     float(g.get("grading", 2.0)))


def _table(cfg: dict, ecfg: ExponentConfig, grid):
    return cached_table(ecfg.n, ecfg.alpha, grid, cfg.get("cache_dir"), jobs=int(cfg.get("jobs", 1)),
                        basis=cfg["grid"].get("basis", "linear"))


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(json.dumps(cfg, sort_keys=True, default=str).encode()).hexdigest()


def metadata(cfg: dict, command: str, grid=None) -> dict:
    import scipy

    return {
        "command": command,
        "config_hash": config_hash(cfg),
        "grid_hash": grid.digest() if grid is not None else None,
        "seed": cfg.get("seed"),
        "versions": {
            "hlsys": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
            "scipy": scipy.__version__,
        },
        "config": cfg,
    }


# ---------------------------------------------------------------------------
# output helpers


def _outdir(cfg: dict) -> Path:
    out = Path(cfg["output"])
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"output directory {out} is not writable: {exc}") from exc
    return out


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    return obj


def _write_report(out: Path, report: dict) -> None:
    (out / "report.json").write_text(json.dumps(_jsonable(report), indent=2, allow_nan=True))


def _write_csv(path: Path, header: list[str], columns) -> None:
    data = np.column_stack([np.asarray(c, dtype=float) for c in columns])
    np.savetxt(path, data, delimiter=",", header=",".join(header), comments="", fmt="%.17g")


def plot_svg(path: Path, series, xlabel: str, ylabel: str, title: str = "", logy: bool = False) -> None:
    """Static SVG line plot; ``series`` is a list of (x, y, label)."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    plt.rcParams["svg.hashsalt"] = "hlsys"
    fig, ax = plt.subplots(figsize=(6, 4))
    for x, y, label in series:
        ax.plot(x, y, label=label)
    if logy:
        ax.set_yscale("log")
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    if title:
        ax.set_title(title)
    if len(series) > 1:
        ax.legend()
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def _say(msg: str) -> None:
    print(msg, file=sys.stderr)


# ---------------------------------------------------------------------------
# commands


def cmd_verify_bubble(cfg: dict, strict: bool = False) -> int:
    ecfg = _exponents(cfg)
    if not ecfg.is_conformal:
        raise ConformalityError(f"verify-bubble needs p = {ecfg.conformal_exponent}, got p = {ecfg.p}")
    grid = _grid(cfg)
    table = _table(cfg, ecfg, grid)
    lam = float(cfg.get("bubble", {}).get("lam", 1.0))
    rep = verify_bubble(ecfg, grid, table, BubbleParams(lam=lam), threshold=float(cfg["threshold"]))
    out = _outdir(cfg)
    _write_report(out, {"metadata": metadata(cfg, "verify-bubble", grid), "result": rep.to_dict()})
    _write_csv(out / "rho.csv", ["r", "rho"], [rep.r, rep.rho])
    plot_svg(out / "rho.svg", [(rep.r, rep.rho, "rho")], "r", "I(u^p)/u", "bubble ratio")
    _say(f"ratio mean {rep.ratio_mean:.8g}, spread {rep.ratio_spread:.3e} (threshold {rep.threshold:g})")
    return EXIT_OK if rep.passed else EXIT_FAIL


def cmd_verify_singular(cfg: dict, strict: bool = False) -> int:
    ecfg = _exponents(cfg)
    grid = _grid(cfg)
    table = _table(cfg, ecfg, grid)
    out = _outdir(cfg)
    try:
        pair, rep = singular_pair(ecfg, grid, table)
    except InfeasibleError as exc:
        _write_report(out, {"metadata": metadata(cfg, "verify-singular", grid), "error": str(exc)})
        _say(str(exc))
        return EXIT_FAIL
    _write_report(out, {"metadata": metadata(cfg, "verify-singular", grid), "result": rep})
    res = rep["residual"]["residual"]
    _say(f"c_u {pair.c_u:.8g}, c_v {pair.c_v:.8g}, residual {res:.3e}")
    return EXIT_OK if res <= 1e-2 else EXIT_FAIL


def _initial_profile(cfg: dict, ecfg: ExponentConfig, grid) -> RadialFunction:
    init = cfg.get("initial", "gaussian")
    n = ecfg.n
    if isinstance(init, dict):
        return load_profile(_require(cfg, "initial", "file"), grid)
    if init == "gaussian":
        return from_callable(grid, n, lambda r: np.exp(-r * r), label="gaussian")
    if init == "indicator":
        return from_callable(grid, n, lambda r: (r <= 1.0).astype(float), label="indicator")
    if init == "bubble":
        return from_callable(grid, n, lambda r: bubble_values(n, ecfg.alpha, r),
                             tail=(1.0, n - ecfg.alpha), label="bubble")
    raise ConfigError(f"unknown initial profile {init!r}")


def cmd_solve(cfg: dict, strict: bool = False) -> int:
    ecfg = _exponents(cfg)
    grid = _grid(cfg)
    table = _table(cfg, ecfg, grid)
    settings = SolverSettings(**cfg["solver"])
    u0 = _initial_profile(cfg, ecfg, grid)
    out = _outdir(cfg)
    try:
        u, v, rep = picard_solve(ecfg, grid, table, u0, settings)
    except DivergenceError as exc:
        _write_report(out, {"metadata": metadata(cfg, "solve", grid), "error": str(exc)})
        _say(f"divergent tail: {exc}")
        return EXIT_FAIL
    _write_report(out, {"metadata": metadata(cfg, "solve", grid), "result": rep.to_dict()})
    rep.write_history(out / "history.csv")
    save_profile(u, out / "u.csv")
    save_profile(v, out / "v.csv")
    r = grid.nodes
    plot_svg(out / "profiles.svg", [(r, u.values, "u"), (r, v.values, "v")], "r", "value", "solution")
    if rep.iterates:
        plot_svg(out / "history.svg",
                 [([it.iteration for it in rep.iterates], [max(it.residual, 1e-300) for it in rep.iterates],
                   "relative change")], "iteration", "change", "Picard history", logy=True)
    _say(f"converged={rep.converged} after {rep.iterations} iterations, residual {rep.residual['residual']:.3e}")
    if strict and not rep.converged:
        return EXIT_FAIL
    return EXIT_OK


def cmd_sharp_constant(cfg: dict, strict: bool = False) -> int:
    ecfg = _exponents(cfg)
    grid = _grid(cfg)
    table = _table(cfg, ecfg, grid)
    asc = cfg["ascent"]
    start = asc.get("start", "maximizer")
    rng = np.random.default_rng(int(cfg.get("seed", 0)))
    n = ecfg.n
    if start == "maximizer":
        f0 = normalized_maximizer(ecfg, table)
    elif start == "indicator":
        f0 = from_callable(grid, n, lambda r: (r <= 1.0).astype(float))
    elif start == "random":
        f0 = from_callable(grid, n, lambda r: rng.random(r.shape) * np.exp(-r))
    else:
        f0 = load_profile(start, grid)
    rep = alternating_ascent(ecfg, table, f0, AscentSettings(float(asc["tol"]), int(asc["max_half_steps"])))
    u, v, bridge = maximizer_to_solution(ecfg, table, rep.f, rep.g)
    result = {**rep.to_dict(), "start": start, "bridge": bridge}
    if abs(ecfg.p0 - ecfg.q0) <= 1e-12:
        fm = normalized_maximizer(ecfg, table)
        fm = fm.scaled(1.0 / lp_norm(fm, ecfg.p0, include_tail=True))
        ref = hls_functional(ecfg, table, fm, fm)
        result["J_maximizer"] = ref
        result["relative_gap"] = (ref - rep.J) / ref
    out = _outdir(cfg)
    _write_report(out, {"metadata": metadata(cfg, "sharp-constant", grid), "result": result})
    rep.write_history(out / "J_history.csv")
    save_profile(rep.f, out / "f.csv")
    save_profile(rep.g, out / "g.csv")
    plot_svg(out / "J_history.svg", [(np.arange(len(rep.J_history)), rep.J_history, "J")],
             "half-step", "J", "ascent history")
    _say(f"J = {rep.J:.10g} after {rep.iterations} half-steps, converged={rep.converged}")
    if strict and not rep.converged:
        return EXIT_FAIL
    return EXIT_OK


def cmd_symmetry(cfg: dict, strict: bool = False) -> int:
    sym = cfg["symmetry"]
    n = int(sym["n"])
    center = np.asarray(_require(cfg, "symmetry", "center"), dtype=float)
    lo, hi = map(float, sym["box"])
    h = float(sym["h"])
    if sym.get("profile", "bubble") == "bubble":
        alpha, lam = float(sym["alpha"]), float(sym["lam"])
        profile = lambda r: bubble_values(n, alpha, r, lam)  # noqa: E731
    else:
        profile = load_profile(sym["profile"])
    field = sample_field(profile, center, lo, hi, h, n)
    bump = sym.get("bump")
    if bump:
        x = field.points()
        at = np.asarray(bump["at"], dtype=float)
        field.values = field.values + float(bump.get("height", 0.3)) * np.exp(
            -np.sum((x - at) ** 2, axis=-1) / float(bump.get("width", 0.1)))
    rep = center_and_monotonicity_report(field)
    tol = float(sym.get("center_tol", h))
    err = float(np.max(np.abs(np.asarray(rep["center"]) - center)))
    rep["center_error"] = err
    rep["center_ok"] = err <= tol + 1e-12
    out = _outdir(cfg)
    _write_report(out, {"metadata": metadata(cfg, "symmetry"), "result": rep})
    _say(f"center {rep['center']}, radial_decrease={rep['radial_decrease']}")
    return EXIT_OK if (rep["radial_decrease"] and rep["center_ok"]) else EXIT_FAIL


def cmd_probe_contraction(cfg: dict, strict: bool = False) -> int:
    pb = cfg["probe"]
    n = int(pb["n"])
    params = ProbeParams(*(float(_require(cfg, "probe", k)) for k in ("alpha", "beta", "r", "a", "b", "R")),
                         p=None if pb.get("p") is None else float(pb["p"]))
    grid = make_grid(params.R, int(pb["M"]), 2.0)
    U = from_callable(grid, n, lambda r: 1.0 / (1.0 + r * r))
    V = from_callable(grid, n, lambda r: np.ones_like(r))
    op = make_contraction_operator(params, U, V, jobs=int(cfg.get("jobs", 1)))
    rng = np.random.default_rng(int(cfg.get("seed", 0)))
    pairs = [(rng.random(grid.M + 1), rng.random(grid.M + 1)) for _ in range(int(pb["pairs"]))]
    margins = [contraction_probe(op, a, b, n)["domination_margin"] for a, b in pairs]
    sweep = lipschitz_sweep(op, pairs[: min(10, len(pairs))], [float(a) for a in pb["amplitudes"]], n)
    out = _outdir(cfg)
    result = {"min_domination_margin": float(min(margins)), "norm_exponent": params.norm_exponent(n), **sweep}
    _write_report(out, {"metadata": metadata(cfg, "probe-contraction", grid), "result": result})
    rows = sweep["rows"]
    _write_csv(out / "lipschitz.csv", ["amplitude", "smallness", "lipschitz_ratio"],
               [[r["amplitude"] for r in rows], [r["smallness"] for r in rows], [r["lipschitz_ratio"] for r in rows]])
    plot_svg(out / "lipschitz.svg", [([r["smallness"] for r in rows], [r["lipschitz_ratio"] for r in rows], "ratio")],
             "||U||^(1/r) ||V||", "Lipschitz ratio", "contraction probe", logy=True)
    _say(f"min domination margin {result['min_domination_margin']:.3e}, "
         f"threshold smallness {sweep['threshold_smallness']}")
    return EXIT_OK if result["min_domination_margin"] >= -1e-12 else EXIT_FAIL


def random_admissible(rng: np.random.Generator) -> ExponentConfig:
    """Random admissible config with n in 2..6, alpha in (0, n), p above alpha/(n-alpha) with finite q."""
    while True:
        n = int(rng.integers(2, 7))
        alpha = float(rng.uniform(0.05, n - 0.05))
        lo = alpha / (n - alpha)
        # finite q needs 1/(p+1) < 1 - alpha/n, i.e. p > lo
        p = lo * float(np.exp(rng.uniform(0.001, 3.0)))
        try:
            return make_config(n, alpha, p)
        except InfeasibleError:
            continue


def cmd_audit_exponents(cfg: dict, strict: bool = False) -> int:
    fuzz = int(cfg.get("audit", {}).get("fuzz", 0))
    rows = []
    if cfg.get("exponents"):
        rows.append(identity_audit(_exponents(cfg)))
    if fuzz:
        rng = np.random.default_rng(int(cfg.get("seed", 0)))
        rows.extend(identity_audit(random_admissible(rng)) for _ in range(fuzz))
    if not rows:
        raise ConfigError("missing config field 'exponents' (or 'audit.fuzz')")
    worst = max(r["max_discrepancy"] for r in rows)
    ok = all(r["passed"] for r in rows)
    out = _outdir(cfg)
    _write_report(out, {"metadata": metadata(cfg, "audit-exponents"),
                        "result": {"count": len(rows), "max_discrepancy": worst, "passed": ok,
                                   "audits": rows[:20]}})
    _say(f"{len(rows)} configs audited, max discrepancy {worst:.3e}")
    return EXIT_OK if ok else EXIT_FAIL


COMMANDS = {
    "verify-bubble": cmd_verify_bubble,
    "verify-singular": cmd_verify_singular,
    "solve": cmd_solve,
    "sharp-constant": cmd_sharp_constant,
    "symmetry": cmd_symmetry,
    "probe-contraction": cmd_probe_contraction,
    "audit-exponents": cmd_audit_exponents,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hlsys", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="JSON config file")
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--strict", action="store_true", help="non-convergence is a failure")
        sp.add_argument("--jobs", type=int, help="worker threads for kernel assembly")
        sp.add_argument("--n", type=int)
        sp.add_argument("--alpha", type=float)
        sp.add_argument("--p", type=float)
        sp.add_argument("--p0", type=float)
        sp.add_argument("--M", type=int)
        sp.add_argument("--R-max", dest="R_max", type=float)
        sp.add_argument("--grading", type=float)
        sp.add_argument("--basis", choices=("linear", "cubic"))
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    try:
        cfg = resolve_config(args)
        return COMMANDS[args.command](cfg, strict=args.strict)
    except (ConfigError, KeyError, TypeError, DomainError, InfeasibleError, ConformalityError,
            ParameterRelationError, PreconditionError, CoverageError, NonDecayError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        if isinstance(exc, KeyError):
            msg = f"missing config field '{msg}'"
        _say(f"config error: {msg}")
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
