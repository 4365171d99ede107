import json

import numpy as np
import pytest

from hlsys.cli import DEFAULTS, main, random_admissible
from hlsys.radial_grid import from_callable, make_grid, save_profile

SMALL = ["--M", "300", "--R-max", "20"]


def run(tmp_path, name, *args, config=None):
    argv = [name, "--out", str(tmp_path / name)] + list(args)
    if config is not None:
        path = tmp_path / f"{name}.json"
        path.write_text(json.dumps(config))
        argv += ["--config", str(path)]
    return main(argv)


def report(tmp_path, name):
    return json.loads((tmp_path / name / "report.json").read_text())


def test_verify_bubble_outputs(tmp_path):
    code = run(tmp_path, "verify-bubble", "--n", "3", "--alpha", "2", "--p", "5", "--M", "800")
    rep = report(tmp_path, "verify-bubble")
    assert code == 0 and rep["result"]["passed"]
    meta = rep["metadata"]
    assert meta["command"] == "verify-bubble" and len(meta["config_hash"]) == 64 and meta["grid_hash"]
    for f in ("rho.csv", "rho.svg"):
        assert (tmp_path / "verify-bubble" / f).exists()


def test_verify_bubble_coarse_grid_fails(tmp_path):
    assert run(tmp_path, "verify-bubble", "--n", "3", "--alpha", "2", "--p", "5", "--M", "16") == 1
    assert report(tmp_path, "verify-bubble")["result"]["ratio_spread"] > 1e-4


def test_verify_bubble_rejects_nonconformal(tmp_path):
    assert run(tmp_path, "verify-bubble", "--n", "3", "--alpha", "2", "--p", "4") == 2


def test_verify_singular(tmp_path):
    assert run(tmp_path, "verify-singular", "--n", "3", "--alpha", "2", "--p", "5", "--M", "800") == 0
    assert report(tmp_path, "verify-singular")["result"]["residual"]["residual"] <= 1e-2


def test_solve_and_warm_start(tmp_path):
    # the default grid: coarser grids drift above the default change tolerance
    cache = {"cache_dir": str(tmp_path / "cache")}
    assert run(tmp_path, "solve", "--n", "3", "--alpha", "2", "--p", "5", "--jobs", "4", config=cache) == 0
    cold = report(tmp_path, "solve")["result"]
    assert cold["converged"]
    out = tmp_path / "solve"
    for f in ("history.csv", "u.csv", "u.json", "v.csv", "profiles.svg", "history.svg"):
        assert (out / f).exists()
    warm_cfg = {"initial": {"file": str(out / "u.csv")}, **cache}
    assert run(tmp_path, "solve", "--n", "3", "--alpha", "2", "--p", "5", "--jobs", "4", "--out",
               str(tmp_path / "warm"), config=warm_cfg) == 0
    warm = json.loads((tmp_path / "warm" / "report.json").read_text())["result"]
    assert warm["converged"] and warm["iterations"] < cold["iterations"]


def test_solve_divergent_tail(tmp_path):
    g = make_grid(20.0, 300)
    slow = from_callable(g, 3, lambda r: (1 + r) ** -0.3, tail=(1.0, 0.3))
    save_profile(slow, tmp_path / "slow.csv")
    code = run(tmp_path, "solve", "--n", "3", "--alpha", "2", "--p", "5", *SMALL,
               config={"initial": {"file": str(tmp_path / "slow.csv")}})
    assert code != 0
    assert "error" in report(tmp_path, "solve")


def test_solve_strict_nonconvergence(tmp_path):
    cfg = {"solver": {"max_iters": 2, "tol": 1e-14}}
    assert run(tmp_path, "solve", "--n", "3", "--alpha", "2", "--p", "5", *SMALL, "--strict", config=cfg) == 1
    assert run(tmp_path, "solve", "--n", "3", "--alpha", "2", "--p", "5", *SMALL, config=cfg) == 0


def test_sharp_constant_maximizer_start(tmp_path):
    cfg = {"ascent": {"max_half_steps": 4}}
    assert run(tmp_path, "sharp-constant", "--n", "3", "--alpha", "2", "--p0", "1.2", *SMALL, config=cfg) == 0
    res = report(tmp_path, "sharp-constant")["result"]
    h = res["J_history"]
    assert abs(h[-1] - h[0]) / h[0] <= 1e-6
    assert (tmp_path / "sharp-constant" / "J_history.csv").exists()


def test_sharp_constant_missing_field(tmp_path, capsys):
    assert run(tmp_path, "sharp-constant", "--n", "3", "--p0", "1.2") == 2
    assert "exponents.alpha" in capsys.readouterr().err


def test_symmetry_command(tmp_path):
    cfg = {"symmetry": {"center": [0.3, -0.2]}}
    assert run(tmp_path, "symmetry", config=cfg) == 0
    assert report(tmp_path, "symmetry")["result"]["radial_decrease"]
    bump = {"symmetry": {"center": [0.3, -0.2], "bump": {"at": [2.3, -0.2], "height": 0.3, "width": 0.01}}}
    assert run(tmp_path, "symmetry", config=bump) == 1


def test_probe_command(tmp_path):
    cfg = {"probe": {"M": 80, "pairs": 5, "amplitudes": [1.0, 0.25]}}
    assert run(tmp_path, "probe-contraction", config=cfg) == 0
    rows = report(tmp_path, "probe-contraction")["result"]["rows"]
    assert len(rows) == 2
    bad = {"probe": {"M": 40, "pairs": 2, "b": 3.0}}
    assert run(tmp_path, "probe-contraction", config=bad) == 2


def test_audit_command(tmp_path):
    assert run(tmp_path, "audit-exponents", "--n", "3", "--alpha", "2", "--p", "5",
               config={"audit": {"fuzz": 200}}) == 0
    assert report(tmp_path, "audit-exponents")["result"]["count"] == 201
    assert run(tmp_path, "audit-exponents") == 2


def test_flags_override_config(tmp_path):
    cfg = {"exponents": {"n": 3, "alpha": 2.0, "p": 4.0}}
    assert run(tmp_path, "audit-exponents", "--p", "5", config=cfg) == 0
    assert report(tmp_path, "audit-exponents")["metadata"]["config"]["exponents"]["p"] == 5.0


def test_unknown_command_is_usage_error():
    assert main(["no-such-command"]) == 2


def test_defaults_untouched_by_runs(tmp_path):
    before = json.dumps(DEFAULTS, sort_keys=True)
    run(tmp_path, "audit-exponents", "--n", "3", "--alpha", "2", "--p", "5")
    assert json.dumps(DEFAULTS, sort_keys=True) == before


def test_random_admissible_draws_are_valid():
    rng = np.random.default_rng(0)
    for _ in range(50):
        c = random_admissible(rng)
        assert 0 < c.alpha < c.n and c.p > 0 and np.isfinite(c.q)
