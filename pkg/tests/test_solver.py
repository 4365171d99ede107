import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hlsys.closed_forms import BubbleParams, bubble_profile, exact_bubble_pair, singular_pair, singular_profiles
from hlsys.exponents import DomainError
from hlsys.radial_grid import GridMismatchError, from_callable, make_grid
from hlsys.riesz import DivergenceError, build_kernel_table
from hlsys.solver import (
    ContractionOperator,
    ParameterRelationError,
    PreconditionError,
    ProbeParams,
    SolverSettings,
    contraction_probe,
    cubic_cutoff,
    decay_check,
    fit_bubble_shape,
    lipschitz_sweep,
    make_contraction_operator,
    picard_solve,
    system_residual,
)

PROBE = ProbeParams(alpha=2.0, beta=1.0, r=2.0, a=3.0, b=2.0, R=1.0)


def test_settings_validation():
    with pytest.raises(DomainError):
        SolverSettings(tol=0.0)
    with pytest.raises(DomainError):
        SolverSettings(damping=1.5)
    with pytest.raises(DomainError):
        SolverSettings(normalization="max")


def test_bubble_start_converges_fast(cfg32, grid2000, table32):
    u0 = bubble_profile(cfg32, BubbleParams(), grid2000)
    u, v, rep = picard_solve(cfg32, grid2000, table32, u0)
    assert rep.converged and rep.iterations <= 5
    assert rep.residual["residual"] <= 1e-3
    assert len(rep.iterates) == rep.iterations


def test_gaussian_start_reaches_bubble(cfg32, grid2000, table32):
    u0 = from_callable(grid2000, 3, lambda r: np.exp(-r * r))
    u, v, rep = picard_solve(cfg32, grid2000, table32, u0)
    assert rep.converged and rep.iterations <= 200
    fit = fit_bubble_shape(u, 0.5, 10.0)
    assert fit["sup_distance"] <= 1e-2
    assert all(it.monotone for it in rep.iterates)


def test_zero_start_rejected(cfg32, grid400, table32_small):
    with pytest.raises(PreconditionError):
        picard_solve(cfg32, grid400, table32_small, from_callable(grid400, 3, np.zeros_like))


def test_slow_tail_diverges(cfg32, grid400, table32_small):
    u0 = from_callable(grid400, 3, lambda r: (1 + r) ** -0.3, tail=(1.0, 0.3))
    with pytest.raises(DivergenceError):
        picard_solve(cfg32, grid400, table32_small, u0)


def test_nonconvergence_is_flagged(cfg32, grid400, table32_small):
    u0 = from_callable(grid400, 3, lambda r: np.exp(-r * r))
    _, _, rep = picard_solve(cfg32, grid400, table32_small, u0, SolverSettings(max_iters=3, tol=1e-14))
    assert not rep.converged and rep.iterations == 3


@settings(max_examples=8, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_iterates_stay_nonnegative_and_monotone(seed):
    # damping 1, conformal case: nonincreasing starts give nonincreasing iterates
    g, T, cfg = _small()
    rng = np.random.default_rng(seed)
    vals = np.sort(rng.random(g.M + 1))[::-1] * np.exp(-g.nodes)
    u0 = from_callable(g, 3, lambda r: vals)
    u, v, rep = picard_solve(cfg, g, T, u0, SolverSettings(max_iters=6, damping=1.0))
    assert np.all(u.values >= 0) and np.all(v.values >= 0)
    assert all(it.monotone for it in rep.iterates)


_S = {}


def _small():
    if not _S:
        from hlsys.exponents import make_config

        g = make_grid(20.0, 300)
        _S["v"] = (g, build_kernel_table((3, 2.0), g), make_config(3, 2.0, 5.0))
    return _S["v"]


def test_residual_of_exact_bubble(cfg32, grid2000, table32):
    u, v = exact_bubble_pair(cfg32, grid2000, table32, rho=4 * math.pi / 3)
    assert system_residual(cfg32, table32, u, v)["residual"] <= 1e-4


def test_residual_with_zero_partner(cfg32, grid2000, table32):
    u, _ = exact_bubble_pair(cfg32, grid2000, table32)
    zero = u.replace(values=np.zeros_like(u.values), tail_coefficient=0.0)
    res = system_residual(cfg32, table32, u, zero)
    assert 0.5 <= res["residual"] <= 1.0 + 1e-12


def test_residual_grid_mismatch(cfg32, table32_small):
    other = make_grid(20.0, 401)
    f = from_callable(other, 3, np.ones_like)
    with pytest.raises(GridMismatchError):
        system_residual(cfg32, table32_small, f, f)


def test_singular_pair_residual(cfg32, grid2000, table32):
    pair, _ = singular_pair(cfg32, grid2000, table32)
    u, v = singular_profiles(cfg32, grid2000, pair.c_u, pair.c_v)
    assert system_residual(cfg32, table32, u, v)["residual"] <= 1e-2


def test_decay_check_examples(cfg32, grid400):
    u = bubble_profile(cfg32, BubbleParams(), grid400)
    d = decay_check(u, u)
    assert d["gamma_u"] == pytest.approx(1.0, rel=0.05)
    su, sv = singular_profiles(cfg32, grid400)
    assert decay_check(su, sv)["gamma_u"] == pytest.approx(0.5, rel=0.02)
    const = from_callable(grid400, 3, np.ones_like)
    assert not decay_check(const, const)["passed"]
    g200 = make_grid(200.0, 400)
    fast = bubble_profile(cfg32, BubbleParams(), g200)
    assert decay_check(fast, fast)["passed"]


# ---------------------------------------------------------------------------
# contraction probe


@pytest.fixture(scope="module")
def probe_op():
    g = make_grid(1.0, 200)
    U = from_callable(g, 3, lambda r: 1 / (1 + r * r))
    V = from_callable(g, 3, np.ones_like)
    return make_contraction_operator(PROBE, U, V)


def test_cutoff_shape():
    r = np.array([0.0, 0.5, 0.75, 1.0])
    assert np.allclose(cubic_cutoff(r, 1.0), [1.0, 1.0, 0.5, 0.0])


def test_relation_violation_rejected():
    g = make_grid(1.0, 20)
    U = from_callable(g, 3, np.ones_like)
    with pytest.raises(ParameterRelationError):
        make_contraction_operator(ProbeParams(2.0, 1.0, 2.0, 3.0, 3.0, 1.0), U, U)


def test_radius_must_match_grid():
    g = make_grid(2.0, 20)
    U = from_callable(g, 3, np.ones_like)
    with pytest.raises(DomainError):
        make_contraction_operator(PROBE, U, U)


def test_equal_inputs_give_zero(probe_op, rng):
    phi = rng.random(probe_op.grid.M + 1)
    rep = contraction_probe(probe_op, phi, phi.copy(), 3)
    assert np.all(probe_op(phi) - probe_op(phi.copy()) == 0.0)
    assert rep["lipschitz_ratio"] == 0.0


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(0.01, 100.0))
def test_domination_margin(seed, scale):
    op = _probe()
    rng = np.random.default_rng(seed)
    phi, psi = scale * rng.random(op.grid.M + 1), scale * rng.random(op.grid.M + 1)
    assert contraction_probe(op, phi, psi, 3)["domination_margin"] >= -1e-12 * max(1.0, scale)


_P = {}


def _probe() -> ContractionOperator:
    if not _P:
        g = make_grid(1.0, 120)
        U = from_callable(g, 3, lambda r: 1 / (1 + r * r))
        V = from_callable(g, 3, np.ones_like)
        _P["op"] = make_contraction_operator(PROBE, U, V)
    return _P["op"]


def test_half_amplitude_scales_ratio(probe_op, rng):
    phi, psi = rng.random(probe_op.grid.M + 1), rng.random(probe_op.grid.M + 1)
    full = contraction_probe(probe_op, phi, psi, 3)["lipschitz_ratio"]
    half = contraction_probe(probe_op.with_U(0.5 * probe_op.U), phi, psi, 3)["lipschitz_ratio"]
    assert half / full == pytest.approx(2 ** (-1 / PROBE.r), rel=0.1)


def test_sweep_finds_threshold(probe_op, rng):
    pairs = [(rng.random(probe_op.grid.M + 1), rng.random(probe_op.grid.M + 1)) for _ in range(3)]
    sweep = lipschitz_sweep(probe_op, pairs, [4.0, 1.0, 0.25, 0.0625, 0.015625], 3)
    ratios = [r["lipschitz_ratio"] for r in sweep["rows"]]
    assert ratios == sorted(ratios)
    assert ratios[0] < 0.5 < ratios[-1]
    assert sweep["threshold_smallness"] is not None


def test_norm_exponent_default_is_admissible():
    lo, hi = PROBE.p_range(3)
    assert lo < PROBE.norm_exponent(3) < hi
