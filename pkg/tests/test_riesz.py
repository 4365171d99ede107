import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad
from scipy.special import gamma as G

from hlsys.radial_grid import GridMismatchError, from_callable, make_grid, sphere_area
from hlsys.riesz import (
    DivergenceError,
    angular_kernel_quadrature,
    apply_riesz,
    build_kernel_table,
    cached_table,
    graded_rule,
    load_table,
    radial_kernel,
    save_table,
)


def power_potential_constant(n, alpha, b):
    """I_alpha(|y|^-b)(x) = C |x|^(alpha-b), from the Riesz composition formula."""
    return (math.pi ** (n / 2) * G(alpha / 2) * G((n - b) / 2) * G((b - alpha) / 2)
            / (G((n - alpha) / 2) * G(b / 2) * G((n + alpha - b) / 2)))


@pytest.mark.parametrize("n, alpha", [(2, 1.0), (2, 0.5), (3, 2.0), (3, 1.0), (3, 0.7), (4, 1.5), (5, 3.0)])
def test_kernel_matches_angular_quadrature(n, alpha):
    for r, s in [(1.0, 0.3), (0.2, 1.7), (2.0, 2.2), (1.0, 0.0), (0.5, 0.45)]:
        want = angular_kernel_quadrature(n, alpha, r, s, order=400)
        assert float(radial_kernel(n, alpha, r, s)) == pytest.approx(want, rel=1e-9)


def test_kernel_is_symmetric_after_weighting():
    # k(r, s) is symmetric because |x-y| is
    r, s = 0.7, 1.9
    assert float(radial_kernel(3, 1.3, r, s)) == pytest.approx(float(radial_kernel(3, 1.3, s, r)))


@pytest.mark.parametrize("beta", [-0.5, 0.0, 0.4])
def test_graded_rule_integrates_singular_power(beta):
    x, w = graded_rule(1.0, 3.0, beta)
    got = np.sum(w * np.abs(x - 1.0) ** beta * np.cos(x))
    want = quad(lambda s: (s - 1.0) ** beta * math.cos(s), 1.0, 3.0, limit=200)[0]
    assert got == pytest.approx(want, rel=1e-10)
    xr, wr = graded_rule(3.0, 1.0, beta)
    assert np.all((xr >= 1.0) & (xr <= 3.0))


def test_constant_at_origin_closed_form():
    # I_alpha 1_{B_R}(0) = sigma R^alpha / alpha, reproduced exactly by hat functions
    g = make_grid(3.0, 300)
    for n, alpha in [(3, 2.0), (3, 1.0), (2, 1.0)]:
        T = build_kernel_table((n, alpha), g)
        f = from_callable(g, n, np.ones_like)
        assert apply_riesz(T, f, refit=False).values[0] == pytest.approx(sphere_area(n) * 3.0**alpha / alpha,
                                                                         rel=1e-9)


@pytest.mark.parametrize("n, alpha, b", [(3, 2.0, 2.5), (3, 1.0, 2.0), (2, 1.0, 1.5)])
def test_power_law_potential(n, alpha, b):
    g = make_grid(20.0, 2000)
    T = build_kernel_table((n, alpha), g)
    f = from_callable(g, n, lambda r: np.maximum(r, g.nodes[1]) ** -b, tail=(1.0, b))
    I = apply_riesz(T, f, refit=False)
    C = power_potential_constant(n, alpha, b)
    # independent 1-D check of the constant at r = 1
    k = lambda s: float(radial_kernel(n, alpha, 1.0, s)) * s ** (n - 1 - b)  # noqa: E731
    one_d = quad(k, 0, 1, limit=400)[0] + quad(k, 1, np.inf, limit=400)[0]
    assert one_d == pytest.approx(C, rel=1e-6)
    r = g.nodes
    m = (r >= 1.0) & (r <= 5.0)
    # the clipped, linearly interpolated singularity at 0 costs up to ~4e-3 for b = 2.5
    assert np.max(np.abs(I.values[m] * r[m] ** (b - alpha) / C - 1.0)) < 1e-2


def test_linear_table_is_nonnegative(table32_small):
    assert np.all(table32_small.entries >= 0.0)


def test_cubic_basis_is_more_accurate():
    g = make_grid(20.0, 400)
    lin = build_kernel_table((3, 2.0), g)
    cub = build_kernel_table((3, 2.0), g, basis="cubic")
    f = from_callable(g, 3, lambda r: (1 + r * r) ** -2.5, tail=(1.0, 5.0))
    exact = 4 * math.pi / 3 * (1 + g.nodes**2) ** -0.5
    m = g.nodes <= 5.0
    e_lin = np.max(np.abs(apply_riesz(lin, f).values[m] - exact[m]))
    e_cub = np.max(np.abs(apply_riesz(cub, f).values[m] - exact[m]))
    assert e_cub < 0.1 * e_lin


def test_divergent_tail_rejected(table32_small, grid400):
    f = from_callable(grid400, 3, lambda r: 1 / (1 + r), tail=(1.0, 1.0))
    with pytest.raises(DivergenceError):
        apply_riesz(table32_small, f)


def test_grid_and_dimension_mismatch(table32_small):
    other = make_grid(20.0, 401)
    with pytest.raises(GridMismatchError):
        apply_riesz(table32_small, from_callable(other, 3, np.ones_like))
    with pytest.raises(GridMismatchError):
        apply_riesz(table32_small, from_callable(table32_small.grid, 2, np.ones_like))


@settings(max_examples=30, deadline=None)
@given(st.floats(-3, 3), st.floats(-3, 3), st.integers(0, 2**31 - 1))
def test_linearity_without_tails(a, b, seed):
    T = _small_table()
    rng = np.random.default_rng(seed)
    f, g = rng.random(T.grid.M + 1), rng.random(T.grid.M + 1)
    assert np.allclose(T.apply(a * f + b * g), a * T.apply(f) + b * T.apply(g), rtol=1e-12, atol=1e-12)


_CACHE = {}


def _small_table():
    if "t" not in _CACHE:
        _CACHE["t"] = build_kernel_table((2, 1.0), make_grid(5.0, 60))
    return _CACHE["t"]


def test_positivity_preserved(table32_small, rng):
    vals = rng.random(table32_small.grid.M + 1)
    vals[rng.random(len(vals)) < 0.5] = 0.0
    out = apply_riesz(table32_small, from_callable(table32_small.grid, 3, lambda r: vals))
    assert np.all(out.values > 0.0)


def test_cache_round_trip(tmp_path, grid400, table32_small):
    path = save_table(table32_small, tmp_path / "k.bin")
    assert path.read_bytes()[:8] == b"HLSK0001"
    back = load_table(path, grid400)
    assert np.array_equal(back.entries, table32_small.entries)
    assert (back.n, back.alpha, back.basis) == (3, 2.0, "linear")
    with pytest.raises(GridMismatchError):
        load_table(path, make_grid(20.0, 401))
    (tmp_path / "junk.bin").write_bytes(b"nope")
    with pytest.raises(ValueError):
        load_table(tmp_path / "junk.bin", grid400)


def test_cached_table_reuses_file(tmp_path):
    g = make_grid(5.0, 40)
    a = cached_table(3, 2.0, g, tmp_path)
    files = list(tmp_path.iterdir())
    assert len(files) == 1
    b = cached_table(3, 2.0, g, tmp_path)
    assert np.array_equal(a.entries, b.entries)


def test_parallel_build_matches_serial():
    g = make_grid(5.0, 80)
    assert np.array_equal(build_kernel_table((3, 1.0), g).entries,
                          build_kernel_table((3, 1.0), g, jobs=3).entries)
