import numpy as np
import pytest
from scipy import integrate
from hypothesis import given, strategies as st

from thinhomog.fem import FemField
from thinhomog.geometry import PeriodicProfile, ThinDomainSpec, build_thin_mesh, profile_average
from thinhomog.unfolding import (CellSplit, PointEvaluator, StripUnfoldGrid, UnfoldGrid,
                                 derivative_exchange_check, iteration_terms, lambda_remainder,
                                 norm_identity, physical_lp_norm, physical_strip_integral,
                                 propagation_gap, strip_lambda_remainder, strip_lp_error, unfold,
                                 unfold_strip, unfolding_error)

G = PeriodicProfile.cosine(2.0, 1.0)
H = PeriodicProfile.cosine(1.0, 0.5)
SAW = PeriodicProfile.sawtooth(1.0, 3.0)


def spec(eps, h=H, g=G):
    return ThinDomainSpec(eps, 1.0, 0.5, 1.0, g, h)


def smooth(eps):
    return lambda x, y: np.cos(np.pi * x) + x * (y / eps) + 0.25 * (y / eps) ** 2


def test_cell_split():
    s = CellSplit.of(0.3)
    assert s.n_cells == 3 and s.lam_start == pytest.approx(0.9) and s.lam_length == pytest.approx(0.1)
    np.testing.assert_array_equal(s.index([0.0, 0.29, 0.31, 0.95]), [0, 0, 1, 3])
    assert CellSplit.of(0.25).lam_length == 0.0


def test_unit_field_unfolds_to_one():
    eps = 1 / 8.5
    grid = UnfoldGrid(eps, 1.0, G, n_x=4, n1=16, n2=4)
    samples = unfold(lambda x, y: np.ones_like(x), grid)
    np.testing.assert_array_equal(samples.values, 1.0)
    full = samples.expand()
    assert full.shape[0] == (grid.split.n_cells + 1) * grid.n_x
    assert not np.any(full[-grid.n_x:])
    # |I_eps| |Y*| with |Y*| = L_g <g>
    assert samples.integral() == pytest.approx(grid.split.lam_start * 2.0, rel=1e-12)
    assert grid.cell_area == pytest.approx(2.0, rel=1e-12)


def test_sample_budget_is_capped():
    grid = UnfoldGrid(1 / 64, 1.0, G, n_x=64, n1=64, n2=64, max_samples=1e5)
    assert grid.split.n_cells * grid.n_x * grid.n1 * grid.n2 <= 1e5


def test_physical_norm_against_dblquad():
    eps = 1 / 4
    phi = smooth(eps)
    ours = physical_lp_norm(phi, eps, 1.0, G, 2.0)
    ref, _ = integrate.dblquad(lambda y, x: phi(x, y) ** 2, 0, 1, 0, lambda x: eps * G(x / eps),
                               epsabs=1e-14, epsrel=1e-12)
    assert ours == pytest.approx(np.sqrt(ref), rel=1e-10)


@pytest.mark.parametrize("p", [1.5, 2.0, 3.0])
@pytest.mark.parametrize("g", [G, SAW])
def test_norm_identity_smooth_field(p, g):
    eps = 1 / (16 + 0.5)
    lhs, rhs = norm_identity(smooth(eps), UnfoldGrid(eps, 1.0, g, n_x=4, n1=64, n2=16), p)
    # exact up to quadrature; |phi|^p has a kink where phi changes sign near x = 1
    assert lhs == pytest.approx(rhs, rel=1e-5)


def test_norm_identity_p1_field(rng):
    eps = 1 / 16
    m = build_thin_mesh(spec(eps), eps / 10)
    u = FemField(m, rng.standard_normal(m.n_vertices))
    lhs, rhs = norm_identity(u, UnfoldGrid(eps, 1.0, G), 2.0)
    assert abs(lhs / rhs - 1) <= 1e-2


@given(a=st.floats(-3, 3), b=st.floats(-3, 3))
def test_linearity_and_composition(a, b):
    eps = 1 / 8.5
    grid = UnfoldGrid(eps, 1.0, G, n_x=2, n1=8, n2=4)
    u, v = smooth(eps), (lambda x, y: np.sin(3 * x) * (1 + y / eps))
    lin = unfold(lambda x, y: a * u(x, y) + b * v(x, y), grid).values
    sep = a * unfold(u, grid).values + b * unfold(v, grid).values
    np.testing.assert_allclose(lin, sep, rtol=1e-13, atol=1e-13)
    comp = unfold(lambda x, y: np.tanh(u(x, y)), grid).values
    np.testing.assert_array_equal(comp, np.tanh(unfold(u, grid).values))


def test_unfolding_error_first_order_for_x_fields():
    u = lambda x: np.cos(np.pi * x)
    ev = PointEvaluator(lambda x, y: u(x), lambda x, y: (-np.pi * np.sin(np.pi * x), 0 * y))
    errs = [unfolding_error(ev, u, 2.0, UnfoldGrid(2.0 ** -k, 1.0, G, n_x=8, n1=16, n2=4))[0]
            for k in (7, 9, 11)]
    np.testing.assert_allclose(np.array(errs[:-1]) / errs[1:], 4.0, rtol=0.02)
    assert errs[-1] <= 1e-3


def test_unfolding_error_of_interpolant():
    eps = 1 / 32
    m = build_thin_mesh(spec(eps), eps / 10)
    u = lambda x: np.cos(np.pi * x)
    field = FemField.interpolate(m, lambda x, y: u(x))
    grid = UnfoldGrid(eps, 1.0, G, n_x=8, n1=16, n2=4)
    e_fem, _ = unfolding_error(field, u, 2.0, grid)
    ev = PointEvaluator(lambda x, y: u(x), lambda x, y: (-np.pi * np.sin(np.pi * x), 0 * y))
    e_exact, _ = unfolding_error(ev, u, 2.0, grid)
    # the interpolant adds only its O(h^2) error to the unfolding offset
    assert abs(e_fem - e_exact) <= 1e-3


@pytest.mark.parametrize("c", [0.5, 2.0])
@pytest.mark.parametrize("p", [2.0, 3.0])
def test_unfolding_error_constant_against_zero(c, p):
    eps = 1 / 8.5
    grid = UnfoldGrid(eps, 1.0, G, n_x=4, n1=16, n2=4)
    ev = PointEvaluator(lambda x, y: np.full_like(x, c), lambda x, y: (0 * x, 0 * y))
    e, e1 = unfolding_error(ev, lambda x: 0 * x, p, grid)
    assert e == pytest.approx(c * (grid.split.lam_start * 2.0) ** (1 / p), rel=1e-12)
    assert e1 == pytest.approx(e, rel=1e-12)


def test_derivative_exchange(rng):
    eps = 1 / 16
    m = build_thin_mesh(spec(eps), eps / 10)
    grid = UnfoldGrid(eps, 1.0, G, n_x=2, n1=16, n2=8)
    affine = FemField.interpolate(m, lambda x, y: 2.0 - 3.0 * x + 5.0 * y)
    assert derivative_exchange_check(affine, grid) <= 1e-8
    rough = FemField(m, rng.standard_normal(m.n_vertices))
    assert derivative_exchange_check(rough, grid) <= 1e-6


def test_lambda_remainder_vanishes():
    # Lambda has length eps/2 at every eps_k = 1/(2^k + 1/2)
    vals = [lambda_remainder(smooth(e), e, 1.0, G) for e in (1 / (2 ** k + 0.5) for k in range(3, 8))]
    assert np.all(np.diff(vals) < 0)
    assert vals[-1] <= 0.1 * vals[0]
    assert lambda_remainder(smooth(1 / 8), 1 / 8, 1.0, G) == 0.0


def test_strip_remainder_trend():
    vals = [strip_lambda_remainder(smooth(e), spec(e)) for e in (1 / (2 ** k + 0.5) for k in range(3, 7))]
    # the h-oscillation over the leftover piece makes the sequence wobble
    assert vals[-1] < vals[0] and vals[-1] < 0.3 * vals[0]


def test_strip_unfolding_of_x_field_converges():
    phi = lambda x: np.cos(np.pi * x) + x
    errs = [strip_lp_error(phi, StripUnfoldGrid(spec(2.0 ** -k), n1=16, nz1=4, nz2=4), 2.0)
            for k in (4, 6, 8)]
    assert errs[0] > errs[1] > errs[2]
    # the strip cell has size eps^beta, beta = 1/2: a factor 16 in eps gains about 4
    assert errs[0] / errs[2] > 3.2


def test_strip_unfolding_zero_on_lambda():
    s = spec(1 / 8.5)
    grid = StripUnfoldGrid(s, n1=8, nz1=4, nz2=2)
    for k, (vals, _) in enumerate(unfold_strip(lambda x, y: np.ones_like(x), grid)):
        X, Y, W, inside = grid.physical_points(k)
        assert np.all(vals[:, inside] == 1.0) and np.all(vals[:, ~inside] == 0.0)


@pytest.mark.parametrize("eps", [1 / 8.5, 1 / 16.5, 1 / 32.5])
def test_iteration_identity(eps):
    terms = iteration_terms(smooth(eps), spec(eps))
    assert terms.residual_full / terms.scale <= 1e-4
    # the three-term form misses exactly the propagation gap
    assert terms.residual_three_term == pytest.approx(abs(terms.propagation), rel=1e-6, abs=1e-12)


def test_propagation_gap_zero_for_constant_h():
    eps = 1 / 16.5
    assert propagation_gap(smooth(eps), spec(eps, h=PeriodicProfile.constant(1.0))) <= 1e-12


def test_physical_strip_integral_of_one():
    eps = 1 / 16
    s = spec(eps)
    got = physical_strip_integral(lambda x, y: np.ones_like(x), s)
    ref = integrate.quad(lambda x: H(x / eps ** 0.5), 0, 1, limit=400, epsabs=1e-13)[0]
    assert got == pytest.approx(ref, rel=1e-10)
    assert got == pytest.approx(profile_average(H), rel=eps ** 0.5)
