import numpy as np
import pytest
from scipy import optimize
from scipy.integrate import trapezoid
from hypothesis import given, strategies as st

from thinhomog.homogenize import HomogenizedModel
from thinhomog.limit1d import solve_limit_linear, solve_limit_semilinear

PI = np.pi


def model(q=1.0, p=2.0, c_f=None):
    return HomogenizedModel(q, "resonant", p, c_f=c_f)


def discrete_energy_oracle(q, p, fbar, n):
    """Independent minimiser of the 1D P1 energy.

    E(u) = q/p sum h |du/h|^p + 1/p sum m_i |u_i|^p - sum b_i u_i
    with trapezoid (lumped) mass and a two-point Gauss load.
    """
    x = np.linspace(0, 1, n + 1)
    h = np.diff(x)
    m = np.zeros(n + 1)
    m[:-1] += h / 2
    m[1:] += h / 2
    g = np.array([0.5 - 0.5 / np.sqrt(3), 0.5 + 0.5 / np.sqrt(3)])
    b = np.zeros(n + 1)
    for t in g:
        xq = x[:-1] + t * h
        fq = fbar(xq) * h / 2
        b[:-1] += fq * (1 - t)
        b[1:] += fq * t

    def grad(u):
        s = np.diff(u) / h
        flux = q * np.abs(s) ** (p - 2) * s
        out = m * np.abs(u) ** (p - 2) * u - b
        out[:-1] -= flux
        out[1:] += flux
        return out

    def E(u):
        s = np.diff(u) / h
        return q / p * np.sum(h * np.abs(s) ** p) + np.sum(m * np.abs(u) ** p) / p - b @ u

    sol = optimize.minimize(E, np.ones(n + 1), jac=grad, method="BFGS", options={"gtol": 1e-13})
    # polish the minimiser on the optimality system
    sol = optimize.root(grad, sol.x, method="lm", tol=1e-15)
    assert np.max(np.abs(grad(sol.x))) < 1e-12
    return sol.x


@pytest.mark.parametrize("p", [1.5, 2.0, 3.0, 4.0])
@pytest.mark.parametrize("c", [0.5, 2.0, -1.5])
def test_constant_source_exact(p, c):
    sol = solve_limit_linear(model(0.7, p), lambda x: np.full_like(x, c), n=64)
    np.testing.assert_allclose(sol.values, np.sign(c) * abs(c) ** (1 / (p - 1)), atol=1e-10)


def test_zero_source():
    sol = solve_limit_linear(model(), lambda x: 0 * x, n=16)
    assert not np.any(sol.values) and sol.iterations == 0


def test_p2_manufactured_second_order():
    fbar = lambda x: (1 + PI ** 2) * np.cos(PI * x)
    errs = []
    for n in (32, 64, 128, 256):
        sol = solve_limit_linear(model(), fbar, n=n)
        errs.append(np.max(np.abs(sol.values - np.cos(PI * sol.x))))
    rates = np.log2(np.array(errs[:-1]) / errs[1:])
    assert np.all(rates > 1.8)


def test_p3_matches_dense_energy_minimisation():
    fbar = lambda x: 1.0 + x
    n = 32
    sol = solve_limit_linear(model(0.5, 3.0), fbar, n=n)
    np.testing.assert_allclose(sol.values, discrete_energy_oracle(0.5, 3.0, fbar, n), atol=1e-8)
    # f_bar = 1 has the constant solution 1
    one = solve_limit_linear(model(0.5, 3.0), lambda x: np.ones_like(x), n=n)
    np.testing.assert_allclose(one.values, 1.0, atol=1e-10)


def test_neumann_slope_at_ends():
    fbar = lambda x: (1 + PI ** 2) * np.cos(PI * x)
    scaled = []
    for n in (32, 64, 128, 256):
        sol = solve_limit_linear(model(), fbar, n=n)
        ends = max(abs(sol.derivative(0.0)), abs(sol.derivative(1.0)))
        scaled.append(n * ends)
    # |u'(0)|, |u'(1)| <= C/n with the same C along the sweep
    assert max(scaled) < 1.1 * min(scaled) + 1e-12
    assert max(scaled) < 10.0


def test_p3_self_convergence():
    fbar = lambda x: np.exp(x) * (2 + np.sin(3 * x))
    ref = solve_limit_linear(model(0.6, 3.0), fbar, n=2048)
    errs = []
    for n in (32, 64, 128):
        sol = solve_limit_linear(model(0.6, 3.0), fbar, n=n)
        errs.append(np.max(np.abs(sol.values - ref(sol.x))))
    assert errs[0] / errs[1] >= 2 and errs[1] / errs[2] >= 2


@given(q=st.floats(0.2, 2.0), p=st.sampled_from([2.0, 2.5, 3.0]))
def test_solution_bounded_by_source(q, p):
    # comparison principle: 1 <= f_bar <= 2 gives 1 <= u^(p-1) <= 2
    sol = solve_limit_linear(model(q, p), lambda x: 1.5 + 0.5 * np.cos(5 * x), n=64)
    u = sol.values ** (p - 1)
    assert np.all(u >= 1 - 1e-9) and np.all(u <= 2 + 1e-9)


def test_missing_source_and_bad_grid():
    with pytest.raises(ValueError):
        solve_limit_linear(model(), None)
    with pytest.raises(ValueError):
        solve_limit_linear(model(), lambda x: x, n=1)


def test_csv_roundtrip(tmp_path):
    sol = solve_limit_linear(model(), lambda x: 1 + x, n=8)
    path = tmp_path / "u.csv"
    sol.to_csv(path)
    data = np.loadtxt(path, delimiter=",", skiprows=1)
    np.testing.assert_array_equal(data[:, 0], sol.x)
    np.testing.assert_array_equal(data[:, 1], sol.values)
    assert sol.lp_norm(2.0) == pytest.approx(np.sqrt(trapezoid(sol.values ** 2, sol.x)), rel=1e-3)


# ---------------------------------------------------------------------------
# semilinear

def test_semilinear_zero_reaction():
    sol = solve_limit_semilinear(model(c_f=0.5), lambda u: 0 * u, n=32)
    assert sol.converged and not np.any(sol.values)


@pytest.mark.parametrize("p", [2.0, 3.0])
def test_semilinear_constant_reaction(p):
    sol = solve_limit_semilinear(model(0.8, p, c_f=0.5), lambda u: np.full_like(u, 3.0), n=32)
    np.testing.assert_allclose(sol.values, 1.5 ** (1 / (p - 1)), atol=1e-10)


def test_semilinear_matches_scalar_root():
    # f depends on u only, so the solution is the constant root of u = c_f f(u)
    f = lambda u: 1.0 / (1.0 + u ** 2)
    sol = solve_limit_semilinear(model(1.0, 2.0, c_f=0.5), f, n=1024)
    root = optimize.brentq(lambda u: u - 0.5 * f(u), 0, 1, xtol=1e-15)
    assert sol.converged
    np.testing.assert_allclose(sol.values, root, atol=1e-6)


def test_semilinear_fixed_point_consistency():
    f = lambda u: 2.0 / (1.0 + u ** 2)
    m = model(0.5, 3.0, c_f=0.7)
    sol = solve_limit_semilinear(m, f, n=128, tol=1e-11)
    assert sol.converged and sol.iterations < 50
    nodes = sol.x
    again = solve_limit_linear(m, lambda x: 0.7 * f(np.interp(x, nodes, sol.values)), n=128)
    np.testing.assert_allclose(again.values, sol.values, atol=1e-9)
    assert np.all(np.diff(sol.history[-5:]) <= 0)


def test_semilinear_needs_ratio():
    with pytest.raises(ValueError):
        solve_limit_semilinear(model(), lambda u: u)
