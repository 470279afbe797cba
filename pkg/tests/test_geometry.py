import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.integrate import quad

from thinhomog.errors import GeometryError, InvalidProfileError, ResolutionError
from thinhomog.geometry import (PeriodicProfile, ThinDomainSpec, build_cell_mesh, build_thin_mesh,
                                export_mesh_tables, graded_levels, profile_average)


def quad_average(profile, exponent=1.0):
    """Oracle: scipy adaptive quadrature over one period."""
    L = profile.period
    val, _ = quad(lambda y: float(profile(y)) ** exponent, 0.0, L, limit=400,
                  epsabs=1e-14, epsrel=1e-13)
    return val / L


def quad_strip(f, eps, scale, n_cells):
    """Oracle for int_0^1 f(x/scale) dx, split at cell boundaries."""
    edges = np.unique(np.clip(np.arange(n_cells + 2) * scale, 0, 1))
    return sum(quad(lambda x: float(f(x / scale)), a, b, epsabs=1e-15, epsrel=1e-13)[0]
               for a, b in zip(edges[:-1], edges[1:]))


# ---------------------------------------------------------------------------
# profiles

def test_profile_average_examples(cosine_g):
    assert profile_average(PeriodicProfile.constant(2.0)) == pytest.approx(2.0, abs=1e-14)
    assert profile_average(cosine_g) == pytest.approx(2.0, abs=1e-12)
    # 1/sqrt(a^2 - b^2) = 1/sqrt(3)
    assert profile_average(cosine_g, -1.0) == pytest.approx(0.5773502692, abs=1e-10)
    assert profile_average(cosine_g, -1.0) == pytest.approx(quad_average(cosine_g, -1.0), rel=1e-11)


@given(a=st.floats(1.0, 5.0), frac=st.floats(0.0, 0.95), k=st.integers(1, 3))
def test_cosine_harmonic_mean_closed_form(a, frac, k):
    g = PeriodicProfile.cosine(a, frac * a, k=k)
    assert profile_average(g) == pytest.approx(a, rel=1e-10)
    assert profile_average(g, -1.0) == pytest.approx(1.0 / math.sqrt(a * a - (frac * a) ** 2), rel=1e-9)


@given(low=st.floats(0.2, 2.0), rise=st.floats(0.1, 3.0), exponent=st.sampled_from([-2.0, -0.5, 1.0, 3.0]))
def test_piecewise_linear_average_matches_quadrature(low, rise, exponent):
    g = PeriodicProfile.sawtooth(low, low + rise)
    assert profile_average(g, exponent) == pytest.approx(quad_average(g, exponent), rel=1e-9)


def test_profile_extrema_and_lipschitz(cosine_g):
    saw = PeriodicProfile.sawtooth(1.0, 3.0)
    assert (saw.min_value, saw.max_value, saw.lipschitz) == (1.0, 3.0, 4.0)
    assert profile_average(saw) == pytest.approx(2.0, abs=1e-13)
    assert (cosine_g.min_value, cosine_g.max_value) == (1.0, 3.0)
    assert cosine_g.lipschitz == pytest.approx(2 * math.pi)
    np.testing.assert_allclose(cosine_g.minimizers, [0.5])
    y = np.linspace(0, 1, 101)
    assert np.all(cosine_g(y) >= cosine_g.min_value - 1e-15)


@pytest.mark.parametrize("make", [
    lambda: PeriodicProfile.cosine(1.0, 1.5),
    lambda: PeriodicProfile.constant(-1.0),
    lambda: PeriodicProfile.piecewise_linear([0.0, 0.5, 1.0], [1.0, 2.0, 1.5]),
    lambda: PeriodicProfile.piecewise_linear([0.0, 0.7, 0.5, 1.0], [1, 2, 2, 1]),
    lambda: PeriodicProfile.constant(float("inf")),
])
def test_invalid_profiles_are_refused(make):
    with pytest.raises(InvalidProfileError):
        make()


@pytest.mark.parametrize("g", [PeriodicProfile.constant(1.5), PeriodicProfile.cosine(2.0, 1.0, k=2),
                               PeriodicProfile.sawtooth(1.0, 3.0, period=0.5)])
def test_profile_dict_roundtrip(g):
    back = PeriodicProfile.from_dict(g.to_dict())
    y = np.linspace(0, 2, 57)
    np.testing.assert_array_equal(back(y), g(y))


# ---------------------------------------------------------------------------
# thin meshes

def test_rectangle_mesh():
    one, half = PeriodicProfile.constant(1.0), PeriodicProfile.constant(0.5)
    spec = ThinDomainSpec(0.1, 1.0, 0.5, 1.0, one, half)
    mesh = build_thin_mesh(spec, 0.02)
    assert mesh.area == pytest.approx(0.1, rel=1e-13)
    assert mesh.strip_area == pytest.approx(0.1 ** 2 * 0.5, rel=1e-12)
    assert mesh.vertices[:, 0].min() == 0.0 and mesh.vertices[:, 0].max() == 1.0
    assert mesh.vertices[:, 1].max() == pytest.approx(0.1)


def test_domain_and_strip_measure_match_quadrature(cosine_g, cosine_h):
    for eps in (0.1, 0.07):
        spec = ThinDomainSpec(eps, 1.0, 0.5, 1.0, cosine_g, cosine_h)
        area = eps * quad_strip(cosine_g, eps, eps, int(1 / eps) + 1)
        strip = eps ** 2 * quad_strip(cosine_h, eps, eps ** 0.5, int(eps ** -0.5) + 1)
        assert spec.domain_area() == pytest.approx(area, rel=1e-12)
        assert spec.strip_area() == pytest.approx(strip, rel=1e-12)


def test_mesh_area_exact_on_whole_periods(cosine_g):
    # chords of a full cosine period cancel: the polygon has the exact area
    spec = ThinDomainSpec(0.1, 1.0, 0.5, 1.0, cosine_g, PeriodicProfile.constant(1.0))
    mesh = build_thin_mesh(spec, 0.01)
    assert mesh.area == pytest.approx(spec.domain_area(), rel=1e-6)
    assert mesh.strip_area == pytest.approx(spec.strip_area(), rel=1e-6)


def test_mesh_area_chord_error_is_second_order(cosine_g):
    # eps = 0.07 leaves a partial period, whose chord error is O((dx/period)^2)
    spec = ThinDomainSpec(0.07, 1.0, 0.5, 1.0, cosine_g, PeriodicProfile.constant(1.0))
    errs = [abs(build_thin_mesh(spec, 0.007, min_per_period=m).area / spec.domain_area() - 1)
            for m in (16, 32, 64, 128)]
    for a, b in zip(errs, errs[1:]):
        assert a / b > 3.5
    assert errs[-1] < 2e-6


def test_strip_tags_partition(cosine_g, cosine_h):
    spec = ThinDomainSpec(1 / 8, 1.0, 0.5, 1.0, cosine_g, cosine_h)
    mesh = build_thin_mesh(spec, spec.epsilon / 10, min_per_period=64)
    assert mesh.strip.dtype == bool and mesh.strip.shape == (mesh.n_triangles,)
    assert mesh.strip_area + mesh.areas[~mesh.strip].sum() == pytest.approx(mesh.area, rel=1e-14)
    assert mesh.strip_area == pytest.approx(spec.strip_area(), rel=1e-5)
    # strip triangles sit between the interface and the top at their vertices
    tv = mesh.vertices[mesh.triangles[mesh.strip]]
    x, y = tv[..., 0], tv[..., 1]
    assert np.all(y >= spec.interface(x) - 1e-12)
    assert np.all(y <= spec.top(x) + 1e-12)
    tv = mesh.vertices[mesh.triangles[~mesh.strip]]
    assert np.all(tv[..., 1] <= spec.interface(tv[..., 0]) + 1e-12)


def _hausdorff_top(mesh, spec, n=20001):
    x, y = mesh.top_polyline()
    xx = np.linspace(0, 1, n)
    return float(np.max(np.abs(np.interp(xx, x, y) - spec.top(xx))))


def test_refinement_never_moves_top_away(cosine_g, cosine_h):
    spec = ThinDomainSpec(1 / 8, 1.0, 0.5, 1.0, cosine_g, cosine_h)
    d = [_hausdorff_top(build_thin_mesh(spec, spec.epsilon / 10 / 2 ** k, min_per_period=1), spec)
         for k in range(4)]
    assert all(b <= a + 1e-15 for a, b in zip(d, d[1:]))
    assert d[-1] < d[0] / 10


def test_strip_guard_and_resolution_refusal(cosine_g):
    with pytest.raises(GeometryError):
        ThinDomainSpec(0.5, 1.0, 0.5, 1.0, cosine_g, PeriodicProfile.constant(2.0))
    with pytest.raises(GeometryError):
        ThinDomainSpec(0.1, 1.0, 1.5, 1.0, cosine_g, PeriodicProfile.constant(1.0))
    spec = ThinDomainSpec(0.1, 1.0, 0.5, 1.0, cosine_g, PeriodicProfile.constant(1.0))
    with pytest.raises(ResolutionError) as info:
        build_thin_mesh(spec, 0.5)
    assert info.value.required == pytest.approx(0.1)
    with pytest.raises(ResolutionError):
        build_thin_mesh(spec, 0.01, dx=0.05)


def test_neck_grading_levels(cosine_g):
    lv = graded_levels(1.0, 0.01, 0.1)
    assert lv[0] == 0.0 and lv[-1] == 1.0
    steps = np.diff(lv)
    assert np.all(steps > 0) and steps[0] < steps[-1]
    spec = ThinDomainSpec(0.25, 2.0, 1.0, 1.0, cosine_g, PeriodicProfile.constant(1.0))
    mesh = build_thin_mesh(spec, spec.epsilon / 12, min_per_period=16, neck_h=spec.period_g / 16)
    assert mesh.area == pytest.approx(spec.domain_area(), rel=1e-6)
    with pytest.raises(GeometryError):
        build_thin_mesh(spec, spec.epsilon / 12, neck_h=1.0)


thin_specs = st.builds(
    lambda eps, case, hb: ThinDomainSpec(
        eps, *case, 1.0, PeriodicProfile.cosine(2.0, 1.0),
        PeriodicProfile.cosine(1.0, hb) if hb > 0 else PeriodicProfile.constant(1.0)),
    st.sampled_from([1 / 4, 1 / 6, 1 / 8, 0.15]),
    st.sampled_from([(0.5, 0.25), (1.0, 0.5), (1.5, 0.75)]),
    st.sampled_from([0.0, 0.3, 0.5]))


@given(spec=thin_specs)
def test_thin_mesh_properties(spec):
    mesh = build_thin_mesh(spec, spec.epsilon / 6)
    assert np.all(mesh.areas > 0)
    assert np.isfinite(mesh.vertices).all()
    # top vertices lie on the curve
    x, y = mesh.top_polyline()
    np.testing.assert_allclose(y, spec.top(x), rtol=0, atol=1e-14)
    assert 0 < mesh.strip_area < mesh.area
    assert mesh.strip_area == pytest.approx(spec.strip_area(), rel=0.05)


def test_mesh_is_deterministic(cosine_g, cosine_h):
    spec = ThinDomainSpec(1 / 8, 1.0, 0.5, 1.0, cosine_g, cosine_h)
    a, b = build_thin_mesh(spec, 1 / 80), build_thin_mesh(spec, 1 / 80)
    np.testing.assert_array_equal(a.vertices, b.vertices)
    np.testing.assert_array_equal(a.triangles, b.triangles)
    np.testing.assert_array_equal(a.strip, b.strip)
    with pytest.raises(ValueError):
        a.vertices[0, 0] = 1.0


def test_export_tables(tmp_path, cosine_g):
    spec = ThinDomainSpec(1 / 4, 1.0, 0.5, 1.0, cosine_g, PeriodicProfile.constant(1.0))
    mesh = build_thin_mesh(spec, 1 / 40)
    vpath, tpath = export_mesh_tables(mesh, tmp_path / "m")
    v = np.loadtxt(vpath)
    t = np.loadtxt(tpath, dtype=int)
    np.testing.assert_array_equal(v[:, 1:], mesh.vertices)
    np.testing.assert_array_equal(t[:, :3], mesh.triangles)
    np.testing.assert_array_equal(t[:, 3].astype(bool), mesh.strip)


# ---------------------------------------------------------------------------
# cell meshes

def test_unit_cell_mesh():
    mesh = build_cell_mesh(PeriodicProfile.constant(1.0), 0.1)
    assert mesh.n_vertices == 121
    assert mesh.area == pytest.approx(1.0, rel=1e-14)
    pairs = mesh.periodic_pairs
    assert pairs.shape == (11, 2)
    left, right = mesh.vertices[pairs[:, 0]], mesh.vertices[pairs[:, 1]]
    np.testing.assert_array_equal(left[:, 0], 0.0)
    np.testing.assert_array_equal(right[:, 0], 1.0)
    np.testing.assert_array_equal(left[:, 1], right[:, 1])


@pytest.mark.parametrize("g", [PeriodicProfile.cosine(2.0, 1.0), PeriodicProfile.sawtooth(1.0, 3.0)])
def test_cell_mesh_pairing_and_area(g):
    mesh = build_cell_mesh(g, 1 / 32)
    pairs = mesh.periodic_pairs
    v = mesh.vertices
    left = np.flatnonzero(v[:, 0] == 0.0)
    right = np.flatnonzero(v[:, 0] == g.period)
    # exact bijection between the two side columns
    assert sorted(pairs[:, 0]) == sorted(left) and sorted(pairs[:, 1]) == sorted(right)
    np.testing.assert_array_equal(v[pairs[:, 0], 1], v[pairs[:, 1], 1])
    assert mesh.area == pytest.approx(2.0, rel=2e-3)


def test_cell_mesh_reflection_symmetry(cosine_g):
    mesh = build_cell_mesh(cosine_g, 1 / 16)
    v = mesh.vertices
    a = np.lexsort((v[:, 1], v[:, 0]))
    mirrored = np.column_stack([1.0 - v[:, 0], v[:, 1]])
    b = np.lexsort((mirrored[:, 1], mirrored[:, 0]))
    np.testing.assert_allclose(v[a], mirrored[b], atol=1e-14)


def test_cell_mesh_refuses_coarse_h(cosine_g):
    with pytest.raises(ResolutionError):
        build_cell_mesh(cosine_g, 1.0)
