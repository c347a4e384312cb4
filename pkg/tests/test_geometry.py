import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from slelab import geometry as geo
from slelab.errors import ParameterError, Refusal
from slelab.geometry import (HullRaster, bubbles, check_distortion, close_gaps, component_radius_px2,
                             distance_to_polyline, entire_boundary, estimate_hcap, fill_hull, fixture,
                             harmonic_measure, hull_boundary, rasterize_polyline, real_segment, segment_diameter)


def brute_radius_px2(mask):
    """Max over component pixels of the squared distance to the nearest non-component pixel."""
    padded = np.pad(mask, 1)
    inside = np.argwhere(padded)
    outside = np.argwhere(~padded)
    d2 = ((inside[:, None, :] - outside[None, :, :]) ** 2).sum(axis=2).min(axis=1)
    return int(d2.max())


def brute_diameter(z):
    z = np.asarray(z)
    return float(np.hypot(z.real[:, None] - z.real[None, :], z.imag[:, None] - z.imag[None, :]).max())


def random_walk_polyline(rng, n=300, step=0.05):
    z = np.cumsum(step * np.exp(2j * np.pi * rng.random(n)))
    z = z - z[0]
    return z.real + 1j * np.abs(z.imag)


# -- rasters --------------------------------------------------------------------

def test_trace_points_are_occupied_and_bbox_tight():
    rng = np.random.default_rng(0)
    pts = random_walk_polyline(rng) + 0.3j
    r = rasterize_polyline(pts, 0.01)
    assert r.contains(pts).all()
    x0, y0, x1, y1 = r.bbox
    assert x0 <= pts.real.min() and pts.real.max() <= x1
    assert y0 <= pts.imag.min() and pts.imag.max() <= y1
    assert pts.real.min() - x0 < r.eps and x1 - pts.real.max() < r.eps
    assert y1 - pts.imag.max() < r.eps


def test_default_pixel_is_diameter_over_1024():
    pts = np.array([0, 1 + 1j, 2])
    assert rasterize_polyline(pts).eps == pytest.approx(2 / 1024)


def test_raster_validation():
    with pytest.raises(ParameterError):
        HullRaster(0j, 0.0, np.zeros((2, 2)))
    with pytest.raises(ParameterError):
        HullRaster(-1j, 0.1, np.zeros((2, 2)))
    with pytest.raises(ParameterError):
        rasterize_polyline([])


def test_pgm_roundtrip(tmp_path):
    r = fixture("annulus", 1.0, 0.05)
    r.to_pgm(tmp_path / "a.pgm")
    assert (tmp_path / "a.pgm").read_bytes()[:2] == b"P5"
    back = HullRaster.from_pgm(tmp_path / "a.pgm", r.origin, r.eps)
    np.testing.assert_array_equal(back.bitmap, r.bitmap)


# -- fill -------------------------------------------------------------------------

def test_fill_rectangle_unchanged():
    r = fixture("rectangle", 1.0, 0.05)
    np.testing.assert_array_equal(fill_hull(r).bitmap, r.bitmap)


def test_fill_annulus_gives_disk():
    ann = fixture("annulus", 1.0, 0.02)
    disk = fixture("disk", 1.0, 0.02)
    np.testing.assert_array_equal(fill_hull(ann).bitmap, disk.bitmap)


def test_fill_uses_real_line_as_wall():
    # an arch standing on the real line encloses the region under it
    b = np.zeros((5, 7), dtype=bool)
    b[:, 1] = b[:, 5] = True
    b[4, 1:6] = True
    r = HullRaster(0j, 1.0, b)
    assert fill_hull(r).bitmap[:4, 2:5].all()
    lifted = HullRaster(1j, 1.0, b)
    assert not fill_hull(lifted).bitmap[:4, 2:5].any()


@settings(max_examples=40, deadline=None)
@given(arrays(bool, st.tuples(st.integers(1, 24), st.integers(1, 24))), st.booleans())
def test_fill_idempotent_and_no_bubbles_after(bitmap, grounded):
    r = HullRaster(0j if grounded else 1j, 0.1, bitmap)
    f = fill_hull(r)
    assert np.array_equal(fill_hull(f).bitmap, f.bitmap)
    assert np.all(f.bitmap >= r.bitmap)
    assert bubbles(f).components == []


def test_close_gaps_seals_narrow_opening():
    ring = fixture("annulus", 1.0, 0.02).bitmap.copy()
    ny, nx = ring.shape
    ring[ny // 2 - 1: ny // 2 + 1, :nx // 2 - 10] = False  # two-pixel slot through the ring
    r = HullRaster(0.5j, 0.02, ring)
    assert bubbles(r).components == []
    assert len(bubbles(close_gaps(r, 2)).components) == 1


# -- bubbles ------------------------------------------------------------------------

def test_solid_disk_has_no_bubbles():
    assert bubbles(fixture("disk", 1.0, 0.02)).components == []


def test_annulus_bubble_radius():
    eps, inner = 0.01, 0.5
    rep = bubbles(fixture("annulus", 1.0, eps, inner))
    assert len(rep.components) == 1
    b = rep.components[0]
    assert abs(b.radius - inner) <= eps
    assert b.center == pytest.approx(2j, abs=2 * eps)
    assert b.radius <= b.diameter / 2 + eps
    assert not b.touches_real_line


def test_bubble_report_json():
    rep = bubbles(fixture("annulus", 1.0, 0.05))
    data = rep.to_dict()
    assert data["max_radius"] == rep.max_radius
    assert '"components"' in rep.to_json()


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10**6))
def test_inscribed_radius_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    r = close_gaps(rasterize_polyline(random_walk_polyline(rng, 200, 0.1), 0.04), 1)
    holes = fill_hull(r).bitmap & ~r.bitmap
    from scipy import ndimage
    labels, n = ndimage.label(holes)
    rep = bubbles(r)
    assert len(rep.components) == n
    for comp, lab in zip(rep.components, range(1, n + 1)):
        mask = labels == lab
        assert comp.radius_px2 == brute_radius_px2(mask)
        assert comp.radius <= comp.diameter / 2 + r.eps


@given(arrays(bool, st.tuples(st.integers(1, 12), st.integers(1, 12))))
def test_component_radius_brute_force_on_blobs(mask):
    if not mask.any():
        return
    assert component_radius_px2(mask)[0] == brute_radius_px2(mask)


# -- diameters ---------------------------------------------------------------------------

def test_diameter_small_cases():
    assert segment_diameter([1 + 1j]) == 0.0
    assert segment_diameter([0, 3 + 4j]) == pytest.approx(5.0)
    with pytest.raises(ParameterError):
        segment_diameter([])


def test_diameter_thousand_points_exact():
    rng = np.random.default_rng(1)
    z = rng.standard_normal(1000) + 1j * rng.standard_normal(1000)
    assert segment_diameter(z) == brute_diameter(z)


@settings(max_examples=20, deadline=None)
@given(st.integers(1001, 3000), st.integers(0, 10**6), st.booleans())
def test_diameter_hull_route(n, seed, collinear):
    rng = np.random.default_rng(seed)
    if collinear:
        z = rng.random(n) * (1 + 2j)
    else:
        z = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    assert segment_diameter(z) == pytest.approx(brute_diameter(z), rel=1e-12)


# -- hcap ---------------------------------------------------------------------------------

def test_empty_hull_capacity_zero():
    r = HullRaster(0j, 0.1, np.zeros((3, 3), dtype=bool))
    assert estimate_hcap(r, n=100).value == 0.0


def test_slit_and_half_disk_capacity():
    slit = estimate_hcap(fixture("slit", 1.0), n=20_000, seed=1)
    assert slit.within(0.5)
    disk = estimate_hcap(fixture("half_disk", 1.0), n=20_000, seed=2)
    assert disk.within(1.0)


def test_finite_start_capacity():
    est = estimate_hcap(fixture("slit", 1.0), y0=10.0, n=20_000, seed=3)
    # finite-y0 bias is O(1/y0^2) relative for the slit
    assert abs(est.value - 0.5) <= 3 * est.stderr + 0.01


def test_nested_hulls_ordered():
    small = estimate_hcap(fixture("half_disk", 0.5, 0.5 / 256), n=10_000, seed=4)
    big = estimate_hcap(fixture("half_disk", 1.0, 1 / 256), n=10_000, seed=5)
    assert big.value + 3 * math.hypot(big.stderr, small.stderr) >= small.value
    assert small.value > 0


def test_capacity_thread_independent():
    r = fixture("rectangle", 1.0, 1 / 128)
    a = estimate_hcap(r, n=3000, seed=6, threads=1)
    b = estimate_hcap(r, n=3000, seed=6, threads=4)
    assert a.value == b.value and a.stderr == b.stderr


def test_bad_y0():
    with pytest.raises(ParameterError):
        estimate_hcap(fixture("slit"), y0=-1.0, n=10)


# -- harmonic measure -----------------------------------------------------------------------

def test_half_plane_positive_axis():
    est = harmonic_measure(None, 1j, real_segment(0, math.inf), n=20_000, seed=1)
    assert est.within(0.5)


def test_half_plane_unit_interval():
    est = harmonic_measure(None, 1j, real_segment(-1, 1), n=20_000, seed=2)
    assert est.within(0.5)


def test_entire_boundary_is_one():
    est = harmonic_measure(fixture("disk", 1.0, 1 / 64), 0.5j, entire_boundary, n=2000, seed=3)
    assert est.value == 1.0


def test_partition_sums_to_one():
    dom = fixture("half_disk", 0.5, 1 / 256)
    parts = [real_segment(-math.inf, 0), real_segment(0, math.inf), hull_boundary]
    ests = [harmonic_measure(dom, 0.3 + 1j, p, n=10_000, seed=4) for p in parts]
    total = sum(e.value for e in ests)
    assert total == pytest.approx(1.0, abs=1e-12)


def test_start_inside_hull_rejected():
    with pytest.raises(ParameterError):
        harmonic_measure(fixture("disk", 1.0, 1 / 64), 2j, entire_boundary, n=10)


# -- distortion ----------------------------------------------------------------------------------

def test_identity_map_compliant():
    z = np.array([0.1, 0.5j, -0.3 + 0.2j])
    d = 1 - np.abs(z)
    rep = check_distortion(z, z, d, d, np.ones(3), 1e-4)
    assert rep.violations == 0
    assert rep.lower.min() >= 1 and rep.upper.max() <= 1


def test_doubling_map_compliant():
    z = np.array([0.1, 0.5j, -0.3 + 0.2j])
    d = 1 - np.abs(z)
    w = z + 0.5 * d * np.exp(1j)
    rep = check_distortion(z, 2 * z, d, 2 * d, 2 * np.ones(3), 1e-4, w[:, None], 2 * w[:, None])
    assert rep.violations == 0


def test_violation_detected():
    rep = check_distortion([0.0], [0.0], [1.0], [1.0], [10.0], 1e-4)
    assert rep.violations == 1


def test_large_step_refused():
    with pytest.raises(Refusal):
        check_distortion([0.0], [0.0], [1.0], [1.0], [1.0], 0.5)


def test_polyline_distance():
    d = distance_to_polyline([0, 1], [0.5 + 1j, 2 + 0j, -1j])
    np.testing.assert_allclose(d, [1.0, 1.0, 1.0])
