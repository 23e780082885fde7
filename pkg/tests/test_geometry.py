import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import random_homography
from imit2d.court import broadcast_camera, court_keypoints
from imit2d.errors import BehindCamera, DegenerateConfiguration, PointAtInfinity, SingularMatrix, TooFewPoints
from imit2d.geometry import (
    CameraModel,
    GroundHomographyCache,
    Homography,
    apply_homography,
    estimate_homography,
    hartley_normalize,
    homography_distance,
    invert_homography,
    project_point,
    reprojection_errors,
)

SQUARE = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])


def test_identity_point():
    assert np.allclose(apply_homography(Homography.identity(), (3.5, 1.2)), (3.5, 1.2), atol=0)


def test_scale_point():
    assert np.allclose(apply_homography(Homography(np.diag([2.0, 2.0, 1.0])), (1.0, 1.0)), (2.0, 2.0))


def test_canonical_form_bottom_right_one():
    h = Homography(5.0 * np.diag([2.0, 3.0, 1.0]))
    assert h.m[2, 2] == 1.0
    assert np.allclose(h.m, np.diag([2.0, 3.0, 1.0]))


def test_canonical_form_falls_back_to_frobenius():
    m = np.array([[0.0, 1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 0.0]])
    m[2, 0] = 1.0
    m[0, 2] = 1.0
    h = Homography(m)
    assert np.isclose(np.linalg.norm(h.m), 1.0)


def test_point_at_infinity():
    m = np.eye(3)
    m[2] = (1.0, 0.0, 0.0)
    m[0, 2] = 1.0
    with pytest.raises(PointAtInfinity):
        apply_homography(Homography(m), (0.0, 5.0))


def test_invert_identity_and_scale():
    assert np.array_equal(invert_homography(Homography.identity()).m, np.eye(3))
    inv = invert_homography(Homography(np.diag([2.0, 2.0, 1.0])))
    assert np.allclose(inv.m, np.diag([0.5, 0.5, 1.0]), atol=1e-15)


def test_invert_singular():
    m = np.ones((3, 3))
    with pytest.raises(SingularMatrix):
        invert_homography(Homography(m))


def test_round_trip_1000_random(rng):
    worst = 0.0
    for _ in range(1000):
        h = Homography(random_homography(rng))
        p = rng.uniform(-5, 5, size=2)
        back = apply_homography(invert_homography(h), apply_homography(h, p))
        worst = max(worst, np.abs(back - p).max())
    assert worst < 1e-9


def test_batched_application_matches_loop(rng):
    h = Homography(random_homography(rng))
    pts = rng.uniform(-3, 3, size=(4, 5, 2))
    batched = apply_homography(h, pts)
    assert batched.shape == pts.shape
    for idx in np.ndindex(4, 5):
        assert np.allclose(batched[idx], apply_homography(h, pts[idx]), atol=1e-13)


def test_dlt_identity_from_unit_square():
    h = estimate_homography(SQUARE, SQUARE)
    assert np.allclose(h.m, np.eye(3), atol=1e-10)


def test_dlt_recovers_translation():
    truth = np.array([[1.0, 0.0, 2.0], [0.0, 1.0, 3.0], [0.0, 0.0, 1.0]])
    img = SQUARE + (2.0, 3.0)
    h = estimate_homography(SQUARE, img)
    assert np.linalg.norm(h.m - truth) / np.linalg.norm(truth) < 1e-8


def test_dlt_noiseless_random(rng):
    for _ in range(50):
        truth = Homography(random_homography(rng))
        court = rng.uniform(-10, 10, size=(12, 2))
        h = estimate_homography(court, apply_homography(truth, court))
        assert homography_distance(h, truth) < 1e-8
        assert reprojection_errors(h, court, apply_homography(truth, court)).max() < 1e-8


def test_dlt_noisy_mean_reprojection():
    cam = broadcast_camera()
    truth = cam.ground_homography()
    means = []
    for seed in range(100):
        r = np.random.default_rng(seed)
        court = np.column_stack([r.uniform(-11, 11, 20), r.uniform(-5, 5, 20)])
        img = apply_homography(truth, court) + r.normal(0.0, 0.5, size=(20, 2))
        h = estimate_homography(court, img)
        means.append(reprojection_errors(h, court, img).mean())
    assert max(means) < 1.0


def test_dlt_too_few_points():
    with pytest.raises(TooFewPoints):
        estimate_homography(SQUARE[:3], SQUARE[:3])


def test_dlt_collinear_points():
    line = np.column_stack([np.arange(6.0), 2.0 * np.arange(6.0)])
    with pytest.raises(DegenerateConfiguration):
        estimate_homography(line, line)


def test_hartley_normalization_statistics(rng):
    pts = rng.normal(5.0, 3.0, size=(30, 2))
    out, T = hartley_normalize(pts)
    assert np.allclose(out.mean(axis=0), 0.0, atol=1e-12)
    assert np.isclose(np.linalg.norm(out, axis=1).mean(), np.sqrt(2.0))


def test_court_keypoints_recover_broadcast_homography():
    cam = broadcast_camera()
    kp = court_keypoints()
    h = estimate_homography(kp, apply_homography(cam.ground_homography(), kp))
    assert homography_distance(h, cam.ground_homography()) < 1e-8


def _axis_camera():
    return CameraModel(100.0, 100.0, 0.0, 0.0)


def test_project_on_axis():
    assert np.allclose(project_point(_axis_camera(), (0.0, 0.0, 5.0)), (0.0, 0.0))


def test_project_offset():
    assert np.allclose(project_point(_axis_camera(), (1.0, 0.0, 5.0)), (20.0, 0.0))


def test_project_behind_camera():
    with pytest.raises(BehindCamera):
        project_point(_axis_camera(), (0.0, 0.0, -1.0))


def test_project_vectorised(rng):
    cam = broadcast_camera()
    pts = np.column_stack([rng.uniform(-10, 10, 20), rng.uniform(-5, 5, 20), rng.uniform(0, 3, 20)])
    batch = project_point(cam, pts)
    for p, q in zip(pts, batch):
        assert np.allclose(project_point(cam, p), q, atol=1e-12)


def test_plane_induced_homography_matches_projection(rng):
    for seed in range(20):
        r = np.random.default_rng(seed)
        eye = (r.uniform(-30, -15), r.uniform(-5, 5), r.uniform(5, 15))
        cam = CameraModel.look_at(eye, (r.uniform(-3, 3), r.uniform(-2, 2), 0.0), 800.0, 820.0, 640.0, 360.0)
        ground = np.column_stack([r.uniform(-10, 10, 50), r.uniform(-5, 5, 50), np.zeros(50)])
        a = project_point(cam, ground)
        b = apply_homography(cam.ground_homography(), ground[:, :2])
        assert np.abs(a - b).max() < 1e-6


def test_camera_rejects_non_orthonormal_rotation():
    with pytest.raises(ValueError):
        CameraModel(1.0, 1.0, 0.0, 0.0, rotation=2.0 * np.eye(3))


def test_camera_serialisation_round_trip():
    cam = broadcast_camera()
    again = CameraModel.from_dict(cam.to_dict())
    assert np.array_equal(again.to_array(), cam.to_array())
    assert np.array_equal(CameraModel.from_array(cam.to_array()).to_array(), cam.to_array())


def test_homography_list_round_trip(rng):
    h = Homography(random_homography(rng))
    assert Homography.from_list(h.to_list()) == h


def test_ground_homography_cache_recomputes_only_on_motion():
    cache = GroundHomographyCache()
    cam = broadcast_camera()
    h1 = cache.get(cam)
    h2 = cache.get(broadcast_camera())
    assert h1 is h2 and cache.recomputations == 1
    cache.get(broadcast_camera(lateral=1.0))
    assert cache.recomputations == 2


finite = st.floats(-50, 50, allow_nan=False)


@given(st.integers(0, 2**32 - 1), finite, finite)
def test_property_round_trip(seed, x, y):
    h = Homography(random_homography(np.random.default_rng(seed)))
    try:
        img = apply_homography(h, (x, y))
    except PointAtInfinity:
        return
    if np.abs(img).max() > 1e6:
        return
    back = apply_homography(invert_homography(h), img)
    assert np.allclose(back, (x, y), atol=1e-9 * max(1.0, abs(x), abs(y)))


@given(st.integers(0, 2**32 - 1), st.floats(0.1, 10.0))
def test_property_dlt_scale_invariant(seed, s):
    r = np.random.default_rng(seed)
    truth = random_homography(r)
    court = r.uniform(-10, 10, size=(8, 2))
    img = apply_homography(Homography(truth), court)
    a = estimate_homography(court, img)
    b = estimate_homography(court, img)
    assert a == b
    assert homography_distance(Homography(s * truth), a) < 1e-7
