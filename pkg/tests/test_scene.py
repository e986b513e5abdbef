import numpy as np
import pytest

from vservo.errors import DegenerateView, ShapeMismatch
from vservo.geometry import Pose, rotation_from_axis_angle
from vservo.scene import (
    CameraIntrinsics,
    DrConfig,
    LIGHT_BIAS_RANGE,
    LIGHT_GAIN_RANGE,
    base_camera_rotation,
    make_scene,
    render,
    write_ppm,
)

INTR = CameraIntrinsics.default(64)


def down_camera(x=0.0, y=0.0, h=0.6):
    return Pose(base_camera_rotation(), np.array([x, y, h]))


def lit_color(scene, color):
    return np.clip(color * scene.light_gain + scene.light_bias, 0.0, 1.0)


def target_mask(scene, img):
    return np.all(np.abs(img - lit_color(scene, scene.target_color)) < 1e-12, axis=2)


def test_make_scene_deterministic():
    a = make_scene(7, DrConfig())
    b = make_scene(7, DrConfig())
    assert np.array_equal(a.texture_table, b.texture_table)
    assert np.array_equal(a.target_size, b.target_size)
    assert len(a.distractors) == len(b.distractors)
    for pa, pb in zip(a.distractors, b.distractors):
        assert np.array_equal(pa.vertices, pb.vertices)
    assert np.array_equal(a.light_gain, b.light_gain)


def test_distractor_toggle():
    s = make_scene(3, DrConfig(include_distractors=False))
    assert s.distractors == ()


def test_disabled_toggles_use_canonical_values():
    s = make_scene(3, DrConfig(randomize_texture=False, randomize_lighting=False))
    s2 = make_scene(99, DrConfig(randomize_texture=False, randomize_lighting=False))
    assert np.array_equal(s.texture_table, s2.texture_table)
    np.testing.assert_array_equal(s.light_gain, np.ones(3))
    np.testing.assert_array_equal(s.light_bias, np.zeros(3))


def test_lighting_range_over_many_seeds():
    gains = []
    biases = []
    for seed in range(1000):
        s = make_scene(seed, DrConfig())
        gains.append(s.light_gain)
        biases.append(s.light_bias)
    gains, biases = np.array(gains), np.array(biases)
    assert gains.min() >= LIGHT_GAIN_RANGE[0] and gains.max() <= LIGHT_GAIN_RANGE[1]
    assert biases.min() >= LIGHT_BIAS_RANGE[0] and biases.max() <= LIGHT_BIAS_RANGE[1]
    # The sampler actually spans most of the allowed interval.
    assert gains.min() < 0.4 and gains.max() > 1.6


def test_render_deterministic():
    scene = make_scene(42)
    img1 = render(scene, down_camera(), INTR)
    img2 = render(scene, down_camera(), INTR)
    assert np.array_equal(img1, img2)
    assert img1.min() >= 0.0 and img1.max() <= 1.0


def test_render_rejects_low_camera():
    scene = make_scene(1)
    with pytest.raises(DegenerateView):
        render(scene, down_camera(h=0.01), INTR)


def test_render_rejects_sideways_axis():
    scene = make_scene(1)
    R = base_camera_rotation() @ rotation_from_axis_angle(np.array([np.pi / 2, 0.0, 0.0]))
    with pytest.raises(DegenerateView):
        render(scene, Pose(R, np.array([0.0, 0.0, 0.6])), INTR)


def test_zero_lighting_gives_black_image():
    scene = make_scene(5, DrConfig())
    dark = type(scene)(
        tile=scene.tile,
        texture_table=scene.texture_table,
        target_center=scene.target_center,
        target_size=scene.target_size,
        target_color=scene.target_color,
        distractors=scene.distractors,
        light_gain=np.zeros(3),
        light_bias=np.zeros(3),
        seed=scene.seed,
    )
    img = render(dark, down_camera(), INTR)
    assert np.array_equal(img, np.zeros_like(img))


def test_projection_matches_pinhole_formula():
    scene = make_scene(11, DrConfig(include_distractors=False, randomize_lighting=False))
    cam = down_camera(x=0.03, y=-0.04, h=0.55)
    img = render(scene, cam, INTR)
    mask = target_mask(scene, img)
    assert mask.any()
    cols = np.where(mask.any(axis=0))[0]
    rows = np.where(mask.any(axis=1))[0]
    center_px = np.array([(cols.min() + cols.max()) / 2.0, (rows.min() + rows.max()) / 2.0])
    # Analytic projection of the target center (world origin).
    dx, dy, h = -0.03, 0.04, 0.55
    expected_u = INTR.focal * dx / h + INTR.cx - 0.5
    expected_v = INTR.focal * (-dy) / h + INTR.cy - 0.5
    assert abs(center_px[0] - expected_u) <= 0.5
    assert abs(center_px[1] - expected_v) <= 0.5


def test_doubling_height_halves_target_extent():
    scene = make_scene(7, DrConfig(include_distractors=False))

    def width_px(h):
        img = render(scene, down_camera(h=h), INTR)
        cols = np.where(target_mask(scene, img).any(axis=0))[0]
        return cols.max() - cols.min() + 1

    w_near, w_far = width_px(0.5), width_px(1.0)
    assert abs(w_far - w_near / 2.0) <= 1.0


def test_lighting_toggle_keeps_geometry():
    full = make_scene(21, DrConfig())
    nolight = make_scene(21, DrConfig(randomize_lighting=False))
    img_a = render(full, down_camera(), INTR)
    img_b = render(nolight, down_camera(), INTR)
    # Same primitives per pixel: the target mask is identical.
    assert np.array_equal(target_mask(full, img_a), target_mask(nolight, img_b))


def test_write_ppm(tmp_path):
    img = np.zeros((4, 5, 3))
    img[1, 2] = [1.0, 0.5, 0.25]
    path = tmp_path / "img.ppm"
    write_ppm(img, path)
    raw = path.read_bytes()
    assert raw.startswith(b"P6\n5 4\n255\n")
    assert len(raw) == len(b"P6\n5 4\n255\n") + 4 * 5 * 3
    with pytest.raises(ShapeMismatch):
        write_ppm(np.zeros((4, 5)), tmp_path / "bad.ppm")


def test_intrinsics_validation():
    with pytest.raises(ValueError):
        CameraIntrinsics(focal=-1, cx=32, cy=32, width=64, height=64)
    with pytest.raises(ValueError):
        CameraIntrinsics(focal=10, cx=200, cy=32, width=64, height=64)
