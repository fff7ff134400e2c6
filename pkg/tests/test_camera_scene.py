import numpy as np
import pytest

from trajguide.camera import CameraError, CameraPose, look_at, pinhole_intrinsics
from trajguide.scene import DepthMap, Plane, SceneError, SceneSpec, Sphere, render


def centered_camera(fx=33.0, size=33):
    k = pinhole_intrinsics(fx, size, size)
    return CameraPose(intrinsics=k, rotation=np.eye(3), translation=np.zeros(3))


def test_camera_validation():
    k = pinhole_intrinsics(10.0, 8, 8)
    with pytest.raises(CameraError):
        CameraPose(intrinsics=k, rotation=np.eye(3) * 1.001, translation=np.zeros(3))
    bad = np.eye(3)
    bad[0, 0] = -1.0  # reflection
    with pytest.raises(CameraError):
        CameraPose(intrinsics=k, rotation=bad, translation=np.zeros(3))
    with pytest.raises(CameraError):
        CameraPose(intrinsics=pinhole_intrinsics(-1.0, 8, 8), rotation=np.eye(3),
                   translation=np.zeros(3))


def test_project_unproject_round_trip():
    cam = look_at(eye=[1.0, -2.0, 0.5], target=[0.0, 0.0, 5.0],
                  intrinsics=pinhole_intrinsics(40.0, 32, 24))
    rng = np.random.default_rng(0)
    pts = rng.uniform(-1, 1, size=(50, 3)) + np.array([0.0, 0.0, 5.0])
    uv, z = cam.project(pts)
    assert np.all(z > 0)
    back = cam.unproject(uv, z)
    np.testing.assert_allclose(back, pts, atol=1e-9)


def test_fronto_parallel_plane_depth_exact():
    scene = SceneSpec(
        primitives=(Plane(center=(0, 0, 5), normal=(0, 0, -1), extent=(50, 50)),),
        channels=1,
    )
    _, depth = render(scene, centered_camera(), (33, 33))
    np.testing.assert_array_equal(depth.values, np.full((33, 33), 5.0))
    assert depth.valid.all()


def test_plane_depth_after_dolly():
    scene = SceneSpec(
        primitives=(Plane(center=(0, 0, 5), normal=(0, 0, -1), extent=(50, 50)),),
        channels=1,
    )
    cam = CameraPose(
        intrinsics=pinhole_intrinsics(33.0, 33, 33),
        rotation=np.eye(3),
        translation=-np.array([0.0, 0.0, 1.0]),  # center moved to z = +1
    )
    _, depth = render(scene, cam, (33, 33))
    np.testing.assert_array_equal(depth.values, np.full((33, 33), 4.0))


def test_sphere_center_pixel_depth():
    # Ray-sphere quadratic along the optical axis: 4 - 1 = 3.
    scene = SceneSpec(primitives=(Sphere(center=(0, 0, 4), radius=1.0),), channels=1)
    _, depth = render(scene, centered_camera(), (33, 33))
    assert depth.values[16, 16] == pytest.approx(3.0, abs=1e-12)


def test_background_uses_far_plane_and_reserved_value():
    scene = SceneSpec(
        primitives=(Sphere(center=(0, 0, 4), radius=0.5),),
        channels=2,
        far_plane=77.0,
        background_value=-1.0,
    )
    image, depth = render(scene, centered_camera(), (33, 33))
    assert image.shape == (2, 1, 33, 33)
    assert depth.values[0, 0] == 77.0
    assert image[0, 0, 0, 0] == -1.0


def test_camera_inside_sphere_is_degenerate():
    scene = SceneSpec(primitives=(Sphere(center=(0, 0, 0.2), radius=1.0),), channels=1)
    with pytest.raises(CameraError, match="degenerate viewpoint"):
        render(scene, centered_camera(), (9, 9))


def test_depth_render_round_trip():
    # Unproject rendered depth and reproject into the same camera.
    scene = SceneSpec(
        primitives=(
            Plane(center=(0, 0, 6), normal=(0.1, -0.05, -1), extent=(40, 40)),
            Sphere(center=(0.4, -0.2, 4.5), radius=1.0),
        ),
        channels=1,
    )
    cam = centered_camera(fx=40.0, size=31)
    _, depth = render(scene, cam, (31, 31))
    vv, uu = np.mgrid[0:31, 0:31]
    pixels = np.stack([uu.ravel(), vv.ravel()], axis=-1).astype(np.float64)
    world = cam.unproject(pixels, depth.values.ravel())
    uv, z = cam.project(world)
    np.testing.assert_allclose(uv, pixels, atol=1e-9)
    np.testing.assert_allclose(z, depth.values.ravel(), atol=1e-9)


def test_scene_validation():
    with pytest.raises(SceneError):
        SceneSpec(primitives=())
    with pytest.raises(SceneError):
        Plane(center=(0, 0, 5), normal=(0, 0, 0))
    with pytest.raises(SceneError):
        Sphere(center=(0, 0, 5), radius=0.0)
    with pytest.raises(SceneError):
        DepthMap(values=np.array([[1.0, -2.0]]), valid=np.ones((1, 2), dtype=bool))


def test_animated_primitive_moves_between_frames():
    from trajguide.scene import render_sequence

    scene = SceneSpec(
        primitives=(
            Plane(center=(0, 0, 8), normal=(0, 0, -1), extent=(50, 50), texture="grad"),
            Sphere(center=(-0.5, 0, 4), radius=0.6, velocity=(0.25, 0, 0)),
        ),
        channels=1,
    )
    poses = [centered_camera()] * 3
    frames, depths = render_sequence(scene, poses, (33, 33))
    assert frames.shape == (1, 3, 33, 33)
    assert not np.array_equal(frames[:, 0], frames[:, 1])  # the sphere moved
    corner = (slice(None), slice(0, 5), slice(0, 5))
    np.testing.assert_array_equal(frames[:, 0][corner], frames[:, 2][corner])
