import numpy as np
import pytest

from sparseview import dataset as ds
from sparseview import geometry as geo
from sparseview import scene as sc
from sparseview.errors import ContractError, DataError


def frontal_camera(width=33, height=33, z=-5.0):
    k = geo.intrinsics_for(width, height, fov_deg=40)
    r = geo.look_at((0.0, 0.0, z), (0.0, 0.0, 0.0))
    return geo.Camera(K=k, R=r, t=-r @ np.array([0.0, 0.0, z]))


def test_frontoparallel_plane_constant_depth():
    cam = frontal_camera()
    scene = sc.SceneSpec(
        primitives=[
            sc.Plane(
                center=(0, 0, 0),
                normal=(0, 0, -1),
                extent=(50, 50),
                texture=sc.Texture(kind="checker", period=0.5),
            )
        ],
        light=(0, 0, -1),
    )
    _, depth, hit = sc.render_view(scene, cam, 33, 33)
    assert hit.all()
    assert np.allclose(depth, 5.0, atol=1e-9)


def test_sphere_center_pixel_depth():
    cam = frontal_camera()
    r = 0.8
    scene = sc.SceneSpec(
        primitives=[
            sc.Sphere(center=(0, 0, 0), radius=r, texture=sc.Texture(kind="checker"))
        ],
        light=(0, 0, -1),
    )
    _, depth, hit = sc.render_view(scene, cam, 33, 33)
    assert hit[16, 16]
    assert abs(depth[16, 16] - (5.0 - r)) < 1e-9


def test_light_along_normal_full_albedo():
    cam = frontal_camera()
    scene = sc.SceneSpec(
        primitives=[
            sc.Plane(
                center=(0, 0, 0),
                normal=(0, 0, -1),
                extent=(50, 50),
                texture=sc.Texture(kind="checker", period=100.0, c0=(1, 1, 1), c1=(1, 1, 1)),
            )
        ],
        light=(0, 0, -1),
    )
    img, _, hit = sc.render_view(scene, cam, 33, 33)
    assert np.allclose(img[hit], 1.0)


def test_rendering_deterministic():
    cam = frontal_camera()
    scene = sc.two_planes(seed=3)
    a = sc.render_view(scene, cam, 24, 24)
    b = sc.render_view(scene, cam, 24, 24)
    for x, y in zip(a, b):
        assert np.array_equal(x, y)


def test_value_noise_deterministic_and_bounded():
    u = np.linspace(-3, 3, 50)
    v = np.linspace(-2, 2, 50)
    a = sc._value_noise(u, v, 3, 7)
    b = sc._value_noise(u, v, 3, 7)
    assert np.array_equal(a, b)
    assert (a >= 0).all() and (a <= 1).all()


class TestRig:
    def test_single_view_looks_at_target(self):
        cams = sc.make_rig(sc.Rig(n_views=1, baseline_deg=10, target=(0, 0, 0)), radius=4.0)
        assert len(cams) == 1
        xy, depth = cams[0].project(np.zeros(3))
        assert abs(depth - 4.0) < 1e-9
        k = cams[0].K
        assert np.allclose(xy, [k[0, 2], k[1, 2]], atol=1e-9)

    def test_arc_span(self):
        cams = sc.make_rig(sc.Rig(n_views=3, baseline_deg=20, target=(0, 0, 0)), radius=4.0)
        a0 = cams[0].principal_axis
        a2 = cams[2].principal_axis
        ang = np.degrees(np.arccos(np.clip(a0 @ a2, -1, 1)))
        assert abs(ang - 40.0) < 1e-6

    def test_all_rig_cameras_orthonormal(self):
        for pattern in ("arc", "grid"):
            cams = sc.make_rig(
                sc.Rig(pattern=pattern, n_views=5, baseline_deg=8, target=(0.1, -0.2, 0.3)),
                radius=3.5,
            )
            for cam in cams:
                assert np.max(np.abs(cam.R @ cam.R.T - np.eye(3))) < 1e-6
                assert abs(np.linalg.det(cam.R) - 1) < 1e-6

    def test_bad_rig_rejected(self):
        with pytest.raises(ContractError):
            sc.Rig(n_views=0)
        with pytest.raises(ContractError):
            sc.Rig(baseline_deg=0)


def test_cross_view_consistency():
    scene = sc.two_planes(seed=1)
    cams = sc.make_rig(sc.Rig(n_views=3, baseline_deg=14, target=(0, 0, 0)), radius=4.0, width=48, height=48)
    rng = np.random.default_rng(0)
    _, depth_a, hit_a = sc.render_view(scene, cams[0], 48, 48)
    ys, xs = np.nonzero(hit_a)
    take = rng.choice(len(xs), size=min(1000, len(xs)), replace=False)
    checked = 0
    for j in take:
        px, py = float(xs[j]), float(ys[j])
        X = cams[0].unproject((px, py), depth_a[int(py), int(px)])
        xy, z = cams[1].project(X)
        if not np.isfinite(xy).all() or z <= 0:
            continue
        if not (0 <= xy[0] <= 47 and 0 <= xy[1] <= 47):
            continue
        dirs = geo.rays_for_pixels(cams[1], xy[None])
        t, _, _, hit = sc.trace(scene, cams[1].center, dirs)
        assert hit[0]
        z_seen = t[0] * (dirs[0] @ cams[1].principal_axis)
        # either the same surface, or something strictly nearer (occlusion)
        assert z_seen <= z + 1e-3
        checked += 1
    assert checked > 500


def occluded_fraction(scene, cams, target_cam, width, height):
    _, depth, hit = sc.render_view(scene, target_cam, width, height)
    ys, xs = np.nonzero(hit)
    occluded = 0
    for px, py in zip(xs, ys):
        X = target_cam.unproject((float(px), float(py)), depth[py, px])
        if not any(sc.point_visible(scene, c, X, tol=1e-3) for c in cams):
            occluded += 1
    return occluded / max(1, len(xs))


def test_occlusion_monotone_in_baseline():
    scene = sc.two_planes(seed=0)
    fractions = []
    for baseline in (4.0, 10.0, 16.0):
        cams = sc.make_rig(
            sc.Rig(n_views=4, baseline_deg=baseline, target=(0, 0, 0)),
            radius=4.0,
            width=32,
            height=32,
        )
        fractions.append(occluded_fraction(scene, cams[1:], cams[0], 32, 32))
    assert fractions[0] <= fractions[1] + 1e-9
    assert fractions[1] <= fractions[2] + 1e-9


class TestDatasetIO:
    def test_pfm_roundtrip(self, tmp_path):
        rng = np.random.default_rng(0)
        data = rng.standard_normal((7, 5)).astype(np.float32)
        p = tmp_path / "x.pfm"
        ds.write_pfm(p, data)
        back = ds.read_pfm(p)
        assert np.array_equal(back, data)

    def test_export_load_roundtrip(self, tmp_path):
        scene = sc.two_planes(seed=2)
        cams = sc.make_rig(sc.Rig(n_views=3, baseline_deg=10), radius=4.0, width=24, height=20)
        out = tmp_path / "set"
        ds.export_dataset(scene, cams, str(out), 24, 20, near=2.5, far=6.5)
        data = ds.load_dataset(str(out))
        assert data.ids == [0, 1, 2]
        assert data.images.shape == (3, 20, 24, 3)
        assert data.depths.shape == (3, 20, 24)
        for i, cam in enumerate(cams):
            img, depth, _ = sc.render_view(scene, cam, 24, 20)
            # images match up to 8-bit quantization, depths and cameras exactly
            assert np.max(np.abs(data.images[i] - img)) <= 0.5 / 255 + 1e-6
            assert np.array_equal(data.depths[i], depth.astype(np.float32))
            assert np.array_equal(data.cameras[i].K, cam.K)
            assert np.array_equal(data.cameras[i].R, cam.R)
            assert np.array_equal(data.cameras[i].t, cam.t)
        assert data.near == 2.5 and data.far == 6.5

    def test_empty_scene_pure_background(self, tmp_path):
        scene = sc.SceneSpec(primitives=[], background=(0.2, 0.4, 0.6))
        cams = sc.make_rig(sc.Rig(n_views=1, baseline_deg=5), radius=4.0, width=8, height=8)
        out = tmp_path / "bg"
        ds.export_dataset(scene, cams, str(out), 8, 8, near=1.0, far=5.0)
        data = ds.load_dataset(str(out))
        expect = np.round(np.array([0.2, 0.4, 0.6]) * 255) / 255
        assert np.allclose(data.images[0], expect, atol=1e-6)
        assert np.all(data.depths[0] == 0)

    def test_missing_dataset_raises(self, tmp_path):
        with pytest.raises(DataError):
            ds.load_dataset(str(tmp_path / "nope"))
