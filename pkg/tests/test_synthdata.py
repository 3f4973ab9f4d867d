import hashlib
import time
from pathlib import Path

import numpy as np
import pytest

from lpgdepth.synthdata import (
    CAMERA_HEIGHT,
    CameraIntrinsics,
    Plane,
    Sample,
    SceneSpec,
    SynthConfig,
    adjust_brightness,
    augment,
    gen_dataset,
    hflip,
    load_dataset,
    make_sample,
    random_scene,
    render_depth,
    render_image,
    synth_dataset,
)

CAM = CameraIntrinsics.default(64, 64)


def digest(directory: Path) -> dict:
    return {p.name: hashlib.sha256(p.read_bytes()).hexdigest() for p in sorted(directory.iterdir())}


class TestCamera:
    def test_default(self):
        assert (CAM.fx, CAM.fy, CAM.cx, CAM.cy) == (64.0, 64.0, 31.5, 31.5)

    @pytest.mark.parametrize("kw", [{"fx": 0.0}, {"cx": 64.0}, {"cy": -1.0}])
    def test_invalid(self, kw):
        args = dict(fx=64.0, fy=64.0, cx=31.5, cy=31.5, width=64, height=64)
        args.update(kw)
        with pytest.raises(ValueError):
            CameraIntrinsics(**args)


class TestRenderDepth:
    def test_fronto_parallel_plane(self):
        depth = render_depth(SceneSpec([Plane((0.0, 0.0, 1.0), 5.0)]), CAM)
        assert np.all(depth == 5.0)

    def test_floor_rows_match_closed_form(self):
        scene = SceneSpec([Plane((0.0, -1.0, 0.0), -CAMERA_HEIGHT), Plane((0.0, 0.0, 1.0), 100.0)])
        depth = render_depth(scene, CAM)
        for y, x in [(40, 3), (50, 30), (63, 60)]:
            want = 1.5 * 64 / (y - 31.5)
            assert depth[y, x] == pytest.approx(want, rel=1e-6)
        assert np.all(depth[:32] == 100.0)  # rows above the horizon see the far plane

    def test_nearest_hit_is_pointwise_min(self):
        a = Plane((0.0, 0.0, 1.0), 6.0)
        b = Plane((0.6, 0.0, 0.8), 3.0)
        both = render_depth(SceneSpec([a, b]), CAM)
        da = render_depth(SceneSpec([a]), CAM)
        with np.errstate(all="ignore"):
            rx, _ = CAM.rays()
            db = np.where(0.6 * rx + 0.8 > 0, 3.0 / (0.6 * rx + 0.8), np.inf)
        np.testing.assert_allclose(both, np.minimum(da, db).astype(np.float32), rtol=1e-6)

    def test_single_oblique_plane_exact(self):
        n = np.array([0.2, -0.3, 0.9])
        n /= np.linalg.norm(n)
        depth = render_depth(SceneSpec([Plane(tuple(n), 4.0)]), CAM)
        rx, ry = CAM.rays()
        want = 4.0 / (n[0] * rx + n[1] * ry + n[2])
        np.testing.assert_allclose(depth, want, rtol=1e-6)

    def test_missing_far_plane_is_internal_error(self):
        with pytest.raises(RuntimeError):
            render_depth(SceneSpec([Plane((0.0, -1.0, 0.0), -1.5)]), CAM)


class TestRenderImage:
    def test_light_along_normal(self):
        plane = Plane((0.0, 0.0, 1.0), 5.0)  # faces the camera with normal (0, 0, -1)
        scene = SceneSpec([plane], light=(0.0, 0.0, -1.0), ambient=0.0, diffuse=0.7)
        np.testing.assert_allclose(render_image(scene, CAM), 0.7, rtol=1e-6)

    def test_ambient_only_is_constant(self):
        scene = random_scene(np.random.default_rng(0))
        scene.diffuse = 0.0
        for p in range(len(scene.planes)):
            scene.planes[p] = Plane(scene.planes[p].normal, scene.planes[p].offset, scene.planes[p].bounds, 1.0)
        img = render_image(scene, CAM)
        assert np.all(img == img.flat[0])

    def test_range(self):
        for seed in range(10):
            img = render_image(random_scene(np.random.default_rng(seed)), CAM)
            assert img.shape == (1, 64, 64) and img.min() >= 0 and img.max() <= 1


class TestRandomScenes:
    def test_depth_range_and_family(self):
        for seed in range(200):
            scene = random_scene(np.random.default_rng(seed), kappa=10.0)
            depth = render_depth(scene, CAM)
            assert depth.min() > 0.5 and depth.max() < 9.0
            n_boxes = (len(scene.planes) - 2) // 4
            assert 0 <= n_boxes <= 3

    def test_sample_determinism(self):
        a, _ = make_sample(3, SynthConfig(), 7)
        b, _ = make_sample(3, SynthConfig(), 7)
        c, _ = make_sample(4, SynthConfig(), 7)
        assert np.array_equal(a.image, b.image) and np.array_equal(a.depth, b.depth)
        assert not np.array_equal(a.depth, c.depth)

    def test_gt_dropout(self):
        s, _ = make_sample(0, SynthConfig(gt_dropout=0.5), 0)
        assert 0.4 < s.mask.mean() < 0.6
        assert np.all(s.depth[s.mask] > 0)


class TestDataset:
    def test_zero_samples(self, tmp_path):
        manifest = gen_dataset(0, SynthConfig(), 0, tmp_path)
        assert manifest.read_text() == ""
        assert [p.name for p in tmp_path.iterdir()] == ["manifest.tsv"]

    def test_bytes_deterministic(self, tmp_path):
        gen_dataset(4, SynthConfig(), 5, tmp_path / "a")
        gen_dataset(4, SynthConfig(), 5, tmp_path / "b")
        assert digest(tmp_path / "a") == digest(tmp_path / "b")
        assert len(digest(tmp_path / "a")) == 13

    def test_manifest_and_roundtrip(self, tmp_path):
        gen_dataset(3, SynthConfig(), 1, tmp_path)
        rows = (tmp_path / "manifest.tsv").read_text().splitlines()
        assert rows[1].split("\t") == ["1", "img_000001.pgm", "depth_000001.pfm", "mask_000001.pgm"]
        disk = load_dataset(tmp_path)
        mem = synth_dataset(3, SynthConfig(), 1)
        assert np.array_equal(disk.images, mem.images)
        assert np.array_equal(disk.depths, mem.depths)
        assert np.array_equal(disk.masks, mem.masks)

    def test_unwritable_directory(self, tmp_path):
        blocker = tmp_path / "file"
        blocker.write_text("x")
        with pytest.raises(OSError, match=str(blocker)):
            gen_dataset(1, SynthConfig(), 0, blocker / "sub")

    def test_generation_speed(self, tmp_path):
        start = time.perf_counter()
        gen_dataset(256, SynthConfig(), 0, tmp_path)
        assert time.perf_counter() - start < 10.0

    def test_missing_manifest(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_dataset(tmp_path)


class TestAugment:
    def sample(self):
        s, _ = make_sample(2, SynthConfig(gt_dropout=0.2), 0)
        return s

    def test_flip_is_involution(self):
        s = self.sample()
        back = hflip(hflip(s))
        assert np.array_equal(back.image, s.image) and np.array_equal(back.depth, s.depth)
        assert np.array_equal(back.mask, s.mask)

    def test_brightness_arithmetic(self):
        out = adjust_brightness(np.full((1, 4, 4), 0.5, np.float32), 1.1)
        np.testing.assert_allclose(out, 0.55, rtol=1e-6)

    def test_no_op_draws(self):
        class Fixed:
            def random(self):
                return 0.9  # no flip, no photometric change

        s = self.sample()
        out = augment(s, Fixed())
        assert np.array_equal(out.image, s.image) and np.array_equal(out.depth, s.depth)

    def test_depth_values_preserved(self):
        s = self.sample()
        rng = np.random.default_rng(0)
        for _ in range(10):
            out = augment(s, rng)
            assert np.array_equal(np.sort(out.depth.ravel()), np.sort(s.depth.ravel()))
            flipped = not np.array_equal(out.depth, s.depth)
            if flipped:
                assert np.array_equal(out.depth, s.depth[:, ::-1])
                assert np.array_equal(out.mask, s.mask[:, ::-1])
            assert out.image.min() >= 0 and out.image.max() <= 1
