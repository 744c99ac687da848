import numpy as np
import pytest
from scrloc.io import (
    load_scene_bundle,
    read_depth,
    read_pbm,
    read_pgm16,
    read_png,
    save_scene_bundle,
    write_depth,
    write_pbm,
    write_pgm16,
    write_png,
)
from scrloc.synth.scene import SceneSpec, ScrewSpec, render_scene
from scrloc.tools.detect import RgbdImage


class TestRasters:

    def test_png_quantization(self, tmp_path, rng):
        rgb = rng.uniform(size=(12, 17, 3))
        write_png(tmp_path / 'a.png', rgb)
        back = read_png(tmp_path / 'a.png')
        assert back.shape == rgb.shape
        assert np.abs(back - rgb).max() <= 0.5 / 255 + 1e-12

    def test_png_clips(self, tmp_path):
        write_png(tmp_path / 'c.png', np.full((2, 2, 3), 1.7))
        np.testing.assert_array_equal(read_png(tmp_path / 'c.png'), 1.0)

    def test_pgm16(self, tmp_path, rng):
        pmap = rng.uniform(size=(9, 13))
        write_pgm16(tmp_path / 'p.pgm', pmap)
        header = (tmp_path / 'p.pgm').read_bytes().split(b'\n', 3)
        assert header[:3] == [b'P5', b'13 9', b'65535']
        np.testing.assert_allclose(read_pgm16(tmp_path / 'p.pgm'), pmap, atol=0.5 / 65535 + 1e-12)

    def test_pgm_with_comment(self, tmp_path):
        data = np.array([[0, 65535]], dtype='>u2').tobytes()
        (tmp_path / 'c.pgm').write_bytes(b'P5\n# made by hand\n2 1\n65535\n' + data)
        np.testing.assert_array_equal(read_pgm16(tmp_path / 'c.pgm'), [[0.0, 1.0]])

    def test_pbm(self, tmp_path, rng):
        mask = rng.uniform(size=(7, 11)) < 0.4
        write_pbm(tmp_path / 'm.pbm', mask)
        assert (tmp_path / 'm.pbm').read_bytes().startswith(b'P4')
        np.testing.assert_array_equal(read_pbm(tmp_path / 'm.pbm'), mask)

    def test_wrong_magic(self, tmp_path):
        write_pbm(tmp_path / 'm.pbm', np.ones((2, 2), dtype=bool))
        with pytest.raises(ValueError):
            read_pgm16(tmp_path / 'm.pbm')
        write_png(tmp_path / 'p.png', np.zeros((2, 2, 3)))
        with pytest.raises(ValueError):
            read_pbm(tmp_path / 'p.png')

    def test_depth(self, tmp_path, rng):
        depth = rng.uniform(1400, 1600, size=(6, 8))
        depth[2, 3] = np.nan
        write_depth(tmp_path / 'd.f32', depth)
        assert (tmp_path / 'd.f32').stat().st_size == 16 + 4 * 48
        back = read_depth(tmp_path / 'd.f32')
        np.testing.assert_allclose(back, depth.astype(np.float32), equal_nan=True)

    def test_depth_magic(self, tmp_path):
        (tmp_path / 'x.f32').write_bytes(b'NOPE' + bytes(12))
        with pytest.raises(ValueError):
            read_depth(tmp_path / 'x.f32')


def test_scene_bundle(tmp_path, affine_world):
    scene = render_scene(SceneSpec(width=60, height=50, screws=(ScrewSpec(center=(6.0, 5.0)),)),
                         affine_world)
    truth = [t.to_dict() for t in scene.truth]
    save_scene_bundle(tmp_path / 'scene', RgbdImage(scene.rgb, scene.depth), truth)
    img, loaded = load_scene_bundle(tmp_path / 'scene')
    assert loaded[0]['pixel'] == pytest.approx(list(scene.truth[0].pixel))
    assert img.rgb.shape == (50, 60, 3)
    np.testing.assert_allclose(img.depth, scene.depth, rtol=1e-6)
