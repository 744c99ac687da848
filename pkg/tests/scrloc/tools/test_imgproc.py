import numpy as np
import pytest
from collections import deque
from scipy.special import erfc
from scrloc.errors import AmbiguousMarker, NoCircle, NoCross, NoMarker
from scrloc.tools.imgproc import (
    BoundingBox,
    CircleFit,
    auto_gamma,
    connected_regions,
    detect_cross_center,
    detect_outer_circle,
    equalize_hist,
    expand_box,
    find_marker_centroid,
    gamma_correct,
    threshold,
    to_grayscale,
)


MARKER_WINDOW = ((0.8, 1.0), (0.0, 0.3), (0.0, 0.3))


def disk_image(center, radius, size=40, fg=0.2, bg=0.9):
    yy, xx = np.mgrid[0:size, 0:size]
    cover = np.clip(radius - np.hypot(xx - center[0], yy - center[1]) + 0.5, 0.0, 1.0)
    return bg + (fg - bg) * cover


def head_with_cross(center, recess, radius=12.0, size=40):
    img = disk_image(center, radius, size, fg=0.8, bg=0.5)
    yy, xx = np.mgrid[0:size, 0:size]
    dx, dy = xx - recess[0], yy - recess[1]
    arm, half = 0.6 * radius, 0.12 * radius
    bar = lambda a, b: np.clip(arm - np.abs(a) + 0.5, 0, 1) * np.clip(half - np.abs(b) + 0.5, 0, 1)
    cross = np.maximum(bar(dx, dy), bar(dy, dx))
    return img * (1 - cross) + 0.1 * cross


def red_marker(centers, radius=10.0, shape=(60, 70), blur=1.5):
    yy, xx = np.mgrid[0:shape[0], 0:shape[1]]
    alpha = np.zeros(shape)
    for cx, cy in centers:
        d = np.hypot(xx - cx, yy - cy)
        alpha += 0.5 * erfc((d - radius) / (np.sqrt(2.0) * blur))
    alpha = np.clip(alpha, 0, 1)[..., None]
    return np.array([0.6, 0.6, 0.6]) * (1 - alpha) + np.array([1.0, 0.0, 0.0]) * alpha


def flood_fill_components(mask):
    """Naive 8-connected labelling: list of (area, (y0, x0, y1, x1))."""
    h, w = mask.shape
    seen = np.zeros_like(mask)
    found = []
    for i in range(h):
        for j in range(w):
            if not mask[i, j] or seen[i, j]:
                continue
            queue = deque([(i, j)])
            seen[i, j] = True
            pix = []
            while queue:
                y, x = queue.popleft()
                pix.append((y, x))
                for dy in (-1, 0, 1):
                    for dx in (-1, 0, 1):
                        ny, nx = y + dy, x + dx
                        if 0 <= ny < h and 0 <= nx < w and mask[ny, nx] and not seen[ny, nx]:
                            seen[ny, nx] = True
                            queue.append((ny, nx))
            ys, xs = zip(*pix)
            found.append((len(pix), (min(ys), min(xs), max(ys) + 1, max(xs) + 1)))
    return found


class TestGamma:

    def test_identity(self, rng):
        img = rng.uniform(size=(8, 9, 3))
        np.testing.assert_array_equal(gamma_correct(img, 1.0), img)

    def test_single_pixel(self):
        assert gamma_correct(np.array([[0.25]]), 0.5)[0, 0] == pytest.approx(0.5)

    def test_auto_gamma_on_bright_image_is_clamped(self):
        img = np.full((5, 5), 0.81)
        g = auto_gamma(img)
        assert g == 3.0
        assert gamma_correct(img, g).mean() == pytest.approx(0.81 ** 3, abs=1e-12)

    @pytest.mark.parametrize('mean, expected', [(0.5, 1.0), (0.25, 0.5), (0.95, 3.0), (0.0, 0.3)])
    def test_auto_gamma(self, mean, expected):
        assert auto_gamma(np.full((3, 3), mean)) == pytest.approx(expected)

    def test_out_of_range_gamma(self):
        with pytest.raises(ValueError):
            gamma_correct(np.ones((2, 2)), 5.0)


class TestGrayscale:

    def test_weights(self):
        img = np.array([[[1.0, 1.0, 1.0], [1.0, 0.0, 0.0]]])
        np.testing.assert_allclose(to_grayscale(img), [[1.0, 0.299]])

    def test_matches_weighted_sum(self, rng):
        img = rng.uniform(size=(6, 7, 3))
        expected = 0.299 * img[..., 0] + 0.587 * img[..., 1] + 0.114 * img[..., 2]
        np.testing.assert_allclose(to_grayscale(img), expected, atol=1e-15)

    def test_rejects_gray_input(self):
        with pytest.raises(ValueError):
            to_grayscale(np.zeros((4, 4)))


class TestEqualize:

    def test_two_levels(self):
        img = np.full((10, 10), 0.2)
        img[:, 5:] = 0.8
        out = equalize_hist(img)
        np.testing.assert_allclose(np.unique(out), [0.5, 1.0])

    def test_constant(self):
        out = equalize_hist(np.full((4, 4), 0.37))
        assert np.all(out == out[0, 0])

    def test_ramp_stays_monotone(self):
        ramp = np.linspace(0, 1, 300)[None, :]
        out = equalize_hist(ramp)
        assert np.all(np.diff(out[0]) >= 0)
        assert out.min() >= 0 and out.max() <= 1

    def test_idempotent_on_equalized_output(self, rng):
        levels = np.repeat([0.1, 0.3, 0.6, 0.9], [32, 96, 64, 64])
        once = equalize_hist(rng.permutation(levels).reshape(16, 16))
        np.testing.assert_allclose(equalize_hist(once), once)


class TestThreshold:

    def test_constant_maps(self):
        assert threshold(np.full((3, 3), 0.9), 0.5).all()
        assert not threshold(np.full((3, 3), 0.2), 0.5).any()

    def test_matches_scalar_oracle(self, rng):
        pmap = rng.uniform(size=(20, 20))
        mask = threshold(pmap, 0.42)
        for (i, j), p in np.ndenumerate(pmap):
            assert mask[i, j] == (p >= 0.42)

    def test_tau_range(self):
        with pytest.raises(ValueError):
            threshold(np.zeros((2, 2)), 1.5)


class TestConnectedRegions:

    def test_single_block_with_padding(self):
        mask = np.zeros((30, 30), dtype=bool)
        mask[10:15, 12:17] = True
        assert connected_regions(mask, min_area=10) == [BoundingBox(6, 4, 17, 17)]

    def test_small_block_filtered(self):
        mask = np.zeros((30, 30), dtype=bool)
        mask[10:12, 10:12] = True
        assert connected_regions(mask, min_area=10) == []

    def test_diagonal_touch_is_one_component(self):
        mask = np.zeros((10, 10), dtype=bool)
        mask[0:3, 0:3] = True
        mask[3:6, 3:6] = True
        assert connected_regions(mask, min_area=1, padding=0) == [BoundingBox(0, 0, 6, 6)]

    def test_boxes_clamped_to_image(self):
        mask = np.zeros((20, 20), dtype=bool)
        mask[0:4, 17:20] = True
        (box,) = connected_regions(mask, min_area=1)
        assert box.fits(mask.shape)
        assert (box.x, box.y) == (11, 0)

    @pytest.mark.parametrize('seed', range(5))
    def test_matches_flood_fill(self, seed):
        mask = np.random.default_rng(seed).uniform(size=(64, 64)) < 0.3
        oracle = sorted(box for area, box in flood_fill_components(mask) if area >= 3)
        boxes = connected_regions(mask, min_area=3, padding=0)
        got = [(b.y, b.x, b.y + b.h, b.x + b.w) for b in boxes]
        assert sorted(got) == oracle

    def test_expand_box(self):
        box = expand_box(BoundingBox(2, 50, 10, 12), 34, (100, 120))
        assert (box.w, box.h) == (34, 34)
        assert box.x == 0 and box.fits((100, 120))
        assert box.y <= 50 and box.y + box.h >= 62

    def test_expand_box_keeps_large_boxes(self):
        box = BoundingBox(5, 5, 40, 36)
        assert expand_box(box, 34, (100, 100)) == box


class TestCircle:

    @pytest.mark.parametrize('center', [(17.0, 17.0), (19.3, 15.3)])
    def test_disk_center(self, center):
        fit = detect_outer_circle(disk_image(center, 12), 7, 15)
        assert np.hypot(fit.center[0] - center[0], fit.center[1] - center[1]) <= 0.5
        assert abs(fit.radius - 12) <= 1
        assert 0 < fit.score <= 1

    def test_noisy_disks(self, rng):
        errors = []
        for _ in range(500):
            center = rng.uniform(16, 23, size=2)
            img = disk_image(center, rng.uniform(9, 13)) + rng.normal(0, 0.05, size=(40, 40))
            fit = detect_outer_circle(img, 7, 15)
            errors.append(np.hypot(*(np.array(fit.center) - center)))
        assert max(errors) <= 0.5

    def test_blank(self):
        with pytest.raises(NoCircle):
            detect_outer_circle(np.full((40, 40), 0.5), 7, 15)

    def test_radius_range(self):
        with pytest.raises(ValueError):
            detect_outer_circle(np.zeros((20, 20)), 7, 12)

    def test_pure(self, rng):
        img = disk_image((18.2, 16.9), 11) + rng.normal(0, 0.02, size=(40, 40))
        assert detect_outer_circle(img, 7, 15) == detect_outer_circle(img, 7, 15)


class TestCross:

    def test_centered_recess(self):
        img = head_with_cross((17, 17), (17, 17))
        fit = detect_cross_center(img, CircleFit((17.0, 17.0), 12.0, 1.0))
        assert np.hypot(fit.center[0] - 17, fit.center[1] - 17) <= 1.0
        assert fit.score > 0.8

    def test_tracks_offset_recess(self):
        img = head_with_cross((17, 17), (20, 17))
        fit = detect_cross_center(img, CircleFit((17.0, 17.0), 12.0, 1.0))
        assert abs(fit.center[0] - 20) < abs(fit.center[0] - 17)

    def test_dark_disk(self):
        img = disk_image((17, 17), 12, fg=0.1, bg=0.5)
        with pytest.raises(NoCross):
            detect_cross_center(img, CircleFit((17.0, 17.0), 12.0, 1.0))

    def test_head_outside(self):
        with pytest.raises(ValueError):
            detect_cross_center(np.zeros((20, 20)), CircleFit((25.0, 5.0), 5.0, 1.0))


class TestMarker:

    def test_centroid(self):
        center = (30.4, 25.7)
        found = find_marker_centroid(red_marker([center]), MARKER_WINDOW, 50, 5000)
        assert np.hypot(found[0] - center[0], found[1] - center[1]) <= 0.3

    def test_no_marker(self):
        with pytest.raises(NoMarker):
            find_marker_centroid(np.full((30, 30, 3), 0.6), MARKER_WINDOW, 50, 5000)

    def test_two_markers(self):
        img = red_marker([(15, 30), (50, 30)], radius=8)
        with pytest.raises(AmbiguousMarker):
            find_marker_centroid(img, MARKER_WINDOW, 50, 5000)

    def test_blob_without_channel_excess(self):
        img = np.full((30, 30, 3), 0.2)
        img[10:20, 10:20] = 0.7
        window = ((0.5, 1.0), (0.5, 1.0), (0.5, 1.0))
        with pytest.raises(NoMarker, match='excess'):
            find_marker_centroid(img, window, 50, 5000)

    def test_area_limits(self):
        with pytest.raises(ValueError):
            find_marker_centroid(np.zeros((5, 5, 3)), MARKER_WINDOW, 100, 10)
