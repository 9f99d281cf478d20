import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from hipscreen import imagecore
from hipscreen.errors import BadClassLabel, NoPixelsOfClass, ShapeError


def bfs_components(mask, class_id):
    """Reference labelling by explicit breadth-first search."""
    h, w = mask.shape
    seen = np.zeros_like(mask, dtype=bool)
    comps = []
    for y in range(h):
        for x in range(w):
            if mask[y, x] != class_id or seen[y, x]:
                continue
            comp, queue = set(), [(x, y)]
            seen[y, x] = True
            while queue:
                cx, cy = queue.pop()
                comp.add((cx, cy))
                for nx, ny in ((cx + 1, cy), (cx - 1, cy), (cx, cy + 1), (cx, cy - 1)):
                    if 0 <= nx < w and 0 <= ny < h and not seen[ny, nx] and mask[ny, nx] == class_id:
                        seen[ny, nx] = True
                        queue.append((nx, ny))
            comps.append(comp)
    return comps


masks = st.tuples(st.integers(1, 16), st.integers(1, 16)).flatmap(
    lambda hw: arrays(np.uint8, hw, elements=st.integers(0, 3)))


def disk(shape, cx, cy, r, value=2):
    ys, xs = np.mgrid[0:shape[0], 0:shape[1]]
    m = np.zeros(shape, dtype=np.uint8)
    m[(xs - cx) ** 2 + (ys - cy) ** 2 <= r * r] = value
    return m


class TestConnectedComponents:
    def test_absent_class(self):
        assert imagecore.connected_components(np.zeros((5, 5), np.uint8), 2) == []

    def test_solid_block(self):
        m = np.zeros((6, 6), np.uint8)
        m[1:4, 2:5] = 2
        comps = imagecore.connected_components(m, 2)
        assert len(comps) == 1 and len(comps[0]) == 9

    def test_diagonal_blocks_are_separate(self):
        m = np.zeros((6, 6), np.uint8)
        m[0:2, 0:2] = 1
        m[2:4, 2:4] = 1
        comps = imagecore.connected_components(m, 1)
        assert [c.pixels for c in comps] == [
            {(0, 0), (1, 0), (0, 1), (1, 1)}, {(2, 2), (3, 2), (2, 3), (3, 3)}]

    @settings(max_examples=150, deadline=None)
    @given(masks, st.integers(0, 3))
    def test_partition_matches_bfs(self, mask, class_id):
        comps = imagecore.connected_components(mask, class_id)
        got = [c.pixels for c in comps]
        expected = bfs_components(mask, class_id)
        assert sorted(map(sorted, got)) == sorted(map(sorted, expected))
        # ordered by topmost-then-leftmost pixel
        keys = [min((y, x) for x, y in c) for c in got]
        assert keys == sorted(keys)
        union = set().union(*got) if got else set()
        ys, xs = np.nonzero(mask == class_id)
        assert union == set(zip(xs.tolist(), ys.tolist()))
        assert sum(len(c) for c in got) == len(union)

    @settings(max_examples=100, deadline=None)
    @given(masks, st.integers(0, 3), st.data())
    def test_flood_equals_a_component(self, mask, class_id, data):
        h, w = mask.shape
        seed = (data.draw(st.integers(0, w - 1)), data.draw(st.integers(0, h - 1)))
        comps = [c.pixels for c in imagecore.connected_components(mask, class_id)]
        if not comps:
            with pytest.raises(NoPixelsOfClass):
                imagecore.flood_from(mask, class_id, seed)
            return
        flooded = imagecore.flood_from(mask, class_id, seed).pixels
        assert flooded in comps


class TestFlood:
    def test_seed_inside_disk(self):
        m = disk((32, 32), 16, 16, 6)
        comp = imagecore.flood_from(m, 2, (16, 16))
        assert len(comp) == int((m == 2).sum())

    def test_seed_in_annulus_hole(self):
        # 7x7 ring of class 2 around a hole, plus a far-away blob.
        m = np.zeros((10, 14), np.uint8)
        m[1:8, 1:8] = 2
        m[3:6, 3:6] = 0
        m[0:2, 11:13] = 2
        comp = imagecore.flood_from(m, 2, (4, 4))
        # nearest pixels to (4,4) are (4,2),(2,4),(6,4),(4,6) at distance 2;
        # the tie goes to the smallest y, all on the ring.
        assert comp.pixels == {(x, y) for y in range(1, 8) for x in range(1, 8)
                               if not (3 <= x < 6 and 3 <= y < 6)}

    def test_nearest_rule_picks_closest_component(self):
        m = np.zeros((10, 20), np.uint8)
        m[5, 2] = 2
        m[5, 15:17] = 2
        assert imagecore.flood_from(m, 2, (12, 5)).pixels == {(15, 5), (16, 5)}

    def test_tie_breaks_to_smaller_y(self):
        m = np.zeros((10, 10), np.uint8)
        m[1, 5] = 2
        m[9, 5] = 2
        assert imagecore.flood_from(m, 2, (5, 5)).pixels == {(5, 1)}

    def test_absent_class(self):
        with pytest.raises(NoPixelsOfClass):
            imagecore.flood_from(np.zeros((4, 4), np.uint8), 3, (0, 0))


class TestCentroid:
    def test_single(self):
        c = imagecore.PixelComponent(np.array([[0, 0]]), 2)
        assert imagecore.centroid(c) == (0.0, 0.0)

    def test_square_corners(self):
        c = imagecore.PixelComponent(np.array([[0, 0], [2, 0], [0, 2], [2, 2]]), 2)
        assert imagecore.centroid(c) == (1.0, 1.0)

    def test_disk(self):
        m = disk((128, 128), 64, 64, 20)
        comp = imagecore.connected_components(m, 2)[0]
        ys, xs = np.nonzero(m)
        cx, cy = imagecore.centroid(comp)
        assert (cx, cy) == (xs.mean(), ys.mean())
        assert abs(cx - 64) <= 0.5 and abs(cy - 64) <= 0.5


class TestBoundary:
    def test_single_pixel(self):
        c = imagecore.PixelComponent(np.array([[3, 4]]), 1)
        assert imagecore.boundary_pixels(c) == {(3, 4)}

    def test_block_rim(self):
        m = np.zeros((5, 5), np.uint8)
        m[1:4, 1:4] = 1
        comp = imagecore.connected_components(m, 1)[0]
        rim = {(x, y) for x in range(1, 4) for y in range(1, 4)} - {(2, 2)}
        assert imagecore.boundary_pixels(comp) == rim

    def test_line(self):
        c = imagecore.PixelComponent(np.array([[x, 0] for x in range(5)]), 1)
        assert len(imagecore.boundary_pixels(c)) == 5

    def test_image_border_counts_as_outside(self):
        m = np.ones((3, 3), bool)
        b = imagecore.boundary_mask(m)
        assert b.sum() == 8 and not b[1, 1]

    @settings(max_examples=100, deadline=None)
    @given(masks)
    def test_interior_not_adjacent_to_exterior(self, mask):
        for comp in imagecore.connected_components(mask, 1):
            pix = comp.pixels
            bnd = imagecore.boundary_pixels(comp)
            assert bnd <= pix
            for x, y in pix - bnd:
                assert all(n in pix for n in ((x + 1, y), (x - 1, y), (x, y + 1), (x, y - 1)))


class TestCropAndPool:
    def test_identity_crop(self):
        img = np.random.default_rng(0).random((384, 384))
        assert np.array_equal(imagecore.center_crop(img, 384, 384), img)

    def test_small_crop(self):
        img = np.arange(36, dtype=float).reshape(6, 6)
        assert np.array_equal(imagecore.center_crop(img, 2, 2), img[2:4, 2:4])

    def test_padding(self):
        img = np.array([[0.1, 0.2], [0.3, 0.4]])
        out = imagecore.center_crop(img, 4, 4)
        assert np.array_equal(out[1:3, 1:3], img)
        assert out.sum() == pytest.approx(img.sum())

    def test_odd_difference_drops_bottom_right(self):
        img = np.arange(25, dtype=float).reshape(5, 5)
        assert np.array_equal(imagecore.center_crop(img, 4, 4), img[0:4, 0:4])
        out = imagecore.center_crop(np.ones((2, 2)), 5, 5)
        assert np.array_equal(out[1:3, 1:3], np.ones((2, 2))) and out.sum() == 4

    def test_pool_shape(self):
        assert imagecore.max_pool_downsample(np.zeros((384, 384)), 3).shape == (128, 128)

    def test_pool_constant(self):
        assert np.all(imagecore.max_pool_downsample(np.full((9, 9), 0.3), 3) == 0.3)

    def test_pool_block_max(self):
        block = np.array([[0.1, 0.2, 0.3], [0.7, 0.0, 0.5], [0.2, 0.2, 0.2]])
        assert imagecore.max_pool_downsample(block, 3)[0, 0] == 0.7

    def test_pool_not_divisible(self):
        with pytest.raises(ShapeError):
            imagecore.max_pool_downsample(np.zeros((10, 9)), 3)

    @settings(max_examples=50, deadline=None)
    @given(arrays(np.float64, (6, 9), elements=st.floats(0, 1)))
    def test_pool_is_block_max(self, img):
        out = imagecore.max_pool_downsample(img, 3)
        for by in range(2):
            for bx in range(3):
                assert out[by, bx] == img[3 * by:3 * by + 3, 3 * bx:3 * bx + 3].max()

    def test_majority(self):
        block = np.array([[0, 0, 0], [0, 0, 2], [2, 2, 2]], np.uint8)
        assert imagecore.majority_downsample(block, 3)[0, 0] == 0
        assert imagecore.majority_downsample(np.full((3, 3), 3, np.uint8), 3)[0, 0] == 3
        tie = np.array([[1, 1, 1], [1, 2, 2], [2, 2, 0]], np.uint8)
        assert imagecore.majority_downsample(tie, 3)[0, 0] == 1


class TestReflect:
    def test_single_pixel(self):
        m = np.zeros((8, 10), np.uint8)
        m[5, 0] = 1
        r = imagecore.reflect_horizontal(m)
        assert r[5, 9] == 1 and r.sum() == 1

    @settings(max_examples=50, deadline=None)
    @given(masks)
    def test_involution_and_histogram(self, mask):
        r = imagecore.reflect_horizontal(mask)
        assert np.array_equal(imagecore.reflect_horizontal(r), mask)
        assert np.array_equal(np.bincount(r.ravel(), minlength=4), np.bincount(mask.ravel(), minlength=4))


class TestPng:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(1)
        img = rng.integers(0, 256, (12, 7)) / 255.0
        imagecore.write_gray_png(tmp_path / "i.png", img)
        assert np.array_equal(imagecore.read_gray_png(tmp_path / "i.png"), img)
        mask = rng.integers(0, 4, (12, 7)).astype(np.uint8)
        imagecore.write_mask_png(tmp_path / "m.png", mask)
        assert np.array_equal(imagecore.read_mask_png(tmp_path / "m.png"), mask)

    def test_bad_label(self, tmp_path):
        from PIL import Image
        Image.fromarray(np.full((3, 3), 4, np.uint8)).save(tmp_path / "m.png")
        with pytest.raises(BadClassLabel):
            imagecore.read_mask_png(tmp_path / "m.png")
