import numpy as np
import pytest

import csdnet.tensor as T
from csdnet import diagnostics
from csdnet.rng import Rng
from csdnet.ssdp import (
    DiscrepancyMask,
    augment,
    binarize,
    largest_component_mask,
    pattern_map,
    refine,
)
from csdnet.tensor import Tensor, grad_check


def oracle_components(grid):
    """Set-growing flood fill, 4-connectivity; independent of the BFS path.

    Returns a list of (cell set, bbox) sorted by (-size, min cell).
    """
    grid = np.asarray(grid)
    h, w = grid.shape
    remaining = {(i, j) for i in range(h) for j in range(w) if grid[i, j]}
    comps = []
    while remaining:
        seed = min(remaining)
        comp = {seed}
        frontier = {seed}
        remaining.discard(seed)
        while frontier:
            nxt = set()
            for (i, j) in frontier:
                for (a, b) in ((i - 1, j), (i + 1, j), (i, j - 1), (i, j + 1)):
                    if (a, b) in remaining:
                        remaining.discard((a, b))
                        comp.add((a, b))
                        nxt.add((a, b))
            frontier = nxt
        rows = [c[0] for c in comp]
        cols = [c[1] for c in comp]
        comps.append((comp, (min(rows), min(cols), max(rows), max(cols))))
    comps.sort(key=lambda item: (-len(item[0]), min(item[0])))
    return comps


def oracle_rect(grid):
    comps = oracle_components(grid)
    if not comps:
        return (0, 0, grid.shape[0], grid.shape[1])
    minr, minc, maxr, maxc = comps[0][1]
    return (minr, minc, maxr - minr + 1, maxc - minc + 1)


class TestPatternMap:
    def test_zero_kernel_zero_map(self):
        x = Tensor(np.arange(8.0).reshape(2, 2, 2))
        pm = pattern_map(x, Tensor([0.0, 0.0]), 4, 4)
        assert np.all(pm.p.data == 0)
        assert np.all(pm.p_img == 0)

    def test_constant_channels(self):
        x = Tensor(np.stack([np.ones((3, 3)), 2 * np.ones((3, 3))]))
        pm = pattern_map(x, Tensor([3.0, 4.0]), 6, 6)
        assert np.allclose(pm.p.data, 11.0)
        assert np.allclose(pm.p_img, 11.0)
        assert pm.p_img.shape == (6, 6)

    def test_identity_kernel(self):
        x = Tensor(np.arange(9.0).reshape(1, 3, 3))
        pm = pattern_map(x, Tensor([1.0]), 3, 3)
        assert np.array_equal(pm.p.data, x.data[0])

    def test_resized_map_matches_tensor_op(self):
        x = Tensor(Rng.derive(0, "pm").uniform_array((4, 3, 3), -1, 1))
        k = Tensor(Rng.derive(0, "pk").uniform_array(4, -1, 1))
        pm = pattern_map(x, k, 12, 12)
        via_op = T.bilinear_resize(Tensor(pm.p.data), 12, 12).data
        assert np.allclose(pm.p_img, via_op, atol=1e-12)


class TestBinarize:
    def test_strict_mean_threshold(self):
        b = binarize(np.array([[1.0, 2.0], [3.0, 6.0]]))
        assert np.array_equal(b, [[0, 0], [0, 1]])

    def test_constant_map_all_zero(self):
        assert np.all(binarize(np.full((4, 4), 5.0)) == 0)

    def test_nonconstant_has_both_values(self):
        for seed in range(20):
            m = Rng.derive(seed, "bin").uniform_array((5, 5), -1, 1)
            b = binarize(m)
            assert b.min() == 0 and b.max() == 1


class TestLargestComponent:
    def test_column_race(self):
        b = np.array([[1, 0, 1], [1, 0, 1], [0, 0, 1]])
        mask = largest_component_mask(b)
        assert mask.rect == (0, 2, 3, 1)

    def test_all_ones_whole_image(self):
        mask = largest_component_mask(np.ones((3, 4), dtype=int))
        assert mask.rect == (0, 0, 3, 4)
        assert np.all(mask.mask == 1)

    def test_all_zero_fallback(self):
        mask = largest_component_mask(np.zeros((3, 4), dtype=int))
        assert mask.rect == (0, 0, 3, 4)

    def test_tie_break_prefers_first_in_scan_order(self):
        b = np.array([[0, 0, 1], [0, 0, 1], [1, 1, 0]])  # two components of size 2
        mask = largest_component_mask(b)
        assert mask.rect == (0, 2, 2, 1)

    def test_mask_is_filled_rectangle_of_zeros_and_ones(self):
        for seed in range(30):
            grid = (Rng.derive(seed, "rect").uniform_array((8, 8)) > 0.6).astype(int)
            mask = largest_component_mask(grid)
            assert set(np.unique(mask.mask)) <= {0.0, 1.0}
            rows = np.flatnonzero(mask.mask.any(axis=1))
            cols = np.flatnonzero(mask.mask.any(axis=0))
            top, left, h, w = mask.rect
            assert rows.min() == top and rows.max() == top + h - 1
            assert cols.min() == left and cols.max() == left + w - 1
            assert mask.mask[top : top + h, left : left + w].all()
            assert mask.mask.sum() == h * w

    def test_agrees_with_oracle_exhaustive_3x3(self):
        for bits in range(2**9):
            grid = np.array([(bits >> k) & 1 for k in range(9)]).reshape(3, 3)
            assert largest_component_mask(grid).rect == oracle_rect(grid), grid

    def test_agrees_with_oracle_random_12x12(self):
        for seed in range(200):
            grid = (Rng.derive(seed, "oracle").uniform_array((12, 12)) > 0.55).astype(int)
            mask = largest_component_mask(grid)
            comps = oracle_components(grid)
            assert mask.rect == oracle_rect(grid)
            if comps:  # same component cell count behind the chosen bbox
                top, left, h, w = mask.rect
                assert (top, left, top + h - 1, left + w - 1) == (
                    comps[0][1][0],
                    comps[0][1][1],
                    comps[0][1][2],
                    comps[0][1][3],
                )

    def test_square_growth_stays_in_bounds(self):
        b = np.zeros((10, 10), dtype=int)
        b[0, 0:7] = 1  # 1x7 strip at the border
        mask = largest_component_mask(b, square=True)
        top, left, h, w = mask.rect
        assert h == w == 7
        assert top >= 0 and left >= 0 and top + h <= 10 and left + w <= 10


class TestAugment:
    def test_whole_rect_is_identity(self):
        img = Rng.derive(0, "aug").uniform_array((3, 6, 6))
        mask = DiscrepancyMask(mask=np.ones((6, 6)), rect=(0, 0, 6, 6))
        assert np.max(np.abs(augment(img, mask) - img)) < 1e-12

    def test_crop_matches_resize_oracle(self):
        img = Rng.derive(1, "aug").uniform_array((3, 4, 4))
        mask = DiscrepancyMask(mask=np.zeros((4, 4)), rect=(0, 0, 2, 2))
        mask.mask[:2, :2] = 1
        out = augment(img, mask)
        expected = T.bilinear_resize_array(img[:, :2, :2], 4, 4)
        assert np.allclose(out, expected, atol=1e-12)

    def test_constant_image_invariant(self):
        img = np.full((3, 8, 8), 0.4)
        mask = DiscrepancyMask(mask=np.zeros((8, 8)), rect=(2, 3, 4, 2))
        assert np.allclose(augment(img, mask), 0.4)

    def test_counts_invocations(self):
        img = np.zeros((3, 4, 4))
        mask = DiscrepancyMask(mask=np.ones((4, 4)), rect=(0, 0, 4, 4))
        before = diagnostics.get("ssdp.augment_calls")
        augment(img, mask)
        assert diagnostics.get("ssdp.augment_calls") == before + 1


class TestRefine:
    def test_zero_map_halves(self):
        x = Tensor(Rng.derive(0, "ref").uniform_array((2, 3, 3), -2, 2))
        out = refine(x, Tensor(np.zeros((3, 3))))
        assert np.allclose(out.data, 0.5 * x.data)

    def test_saturated_map_passes_through(self):
        x = Tensor(Rng.derive(1, "ref").uniform_array((2, 3, 3), -2, 2))
        out = refine(x, Tensor(np.full((3, 3), 30.0)))
        assert np.max(np.abs(out.data - x.data)) < 1e-9

    def test_zero_features_stay_zero(self):
        out = refine(Tensor(np.zeros((2, 3, 3))), Tensor(np.ones((3, 3))))
        assert np.all(out.data == 0)

    def test_attenuates_and_keeps_sign(self):
        x = Tensor(Rng.derive(2, "ref").uniform_array((3, 4, 4), -2, 2))
        p = Tensor(Rng.derive(3, "ref").uniform_array((4, 4), -3, 3))
        out = refine(x, p).data
        nz = x.data != 0
        assert np.all(np.abs(out[nz]) < np.abs(x.data[nz]))
        assert np.all(np.sign(out[nz]) == np.sign(x.data[nz]))

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValueError, match="does not match"):
            refine(Tensor(np.zeros((2, 3, 3))), Tensor(np.zeros((2, 2))))


def test_pipeline_determinism_identical_bytes():
    rng = Rng.derive(4, "det")
    x = rng.uniform_array((4, 4, 4), -1, 1)
    k = rng.uniform_array(4, -1, 1)
    img = rng.uniform_array((3, 16, 16))

    def run():
        pm = pattern_map(Tensor(x), Tensor(k), 16, 16)
        mask = largest_component_mask(binarize(pm.p_img))
        return augment(img, mask).tobytes()

    assert run() == run()


def test_refine_of_pattern_map_grad_wrt_kernel():
    rng = Rng.derive(5, "grad")
    x = Tensor(rng.uniform_array((3, 4, 4), -1, 1))
    weights = Tensor(rng.uniform_array((3, 4, 4), -1, 1))
    k = Tensor(rng.uniform_array(3, -1, 1))

    def f(t):
        pm = pattern_map(x, t, 8, 8)
        return T.sum_all(T.mul(refine(x, pm.p), weights))

    assert grad_check(f, k) <= 1e-4
