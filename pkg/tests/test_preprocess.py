import numpy as np
import pytest
from scipy import ndimage
from skimage.measure import euler_number

from ridgerect.errors import EmptyForeground, FlatImage
from ridgerect.preprocess import (
    Mask,
    binarize,
    center,
    enhance,
    preprocess_image,
    segment,
    shift_image,
    thin,
)


def grating(normal_angle_deg, size=256, period=9.0):
    a = np.deg2rad(normal_angle_deg)
    xx, yy = np.meshgrid(np.arange(size, dtype=float), np.arange(size, dtype=float))
    phase = (xx * np.cos(a) + yy * np.sin(a)) * 2 * np.pi / period
    return np.rint(127.5 * (1.0 + np.cos(phase))).astype(np.uint8)


def grating_patch(size=256, lo=64, hi=192, theta=20.0, background=255):
    img = np.full((size, size), background, dtype=np.uint8)
    img[lo:hi, lo:hi] = grating(theta, size)[lo:hi, lo:hi]
    return img


class TestEnhance:
    @pytest.mark.parametrize("theta", [0.0, 30.0, -55.0])
    def test_grating_phase_preserved(self, theta):
        img = grating(theta)
        out = enhance(img)
        a = img.astype(float) - img.mean()
        b = out.astype(float) - out.mean()
        corr = (a * b).sum() / np.sqrt((a * a).sum() * (b * b).sum())
        assert corr >= 0.9

    def test_full_output_range(self):
        out = enhance(grating(30.0))
        assert out.min() == 0 and out.max() == 255

    def test_flat_image_rejected(self):
        with pytest.raises(FlatImage):
            enhance(np.full((64, 64), 128, dtype=np.uint8))
        with pytest.raises(FlatImage):
            enhance(np.full((64, 64), 128, dtype=np.uint8) + np.eye(64, dtype=np.uint8) * 2)


class TestBinarize:
    def test_grating_band_fraction(self):
        fg = binarize(enhance(grating(30.0)))
        assert abs(fg.mean() - 0.5) <= 0.1

    def test_all_white_is_background(self):
        assert not binarize(np.full((32, 32), 255, dtype=np.uint8)).any()

    def test_all_black_is_foreground(self):
        assert binarize(np.zeros((32, 32), dtype=np.uint8)).all()


class TestThin:
    def test_bar_centerline(self):
        img = np.zeros((20, 60), bool)
        img[8:13, 10:50] = True
        sk = thin(img)
        ys, xs = np.nonzero(sk)
        assert set(np.unique(ys)) == {10}  # 1-px centerline of rows 8..12
        assert abs(xs.min() - 10) <= 2 and abs(xs.max() - 49) <= 2

    def test_empty_input(self):
        assert not thin(np.zeros((16, 16), bool)).any()

    def test_ring_stays_single_loop(self):
        yy, xx = np.mgrid[0:64, 0:64]
        r = np.hypot(yy - 32, xx - 32)
        ring = (r > 10) & (r < 20)
        sk = thin(ring)
        _, n = ndimage.label(sk, structure=np.ones((3, 3), dtype=int))
        assert n == 1
        assert euler_number(sk, connectivity=2) == euler_number(ring, connectivity=2) == 0

    @pytest.mark.parametrize("seed", [0, 1])
    def test_topology_preserved_on_blobs(self, seed):
        rng = np.random.default_rng(seed)
        img = np.zeros((96, 96), bool)
        for _ in range(3):
            cy, cx = rng.integers(20, 76, 2)
            rr = rng.integers(8, 14)
            yy, xx = np.mgrid[0:96, 0:96]
            img |= np.hypot(yy - cy, xx - cx) < rr
        # punch one hole
        img &= ~(np.hypot(np.mgrid[0:96, 0:96][0] - 48, np.mgrid[0:96, 0:96][1] - 48) < 4)
        sk = thin(img)
        _, n_in = ndimage.label(img, structure=np.ones((3, 3), dtype=int))
        _, n_out = ndimage.label(sk, structure=np.ones((3, 3), dtype=int))
        assert n_in == n_out
        assert euler_number(sk, connectivity=2) == euler_number(img, connectivity=2)


class TestSegment:
    def test_grating_patch_iou(self):
        img = grating_patch()
        mask = segment(img)
        truth = np.zeros((256, 256), bool)
        truth[64:192, 64:192] = True
        got = mask.to_pixel()
        iou = (got & truth).sum() / (got | truth).sum()
        assert iou >= 0.9

    def test_blank_image_empty(self):
        with pytest.raises(EmptyForeground):
            segment(np.full((128, 128), 200, dtype=np.uint8))

    def test_largest_component_wins(self):
        img = np.full((256, 256), 255, dtype=np.uint8)
        g = grating(30.0, 256)
        img[32:160, 32:160] = g[32:160, 32:160]   # large blob
        img[208:240, 208:240] = g[208:240, 208:240]  # small blob
        mask = segment(img).to_pixel()
        assert mask[96, 96]
        assert not mask[224, 224]

    def test_single_filled_component(self):
        mask = segment(grating_patch()).to_blocks()
        _, n = ndimage.label(mask, structure=np.ones((3, 3), dtype=int))
        assert n == 1
        assert not (ndimage.binary_fill_holes(mask) ^ mask).any()


class TestCenter:
    def test_already_centered(self):
        mask = np.zeros((64, 64), bool)
        mask[24:40, 24:40] = True  # centroid (31.5, 31.5) == image center
        img = np.zeros((64, 64), dtype=np.uint8)
        out = center(img, Mask(mask))
        assert out.centering_offset == (0, 0)

    def test_offset_is_negated_displacement(self):
        mask = np.zeros((64, 64), bool)
        mask[24:40, 24:40] = True
        mask = shift_image(mask, (20, -8), fill=False)  # centroid at center + (20, -8)
        out = center(np.zeros((64, 64), dtype=np.uint8), Mask(mask))
        assert out.centering_offset == (-20, 8)

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_recentered_centroid_near_center(self, seed):
        rng = np.random.default_rng(seed)
        mask = np.zeros((128, 128), bool)
        cy, cx = rng.integers(30, 98, 2)
        yy, xx = np.mgrid[0:128, 0:128]
        mask |= np.hypot(yy - cy, xx - cx) < 16
        out = center(np.zeros((128, 128), dtype=np.uint8), Mask(mask))
        mx, my = out.mask.centroid()
        assert abs(mx - 63.5) <= 1.0
        assert abs(my - 63.5) <= 1.0

    def test_idempotent_within_one_pixel(self):
        mask = np.zeros((128, 128), bool)
        mask[10:50, 70:120] = True
        once = center(np.zeros((128, 128), dtype=np.uint8), Mask(mask))
        twice = center(once.skeleton, once.mask)
        assert abs(twice.centering_offset[0]) <= 1
        assert abs(twice.centering_offset[1]) <= 1


class TestPipeline:
    def test_thin_mode_products(self):
        sample = preprocess_image(grating_patch(), mode="thin")
        sk = sample.skeleton > 0
        assert sk.any()
        mask_px = sample.mask.to_pixel()
        dilated = ndimage.binary_dilation(mask_px, iterations=2)
        assert not (sk & ~dilated).any()  # skeleton inside dilated mask

    @pytest.mark.parametrize("mode", ["enhance", "binarize", "thin"])
    def test_modes_produce_output(self, mode):
        sample = preprocess_image(grating_patch(), mode=mode)
        assert sample.skeleton.shape == (256, 256)
        assert sample.mask.to_pixel().any()
