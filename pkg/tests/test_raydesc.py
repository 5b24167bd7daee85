import math

import numpy as np
import pytest

from sketchnav import raydesc as R

from oracles import ray_march_ink


def blank(side=128) -> np.ndarray:
    return np.zeros((side, side), dtype=np.uint8)


def random_strokes(rng, side=128, n_lines=12) -> np.ndarray:
    raster = blank(side)
    for _ in range(n_lines):
        x0, y0, x1, y1 = rng.integers(5, side - 5, 4)
        n = int(max(abs(x1 - x0), abs(y1 - y0))) + 1
        xs = np.linspace(x0, x1, n).round().astype(int)
        ys = np.linspace(y0, y1, n).round().astype(int)
        raster[ys, xs] = 255
    return raster


def test_shape_is_nplus2_by_m():
    desc = R.extract(blank(), m1=9, m2=9, n_rays=8)
    assert desc.matrix.shape == (10, 81)
    assert desc.m == 81


def test_blank_center_keypoint_four_rays():
    # center keypoint of a square raster, N=4: all distances 0.5/sqrt(2)
    desc = R.extract(blank(128), m1=3, m2=3, n_rays=4)
    center = 1 * 3 + 1
    expect = 0.5 / math.sqrt(2)
    assert np.allclose(desc.distances[:, center], expect, atol=1e-12)


def test_blank_raster_all_border_distances():
    desc = R.extract(blank(100), m1=4, m2=5, n_rays=8)
    tab = R._table(100, 100, 4, 5, 8)
    expect = np.clip(tab.border / tab.diag, 0, 1)   # (M, N)
    assert np.allclose(desc.distances, expect.T, atol=1e-12)


def test_fully_inked_raster_all_zero():
    raster = np.full((64, 64), 255, dtype=np.uint8)
    desc = R.extract(raster, m1=3, m2=3, n_rays=8)
    assert np.allclose(desc.distances, 0.0)


def test_keypoint_on_ink_zero_distances():
    raster = blank(128)
    # keypoint (1,1) of a 3x3 lattice sits at (64, 64); ink that pixel
    raster[64, 64] = 255
    desc = R.extract(raster, m1=3, m2=3, n_rays=8)
    center = 4
    assert np.allclose(desc.distances[:, center], 0.0)
    others = [i for i in range(9) if i != center]
    assert (desc.distances[:, others] > 0).all()


def test_distances_in_unit_interval_and_coords_lattice():
    rng = np.random.default_rng(0)
    raster = random_strokes(rng)
    desc = R.extract(raster, m1=5, m2=7, n_rays=12)
    assert (desc.distances >= 0).all() and (desc.distances <= 1).all()
    coords = desc.coords
    assert coords.shape == (35, 2)
    # exact uniform interior lattice, row-major from top-left
    k = 0
    for r in range(7):
        for c in range(5):
            assert coords[k, 0] == pytest.approx((c + 1) / 6, abs=1e-15)
            assert coords[k, 1] == pytest.approx((r + 1) / 8, abs=1e-15)
            k += 1


def test_coords_independent_of_content():
    rng = np.random.default_rng(1)
    a = R.extract(random_strokes(rng), m1=6, m2=6, n_rays=8)
    b = R.extract(blank(), m1=6, m2=6, n_rays=8)
    assert np.array_equal(a.coords, b.coords)
    c = R.extract(blank(64), m1=6, m2=6, n_rays=8)
    assert np.array_equal(a.coords, c.coords)


def test_extract_matches_marching_oracle():
    rng = np.random.default_rng(2)
    checked = 0
    for trial in range(8):
        side = int(rng.integers(48, 128))
        raster = random_strokes(rng, side, n_lines=int(rng.integers(4, 16)))
        m1, m2 = int(rng.integers(2, 7)), int(rng.integers(2, 7))
        n = int(rng.integers(4, 13))
        desc = R.extract(raster, m1, m2, n)
        tab = R._table(side, side, m1, m2, n)
        for _ in range(40):
            q = int(rng.integers(m1 * m2))
            j = int(rng.integers(n))
            x, y = tab.kp_px[q]
            expect = ray_march_ink(raster, float(x), float(y),
                                   (float(tab.dirs[j, 0]), float(tab.dirs[j, 1])))
            got = desc.distances[j, q] * tab.diag
            assert got == pytest.approx(expect, abs=1e-9), (trial, q, j)
            checked += 1
    assert checked == 320


def test_monotone_under_added_ink():
    rng = np.random.default_rng(3)
    raster = random_strokes(rng)
    before = R.extract(raster, 5, 5, 8).distances
    more = raster.copy()
    more[40:44, 60:100] = 255
    after = R.extract(more, 5, 5, 8).distances
    assert (after <= before + 1e-12).all()


def test_rotate_rays_identities():
    rng = np.random.default_rng(4)
    desc = R.extract(random_strokes(rng), 4, 4, 8)
    r0 = R.rotate_rays(desc, 0)
    rn = R.rotate_rays(desc, 8)
    assert np.array_equal(r0.matrix, desc.matrix)
    assert np.array_equal(rn.matrix, desc.matrix)
    r3 = R.rotate_rays(R.rotate_rays(desc, 3), 5)
    assert np.array_equal(r3.matrix, desc.matrix)


def test_rotate_rays_shifts_distances_only():
    rng = np.random.default_rng(5)
    desc = R.extract(random_strokes(rng), 4, 4, 8)
    r2 = R.rotate_rays(desc, 2)
    assert np.array_equal(r2.coords, desc.coords)
    assert np.array_equal(r2.distances[2], desc.distances[0])
    assert np.array_equal(r2.distances[0], desc.distances[6])


def test_quarter_turn_rotation_equivalence():
    # extract on rot90(raster) == rotate_rays(-N/4) with keypoint columns
    # permuted by the lattice rotation, exactly
    rng = np.random.default_rng(6)
    m, n = 6, 8
    raster = random_strokes(rng, 128)
    desc = R.extract(raster, m, m, n)
    rotated = R.extract(np.rot90(raster).copy(), m, m, n)
    shifted = R.rotate_rays(desc, -(n // 4))
    for i in range(m):          # input x index
        for j in range(m):      # input y index
            q = j * m + i
            q2 = (m - 1 - i) * m + j
            assert np.allclose(rotated.distances[:, q2], shifted.distances[:, q],
                               atol=1e-12), (i, j)


def test_dump_text_roundtrippable_layout():
    desc = R.extract(blank(64), 2, 2, 4)
    text = R.dump_text(desc)
    lines = text.splitlines()
    assert lines[0] == "RAYDESC 2 2 4 SKETCH"
    assert len(lines) == 1 + 4
    assert len(lines[1].split()) == 6  # d1..d4 x y


def test_extract_validates_inputs():
    with pytest.raises(ValueError, match="lattice"):
        R.extract(blank(), 1, 5, 8)
    with pytest.raises(ValueError, match="rays"):
        R.extract(blank(), 3, 3, 3)
