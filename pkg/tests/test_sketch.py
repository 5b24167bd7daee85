import math

import numpy as np
import pytest

from sketchnav import sketch as S
from sketchnav import worldgen as W
from sketchnav.grid import OccupancyGrid


def rect_room_layout(h=30, w=40) -> W.LayoutMap:
    cells = np.ones((h, w), dtype=bool)
    cells[3:h - 3, 3:w - 3] = False
    return W.LayoutMap(grid=OccupancyGrid(cells, 0.1))


def pipeline_layout(seed) -> tuple[W.LayoutMap, W.TrajectorySample]:
    params = W.WorldParams(width_range=(40, 48), height_range=(40, 48),
                           rooms_range=(3, 4), obstacles_range=(1, 3),
                           min_room_side=8)
    g = W.generate_world(seed, params)
    layout = W.denoise_layout(g)
    labels = W.segment_rooms(layout)
    traj = W.sample_trajectory(layout, seed + 100, min_geodesic=2.0)
    trimmed = W.select_region(layout, traj, labels)
    return trimmed, traj


def simple_traj(layout: W.LayoutMap) -> W.TrajectorySample:
    free = np.argwhere(~layout.grid.cells)
    start = tuple(free[0])
    goal = tuple(free[-1])
    path = W.astar_path(layout.grid, start, goal)
    return W.TrajectorySample(start=start, goal=goal, path=path)


# -- contours and simplification ---------------------------------------------------

def test_rectangle_contour_is_four_corners():
    layout = rect_room_layout()
    loops = S.boundary_loops(layout.grid.cells)
    assert len(loops) == 1
    assert len(loops[0]) == 4


def test_rectangle_simplifies_to_four_vertices_for_any_small_epsilon():
    layout = rect_room_layout()
    loop = S.boundary_loops(layout.grid.cells)[0]
    for eps in (0.5, 2.0, 5.0, 11.0):  # shorter side is 24 cells
        simplified = S.simplify_loop(loop, eps)
        assert len(simplified) == 4


def test_epsilon_zero_preserves_vertices():
    layout, traj = pipeline_layout(3)
    for loop in S.boundary_loops(layout.grid.cells):
        assert S.simplify_loop(loop, 0.0) == loop


def test_douglas_peucker_open_polyline():
    pts = [(0.0, 0.0), (1.0, 0.05), (2.0, -0.04), (3.0, 0.0), (3.0, 5.0)]
    out = S.douglas_peucker(pts, epsilon=0.2)
    assert out == [(0.0, 0.0), (3.0, 0.0), (3.0, 5.0)]
    assert S.douglas_peucker(pts, epsilon=0.0001) == pts


def test_ink_dilated_by_epsilon_covers_true_boundary():
    # Hausdorff bound: every true boundary point within eps+2 px of ink
    layout, traj = pipeline_layout(4)
    eps = 2.0
    sk = S.render_sketch_low(layout, traj, epsilon=eps)
    tf = S.fit_transform(layout)
    ink = np.argwhere(sk.pixels >= 128)  # (y, x)
    assert len(ink) > 0
    for loop in S.boundary_loops(layout.grid.cells):
        pts = np.array([tf.cells_to_px(x, y) for x, y in loop])
        closed = np.vstack([pts, pts[:1]])
        for a, b in zip(closed[:-1], closed[1:]):
            n = max(2, int(np.hypot(*(b - a))))
            for t in np.linspace(0, 1, n):
                p = a + t * (b - a)
                d = np.sqrt(((ink[:, 1] - p[0]) ** 2 + (ink[:, 0] - p[1]) ** 2).min())
                assert d <= eps + 2.0, f"boundary point {p} is {d:.2f} px from ink"


# -- low abstraction ----------------------------------------------------------------

def test_low_sketch_valid_and_markers_blank():
    layout, traj = pipeline_layout(5)
    sk = S.render_sketch_low(layout, traj)
    sk.validate()
    assert sk.abstraction == S.LOW
    assert sk.pixels.shape == (S.RASTER_SIZE, S.RASTER_SIZE)


def test_low_sketch_deterministic():
    layout, traj = pipeline_layout(6)
    a = S.render_sketch_low(layout, traj)
    b = S.render_sketch_low(layout, traj)
    assert np.array_equal(a.pixels, b.pixels)
    assert a.start_marker == b.start_marker


# -- high abstraction ----------------------------------------------------------------

def test_high_sketch_deterministic_in_seed():
    layout, traj = pipeline_layout(7)
    a = S.render_sketch_high(layout, traj, seed=11)
    b = S.render_sketch_high(layout, traj, seed=11)
    assert np.array_equal(a.pixels, b.pixels)
    c = S.render_sketch_high(layout, traj, seed=12)
    assert not np.array_equal(a.pixels, c.pixels)


def test_high_without_jitter_or_dropping_stays_near_low():
    layout, traj = pipeline_layout(8)
    low = S.render_sketch_low(layout, traj, epsilon=1.5)
    high = S.render_sketch_high(layout, traj, seed=1, epsilon=1.5,
                                jitter_px=0.0, min_loop_px=0.0, gap_fraction=0.0)
    # directed Hausdorff high->low within 2 px
    ink_low = np.argwhere(low.pixels >= 128)
    ink_high = np.argwhere(high.pixels >= 128)
    for y, x in ink_high[:: max(1, len(ink_high) // 400)]:
        d = np.sqrt(((ink_low[:, 0] - y) ** 2 + (ink_low[:, 1] - x) ** 2).min())
        assert d <= 2.0


def test_high_ink_not_more_than_low_ink():
    for seed in (9, 10, 11, 12):
        layout, traj = pipeline_layout(seed)
        low = S.render_sketch_low(layout, traj)
        high = S.render_sketch_high(layout, traj, seed=seed)
        assert high.ink_fraction() <= low.ink_fraction()


def test_complex_layout_uses_more_curves_than_simple():
    # same bounding size; the complex layout has an extra obstacle block ->
    # more turning and more perimeter per unit, so at least as many strokes
    simple = rect_room_layout()
    cells = simple.grid.cells.copy()
    cells[10:14, 10:14] = True
    cells[18:22, 24:28] = True
    complex_layout = W.LayoutMap(grid=OccupancyGrid(cells, 0.1))
    n_simple = S.count_high_curves(simple)
    n_complex = S.count_high_curves(complex_layout)
    assert n_complex >= n_simple


def test_markers_inside_raster_for_both_styles():
    for seed in (13, 14):
        layout, traj = pipeline_layout(seed)
        for sk in (S.render_sketch_low(layout, traj),
                   S.render_sketch_high(layout, traj, seed=seed)):
            for mx, my in (sk.start_marker, sk.goal_marker):
                assert 0 <= mx < S.RASTER_SIZE
                assert 0 <= my < S.RASTER_SIZE


# -- PGM IO --------------------------------------------------------------------------------

def test_pgm_roundtrip(tmp_path):
    rng = np.random.default_rng(0)
    raster = (rng.random((17, 23)) * 255).astype(np.uint8)
    p = tmp_path / "img.pgm"
    S.write_pgm(p, raster)
    back = S.read_pgm(p)
    assert np.array_equal(back, raster)


def test_sketch_save_load_roundtrip(tmp_path):
    layout, traj = pipeline_layout(15)
    sk = S.render_sketch_low(layout, traj)
    base = tmp_path / "w0.low.pgm"
    S.save_sketch(base, sk)
    back = S.load_sketch(base)
    assert np.array_equal(back.pixels, sk.pixels)
    assert back.scale == sk.scale
    assert back.start_marker == sk.start_marker
    assert back.goal_marker == sk.goal_marker
    assert back.abstraction == sk.abstraction
    # byte-identical re-save
    S.save_sketch(tmp_path / "w1.low.pgm", back)
    assert (tmp_path / "w0.low.pgm").read_bytes() == (tmp_path / "w1.low.pgm").read_bytes()
    assert (tmp_path / "w0.low.pgm.meta").read_text() == (tmp_path / "w1.low.pgm.meta").read_text()


def test_marker_nudged_off_ink():
    raster = np.zeros((16, 16), dtype=np.uint8)
    raster[8, 8] = 255
    x, y = S._nudge_off_ink(raster, 8.5, 8.5)
    assert raster[int(y), int(x)] < 128
    assert abs(x - 8.5) <= 2 and abs(y - 8.5) <= 2
