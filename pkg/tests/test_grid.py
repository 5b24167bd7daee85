import math

import numpy as np
import pytest

from sketchnav import grid as G

from oracles import bellman_distance_field, dijkstra_grid, ray_hit_exhaustive


def empty_room(h=20, w=20, res=0.1) -> G.OccupancyGrid:
    cells = np.zeros((h, w), dtype=bool)
    cells[0, :] = cells[-1, :] = cells[:, 0] = cells[:, -1] = True
    return G.OccupancyGrid(cells, res)


def random_grid(rng, h=32, w=32, res=0.1, density=0.12) -> G.OccupancyGrid:
    cells = rng.random((h, w)) < density
    cells[0, :] = cells[-1, :] = cells[:, 0] = cells[:, -1] = True
    return G.OccupancyGrid(cells, res)


def make_spec(grid, start, goal, **kw) -> G.EpisodeSpec:
    return G.EpisodeSpec(grid=grid, start=start, goal=goal, **kw)


# -- construction and file format ------------------------------------------------

def test_grid_invariants_enforced():
    with pytest.raises(ValueError, match="too small"):
        G.OccupancyGrid(np.ones((4, 4), dtype=bool), 0.1)
    with pytest.raises(ValueError, match="resolution"):
        G.OccupancyGrid(np.ones((8, 8), dtype=bool), 0.0)
    open_cells = np.zeros((8, 8), dtype=bool)
    with pytest.raises(ValueError, match="border"):
        G.OccupancyGrid(open_cells, 0.1)


def test_grid_text_roundtrip_bit_exact(tmp_path):
    rng = np.random.default_rng(0)
    g = random_grid(rng, 11, 17, res=0.07)
    text = g.to_text()
    g2 = G.OccupancyGrid.from_text(text)
    assert g2 == g
    assert g2.to_text() == text
    p = tmp_path / "w.grid"
    g.save(p)
    assert G.OccupancyGrid.load(p) == g


def test_grid_text_header_and_glyphs():
    g = empty_room(8, 9, 0.25)
    lines = g.to_text().splitlines()
    assert lines[0] == "OCCGRID 9 8 0.25"
    assert lines[1] == "#########"
    assert lines[2] == "#.......#"


# -- stepping ----------------------------------------------------------------------

def test_stop_within_radius_succeeds():
    g = empty_room()
    start = G.AgentPose(1.0, 1.0, 0.0)
    spec = make_spec(g, start, goal=(1.3, 1.0), success_radius=1.0)
    pose, obs, done, ev = G.step(spec, start, G.Action.STOP, 0)
    assert done and ev.stopped and ev.success
    assert pose == start


def test_stop_outside_radius_fails():
    g = empty_room(40, 40)
    start = G.AgentPose(1.0, 1.0, 0.0)
    spec = make_spec(g, start, goal=(3.0, 1.0), success_radius=1.0)
    _, _, done, ev = G.step(spec, start, G.Action.STOP, 0)
    assert done and ev.stopped and not ev.success


def test_forward_blocked_by_wall_is_collision():
    g = empty_room(res=0.1)
    # wall cell at column 12; stand 0.1 m before it facing +x
    g.cells[10, 12] = True
    pose = G.AgentPose(12 * 0.1 - 0.1, 10 * 0.1 + 0.05, 0.0)
    spec = make_spec(g, pose, goal=(0.5, 0.5))
    new_pose, _, done, ev = G.step(spec, pose, G.Action.MOVE_FORWARD, 0)
    assert ev.collision and not done
    assert new_pose == pose


def test_forward_moves_by_step():
    g = empty_room()
    pose = G.AgentPose(0.5, 1.0, 0.0)
    spec = make_spec(g, pose, goal=(1.5, 1.5))
    new_pose, _, _, ev = G.step(spec, pose, G.Action.MOVE_FORWARD, 0)
    assert not ev.collision
    assert new_pose.x == pytest.approx(0.75, abs=1e-12)
    assert new_pose.y == pytest.approx(1.0, abs=1e-12)


def test_turn_left_then_right_restores_pose():
    g = empty_room()
    spec = make_spec(g, G.AgentPose(1.0, 1.0, 0.0), goal=(1.5, 1.5))
    for h0 in [0.0, 1.234, 5.9, math.pi]:
        pose = G.AgentPose(1.0, 1.0, h0)
        p1, _, _, _ = G.step(spec, pose, G.Action.TURN_LEFT, 0)
        p2, _, _, _ = G.step(spec, p1, G.Action.TURN_RIGHT, 1)
        assert p2.x == pose.x and p2.y == pose.y
        assert p2.heading == pytest.approx(pose.heading, abs=1e-12)
        assert 0.0 <= p1.heading < 2 * math.pi


def test_timeout_terminates():
    g = empty_room()
    pose = G.AgentPose(1.0, 1.0, 0.0)
    spec = make_spec(g, pose, goal=(1.5, 1.5), max_steps=1)
    _, _, done, ev = G.step(spec, pose, G.Action.MOVE_FORWARD, 0)
    assert done and not ev.stopped


def test_step_index_past_max_rejected():
    g = empty_room()
    pose = G.AgentPose(1.0, 1.0, 0.0)
    spec = make_spec(g, pose, goal=(1.5, 1.5), max_steps=5)
    with pytest.raises(ValueError, match="max_steps"):
        G.step(spec, pose, G.Action.MOVE_FORWARD, 5)


def test_invalid_pose_raises_invalid_state():
    g = empty_room()
    spec = make_spec(g, G.AgentPose(1.0, 1.0, 0.0), goal=(1.5, 1.5))
    with pytest.raises(G.InvalidStateError):
        G.step(spec, G.AgentPose(0.05, 0.05, 0.0), G.Action.STOP, 0)  # border cell
    with pytest.raises(G.InvalidStateError):
        G.step(spec, G.AgentPose(-1.0, 1.0, 0.0), G.Action.STOP, 0)


def test_pose_cell_free_after_random_walk():
    rng = np.random.default_rng(1)
    g = random_grid(rng, density=0.2)
    free = np.argwhere(~g.cells)
    r, c = free[rng.integers(len(free))]
    pose = G.AgentPose(*g.cell_center(r, c), 0.0)
    spec = make_spec(g, pose, goal=g.cell_center(r, c), max_steps=10_000)
    for i in range(300):
        action = G.Action(int(rng.integers(1, 4)))  # never STOP
        pose, _, done, _ = G.step(spec, pose, action, i)
        rr, cc = g.cell_of(pose.x, pose.y)
        assert not g.cells[rr, cc]


def test_step_deterministic():
    g = empty_room()
    pose = G.AgentPose(0.77, 0.93, 1.1)
    spec = make_spec(g, pose, goal=(1.5, 1.5))
    a = G.step(spec, pose, G.Action.MOVE_FORWARD, 0)
    b = G.step(spec, pose, G.Action.MOVE_FORWARD, 0)
    assert a[0] == b[0]
    assert np.array_equal(a[1].rays, b[1].rays)


# -- depth rendering ------------------------------------------------------------

def test_center_ray_hits_wall_at_known_distance():
    g = empty_room(20, 20, res=0.1)
    # facing +x from x=0.55: wall column 19 begins at x=1.9
    pose = G.AgentPose(0.55, 1.0, 0.0)
    obs = G.render_depth(g, pose, n_rays=3, fov=0.5)
    assert obs.rays[1] == pytest.approx(1.9 - 0.55, abs=1e-9)


def test_diagonal_ray_distance():
    g = empty_room(20, 20, res=0.1)
    pose = G.AgentPose(1.0, 1.0, math.pi / 4)  # toward bottom-right corner
    obs = G.render_depth(g, pose, n_rays=3, fov=1e-6, max_range=5.0)
    # wall row starts at y=1.9: 9 cells down from y=1.0, at 45 deg
    assert obs.rays[1] == pytest.approx(0.9 * math.sqrt(2), abs=1e-9)


def test_adjacent_wall_reading_small():
    g = empty_room(20, 20, res=0.1)
    pose = G.AgentPose(0.15, 1.0, math.pi)  # wall face at x=0.1, 0.05 m away
    obs = G.render_depth(g, pose, n_rays=3, fov=1e-6)
    assert obs.rays[1] <= 0.1


def test_depth_matches_exhaustive_slab_oracle():
    rng = np.random.default_rng(2)
    checked = 0
    for _ in range(6):
        g = random_grid(rng, 24, 24, res=0.2)
        free = np.argwhere(~g.cells)
        for _ in range(20):
            r, c = free[rng.integers(len(free))]
            x = (c + rng.uniform(0.2, 0.8)) * g.resolution
            y = (r + rng.uniform(0.2, 0.8)) * g.resolution
            pose = G.AgentPose(x, y, rng.uniform(0, 2 * math.pi))
            obs = G.render_depth(g, pose, n_rays=5, fov=2.0, max_range=4.0)
            angles = G.ray_angles(pose.heading, 5, 2.0)
            for j in range(5):
                expect = ray_hit_exhaustive(g.cells, x, y, angles[j], 4.0, g.resolution)
                assert obs.rays[j] == pytest.approx(expect, abs=1e-9)
                checked += 1
    assert checked == 600


def test_depth_reading_bounds():
    rng = np.random.default_rng(3)
    g = random_grid(rng)
    free = np.argwhere(~g.cells)
    for _ in range(50):
        r, c = free[rng.integers(len(free))]
        pose = G.AgentPose(*g.cell_center(r, c), rng.uniform(0, 2 * math.pi))
        obs = G.render_depth(g, pose, n_rays=16, fov=math.pi / 2, max_range=2.0)
        assert (obs.rays > 0).all() and (obs.rays <= 2.0).all()


def test_depth_translation_invariance_whole_cells():
    # borders are kept beyond max_range so only the shifted blob is visible
    rng = np.random.default_rng(4)
    res = 0.25
    base = np.zeros((60, 60), dtype=bool)
    base[0, :] = base[-1, :] = base[:, 0] = base[:, -1] = True
    blob = rng.random((10, 10)) < 0.3
    base[20:30, 20:30] |= blob
    g1 = G.OccupancyGrid(base, res)
    shifted = np.zeros_like(base)
    shifted[0, :] = shifted[-1, :] = shifted[:, 0] = shifted[:, -1] = True
    shifted[20 + 7:30 + 7, 20 + 9:30 + 9] |= blob
    g2 = G.OccupancyGrid(shifted, res)
    pose1 = G.AgentPose(6.3, 8.1, 5.2)
    pose2 = G.AgentPose(6.3 + 9 * res, 8.1 + 7 * res, 5.2)
    o1 = G.render_depth(g1, pose1, n_rays=32, fov=2.5, max_range=2.0)
    o2 = G.render_depth(g2, pose2, n_rays=32, fov=2.5, max_range=2.0)
    assert np.allclose(o1.rays, o2.rays, atol=1e-9)


def test_render_depth_requires_three_rays():
    g = empty_room()
    with pytest.raises(ValueError, match="n_rays"):
        G.render_depth(g, G.AgentPose(1.0, 1.0, 0.0), n_rays=2)


# -- geodesic distance -------------------------------------------------------------

def test_geodesic_same_point_zero():
    g = empty_room()
    assert G.geodesic_distance(g, (1.0, 1.0), (1.0, 1.0)) == 0.0


def test_geodesic_straight_corridor():
    cells = np.ones((8, 20), dtype=bool)
    cells[4, 1:19] = False
    g = G.OccupancyGrid(cells, 0.1)
    a = g.cell_center(4, 3)
    b = g.cell_center(4, 15)
    assert G.geodesic_distance(g, a, b) == pytest.approx(12 * 0.1, abs=1e-12)


def test_geodesic_disconnected_is_inf():
    cells = np.ones((10, 10), dtype=bool)
    cells[2, 2] = False
    cells[7, 7] = False
    g = G.OccupancyGrid(cells, 0.1)
    assert G.geodesic_distance(g, g.cell_center(2, 2), g.cell_center(7, 7)) == math.inf


def test_geodesic_matches_oracles_on_random_grids():
    rng = np.random.default_rng(5)
    for _ in range(12):
        g = random_grid(rng, 24, 24, res=0.1, density=0.25)
        free = np.argwhere(~g.cells)
        (r1, c1), (r2, c2) = free[rng.choice(len(free), 2, replace=False)]
        mine = G.geodesic_distance(g, g.cell_center(r1, c1), g.cell_center(r2, c2))
        ora = dijkstra_grid(g.cells, (r1, c1), g.resolution)[r2, c2]
        orb = bellman_distance_field(g.cells, (r1, c1), g.resolution)[r2, c2]
        if math.isinf(mine):
            assert math.isinf(ora) and math.isinf(orb)
        else:
            assert mine == pytest.approx(ora, abs=1e-9)
            assert mine == pytest.approx(orb, abs=1e-9)


def test_geodesic_symmetry_and_triangle_inequality():
    rng = np.random.default_rng(6)
    g = random_grid(rng, 20, 20, density=0.15)
    free = np.argwhere(~g.cells)
    pts = [g.cell_center(r, c) for r, c in free[rng.choice(len(free), 6, replace=False)]]
    d = {}
    for i, a in enumerate(pts):
        for j, b in enumerate(pts):
            d[i, j] = G.geodesic_distance(g, a, b)
    for i in range(6):
        for j in range(6):
            assert d[i, j] == pytest.approx(d[j, i], abs=1e-9)
            for k in range(6):
                if all(math.isfinite(d[p]) for p in [(i, j), (i, k), (k, j)]):
                    assert d[i, j] <= d[i, k] + d[k, j] + 1e-9


# -- episode spec text ----------------------------------------------------------------

def test_episode_spec_text_roundtrip():
    g = empty_room(40, 40)
    spec = G.EpisodeSpec(grid=g, start=G.AgentPose(1.05, 2.15, 4.71238898038469),
                         goal=(3.017, 0.92), success_radius=1.0, max_steps=500,
                         sketch_path="sketches/w0_e0")
    text = G.episode_to_text(spec)
    spec2 = G.episode_from_text(text, g)
    assert spec2.start == spec.start
    assert spec2.goal == spec.goal
    assert spec2.max_steps == spec.max_steps
    assert spec2.sketch_path == spec.sketch_path
    assert G.episode_to_text(spec2) == text


def test_episode_validate_rejects_bad_goal():
    g = empty_room(40, 40)
    spec = G.EpisodeSpec(grid=g, start=G.AgentPose(1.0, 1.0, 0.0), goal=(0.05, 0.05))
    with pytest.raises(ValueError, match="free cell"):
        spec.validate()
    near = G.EpisodeSpec(grid=g, start=G.AgentPose(1.0, 1.0, 0.0), goal=(1.1, 1.0))
    with pytest.raises(ValueError, match="geodesic"):
        near.validate()
