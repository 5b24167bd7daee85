import numpy as np
import pytest

from sketchnav import autodiff as ad, goalpred as GP, nn, raydesc as R
from sketchnav.autodiff import Tensor


def small_cfg() -> GP.GoalPredictorConfig:
    return GP.GoalPredictorConfig(n_rays=4, d_model=8, heads=2)


def random_desc(rng, m1=3, m2=3, n=4, source=R.SKETCH) -> R.RayDescriptorSet:
    m = m1 * m2
    dist = rng.random((n, m))
    coords = R.lattice_coords(m1, m2).T
    return R.RayDescriptorSet(matrix=np.concatenate([dist, coords], axis=0),
                              m1=m1, m2=m2, n_rays=n, source=source)


def make_store(seed, cfg=None, dtype=np.float64):
    cfg = cfg or small_cfg()
    store = nn.ParameterStore(seed, dtype=dtype)
    GP.make_params(store, cfg)
    return store


# -- nearest keypoint ---------------------------------------------------------------

def test_nearest_keypoint_exact_hit():
    coords = R.lattice_coords(5, 5)
    assert GP.nearest_keypoint(tuple(coords[17]), coords) == 17


def test_nearest_keypoint_tie_breaks_to_smaller_index():
    coords = R.lattice_coords(5, 2)
    mid = (coords[3] + coords[4]) / 2.0     # equidistant between 3 and 4
    assert GP.nearest_keypoint(tuple(mid), coords) == 3


def test_nearest_keypoint_matches_exhaustive_scan():
    rng = np.random.default_rng(0)
    coords = R.lattice_coords(9, 9)
    for _ in range(500):
        g = rng.random(2)
        expect, best = None, np.inf
        for i, (x, y) in enumerate(coords):
            d = np.hypot(x - g[0], y - g[1])
            if d < best - 1e-15:
                best, expect = d, i
        assert GP.nearest_keypoint((g[0], g[1]), coords) == expect


def test_nearest_keypoint_empty_rejected():
    with pytest.raises(ValueError):
        GP.nearest_keypoint((0.5, 0.5), np.zeros((0, 2)))


# -- goal injection ------------------------------------------------------------------

def test_inject_zero_embedding_is_identity():
    rng = np.random.default_rng(1)
    desc = random_desc(rng)
    out = GP.inject_goal(desc, 4, np.zeros(6))
    assert np.array_equal(out.matrix, desc.matrix)


def test_inject_changes_exactly_one_column():
    rng = np.random.default_rng(2)
    desc = random_desc(rng)
    e_g = rng.normal(size=6)
    out = GP.inject_goal(desc, 2, e_g)
    diff = (out.matrix != desc.matrix).any(axis=0)
    assert diff.sum() == 1 and diff[2]
    assert np.allclose(out.matrix[:, 2], desc.matrix[:, 2] + e_g)


def test_inject_twice_doubles_offset():
    rng = np.random.default_rng(3)
    desc = random_desc(rng)
    e_g = rng.normal(size=6)
    twice = GP.inject_goal(GP.inject_goal(desc, 7, e_g), 7, e_g)
    assert np.allclose(twice.matrix[:, 7], desc.matrix[:, 7] + 2 * e_g)


def test_inject_bad_index():
    rng = np.random.default_rng(4)
    with pytest.raises(ValueError):
        GP.inject_goal(random_desc(rng), 9, np.zeros(6))


# -- prediction -----------------------------------------------------------------------

def test_uniform_weights_give_lattice_centroid():
    rng = np.random.default_rng(5)
    store = make_store(6)
    store["goal.mlp.w2"].data[:] = 0.0
    store["goal.mlp.b2"].data[:] = 0.0
    pred = GP.predict(random_desc(rng), 0, random_desc(rng, source=R.EXPLORATION),
                      store, small_cfg())
    assert np.allclose(pred.weights, 1.0 / 9, atol=1e-12)
    assert np.allclose(pred.goal, [0.5, 0.5], atol=1e-12)


def test_one_hot_weights_select_keypoint_coordinate():
    coords = R.lattice_coords(3, 3)
    for i in range(9):
        w = np.zeros(9)
        w[i] = 1.0
        assert np.allclose(w @ coords, coords[i])


def test_prediction_deterministic():
    rng = np.random.default_rng(7)
    store = make_store(8)
    ds = random_desc(rng)
    de = random_desc(rng, source=R.EXPLORATION)
    a = GP.predict(ds, 3, de, store, small_cfg())
    b = GP.predict(ds, 3, de, store, small_cfg())
    assert np.array_equal(a.weights, b.weights)
    assert np.array_equal(a.goal, b.goal)


def test_weights_simplex_and_goal_in_hull():
    rng = np.random.default_rng(9)
    cfg = small_cfg()
    for trial in range(30):
        store = make_store(100 + trial)
        ds = random_desc(rng)
        de = random_desc(rng, source=R.EXPLORATION)
        pred = GP.predict(ds, int(rng.integers(9)), de, store, cfg)
        assert (pred.weights >= 0).all()
        assert abs(pred.weights.sum() - 1.0) < 1e-6
        lo, hi = pred.coords.min(axis=0), pred.coords.max(axis=0)
        assert (pred.goal >= lo - 1e-12).all() and (pred.goal <= hi + 1e-12).all()


def test_sketch_row_permutation_equivariance():
    rng = np.random.default_rng(10)
    cfg = small_cfg()
    store = make_store(11)
    ds = random_desc(rng)
    de = random_desc(rng, source=R.EXPLORATION)
    i_star = 5
    base = GP.predict(ds, i_star, de, store, cfg)
    perm = rng.permutation(9)
    ds_perm = R.RayDescriptorSet(matrix=ds.matrix[:, perm].copy(), m1=3, m2=3,
                                 n_rays=4, source=R.SKETCH)
    i_star_perm = int(np.nonzero(perm == i_star)[0][0])
    out = GP.predict(ds_perm, i_star_perm, de, store, cfg)
    assert np.allclose(out.weights, base.weights, atol=1e-8)
    assert np.allclose(out.goal, base.goal, atol=1e-8)


def test_goal_index_changes_output_for_generic_parameters():
    rng = np.random.default_rng(12)
    cfg = small_cfg()
    differs = 0
    for trial in range(100):
        store = make_store(200 + trial)
        ds = random_desc(rng)
        de = random_desc(rng, source=R.EXPLORATION)
        a = GP.predict(ds, 1, de, store, cfg)
        b = GP.predict(ds, 7, de, store, cfg)
        if not np.allclose(a.weights, b.weights, atol=1e-12):
            differs += 1
    assert differs >= 99


def test_mismatched_descriptors_rejected():
    rng = np.random.default_rng(13)
    store = make_store(14)
    ds = random_desc(rng, 3, 3, 4)
    de = random_desc(rng, 2, 2, 4, source=R.EXPLORATION)
    with pytest.raises(ValueError, match="mismatch"):
        GP.predict(ds, 0, de, store, small_cfg())


def test_goal_gradients_pass_grad_check():
    rng = np.random.default_rng(15)
    cfg = small_cfg()
    store = make_store(16)
    ds = random_desc(rng)
    de = random_desc(rng, source=R.EXPLORATION)
    rows_s, onehot, rows_e, coords = GP.build_inputs(ds, 4, de)
    target = np.array([[0.3, 0.8]])

    def loss():
        w, g = GP.predict_t(Tensor(rows_s), Tensor(onehot), Tensor(rows_e),
                            Tensor(coords), store, cfg)
        return ad.sum_(ad.square(ad.add(g, -target)))

    report = nn.grad_check(loss, store.params, tolerance=1e-5,
                           max_coords_per_tensor=40)
    assert report.passed, str(report)
