import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import direct_objective
from sunaa.actset import SimplexLsqOptions
from sunaa.core import DataCube, ShapeError, SpectralLibrary
from sunaa.metrics import align_endmembers, aligned_sre_db
from sunaa.model import (SunaaConfig, a_step, b_step, drop_and_renormalize, fit, fit_blind_aa,
                         init_uniform, objective)
from sunaa.synth import SceneSpec, add_noise, generate_scene, make_library, rng_from_seed

# explicit-summation oracle on default_rng(1): D = random(10, 5), Y = random(10, 6), r = 2
UNIFORM_OBJECTIVE_10x5 = 5.442899095681945


def simplex_cols(rng, r, n):
    return rng.dirichlet(np.ones(r), size=n).T


def assert_simplex(x):
    assert x.min() >= -1e-12
    np.testing.assert_allclose(x.sum(axis=0), 1.0, atol=1e-9)


def test_init_uniform():
    b, a = init_uniform(4, 2, 3)
    assert b.b.shape == (4, 2) and np.all(b.b == 0.25)
    assert a.a.shape == (2, 3) and np.all(a.a == 0.5)
    b1, a1 = init_uniform(1, 1, 1)
    assert b1.b.tolist() == [[1.0]] and a1.a.tolist() == [[1.0]]
    assert np.all(b.b.sum(axis=0) == 1.0) and np.all(a.a.sum(axis=0) == 1.0)
    b, a = init_uniform(7, 3, 5)
    np.testing.assert_allclose(b.b.sum(axis=0), 1.0, rtol=0, atol=1e-15)
    np.testing.assert_allclose(a.a.sum(axis=0), 1.0, rtol=0, atol=1e-15)
    with pytest.raises(ValueError):
        init_uniform(0, 1, 1)


def test_objective_examples():
    rng = np.random.default_rng(2)
    d, b, a = rng.random((6, 4)), simplex_cols(rng, 4, 2), simplex_cols(rng, 2, 5)
    y = d @ b @ a
    assert objective(y, d, b, a) == pytest.approx(0.0, abs=1e-25)
    g = rng.normal(size=y.shape)
    g *= 2.0 / np.linalg.norm(g)
    assert objective(y + g, d, b, a) == pytest.approx(4.0, rel=1e-12)


def test_objective_uniform_init_frozen():
    rng = np.random.default_rng(1)
    d, y = rng.random((10, 5)), rng.random((10, 6))
    b, a = init_uniform(5, 2, 6)
    val = objective(y, d, b, a)
    assert val == pytest.approx(UNIFORM_OBJECTIVE_10x5, rel=1e-12)
    assert val == pytest.approx(direct_objective(y, d, b.b, a.a), rel=1e-12)


def test_objective_shape_mismatch():
    with pytest.raises(ShapeError):
        objective(np.ones((3, 4)), np.ones((2, 5)), np.ones((5, 1)), np.ones((1, 4)))


def test_a_step_recovers_abundances():
    rng = np.random.default_rng(3)
    d = rng.random((20, 8))
    idx = [1, 4, 6]
    b = np.zeros((8, 3))
    b[idx, range(3)] = 1.0
    a_true = simplex_cols(rng, 3, 40)
    y = d @ b @ a_true
    a = a_step(y, d, b)
    np.testing.assert_allclose(a, a_true, atol=1e-8)


def test_a_step_single_endmember():
    rng = np.random.default_rng(4)
    d = rng.random((5, 3))
    a = a_step(rng.random((5, 7)), d, np.full((3, 1), 1 / 3))
    assert np.all(a == 1.0)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_a_step_does_not_increase_objective(seed):
    rng = np.random.default_rng(seed)
    d, y = rng.random((12, 9)), rng.random((12, 15))
    b, warm = simplex_cols(rng, 9, 3), simplex_cols(rng, 3, 15)
    a = a_step(y, d, b, warm=warm)
    assert_simplex(a)
    assert objective(y, d, b, a) <= objective(y, d, b, warm) * (1 + 1e-12)


def test_b_step_skips_dead_row():
    rng = np.random.default_rng(5)
    d, y = rng.random((10, 6)), rng.random((10, 12))
    b = simplex_cols(rng, 6, 3)
    a = simplex_cols(rng, 3, 12)
    a[2] = 0.0
    a /= a.sum(axis=0)
    b_new = b_step(y, d, b, a)
    assert b_new[:, 2].tobytes() == np.asfortranarray(b)[:, 2].tobytes()
    assert not np.allclose(b_new[:, 0], b[:, 0])


def test_b_step_identity_is_stationary():
    rng = np.random.default_rng(6)
    d = rng.random((5, 5)) + np.eye(5)
    a = simplex_cols(rng, 5, 30)
    y = d @ a
    b_new = b_step(y, d, np.eye(5), a)
    np.testing.assert_allclose(b_new, np.eye(5), atol=1e-8)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_b_step_columnwise_descent(seed):
    rng = np.random.default_rng(seed)
    d, y = rng.random((15, 10)), rng.random((15, 25))
    b, a = simplex_cols(rng, 10, 4), simplex_cols(rng, 4, 25)
    objs = [direct_objective(y, d, b, a) if seed % 5 == 0 else objective(y, d, b, a)]

    def hook(j, bj):
        assert_simplex(bj)
        objs.append(objective(y, d, bj, a))

    b_step(y, d, b, a, on_column=hook)
    assert len(objs) == 5
    for prev, cur in zip(objs, objs[1:]):
        assert cur <= prev + 1e-12 * max(1.0, prev)


def small_problem(seed=0, p=20, m=12, r=3, h=6, w=6):
    lib = make_library(m, p, seed=seed)
    idx = rng_from_seed(seed).choice(m, r, replace=False)
    return lib, generate_scene(lib, SceneSpec(h, w, idx))


def test_fit_single_iteration_is_a_then_b():
    lib, gt = small_problem()
    res = fit(gt.cube, lib, SunaaConfig(r=3, outer_iters=1))
    b0, a0 = init_uniform(lib.size, 3, gt.cube.pixels)
    a = a_step(gt.cube.y, lib.d, b0, warm=a0)
    b = b_step(gt.cube.y, lib.d, b0, a)
    assert res.a.a.tobytes() == np.asfortranarray(a).tobytes()
    assert res.b.b.tobytes() == np.asfortranarray(b).tobytes()
    assert res.iterations_run == 1 and len(res.objective_trace) == 1


def test_fit_noiseless_exact_recovery():
    lib = make_library(30, 50, seed=7)
    idx = rng_from_seed(100).choice(30, 3, replace=False)
    gt = generate_scene(lib, SceneSpec(12, 12, idx))
    res = fit(gt.cube, lib, SunaaConfig(r=3, outer_iters=200))
    ynorm2 = np.sum(gt.cube.y ** 2)
    assert res.final_objective <= 1e-10 * ynorm2
    al = align_endmembers(gt.endmembers, res.e)
    assert aligned_sre_db(gt.x_true.a, res.a.a, al) >= 25


def test_fit_invariants():
    lib, gt = small_problem(seed=3)
    y = add_noise(gt.cube, 30, seed=1)
    res = fit(y, lib, SunaaConfig(r=3, outer_iters=40))
    tr = res.objective_trace
    for prev, cur in zip(tr, tr[1:]):
        assert cur <= prev * (1 + 1e-8)
    assert_simplex(res.a.a)
    assert_simplex(res.b.b)
    assert np.abs(res.e - lib.d @ res.b.b).max() <= 1e-10
    if res.converged_early:
        assert (tr[-2] - tr[-1]) < 1e-8 * tr[-2]
    perm = rng_from_seed(4).permutation(3)
    base = objective(y, lib.d, res.b.b, res.a.a)
    assert objective(y, lib.d, res.b.b[:, perm], res.a.a[perm]) == pytest.approx(base, rel=1e-12)


def test_fit_early_stop_flag():
    lib, gt = small_problem(seed=1)
    res = fit(gt.cube, lib, SunaaConfig(r=3, outer_iters=500, rel_obj_tol=1e-3))
    assert res.converged_early and res.iterations_run < 500
    tr = res.objective_trace
    assert tr[-2] <= 0 or (tr[-2] - tr[-1]) < 1e-3 * tr[-2]


def test_fit_rejects_bad_config():
    lib, gt = small_problem()
    with pytest.raises(ValueError):
        fit(gt.cube, lib, SunaaConfig(r=lib.size + 1))
    with pytest.raises(ShapeError):
        fit(gt.cube, SpectralLibrary(np.ones((3, 4))), SunaaConfig(r=2))
    for bad in (dict(r=0), dict(r=1, outer_iters=0), dict(r=1, rel_obj_tol=-1)):
        with pytest.raises(ValueError):
            SunaaConfig(**bad)


def test_fit_threads_do_not_change_result():
    lib, gt = small_problem(seed=2, h=10, w=10)
    y = add_noise(gt.cube, 25, seed=0)
    r1 = fit(y, lib, SunaaConfig(r=3, outer_iters=15, threads=1))
    r4 = fit(y, lib, SunaaConfig(r=3, outer_iters=15, threads=4))
    assert r1.a.a.tobytes() == r4.a.a.tobytes()
    assert r1.b.b.tobytes() == r4.b.b.tobytes()


def test_blind_aa_exact_on_repeated_points():
    rng = np.random.default_rng(8)
    pts = rng.random((6, 3))
    y = np.repeat(pts, 4, axis=1)
    res = fit_blind_aa(DataCube(y, 3, 4), SunaaConfig(r=3, outer_iters=100))
    assert res.final_objective <= 1e-20
    assert res.b.b.shape == (12, 3)


def test_blind_aa_is_fit_on_data():
    rng = np.random.default_rng(9)
    y = rng.random((10, 30))
    cfg = SunaaConfig(r=3, outer_iters=20)
    blind = fit_blind_aa(y, cfg)
    ref = fit(DataCube.flat(y), SpectralLibrary(y), cfg)
    assert blind.a.a.tobytes() == ref.a.a.tobytes()
    tr = blind.objective_trace
    for prev, cur in zip(tr, tr[1:]):
        assert cur <= prev * (1 + 1e-8)


def test_drop_and_renormalize():
    a = np.array([[0.5, 0.0, 0.2], [0.25, 1.0, 0.0], [0.25, 0.0, 0.8]])
    out = drop_and_renormalize(a, 1)
    np.testing.assert_allclose(out, [[2 / 3, 0.5, 0.2], [1 / 3, 0.5, 0.8]], atol=1e-15)
    with pytest.raises(IndexError):
        drop_and_renormalize(a, 3)


def test_uncertified_solves_are_counted():
    lib, gt = small_problem(seed=5)
    cfg = SunaaConfig(r=3, outer_iters=2, solver_opts=SimplexLsqOptions(max_inner_iters=1))
    res = fit(gt.cube, lib, cfg)
    assert res.uncertified_solves > 0
