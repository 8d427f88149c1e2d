import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from qcelevator.analysis import sample_shell
from qcelevator.elevator import (FiberSpec, analytic_qc_bound, apply_word, check_cylinder_correspondence,
                                 evaluate_Phi, evaluate_Phi_many, fiber_image_cloud, minimal_kappa)
from qcelevator.errors import BudgetExceeded, NeedsGeneratingMap
from qcelevator.ifs import Address, locate_addresses, point_from_address


def test_exterior_point(w1):
    img, err = evaluate_Phi(w1, None, [-1.0, -1.0])
    assert np.array_equal(img, w1.exterior(np.array([[-1.0, -1.0]]))[0])
    assert err == 0.0


def test_shell_point_needs_map(w1):
    with pytest.raises(NeedsGeneratingMap):
        evaluate_Phi(w1, None, sample_shell(w1, 1)[0])


def test_level_one_formula(w1, w1_gm):
    y = sample_shell(w1, 200, seed=3)
    for k in (1, 7, 12):
        x = w1.product.apply_index(k, y)
        img, err, depth = evaluate_Phi_many(w1, w1_gm, x)
        want = w1.target.apply_index(k, w1_gm(y))
        assert np.allclose(img, want, atol=1e-13)
        assert np.all(err == 0) and np.all(depth == 1)


def test_invariant_point_error(w1, w1_gm):
    ones = Address((1,), period=1)
    x, _ = point_from_address(w1.product, ones, 60)
    img, err = evaluate_Phi(w1, w1_gm, x, depth_limit=6)
    fixed, _ = point_from_address(w1.target, ones, 60)
    bound = 0.27 ** 6 * math.sqrt(13)
    assert err == pytest.approx(bound, rel=1e-12)
    assert np.linalg.norm(img - fixed) <= bound


def test_nesting_error_bound(w1, w1_gm):
    rng = np.random.default_rng(5)
    words = rng.integers(1, w1.product.count + 1, size=(20, 40))
    x = np.array([point_from_address(w1.product, Address(tuple(w)), 40)[0] for w in words])
    for L in (3, 5, 8):
        a, _, _ = evaluate_Phi_many(w1, w1_gm, x, depth_limit=L)
        b, _, _ = evaluate_Phi_many(w1, w1_gm, x, depth_limit=L + 1)
        assert np.max(np.linalg.norm(a - b, axis=1)) <= 0.27 ** L * w1.S.diam


def test_addresses_are_transported(w1, w1_gm):
    rng = np.random.default_rng(6)
    words = rng.integers(1, w1.product.count + 1, size=(30, 40))
    x = np.array([point_from_address(w1.product, Address(tuple(w)), 40)[0] for w in words])
    img, _, _ = evaluate_Phi_many(w1, w1_gm, x, depth_limit=10)
    got = locate_addresses(w1.target, img, 5)
    assert np.array_equal(got, words[:, :5])


def test_cylinder_correspondence(w1, w1_gm):
    rep = check_cylinder_correspondence(w1, w1_gm, max_depth=6, words=100, per_word=10)
    assert rep.ok and rep.points >= 900


def test_fiber_cloud(w1):
    cloud = fiber_image_cloud(w1, FiberSpec.parse("1|1"), 3)
    assert cloud.shape == (64, 2)
    assert np.all(w1.S.contains(cloud, closed=True))
    assert np.array_equal(fiber_image_cloud(w1, FiberSpec.parse("1|1"), 0), w1.S.center[None])


def test_fiber_clouds_share_geometry(w1):
    a = fiber_image_cloud(w1, FiberSpec.parse("1|1"), 3)
    b = fiber_image_cloud(w1, FiberSpec.parse("2,3|1"), 3)
    assert not np.allclose(a, b)
    da = np.sort(np.linalg.norm(a[:, None] - a[None], axis=2).ravel())
    db = np.sort(np.linalg.norm(b[:, None] - b[None], axis=2).ravel())
    assert np.allclose(da, db, atol=1e-12)


def test_fiber_cloud_covering(w1):
    k = 4
    cloud = fiber_image_cloud(w1, FiberSpec.parse("1|1"), k)
    cells = {tuple(r) for r in locate_addresses(w1.target, cloud, k)}
    assert len(cells) == 4 ** k


def test_cloud_budget(w1):
    with pytest.raises(BudgetExceeded):
        fiber_image_cloud(w1, FiberSpec.parse("1|1"), 12)


def test_w1_analytic_bound(w1):
    b = analytic_qc_bound(w1)
    assert b.rhoDom == pytest.approx(0.06, rel=1e-9)
    assert b.rhoTar == pytest.approx(0.008619, rel=1e-3)
    assert b.kappa == 3
    oracle = 2 * w1.S.diam / (0.27 ** 4 * b.rhoTar)
    assert b.bound == pytest.approx(oracle, rel=1e-12)
    assert b.bound == pytest.approx(1.574e5, rel=0.01)


def test_kappa_examples():
    assert minimal_kappa(math.log(0.5), math.log(0.021)) == 7
    assert minimal_kappa(math.log(0.1), math.log(0.06 / (2 * math.sqrt(2)))) == 3
    assert minimal_kappa(math.log(0.1), math.log(0.5)) == 2
    assert minimal_kappa(math.log(0.1), math.log(1.5)) == 1


@given(st.floats(0.01, 0.95), st.floats(1e-6, 0.9))
def test_kappa_is_minimal(d, ratio):
    k = minimal_kappa(math.log(d), math.log(ratio))
    assert k >= 1
    assert (k - 1) * math.log(d) < math.log(ratio)
    assert k == 1 or not (k - 2) * math.log(d) < math.log(ratio)


def test_apply_word_order(w1):
    x = np.array([[0.5, 0.5]])
    assert np.allclose(apply_word(w1.target, (2, 5), x), w1.target.apply_index(2, w1.target.apply_index(5, x)))
