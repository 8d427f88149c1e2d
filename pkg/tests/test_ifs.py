import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qcelevator.errors import BadAddress, InfeasibleParams, SeparationViolation
from qcelevator.geometry import Box, SignedPermutation, Similarity
from qcelevator.ifs import (Address, ExplicitSystem, build_rect_packing, locate_addresses, point_from_address,
                            similarity_dimension, verify_strong_separation)


def test_target_packing_example():
    sys = build_rect_packing(2, 0.27, 12)
    assert sys.box.hi[0] == pytest.approx(math.sqrt(12), rel=1e-12)
    b = sys.image_box(1)
    assert b.extents[0] == pytest.approx(0.27, rel=1e-12)
    assert b.extents[1] == pytest.approx(0.27 * math.sqrt(12), rel=1e-12)
    assert sys.gap == pytest.approx((math.sqrt(12) - 12 * 0.27) / 13, rel=1e-12)


def test_interval_packing_example():
    sys = build_rect_packing(1, 0.1, 3)
    got = [(sys.image_box(k).lo[0], sys.image_box(k).hi[0]) for k in (1, 2, 3)]
    assert np.allclose(got, [(0.175, 0.275), (0.45, 0.55), (0.725, 0.825)], atol=1e-12)


def test_packing_boundary_infeasible():
    with pytest.raises(InfeasibleParams):
        build_rect_packing(2, 0.5, 4)


def test_w1_margins(w1):
    assert w1.cert_dom.rho == pytest.approx(0.06, rel=1e-12)
    assert w1.cert_tar.rho == pytest.approx(min((math.sqrt(12) - 3.24) / 13, (1 - 0.27 * math.sqrt(12)) / 2) / 2,
                                            rel=1e-12)
    assert w1.cert_tar.rho == pytest.approx(0.008619, abs=1e-6)


def test_w1_hole_layout(w1):
    holes = [w1.product.image_box(k) for k in range(1, 13)]
    assert all(np.allclose(h.extents, [0.1, 0.1]) for h in holes)
    xs = sorted({round(h.lo[0], 9) for h in holes})
    ys = sorted({round(h.lo[1], 9) for h in holes})
    assert len(xs) == 3 and len(ys) == 4
    tg = [w1.target.image_box(k) for k in range(1, 13)]
    assert all(np.allclose(b.extents, [0.27, 0.93531], atol=1e-5) for b in tg)
    assert len({round(b.lo[1], 12) for b in tg}) == 1


def test_overlapping_maps_witness():
    box = Box((0.0, 0.0), (1.0, 1.0))
    rot = SignedPermutation.identity(2)
    sys = ExplicitSystem([Similarity(0.4, rot, (0.1, 0.1)), Similarity(0.4, rot, (0.3, 0.3))], box)
    with pytest.raises(SeparationViolation) as exc:
        verify_strong_separation(sys)
    assert exc.value.witness == (1, 2)


def test_moran_examples():
    box = Box((0.0,), (1.0,))
    rot = SignedPermutation.identity(1)
    cantor = ExplicitSystem([Similarity(1 / 3, rot, (0.0,)), Similarity(1 / 3, rot, (2 / 3,))], box)
    assert similarity_dimension(cantor) == pytest.approx(math.log(2) / math.log(3), rel=1e-12)
    single = ExplicitSystem([Similarity(0.3, rot, (0.1,))], box)
    assert similarity_dimension(single) == 0


def test_base_dimension(w1):
    assert similarity_dimension(w1.base) == pytest.approx(math.log(3) / math.log(10), rel=1e-12)


def test_fiber_point_example(w1):
    x, err = point_from_address(w1.fiber, Address((1,), 1), 3)
    want = 0.5
    for _ in range(3):
        want = 0.1 * want + 0.12
    assert x[0] == pytest.approx(want, abs=1e-12)
    assert x[0] == pytest.approx(0.1337, abs=1e-12)
    assert err == pytest.approx(1e-3, rel=1e-12)


def test_depth_zero_is_centre(w1):
    x, err = point_from_address(w1.target, Address((1,), 1), 0)
    assert np.allclose(x, w1.S.center)
    assert err == pytest.approx(w1.S.diam)


@pytest.mark.parametrize("k", [1, 5, 12])
def test_nested_target_points(w1, k):
    box = w1.target.image_box(k)
    for depth in range(1, 7):
        x, _ = point_from_address(w1.target, Address((k,), 1), depth)
        assert box.contains(x, closed=True)


def test_bad_symbols(w1):
    with pytest.raises(BadAddress):
        point_from_address(w1.fiber, Address((5,)), 1)
    with pytest.raises(BadAddress):
        Address.parse("")


def test_w2_symbolic_indexing(w2):
    Mp = w2.fiber.count
    assert Mp == w2.params.Mprime
    for k in (1, 2, Mp):
        b = w2.fiber.image_box(k)
        assert 0 < b.lo[0] < b.hi[0] < 1
    assert w2.fiber.image_box(2).lo[0] > w2.fiber.image_box(1).hi[0]
    assert w2.product.count == w2.params.M * Mp


def test_crowded_target_rejected(w1_params):
    from dataclasses import replace
    bad = replace(w1_params, t=0.3, t_ln=math.log(0.3))
    from qcelevator.ifs import build_instance_systems
    with pytest.raises(InfeasibleParams):
        build_instance_systems(bad)


@st.composite
def packings(draw):
    n = draw(st.integers(1, 4))
    r = draw(st.floats(0.05, 0.45))
    kmax = max(1, math.ceil(r ** -n) - 1)
    K = draw(st.integers(1, min(kmax, 200)))
    return n, r, K


@settings(max_examples=80, deadline=None)
@given(packings())
def test_packings_separate(case):
    n, r, K = case
    if not math.log(K) < -n * math.log(r):
        return
    sys = build_rect_packing(n, r, K)
    assert sys.chain_holds()
    cert = verify_strong_separation(sys)
    assert cert.rho >= 1e-15 * sys.box.diam
    assert sys.rot.det == 1
    assert K * r ** similarity_dimension(sys) == pytest.approx(1.0, rel=1e-12) or K == 1


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(1, 12), min_size=1, max_size=6))
def test_address_round_trip(word):
    from qcelevator.ifs import build_instance_systems
    from qcelevator.params import check_direct_params
    inst = _W1_CACHE.setdefault("w1", build_instance_systems(check_direct_params(2, 2.1, 0.1, 3, 4, 0.27)))
    x, _ = point_from_address(inst.target, Address(tuple(word)), len(word))
    got = locate_addresses(inst.target, x[None], len(word))[0]
    assert tuple(got) == tuple(word)


_W1_CACHE = {}


def test_product_law(w1):
    rng = np.random.default_rng(3)
    x = rng.random((1000, 2))
    for i in range(1, 4):
        for j in range(1, 5):
            k = int(w1.product.index(i, j))
            got = w1.product.apply_index(k, x)
            want = np.column_stack([w1.base.apply_index(i, x[:, :1])[:, 0], w1.fiber.apply_index(j, x[:, 1:])[:, 0]])
            assert np.array_equal(got, want)
