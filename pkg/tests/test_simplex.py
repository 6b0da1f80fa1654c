import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from compostar.exceptions import (
    DimensionMismatch,
    DimensionTooSmall,
    InvalidPartition,
    NonFiniteInput,
    NonPositivePart,
)
from compostar.simplex import (
    aitchison_dist,
    aitchison_inner,
    aitchison_norm,
    build_basis,
    check_composition,
    closure,
    clr,
    clr_inv,
    default_partition,
    ilr,
    ilr_inv,
    neutral,
    perturb,
    perturb_inv,
    power,
    replace_zeros,
)

from oracles import aitchison_dist_direct

MODES = ("helmert", "balance", "pivot")


@st.composite
def compositions(draw, D=None, count=1):
    if D is None:
        D = draw(st.integers(2, 7))
    logs = draw(arrays(np.float64, (count, D), elements=st.floats(-8, 8)))
    x = np.exp(logs)
    return closure(x)


@st.composite
def comp_pair(draw):
    D = draw(st.integers(2, 7))
    return draw(compositions(D)), draw(compositions(D))


# -- closure and operations ------------------------------------------------


@pytest.mark.parametrize(
    "v, expected",
    [
        ([1, 1, 2], [0.25, 0.25, 0.5]),
        ([0.3, 0.7], [0.3, 0.7]),
        ([5, 5, 5, 5], [0.25] * 4),
    ],
)
def test_closure_examples(v, expected):
    np.testing.assert_allclose(closure(v), expected, rtol=0, atol=1e-15)


def test_closure_kappa():
    np.testing.assert_allclose(closure([1, 3], kappa=100), [25, 75])


def test_closure_errors():
    with pytest.raises(NonPositivePart):
        closure([1.0, 0.0, 2.0])
    with pytest.raises(NonPositivePart):
        closure([1.0, -1.0])
    with pytest.raises(DimensionTooSmall):
        closure([1.0])
    with pytest.raises(NonFiniteInput):
        closure([1.0, np.nan])


def test_check_composition_tolerance():
    check_composition([0.3, 0.7 + 1e-12])
    with pytest.raises(Exception):
        check_composition([0.3, 0.7 + 1e-6])


def test_perturb_examples():
    x = closure([0.1, 0.3, 0.6])
    np.testing.assert_allclose(perturb(x, neutral(3)), x, atol=1e-15)
    np.testing.assert_allclose(perturb(x, power(-1, x)), neutral(3), atol=1e-15)
    np.testing.assert_allclose(perturb([0.2, 0.8], [0.8, 0.2]), [0.5, 0.5], atol=1e-15)
    np.testing.assert_allclose(perturb_inv(x, x), neutral(3), atol=1e-15)
    with pytest.raises(DimensionMismatch):
        perturb([0.5, 0.5], [0.2, 0.3, 0.5])


def test_power_examples():
    x = closure([0.1, 0.3, 0.6])
    np.testing.assert_allclose(power(1, x), x, atol=1e-15)
    np.testing.assert_allclose(power(0, x), neutral(3), atol=1e-15)
    np.testing.assert_allclose(power(2, [0.5, 0.5]), [0.5, 0.5], atol=1e-15)


def test_inner_product_examples():
    y = closure([0.1, 0.2, 0.7])
    assert aitchison_inner(neutral(3), y) == pytest.approx(0.0, abs=1e-15)
    # direct double sum: 2 * log(7/3)^2 / (2 * 2)
    assert aitchison_inner([0.7, 0.3], [0.7, 0.3]) == pytest.approx(np.log(7 / 3) ** 2 / 2, rel=1e-14)
    # the commonly quoted value 0.359 is good to three decimals
    assert aitchison_inner([0.7, 0.3], [0.7, 0.3]) == pytest.approx(0.359, abs=5e-4)
    assert aitchison_norm(neutral(4)) == 0.0


def test_clr_examples():
    x = np.array([0.25, 0.25, 0.5])
    logs = np.log(x)
    np.testing.assert_allclose(clr(x), logs - logs.mean(), atol=1e-15)
    np.testing.assert_allclose(clr(neutral(5)), 0.0, atol=1e-15)
    np.testing.assert_allclose(clr_inv(clr(x)), x, atol=1e-15)


# -- bases -----------------------------------------------------------------


def test_helmert_d2():
    V = build_basis(2, "helmert").contrast
    np.testing.assert_allclose(V, [[1 / np.sqrt(2), -1 / np.sqrt(2)]], atol=1e-15)


def test_helmert_rows_explicit():
    V = build_basis(4, "helmert").contrast
    for k in range(1, 4):
        row = np.zeros(4)
        row[:k] = 1.0
        row[k] = -k
        np.testing.assert_allclose(V[k - 1], row / np.sqrt(k * (k + 1)), atol=1e-15)


def test_pivot_first_coordinate_formula():
    x = closure([0.2, 0.5, 0.3])
    z = ilr(x, build_basis(3, "pivot"))
    assert z[0] == pytest.approx(np.sqrt(2 / 3) * np.log(x[0] / np.sqrt(x[1] * x[2])), abs=1e-14)


def test_balance_coordinates_are_group_logratios():
    # ((0, 1), (2, 3)): first balance contrasts {0,1} against {2,3}
    x = closure([0.1, 0.2, 0.3, 0.4])
    b = build_basis(4, "balance", ((0, 1), (2, 3)))
    z = ilr(x, b)
    g = lambda idx: np.exp(np.mean(np.log(x[list(idx)])))  # noqa: E731
    assert z[0] == pytest.approx(np.sqrt(4 / 4) * np.log(g((0, 1)) / g((2, 3))), abs=1e-14)
    assert z[1] == pytest.approx(np.sqrt(1 / 2) * np.log(x[0] / x[1]), abs=1e-14)
    assert z[2] == pytest.approx(np.sqrt(1 / 2) * np.log(x[2] / x[3]), abs=1e-14)


def test_default_partition_is_balanced():
    assert default_partition(4) == ((0, 1), (2, 3))
    assert default_partition(2) == (0, 1)
    b = build_basis(3, "balance")
    assert b.partition == default_partition(3)


@pytest.mark.parametrize(
    "partition",
    [((0, 1), 1), ((0, 1), (2, 4)), (0, 1), (((0, 1), 2),)],
)
def test_invalid_partition(partition):
    with pytest.raises(InvalidPartition):
        build_basis(3, "balance", partition)


@pytest.mark.parametrize("mode", MODES)
@pytest.mark.parametrize("D", range(2, 9))
def test_basis_invariants(mode, D):
    b = build_basis(D, mode)
    V = b.contrast
    assert V.shape == (D - 1, D)
    np.testing.assert_allclose(V @ V.T, np.eye(D - 1), atol=1e-12)
    np.testing.assert_allclose(V.T @ V, np.eye(D) - 1 / D, atol=1e-12)
    np.testing.assert_allclose(V.sum(axis=1), 0.0, atol=1e-12)
    assert not V.flags.writeable


def test_basis_rejects_small_d():
    with pytest.raises(DimensionTooSmall):
        build_basis(1)


# -- ilr -------------------------------------------------------------------


def test_ilr_logit_d2():
    z = 0.37
    assert ilr([z, 1 - z])[0] == pytest.approx(np.log(z / (1 - z)) / np.sqrt(2), abs=1e-14)


def test_ilr_neutral_and_inverse_zero():
    for D in range(2, 7):
        np.testing.assert_allclose(ilr(neutral(D)), 0.0, atol=1e-15)
        np.testing.assert_allclose(ilr_inv(np.zeros(D - 1)), neutral(D), atol=1e-15)


def test_ilr_inv_large_magnitude():
    for mode in MODES:
        b = build_basis(4, mode)
        for y in (np.full(3, 30.0), np.array([-30.0, 30.0, 30.0]), np.array([400.0, -250.0, 0.0])):
            x = ilr_inv(y, b, kappa=7.0)
            assert np.all(x > 0)
            assert x.sum() == pytest.approx(7.0, rel=1e-12)


def test_ilr_dimension_mismatch():
    with pytest.raises(DimensionMismatch):
        ilr(closure([1, 2, 3]), build_basis(4))


def test_ilr_batched_shapes():
    x = closure(np.random.default_rng(1).random((5, 4, 3)) + 0.1)
    z = ilr(x)
    assert z.shape == (5, 4, 2)
    np.testing.assert_allclose(ilr_inv(z), x, atol=1e-14)


@settings(max_examples=200, deadline=None)
@given(comp_pair())
def test_isometry(pair):
    x, y = pair[0][0], pair[1][0]
    for mode in MODES:
        b = build_basis(len(x), mode)
        assert abs(aitchison_dist(x, y) - np.linalg.norm(ilr(x, b) - ilr(y, b))) < 1e-10
        assert abs(aitchison_inner(x, y) - ilr(x, b) @ ilr(y, b)) < 1e-10 * max(1.0, abs(aitchison_inner(x, y)))
    assert abs(aitchison_dist(x, y) - aitchison_dist_direct(x, y)) < 1e-10


@settings(max_examples=200, deadline=None)
@given(comp_pair(), st.floats(-3, 3))
def test_linearity(pair, xi):
    x, y = pair[0][0], pair[1][0]
    for mode in MODES:
        b = build_basis(len(x), mode)
        np.testing.assert_allclose(ilr(perturb(x, y), b), ilr(x, b) + ilr(y, b), atol=1e-10)
        np.testing.assert_allclose(ilr(power(xi, x), b), xi * ilr(x, b), atol=1e-10)


@settings(max_examples=200, deadline=None)
@given(compositions())
def test_clr_ilr_consistency(x):
    x = x[0]
    for mode in MODES:
        V = build_basis(len(x), mode).contrast
        np.testing.assert_allclose(ilr(x, build_basis(len(x), mode)), clr(x) @ V.T, atol=1e-12)
        np.testing.assert_allclose(clr(x), ilr(x, build_basis(len(x), mode)) @ V, atol=1e-12)
    assert abs(clr(x).sum()) < 1e-12 * max(1.0, np.abs(clr(x)).max())


@settings(max_examples=200, deadline=None)
@given(compositions())
def test_round_trip_composition(x):
    x = x[0]
    for mode in MODES:
        b = build_basis(len(x), mode)
        np.testing.assert_allclose(ilr_inv(ilr(x, b), b), x, rtol=1e-9, atol=1e-12)


@settings(max_examples=200, deadline=None)
@given(st.integers(2, 7).flatmap(lambda D: arrays(np.float64, D - 1, elements=st.floats(-10, 10))))
def test_round_trip_coordinates(y):
    for mode in MODES:
        b = build_basis(len(y) + 1, mode)
        np.testing.assert_allclose(ilr(ilr_inv(y, b), b), y, atol=1e-12)


@settings(max_examples=100, deadline=None)
@given(comp_pair())
def test_basis_change_is_orthogonal(pair):
    x, y = pair[0][0], pair[1][0]
    D = len(x)
    b1, b2 = build_basis(D, "helmert"), build_basis(D, "pivot")
    R = b2.contrast @ b1.contrast.T
    np.testing.assert_allclose(R @ R.T, np.eye(D - 1), atol=1e-12)
    np.testing.assert_allclose(ilr(x, b2), R @ ilr(x, b1), atol=1e-10)
    d1 = np.linalg.norm(ilr(x, b1) - ilr(y, b1))
    d2 = np.linalg.norm(ilr(x, b2) - ilr(y, b2))
    assert abs(d1 - d2) < 1e-10


@settings(max_examples=100, deadline=None)
@given(st.integers(2, 6).flatmap(lambda D: compositions(D, count=3)))
def test_distance_is_metric(xyz):
    x, y, z = xyz
    assert aitchison_dist(x, x) == pytest.approx(0.0, abs=1e-12)
    assert aitchison_dist(x, y) == pytest.approx(aitchison_dist(y, x), abs=1e-12)
    assert aitchison_dist(x, z) <= aitchison_dist(x, y) + aitchison_dist(y, z) + 1e-10


# -- zeros -----------------------------------------------------------------


def test_replace_zeros():
    x, mask = replace_zeros([[0.5, 0.0, 0.5], [0.2, 0.3, 0.5]], delta=1e-6)
    assert mask.tolist() == [[False, True, False], [False, False, False]]
    assert np.all(x > 0)
    np.testing.assert_allclose(x.sum(axis=1), 1.0)
    np.testing.assert_allclose(x[1], [0.2, 0.3, 0.5])


@settings(max_examples=100, deadline=None)
@given(
    arrays(np.float64, (4, 5), elements=st.sampled_from([0.0, 1e-300, 0.1, 1.0, 5.0, 1e6])),
    st.floats(1e-12, 1e-2),
)
def test_replace_zeros_never_nonfinite(raw, delta):
    raw[:, 0] = 1.0  # every row needs a positive part
    x, _ = replace_zeros(raw, delta)
    assert np.all(np.isfinite(ilr(x)))
