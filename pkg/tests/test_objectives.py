# file: tests/test_objectives.py
import numpy as np
import pytest

from app.core.errors import DimensionMismatchError
from app.services.objective_service import (
    PRINTED_TOY_LIPSCHITZ,
    TOY_JUNCTION,
    TOY_LIPSCHITZ,
    StackedObjective,
    decentralized_least_squares,
    gradient_check,
    junction_report,
    least_squares_optimum,
    lipschitz_check,
    paper_toy_problem,
    quadratic,
    stacked_quadratic,
    toy_pieces,
    toy_stationary_points,
    zero_objective,
)


def test_toy_sum_at_origin():
    obj = paper_toy_problem()
    assert obj.n == 3 and obj.dimension == 1
    assert obj.lipschitz == 1288.0
    assert obj.consensual_value(np.zeros(1)) == pytest.approx(-16.0)


def test_toy_stationary_points():
    points = toy_stationary_points()
    assert len(points) == 3
    assert points[-1] == pytest.approx(2.6174, abs=1e-3)
    obj = paper_toy_problem()
    for u in points:
        slope = sum(a.gradient(np.array([u]))[0] for a in obj.agents)
        assert abs(slope) < 1e-8
    # global minimizer is the rightmost stationary point
    values = [obj.consensual_value(np.array([u])) for u in points]
    assert int(np.argmin(values)) == 2


def test_continuous_toy_has_no_junction_gaps():
    for gap in junction_report("continuous"):
        assert gap.value_gap == pytest.approx(0.0, abs=1e-9)
        assert gap.slope_gap == pytest.approx(0.0, abs=1e-9)


def test_printed_toy_jumps_at_left_junction():
    gaps = {(g.agent, g.point): g for g in junction_report("printed")}
    assert gaps[(0, -10.0)].value_gap == pytest.approx(-640.0)
    assert gaps[(2, -10.0)].value_gap == pytest.approx(-3968.0)
    assert gaps[(1, -10.0)].value_gap == pytest.approx(0.0, abs=1e-9)
    assert all(g.slope_gap == pytest.approx(0.0, abs=1e-9) for g in gaps.values())


def test_variants_share_gradients(rng):
    smooth, printed = paper_toy_problem("continuous"), paper_toy_problem("printed")
    x = rng.uniform(-30.0, 30.0, size=(3, 1))
    np.testing.assert_array_equal(smooth.stacked_gradient(x), printed.stacked_gradient(x))


def test_toy_linear_extensions():
    obj = paper_toy_problem()
    g = obj.stacked_gradient(np.array([[50.0], [50.0], [-50.0]]))
    np.testing.assert_array_equal(g[:, 0], [4248.0, 1620.0, 288.0])


def test_toy_gradients_and_constants(rng):
    obj = paper_toy_problem()
    for agent, lip in zip(obj.agents, TOY_LIPSCHITZ):
        assert gradient_check(agent, rng, samples=200) < 1e-5
        assert lipschitz_check(agent, rng, samples=200) <= 1.0 + 1e-9
        assert agent.lipschitz == lip


def test_toy_lipschitz_constants_are_curvature_maxima():
    grid = np.linspace(-TOY_JUNCTION, TOY_JUNCTION, 20001)
    peaks = [float(np.max(np.abs(piece.core.deriv(2)(grid)))) for piece in toy_pieces()]
    assert peaks == pytest.approx([1288.0, 652.0, 60.0], rel=1e-12)
    assert list(TOY_LIPSCHITZ) == pytest.approx(peaks, rel=1e-12)
    # only the second printed constant understates the curvature
    assert [printed < peak for printed, peak in zip(PRINTED_TOY_LIPSCHITZ, peaks)] == [False, True, False]


@pytest.mark.parametrize("variant", ["continuous", "printed"])
def test_stacked_kernel_matches_agents(variant, rng):
    obj = paper_toy_problem(variant)
    batch = rng.uniform(-30.0, 30.0, size=(50, 3, 1))
    expected = np.array([[a.value(row[i]) for i, a in enumerate(obj.agents)] for row in batch])
    np.testing.assert_allclose(obj.agent_values(batch), expected, rtol=1e-12, atol=1e-9)
    np.testing.assert_allclose(obj.stacked_value(batch), expected.sum(axis=1), rtol=1e-12, atol=1e-8)
    for row in batch[:10]:
        grads = np.array([a.gradient(row[i]) for i, a in enumerate(obj.agents)])
        np.testing.assert_allclose(obj.stacked_gradient(row), grads, rtol=1e-12, atol=1e-9)


def test_least_squares_kernel_matches_agents(small_lsq, rng):
    obj, _, _ = small_lsq
    batch = rng.standard_normal((4, 5, 10))
    expected = np.array([[a.value(row[i]) for i, a in enumerate(obj.agents)] for row in batch])
    np.testing.assert_allclose(obj.agent_values(batch), expected, rtol=1e-10)
    grads = np.array([a.gradient(batch[0][i]) for i, a in enumerate(obj.agents)])
    np.testing.assert_allclose(obj.stacked_gradient(batch[0]), grads, rtol=1e-10, atol=1e-10)
    u = rng.standard_normal((3, 10))
    np.testing.assert_allclose(obj.consensual_value(u), [obj.consensual_value(v) for v in u], rtol=1e-12)


def test_stacked_quadratic_matches_agents(rng):
    centers = rng.standard_normal((4, 3))
    obj = stacked_quadratic(centers, curvature=2.0)
    plain = StackedObjective(tuple(quadratic(c, 2.0) for c in centers))
    x = rng.standard_normal((4, 3))
    assert obj.stacked_value(x) == pytest.approx(plain.stacked_value(x))
    np.testing.assert_allclose(obj.stacked_gradient(x), plain.stacked_gradient(x))


def test_quadratic_and_zero():
    q = quadratic([1.0, -2.0], curvature=3.0)
    assert q.value(np.array([1.0, -2.0])) == 0.0
    np.testing.assert_allclose(q.gradient(np.zeros(2)), [-3.0, 6.0])
    z = zero_objective(4)
    assert z.value(np.ones(4)) == 0.0
    np.testing.assert_array_equal(z.gradient(np.ones(4)), np.zeros(4))


def test_mismatched_agents_are_rejected():
    with pytest.raises(DimensionMismatchError):
        StackedObjective((quadratic([0.0]), quadratic([0.0, 1.0])))
    obj = StackedObjective((quadratic([0.0]), quadratic([1.0])))
    with pytest.raises(DimensionMismatchError):
        obj.stacked_gradient(np.zeros((3, 1)))


def test_least_squares_is_seeded():
    a, truth_a, _ = decentralized_least_squares(seed=3, n=4, p=12, m=15, sparsity=4)
    b, truth_b, _ = decentralized_least_squares(seed=3, n=4, p=12, m=15, sparsity=4)
    np.testing.assert_array_equal(truth_a, truth_b)
    x = np.ones((4, 12))
    assert a.stacked_value(x) == b.stacked_value(x)
    assert np.count_nonzero(truth_a) == 4


def test_noiseless_least_squares_vanishes_at_truth():
    obj, truth, _ = decentralized_least_squares(seed=5, n=3, p=8, m=20, sparsity=3)
    x = np.tile(truth, (3, 1))
    assert obj.stacked_value(x) == pytest.approx(0.0, abs=1e-20)
    np.testing.assert_allclose(obj.stacked_gradient(x), 0.0, atol=1e-12)


def test_least_squares_constants(small_lsq, rng):
    obj, _, data = small_lsq
    assert obj.convex
    for agent, b in zip(obj.agents, data.matrices):
        assert agent.lipschitz == pytest.approx(np.linalg.norm(b, 2) ** 2)
        assert gradient_check(agent, rng, samples=20, box=2.0) < 1e-5
        assert lipschitz_check(agent, rng, samples=20) <= 1.0 + 1e-9


def test_least_squares_optimum_solves_normal_equations(small_lsq):
    obj, _, data = small_lsq
    u, f_opt = least_squares_optimum(data)
    total_grad = obj.stacked_gradient(np.tile(u, (obj.n, 1))).sum(axis=0)
    np.testing.assert_allclose(total_grad, 0.0, atol=1e-9)
    assert f_opt == pytest.approx(obj.consensual_value(u))
    assert obj.consensual_value(u + 1e-3) > f_opt


@pytest.mark.parametrize("kwargs", [{"n": 0, "p": 3, "m": 3, "sparsity": 1}, {"n": 2, "p": 3, "m": 3, "sparsity": 4}])
def test_least_squares_rejects_bad_sizes(kwargs):
    with pytest.raises(ValueError):
        decentralized_least_squares(seed=0, **kwargs)
