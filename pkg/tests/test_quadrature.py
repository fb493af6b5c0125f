import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate

from mfvpinn.geometry import Patch, ref_triangle_vertices
from mfvpinn.quadrature import (
    SUPPORTED_ORDERS,
    conical_product_rule,
    edge_rule,
    fine_triangle_rule,
    map_rule,
    reference_rules,
    square_cell_rule,
    triangle_rule,
    unit_triangle_rule,
)


def monomials(k):
    return [(a, d - a) for d in range(k + 1) for a in range(d + 1)]


def rect_moment(x0, x1, y0, y1, a, b):
    return (x1 ** (a + 1) - x0 ** (a + 1)) / (a + 1) * (y1 ** (b + 1) - y0 ** (b + 1)) / (b + 1)


def unit_triangle_moment(a, b):
    # int_T x^a y^b = a! b! / (a + b + 2)!
    from math import factorial

    return factorial(a) * factorial(b) / factorial(a + b + 2)


class TestTriangleRules:
    @pytest.mark.parametrize("order", SUPPORTED_ORDERS)
    def test_unit_triangle_exactness(self, order):
        nodes, w = unit_triangle_rule(order)
        for a, b in monomials(order):
            val = np.dot(w, nodes[:, 0] ** a * nodes[:, 1] ** b)
            assert val == pytest.approx(unit_triangle_moment(a, b), abs=1e-15)

    def test_order3_rule_is_degree6(self):
        nodes, w = unit_triangle_rule(3)
        assert len(w) == 12
        for a, b in monomials(6):
            assert np.dot(w, nodes[:, 0] ** a * nodes[:, 1] ** b) == pytest.approx(
                unit_triangle_moment(a, b), abs=1e-15
            )

    def test_nodes_strictly_inside_with_positive_weights(self):
        for order in SUPPORTED_ORDERS:
            nodes, w = unit_triangle_rule(order)
            assert (w > 0).all()
            assert (nodes > 0).all() and (nodes.sum(axis=1) < 1).all()

    @pytest.mark.parametrize("n", [1, 2, 3, 4, 5])
    def test_conical_product_degree(self, n):
        nodes, w = conical_product_rule(n)
        for a, b in monomials(2 * n - 1):
            assert np.dot(w, nodes[:, 0] ** a * nodes[:, 1] ** b) == pytest.approx(
                unit_triangle_moment(a, b), abs=1e-15
            )

    def test_fine_rule_degree7(self):
        nodes, w = fine_triangle_rule(7)
        for a, b in monomials(7):
            assert np.dot(w, nodes[:, 0] ** a * nodes[:, 1] ** b) == pytest.approx(
                unit_triangle_moment(a, b), abs=1e-15
            )

    def test_fan_triangle_linear_moment(self):
        # oracle: scipy dblquad over T = (0,0), (1,0), (0.5,0.5)
        rule = triangle_rule(ref_triangle_vertices(0), 3)
        ref, _ = integrate.dblquad(lambda y, x: x, 0, 1, 0, lambda x: min(x, 1 - x))
        assert rule.integrate(lambda p: p[:, 0]) == pytest.approx(ref, abs=1e-12)
        assert ref == pytest.approx(0.125)

    def test_unsupported_order(self):
        with pytest.raises(ValueError):
            unit_triangle_rule(7)


class TestCompositeRule:
    def test_x2y(self):
        comp = reference_rules(3).composite
        assert comp.integrate(lambda p: p[:, 0] ** 2 * p[:, 1]) == pytest.approx(1 / 6, abs=1e-15)

    def test_weights_sum_to_one(self):
        assert reference_rules(3).composite.weights.sum() == pytest.approx(1.0, abs=1e-15)

    @pytest.mark.parametrize("q", SUPPORTED_ORDERS)
    def test_exactness_random_patches(self, q, rng):
        comp = reference_rules(q).composite
        patches = [Patch.square(0, (0.5, 0.5), 1.0)]
        for _ in range(20):
            h = rng.uniform(0.05, 1.0, size=2)
            patches.append(Patch(0, tuple(rng.uniform(h / 2, 1 - h / 2)), tuple(h / 2)))
        for p in patches:
            rule = map_rule(comp, p)
            r = p.rect
            for a, b in monomials(q):
                val = rule.integrate(lambda z: z[:, 0] ** a * z[:, 1] ** b)
                assert abs(val - rect_moment(r.x0, r.x1, r.y0, r.y1, a, b)) < 1e-12

    def test_nodes_grouped_by_triangle(self):
        rules = reference_rules(3)
        npt = rules.points_per_triangle
        for j, tri in enumerate(rules.triangles):
            np.testing.assert_array_equal(rules.composite.nodes[j * npt:(j + 1) * npt], tri.nodes)


class TestMapRule:
    def test_weight_scaling(self):
        comp = reference_rules(3).composite
        mapped = map_rule(comp, Patch.square(0, (0.4, 0.6), 0.5))
        np.testing.assert_allclose(mapped.weights, comp.weights * 0.25, rtol=1e-15)

    def test_identity(self):
        comp = reference_rules(3).composite
        mapped = map_rule(comp, Patch.square(0, (0.5, 0.5), 1.0))
        np.testing.assert_allclose(mapped.nodes, comp.nodes, atol=1e-16)
        np.testing.assert_allclose(mapped.weights, comp.weights, rtol=1e-15)

    def test_area(self):
        mapped = map_rule(reference_rules(3).composite, Patch.square(0, (0.3, 0.3), 0.6))
        assert mapped.integrate(np.ones(len(mapped))) == pytest.approx(0.36, abs=1e-15)


class TestEdgeRule:
    def test_cubic(self):
        rule = edge_rule([0, 0], [1, 0], 3)
        assert len(rule) == 2
        assert rule.integrate(lambda p: p[:, 0] ** 3) == pytest.approx(0.25, abs=1e-15)

    def test_diagonal_length(self):
        assert edge_rule([0, 0], [1, 1], 3).weights.sum() == pytest.approx(np.sqrt(2), abs=1e-15)

    @given(st.lists(st.floats(0, 1), min_size=4, max_size=4), st.integers(0, 3))
    def test_mapped_fan_edge(self, coords, k):
        p0, p1 = np.array(coords[:2]), np.array(coords[2:])
        length = np.linalg.norm(p1 - p0)
        if length < 1e-6:
            return
        rule = edge_rule(p0, p1, 3)
        t = (rule.nodes - p0) @ (p1 - p0) / length**2
        assert np.dot(rule.weights, t**k) == pytest.approx(length / (k + 1), rel=1e-13, abs=1e-15)

    def test_degenerate(self):
        with pytest.raises(ValueError):
            edge_rule([0.2, 0.2], [0.2, 0.2])


class TestCellRule:
    def test_polynomial_over_grid(self):
        rule = square_cell_rule(np.linspace(0, 1, 5), [0, 0.3, 1.0], order=5)
        assert rule.weights.sum() == pytest.approx(1.0)
        val = rule.integrate(lambda p: p[:, 0] ** 5 * p[:, 1] ** 4)
        assert val == pytest.approx(1 / 30, rel=1e-13)
