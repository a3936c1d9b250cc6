"""
EdgeTracer Geometry Tests

Curve model invariants, discrete normals and curvature, remeshing, gridline
crossings and seed curves.
"""

import math

import numpy as np
import pytest

from denoiser import compute_masks
from errors import ContractViolation, GeometryError, ParameterError
from geometry import (
    CurveGeometry,
    Remesher,
    SeedGenerator,
    discrete_laplacian,
    endpoint_tangent,
    gridline_crossings,
    perp,
    remesh,
    segment_normal,
    total_length,
    weighted_normal,
)
from models import CurveNetwork, EndpointKind, PolygonalCurve

CLOSED = EndpointKind.CLOSED


def polyline(points, **kinds) -> PolygonalCurve:
    return PolygonalCurve(np.array(points, dtype=float), **kinds)


# ============================================================================
# CURVE MODEL TESTS
# ============================================================================
class TestCurveModel:
    """Tests for PolygonalCurve and CurveNetwork invariants."""

    def test_closed_needs_both_ends(self):
        """Test a curve is closed at both ends or at neither."""
        with pytest.raises(ContractViolation):
            polyline([[0, 0], [1, 0], [1, 1]], kind_start=CLOSED)

    def test_minimum_node_counts(self):
        """Test closed curves need three nodes and open curves two."""
        with pytest.raises(GeometryError):
            polyline([[0, 0], [1, 0]], kind_start=CLOSED, kind_end=CLOSED)
        with pytest.raises(GeometryError):
            polyline([[0, 0]])
        assert polyline([[0, 0], [1, 0]]).n_nodes == 2

    def test_closed_length_includes_wrap(self):
        """Test the closing segment counts for closed curves."""
        square = polyline([[0, 0], [1, 0], [1, 1], [0, 1]], kind_start=CLOSED, kind_end=CLOSED)
        assert square.length() == pytest.approx(4.0)
        assert len(square.spacings()) == 4

    def test_reversed_swaps_ends(self):
        """Test reversal swaps end kinds and frozen flags."""
        curve = PolygonalCurve(
            np.array([[0.0, 1.0], [2.0, 1.0], [4.0, 1.0]]),
            kind_start=EndpointKind.BOUNDARY_LEFT,
            frozen_end=True,
        )
        flipped = curve.reversed()
        assert flipped.kind_end is EndpointKind.BOUNDARY_LEFT
        assert flipped.frozen_start
        assert np.array_equal(flipped.nodes[0], [4.0, 1.0])

    def test_free_ends(self):
        """Test boundary-attached and closed ends are not free."""
        attached = polyline([[0, 1], [3, 1]], kind_start=EndpointKind.BOUNDARY_LEFT)
        assert attached.free_ends() == [1]
        closed = polyline([[0, 0], [1, 0], [1, 1]], kind_start=CLOSED, kind_end=CLOSED)
        assert closed.free_ends() == []

    def test_network_rejects_outside_nodes(self):
        """Test nodes leaving the domain fail validation."""
        network = CurveNetwork([polyline([[1, 1], [12, 1]])], 10, 10)
        with pytest.raises(GeometryError):
            network.validate()

    def test_network_rejects_detached_boundary_end(self):
        """Test a boundary-attached end must sit on its edge."""
        curve = polyline([[1, 5], [6, 5]], kind_start=EndpointKind.BOUNDARY_LEFT)
        with pytest.raises(GeometryError):
            CurveNetwork([curve], 10, 10).validate()

    def test_network_rejects_duplicate_ids(self):
        """Test curve ids are unique."""
        curves = [polyline([[1, 1], [3, 1]]), polyline([[1, 4], [3, 4]])]
        with pytest.raises(GeometryError):
            CurveNetwork(curves, 10, 10).validate()


# ============================================================================
# NORMALS, TANGENTS AND CURVATURE TESTS
# ============================================================================
class TestCurveGeometry:
    """Tests for discrete normals and the second difference quotient."""

    def test_perp_rotates_anticlockwise(self):
        """Test perp maps e1 to e2."""
        assert np.allclose(perp(np.array([1.0, 0.0])), [0.0, 1.0])
        assert np.allclose(perp(np.array([[0.0, 1.0]])), [[-1.0, 0.0]])

    def test_segment_normal(self):
        """Test the unit normal of a horizontal segment points up."""
        curve = polyline([[0, 0], [2, 0], [4, 0]])
        assert np.allclose(segment_normal(curve, 1), [0.0, 1.0])
        with pytest.raises(ContractViolation):
            segment_normal(curve, 3)

    def test_weighted_normal_on_circle(self):
        """Test omega points inward with length cos(pi/N) on a regular anticlockwise polygon."""
        n = 32
        circle = SeedGenerator.circle((50.0, 50.0), 20.0, n)
        omega = weighted_normal(circle, 5)
        inward = np.array([50.0, 50.0]) - circle.nodes[5]
        assert np.linalg.norm(omega) == pytest.approx(math.cos(math.pi / n))
        assert float(omega @ inward) > 0
        assert np.allclose(CurveGeometry.weighted_normals(circle)[5], omega)

    def test_weighted_normal_at_open_end(self):
        """Test open-curve ends use the adjacent segment normal."""
        curve = polyline([[0, 0], [0, 3], [2, 5]])
        assert np.allclose(weighted_normal(curve, 0), [-1.0, 0.0])
        assert np.allclose(CurveGeometry.weighted_normals(curve)[0], [-1.0, 0.0])

    def test_endpoint_tangents(self):
        """Test endpoint tangents point along the curve direction."""
        curve = polyline([[1, 1], [4, 5], [10, 5]])
        assert np.allclose(endpoint_tangent(curve, 0), [0.6, 0.8])
        assert np.allclose(endpoint_tangent(curve, 1), [1.0, 0.0])

    def test_endpoint_tangent_closed(self):
        """Test closed curves have no endpoint tangents."""
        circle = SeedGenerator.circle((5.0, 5.0), 2.0, 8)
        with pytest.raises(ContractViolation):
            endpoint_tangent(circle, 0)

    def test_discrete_laplacian_uses_old_spacings(self):
        """Test Delta_2 weights come from the old spacings."""
        nodes = np.array([[0.0, 0.0], [1.0, 1.0], [2.0, 0.0]])
        assert np.allclose(discrete_laplacian(nodes, np.array([1.0, 1.0]), 1), [0.0, -2.0])
        assert np.allclose(discrete_laplacian(nodes, np.array([2.0, 2.0]), 1), [0.0, -0.5])

    def test_discrete_laplacian_straight_line(self):
        """Test equally spaced collinear nodes have zero second difference."""
        nodes = np.array([[0.0, 0.0], [1.0, 2.0], [2.0, 4.0], [3.0, 6.0]])
        spacings = np.full(3, math.sqrt(5.0))
        assert np.allclose(discrete_laplacian(nodes, spacings, 2), 0.0)

    def test_discrete_laplacian_needs_interior(self):
        """Test Delta_2 is undefined at open-curve endpoints."""
        with pytest.raises(ContractViolation):
            discrete_laplacian(np.array([[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]]), np.ones(2), 0)

    def test_total_length(self):
        """Test the network length sums its curves."""
        network = CurveNetwork(
            [polyline([[0, 0], [3, 4]]), polyline([[1, 1], [1, 3]], curve_id=1)], 10, 10
        )
        assert total_length(network) == pytest.approx(7.0)


# ============================================================================
# REMESHING TESTS
# ============================================================================
class TestRemesher:
    """Tests for keeping node spacings inside the band."""

    def test_band(self):
        """Test the band is [h_target/2, 3 h_target/2]."""
        assert Remesher.band(4.0) == (2.0, 6.0)

    def test_long_segment_is_subdivided(self):
        """Test segments above h_max are split evenly."""
        curve = remesh(polyline([[0, 0], [20, 0]]), 2.0, 6.0)
        assert curve.n_nodes == 5
        assert np.allclose(curve.spacings(), 5.0)

    def test_short_segment_node_removed(self):
        """Test a node next to a short segment is removed, endpoints stay."""
        curve = remesh(polyline([[0, 0], [5, 0], [5.5, 0], [10, 0]]), 2.0, 6.0)
        assert np.allclose(curve.nodes, [[0, 0], [5, 0], [10, 0]])

    def test_unchanged_curve_is_returned(self):
        """Test a curve already inside the band is returned as is."""
        curve = polyline([[0, 0], [4, 0], [8, 0]])
        assert remesh(curve, 2.0, 6.0) is curve

    def test_closed_curve_keeps_three_nodes(self):
        """Test a small closed curve never drops below three nodes."""
        triangle = polyline([[0, 0], [0.5, 0], [0, 0.5]], kind_start=CLOSED, kind_end=CLOSED)
        assert remesh(triangle, 2.0, 6.0).n_nodes == 3

    def test_spacings_within_band(self):
        """Test a jittered closed curve ends up inside the band."""
        rng = np.random.default_rng(5)
        angles = np.sort(rng.uniform(0, 2 * np.pi, 60))
        nodes = np.column_stack([50 + 30 * np.cos(angles), 50 + 30 * np.sin(angles)])
        curve = remesh(polyline(nodes, kind_start=CLOSED, kind_end=CLOSED), 2.0, 6.0)
        spacings = curve.spacings()
        assert spacings.max() <= 6.0 + 1e-9
        assert spacings.min() >= 2.0 - 1e-9

    def test_bad_band(self):
        """Test an empty band is rejected."""
        with pytest.raises(ParameterError):
            remesh(polyline([[0, 0], [4, 0]]), 3.0, 2.0)


# ============================================================================
# GRIDLINE CROSSING TESTS
# ============================================================================
class TestGridCrossings:
    """Tests for links met by curve segments."""

    def test_horizontal_segment_cuts_vertical_links(self):
        """Test a segment between gridlines cuts only the links it passes."""
        network = CurveNetwork([polyline([[0.5, 2.5], [3.5, 2.5]])], 5, 5)
        horizontal, vertical = gridline_crossings(network)
        assert horizontal == set()
        assert vertical == {(1, 3), (2, 3), (3, 3)}

    def test_segment_on_gridline(self):
        """Test a segment lying on a gridline meets every overlapping link."""
        network = CurveNetwork([polyline([[0.5, 2.0], [2.5, 2.0]])], 5, 5)
        horizontal, _ = gridline_crossings(network)
        assert horizontal == {(1, 2), (2, 2), (3, 2)}

    def test_diagonal_segment(self):
        """Test a diagonal segment crosses both link families."""
        network = CurveNetwork([polyline([[0.5, 0.25], [2.5, 1.25]])], 4, 4)
        horizontal, vertical = gridline_crossings(network)
        # y = 1 is reached at x = 2.0
        assert horizontal == {(2, 1), (3, 1)}
        # x = 1 at y = 0.5 and x = 2 at y = 1.0
        assert (1, 1) in vertical
        assert {(2, 1), (2, 2)} <= vertical

    def test_l_shaped_curve_matches_brute_force(self):
        """Test crossings and masks against a check of every link against every segment."""
        n = 10
        points = np.array([[1.3, 2.6], [6.7, 2.6], [6.7, 5.2], [4.1, 7.9]])
        network = CurveNetwork([polyline(points)], n, n)

        def cross(o, a, b):
            return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

        def meets(p, q, r, s):
            return cross(p, q, r) * cross(p, q, s) <= 0 and cross(r, s, p) * cross(r, s, q) <= 0

        segments = list(zip(points[:-1], points[1:]))
        expected_h = {
            (i, j) for i in range(1, n + 1) for j in range(n + 1)
            if any(meets(p, q, (i - 1, j), (i, j)) for p, q in segments)
        }
        expected_v = {
            (i, j) for i in range(n + 1) for j in range(1, n + 1)
            if any(meets(p, q, (i, j - 1), (i, j)) for p, q in segments)
        }
        horizontal, vertical = gridline_crossings(network)
        assert horizontal == expected_h
        assert vertical == expected_v

        masks = compute_masks(network)
        assert {(i + 1, j) for i, j in zip(*np.nonzero(masks.crossed_horizontal()))} == expected_h
        assert {(i, j + 1) for i, j in zip(*np.nonzero(masks.crossed_vertical()))} == expected_v


# ============================================================================
# SEED TESTS
# ============================================================================
class TestSeedGenerator:
    """Tests for initial curves."""

    def test_horizontal_segment(self):
        """Test segment seeds span their interval with near-target spacing."""
        curve = SeedGenerator.horizontal_segment(0.0, 10.0, 5.0, spacing=4.0)
        assert curve.n_nodes == 4
        assert np.allclose(curve.nodes[:, 1], 5.0)
        assert curve.nodes[-1, 0] == pytest.approx(10.0)

    def test_circle_is_anticlockwise(self):
        """Test circle seeds have positive signed area."""
        circle = SeedGenerator.circle((0.0, 0.0), 3.0, 12)
        x, y = circle.nodes[:, 0], circle.nodes[:, 1]
        area = 0.5 * np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y)
        assert area > 0
        assert circle.closed

    def test_short_segment_grid(self):
        """Test a grid of short segments tiles the domain with distinct ids."""
        network = SeedGenerator.short_segment_grid(60, 40, rows=2, cols=3, length=10.0)
        assert len(network.curves) == 6
        assert len({c.curve_id for c in network.curves}) == 6
        network.validate()

    def test_short_segment_grid_too_long(self):
        """Test segments longer than a tile are rejected."""
        with pytest.raises(ParameterError):
            SeedGenerator.short_segment_grid(30, 30, rows=1, cols=3, length=10.0)
