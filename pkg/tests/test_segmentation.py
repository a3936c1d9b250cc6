"""
EdgeTracer Segmentation Tests

Curve-aware denoiser, curve evolution and energy audit.
"""

import math

import numpy as np
import pytest

from denoiser import (
    EdgePreservingDenoiser,
    assemble_denoise_system,
    compute_masks,
    denoise,
)
from energy import EnergyAudit, discrete_ms_energy, jump_across, pc_energy
from errors import ContractViolation, GeometryError, ParameterError
from evolver import CurveEvolver, endpoint_stencil, external_term, growth_indicator, step
from geometry import SeedGenerator
from imaging import ImageGenerator, RegionSpec, add_noise, forward_diff
from linalg import LinearSolver
from models import (
    CurveNetwork,
    EndpointKind,
    EvolveParams,
    GridImage,
    GridPoint,
    NormalLaw,
    PolygonalCurve,
)


def vertical_cut(x: float, n: int, spacing: float = 2.0) -> PolygonalCurve:
    """Open curve x = const from the bottom edge to the top edge."""
    y = np.linspace(0.0, n, int(n / spacing) + 1)
    return PolygonalCurve(
        np.column_stack([np.full_like(y, x), y]),
        kind_start=EndpointKind.BOUNDARY_BOTTOM,
        kind_end=EndpointKind.BOUNDARY_TOP,
    )


def step_image(n: int, edge: int) -> GridImage:
    """0 for i <= edge, 1 beyond."""
    values = np.zeros((n + 1, n + 1))
    values[edge + 1:, :] = 1.0
    return GridImage(values)


def effective_radius(curve: PolygonalCurve) -> float:
    center = curve.nodes.mean(axis=0)
    return float(np.linalg.norm(curve.nodes - center, axis=1).mean())


# ============================================================================
# DENOISER TESTS
# ============================================================================
class TestDenoiser:
    """Tests for the curve-aware smoothing step."""

    def test_masks_zero_crossed_links(self):
        """Test links cut by a curve get weight zero and the rest h^2."""
        curve = PolygonalCurve(np.array([[0.5, 2.5], [3.5, 2.5]]))
        masks = compute_masks(CurveNetwork([curve], 5, 5))
        assert masks.vertical[1, 2] == 0.0
        assert masks.vertical[3, 2] == 0.0
        assert masks.a_y(2, 3) == 0.0
        assert masks.a_x(2, 3) == 1.0
        assert masks.vertical[4, 2] == 1.0
        assert np.all(masks.horizontal == 1.0)
        assert int(masks.crossed_vertical().sum()) == 3

    def test_system_is_symmetric(self):
        """Test the stationarity matrix is symmetric with a positive diagonal."""
        u0 = add_noise(GridImage(np.full((9, 9), 0.5)), 0.2, rng_seed=1)
        network = CurveNetwork([vertical_cut(4.5, 8)], 8, 8)
        matrix, rhs = assemble_denoise_system(u0, compute_masks(network), lam=0.01)
        assert abs(matrix - matrix.T).max() == pytest.approx(0.0)
        assert np.all(matrix.diagonal() > 0)
        assert rhs.shape == (81,)

    def test_rejects_nonpositive_lambda(self):
        """Test lambda must be positive."""
        u0 = GridImage(np.zeros((4, 4)))
        masks = compute_masks(CurveNetwork([], 3, 3))
        with pytest.raises(ParameterError):
            assemble_denoise_system(u0, masks, lam=0.0)

    def test_residual_and_optimality(self):
        """Test the solution meets the residual bound and no perturbation lowers E_discr."""
        rng = np.random.default_rng(11)
        u0 = GridImage(rng.uniform(0.2, 0.8, (21, 21)))
        network = CurveNetwork([SeedGenerator.circle((10.0, 10.0), 5.3, 24)], 20, 20)
        masks = compute_masks(network)
        lam = 0.05
        u = EdgePreservingDenoiser.denoise_with_masks(u0, masks, lam)
        matrix, rhs = assemble_denoise_system(u0, masks, lam)
        residual = LinearSolver.residual_norm(matrix, u.values.ravel(), rhs)
        assert residual <= 1e-9 * np.linalg.norm(rhs)

        best = EdgePreservingDenoiser.discrete_energy(u.values, u0, masks, lam)
        for _ in range(100):
            perturbed = u.values + 1e-3 * rng.uniform(-1, 1, u.values.shape)
            assert EdgePreservingDenoiser.discrete_energy(perturbed, u0, masks, lam) >= best

    def test_no_curves_means_global_smoothing(self):
        """Test without curves the mean is preserved and noise reduced."""
        u0 = add_noise(GridImage(np.full((16, 16), 0.5)), 0.2, rng_seed=2)
        u = denoise(u0, CurveNetwork([], 15, 15), lam=0.01)
        assert u.values.mean() == pytest.approx(u0.values.mean(), abs=1e-8)
        assert u.values.std() < 0.2 * u0.values.std()

    def test_edge_preservation(self):
        """Test smoothing reduces region variance while keeping the jump across the curve."""
        n = 30
        clean = ImageGenerator.two_region(
            n, n, RegionSpec(shape="half-plane", inside=0.2, outside=0.8, boundary=15.5)
        )
        u0 = add_noise(clean, 0.1, rng_seed=7)
        network = CurveNetwork([vertical_cut(15.5, n)], n, n)
        u = denoise(u0, network, lam=0.002)

        left, right = slice(0, 16), slice(16, n + 1)
        for region in (left, right):
            assert u.values[region].var() <= 0.2 * u0.values[region].var()
        jump = np.mean(u.values[16, :] - u.values[15, :])
        assert jump >= 0.9 * 0.6

    def test_warm_start_matches(self):
        """Test a warm start converges to the same field."""
        u0 = add_noise(GridImage(np.full((11, 11), 0.4)), 0.2, rng_seed=3)
        network = CurveNetwork([vertical_cut(5.5, 10)], 10, 10)
        cold = EdgePreservingDenoiser.denoise(u0, network, lam=0.02)
        warm = EdgePreservingDenoiser.denoise(u0, network, lam=0.02, initial=cold)
        assert np.allclose(cold.values, warm.values, atol=1e-6)


# ============================================================================
# ENDPOINT STENCIL TESTS
# ============================================================================
class TestEndpointStencil:
    """Tests for the cell stencil of a free endpoint."""

    def test_start_endpoint(self):
        """Test rho = 0 with tau pointing right uses the lower corner."""
        stencil = endpoint_stencil((2.3, 4.6), (1.0, 0.0), 0, 10, 10)
        assert stencil.z1 == GridPoint(2, 4)
        assert stencil.z2 == GridPoint(2, 4)
        assert stencil.alpha_x == pytest.approx(0.7)
        assert stencil.alpha_y == pytest.approx(0.4)

    def test_end_endpoint(self):
        """Test rho = 1 with tau pointing right uses the far corners."""
        stencil = endpoint_stencil((2.3, 4.6), (1.0, 0.0), 1, 10, 10)
        assert stencil.z1 == GridPoint(3, 4)
        assert stencil.z2 == GridPoint(2, 5)
        assert stencil.alpha_x == pytest.approx(0.3)
        assert stencil.alpha_y == pytest.approx(0.6)

    def test_negative_tangent(self):
        """Test a leftward tangent at rho = 0 flips z1."""
        stencil = endpoint_stencil((2.3, 4.6), (-1.0, 0.0), 0, 10, 10)
        assert stencil.z1 == GridPoint(3, 4)
        assert stencil.alpha_x == pytest.approx(0.3)

    def test_outside_domain(self):
        """Test endpoints on or beyond the border are rejected."""
        with pytest.raises(GeometryError):
            endpoint_stencil((0.0, 4.0), (1.0, 0.0), 0, 10, 10)

    def test_growth_indicator_on_edge(self):
        """Test an endpoint facing an intensity jump wants to grow."""
        values = np.zeros((21, 21))
        values[:, 11:] = 1.0
        u = GridImage(values)
        stencil = endpoint_stencil((5.5, 10.5), (1.0, 0.0), 1, 20, 20)
        assert forward_diff(u, stencil.z1, axis=2) == pytest.approx(1.0)
        assert growth_indicator(stencil, (1.0, 0.0), u, sigma=0.01) == pytest.approx(0.99)

    def test_growth_indicator_flat(self):
        """Test a flat image gives -sigma."""
        u = GridImage(np.full((11, 11), 0.3))
        stencil = endpoint_stencil((5.5, 5.5), (0.6, 0.8), 0, 10, 10)
        assert growth_indicator(stencil, (0.6, 0.8), u, sigma=0.02) == pytest.approx(-0.02)


# ============================================================================
# CURVE EVOLUTION TESTS
# ============================================================================
class TestCurveEvolver:
    """Tests for the semi-implicit step."""

    def test_external_term(self):
        """Test F compares u on both sides of a node against u0 at the node."""
        u = step_image(20, 10)
        u0 = GridImage(np.full((21, 21), 0.9))
        curve = PolygonalCurve(np.column_stack([np.full(5, 10.5), np.linspace(5, 15, 5)]))
        params = EvolveParams(sigma=1e-3, lam=0.5, dt=0.1, a=4.0)
        # omega = (-1, 0): ahead samples u = 0, behind samples u = 1
        assert external_term(curve, 2, u0, u, params) == pytest.approx(0.5 * (0.81 - 0.01))
        assert external_term(curve, 0, u0, u, params) == 0.0
        assert external_term(curve, 4, u0, u, params) == 0.0

    def test_curve_system_shape(self):
        """Test one (x, y, kappa) triple per implicit node."""
        curve = SeedGenerator.horizontal_segment(2.0, 18.0, 5.5)
        params = EvolveParams(sigma=0.1, lam=0.1, dt=0.1)
        matrix, rhs, unknowns = CurveEvolver.assemble_curve_system(
            curve, np.zeros(curve.n_nodes), params
        )
        assert unknowns == list(range(1, curve.n_nodes - 1))
        assert matrix.shape == (3 * len(unknowns), 3 * len(unknowns))
        assert rhs.shape == (3 * len(unknowns),)

    def test_straight_curve_interior_is_stationary(self):
        """Test a straight curve without forcing keeps its interior nodes on the line."""
        curve = PolygonalCurve(
            np.column_stack([np.arange(0.0, 17.0, 4.0), np.full(5, 5.5)]),
            kind_start=EndpointKind.BOUNDARY_LEFT,
        )
        network = CurveNetwork([curve], 20, 20)
        u = GridImage(np.full((21, 21), 0.5))
        moved = step(network, u, EvolveParams(sigma=0.1, lam=0.1, dt=0.1))
        assert np.allclose(moved.curves[0].nodes[:, 1], 5.5)
        assert moved.curves[0].nodes[0, 0] == 0.0

    def test_constant_image_retreat(self):
        """Test free endpoints retreat at speed sigma on a constant image."""
        sigma, dt = 1.0, 0.01
        curve = SeedGenerator.horizontal_segment(10.0, 40.0, 20.5)
        network = CurveNetwork([curve], 50, 50)
        u = GridImage(np.full((51, 51), 0.5))
        params = EvolveParams(sigma=sigma, lam=0.002, dt=dt)
        for _ in range(100):
            network = step(network, u, params, u0=u)
        nodes = network.curves[0].nodes
        expected = 100 * sigma * dt
        assert nodes[0, 0] - 10.0 == pytest.approx(expected, rel=0.05)
        assert 40.0 - nodes[-1, 0] == pytest.approx(expected, rel=0.05)
        assert np.allclose(nodes[:, 1], 20.5)

    def test_endpoint_shift_is_capped(self):
        """Test an explicit endpoint move never exceeds the cap."""
        values = np.zeros((41, 41))
        values[:, 21:] = 1.0
        u = GridImage(values)
        curve = SeedGenerator.horizontal_segment(5.0, 15.0, 20.5)
        network = CurveNetwork([curve], 40, 40)
        params = EvolveParams(sigma=1e-4, lam=0.002, dt=10.0, max_endpoint_shift=0.5)
        result = CurveEvolver.advance(network, u, params)
        assert result.capped_endpoints >= 1
        moved = result.network.curves[0].nodes
        assert np.hypot(*(moved[-1] - curve.nodes[-1])) <= 0.5 + 1e-12

    def test_endpoint_normal_motion_off(self):
        """Test disabling normal motion keeps the endpoint on its tangent line."""
        values = np.zeros((41, 41))
        values[:, 21:] = 1.0
        u = GridImage(values)
        curve = SeedGenerator.horizontal_segment(5.0, 15.0, 20.3)
        params = EvolveParams(sigma=1e-3, lam=0.002, dt=0.1, endpoint_normal_motion=False)
        velocity = CurveEvolver.endpoint_velocity(curve, 1, u, params, 40, 40)
        assert velocity.v_n == 0.0
        assert velocity.v_tan > 0

    @pytest.mark.parametrize("end_y,previous_y", [(20.8, 20.3), (20.2, 20.7)])
    def test_tilted_end_turns_back_to_edge(self, end_y, previous_y):
        """Test the normal velocity rotates a tilted end back towards a horizontal edge."""
        values = np.zeros((41, 41))
        values[:, 21:] = 1.0
        u = GridImage(values)
        curve = PolygonalCurve(np.array([[5.0, previous_y], [10.0, previous_y], [15.0, end_y]]))
        params = EvolveParams(sigma=1e-3, lam=0.002, dt=0.1)
        velocity = CurveEvolver.endpoint_velocity(curve, 1, u, params, 40, 40)
        vertical = velocity.v_n * velocity.normal[1]
        assert vertical != 0.0
        assert np.sign(vertical) == -np.sign(end_y - previous_y)

    def test_axis_aligned_end_has_no_weighted_normal_motion(self):
        """Test an end parallel to e1 gets no normal velocity from the jump along e1."""
        values = np.tile(0.05 * np.arange(41.0)[:, None], (1, 41))
        u = GridImage(values)
        curve = SeedGenerator.horizontal_segment(5.0, 15.0, 20.3)
        weighted = EvolveParams(sigma=1e-3, lam=0.002, dt=0.1)
        signed = EvolveParams(
            sigma=1e-3, lam=0.002, dt=0.1, endpoint_normal_law=NormalLaw.SIGNED
        )
        assert CurveEvolver.endpoint_velocity(curve, 1, u, weighted, 40, 40).v_n == 0.0
        assert abs(
            CurveEvolver.endpoint_velocity(curve, 1, u, signed, 40, 40).v_n
        ) == pytest.approx(0.05 ** 2)

    def test_endpoint_velocity_transposes(self):
        """Test swapping x and y in image and curve swaps the endpoint displacement."""
        rng = np.random.default_rng(3)
        values = rng.uniform(0.0, 1.0, (41, 41))
        nodes = np.array([[5.0, 7.3], [10.0, 9.1], [15.0, 12.4]])
        params = EvolveParams(sigma=1e-3, lam=0.002, dt=0.1)

        def displacement(image, points, rho):
            v = CurveEvolver.endpoint_velocity(
                PolygonalCurve(points), rho, GridImage(image), params, 40, 40
            )
            return v.v_tan * v.tangent + v.v_n * v.normal

        for rho in (0, 1):
            original = displacement(values, nodes, rho)
            swapped = displacement(values.T, nodes[:, ::-1].copy(), rho)
            assert np.allclose(swapped, original[::-1], atol=1e-12)

    def test_missing_u0_means_no_forcing(self):
        """Test omitting u0 matches a zero-forcing step on a constant image."""
        u = GridImage(np.full((51, 51), 0.4))
        network = CurveNetwork([SeedGenerator.circle((25.0, 25.0), 12.0, 32)], 50, 50)
        params = EvolveParams(sigma=0.5, lam=0.5, dt=0.5)
        without = step(network, u, params)
        with_u0 = step(network, u, params, u0=u)
        assert np.allclose(without.curves[0].nodes, with_u0.curves[0].nodes)

    def test_closed_length_never_grows_without_forcing(self):
        """Test curve shortening decreases the length of a closed curve at every step."""
        rng = np.random.default_rng(5)
        angles = np.linspace(0.0, 2.0 * np.pi, 48, endpoint=False)
        radius = 15.0 + rng.uniform(-2.0, 2.0, angles.size)
        nodes = np.column_stack([30 + radius * np.cos(angles), 30 + radius * np.sin(angles)])
        closed = PolygonalCurve(nodes, EndpointKind.CLOSED, EndpointKind.CLOSED)
        network = CurveNetwork([closed], 60, 60)
        u = GridImage(np.zeros((61, 61)))
        params = EvolveParams(sigma=1.0, lam=0.002, dt=0.5, h_target=2.0)
        length = network.curves[0].length()
        for _ in range(30):
            network = step(network, u, params)
            current = network.curves[0].length()
            assert current <= length + 1e-9
            length = current

    def test_stable_far_beyond_explicit_limit(self):
        """Test a step ten times the explicit limit h^2 / (2 sigma) stays smooth."""
        h_target, sigma = 4.0, 1.0
        circle = SeedGenerator.circle((100.0, 100.0), 40.0, 64)
        network = CurveNetwork([circle], 200, 200)
        u = GridImage(np.zeros((201, 201)))
        dt = 10.0 * h_target ** 2 / (2.0 * sigma)
        params = EvolveParams(sigma=sigma, lam=0.002, dt=dt, h_target=h_target)
        radius = effective_radius(circle)
        for _ in range(5):
            network = step(network, u, params)
            curve = network.curves[0]
            assert np.all(np.isfinite(curve.nodes))
            distances = np.linalg.norm(curve.nodes - curve.nodes.mean(axis=0), axis=1)
            assert distances.std() < 0.05 * distances.mean()
            assert effective_radius(curve) < radius
            radius = effective_radius(curve)

    def test_curvature_flow(self):
        """Test a circle shrinks as sqrt(R0^2 - 2 sigma t) under pure curvature flow."""
        n, r0, dt = 128, 20.0, 0.1
        circle = SeedGenerator.circle((50.0, 50.0), r0, n)
        network = CurveNetwork([circle], 100, 100)
        u = GridImage(np.zeros((101, 101)))
        params = EvolveParams(sigma=1.0, lam=1.0, dt=dt, h_target=1.0)
        for k in range(1, 101):
            network = step(network, u, params)
            if k % 25 == 0:
                exact = math.sqrt(r0 ** 2 - 2.0 * k * dt)
                assert effective_radius(network.curves[0]) == pytest.approx(exact, rel=0.01)

    def test_bad_parameters(self):
        """Test non-positive step parameters are rejected."""
        with pytest.raises(ParameterError):
            EvolveParams(sigma=0.1, lam=0.1, dt=0.0)


# ============================================================================
# ENERGY AUDIT TESTS
# ============================================================================
class TestEnergyAudit:
    """Tests for the discrete energies and jumps."""

    def test_matches_length_plus_denoise_energy(self):
        """Test E^h = sigma |Gamma| + E_discr when no curve has a free endpoint."""
        rng = np.random.default_rng(4)
        u0 = GridImage(rng.uniform(0, 1, (21, 21)))
        u = GridImage(rng.uniform(0, 1, (21, 21)))
        network = CurveNetwork([SeedGenerator.circle((10.0, 10.0), 6.0, 20)], 20, 20)
        sigma, lam = 0.01, 0.3
        breakdown = discrete_ms_energy(network, u, u0, sigma, lam)
        masks = compute_masks(network)
        expected = sigma * network.curves[0].length() + EdgePreservingDenoiser.discrete_energy(
            u.values, u0, masks, lam
        )
        assert breakdown.total == pytest.approx(expected)
        assert breakdown.total == pytest.approx(
            breakdown.length_term + breakdown.gradient_term + breakdown.fidelity_term
        )

    def test_shape_mismatch(self):
        """Test fields of different shapes are rejected."""
        network = CurveNetwork([], 4, 4)
        with pytest.raises(ContractViolation):
            discrete_ms_energy(network, GridImage(np.zeros((5, 5))), GridImage(np.zeros((4, 4))),
                               0.1, 0.1)

    def test_first_variation_of_free_endpoint(self):
        """Test extending a free end by eps changes E^h by sigma eps - eps (grad u)^2."""
        rng = np.random.default_rng(19)
        sigma, lam, eps = 0.05, 0.01, 0.01
        u0 = GridImage(rng.uniform(0, 1, (21, 21)))
        u = GridImage(rng.uniform(0, 1, (21, 21)))
        for _ in range(20):
            i0, j0 = int(rng.integers(2, 9)), int(rng.integers(2, 18))
            x0 = i0 + rng.uniform(0.2, 0.8)
            y = j0 + rng.uniform(0.2, 0.8)
            nodes = np.array([[x0, y], [x0 + 4.0, y], [x0 + 8.0, y]])
            before = CurveNetwork([PolygonalCurve(nodes)], 20, 20)
            extended = nodes.copy()
            extended[0, 0] -= eps
            after = CurveNetwork([PolygonalCurve(extended)], 20, 20)

            change = (
                discrete_ms_energy(after, u, u0, sigma, lam).total
                - discrete_ms_energy(before, u, u0, sigma, lam).total
            )
            g = forward_diff(u, GridPoint(i0, j0), axis=2)
            assert change == pytest.approx(sigma * eps - eps * g ** 2, abs=1e-6)

    def test_region_labels(self):
        """Test a closed curve splits the grid into inside and outside."""
        network = CurveNetwork([SeedGenerator.circle((10.0, 10.0), 4.5, 16)], 20, 20)
        count, labels = EnergyAudit.region_labels(compute_masks(network))
        assert count == 2
        assert labels[10, 10] != labels[0, 0]

    def test_pc_energy_exact_boundary(self):
        """Test the piecewise-constant energy of a perfectly fitting curve is its length term."""
        square = PolygonalCurve(
            np.array([[5.5, 5.5], [14.5, 5.5], [14.5, 14.5], [5.5, 14.5]]),
            EndpointKind.CLOSED,
            EndpointKind.CLOSED,
        )
        values = np.full((21, 21), 0.2)
        values[6:15, 6:15] = 0.7
        u0 = GridImage(values)
        network = CurveNetwork([square], 20, 20)
        energy, means = pc_energy(network, u0, sigma=0.01, lam=1.0)
        assert energy == pytest.approx(0.01 * 36.0)
        assert sorted(means) == pytest.approx([0.2, 0.7])

    def test_pc_energy_means_are_optimal(self):
        """Test shifting any region constant by 1e-3 raises the piecewise-constant energy."""
        u0 = add_noise(
            ImageGenerator.two_region(
                30, 30, RegionSpec(shape="disk", inside=0.8, outside=0.2, radius=8)
            ),
            0.1,
            rng_seed=4,
        )
        network = CurveNetwork([SeedGenerator.circle((15.0, 15.0), 8.0, 32)], 30, 30)
        energy, means = pc_energy(network, u0, sigma=0.01, lam=1.0)
        for k in range(len(means)):
            for delta in (1e-3, -1e-3):
                shifted = means.copy()
                shifted[k] += delta
                assert pc_energy(network, u0, 0.01, 1.0, means=shifted)[0] > energy

    def test_pc_energy_prefers_the_true_disk(self):
        """Test a circle displaced from the disk boundary has a higher energy."""
        u0 = ImageGenerator.two_region(
            30, 30, RegionSpec(shape="disk", inside=0.8, outside=0.2, radius=8)
        )

        def energy_at(cx: float) -> float:
            network = CurveNetwork([SeedGenerator.circle((cx, 15.0), 8.0, 32)], 30, 30)
            return pc_energy(network, u0, sigma=0.01, lam=1.0)[0]

        assert energy_at(18.0) > energy_at(15.0)

    def test_pc_energy_needs_closed_curves(self):
        """Test open curves are rejected."""
        network = CurveNetwork([SeedGenerator.horizontal_segment(2.0, 10.0, 5.5)], 20, 20)
        with pytest.raises(ContractViolation):
            pc_energy(network, GridImage(np.zeros((21, 21))), 0.1, 0.1)

    def test_region_mean_field(self):
        """Test the mean field is constant on each region."""
        network = CurveNetwork([vertical_cut(10.5, 20)], 20, 20)
        rng = np.random.default_rng(8)
        u0 = GridImage(rng.uniform(0, 1, (21, 21)))
        field = EnergyAudit.region_mean_field(network, u0)
        assert np.allclose(field.values[:11], u0.values[:11].mean())
        assert np.allclose(field.values[11:], u0.values[11:].mean())

    def test_jump_across(self):
        """Test the jump across a curve lying on an edge."""
        u0 = step_image(20, 10)
        curve = vertical_cut(10.5, 20)
        assert jump_across(curve, 5, u0, 1.5) == pytest.approx(1.0)
        flat = GridImage(np.full((21, 21), 0.4))
        assert jump_across(curve, 5, flat, 1.5) == pytest.approx(0.0)
