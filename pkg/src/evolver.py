"""
EdgeTracer Curve Evolver

One semi-implicit step of the curve evolution: interior nodes from a coupled
linear system in (X, kappa), then an explicit update of the free endpoints
driven by the alpha-factor grid terms, then remeshing.
"""

import logging
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np

from errors import GeometryError
from geometry import CurveGeometry, Remesher
from imaging import GridSampler
from linalg import LinearSolver, SparseAssembler
from models import (
    CurveNetwork,
    EndpointKind,
    EndpointStencil,
    EvolveParams,
    GridImage,
    GridPoint,
    PolygonalCurve,
    StepResult,
)

logger = logging.getLogger(__name__)

FREE_END_INSET = 1e-6  # free endpoints stay this far (in h) inside the domain


@dataclass
class EndpointVelocity:
    """Velocity of a free endpoint split along its tangent and normal."""
    v_tan: float
    v_n: float
    tangent: np.ndarray
    normal: np.ndarray
    stencil: EndpointStencil
    growth: float

    @property
    def displacement_rate(self) -> np.ndarray:
        return self.v_tan * self.tangent + self.v_n * self.normal


class CurveEvolver:
    """Time stepping of a CurveNetwork against an image pair (u0, u)."""

    # ========================================================================
    # FREE ENDPOINT TERMS
    # ========================================================================

    @staticmethod
    def endpoint_stencil(
        x_rho,
        tau_rho,
        rho: int,
        n_x: int,
        n_y: int,
        h: float = 1.0,
        sign_zero: float = 1.0,
    ) -> EndpointStencil:
        """
        Grid points z1, z2 and factors alpha_x, alpha_y of the endpoint cell.

        The cell corner z-- = h * floor(x / h). z1 is z-- or z+- by the sign of
        tau . e1, z2 is z-- or z-+ by the sign of tau . e2; start and end swap
        the roles of the two signs.
        """
        x, y = float(x_rho[0]), float(x_rho[1])
        if not (0.0 < x < n_x * h and 0.0 < y < n_y * h):
            raise GeometryError(f"Endpoint ({x}, {y}) is not strictly inside the image domain")

        def sign(value: float) -> float:
            return sign_zero if value == 0 else float(np.sign(value))

        i0 = min(int(np.floor(x / h)), n_x - 1)
        j0 = min(int(np.floor(y / h)), n_y - 1)
        lower = GridPoint(i0, j0)

        sx = sign(tau_rho[0])
        if (rho == 0 and sx > 0) or (rho == 1 and sx < 0):
            z1 = lower
            alpha_x = 1.0 - (x - z1.i * h) / h
        else:
            z1 = lower.shifted(1, 0)
            alpha_x = 1.0 - (z1.i * h - x) / h

        sy = sign(tau_rho[1])
        if (rho == 0 and sy > 0) or (rho == 1 and sy < 0):
            z2 = lower
            alpha_y = 1.0 - (y - z2.j * h) / h
        else:
            z2 = lower.shifted(0, 1)
            alpha_y = 1.0 - (z2.j * h - y) / h

        return EndpointStencil(
            z1=z1,
            z2=z2,
            alpha_x=float(np.clip(alpha_x, 0.0, 1.0)),
            alpha_y=float(np.clip(alpha_y, 0.0, 1.0)),
        )

    @staticmethod
    def _squared_jumps(stencil: EndpointStencil, u: GridImage) -> Tuple[float, float]:
        """(grad_2 u(z1))^2 and (grad_1 u(z2))^2."""
        g2 = GridSampler.forward_diff(u, stencil.z1, axis=2)
        g1 = GridSampler.forward_diff(u, stencil.z2, axis=1)
        return g2 * g2, g1 * g1

    @staticmethod
    def growth_indicator(
        stencil: EndpointStencil, tau, u: GridImage, sigma: float
    ) -> float:
        """|tau.e1| (grad_2 u(z1))^2 + |tau.e2| (grad_1 u(z2))^2 - sigma; positive means growth."""
        g2_sq, g1_sq = CurveEvolver._squared_jumps(stencil, u)
        return abs(tau[0]) * g2_sq + abs(tau[1]) * g1_sq - sigma

    @staticmethod
    def _surrounded_by_interior(stencil_corner: GridPoint, n_x: int, n_y: int) -> bool:
        i, j = stencil_corner.i, stencil_corner.j
        return 1 <= i and i + 1 <= n_x - 1 and 1 <= j and j + 1 <= n_y - 1

    @staticmethod
    def endpoint_velocity(
        curve: PolygonalCurve,
        rho: int,
        u: GridImage,
        params: EvolveParams,
        n_x: int,
        n_y: int,
    ) -> EndpointVelocity:
        tangent = CurveGeometry.endpoint_tangent(curve, rho)
        normal = CurveGeometry.weighted_normal(curve, curve.end_index(rho))
        point = curve.nodes[curve.end_index(rho)]
        stencil = CurveEvolver.endpoint_stencil(
            point, tangent, rho, n_x, n_y, u.h, params.sign_zero
        )
        g2_sq, g1_sq = CurveEvolver._squared_jumps(stencil, u)
        growth = abs(tangent[0]) * g2_sq + abs(tangent[1]) * g1_sq
        v_tan = params.sigma - growth if rho == 0 else growth - params.sigma

        bracket = (
            params.normal_weight(tangent[0]) * normal[0] * g2_sq
            + params.normal_weight(tangent[1]) * normal[1] * g1_sq
        )
        v_n = -bracket if rho == 0 else bracket
        if not params.endpoint_normal_motion:
            v_n = 0.0
        elif v_n != 0.0:
            corner = GridPoint(
                int(np.floor(point[0] / u.h)), int(np.floor(point[1] / u.h))
            )
            if not CurveEvolver._surrounded_by_interior(corner, n_x, n_y):
                logger.warning(
                    f"Curve {curve.curve_id} end {rho} within one cell of the boundary; "
                    f"normal motion frozen"
                )
                v_n = 0.0
        return EndpointVelocity(v_tan, v_n, tangent, normal, stencil, growth - params.sigma)

    # ========================================================================
    # EXTERNAL TERM
    # ========================================================================

    @staticmethod
    def external_terms(
        curve: PolygonalCurve, u0: GridImage, u: GridImage, params: EvolveParams
    ) -> np.ndarray:
        """
        F_j = lambda [(u0(X) - u(X + a omega))^2 - (u0(X) - u(X - a omega))^2]

        Zero at the endpoints of open curves.
        """
        omega = CurveGeometry.weighted_normals(curve)
        offset = params.a * u.h * omega
        at_node = GridSampler.sample_many(u0, curve.nodes)
        ahead = GridSampler.sample_many(u, curve.nodes + offset)
        behind = GridSampler.sample_many(u, curve.nodes - offset)
        forcing = params.lam * ((at_node - ahead) ** 2 - (at_node - behind) ** 2)
        if not curve.closed:
            forcing[0] = 0.0
            forcing[-1] = 0.0
        return forcing

    @staticmethod
    def external_term(
        curve: PolygonalCurve, j: int, u0: GridImage, u: GridImage, params: EvolveParams
    ) -> float:
        return float(CurveEvolver.external_terms(curve, u0, u, params)[j % curve.n_nodes])

    # ========================================================================
    # INTERIOR SYSTEM
    # ========================================================================

    @staticmethod
    def unknown_nodes(curve: PolygonalCurve) -> List[int]:
        """Node indices solved implicitly: all nodes of a closed curve, else the interior."""
        if curve.closed:
            return list(range(curve.n_nodes))
        return list(range(1, curve.n_nodes - 1))

    @staticmethod
    def assemble_curve_system(
        curve: PolygonalCurve, forcing: np.ndarray, params: EvolveParams
    ):
        """
        Rows per unknown node k (columns 3k, 3k+1, 3k+2 hold x_j, y_j, kappa_j):

            3k:    omega_j . X_j / dt - sigma kappa_j = omega_j . X_j^old / dt + F_j
            3k+1:  kappa_j omega_j,x - Delta_2 x_j = 0
            3k+2:  kappa_j omega_j,y - Delta_2 y_j = 0

        Fixed open-curve endpoints enter the Delta_2 rows as right-hand side data.
        """
        nodes = curve.nodes
        n = curve.n_nodes
        closed = curve.closed
        unknowns = CurveEvolver.unknown_nodes(curve)
        local = {j: k for k, j in enumerate(unknowns)}
        omega = CurveGeometry.weighted_normals(curve)
        spacings = curve.spacings()

        assembler = SparseAssembler(3 * len(unknowns))
        rhs = np.zeros(3 * len(unknowns))
        for k, j in enumerate(unknowns):
            w = omega[j]
            row = 3 * k
            assembler.add(row, 3 * k, w[0] / params.dt)
            assembler.add(row, 3 * k + 1, w[1] / params.dt)
            assembler.add(row, 3 * k + 2, -params.sigma)
            rhs[row] = float(w @ nodes[j]) / params.dt + forcing[j]

            coefficients = CurveGeometry.laplacian_coefficients(spacings, j, closed)
            for axis in (0, 1):
                row = 3 * k + 1 + axis
                assembler.add(row, 3 * k + 2, w[axis])
                for offset, c in zip((-1, 0, 1), coefficients):
                    neighbour = (j + offset) % n if closed else j + offset
                    if neighbour in local:
                        assembler.add(row, 3 * local[neighbour] + axis, -c)
                    else:
                        rhs[row] += c * nodes[neighbour, axis]
        return assembler.finalize(), rhs, unknowns

    # ========================================================================
    # STEP
    # ========================================================================

    @staticmethod
    def _clamp(point: np.ndarray, width: float, height: float, inset: float = 0.0) -> np.ndarray:
        return np.array(
            [np.clip(point[0], inset, width - inset), np.clip(point[1], inset, height - inset)]
        )

    @staticmethod
    def _advance_curve(
        curve: PolygonalCurve,
        u0: Optional[GridImage],
        u: GridImage,
        params: EvolveParams,
        network: CurveNetwork,
    ) -> Tuple[np.ndarray, int]:
        old = curve.nodes
        new = old.copy()
        capped = 0

        unknowns = CurveEvolver.unknown_nodes(curve)
        if unknowns:
            if u0 is None:
                forcing = np.zeros(curve.n_nodes)
            else:
                forcing = CurveEvolver.external_terms(curve, u0, u, params)
            matrix, rhs, _ = CurveEvolver.assemble_curve_system(curve, forcing, params)
            solution = LinearSolver.solve_general(matrix, rhs)
            new[unknowns] = solution.reshape(-1, 3)[:, :2]

        if curve.closed:
            return new, capped

        width, height = network.extent
        limit = params.max_endpoint_shift * network.h
        for rho in (0, 1):
            index = curve.end_index(rho)
            kind = curve.end_kind(rho)
            if curve.end_frozen(rho):
                continue
            if kind is EndpointKind.FREE:
                velocity = CurveEvolver.endpoint_velocity(
                    curve, rho, u, params, network.n_x, network.n_y
                )
                shift = params.dt * velocity.displacement_rate
                size = float(np.hypot(*shift))
                if size > limit:
                    logger.warning(
                        f"Curve {curve.curve_id} end {rho} shift {size:.3g} capped to {limit:.3g}"
                    )
                    shift *= limit / size
                    capped += 1
                new[index] = CurveEvolver._clamp(
                    old[index] + shift, width, height, FREE_END_INSET * network.h
                )
            elif kind.is_boundary:
                neighbour = 1 if rho == 0 else curve.n_nodes - 2
                if neighbour in (0, curve.n_nodes - 1):
                    continue
                shift = new[neighbour] - old[neighbour]
                shift[kind.axis] = 0.0
                moved = CurveEvolver._clamp(old[index] + shift, width, height)
                moved[kind.axis] = kind.edge_coordinate(network.n_x, network.n_y, network.h)
                new[index] = moved
        return new, capped

    @staticmethod
    def advance(
        network: CurveNetwork,
        u: GridImage,
        params: EvolveParams,
        u0: Optional[GridImage] = None,
    ) -> StepResult:
        """
        Step every curve and remesh; without u0 the external term vanishes
        (pure curve-shortening of the interior).
        """
        width, height = network.extent
        h_min, h_max = Remesher.band(params.h_target, network.h)
        curves = []
        max_displacement = 0.0
        clamped = 0
        capped = 0

        for curve in network.curves:
            new, capped_here = CurveEvolver._advance_curve(curve, u0, u, params, network)
            capped += capped_here
            inside = np.column_stack(
                [np.clip(new[:, 0], 0.0, width), np.clip(new[:, 1], 0.0, height)]
            )
            escaped = int(np.sum(np.any(inside != new, axis=1)))
            if escaped:
                logger.warning(f"Curve {curve.curve_id}: {escaped} node(s) clamped to the domain")
                clamped += escaped
            if len(inside):
                max_displacement = max(
                    max_displacement, float(np.max(np.linalg.norm(inside - curve.nodes, axis=1)))
                )
            curves.append(Remesher.remesh(curve.with_nodes(inside), h_min, h_max))

        return StepResult(network.with_curves(curves), max_displacement, clamped, capped)

    @staticmethod
    def step(
        network: CurveNetwork,
        u: GridImage,
        params: EvolveParams,
        u0: Optional[GridImage] = None,
    ) -> CurveNetwork:
        """Advanced network only. Omitting u0 sets the forcing F to zero."""
        return CurveEvolver.advance(network, u, params, u0).network


def endpoint_stencil(x_rho, tau_rho, rho: int, n_x: int, n_y: int, h: float = 1.0,
                     sign_zero: float = 1.0) -> EndpointStencil:
    return CurveEvolver.endpoint_stencil(x_rho, tau_rho, rho, n_x, n_y, h, sign_zero)


def external_term(curve, j: int, u0: GridImage, u: GridImage, params: EvolveParams) -> float:
    return CurveEvolver.external_term(curve, j, u0, u, params)


def growth_indicator(stencil: EndpointStencil, tau, u: GridImage, sigma: float) -> float:
    return CurveEvolver.growth_indicator(stencil, tau, u, sigma)


def step(network: CurveNetwork, u: GridImage, params: EvolveParams,
         u0: Optional[GridImage] = None) -> CurveNetwork:
    """One curve step; u0=None means pure curvature flow with free-end motion."""
    return CurveEvolver.step(network, u, params, u0)
