"""
EdgeTracer Energy Audit

Discrete Mumford-Shah energy with alpha-weighted links, the piecewise-constant
energy over curve-bounded regions, and jumps of a field across curves.
"""

import logging
from typing import Optional, Tuple

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

from denoiser import EdgePreservingDenoiser
from errors import ContractViolation
from evolver import CurveEvolver
from geometry import CurveGeometry
from imaging import GridSampler
from models import CurveNetwork, EnergyBreakdown, GridImage, LinkMasks, PolygonalCurve

logger = logging.getLogger(__name__)


class EnergyAudit:
    """Energy evaluation for logging, tests and postprocessing decisions."""

    @staticmethod
    def link_alphas(
        network: CurveNetwork, masks: Optional[LinkMasks] = None
    ) -> Tuple[np.ndarray, np.ndarray]:
        """
        Fraction alpha of every link covered by the curves.

        Crossed links carry 1, free links 0, and the two designated links of each
        free endpoint carry its fractional alpha_x (vertical link at z1) and
        alpha_y (horizontal link at z2).

        Returns:
            (horizontal alphas shaped (n_x, n_y+1), vertical alphas shaped (n_x+1, n_y))
        """
        if masks is None:
            masks = EdgePreservingDenoiser.compute_masks(network)
        alpha_h = masks.crossed_horizontal().astype(float)
        alpha_v = masks.crossed_vertical().astype(float)
        for curve in network.curves:
            for rho in curve.free_ends():
                point = curve.nodes[curve.end_index(rho)]
                tangent = CurveGeometry.endpoint_tangent(curve, rho)
                stencil = CurveEvolver.endpoint_stencil(
                    point, tangent, rho, network.n_x, network.n_y, network.h
                )
                z1, z2 = stencil.z1, stencil.z2
                alpha_v[z1.i, z1.j] = max(alpha_v[z1.i, z1.j], stencil.alpha_x)
                alpha_h[z2.i, z2.j] = max(alpha_h[z2.i, z2.j], stencil.alpha_y)
        return alpha_h, alpha_v

    @staticmethod
    def discrete_ms_energy(
        network: CurveNetwork, u: GridImage, u0: GridImage, sigma: float, lam: float
    ) -> EnergyBreakdown:
        """
        E^h = sigma |Gamma| + sum h^2 (1 - alpha) (difference quotient)^2
              + lambda h^2 sum (u0 - u)^2
        """
        if u.values.shape != u0.values.shape:
            raise ContractViolation(f"Field shapes differ: {u.values.shape} vs {u0.values.shape}")
        h2 = u.h ** 2
        alpha_h, alpha_v = EnergyAudit.link_alphas(network)
        dx, dy = GridSampler.difference_fields(u)
        gradient = h2 * float(
            np.sum((1.0 - alpha_h) * dx ** 2) + np.sum((1.0 - alpha_v) * dy ** 2)
        )
        fidelity = lam * h2 * float(np.sum((u0.values - u.values) ** 2))
        length = sigma * CurveGeometry.total_length(network)
        return EnergyBreakdown(length, gradient, fidelity)

    # ========================================================================
    # PIECEWISE-CONSTANT REGIONS
    # ========================================================================

    @staticmethod
    def region_labels(masks: LinkMasks) -> Tuple[int, np.ndarray]:
        """4-connected components of the grid graph with crossed links removed."""
        shape = (masks.vertical.shape[0], masks.horizontal.shape[1])
        index = np.arange(shape[0] * shape[1]).reshape(shape)
        open_h = ~masks.crossed_horizontal()
        open_v = ~masks.crossed_vertical()
        rows = np.concatenate([index[:-1, :][open_h], index[:, :-1][open_v]])
        cols = np.concatenate([index[1:, :][open_h], index[:, 1:][open_v]])
        graph = sp.coo_matrix(
            (np.ones(rows.size), (rows, cols)), shape=(index.size, index.size)
        ).tocsr()
        count, labels = connected_components(graph, directed=False)
        return count, labels.reshape(shape)

    @staticmethod
    def region_means(u0: GridImage, labels: np.ndarray, count: int) -> np.ndarray:
        sums = np.bincount(labels.ravel(), weights=u0.values.ravel(), minlength=count)
        sizes = np.bincount(labels.ravel(), minlength=count)
        return sums / np.maximum(sizes, 1)

    @staticmethod
    def region_mean_field(network: CurveNetwork, u0: GridImage) -> GridImage:
        """u0 replaced by its mean over each curve-bounded region."""
        masks = EdgePreservingDenoiser.compute_masks(network)
        count, labels = EnergyAudit.region_labels(masks)
        means = EnergyAudit.region_means(u0, labels, count)
        return u0.with_values(means[labels])

    @staticmethod
    def pc_energy(
        network: CurveNetwork,
        u0: GridImage,
        sigma: float,
        lam: float,
        means: Optional[np.ndarray] = None,
    ) -> Tuple[float, np.ndarray]:
        """
        sigma |Gamma| + lambda sum_k sum_{z in region k} h^2 (u0 - c_k)^2.

        Returns:
            (energy, region means); `means` overrides the optimal constants
        """
        if any(not curve.closed for curve in network.curves):
            raise ContractViolation("Piecewise-constant energy needs closed curves only")
        masks = EdgePreservingDenoiser.compute_masks(network)
        count, labels = EnergyAudit.region_labels(masks)
        optimal = EnergyAudit.region_means(u0, labels, count)
        constants = optimal if means is None else np.asarray(means, dtype=float)
        fidelity = lam * u0.h ** 2 * float(np.sum((u0.values - constants[labels]) ** 2))
        energy = sigma * CurveGeometry.total_length(network) + fidelity
        return energy, optimal

    # ========================================================================
    # JUMPS
    # ========================================================================

    @staticmethod
    def jumps_along(curve: PolygonalCurve, field: GridImage, a: float) -> np.ndarray:
        """|field(X_j + a omega_j) - field(X_j - a omega_j)| per node; omega = nu at open ends."""
        offset = a * field.h * CurveGeometry.weighted_normals(curve)
        ahead = GridSampler.sample_many(field, curve.nodes + offset)
        behind = GridSampler.sample_many(field, curve.nodes - offset)
        return np.abs(ahead - behind)

    @staticmethod
    def jump_across(curve: PolygonalCurve, j: int, field: GridImage, a: float) -> float:
        return float(EnergyAudit.jumps_along(curve, field, a)[j % curve.n_nodes])


def discrete_ms_energy(network, u, u0, sigma: float, lam: float) -> EnergyBreakdown:
    return EnergyAudit.discrete_ms_energy(network, u, u0, sigma, lam)


def pc_energy(
    network, u0, sigma: float, lam: float, means: Optional[np.ndarray] = None
) -> Tuple[float, np.ndarray]:
    return EnergyAudit.pc_energy(network, u0, sigma, lam, means=means)


def jump_across(curve, j: int, field: GridImage, a: float) -> float:
    return EnergyAudit.jump_across(curve, j, field, a)
