"""
EdgeTracer Edge-Preserving Denoiser

Minimizes sum_links A * ((u_a - u_b)/h)^2 + lambda * h^2 * sum (u0 - u)^2, where the
link weight A is zero on links cut by a curve and h^2 elsewhere.
"""

import logging
from typing import Optional, Tuple

import numpy as np
import scipy.sparse as sp

from errors import ParameterError
from geometry import GridCrossings
from imaging import GridSampler
from linalg import LinearSolver, SparseAssembler
from models import CurveNetwork, GridImage, LinkMasks

logger = logging.getLogger(__name__)


class EdgePreservingDenoiser:
    """Curve-aware smoothing of the input image."""

    @staticmethod
    def compute_masks(network: CurveNetwork) -> LinkMasks:
        horizontal_cut, vertical_cut = GridCrossings.gridline_crossings(network)
        h2 = network.h ** 2
        horizontal = np.full((network.n_x, network.n_y + 1), h2)
        vertical = np.full((network.n_x + 1, network.n_y), h2)
        for i, j in horizontal_cut:
            horizontal[i - 1, j] = 0.0
        for i, j in vertical_cut:
            vertical[i, j - 1] = 0.0
        return LinkMasks(horizontal, vertical, network.h)

    @staticmethod
    def _node_index(shape: Tuple[int, int]) -> np.ndarray:
        return np.arange(shape[0] * shape[1]).reshape(shape)

    @staticmethod
    def assemble_denoise_system(
        u0: GridImage, masks: LinkMasks, lam: float
    ) -> Tuple[sp.csr_matrix, np.ndarray]:
        """
        Stationarity system of the discrete energy.

        Row of node z: 2/h^2 * sum_links A (u_z - u_nb) + 2 lambda h^2 u_z = 2 lambda h^2 u0_z

        Returns:
            (SPD matrix, right-hand side) over nodes flattened in [i, j] order
        """
        if not lam > 0:
            raise ParameterError(f"lambda must be positive, got {lam}")
        h = u0.h
        shape = u0.values.shape
        index = EdgePreservingDenoiser._node_index(shape)
        n = index.size
        assembler = SparseAssembler(n)

        for weights, a, b in (
            (masks.horizontal, index[:-1, :], index[1:, :]),
            (masks.vertical, index[:, :-1], index[:, 1:]),
        ):
            w = 2.0 * weights.ravel() / h ** 2
            a, b = a.ravel(), b.ravel()
            assembler.add_block(a, a, w)
            assembler.add_block(b, b, w)
            assembler.add_block(a, b, -w)
            assembler.add_block(b, a, -w)

        mass = 2.0 * lam * h ** 2
        assembler.add_block(index.ravel(), index.ravel(), mass)
        return assembler.finalize(), mass * u0.values.ravel()

    @staticmethod
    def discrete_energy(u: np.ndarray, u0: GridImage, masks: LinkMasks, lam: float) -> float:
        """E_discr of the field u (array shaped like u0.values)."""
        field = GridImage(u, u0.h)
        dx, dy = GridSampler.difference_fields(field)
        smooth = float(np.sum(masks.horizontal * dx ** 2) + np.sum(masks.vertical * dy ** 2))
        fidelity = lam * u0.h ** 2 * float(np.sum((u0.values - field.values) ** 2))
        return smooth + fidelity

    @staticmethod
    def denoise_with_masks(
        u0: GridImage,
        masks: LinkMasks,
        lam: float,
        initial: Optional[GridImage] = None,
        tol: float = 1e-10,
    ) -> GridImage:
        matrix, rhs = EdgePreservingDenoiser.assemble_denoise_system(u0, masks, lam)
        x0 = None if initial is None else initial.values.ravel()
        solution = LinearSolver.solve_spd(matrix, rhs, tol=tol, x0=x0)
        values = np.clip(solution.reshape(u0.values.shape), 0.0, 1.0)
        return u0.with_values(values)

    @staticmethod
    def denoise(
        u0: GridImage,
        network: CurveNetwork,
        lam: float,
        initial: Optional[GridImage] = None,
    ) -> GridImage:
        """Minimizer of the discrete energy for the current network, clamped to [0, 1]."""
        masks = EdgePreservingDenoiser.compute_masks(network)
        cut = int(masks.crossed_horizontal().sum() + masks.crossed_vertical().sum())
        logger.debug(f"Denoising {u0.values.size} nodes with {cut} cut links")
        return EdgePreservingDenoiser.denoise_with_masks(u0, masks, lam, initial)


def compute_masks(network: CurveNetwork) -> LinkMasks:
    return EdgePreservingDenoiser.compute_masks(network)


def assemble_denoise_system(u0: GridImage, masks: LinkMasks, lam: float):
    return EdgePreservingDenoiser.assemble_denoise_system(u0, masks, lam)


def denoise(u0: GridImage, network: CurveNetwork, lam: float) -> GridImage:
    return EdgePreservingDenoiser.denoise(u0, network, lam)
