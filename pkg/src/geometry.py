"""
EdgeTracer Curve Geometry

Discrete differential geometry of polygonal curves: normals, tangents, the
second difference operator, remeshing, gridline crossings and seed curves.
"""

import logging
import math
from typing import List, Set, Tuple

import numpy as np

from errors import ContractViolation, GeometryError, ParameterError
from models import CurveNetwork, EndpointKind, PolygonalCurve

logger = logging.getLogger(__name__)

Link = Tuple[int, int]


def perp(v: np.ndarray) -> np.ndarray:
    """Anticlockwise rotation by pi/2: (x, y) -> (-y, x)."""
    v = np.asarray(v, dtype=float)
    out = np.empty_like(v)
    out[..., 0] = -v[..., 1]
    out[..., 1] = v[..., 0]
    return out


class CurveGeometry:
    """Normals, tangents and the second difference quotient of a polygonal curve."""

    @staticmethod
    def _node(curve: PolygonalCurve, j: int) -> np.ndarray:
        if curve.closed:
            return curve.nodes[j % curve.n_nodes]
        if not 0 <= j < curve.n_nodes:
            raise ContractViolation(f"Node index {j} outside 0..{curve.n_nodes - 1}")
        return curve.nodes[j]

    @staticmethod
    def segment_normal(curve: PolygonalCurve, j: int) -> np.ndarray:
        """nu_{j-1/2} = (X_j - X_{j-1})^perp / h_{j-1/2}."""
        last = curve.n_nodes if curve.closed else curve.n_nodes - 1
        if not 1 <= j <= last:
            raise ContractViolation(f"Segment index {j} outside 1..{last}")
        d = CurveGeometry._node(curve, j) - CurveGeometry._node(curve, j - 1)
        length = float(np.hypot(*d))
        if length == 0.0:
            raise GeometryError(f"Degenerate segment {j - 1}-{j} on curve {curve.curve_id}")
        return perp(d) / length

    @staticmethod
    def segment_normals(curve: PolygonalCurve) -> np.ndarray:
        """All unit segment normals; row k is nu_{k+1/2}."""
        segments = curve.segments()
        lengths = np.linalg.norm(segments, axis=1)
        if np.any(lengths == 0.0):
            raise GeometryError(f"Degenerate segment on curve {curve.curve_id}")
        return perp(segments) / lengths[:, None]

    @staticmethod
    def weighted_normal(curve: PolygonalCurve, j: int) -> np.ndarray:
        """omega_j = (X_{j+1} - X_{j-1})^perp / (h_{j-1/2} + h_{j+1/2}); nu at open ends."""
        if not curve.closed:
            if j == 0:
                return CurveGeometry.segment_normal(curve, 1)
            if j == curve.n_nodes - 1:
                return CurveGeometry.segment_normal(curve, curve.n_nodes - 1)
        previous = CurveGeometry._node(curve, j - 1)
        current = CurveGeometry._node(curve, j)
        following = CurveGeometry._node(curve, j + 1)
        total = np.hypot(*(current - previous)) + np.hypot(*(following - current))
        if total == 0.0:
            raise GeometryError(f"Degenerate spacing at node {j} of curve {curve.curve_id}")
        return perp(following - previous) / total

    @staticmethod
    def weighted_normals(curve: PolygonalCurve) -> np.ndarray:
        """omega_j for every node, shape (n_nodes, 2)."""
        nodes = curve.nodes
        spacings = curve.spacings()
        if np.any(spacings == 0.0):
            raise GeometryError(f"Degenerate spacing on curve {curve.curve_id}")
        if curve.closed:
            chord = np.roll(nodes, -1, axis=0) - np.roll(nodes, 1, axis=0)
            total = spacings + np.roll(spacings, 1)
            return perp(chord) / total[:, None]

        omega = np.empty_like(nodes)
        omega[1:-1] = perp(nodes[2:] - nodes[:-2]) / (spacings[:-1] + spacings[1:])[:, None]
        normals = CurveGeometry.segment_normals(curve)
        omega[0] = normals[0]
        omega[-1] = normals[-1]
        return omega

    @staticmethod
    def endpoint_tangent(curve: PolygonalCurve, which_end: int) -> np.ndarray:
        """tau_0 = (X_1 - X_0)/h_{1/2}, tau_N = (X_N - X_{N-1})/h_{N-1/2}."""
        if curve.closed:
            raise ContractViolation("Closed curves have no endpoint tangents")
        if which_end not in (0, 1):
            raise ContractViolation(f"which_end must be 0 or 1, got {which_end}")
        nodes = curve.nodes
        d = nodes[1] - nodes[0] if which_end == 0 else nodes[-1] - nodes[-2]
        length = float(np.hypot(*d))
        if length == 0.0:
            raise GeometryError(f"Degenerate end segment on curve {curve.curve_id}")
        return d / length

    @staticmethod
    def laplacian_coefficients(
        old_spacings: np.ndarray, j: int, closed: bool
    ) -> Tuple[float, float, float]:
        """Weights (c_prev, c_self, c_next) of Delta_2 at node j for the given old spacings."""
        m = len(old_spacings)
        h_minus = old_spacings[(j - 1) % m] if closed else old_spacings[j - 1]
        h_plus = old_spacings[j % m] if closed else old_spacings[j]
        if h_minus <= 0 or h_plus <= 0:
            raise GeometryError(f"Degenerate spacing around node {j}")
        scale = 2.0 / (h_minus + h_plus)
        return scale / h_minus, -scale * (1.0 / h_minus + 1.0 / h_plus), scale / h_plus

    @staticmethod
    def discrete_laplacian(
        new_nodes: np.ndarray, old_spacings: np.ndarray, j: int, closed: bool = False
    ) -> np.ndarray:
        """
        Delta_2 X_j with positions from the new curve and spacings from the old one.

        old_spacings[k] is h_{k+1/2} of the old curve.
        """
        new_nodes = np.asarray(new_nodes, dtype=float)
        n = len(new_nodes)
        if not closed and not 0 < j < n - 1:
            raise ContractViolation(f"Delta_2 needs an interior node, got {j} of {n}")
        c_prev, c_self, c_next = CurveGeometry.laplacian_coefficients(
            np.asarray(old_spacings, dtype=float), j, closed
        )
        return (
            c_prev * new_nodes[(j - 1) % n]
            + c_self * new_nodes[j % n]
            + c_next * new_nodes[(j + 1) % n]
        )

    @staticmethod
    def total_length(network: CurveNetwork) -> float:
        return float(sum(curve.length() for curve in network.curves))


def segment_normal(curve: PolygonalCurve, j: int) -> np.ndarray:
    return CurveGeometry.segment_normal(curve, j)


def weighted_normal(curve: PolygonalCurve, j: int) -> np.ndarray:
    return CurveGeometry.weighted_normal(curve, j)


def endpoint_tangent(curve: PolygonalCurve, which_end: int) -> np.ndarray:
    return CurveGeometry.endpoint_tangent(curve, which_end)


def discrete_laplacian(new_nodes, old_spacings, j: int, closed: bool = False) -> np.ndarray:
    return CurveGeometry.discrete_laplacian(new_nodes, old_spacings, j, closed)


def total_length(network: CurveNetwork) -> float:
    return CurveGeometry.total_length(network)


class Remesher:
    """Keeps node spacings inside [h_min, h_max] without moving endpoints."""

    @staticmethod
    def band(h_target: float, h: float = 1.0) -> Tuple[float, float]:
        return 0.5 * h_target * h, 1.5 * h_target * h

    @staticmethod
    def _drop_duplicates(points: List[np.ndarray], closed: bool) -> List[np.ndarray]:
        kept = [points[0]]
        for point in points[1:]:
            if not np.array_equal(point, kept[-1]):
                kept.append(point)
        if closed:
            while len(kept) > 1 and np.array_equal(kept[0], kept[-1]):
                kept.pop()
        return kept

    @staticmethod
    def _split_long(points: List[np.ndarray], closed: bool, h_max: float) -> List[np.ndarray]:
        count = len(points) if closed else len(points) - 1
        out: List[np.ndarray] = []
        for k in range(count):
            start, end = points[k], points[(k + 1) % len(points)]
            out.append(start)
            length = float(np.hypot(*(end - start)))
            pieces = int(math.ceil(length / h_max)) if length > h_max else 1
            for q in range(1, pieces):
                out.append(start + (end - start) * (q / pieces))
        if not closed:
            out.append(points[-1])
        return out

    @staticmethod
    def remesh(curve: PolygonalCurve, h_min: float, h_max: float) -> PolygonalCurve:
        """
        Split segments longer than h_max; remove interior nodes next to segments
        shorter than h_min. Endpoints of open curves never move.
        """
        if not 0 < h_min < h_max:
            raise ParameterError(f"Remeshing band needs 0 < h_min < h_max, got {h_min}, {h_max}")
        closed = curve.closed
        points = Remesher._drop_duplicates([p for p in curve.nodes], closed)
        minimum = 3 if closed else 2
        if len(points) < minimum:
            raise GeometryError(f"Curve {curve.curve_id} collapsed to {len(points)} distinct nodes")
        points = Remesher._split_long(points, closed, h_max)

        for _ in range(10 * len(points) + 10):
            n = len(points)
            if n <= minimum:
                break
            array = np.array(points)
            following = np.roll(array, -1, axis=0) if closed else array[1:]
            spacings = np.linalg.norm(following - (array if closed else array[:-1]), axis=1)
            order = np.argsort(spacings, kind="stable")
            removed = False
            for k in order:
                if spacings[k] >= h_min:
                    break
                # segment k joins nodes k and k+1
                candidates = []
                for node in (k, (k + 1) % n):
                    if not closed and node in (0, n - 1):
                        continue
                    merged = np.hypot(*(points[(node + 1) % n] - points[(node - 1) % n]))
                    candidates.append((merged, node))
                if not candidates:
                    continue
                merged, node = min(candidates)
                previous, following_point = points[(node - 1) % n], points[(node + 1) % n]
                del points[node]
                if merged > h_max:
                    pieces = int(math.ceil(merged / h_max))
                    insert_at = node if node > 0 else len(points)
                    extra = [
                        previous + (following_point - previous) * (q / pieces)
                        for q in range(1, pieces)
                    ]
                    points[insert_at:insert_at] = extra
                removed = True
                break
            if not removed:
                break

        if len(points) == curve.n_nodes and np.array_equal(np.array(points), curve.nodes):
            return curve
        return curve.with_nodes(np.array(points))


def remesh(curve: PolygonalCurve, h_min: float, h_max: float) -> PolygonalCurve:
    return Remesher.remesh(curve, h_min, h_max)


class GridCrossings:
    """Pixel links crossed by curve segments."""

    EPS = 1e-12

    @staticmethod
    def _on_lines(lo: float, hi: float, count: int) -> range:
        """Integer line indices k in 0..count with lo <= k <= hi (grid units)."""
        first = max(int(math.ceil(lo - GridCrossings.EPS)), 0)
        last = min(int(math.floor(hi + GridCrossings.EPS)), count)
        return range(first, last + 1)

    @staticmethod
    def _links_at(t: float, count: int) -> List[int]:
        """Link indices i (1..count) whose interval [i-1, i] contains t (grid units)."""
        nearest = round(t)
        if abs(t - nearest) <= GridCrossings.EPS:
            return [i for i in (nearest, nearest + 1) if 1 <= i <= count]
        i = int(math.floor(t)) + 1
        return [i] if 1 <= i <= count else []

    @staticmethod
    def _links_between(lo: float, hi: float, count: int) -> List[int]:
        """Links overlapping [lo, hi] for a segment lying on a gridline."""
        first = max(int(math.ceil(lo - GridCrossings.EPS)), 1)
        last = min(int(math.floor(hi + GridCrossings.EPS)) + 1, count)
        return list(range(first, last + 1))

    @staticmethod
    def _segment_links(p: np.ndarray, q: np.ndarray, n_a: int, n_b: int) -> Set[Link]:
        """
        Links of the family lying on lines b = const (b = second coordinate),
        indexed (i, j) with i the link index along a and j the line index.
        """
        found: Set[Link] = set()
        lo, hi = sorted((p[1], q[1]))
        for j in GridCrossings._on_lines(lo, hi, n_b):
            if abs(q[1] - p[1]) <= GridCrossings.EPS:
                a_lo, a_hi = sorted((p[0], q[0]))
                for i in GridCrossings._links_between(a_lo, a_hi, n_a):
                    found.add((i, j))
                continue
            t = (j - p[1]) / (q[1] - p[1])
            a = p[0] + t * (q[0] - p[0])
            for i in GridCrossings._links_at(a, n_a):
                found.add((i, j))
        return found

    @staticmethod
    def gridline_crossings(network: CurveNetwork) -> Tuple[Set[Link], Set[Link]]:
        """
        Horizontal links (i, j) = [(i-1)h, ih] x {jh} and vertical links
        (i, j) = {ih} x [(j-1)h, jh] met by any curve segment, endpoints inclusive.
        """
        horizontal: Set[Link] = set()
        vertical: Set[Link] = set()
        h = network.h
        for curve in network.curves:
            nodes = curve.nodes / h
            following = np.roll(nodes, -1, axis=0) if curve.closed else nodes[1:]
            starts = nodes if curve.closed else nodes[:-1]
            for p, q in zip(starts, following):
                horizontal |= GridCrossings._segment_links(p, q, network.n_x, network.n_y)
                swapped = GridCrossings._segment_links(
                    p[::-1], q[::-1], network.n_y, network.n_x
                )
                vertical |= {(i, j) for j, i in swapped}
        return horizontal, vertical


def gridline_crossings(network: CurveNetwork) -> Tuple[Set[Link], Set[Link]]:
    return GridCrossings.gridline_crossings(network)


class SeedGenerator:
    """Initial curves for segmentation runs."""

    @staticmethod
    def horizontal_segment(
        x_start: float,
        x_end: float,
        y: float,
        spacing: float = 4.0,
        kind_start: EndpointKind = EndpointKind.FREE,
        kind_end: EndpointKind = EndpointKind.FREE,
        curve_id: int = 0,
    ) -> PolygonalCurve:
        if x_end <= x_start or spacing <= 0:
            raise ParameterError("Segment seed needs x_start < x_end and positive spacing")
        count = max(int(math.ceil((x_end - x_start) / spacing)), 1)
        x = np.linspace(x_start, x_end, count + 1)
        return PolygonalCurve(
            np.column_stack([x, np.full_like(x, y)]), kind_start, kind_end, curve_id
        )

    @staticmethod
    def circle(
        center: Tuple[float, float], radius: float, n_nodes: int, curve_id: int = 0
    ) -> PolygonalCurve:
        """Anticlockwise regular polygon inscribed in the circle."""
        if radius <= 0 or n_nodes < 3:
            raise ParameterError("Circle seed needs a positive radius and at least 3 nodes")
        angles = 2.0 * np.pi * np.arange(n_nodes) / n_nodes
        nodes = np.column_stack(
            [center[0] + radius * np.cos(angles), center[1] + radius * np.sin(angles)]
        )
        return PolygonalCurve(nodes, EndpointKind.CLOSED, EndpointKind.CLOSED, curve_id)

    @staticmethod
    def short_segment_grid(
        n_x: int,
        n_y: int,
        rows: int,
        cols: int,
        length: float,
        spacing: float = 4.0,
        h: float = 1.0,
    ) -> CurveNetwork:
        """rows x cols horizontal free segments centred in a regular tiling of the domain."""
        if rows < 1 or cols < 1:
            raise ParameterError("Seed grid needs at least one row and one column")
        width, height = n_x * h, n_y * h
        if length >= width / cols:
            raise ParameterError(f"Seed length {length} does not fit {cols} columns")
        curves = []
        for r in range(rows):
            y = (r + 0.5) * height / rows
            for c in range(cols):
                xc = (c + 0.5) * width / cols
                curves.append(
                    SeedGenerator.horizontal_segment(
                        xc - 0.5 * length, xc + 0.5 * length, y, spacing, curve_id=len(curves)
                    )
                )
        return CurveNetwork(curves, n_x, n_y, h)
