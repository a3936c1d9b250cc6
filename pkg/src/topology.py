"""
EdgeTracer Topology Module

Background-grid collision detection and the topology changes it triggers:
closing and merging free ends, splitting and merging curves, deleting short
curves, attaching free ends to the image boundary and freezing triple junctions.
"""

import logging
from collections import defaultdict
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from errors import TopologyError
from models import (
    CurveNetwork,
    EndpointKind,
    EventKind,
    PolygonalCurve,
    TopologyEvent,
)

logger = logging.getLogger(__name__)

NodeRef = Tuple[int, int]

NEIGHBOUR_WINDOW = 2  # along-curve index distance that never counts as a collision
MIN_NODES = 3


class BackgroundGrid:
    """Uniform cells of size c holding the (curve id, node index) pairs that fall inside."""

    def __init__(self, cell_size: float):
        if not cell_size > 0:
            raise TopologyError(f"Background cell size must be positive, got {cell_size}")
        self.cell_size = cell_size
        self.cells: Dict[Tuple[int, int], List[NodeRef]] = defaultdict(list)
        self.positions: Dict[NodeRef, np.ndarray] = {}

    def cell_of(self, point: np.ndarray) -> Tuple[int, int]:
        return int(np.floor(point[0] / self.cell_size)), int(np.floor(point[1] / self.cell_size))

    def register(self, network: CurveNetwork) -> "BackgroundGrid":
        for curve in network.curves:
            for index, point in enumerate(curve.nodes):
                ref = (curve.curve_id, index)
                self.cells[self.cell_of(point)].append(ref)
                self.positions[ref] = point
        return self

    def candidates(self, point: np.ndarray) -> List[NodeRef]:
        """Nodes registered in the cell of `point` and its eight neighbours."""
        ci, cj = self.cell_of(point)
        found: List[NodeRef] = []
        for di in (-1, 0, 1):
            for dj in (-1, 0, 1):
                found.extend(self.cells.get((ci + di, cj + dj), ()))
        return found


class TopologyManager:
    """Detection and application of topology events."""

    @staticmethod
    def _role(curve: PolygonalCurve, index: int) -> str:
        """'free' for an active free end, 'fixed' for other ends, 'interior' otherwise."""
        if curve.closed or 0 < index < curve.n_nodes - 1:
            return "interior"
        rho = 0 if index == 0 else 1
        if curve.end_kind(rho) is EndpointKind.FREE and not curve.end_frozen(rho):
            return "free"
        return "fixed"

    @staticmethod
    def _index_distance(curve: PolygonalCurve, p: int, q: int) -> int:
        d = abs(p - q)
        return min(d, curve.n_nodes - d) if curve.closed else d

    @staticmethod
    def _classify(
        network: CurveNetwork, a: NodeRef, b: NodeRef
    ) -> Optional[EventKind]:
        curve_a, curve_b = network.get(a[0]), network.get(b[0])
        role_a = TopologyManager._role(curve_a, a[1])
        role_b = TopologyManager._role(curve_b, b[1])
        if "fixed" in (role_a, role_b):
            return None
        same = a[0] == b[0]
        if same and TopologyManager._index_distance(curve_a, a[1], b[1]) <= NEIGHBOUR_WINDOW:
            return None
        if role_a == "free" and role_b == "free":
            return EventKind.FREE_ENDS_CLOSE if same else EventKind.FREE_ENDS_MERGE
        if "free" in (role_a, role_b):
            return EventKind.TRIPLE_JUNCTION
        return EventKind.SPLIT if same else EventKind.CURVE_PAIR_MERGE

    @staticmethod
    def detect(
        network: CurveNetwork,
        grid_cell_size: float,
        l_min: Optional[float] = None,
        min_nodes: int = MIN_NODES,
    ) -> List[TopologyEvent]:
        """
        Events of the current network, one per (kind, curves), in application order.

        Two nodes collide when they are closer than half a cell and are not
        along-curve neighbours. Curves shorter than l_min (default 2 cells) or with
        fewer than min_nodes nodes are deleted; free ends within one cell of the
        image edge attach to it.
        """
        l_min = 2.0 * grid_cell_size if l_min is None else l_min
        radius = 0.5 * grid_cell_size
        grid = BackgroundGrid(grid_cell_size).register(network)
        best: Dict[Tuple, TopologyEvent] = {}

        def offer(event: TopologyEvent) -> None:
            key = (event.kind, event.curve_ids)
            current = best.get(key)
            if current is None or (event.distance, event.participants) < (
                current.distance,
                current.participants,
            ):
                best[key] = event

        for ref, point in grid.positions.items():
            for other in grid.candidates(point):
                if other <= ref:
                    continue
                distance = float(np.hypot(*(grid.positions[other] - point)))
                if distance >= radius:
                    continue
                kind = TopologyManager._classify(network, ref, other)
                if kind is not None:
                    offer(TopologyEvent(kind, tuple(sorted((ref, other))), distance))

        width, height = network.extent
        for curve in network.curves:
            if curve.length() < l_min or curve.n_nodes < min_nodes:
                offer(TopologyEvent(EventKind.CURVE_DELETE, ((curve.curve_id, 0),), curve.length()))
                continue
            for rho in (0, 1):
                index = curve.end_index(rho)
                if TopologyManager._role(curve, index) != "free":
                    continue
                x, y = curve.nodes[index]
                gap = min(x, width - x, y, height - y)
                if gap < grid_cell_size:
                    offer(TopologyEvent(EventKind.BOUNDARY_ATTACH, ((curve.curve_id, index),), gap))

        return sorted(best.values(), key=TopologyEvent.sort_key)

    # ========================================================================
    # APPLY
    # ========================================================================

    @staticmethod
    def _require(network: CurveNetwork, event: TopologyEvent) -> List[PolygonalCurve]:
        curves = []
        for curve_id in event.curve_ids:
            curve = network.get(curve_id)
            if curve is None:
                raise TopologyError(f"{event.kind.value}: curve {curve_id} not in network")
            curves.append(curve)
        for curve_id, index in event.participants:
            if not 0 <= index < network.get(curve_id).n_nodes:
                raise TopologyError(f"{event.kind.value}: node {index} missing on curve {curve_id}")
        return curves

    @staticmethod
    def _clean(curve: PolygonalCurve) -> Optional[PolygonalCurve]:
        """Drop consecutive duplicate nodes; None when too few nodes remain."""
        nodes = curve.nodes
        keep = np.ones(len(nodes), dtype=bool)
        keep[1:] = np.any(nodes[1:] != nodes[:-1], axis=1)
        nodes = nodes[keep]
        if curve.closed:
            while len(nodes) > 1 and np.array_equal(nodes[0], nodes[-1]):
                nodes = nodes[:-1]
        if len(nodes) < (3 if curve.closed else 2):
            logger.info(f"Curve {curve.curve_id} dropped after topology change")
            return None
        return curve.with_nodes(nodes)

    @staticmethod
    def _cycle(nodes: np.ndarray, start: int, stop: int) -> np.ndarray:
        """Nodes start, start+1, ..., stop (inclusive) walking periodically."""
        n = len(nodes)
        count = (stop - start) % n + 1
        return nodes[(start + np.arange(count)) % n]

    @staticmethod
    def _close(network: CurveNetwork, event: TopologyEvent) -> List[PolygonalCurve]:
        (curve,) = TopologyManager._require(network, event)
        (_, p), (_, q) = event.participants
        if curve.closed or {p, q} != {0, curve.n_nodes - 1}:
            raise TopologyError(f"free-ends-close needs both ends of open curve {curve.curve_id}")
        fused = 0.5 * (curve.nodes[0] + curve.nodes[-1])
        nodes = np.vstack([fused, curve.nodes[1:-1]])
        return [PolygonalCurve(nodes, EndpointKind.CLOSED, EndpointKind.CLOSED, curve.curve_id)]

    @staticmethod
    def _merge_ends(network: CurveNetwork, event: TopologyEvent) -> List[PolygonalCurve]:
        TopologyManager._require(network, event)
        (id_a, p), (id_b, q) = event.participants
        first, second = network.get(id_a), network.get(id_b)
        if first.closed or second.closed:
            raise TopologyError("free-ends-merge needs two open curves")
        if p == 0:
            first = first.reversed()
        elif p != first.n_nodes - 1:
            raise TopologyError(f"Node {p} is not an end of curve {id_a}")
        if q == second.n_nodes - 1:
            second = second.reversed()
        elif q != 0:
            raise TopologyError(f"Node {q} is not an end of curve {id_b}")
        fused = 0.5 * (first.nodes[-1] + second.nodes[0])
        nodes = np.vstack([first.nodes[:-1], fused, second.nodes[1:]])
        return [
            PolygonalCurve(
                nodes,
                first.kind_start,
                second.kind_end,
                min(id_a, id_b),
                frozen_start=first.frozen_start,
                frozen_end=second.frozen_end,
            )
        ]

    @staticmethod
    def _split(
        network: CurveNetwork, event: TopologyEvent, next_id: int
    ) -> List[PolygonalCurve]:
        (curve,) = TopologyManager._require(network, event)
        (_, p), (_, q) = event.participants
        p, q = min(p, q), max(p, q)
        nodes = curve.nodes
        loop = nodes[p + 1:q]
        if curve.closed:
            rest = TopologyManager._cycle(nodes, q + 1, p - 1)
            pieces = [
                PolygonalCurve(loop, EndpointKind.CLOSED, EndpointKind.CLOSED, curve.curve_id)
                if len(loop) >= 3 else None,
                PolygonalCurve(rest, EndpointKind.CLOSED, EndpointKind.CLOSED, next_id)
                if len(rest) >= 3 else None,
            ]
        else:
            remainder = np.vstack([nodes[:p], nodes[q + 1:]])
            pieces = [
                curve.with_nodes(remainder),
                PolygonalCurve(loop, EndpointKind.CLOSED, EndpointKind.CLOSED, next_id)
                if len(loop) >= 3 else None,
            ]
        return [piece for piece in pieces if piece is not None]

    @staticmethod
    def _merge_pair(
        network: CurveNetwork, event: TopologyEvent, next_id: int
    ) -> List[PolygonalCurve]:
        TopologyManager._require(network, event)
        (id_a, p), (id_b, q) = event.participants
        first, second = network.get(id_a), network.get(id_b)

        tangent_a = first.nodes[(p + 1) % first.n_nodes] - first.nodes[p - 1]
        tangent_b = second.nodes[(q + 1) % second.n_nodes] - second.nodes[q - 1]
        if float(tangent_a @ tangent_b) > 0:
            second = second.reversed()
            q = second.n_nodes - 1 - q

        A, B = first.nodes, second.nodes
        if first.closed and second.closed:
            nodes = np.vstack([
                TopologyManager._cycle(A, p + 1, p - 1),
                TopologyManager._cycle(B, q + 1, q - 1),
            ])
            return [PolygonalCurve(nodes, EndpointKind.CLOSED, EndpointKind.CLOSED, id_a)]
        if first.closed:
            nodes = np.vstack([B[:q], TopologyManager._cycle(A, p + 1, p - 1), B[q + 1:]])
            return [second.with_nodes(nodes, curve_id=id_a)]
        if second.closed:
            nodes = np.vstack([A[:p], TopologyManager._cycle(B, q + 1, q - 1), A[p + 1:]])
            return [first.with_nodes(nodes)]
        return [
            PolygonalCurve(
                np.vstack([A[:p], B[q + 1:]]), first.kind_start, second.kind_end, id_a,
                frozen_start=first.frozen_start, frozen_end=second.frozen_end,
            ),
            PolygonalCurve(
                np.vstack([B[:q], A[p + 1:]]), second.kind_start, first.kind_end, next_id,
                frozen_start=second.frozen_start, frozen_end=first.frozen_end,
            ),
        ]

    @staticmethod
    def _freeze(network: CurveNetwork, event: TopologyEvent) -> List[PolygonalCurve]:
        curves = TopologyManager._require(network, event)
        updated = []
        for curve in curves:
            changes = {}
            for curve_id, index in event.participants:
                if curve_id != curve.curve_id or TopologyManager._role(curve, index) != "free":
                    continue
                key = "frozen_start" if index == 0 else "frozen_end"
                changes[key] = True
                logger.warning(
                    f"Triple junction at curve {curve.curve_id} node {index}; endpoint frozen"
                )
            updated.append(curve.with_nodes(curve.nodes, **changes) if changes else curve)
        return updated

    @staticmethod
    def _attach(network: CurveNetwork, event: TopologyEvent) -> List[PolygonalCurve]:
        (curve,) = TopologyManager._require(network, event)
        ((_, index),) = event.participants
        if TopologyManager._role(curve, index) != "free":
            raise TopologyError(f"Node {index} of curve {curve.curve_id} is not a free end")
        width, height = network.extent
        side, _ = EndpointKind.nearest_side(curve.nodes[index], width, height)
        nodes = curve.nodes.copy()
        nodes[index, side.axis] = side.edge_coordinate(network.n_x, network.n_y, network.h)
        key = "kind_start" if index == 0 else "kind_end"
        return [curve.with_nodes(nodes, **{key: side})]

    @staticmethod
    def apply(network: CurveNetwork, event: TopologyEvent) -> CurveNetwork:
        """Network after one event; curve order is kept, new curves are appended."""
        next_id = network.next_id()
        if event.kind is EventKind.CURVE_DELETE:
            TopologyManager._require(network, event)
            replacement: List[PolygonalCurve] = []
        elif event.kind is EventKind.FREE_ENDS_CLOSE:
            replacement = TopologyManager._close(network, event)
        elif event.kind is EventKind.FREE_ENDS_MERGE:
            replacement = TopologyManager._merge_ends(network, event)
        elif event.kind is EventKind.SPLIT:
            replacement = TopologyManager._split(network, event, next_id)
        elif event.kind is EventKind.CURVE_PAIR_MERGE:
            replacement = TopologyManager._merge_pair(network, event, next_id)
        elif event.kind is EventKind.TRIPLE_JUNCTION:
            replacement = TopologyManager._freeze(network, event)
        elif event.kind is EventKind.BOUNDARY_ATTACH:
            replacement = TopologyManager._attach(network, event)
        else:
            raise TopologyError(f"Unsupported event kind: {event.kind}")

        replacement = [c for c in (TopologyManager._clean(c) for c in replacement) if c is not None]
        touched = set(event.curve_ids)
        curves = []
        for curve in network.curves:
            if curve.curve_id in touched:
                curves.extend(c for c in replacement if c.curve_id == curve.curve_id)
            else:
                curves.append(curve)
        curves.extend(c for c in replacement if c.curve_id not in touched)
        return network.with_curves(curves)

    @staticmethod
    def apply_all(
        network: CurveNetwork, events: Sequence[TopologyEvent]
    ) -> Tuple[CurveNetwork, List[TopologyEvent]]:
        """Apply events in order, skipping any that touch a curve already changed this round."""
        changed = set()
        applied = []
        for event in sorted(events, key=TopologyEvent.sort_key):
            if changed & set(event.curve_ids):
                logger.debug(f"Skipping {event.kind.value} on curves {event.curve_ids}")
                continue
            before = {c.curve_id for c in network.curves}
            network = TopologyManager.apply(network, event)
            after = {c.curve_id for c in network.curves}
            changed |= set(event.curve_ids) | (after - before)
            applied.append(event)
            logger.info(f"Applied {event.kind.value} on curves {event.curve_ids}")
        return network, applied


def detect(network: CurveNetwork, grid_cell_size: float, l_min: Optional[float] = None):
    return TopologyManager.detect(network, grid_cell_size, l_min)


def apply(network: CurveNetwork, event: TopologyEvent) -> CurveNetwork:
    return TopologyManager.apply(network, event)
