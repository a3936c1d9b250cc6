"""
EdgeTracer Data Models

Defines core entities for images, polygonal curves, masks, energies and runs.
"""

from dataclasses import dataclass, field, asdict, replace
from enum import Enum
from typing import Optional, Dict, List, Any, Tuple

import numpy as np

from errors import ContractViolation, GeometryError, ParameterError


@dataclass(frozen=True, eq=False)
class GridImage:
    """Scalar field on the grid nodes (i*h, j*h), i in 0..n_x, j in 0..n_y."""
    values: np.ndarray  # shape (n_x + 1, n_y + 1), indexed [i, j]
    h: float = 1.0

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.ndim != 2 or values.shape[0] < 1 or values.shape[1] < 1:
            raise ContractViolation(f"Grid values must be a 2-D array, got shape {values.shape}")
        if not self.h > 0:
            raise ContractViolation(f"Grid spacing must be positive, got {self.h}")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def n_x(self) -> int:
        return self.values.shape[0] - 1

    @property
    def n_y(self) -> int:
        return self.values.shape[1] - 1

    @property
    def extent(self) -> Tuple[float, float]:
        return self.n_x * self.h, self.n_y * self.h

    def with_values(self, values: np.ndarray) -> "GridImage":
        return GridImage(values, self.h)

    def in_unit_range(self) -> bool:
        return bool(np.all(self.values >= 0.0) and np.all(self.values <= 1.0))

    def __getitem__(self, index):
        return self.values[index]


@dataclass(frozen=True)
class GridPoint:
    """Grid node z = (i*h, j*h)."""
    i: int
    j: int

    def position(self, h: float = 1.0) -> np.ndarray:
        return np.array([self.i * h, self.j * h])

    def shifted(self, di: int, dj: int) -> "GridPoint":
        return GridPoint(self.i + di, self.j + dj)


class EndpointKind(Enum):
    """How a curve ends: closed, free inside the image, or attached to one image edge."""
    CLOSED = "closed"
    FREE = "free"
    BOUNDARY_LEFT = "boundary-left"
    BOUNDARY_RIGHT = "boundary-right"
    BOUNDARY_BOTTOM = "boundary-bottom"
    BOUNDARY_TOP = "boundary-top"

    @property
    def is_boundary(self) -> bool:
        return self.value.startswith("boundary")

    @property
    def axis(self) -> int:
        """Coordinate fixed by a boundary-attached end (0 for x, 1 for y)."""
        if self in (EndpointKind.BOUNDARY_LEFT, EndpointKind.BOUNDARY_RIGHT):
            return 0
        if self in (EndpointKind.BOUNDARY_BOTTOM, EndpointKind.BOUNDARY_TOP):
            return 1
        raise ContractViolation(f"{self.value} is not a boundary attachment")

    def edge_coordinate(self, n_x: int, n_y: int, h: float) -> float:
        return {
            EndpointKind.BOUNDARY_LEFT: 0.0,
            EndpointKind.BOUNDARY_RIGHT: n_x * h,
            EndpointKind.BOUNDARY_BOTTOM: 0.0,
            EndpointKind.BOUNDARY_TOP: n_y * h,
        }[self]

    @staticmethod
    def nearest_side(point, width: float, height: float) -> Tuple["EndpointKind", float]:
        """Boundary kind of the image edge closest to point, and the distance to it."""
        x, y = float(point[0]), float(point[1])
        gaps = {
            EndpointKind.BOUNDARY_LEFT: x,
            EndpointKind.BOUNDARY_RIGHT: width - x,
            EndpointKind.BOUNDARY_BOTTOM: y,
            EndpointKind.BOUNDARY_TOP: height - y,
        }
        side = min(gaps, key=gaps.__getitem__)
        return side, gaps[side]


@dataclass(eq=False)
class PolygonalCurve:
    """
    Ordered node list X_0..X_N.

    Closed curves store each node once and index periodically; open curves carry
    one EndpointKind per end. Frozen ends keep their position during evolution.
    """
    nodes: np.ndarray
    kind_start: EndpointKind = EndpointKind.FREE
    kind_end: EndpointKind = EndpointKind.FREE
    curve_id: int = 0
    frozen_start: bool = False
    frozen_end: bool = False

    def __post_init__(self):
        self.nodes = np.array(self.nodes, dtype=float).reshape(-1, 2)
        if (self.kind_start is EndpointKind.CLOSED) != (self.kind_end is EndpointKind.CLOSED):
            raise ContractViolation("A curve is closed at both ends or at neither")
        minimum = 3 if self.closed else 2
        if len(self.nodes) < minimum:
            raise GeometryError(
                f"Curve {self.curve_id} needs at least {minimum} nodes, got {len(self.nodes)}"
            )

    @property
    def closed(self) -> bool:
        return self.kind_start is EndpointKind.CLOSED

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    def segments(self) -> np.ndarray:
        """Segment vectors X_{j+1} - X_j, including the wrap segment for closed curves."""
        following = np.roll(self.nodes, -1, axis=0) if self.closed else self.nodes[1:]
        current = self.nodes if self.closed else self.nodes[:-1]
        return following - current

    def spacings(self) -> np.ndarray:
        """Segment lengths h_{j+1/2}."""
        return np.linalg.norm(self.segments(), axis=1)

    def length(self) -> float:
        return float(self.spacings().sum())

    def end_kind(self, rho: int) -> EndpointKind:
        return self.kind_start if rho == 0 else self.kind_end

    def end_frozen(self, rho: int) -> bool:
        return self.frozen_start if rho == 0 else self.frozen_end

    def end_index(self, rho: int) -> int:
        return 0 if rho == 0 else self.n_nodes - 1

    def free_ends(self) -> List[int]:
        """Values of rho whose endpoint is free."""
        if self.closed:
            return []
        return [rho for rho in (0, 1) if self.end_kind(rho) is EndpointKind.FREE]

    def with_nodes(self, nodes: np.ndarray, **changes) -> "PolygonalCurve":
        return replace(self, nodes=np.array(nodes, dtype=float), **changes)

    def reversed(self) -> "PolygonalCurve":
        return PolygonalCurve(
            nodes=self.nodes[::-1].copy(),
            kind_start=self.kind_end,
            kind_end=self.kind_start,
            curve_id=self.curve_id,
            frozen_start=self.frozen_end,
            frozen_end=self.frozen_start,
        )

    def to_dict(self) -> Dict[str, Any]:
        return {
            "curve_id": self.curve_id,
            "kind_start": self.kind_start.value,
            "kind_end": self.kind_end.value,
            "frozen_start": self.frozen_start,
            "frozen_end": self.frozen_end,
            "nodes": self.nodes.tolist(),
        }


@dataclass(eq=False)
class CurveNetwork:
    """Collection of curves on the domain [0, n_x*h] x [0, n_y*h]."""
    curves: List[PolygonalCurve]
    n_x: int
    n_y: int
    h: float = 1.0

    @classmethod
    def empty_like(cls, image: GridImage) -> "CurveNetwork":
        return cls([], image.n_x, image.n_y, image.h)

    @classmethod
    def for_image(cls, image: GridImage, curves: List[PolygonalCurve]) -> "CurveNetwork":
        return cls(list(curves), image.n_x, image.n_y, image.h)

    @property
    def extent(self) -> Tuple[float, float]:
        return self.n_x * self.h, self.n_y * self.h

    def with_curves(self, curves: List[PolygonalCurve]) -> "CurveNetwork":
        return CurveNetwork(list(curves), self.n_x, self.n_y, self.h)

    def get(self, curve_id: int) -> Optional[PolygonalCurve]:
        for curve in self.curves:
            if curve.curve_id == curve_id:
                return curve
        return None

    def next_id(self) -> int:
        return max((c.curve_id for c in self.curves), default=-1) + 1

    def n_nodes(self) -> int:
        return sum(c.n_nodes for c in self.curves)

    def contains(self, point: np.ndarray, tol: float = 1e-9) -> bool:
        width, height = self.extent
        x, y = point
        return -tol <= x <= width + tol and -tol <= y <= height + tol

    def validate(self) -> None:
        """Check domain containment, node spacing and boundary attachment."""
        width, height = self.extent
        ids = [c.curve_id for c in self.curves]
        if len(set(ids)) != len(ids):
            raise GeometryError(f"Duplicate curve ids in network: {ids}")
        for curve in self.curves:
            if np.any(curve.spacings() <= 0.0):
                raise GeometryError(f"Curve {curve.curve_id} has coincident consecutive nodes")
            if not all(self.contains(p) for p in curve.nodes):
                raise GeometryError(f"Curve {curve.curve_id} leaves the image domain")
            for rho in (0, 1):
                kind = curve.end_kind(rho)
                if kind.is_boundary:
                    node = curve.nodes[curve.end_index(rho)]
                    edge = kind.edge_coordinate(self.n_x, self.n_y, self.h)
                    if abs(node[kind.axis] - edge) > 1e-9 * max(width, height, 1.0):
                        raise GeometryError(
                            f"Curve {curve.curve_id} end {rho} is not on its {kind.value} edge"
                        )

    def copy(self) -> "CurveNetwork":
        return self.with_curves([c.with_nodes(c.nodes.copy()) for c in self.curves])

    def to_dict(self) -> Dict[str, Any]:
        return {
            "n_x": self.n_x,
            "n_y": self.n_y,
            "h": self.h,
            "curves": [c.to_dict() for c in self.curves],
        }


@dataclass
class LinkMasks:
    """
    Link weights of the denoising energy.

    horizontal[i-1, j] is A_x(i, j) for the link [(i-1)h, ih] x {jh};
    vertical[i, j-1] is A_y(i, j) for the link {ih} x [(j-1)h, jh].
    A link crossed by a curve has weight 0, every other link h^2.
    """
    horizontal: np.ndarray  # shape (n_x, n_y + 1)
    vertical: np.ndarray  # shape (n_x + 1, n_y)
    h: float = 1.0

    def a_x(self, i: int, j: int) -> float:
        return float(self.horizontal[i - 1, j])

    def a_y(self, i: int, j: int) -> float:
        return float(self.vertical[i, j - 1])

    def crossed_horizontal(self) -> np.ndarray:
        return self.horizontal == 0.0

    def crossed_vertical(self) -> np.ndarray:
        return self.vertical == 0.0


@dataclass(frozen=True)
class EndpointStencil:
    """Grid points and alpha factors that weight the links next to a free endpoint."""
    z1: GridPoint  # vertical link [z1, z1 + h e2], paired with alpha_x
    z2: GridPoint  # horizontal link [z2, z2 + h e1], paired with alpha_y
    alpha_x: float
    alpha_y: float


@dataclass
class EnergyBreakdown:
    """Terms of the discrete Mumford-Shah energy."""
    length_term: float
    gradient_term: float
    fidelity_term: float
    total: float = field(init=False)

    def __post_init__(self):
        self.total = self.length_term + self.gradient_term + self.fidelity_term

    def to_dict(self) -> Dict[str, float]:
        return asdict(self)


class EventKind(Enum):
    """Topology events in the order they are applied within one step."""
    CURVE_DELETE = "curve-delete"
    FREE_ENDS_CLOSE = "free-ends-close"
    FREE_ENDS_MERGE = "free-ends-merge"
    SPLIT = "split"
    CURVE_PAIR_MERGE = "curve-pair-merge"
    TRIPLE_JUNCTION = "triple-junction"
    BOUNDARY_ATTACH = "boundary-attach"

    @property
    def rank(self) -> int:
        return list(EventKind).index(self)


@dataclass(frozen=True)
class TopologyEvent:
    """A detected topology change; participants are (curve_id, node_index) pairs."""
    kind: EventKind
    participants: Tuple[Tuple[int, int], ...]
    distance: float = 0.0

    @property
    def curve_ids(self) -> Tuple[int, ...]:
        return tuple(sorted({cid for cid, _ in self.participants}))

    def sort_key(self) -> Tuple:
        return (self.kind.rank, self.curve_ids, self.participants)

    def to_record(self, step: int) -> str:
        ids = " ".join(str(cid) for cid in self.curve_ids)
        return f"event {step} {self.kind.value} {ids}"


class NormalLaw(Enum):
    """
    Free-endpoint normal velocity.

    weighted: each grid term scaled by tau . e_i, so it fades as the end turns
              parallel to that grid direction
    signed:   each grid term scaled by sign(tau . e_i) only
    """
    WEIGHTED = "weighted"
    SIGNED = "signed"


@dataclass
class EvolveParams:
    """Parameters of one curve-evolution step."""
    sigma: float
    lam: float
    dt: float
    a: float = 1.5  # normal sampling offset, in units of h
    h_target: float = 4.0  # target node spacing, in units of h
    endpoint_normal_motion: bool = True
    endpoint_normal_law: NormalLaw = NormalLaw.WEIGHTED
    sign_zero: float = 1.0
    max_endpoint_shift: float = 0.5  # in units of h

    def __post_init__(self):
        for name in ("sigma", "lam", "dt", "a", "h_target", "max_endpoint_shift"):
            value = getattr(self, name)
            if not value > 0:
                raise ParameterError(f"{name} must be positive, got {value}")
        if self.sign_zero not in (1.0, -1.0):
            raise ParameterError(f"sign_zero must be +1 or -1, got {self.sign_zero}")

    def sign(self, value: float) -> float:
        if value > 0:
            return 1.0
        if value < 0:
            return -1.0
        return self.sign_zero

    def normal_weight(self, component: float) -> float:
        """Factor of a grid term in the endpoint normal velocity."""
        if self.endpoint_normal_law is NormalLaw.WEIGHTED:
            return float(component)
        return self.sign(component)


@dataclass
class StepResult:
    """Outcome of one evolution step."""
    network: CurveNetwork
    max_displacement: float
    clamped_nodes: int = 0
    capped_endpoints: int = 0


@dataclass
class SegmentationState:
    """Current network, field u and logs of a segmentation run."""
    step: int
    network: CurveNetwork
    u: GridImage
    u0: GridImage
    energy_log: List[Dict[str, Any]] = field(default_factory=list)
    event_log: List[str] = field(default_factory=list)
    status: str = "running"
    phase: str = "freeend"

    def to_dict(self) -> Dict[str, Any]:
        return {
            "step": self.step,
            "status": self.status,
            "phase": self.phase,
            "network": self.network.to_dict(),
            "energy_log": self.energy_log[-20:],
            "event_log": self.event_log,
        }
