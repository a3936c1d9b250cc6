"""
EdgeTracer Pipeline Module

Run orchestration: input construction from a RunConfig, the alternating
bulk/curve loop with topology handling, node deletion between phases, and the
run directory outputs.
"""

import logging
from dataclasses import dataclass, replace
from typing import Dict, List, Optional, Tuple

import numpy as np

from denoiser import EdgePreservingDenoiser
from energy import EnergyAudit
from errors import ConfigError, GeometryError, ParameterError, SolverError
from evolver import FREE_END_INSET, CurveEvolver
from geometry import SeedGenerator
from imaging import ImageGenerator, RegionSpec, load_pgm
from models import (
    CurveNetwork,
    EndpointKind,
    EvolveParams,
    GridImage,
    PolygonalCurve,
    SegmentationState,
    StepResult,
)
from persistence import CurveSnapshotCodec, RunRecorder
from run_config import RunConfig, RunMode
from topology import TopologyManager

logger = logging.getLogger(__name__)

CONVERGENCE_FACTOR = 1e-4  # quiet step: max node displacement below this many h
DESCENT_SLACK = 1e-6  # relative increase of E^h a free-endpoint step may cause

STATUS_MAX_STEPS = "max_steps"
STATUS_CONVERGED = "converged"
STATUS_EMPTY = "all curves deleted"

PHASE_FREEEND = "freeend"
PHASE_PC = "chanvese-pc"


# ============================================================================
# INPUTS
# ============================================================================

def _numbers(tokens: List[str], what: str) -> List[float]:
    try:
        return [float(t) for t in tokens]
    except ValueError as e:
        raise ConfigError(f"Non-numeric field in {what} spec: {':'.join(tokens)}") from e


def _samples(token: str) -> int:
    try:
        samples = int(token)
    except ValueError as e:
        raise ConfigError(f"Sample count must be an integer, got {token!r}") from e
    if samples < 4:
        raise ParameterError(f"Generated images need at least 4 samples per side, got {samples}")
    return samples


def build_image(spec: str) -> GridImage:
    """
    Image from a generator spec:

        crack:<samples>
        tworegion:<samples>:disk:<inside>:<outside>[:<radius>]
        tworegion:<samples>:half-plane:<inside>:<outside>[:<boundary>]
        tworegion:<samples>:slit:<inside>:<outside>[:<line_y>[:<stop>[:<fade>]]]

    <samples> is the pixel count per side; the grid then has samples - 1 cells.
    """
    parts = spec.strip().split(":")
    kind = parts[0]
    if kind == "crack" and len(parts) == 2:
        n = _samples(parts[1]) - 1
        return ImageGenerator.crack_tip(n, n)
    if kind == "tworegion" and len(parts) >= 5:
        n = _samples(parts[1]) - 1
        shape = parts[2]
        inside, outside = _numbers(parts[3:5], "tworegion")
        extra = _numbers(parts[5:], "tworegion")
        region = RegionSpec(shape=shape, inside=inside, outside=outside)
        if shape == "disk":
            region.radius = extra[0] if extra else 0.25 * n
        elif shape == "half-plane" and extra:
            region.boundary = extra[0]
        elif shape == "slit":
            for name, value in zip(("line_y", "stop", "fade"), extra):
                setattr(region, name, value)
        return ImageGenerator.two_region(n, n, region)
    raise ConfigError(f"Unrecognized generator spec {spec!r}")


def build_seeds(spec: str, n_x: int, n_y: int, h: float = 1.0, spacing: float = 4.0):
    """
    Curves from ';'-separated seed specs:

        segment:<x0>:<x1>:<y>[:left]      open segment, optionally attached at x = 0
        circle:<cx>:<cy>:<r>[:<nodes>]    closed polygon (default one node per `spacing`)
        grid:<rows>:<cols>:<length>       free segments tiling the domain
    """
    curves: List[PolygonalCurve] = []
    for item in filter(None, (s.strip() for s in spec.split(";"))):
        parts = item.split(":")
        kind = parts[0]
        if kind == "segment" and len(parts) in (4, 5):
            x0, x1, y = _numbers(parts[1:4], "segment")
            attach = len(parts) == 5
            if attach and parts[4] != "left":
                raise ConfigError(f"Unknown segment option {parts[4]!r}")
            curves.append(
                SeedGenerator.horizontal_segment(
                    0.0 if attach else x0,
                    x1,
                    y,
                    spacing,
                    kind_start=EndpointKind.BOUNDARY_LEFT if attach else EndpointKind.FREE,
                    curve_id=len(curves),
                )
            )
        elif kind == "circle" and len(parts) in (4, 5):
            cx, cy, r = _numbers(parts[1:4], "circle")
            count = int(_numbers(parts[4:], "circle")[0]) if len(parts) == 5 else max(
                int(2 * np.pi * r / spacing), 8
            )
            curves.append(SeedGenerator.circle((cx, cy), r, count, curve_id=len(curves)))
        elif kind == "grid" and len(parts) == 4:
            rows, cols, length = _numbers(parts[1:4], "grid")
            grid = SeedGenerator.short_segment_grid(n_x, n_y, int(rows), int(cols), length,
                                                    spacing, h)
            first_id = len(curves)
            curves.extend(c.with_nodes(c.nodes, curve_id=first_id + k)
                          for k, c in enumerate(grid.curves))
        else:
            raise ConfigError(f"Unrecognized seed spec {item!r}")
    return curves


def validate_initial_network(network: CurveNetwork) -> None:
    """Curves inside the domain, free endpoints strictly inside."""
    network.validate()
    width, height = network.extent
    for curve in network.curves:
        for rho in curve.free_ends():
            x, y = curve.nodes[curve.end_index(rho)]
            if not (0.0 < x < width and 0.0 < y < height):
                raise GeometryError(
                    f"Free endpoint ({x}, {y}) of curve {curve.curve_id} is on the image border"
                )


def prepare_inputs(config: RunConfig) -> Tuple[GridImage, CurveNetwork]:
    if config.image is not None:
        u0 = load_pgm(config.image)
    else:
        u0 = ImageGenerator.add_noise(build_image(config.generator), config.noise, config.seed)

    if config.curves is not None:
        curves = CurveSnapshotCodec.load(config.curves)
    else:
        curves = build_seeds(config.seeds, u0.n_x, u0.n_y, u0.h, config.h_target * u0.h)
    network = CurveNetwork.for_image(u0, curves)
    validate_initial_network(network)

    if config.mode is RunMode.CHANVESE_PC and any(c.free_ends() for c in network.curves):
        raise ConfigError("chanvese-pc mode accepts closed and boundary-attached curves only")
    return u0, network


# ============================================================================
# NODE DELETION
# ============================================================================

def _runs(keep: np.ndarray, closed: bool) -> List[List[int]]:
    """Maximal runs of kept indices; cyclic for closed curves."""
    n = keep.size
    order = list(range(n))
    if closed:
        first_gap = int(np.argmin(keep))
        order = [(first_gap + k) % n for k in range(n)]
    runs: List[List[int]] = []
    current: List[int] = []
    for index in order:
        if keep[index]:
            current.append(index)
        elif current:
            runs.append(current)
            current = []
    if current:
        runs.append(current)
    return runs


def _cut_end_kind(
    nodes: np.ndarray, index: int, network: CurveNetwork
) -> Tuple[EndpointKind, np.ndarray]:
    """Free, or the boundary kind of the edge a cut end lies on, with the end snapped to it."""
    width, height = network.extent
    side, gap = EndpointKind.nearest_side(nodes[index], width, height)
    if gap > FREE_END_INSET * network.h:
        return EndpointKind.FREE, nodes
    nodes = nodes.copy()
    nodes[index, side.axis] = side.edge_coordinate(network.n_x, network.n_y, network.h)
    logger.info(f"Cut end at {tuple(nodes[index])} lies on the image border; kind {side.value}")
    return side, nodes


def postprocess_delete_nodes(
    network: CurveNetwork, u0: GridImage, tol: float, a: float
) -> CurveNetwork:
    """
    Remove every maximal run of nodes whose jump of u0 across the curve is below tol.

    Remaining pieces become open curves; original ends keep their kind. Cut ends
    are Free, or attached to the image edge they lie on.
    """
    if not 0.0 < tol < 1.0:
        raise ParameterError(f"tol must lie in (0, 1), got {tol}")
    next_id = network.next_id()
    curves: List[PolygonalCurve] = []
    for curve in network.curves:
        keep = EnergyAudit.jumps_along(curve, u0, a) >= tol
        if keep.all():
            curves.append(curve)
            continue
        runs = [run for run in _runs(keep, curve.closed) if len(run) >= 2]
        deleted = int((~keep).sum())
        logger.info(
            f"Curve {curve.curve_id}: {deleted} of {curve.n_nodes} nodes below tol={tol}, "
            f"{len(runs)} piece(s) remain"
        )
        last = curve.n_nodes - 1
        for k, run in enumerate(runs):
            keeps_start = not curve.closed and run[0] == 0
            keeps_end = not curve.closed and run[-1] == last
            nodes = curve.nodes[run]
            kind_start, kind_end = curve.kind_start, curve.kind_end
            if not keeps_start:
                kind_start, nodes = _cut_end_kind(nodes, 0, network)
            if not keeps_end:
                kind_end, nodes = _cut_end_kind(nodes, len(run) - 1, network)
            piece = PolygonalCurve(
                nodes,
                kind_start=kind_start,
                kind_end=kind_end,
                curve_id=curve.curve_id if k == 0 else next_id,
                frozen_start=curve.frozen_start and keeps_start,
                frozen_end=curve.frozen_end and keeps_end,
            )
            if k > 0:
                next_id += 1
            curves.append(piece)
    return network.with_curves(curves)


# ============================================================================
# RUN LOOP
# ============================================================================

@dataclass
class PhasePlan:
    name: str
    steps: int


class SegmentationRunner:
    """Alternating minimization over (u, Gamma) for one configuration."""

    def __init__(self, config: RunConfig, recorder: Optional[RunRecorder] = None):
        self.config = config
        self.params: EvolveParams = config.evolve_params()
        self.recorder = recorder

    def phases(self) -> List[PhasePlan]:
        config = self.config
        if config.mode is RunMode.FREEEND:
            return [PhasePlan(PHASE_FREEEND, config.max_steps)]
        if config.mode is RunMode.CHANVESE_PC:
            return [PhasePlan(PHASE_PC, config.max_steps)]
        return [PhasePlan(PHASE_PC, config.pc_steps), PhasePlan(PHASE_FREEEND, config.max_steps)]

    def bulk_field(self, state: SegmentationState) -> GridImage:
        if state.phase == PHASE_PC:
            return EnergyAudit.region_mean_field(state.network, state.u0)
        return EdgePreservingDenoiser.denoise(
            state.u0, state.network, self.config.lam, initial=state.u
        )

    def record_energy(self, state: SegmentationState) -> Dict:
        breakdown = EnergyAudit.discrete_ms_energy(
            state.network, state.u, state.u0, self.config.sigma, self.config.lam
        )
        row = {"step": state.step, **breakdown.to_dict(), "phase": state.phase}
        state.energy_log.append(row)
        return row

    def _snapshot(self, state: SegmentationState) -> None:
        if self.recorder is not None and state.step % self.config.snapshot_every == 0:
            self.recorder.write_snapshot(state.network, state.step)

    def energy_total(self, network: CurveNetwork, state: SegmentationState) -> float:
        return EnergyAudit.discrete_ms_energy(
            network, state.u, state.u0, self.config.sigma, self.config.lam
        ).total

    def descend(self, state: SegmentationState) -> Optional[StepResult]:
        """
        Curve step that does not raise E^h for the current u.

        dt is halved up to descent_backtracks times; None when every trial
        raises the energy.
        """
        before = self.energy_total(state.network, state)
        params = self.params
        for attempt in range(self.config.descent_backtracks + 1):
            result = CurveEvolver.advance(state.network, state.u, params, state.u0)
            after = self.energy_total(result.network, state)
            if after <= before + DESCENT_SLACK * abs(before):
                if attempt:
                    logger.debug(f"Step {state.step + 1} accepted with dt={params.dt:.3g}")
                return result
            params = replace(params, dt=0.5 * params.dt)
        logger.warning(
            f"Step {state.step + 1}: every trial step raised E^h above {before:.6g}; curves kept"
        )
        return None

    def curve_step(self, state: SegmentationState, phase: str) -> StepResult:
        if phase == PHASE_FREEEND and self.config.descent_check:
            result = self.descend(state)
            if result is None:
                return StepResult(state.network, 0.0, 0, 0)
            return result
        return CurveEvolver.advance(state.network, state.u, self.params, state.u0)

    def run_phase(self, state: SegmentationState, plan: PhasePlan) -> str:
        config = self.config
        h = state.network.h
        quiet = 0
        logger.info(f"Phase {plan.name}: up to {plan.steps} steps")
        for local in range(plan.steps):
            if local % config.bulk_cadence == 0:
                state.u = self.bulk_field(state)

            result = self.curve_step(state, plan.name)
            events = TopologyManager.detect(
                result.network, config.cell_size, config.effective_l_min
            )
            network, applied = TopologyManager.apply_all(result.network, events)
            state.network = network
            state.step += 1
            records = [event.to_record(state.step) for event in applied]
            state.event_log.extend(records)
            if self.recorder is not None:
                self.recorder.record_events(records)

            self.record_energy(state)
            self._snapshot(state)

            if not network.curves:
                logger.info(f"All curves deleted at step {state.step}")
                return STATUS_EMPTY
            quiet = quiet + 1 if result.max_displacement < CONVERGENCE_FACTOR * h else 0
            if quiet >= config.convergence_window:
                logger.info(f"Phase {plan.name} converged at step {state.step}")
                return STATUS_CONVERGED
        return STATUS_MAX_STEPS

    def delete_weak_nodes(self, state: SegmentationState) -> None:
        before = {c.curve_id for c in state.network.curves}
        state.network = postprocess_delete_nodes(
            state.network, state.u0, self.config.tol, self.config.a
        )
        after = {c.curve_id for c in state.network.curves}
        record = f"event {state.step} node-deletion {' '.join(map(str, sorted(before | after)))}"
        state.event_log.append(record)
        if self.recorder is not None:
            self.recorder.record_events([record])

    def run(self, u0: GridImage, network: CurveNetwork) -> SegmentationState:
        plans = self.phases()
        state = SegmentationState(step=0, network=network, u=u0, u0=u0, phase=plans[0].name)
        self.record_energy(state)
        if self.recorder is not None:
            self.recorder.write_snapshot(state.network, 0)

        status = STATUS_MAX_STEPS
        try:
            for k, plan in enumerate(plans):
                if k > 0:
                    self.delete_weak_nodes(state)
                    state.phase = plan.name
                    if not state.network.curves:
                        status = STATUS_EMPTY
                        break
                if plan.steps == 0:
                    continue
                status = self.run_phase(state, plan)
                if status == STATUS_EMPTY:
                    break
        except SolverError as e:
            state.status = "solver failure"
            if self.recorder is not None:
                self.recorder.write_energy(state.energy_log)
                self.recorder.write_state_dump(state, e)
            raise

        state.status = status
        logger.info(f"Run finished at step {state.step}: {status}")
        return state


def run_segmentation(config: RunConfig, write_outputs: bool = True) -> SegmentationState:
    """
    Build the inputs of `config`, run every phase of its mode and, when
    write_outputs is set, fill config.output with the run artifacts.
    """
    config.validate()
    u0, network = prepare_inputs(config)
    recorder = RunRecorder(config.output) if write_outputs else None
    if recorder is not None:
        recorder.write_config_echo(config.to_echo())
    logger.info(
        f"Segmentation ({config.mode.value}) on {u0.n_x + 1}x{u0.n_y + 1} image "
        f"with {len(network.curves)} curve(s)"
    )
    state = SegmentationRunner(config, recorder).run(u0, network)
    if recorder is not None:
        recorder.finish(state)
    return state
