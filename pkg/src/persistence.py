"""
EdgeTracer Persistence Module

Curve snapshot text format and the per-run output directory (config echo,
event log, energy table, snapshots, final field, state dumps).
"""

import json
import logging
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Union

import numpy as np
import pandas as pd

from errors import ConfigError, SnapshotFormatError
from imaging import save_pgm
from models import CurveNetwork, EndpointKind, GridImage, PolygonalCurve, SegmentationState

logger = logging.getLogger(__name__)

ENERGY_COLUMNS = ["step", "length_term", "gradient_term", "fidelity_term", "total", "phase"]


class CurveSnapshotCodec:
    """
    Text records, one per curve:

        curve <id> <kind_start> <kind_end> <count>
        x y
        ...

    Coordinates are written with repr() so a load reproduces them exactly.
    """

    @staticmethod
    def dumps(curves: Iterable[PolygonalCurve]) -> str:
        lines: List[str] = []
        for curve in curves:
            lines.append(
                f"curve {curve.curve_id} {curve.kind_start.value} "
                f"{curve.kind_end.value} {curve.n_nodes}"
            )
            lines.extend(f"{float(x)!r} {float(y)!r}" for x, y in curve.nodes)
        return "\n".join(lines) + ("\n" if lines else "")

    @staticmethod
    def _kind(token: str, number: int) -> EndpointKind:
        try:
            return EndpointKind(token)
        except ValueError as e:
            raise SnapshotFormatError(f"Line {number}: unknown endpoint kind {token!r}") from e

    @staticmethod
    def loads(text: str) -> List[PolygonalCurve]:
        rows = [
            (number, line.split())
            for number, line in enumerate(text.splitlines(), start=1)
            if line.strip() and not line.lstrip().startswith("#")
        ]
        curves: List[PolygonalCurve] = []
        position = 0
        while position < len(rows):
            number, header = rows[position]
            if len(header) != 5 or header[0] != "curve":
                raise SnapshotFormatError(
                    f"Line {number}: expected 'curve <id> <kind_start> <kind_end> <count>'"
                )
            try:
                curve_id, count = int(header[1]), int(header[4])
            except ValueError as e:
                raise SnapshotFormatError(f"Line {number}: id and count must be integers") from e
            kind_start = CurveSnapshotCodec._kind(header[2], number)
            kind_end = CurveSnapshotCodec._kind(header[3], number)

            body = rows[position + 1: position + 1 + count]
            if len(body) < count:
                raise SnapshotFormatError(
                    f"Curve {curve_id}: expected {count} nodes, found {len(body)}"
                )
            nodes = np.empty((count, 2))
            for k, (node_line, values) in enumerate(body):
                if len(values) != 2:
                    raise SnapshotFormatError(f"Line {node_line}: expected 'x y'")
                try:
                    nodes[k] = [float(values[0]), float(values[1])]
                except ValueError as e:
                    raise SnapshotFormatError(f"Line {node_line}: non-numeric coordinate") from e
            if not np.all(np.isfinite(nodes)):
                raise SnapshotFormatError(f"Curve {curve_id}: non-finite coordinate")
            try:
                curves.append(PolygonalCurve(nodes, kind_start, kind_end, curve_id))
            except ValueError as e:
                raise SnapshotFormatError(f"Curve {curve_id}: {e}") from e
            position += 1 + count
        return curves

    @staticmethod
    def save(curves: Iterable[PolygonalCurve], path: Union[str, Path]) -> None:
        Path(path).write_text(CurveSnapshotCodec.dumps(curves))

    @staticmethod
    def load(path: Union[str, Path]) -> List[PolygonalCurve]:
        try:
            text = Path(path).read_text()
        except OSError as e:
            raise ConfigError(f"Cannot read curve snapshot {path}: {e}") from e
        return CurveSnapshotCodec.loads(text)


# ============================================================================
# RUN DIRECTORY
# ============================================================================

class RunRecorder:
    """Writes the artifacts of one segmentation run into its output directory."""

    def __init__(self, output_dir: Union[str, Path]):
        self.output_dir = Path(output_dir)
        self.output_dir.mkdir(parents=True, exist_ok=True)
        self._events_path = self.output_dir / "events.log"
        self._events_path.write_text("")

    def path(self, name: str) -> Path:
        return self.output_dir / name

    def write_config_echo(self, echo: str) -> None:
        self.path("config.echo").write_text(echo)

    def record_events(self, records: List[str]) -> None:
        if not records:
            return
        with open(self._events_path, "a") as f:
            f.writelines(record + "\n" for record in records)

    def write_snapshot(self, network: CurveNetwork, step: int) -> Path:
        target = self.path(f"curves_{step}.txt")
        CurveSnapshotCodec.save(network.curves, target)
        logger.info(f"Snapshot written: {target.name} ({len(network.curves)} curves)")
        return target

    @staticmethod
    def energy_frame(energy_log: List[Dict]) -> pd.DataFrame:
        return pd.DataFrame(energy_log, columns=ENERGY_COLUMNS)

    def write_energy(self, energy_log: List[Dict]) -> Path:
        target = self.path("energy.csv")
        RunRecorder.energy_frame(energy_log).to_csv(target, index=False, float_format="%.17g")
        return target

    def write_final_field(self, u: GridImage) -> Path:
        target = self.path("u_final.pgm")
        save_pgm(u, target)
        return target

    def write_state_dump(self, state: SegmentationState, error: Optional[Exception] = None) -> Path:
        target = self.path("state_dump.json")
        payload = state.to_dict()
        if error is not None:
            payload["error"] = str(error)
        with open(target, "w") as f:
            json.dump(payload, f, indent=2)
        logger.error(f"State dumped to {target}")
        return target

    def finish(self, state: SegmentationState) -> None:
        self.write_energy(state.energy_log)
        self.write_final_field(state.u)
        self.write_snapshot(state.network, state.step)


def load_energy(run_dir: Union[str, Path]) -> pd.DataFrame:
    """Read energy.csv of a run directory."""
    target = Path(run_dir) / "energy.csv"
    if not target.exists():
        raise ConfigError(f"No energy log in {run_dir}")
    return pd.read_csv(target)
