"""
EdgeTracer Run Configuration

Defines every run parameter (default, range, parser) and reads the flat
`key = value` configuration format.
"""

from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Union

from errors import ConfigError, ParameterError
from models import EvolveParams, NormalLaw


class RunMode(Enum):
    """Segmentation modes."""
    FREEEND = "freeend"
    CHANVESE_PC = "chanvese-pc"
    POSTPROCESS = "postprocess"


def parse_bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("on", "true", "yes", "1"):
        return True
    if lowered in ("off", "false", "no", "0"):
        return False
    raise ConfigError(f"Expected on/off, got {text!r}")


def format_bool(value: bool) -> str:
    return "on" if value else "off"


@dataclass
class ParameterDefinition:
    """Specification for a configuration key."""
    key: str
    attribute: str
    description: str
    default: Any
    parser: Callable[[str], Any] = str
    minimum: Optional[float] = None
    maximum: Optional[float] = None
    exclusive_minimum: bool = False
    exclusive_maximum: bool = False
    formatter: Callable[[Any], str] = str

    def check(self, value: Any) -> None:
        if value is None or self.minimum is None and self.maximum is None:
            return
        low_ok = (
            self.minimum is None
            or (value > self.minimum if self.exclusive_minimum else value >= self.minimum)
        )
        high_ok = (
            self.maximum is None
            or (value < self.maximum if self.exclusive_maximum else value <= self.maximum)
        )
        if not (low_ok and high_ok):
            low = "(" if self.exclusive_minimum else "["
            high = ")" if self.exclusive_maximum else "]"
            raise ParameterError(
                f"{self.key} = {value} outside {low}{self.minimum}, {self.maximum}{high}"
            )


# ============================================================================
# INPUTS
# ============================================================================
INPUT_PARAMETERS = [
    ParameterDefinition("image", "image", "Input PGM path", None),
    ParameterDefinition(
        "generator", "generator",
        "Synthetic input: crack:<samples> or tworegion:<samples>:<shape>:<in>:<out>[:...]",
        None,
    ),
    ParameterDefinition("curves", "curves", "Initial curve snapshot path", None),
    ParameterDefinition(
        "seeds", "seeds",
        "Seed curves: segment:x0:x1:y[:left], circle:cx:cy:r[:n], grid:rows:cols:length; "
        "several separated by ';'",
        None,
    ),
    ParameterDefinition("noise", "noise", "Uniform noise amplitude for generated images",
                        0.0, float, minimum=0.0),
    ParameterDefinition("seed", "seed", "Random seed", 0, int, minimum=0),
]

# ============================================================================
# ENERGY AND TIME STEPPING
# ============================================================================
EVOLUTION_PARAMETERS = [
    ParameterDefinition("sigma", "sigma", "Length weight", 2e-5, float,
                        minimum=0.0, exclusive_minimum=True),
    ParameterDefinition("lambda", "lam", "Fidelity weight", 0.002, float,
                        minimum=0.0, exclusive_minimum=True),
    ParameterDefinition("dt", "dt", "Time step", 0.001, float,
                        minimum=0.0, exclusive_minimum=True),
    ParameterDefinition("a", "a", "Normal sampling offset in pixels", 1.5, float,
                        minimum=0.0, exclusive_minimum=True),
    ParameterDefinition("max_steps", "max_steps", "Curve steps (free-endpoint phase)",
                        1000, int, minimum=0),
    ParameterDefinition("bulk_cadence", "bulk_cadence", "Curve steps per bulk solve",
                        10, int, minimum=1),
    ParameterDefinition("mode", "mode", "freeend | chanvese-pc | postprocess",
                        RunMode.FREEEND, RunMode, formatter=lambda m: m.value),
    ParameterDefinition("tol", "tol", "Jump threshold for node deletion", 0.1, float,
                        minimum=0.0, maximum=1.0, exclusive_minimum=True, exclusive_maximum=True),
    ParameterDefinition("pc_steps", "pc_steps", "Piecewise-constant steps before node deletion",
                        200, int, minimum=0),
    ParameterDefinition("endpoint_normal_motion", "endpoint_normal_motion",
                        "Move free endpoints along the normal", True, parse_bool,
                        formatter=format_bool),
    ParameterDefinition("endpoint_normal_law", "endpoint_normal_law",
                        "weighted | signed: scale the normal grid terms by tau.e_i or its sign",
                        NormalLaw.WEIGHTED, NormalLaw, formatter=lambda m: m.value),
    ParameterDefinition("max_endpoint_shift", "max_endpoint_shift",
                        "Largest endpoint move per step in pixels", 0.5, float,
                        minimum=0.0, exclusive_minimum=True),
    ParameterDefinition("descent_check", "descent_check",
                        "Reject free-endpoint steps that raise E^h between bulk solves", True,
                        parse_bool, formatter=format_bool),
    ParameterDefinition("descent_backtracks", "descent_backtracks",
                        "Halvings of dt tried before a step is rejected", 6, int, minimum=0),
]

# ============================================================================
# MESH, TOPOLOGY AND OUTPUT
# ============================================================================
MESH_PARAMETERS = [
    ParameterDefinition("h_target", "h_target", "Target node spacing in pixels", 4.0, float,
                        minimum=0.0, exclusive_minimum=True),
    ParameterDefinition("l_min", "l_min", "Shortest surviving curve (default 4 * h_target)",
                        None, float, minimum=0.0, exclusive_minimum=True),
    ParameterDefinition("convergence_window", "convergence_window",
                        "Quiet steps before a run counts as converged", 50, int, minimum=1),
    ParameterDefinition("output", "output", "Run directory", "run"),
    ParameterDefinition("snapshot_every", "snapshot_every", "Steps between curve snapshots",
                        100, int, minimum=1),
]

PARAMETERS: Dict[str, ParameterDefinition] = {
    p.key: p for p in INPUT_PARAMETERS + EVOLUTION_PARAMETERS + MESH_PARAMETERS
}


@dataclass
class RunConfig:
    """Effective configuration of one segmentation run."""
    image: Optional[str] = None
    generator: Optional[str] = None
    curves: Optional[str] = None
    seeds: Optional[str] = None
    noise: float = 0.0
    seed: int = 0
    sigma: float = 2e-5
    lam: float = 0.002
    dt: float = 0.001
    a: float = 1.5
    max_steps: int = 1000
    bulk_cadence: int = 10
    mode: RunMode = RunMode.FREEEND
    tol: float = 0.1
    pc_steps: int = 200
    endpoint_normal_motion: bool = True
    endpoint_normal_law: NormalLaw = NormalLaw.WEIGHTED
    max_endpoint_shift: float = 0.5
    descent_check: bool = True
    descent_backtracks: int = 6
    h_target: float = 4.0
    l_min: Optional[float] = None
    convergence_window: int = 50
    output: str = "run"
    snapshot_every: int = 100

    def __post_init__(self):
        if isinstance(self.mode, str):
            try:
                self.mode = RunMode(self.mode)
            except ValueError as e:
                raise ConfigError(f"Unknown mode {self.mode!r}") from e
        if isinstance(self.endpoint_normal_law, str):
            try:
                self.endpoint_normal_law = NormalLaw(self.endpoint_normal_law)
            except ValueError as e:
                raise ConfigError(
                    f"Unknown endpoint normal law {self.endpoint_normal_law!r}"
                ) from e

    @property
    def effective_l_min(self) -> float:
        return 4.0 * self.h_target if self.l_min is None else self.l_min

    @property
    def cell_size(self) -> float:
        return 2.0 * self.h_target

    def validate(self) -> "RunConfig":
        for definition in PARAMETERS.values():
            definition.check(getattr(self, definition.attribute))
        if (self.image is None) == (self.generator is None):
            raise ConfigError("Exactly one of 'image' and 'generator' must be given")
        if self.curves is None and self.seeds is None:
            raise ConfigError("Initial curves missing: give 'curves' or 'seeds'")
        return self

    def evolve_params(self) -> EvolveParams:
        return EvolveParams(
            sigma=self.sigma,
            lam=self.lam,
            dt=self.dt,
            a=self.a,
            h_target=self.h_target,
            endpoint_normal_motion=self.endpoint_normal_motion,
            endpoint_normal_law=self.endpoint_normal_law,
            max_endpoint_shift=self.max_endpoint_shift,
        )

    def to_echo(self) -> str:
        lines = []
        for definition in PARAMETERS.values():
            value = getattr(self, definition.attribute)
            if definition.key == "l_min":
                value = self.effective_l_min
            if value is None:
                continue
            lines.append(f"{definition.key} = {definition.formatter(value)}")
        return "\n".join(lines) + "\n"


def parse_config_text(text: str) -> RunConfig:
    """Parse `key = value` lines; '#' starts a comment."""
    values: Dict[str, Any] = {}
    seen: List[str] = []
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"Line {number}: expected 'key = value', got {raw.strip()!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in PARAMETERS:
            raise ConfigError(f"Line {number}: unknown key {key!r}")
        if key in seen:
            raise ConfigError(f"Line {number}: duplicate key {key!r}")
        seen.append(key)
        definition = PARAMETERS[key]
        try:
            values[definition.attribute] = definition.parser(value)
        except ConfigError:
            raise
        except ValueError as e:
            raise ConfigError(f"Line {number}: invalid value for {key}: {value!r}") from e
    return RunConfig(**values).validate()


def load_config(path: Union[str, Path]) -> RunConfig:
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise ConfigError(f"Cannot read configuration {path}: {e}") from e
    return parse_config_text(text)
