"""
EdgeTracer Command Line

    edgetracer segment --config run.cfg
    edgetracer denoise --image in.pgm --curves curves.txt --lambda 0.002 --out u.pgm
    edgetracer generate crack --size 300 --out crack.pgm
    edgetracer generate tworegion --size 151 --shape disk --inside 0.8 --outside 0.2 --out t.pgm
    edgetracer generate seeds --spec "segment:0:110:150:left" --size 301 --out seeds.txt
    edgetracer energy --image in.pgm --curves curves.txt --u u.pgm --sigma 2e-5 --lambda 0.002
    edgetracer report --run run

Exit codes: 0 success, 1 usage or input error, 2 numerical failure.
"""

import argparse
import json
import logging
import re
import sys
from pathlib import Path
from typing import List, Optional

from denoiser import EdgePreservingDenoiser
from energy import EnergyAudit
from errors import EdgeTracerError, SolverError
from imaging import ImageGenerator, RegionSpec, load_pgm, save_pgm
from models import CurveNetwork
from persistence import CurveSnapshotCodec, load_energy
from pipeline import build_seeds, run_segmentation, validate_initial_network
from run_config import load_config
from visualizations import EnergyHistoryChart, OverlayRenderer

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_NUMERICAL = 2


class UsageError(Exception):
    """Raised instead of argparse's own exit on bad arguments."""


class EdgeTracerArgumentParser(argparse.ArgumentParser):

    def error(self, message: str):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


# ============================================================================
# SUBCOMMANDS
# ============================================================================

def _network(image_path: str, curves_path: str):
    u0 = load_pgm(image_path)
    network = CurveNetwork.for_image(u0, CurveSnapshotCodec.load(curves_path))
    validate_initial_network(network)
    return u0, network


def cmd_segment(args: argparse.Namespace) -> int:
    config = load_config(args.config)
    if args.output:
        config.output = args.output
    state = run_segmentation(config)
    print(f"{state.status}: {state.step} steps, {len(state.network.curves)} curve(s), "
          f"outputs in {config.output}")
    return EXIT_OK


def cmd_denoise(args: argparse.Namespace) -> int:
    u0, network = _network(args.image, args.curves)
    u = EdgePreservingDenoiser.denoise(u0, network, args.lam)
    save_pgm(u, args.out)
    logger.info(f"Denoised field written to {args.out}")
    return EXIT_OK


def cmd_generate_crack(args: argparse.Namespace) -> int:
    n = args.size - 1
    image = ImageGenerator.crack_tip(n, n)
    image = ImageGenerator.add_noise(image, args.noise, args.seed)
    save_pgm(image, args.out)
    logger.info(f"Crack-tip image {args.size}x{args.size} written to {args.out}")
    return EXIT_OK


def cmd_generate_tworegion(args: argparse.Namespace) -> int:
    n = args.size - 1
    region = RegionSpec(
        shape=args.shape,
        inside=args.inside,
        outside=args.outside,
        radius=args.radius if args.radius is not None else 0.25 * n,
        boundary=args.boundary,
        line_y=args.line_y,
        stop=args.stop,
        fade=args.fade,
    )
    image = ImageGenerator.add_noise(ImageGenerator.two_region(n, n, region), args.noise, args.seed)
    save_pgm(image, args.out)
    logger.info(f"Two-region image ({args.shape}) written to {args.out}")
    return EXIT_OK


def cmd_generate_seeds(args: argparse.Namespace) -> int:
    n = args.size - 1
    curves = build_seeds(args.spec, n, n, 1.0, args.spacing)
    CurveSnapshotCodec.save(curves, args.out)
    logger.info(f"{len(curves)} seed curve(s) written to {args.out}")
    return EXIT_OK


def cmd_energy(args: argparse.Namespace) -> int:
    u0, network = _network(args.image, args.curves)
    u = load_pgm(args.u)
    breakdown = EnergyAudit.discrete_ms_energy(network, u, u0, args.sigma, args.lam)
    print(json.dumps(breakdown.to_dict(), indent=2))
    return EXIT_OK


def _latest_snapshot(run_dir: Path) -> Optional[Path]:
    snapshots = []
    for path in run_dir.glob("curves_*.txt"):
        match = re.fullmatch(r"curves_(\d+)\.txt", path.name)
        if match:
            snapshots.append((int(match.group(1)), path))
    return max(snapshots)[1] if snapshots else None


def cmd_report(args: argparse.Namespace) -> int:
    run_dir = Path(args.run)
    out_dir = Path(args.out) if args.out else run_dir
    out_dir.mkdir(parents=True, exist_ok=True)

    energy = load_energy(run_dir)
    chart = EnergyHistoryChart.write_html(energy, out_dir / "energy.html")
    logger.info(f"Energy chart written to {chart}")

    field_path = run_dir / "u_final.pgm"
    snapshot = _latest_snapshot(run_dir)
    if field_path.exists() and snapshot is not None:
        u = load_pgm(field_path)
        network = CurveNetwork.for_image(u, CurveSnapshotCodec.load(snapshot))
        step = snapshot.stem.split("_")[1]
        overlay = OverlayRenderer.render(
            u, network, out_dir / f"overlay_{step}.png", title=f"step {step}"
        )
        logger.info(f"Overlay written to {overlay}")
    else:
        logger.warning(f"No final field or snapshot in {run_dir}; overlay skipped")
    if len(energy):
        final = energy.iloc[-1]
        print(f"final step {int(final['step'])}: E^h = {final['total']:.6g}")
    return EXIT_OK


# ============================================================================
# PARSER
# ============================================================================

def _positive_size(text: str) -> int:
    value = int(text)
    if value < 4:
        raise argparse.ArgumentTypeError(f"size must be at least 4, got {value}")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = EdgeTracerArgumentParser(
        prog="edgetracer",
        description="Mumford-Shah segmentation with free-endpoint curves",
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    parser.add_argument("--log-level", default="INFO",
                        choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    commands = parser.add_subparsers(dest="command", required=True)

    segment = commands.add_parser("segment", help="Run a segmentation from a config file")
    segment.add_argument("--config", required=True)
    segment.add_argument("--output", help="Override the run directory")
    segment.set_defaults(handler=cmd_segment)

    denoise = commands.add_parser("denoise", help="Curve-aware smoothing of an image")
    denoise.add_argument("--image", required=True)
    denoise.add_argument("--curves", required=True)
    denoise.add_argument("--lambda", dest="lam", type=float, required=True)
    denoise.add_argument("--out", required=True)
    denoise.set_defaults(handler=cmd_denoise)

    generate = commands.add_parser("generate", help="Synthetic images and seed curves")
    generators = generate.add_subparsers(dest="generator", required=True)

    crack = generators.add_parser("crack", help="Crack-tip image")
    crack.add_argument("--size", type=_positive_size, required=True)
    crack.add_argument("--noise", type=float, default=0.0)
    crack.add_argument("--seed", type=int, default=0)
    crack.add_argument("--out", required=True)
    crack.set_defaults(handler=cmd_generate_crack)

    tworegion = generators.add_parser("tworegion", help="Two-intensity image")
    tworegion.add_argument("--size", type=_positive_size, required=True)
    tworegion.add_argument("--shape", choices=list(RegionSpec.SHAPES), default="disk")
    tworegion.add_argument("--inside", type=float, default=0.8)
    tworegion.add_argument("--outside", type=float, default=0.2)
    tworegion.add_argument("--radius", type=float)
    tworegion.add_argument("--boundary", type=float)
    tworegion.add_argument("--line-y", dest="line_y", type=float)
    tworegion.add_argument("--stop", type=float)
    tworegion.add_argument("--fade", type=float, default=0.0)
    tworegion.add_argument("--noise", type=float, default=0.0)
    tworegion.add_argument("--seed", type=int, default=0)
    tworegion.add_argument("--out", required=True)
    tworegion.set_defaults(handler=cmd_generate_tworegion)

    seeds = generators.add_parser("seeds", help="Initial curve snapshot")
    seeds.add_argument("--spec", required=True,
                       help="segment:x0:x1:y[:left] | circle:cx:cy:r[:n] | grid:rows:cols:length")
    seeds.add_argument("--size", type=_positive_size, required=True)
    seeds.add_argument("--spacing", type=float, default=4.0)
    seeds.add_argument("--out", required=True)
    seeds.set_defaults(handler=cmd_generate_seeds)

    energy = commands.add_parser("energy", help="Discrete Mumford-Shah energy of (u, curves)")
    energy.add_argument("--image", required=True)
    energy.add_argument("--curves", required=True)
    energy.add_argument("--u", required=True)
    energy.add_argument("--sigma", type=float, required=True)
    energy.add_argument("--lambda", dest="lam", type=float, required=True)
    energy.set_defaults(handler=cmd_energy)

    report = commands.add_parser("report", help="Energy chart and overlay of a run directory")
    report.add_argument("--run", required=True)
    report.add_argument("--out")
    report.set_defaults(handler=cmd_report)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        print(e, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as e:
        return int(e.code or 0)

    logging.basicConfig(
        level=getattr(logging, args.log_level),
        format="%(asctime)s - %(levelname)s - %(name)s - %(message)s",
    )
    try:
        return args.handler(args)
    except SolverError as e:
        logger.error(f"Numerical failure: {e}")
        return EXIT_NUMERICAL
    except (EdgeTracerError, OSError) as e:
        logger.error(str(e))
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
