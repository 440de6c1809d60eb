"""Command line entry point.

Exit codes: 0 success, 1 usage error, 2 data error.
"""

import argparse
import logging
import sys
from fractions import Fraction
from pathlib import Path
from typing import List, Optional

from cyclopref import __version__
from cyclopref.config import PipelineConfig, load_config
from cyclopref.decomposition import GroupPreferenceModel
from cyclopref.errors import DataError, UnreachableError, UsageError
from cyclopref.network import geometric_cost, nearest_node, shortest_path
from cyclopref.reports import read_json, walk_feature, write_json
from cyclopref.stages import network_from_config, run_pipeline
from cyclopref.synthetic import write_sample_dataset

logger = logging.getLogger("cyclopref")

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2

STAGES = ("match", "features", "cluster", "classify", "infer", "all")


class ArgumentParser(argparse.ArgumentParser):
    """argparse that raises UsageError instead of exiting."""

    def error(self, message: str):
        raise UsageError(message)


def build_parser() -> ArgumentParser:
    common = ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML configuration file")
    common.add_argument("--seed", type=int, help="random seed (overrides the config)")
    common.add_argument("--threads", type=int, help="worker threads")
    common.add_argument("--out-dir", dest="out_dir", help="output directory")
    common.add_argument("--network", help="road network file")
    common.add_argument("--network-nodes", dest="network_nodes", help="node CSV for a CSV edge list")
    common.add_argument("--landuse", help="land-use GeoJSON")
    common.add_argument("--trajectories", help="GPX/CSV file or directory")
    common.add_argument("--activities", help="activity sidecar CSV")
    common.add_argument("-k", type=int, dest="k", help="number of clusters")
    common.add_argument(
        "--max-snap-distance", dest="max_snap_distance", type=float, help="map-matching snap radius in meters"
    )
    common.add_argument("--sigma-gps", dest="sigma_gps", type=float, help="GPS noise in meters")
    common.add_argument("-v", "--verbose", action="count", default=0)
    common.add_argument("-q", "--quiet", action="count", default=0)

    parser = ArgumentParser(prog="cyclopref", description="Infer bicyclists' routing preferences from GPS trajectories.")
    parser.add_argument("-V", "--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True

    for name in STAGES:
        stage = sub.add_parser(name, parents=[common], help=f"run the {name} stage")
        stage.add_argument("--resume", metavar="RUN_ID", help="resume a journaled run")
        if name in ("infer", "all"):
            stage.add_argument("--group", help="only infer this group")

    route = sub.add_parser("route", parents=[common], help="route with a group model")
    route.add_argument("--model", required=True, help="model JSON written by infer")
    route.add_argument("--from", dest="origin", nargs=2, type=float, required=True, metavar=("LON", "LAT"))
    route.add_argument("--to", dest="destination", nargs=2, type=float, required=True, metavar=("LON", "LAT"))
    route.add_argument("--output", help="route GeoJSON (default: <out-dir>/route.geojson)")

    sample = sub.add_parser("sample", parents=[common], help="write the synthetic sample dataset")
    sample.add_argument("--dest", required=True, help="directory to write into")
    return parser


def setup_logging(verbosity: int) -> None:
    if verbosity > 0:
        level = logging.DEBUG
    elif verbosity < 0:
        level = logging.WARNING
    else:
        level = logging.INFO
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", force=True)


def resolve_config(args: argparse.Namespace) -> PipelineConfig:
    config = load_config(args.config) if args.config else PipelineConfig()
    return config.with_overrides(
        seed=args.seed,
        threads=args.threads,
        out_dir=args.out_dir,
        network=args.network,
        network_nodes=args.network_nodes,
        landuse=args.landuse,
        trajectories=args.trajectories,
        activities=args.activities,
        k=args.k,
        max_snap_distance=args.max_snap_distance,
        sigma_gps=args.sigma_gps,
    )


def run_route(args: argparse.Namespace, config: PipelineConfig) -> int:
    config.validate(["network"])
    model = GroupPreferenceModel.from_dict(read_json(args.model))
    network = network_from_config(config)
    s = nearest_node(network, *args.origin, config.max_snap_distance)
    t = nearest_node(network, *args.destination, config.max_snap_distance)

    weighting = model.weighting
    path = shortest_path(network, weighting.scaled_cost, s, t)
    if not path.reachable:
        raise UnreachableError(f"no path between {s} and {t}")
    reference = shortest_path(network, geometric_cost, s, t)

    length = path.length(network)
    summary = {
        "group": model.group,
        "alpha": float(model.alpha),
        "from_node": s,
        "to_node": t,
        "w_alpha_cost": float(Fraction(path.cost, weighting.scale)),
        "length_m": length,
        "shortest_length_m": reference.cost,
        "detour_ratio": length / reference.cost if reference.cost else 1.0,
    }
    output = Path(args.output) if args.output else config.out_path / "route.geojson"
    write_json(
        output,
        {"type": "FeatureCollection", "features": [walk_feature(network, path, summary)], "summary": summary},
        config.provenance,
    )
    print(
        f"{s} -> {t}: {length} m (shortest {reference.cost} m), "
        f"w_alpha cost {summary['w_alpha_cost']:.1f}, written to {output}"
    )
    return EXIT_OK


def run(args: argparse.Namespace) -> int:
    if args.command == "sample":
        config_file = write_sample_dataset(args.dest, seed=args.seed or 0)
        print(f"sample dataset written; run: cyclopref all --config {config_file}")
        return EXIT_OK

    config = resolve_config(args)
    config.validate()
    if args.command == "route":
        return run_route(args, config)

    engine = run_pipeline(args.command, config, run_id=args.resume, group=getattr(args, "group", None))
    logger.info("run %s finished: %s", engine.run_id, engine.execution_state.pipeline_status.name.lower())
    return EXIT_OK


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        parser.print_usage(sys.stderr)
        print(f"cyclopref: error: {e}", file=sys.stderr)
        return EXIT_USAGE

    setup_logging(args.verbose - args.quiet)
    try:
        return run(args)
    except (UsageError, FileNotFoundError) as e:
        logger.error("%s", e)
        return EXIT_USAGE
    except DataError as e:
        logger.error("%s", e)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
