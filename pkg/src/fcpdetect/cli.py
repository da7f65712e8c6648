"""Command-line interface.

Subcommands:
  simulate   build (or reuse) a cached noise-maxima table
  detect     run source detection (fcp-z or msfcp) on an image
  msd        write the multi-scale derivative statistic of an image
  synth      generate a synthetic Poisson sky with planted sources
  evaluate   score a detection result against a known truth mask
  graphfcp   detect clusters on an irregular point cloud

Exit codes: 0 success (an empty catalog is success), 2 configuration
error, 3 input error.
"""

import argparse
import json
import sys

from .errors import (
    CapacityError,
    DomainError,
    ModelError,
    ParameterError,
    ParseError,
    StructuralError,
    TableLookupError,
)
from .graph import (
    classify_phase,
    conservative_superset,
    graph_find_threshold,
    read_locations,
    superset_threshold,
    write_locations,
)
from .grid import FORMATS, load_image, save_image
from .msd import detection_statistic, msd_image
from .noise import Filtered, save_table
from . import pipeline
from .pipeline import RunConfig, base_model_for, evaluate, load_result, pipeline_stages, run, synth_sky

_CONFIG_ERRORS = (ParameterError, ModelError, CapacityError, TableLookupError)
_INPUT_ERRORS = (ParseError, StructuralError, DomainError, OSError)


def _parse_scales(text):
    try:
        return tuple(float(tok) for tok in text.split(","))
    except ValueError:
        raise ParameterError(f"cannot parse scales {text!r}; expected e.g. 1,2,4,8") from None


def _merged_config(args, overrides) -> RunConfig:
    doc = {}
    if getattr(args, "config", None):
        try:
            with open(args.config) as fh:
                doc = json.load(fh)
        except OSError as exc:
            raise ParameterError(f"cannot read config file: {exc}") from None
        except json.JSONDecodeError as exc:
            raise ParameterError(f"{args.config}: not valid JSON ({exc})") from None
        if not isinstance(doc, dict):
            raise ParameterError(f"{args.config}: config must be a JSON object")
    for key, value in overrides.items():
        if value is not None:
            doc[key] = value
    return RunConfig.from_dict(doc)


def _emit(doc):
    print(json.dumps(doc))


def _add_config_flags(p, with_input=True):
    p.add_argument("--config", help="JSON config file; flags override its values")
    if with_input:
        p.add_argument("--input", help="input image path")
        p.add_argument("--format", choices=FORMATS, help="input image format")
    p.add_argument("--method", choices=("fcp-z", "msfcp"))
    p.add_argument("--alpha", type=float, help="confidence level of the superset")
    p.add_argument("--c", type=float, help="tolerated false cluster proportion")
    p.add_argument("--epsilon", type=float, help="overlap fraction that marks a cluster false")
    p.add_argument("--sigma", type=float, help="smoothing bandwidth (pixels)")
    p.add_argument("--scales", help="derivative bandwidths, comma separated")
    p.add_argument("--lambda0", type=float, help="background Poisson rate (default: estimated)")
    p.add_argument("--mu0", type=float, help="pinned Z-score background mean")
    p.add_argument("--sigma0", type=float, help="pinned Z-score background sigma")
    p.add_argument("--B", type=int, help="number of noise replicates")
    p.add_argument("--a", type=int, help="removal steps in the maxima table")
    p.add_argument("--superset", choices=("alg1", "alg2"))
    p.add_argument("--connectivity", choices=("four", "eight"))
    p.add_argument("--seed", type=int)
    p.add_argument("--min-area", type=int, dest="min_area", help="drop smaller clusters")
    p.add_argument("--table", help="maxima-table cache path (loaded if present, else written)")


def _config_overrides(args, **extra):
    over = {
        "method": args.method,
        "alpha": args.alpha,
        "c": args.c,
        "epsilon": args.epsilon,
        "sigma_smooth": args.sigma,
        "scales": _parse_scales(args.scales) if args.scales else None,
        "lambda0": args.lambda0,
        "mu0": args.mu0,
        "sigma0": args.sigma0,
        "B": args.B,
        "a": args.a,
        "superset": args.superset,
        "connectivity": args.connectivity,
        "seed": args.seed,
        "min_area": args.min_area,
        "table_path": args.table,
    }
    over.update(extra)
    return over


def _cmd_simulate(args):
    config = _merged_config(
        args,
        _config_overrides(args, rows=args.rows, cols=args.cols, table_path=args.out or args.table),
    )
    if config.rows is None or config.cols is None:
        raise ParameterError("simulate needs --rows and --cols")
    if config.table_path is None:
        raise ParameterError("simulate needs an output table path (--out)")
    base, _ = base_model_for(config)
    model = Filtered(base, pipeline_stages(config, config.mu0, config.sigma0))
    table, built = pipeline._obtain_table(config, model, config.rows, config.cols)
    if built:
        save_table(config.table_path, table)
    _emit(
        {
            "table": config.table_path,
            "built": built,
            "B": table.B,
            "areas": len(table.areas),
            "model": table.model,
        }
    )
    return 0


def _cmd_detect(args):
    config = _merged_config(
        args,
        _config_overrides(
            args,
            input=args.input,
            fmt=args.format,
            out_catalog=args.catalog,
            out_envelope=args.envelope,
            out_metadata=args.metadata,
            out_result=args.result,
        ),
    )
    catalog, result = run(config)
    _emit(
        {
            "method": config.method,
            "qualified": result.qualified,
            "t_c": result.t_c if result.qualified else None,
            "envelope_value": result.envelope_value if result.qualified else None,
            "n_detections": len(catalog.entries),
        }
    )
    return 0


def _cmd_msd(args):
    img = load_image(args.input, args.format)
    statistic = detection_statistic(msd_image(img, _parse_scales(args.scales)))
    save_image(args.out, statistic, args.out_format or args.format)
    _emit({"out": args.out, "min": float(statistic.min()), "max": float(statistic.max())})
    return 0


def _parse_source(token):
    parts = token.split(",")
    if len(parts) != 4:
        raise ParameterError(f"source must be row,col,amplitude,width, got {token!r}")
    try:
        return tuple(float(p) for p in parts)
    except ValueError:
        raise ParameterError(f"cannot parse source {token!r}") from None


def _cmd_synth(args):
    sources = [_parse_source(tok) for tok in args.source]
    sky = synth_sky(args.rows, args.cols, args.lambda0, sources, seed=args.seed)
    save_image(args.out, sky.image, args.format)
    if args.truth_out:
        save_image(args.truth_out, sky.truth.astype(float), args.format)
    _emit(
        {
            "out": args.out,
            "n_sources": len(sky.sources),
            "source_pixels": int(sky.truth.sum()),
            "image_mean": float(sky.image.mean()),
        }
    )
    return 0


def _cmd_evaluate(args):
    result = load_result(args.result)
    truth = load_image(args.truth, args.truth_format) != 0
    report = evaluate(result, truth, args.epsilon)
    doc = report.to_dict()
    if args.out:
        with open(args.out, "w") as fh:
            json.dump(doc, fh, indent=2)
    _emit(doc)
    return 0


def _cmd_graphfcp(args):
    points = read_locations(args.input)
    labeling = classify_phase(points, args.classes)
    superset = conservative_superset(points, args.alpha)
    t_c, clusters = graph_find_threshold(
        points, labeling, superset, args.epsilon, args.c, args.d
    )
    if args.out:
        write_locations(args.out, points, labeling, clusters)
    _emit(
        {
            "t_c": t_c,
            "n_clusters": len(clusters),
            "n_points": points.n,
            "superset_size": int(superset.size),
            "superset_cutoff": superset_threshold(points.n, args.alpha),
        }
    )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fcpdetect",
        description="Source detection with false-cluster-proportion control.",
    )
    sub = parser.add_subparsers(dest="command", metavar="command")

    p = sub.add_parser("simulate", help="build or reuse a cached noise-maxima table")
    _add_config_flags(p, with_input=False)
    p.add_argument("--rows", type=int, help="simulated image rows")
    p.add_argument("--cols", type=int, help="simulated image cols")
    p.add_argument("--out", help="table output path (default: the config's table_path)")
    p.set_defaults(handler=_cmd_simulate)

    p = sub.add_parser("detect", help="detect sources in an image")
    _add_config_flags(p)
    p.add_argument("--catalog", help="write the catalog CSV here")
    p.add_argument("--envelope", help="write the envelope-curve CSV here")
    p.add_argument("--metadata", help="write the run-metadata JSON here")
    p.add_argument("--result", help="write the full result JSON (with pixels) here")
    p.set_defaults(handler=_cmd_detect)

    p = sub.add_parser("msd", help="write the multi-scale derivative statistic")
    p.add_argument("--input", required=True)
    p.add_argument("--format", choices=FORMATS, default="ascii-matrix")
    p.add_argument("--out", required=True)
    p.add_argument("--out-format", choices=FORMATS, dest="out_format")
    p.add_argument("--scales", default="1,2,4,8")
    p.set_defaults(handler=_cmd_msd)

    p = sub.add_parser("synth", help="generate a synthetic Poisson sky")
    p.add_argument("--rows", type=int, required=True)
    p.add_argument("--cols", type=int, required=True)
    p.add_argument("--lambda0", type=float, default=0.3, help="background rate")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument(
        "--source",
        action="append",
        default=[],
        metavar="ROW,COL,AMP,WIDTH",
        help="planted source (repeatable)",
    )
    p.add_argument("--out", required=True)
    p.add_argument("--format", choices=FORMATS, default="ascii-matrix")
    p.add_argument("--truth-out", dest="truth_out", help="also write the 0/1 truth mask")
    p.set_defaults(handler=_cmd_synth)

    p = sub.add_parser("evaluate", help="score detections against known truth")
    p.add_argument("--result", required=True, help="result JSON from detect --result")
    p.add_argument("--truth", required=True, help="truth mask image (nonzero = source)")
    p.add_argument("--truth-format", choices=FORMATS, default="ascii-matrix", dest="truth_format")
    p.add_argument("--epsilon", type=float, default=0.99)
    p.add_argument("--out", help="also write the report JSON here")
    p.set_defaults(handler=_cmd_evaluate)

    p = sub.add_parser("graphfcp", help="cluster detection on a point cloud")
    p.add_argument("--input", required=True, help="CSV with columns x,y,pvalue,phase")
    p.add_argument("--out", help="write x,y,class,cluster_id CSV here")
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--epsilon", type=float, default=0.99)
    p.add_argument("--c", type=float, default=0.10)
    p.add_argument("--d", type=float, required=True, help="edge distance bound")
    p.add_argument("--classes", type=int, default=2, help="number of phase classes")
    p.set_defaults(handler=_cmd_graphfcp)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if not hasattr(args, "handler"):
        parser.print_help(file=sys.stderr)
        return 2
    try:
        return args.handler(args)
    except _CONFIG_ERRORS as exc:
        print(f"fcpdetect: configuration error: {exc}", file=sys.stderr)
        return 2
    except _INPUT_ERRORS as exc:
        print(f"fcpdetect: input error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
