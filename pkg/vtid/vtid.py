#!/usr/bin/env python3
# See README for more information.

import argparse
import json
import logging
import os
import sys
from typing import List, Optional

from vtid import vtidaddfs
from vtid import vtidclassifiers
from vtid import vtideval
from vtid import vtidfeatures
from vtid import vtidingest
from vtid import vtidsaver
from vtid import vtidstats
from vtid import vtidsynth

MODES = ("EXTRACT", "RANK", "EVAL", "COMPARE")

# Flags holding comma-separated lists
LIST_FLAGS = ("inputs", "datasets", "selectors")


def parse_commandline_flags(argv: Optional[List[str]] = None) -> dict:
    """Uses argparse to handle parsing of command line flags."""
    parser = argparse.ArgumentParser(
        description=(
            "Identifies encrypted video traffic from flow statistics. It will "
            "do the following based on the mode. "
            "|EXTRACT| - Read pcap/pcapng captures or text traces (files or "
            "directories; traces in a subdirectory are labeled with its name), "
            "assemble bidirectional flows, drop mice flows, label flows by SNI "
            "rules and write the 89 features of every flow to a CSV. "
            "|RANK| - Rank the features of a labeled CSV with ADDFS and write "
            "rank,feature_name,emd_score. "
            "|EVAL| - Cross-validate a classifier on the top fractions of a "
            "selector's ranking and write a sweep CSV; optionally run the "
            "peak feature ablation and the sliding-window parameter sweeps. "
            "|COMPARE| - Evaluate several selectors on several datasets and "
            "write the accuracies plus one Wilcoxon signed-rank table per "
            "fraction. "
            "Every CSV starts with a '# config:' line; passing that CSV to "
            "--config re-runs the same configuration."),
        formatter_class=argparse.ArgumentDefaultsHelpFormatter)

    mode_agnostic = parser.add_argument_group(
        "Mode Agnostic args", "Arguments which apply to every mode of VTID")
    mode_agnostic.add_argument(
        "mode",
        nargs="?",
        default=None,
        metavar="MODE",
        help="one of EXTRACT, RANK, EVAL, COMPARE (case-insensitive)")
    mode_agnostic.add_argument(
        "--log",
        default="info",
        metavar="LEVEL",
        help=("logging level - one of DEBUG, INFO, WARNING, ERROR, and CRITICAL"
              " - See https://docs.python.org/3/howto/logging.html for more "
              "information"))
    mode_agnostic.add_argument(
        "--config",
        default="",
        metavar="FILE",
        help=("JSON object of flag values (keys are flag names with "
              "underscores), or a CSV written by an earlier run; flags given "
              "on the command line take precedence"))
    mode_agnostic.add_argument(
        "--seed",
        default=None,
        metavar="INT",
        type=int,
        help="random seed; required by EVAL, COMPARE and --synthetic")
    mode_agnostic.add_argument("--jobs",
                               default=1,
                               metavar="N",
                               type=int,
                               help="number of worker processes")

    extract_group = parser.add_argument_group(
        "EXTRACT args", "Also used by the EVAL parameter sweeps")
    extract_group.add_argument(
        "--inputs",
        default="",
        metavar="PATH1,PATH2,...",
        help="a comma-separated list of trace files and/or directories")
    extract_group.add_argument(
        "--label-rules",
        default="",
        metavar="FILE",
        help=("file of 'pattern<TAB>class' lines; the first pattern matching a "
              "flow's SNI gives its class and overrides the directory label"))
    extract_group.add_argument(
        "--default-label",
        default=None,
        metavar="LABEL",
        help="class of flows with neither a matching rule nor a directory")
    extract_group.add_argument(
        "--elephant-threshold",
        default=vtidingest.DEFAULT_ELEPHANT_THRESHOLD,
        metavar="N",
        type=int,
        help="minimum number of non-zero-payload packets of a kept flow")
    extract_group.add_argument("--no-elephant-filter",
                               action="store_true",
                               help="keep every flow")
    extract_group.add_argument(
        "--synthetic",
        default=0,
        metavar="N",
        type=int,
        help=("use N flows per class of the synthetic bursty/smooth corpus "
              "instead of --inputs"))
    extract_group.add_argument("--alpha",
                               default=5.0,
                               metavar="SECONDS",
                               type=float,
                               help="payload peak bucket width")
    extract_group.add_argument("--beta",
                               default=60.0,
                               metavar="SECONDS",
                               type=float,
                               help="payload peak horizon")
    extract_group.add_argument("--bucket-width",
                               default=1.0,
                               metavar="SECONDS",
                               type=float,
                               help="byte-rate bucket width T")
    extract_group.add_argument("--window-length",
                               default=3.0,
                               metavar="SECONDS",
                               type=float,
                               help="sliding window length L")
    extract_group.add_argument("--offset-factor",
                               default=0.5,
                               metavar="FLOAT",
                               type=float,
                               help="sliding window step as a share of L")
    extract_group.add_argument("--extract-output",
                               default="features.csv",
                               metavar="FILE.csv",
                               help="feature CSV to write")
    extract_group.add_argument(
        "--feature-dictionary",
        default="",
        metavar="FILE.csv",
        help="also write the feature names and descriptions here")

    rank_group = parser.add_argument_group("RANK args",
                                           "Also used by EVAL and COMPARE")
    rank_group.add_argument("--dataset",
                            default="",
                            metavar="FILE",
                            help="labeled CSV or KEEL file (RANK and EVAL)")
    rank_group.add_argument("--max-intervals",
                            default=vtidaddfs.DEFAULT_MAX_INTERVALS,
                            metavar="N",
                            type=int,
                            help="ChiMerge interval cap")
    rank_group.add_argument("--confidence",
                            default=vtidaddfs.DEFAULT_CONFIDENCE,
                            metavar="FLOAT",
                            type=float,
                            help="ChiMerge stopping confidence")
    rank_group.add_argument(
        "--support",
        default=vtidaddfs.DEFAULT_SUPPORT,
        choices=vtidaddfs.SUPPORTS,
        help="ground positions of the intervals for the EMD")
    rank_group.add_argument("--rank-output",
                            default="ranking.csv",
                            metavar="FILE.csv",
                            help="ranking CSV to write")

    eval_group = parser.add_argument_group("EVAL args",
                                           "Also used by COMPARE")
    eval_group.add_argument("--selector",
                            default="addfs",
                            choices=tuple(vtideval.SELECTORS),
                            help="feature selector to sweep")
    eval_group.add_argument(
        "--fractions",
        default="",
        metavar="START:STOP:STEP|F1,F2,...",
        help=("feature fractions; defaults to 0.1:0.9:0.1 for EVAL and 0.1 "
              "for COMPARE"))
    eval_group.add_argument("--classifier",
                            default=vtidclassifiers.DECISION_TREE,
                            choices=vtidclassifiers.CLASSIFIERS,
                            help="classifier to train")
    eval_group.add_argument("--k",
                            default=vtidclassifiers.DEFAULT_K,
                            metavar="INT",
                            type=int,
                            help="neighbors of the knn classifier")
    eval_group.add_argument("--folds",
                            default=vtideval.DEFAULT_FOLDS,
                            metavar="INT",
                            type=int,
                            help="cross-validation folds")
    eval_group.add_argument(
        "--leaky",
        action="store_true",
        help="rank features once on the full dataset instead of per fold")
    eval_group.add_argument("--eval-output",
                            default="sweep.csv",
                            metavar="FILE.csv",
                            help="sweep CSV to write")
    eval_group.add_argument("--ablate-peaks",
                            action="store_true",
                            help="compare all features against all but the "
                            "peak-point features")
    eval_group.add_argument("--ablation-output",
                            default="ablation.csv",
                            metavar="FILE.csv",
                            help="ablation CSV to write")
    eval_group.add_argument(
        "--window-sweep",
        action="store_true",
        help=("re-extract the sliding-window features for L = 1..6 from "
              "--inputs or --synthetic and cross-validate each"))
    eval_group.add_argument(
        "--offset-sweep",
        action="store_true",
        help="same for the offset factor Z = 0.1..1.0 at fixed L")
    eval_group.add_argument("--parameter-sweep-output",
                            default="parameter-sweep.csv",
                            metavar="FILE.csv",
                            help="parameter sweep CSV to write")

    compare_group = parser.add_argument_group("COMPARE args")
    compare_group.add_argument(
        "--datasets",
        default="",
        metavar="FILE1,FILE2,...",
        help="a comma-separated list of labeled CSV or KEEL files")
    compare_group.add_argument(
        "--selectors",
        default="addfs,relief,pearson,fscore",
        metavar="NAME1,NAME2,...",
        help="a comma-separated list of selectors; addfs is tested against "
        "the others")
    compare_group.add_argument("--wilcoxon-method",
                               default=vtidstats.WILCOXON_AUTO,
                               choices=vtidstats.WILCOXON_METHODS,
                               help="how Wilcoxon p-values are computed")
    compare_group.add_argument(
        "--compare-output-dir",
        default="compare-output",
        metavar="DIR",
        help=("directory for comparison.csv and one wilcoxon-FRACTION.csv "
              "per fraction"))

    # Check for no arguments
    argv = sys.argv[1:] if argv is None else argv
    if len(argv) == 0:
        parser.print_usage(sys.stderr)
        sys.exit(1)

    args = vars(parser.parse_args(argv))
    if args["config"]:
        config = load_config(args["config"])
        unknown = sorted(set(config) - set(args))
        if unknown:
            raise ValueError(f"{args['config']}: unknown configuration keys "
                             f"{unknown}")
        parser.set_defaults(**config)
        args = vars(parser.parse_args(argv))

    if args["mode"] is None:
        raise ValueError("no mode given - one of EXTRACT, RANK, EVAL, COMPARE")
    # Make mode case-insensitive
    args["mode"] = args["mode"].upper()
    if args["jobs"] < 1:
        raise ValueError(f"--jobs must be >= 1, got {args['jobs']}")

    # The echo holds the flags as typed, before lists are split
    args["config_echo"] = {
        key: value for key, value in args.items() if key != "config"
    }

    # Parse comma-separated lists
    for comma_sep_list in LIST_FLAGS:
        value = args[comma_sep_list].strip()
        args[comma_sep_list] = [] if value == "" else [
            item.strip() for item in value.split(",")
        ]

    return args


def load_config(path: str) -> dict:
    """Flag values from a JSON file or from the echo line of an output CSV"""
    echoed = vtidsaver.read_config_comment(path)
    if echoed is not None:
        return echoed
    with open(path) as f:
        try:
            config = json.load(f)
        except json.JSONDecodeError as e:
            raise ValueError(f"{path}: not a JSON config: {e}") from e
    if not isinstance(config, dict):
        raise ValueError(f"{path}: config must be a JSON object")
    return config


def parse_fractions(text: str) -> List[float]:
    """Parses 'START:STOP:STEP' (inclusive) or 'F1,F2,...'"""
    try:
        if ":" in text:
            start, stop, step = (float(part) for part in text.split(":"))
            if step <= 0:
                raise ValueError(f"step must be > 0, got {step}")
            count = int(round((stop - start) / step)) + 1
            fractions = [round(start + i * step, 10) for i in range(count)]
        else:
            fractions = [float(part) for part in text.split(",")]
    except ValueError as e:
        raise ValueError(f"bad fractions {text!r}: {e}") from e
    for fraction in fractions:
        if not 0 < fraction <= 1:
            raise ValueError(f"fraction {fraction} is outside (0, 1]")
    return fractions


def configure_logging(loglevel: str):
    """Configures Python's logging library"""
    numeric_level = getattr(logging, loglevel.upper(), None)
    if not isinstance(numeric_level, int):
        raise ValueError(f"Invalid log level: {loglevel}")
    logging.basicConfig(format="%(levelname)s: %(message)s",
                        level=numeric_level)


def print_welcome(mode: str):
    """Print a fun little message"""
    logging.info("")
    logging.info(r"        _   _     _ ")
    logging.info(r" __   _| |_(_) __| |")
    logging.info(r" \ \ / / __| |/ _` |")
    logging.info(r"  \ V /| |_| | (_| |")
    logging.info(r"   \_/  \__|_|\__,_|")
    logging.info("")
    logging.info(f"Welcome! You are using VTID in {mode} mode")
    logging.info("")


def log_config(args: dict):
    logging.info("Effective configuration: " +
                 json.dumps(args["config_echo"], sort_keys=True))


def require_seed(args: dict, what: str) -> int:
    if args["seed"] is None:
        raise ValueError(f"{what} is randomized; pass --seed")
    return args["seed"]


def peak_params(args: dict) -> vtidfeatures.PeakParams:
    return vtidfeatures.PeakParams(alpha=args["alpha"],
                                   beta=args["beta"],
                                   bucket_width=args["bucket_width"],
                                   window_length=args["window_length"],
                                   offset_factor=args["offset_factor"])


def generate_flows(args: dict) -> List[vtidingest.Flow]:
    """Flows of the synthetic corpus or of the --inputs traces"""
    if args["synthetic"] > 0:
        seed = require_seed(args, "--synthetic")
        return vtidsynth.synthesize_corpus(args["synthetic"], seed)
    if not args["inputs"]:
        raise ValueError("no --inputs given")
    traces = vtidingest.find_traces(args["inputs"])
    if not traces:
        raise ValueError(f"no traces found in {args['inputs']}")
    rules = (vtidingest.load_label_rules(args["label_rules"])
             if args["label_rules"] else [])
    threshold = (None if args["no_elephant_filter"] else
                 args["elephant_threshold"])
    generator = vtidingest.FlowGenerator(traces, rules, args["default_label"],
                                         threshold)
    generator.run()
    return generator.get_data()


#
# EXTRACT mode
#


def run_extract(args: dict):
    """Extracts and saves the features of every flow."""
    params = peak_params(args)
    flows = generate_flows(args)
    matrix = vtidfeatures.extract_matrix(flows, params, args["default_label"],
                                         args["jobs"])
    saver = vtidsaver.FeatureSaver(matrix, args["extract_output"],
                                   args["feature_dictionary"] or None,
                                   args["config_echo"])
    saver.run()


#
# RANK mode
#


def run_rank(args: dict):
    """Ranks the features of a dataset with ADDFS."""
    if not args["dataset"]:
        raise ValueError("no --dataset given")
    dataset = vtideval.load_tabular(args["dataset"])
    ranker = vtidaddfs.AddfsRanker(dataset, args["max_intervals"],
                                   args["confidence"], args["support"],
                                   args["jobs"])
    ranker.run()
    ranking = ranker.get_data()
    for rank, name in enumerate(ranking.ranked_names()[:10], start=1):
        logging.info(f"{rank:>3}. {name}")
    vtidsaver.write_ranking(ranking, args["rank_output"], args["config_echo"])


#
# EVAL mode
#


def run_eval(args: dict):
    """Runs the fraction sweep and the optional ablation and sweeps."""
    seed = require_seed(args, "EVAL")
    parameter_sweeps = [
        parameter for parameter, flag in ((vtideval.WINDOW, "window_sweep"),
                                          (vtideval.OFFSET, "offset_sweep"))
        if args[flag]
    ]
    if not args["dataset"] and not parameter_sweeps:
        raise ValueError("EVAL needs --dataset, --window-sweep or "
                         "--offset-sweep")
    if args["ablate_peaks"] and not args["dataset"]:
        raise ValueError("--ablate-peaks needs --dataset")

    logging.info("STARTING EVAL")
    if args["dataset"]:
        dataset = vtideval.load_tabular(args["dataset"])
        fractions = (parse_fractions(args["fractions"]) if args["fractions"]
                     else list(vtideval.DEFAULT_FRACTIONS))
        selector = vtideval.make_selector(args["selector"],
                                          args["max_intervals"],
                                          args["confidence"], args["support"])
        reports = vtideval.run_sweep(dataset, selector, fractions,
                                     args["classifier"], args["folds"], seed,
                                     args["k"], args["leaky"], args["jobs"])
        vtidsaver.write_sweep(reports, args["eval_output"],
                              args["config_echo"])
        if args["ablate_peaks"]:
            ablation = vtideval.ablation_peak_features(
                dataset, args["classifier"], args["folds"], seed, args["k"],
                args["jobs"])
            vtidsaver.write_ablation(ablation, args["ablation_output"],
                                     args["config_echo"])

    if parameter_sweeps:
        flows = generate_flows(args)
        points = []
        for parameter in parameter_sweeps:
            points.extend(
                vtideval.run_parameter_sweep(flows,
                                             parameter,
                                             params=peak_params(args),
                                             classifier=args["classifier"],
                                             k_folds=args["folds"],
                                             seed=seed,
                                             k=args["k"],
                                             default_label=args["default_label"],
                                             jobs=args["jobs"]))
        vtidsaver.write_parameter_sweep(points, args["parameter_sweep_output"],
                                        args["config_echo"])
    logging.info("FINISHED EVAL")


#
# COMPARE mode
#


def run_compare(args: dict):
    """Compares selectors across datasets with Wilcoxon tables."""
    seed = require_seed(args, "COMPARE")
    if not args["datasets"]:
        raise ValueError("no --datasets given")
    if not args["selectors"]:
        raise ValueError("no --selectors given")
    fractions = (parse_fractions(args["fractions"])
                 if args["fractions"] else [0.1])
    datasets = [(os.path.splitext(os.path.basename(path))[0],
                 vtideval.load_tabular(path)) for path in args["datasets"]]
    selectors = [
        vtideval.make_selector(name, args["max_intervals"], args["confidence"],
                               args["support"]) for name in args["selectors"]
    ]
    report = vtideval.run_comparison(datasets, selectors, fractions,
                                     args["classifier"], args["folds"], seed,
                                     args["k"], args["wilcoxon_method"],
                                     args["leaky"], args["jobs"])

    dirname = args["compare_output_dir"]
    os.makedirs(dirname, exist_ok=True)
    vtidsaver.write_comparison(report, f"{dirname}/comparison.csv",
                               args["config_echo"])
    for fraction, table in report.wilcoxon.items():
        for name, result in table:
            logging.info(f"fraction {fraction}: {report.reference} vs {name}: "
                         f"R+={result.r_plus} R-={result.r_minus} "
                         f"p={result.p_value:.4g}")
        vtidsaver.write_wilcoxon(report, fraction,
                                 f"{dirname}/wilcoxon-{fraction!r}.csv",
                                 args["config_echo"])


#
# Main
#


def main(argv: Optional[List[str]] = None) -> int:
    """Runs everything; returns the exit code."""
    run_mode = {
        "EXTRACT": run_extract,
        "RANK": run_rank,
        "EVAL": run_eval,
        "COMPARE": run_compare,
    }
    try:
        args = parse_commandline_flags(argv)
        configure_logging(args["log"])
        if args["mode"] not in run_mode:
            raise ValueError(f"Invalid mode: {args['mode']}")
        print_welcome(args["mode"])
        log_config(args)
        run_mode[args["mode"]](args)
    except (RuntimeError, ValueError, OSError) as e:
        logging.error(str(e))
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
