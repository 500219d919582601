import argparse
import importlib.metadata
import logging
import sys
from pathlib import Path

from local_surrogates import controllers
from local_surrogates.errors import LocalSurrogatesError

# flag -> (config section, option)
CONFIG_FLAGS = {
    "seed": ("experiment", "seed"),
    "runs": ("experiment", "runs"),
    "local_kind": ("experiment", "local_kind"),
    "jobs": ("experiment", "jobs"),
    "source": ("data", "source"),
    "n_train": ("data", "n_train"),
    "blackbox": ("blackbox", "kind"),
    "lam": ("estimator", "lam"),
    "iterations": ("estimator", "iterations"),
}


def _version(package: str) -> str:
    try:
        return importlib.metadata.version(package)
    except importlib.metadata.PackageNotFoundError:
        return "unknown"


class NewlineVersionAction(argparse.Action):
    def __call__(self, parser, namespace, values, option_string=None):
        sys.stdout.write(
            f"local_surrogates {_version('local_surrogates')}\n"
            f"numpy {_version('numpy')}\n"
            f"scipy {_version('scipy')}\n"
            f"pandas {_version('pandas')}\n",
        )
        parser.exit()


def _override(text: str) -> tuple[str, str, str]:
    key, sep, value = text.partition("=")
    section, dot, option = key.strip().partition(".")
    if not sep or not dot or not section or not option:
        raise argparse.ArgumentTypeError(f"expected section.option=value, got {text!r}")
    return section, option, value


def get_args(args=None):
    parser = argparse.ArgumentParser(
        description="Distill black-box predictions into per-instance interpretable surrogates."
    )
    parser.add_argument("--version", nargs=0, action=NewlineVersionAction)
    parser.add_argument(
        "-v",
        "--verbose",
        action="count",
        default=0,
        help="Log progress (-v) or debug detail (-vv) to stderr",
    )
    subparsers = parser.add_subparsers(help="Provide a subcommand", dest="command", required=True)

    config_parser = argparse.ArgumentParser(add_help=False)
    config_parser.add_argument("-c", "--config", type=Path, help="Experiment config file (INI)")
    config_parser.add_argument(
        "-s",
        "--set",
        dest="set_options",
        type=_override,
        action="append",
        default=[],
        metavar="SECTION.OPTION=VALUE",
        help="Override any config option; repeatable and applied after --config",
    )
    config_parser.add_argument("--seed", type=str, help="Root seed (experiment.seed)")
    config_parser.add_argument("--runs", type=str, help="Independent runs (experiment.runs)")
    config_parser.add_argument(
        "--local-kind", type=str, help="Surrogate kind: ridge or shallow_tree (experiment.local_kind)"
    )
    config_parser.add_argument("--jobs", type=str, help="Worker threads (experiment.jobs)")
    config_parser.add_argument("--source", type=str, help="syn1, syn2, syn3 or csv (data.source)")
    config_parser.add_argument("--n-train", type=str, help="Synthetic training rows (data.n_train)")
    config_parser.add_argument("--blackbox", type=str, help="oracle, mlp or forest (blackbox.kind)")
    config_parser.add_argument("--lam", type=str, help="Selection penalty lambda (estimator.lam)")
    config_parser.add_argument("--iterations", type=str, help="REINFORCE iterations (estimator.iterations)")

    output_parser = argparse.ArgumentParser(add_help=False)
    output_parser.add_argument("-o", "--output", type=Path, help="Output directory")

    init_parser = subparsers.add_parser("init-config", help="Write an annotated example experiment config")
    init_parser.set_defaults(func=controllers.init_config)
    init_parser.add_argument(
        "--file", type=Path, default=Path("experiment.ini"), help="Target path (default: ./experiment.ini)"
    )
    init_parser.add_argument("--force", action="store_true", help="Overwrite an existing file")

    bench_parser = subparsers.add_parser(
        "synth-bench",
        help="Coefficient recovery on a synthetic dataset: per-decile AWD for every method",
        parents=[config_parser, output_parser],
    )
    bench_parser.set_defaults(func=controllers.synth_bench)

    train_parser = subparsers.add_parser(
        "train",
        help="Run stages 0-3 and save the black box, baseline and weight estimator",
        parents=[config_parser, output_parser],
    )
    train_parser.set_defaults(func=controllers.train)

    explain_parser = subparsers.add_parser(
        "explain", help="Explain rows of a CSV file with a trained model", parents=[output_parser]
    )
    explain_parser.set_defaults(func=controllers.explain)
    explain_parser.add_argument("--model-dir", type=Path, required=True, help="Output directory of `train`")
    explain_parser.add_argument(
        "--rows", type=Path, required=True, help="CSV with one column per model feature"
    )

    evaluate_parser = subparsers.add_parser(
        "evaluate",
        help="Score every method on the held-out test split",
        parents=[config_parser, output_parser],
    )
    evaluate_parser.set_defaults(func=controllers.evaluate)
    evaluate_parser.add_argument(
        "--model-dir", type=Path, help="Evaluate a trained model instead of training one"
    )

    sweep_parser = subparsers.add_parser(
        "sweep", help="Train one estimator per lambda and pick the best probe fidelity",
        parents=[config_parser, output_parser],
    )
    sweep_parser.set_defaults(func=controllers.sweep)

    subgroup_parser = subparsers.add_parser(
        "subgroup-report",
        help="Mean absolute coefficient per feature for groups of explanations",
        parents=[output_parser],
    )
    subgroup_parser.set_defaults(func=controllers.subgroup_report)
    subgroup_parser.add_argument("explanations", type=Path, help="explanations.csv from explain or evaluate")
    subgroup_parser.add_argument(
        "--groups", type=Path, required=True, help="INI file with a [groups] section of label = predicate"
    )
    subgroup_parser.add_argument(
        "--instances", action="store_true", help="Also write the per-instance table"
    )

    parsed = parser.parse_args(args)
    parsed.overrides = [
        (*CONFIG_FLAGS[flag], value)
        for flag in CONFIG_FLAGS
        if (value := getattr(parsed, flag, None)) is not None
    ]
    # explicit flags win over --set
    parsed.overrides = list(getattr(parsed, "set_options", [])) + parsed.overrides
    return parsed


def configure_logging(verbosity: int):
    level = logging.WARNING if verbosity == 0 else logging.INFO if verbosity == 1 else logging.DEBUG
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)


def main():
    args = get_args()
    configure_logging(args.verbose)
    try:
        args.func(args)
    except LocalSurrogatesError as ex:
        print(f"Error: {ex}", file=sys.stderr)
        sys.exit(1)


if __name__ == "__main__":
    main()
