"""
The ``alpha-mixture`` command runs replicated mixture-model optimisation
experiments described by a TOML configuration file.

.. highlight:: bash

Running an experiment
=====================

.. code:: text

    $ alpha-mixture run CONFIG.toml --out OUTPUT_DIR

Runs every trial of the experiment and writes ``trace.csv``,
``summary.csv``, ``weights.csv``, a gnuplot script and the final mixture of
each trial to ``OUTPUT_DIR``. The master seed, number of trials and number of
worker threads given in the file may be overridden with ``--seed``,
``--trials`` and ``--workers``. Outputs do not depend on the number of
workers.

Sweeps
======

.. code:: text

    $ alpha-mixture sweep CONFIG.toml --out OUTPUT_DIR

Runs the experiment once for every combination of the ``eta``, ``gamma``
and ``num_components`` values listed in the ``[sweep]`` section of the
configuration. Each combination is written to its own ``cell_<k>``
subdirectory and listed in ``OUTPUT_DIR/index.csv``.

Evaluating checkpoints
======================

.. code:: text

    $ alpha-mixture eval CONFIG.toml OUTPUT_DIR/states/*.json

Recomputes the VR bound (and squared error of the mixture mean, when the
target mean is known) of saved final states, printing CSV to stdout.

Targets
=======

.. code:: text

    $ alpha-mixture targets list

Lists the built-in targets.

Exit status
===========

0 on success, 2 when the configuration is invalid and 3 when a trial
produced an invalid mixture.
"""

from typing import Optional, Sequence

import sys

import logging

from argparse import ArgumentParser, Namespace

from pathlib import Path

from alpha_mixture.harness.config import ExperimentConfig, SweepSpec, load_config

from alpha_mixture.harness.exceptions import ConfigError, HarnessError, NumericDegeneracyError

from alpha_mixture.harness.report import evaluate_checkpoint, replicate, sweep, write_report

from alpha_mixture.targets import TargetKind


EXIT_CONFIG_ERROR = 2
EXIT_NUMERIC_DEGENERACY = 3


def _add_experiment_arguments(parser: ArgumentParser) -> None:
    parser.add_argument(
        "config",
        type=Path,
        help="""
            The TOML experiment configuration file.
        """,
    )
    parser.add_argument(
        "--out",
        "-o",
        type=Path,
        required=True,
        help="""
            The directory to write results to. Will be created if it does not
            exist. Existing files may be overwritten silently.
        """,
    )
    parser.add_argument(
        "--seed",
        type=int,
        default=None,
        help="""
            Override the master seed given in the configuration.
        """,
    )
    parser.add_argument(
        "--trials",
        type=int,
        default=None,
        help="""
            Override the number of trials given in the configuration.
        """,
    )
    parser.add_argument(
        "--workers",
        "-j",
        type=int,
        default=None,
        help="""
            Override the number of trials run concurrently.
        """,
    )
    parser.add_argument(
        "--progress",
        "-p",
        action="store_true",
        help="""
            Show a progress bar while trials run.
        """,
    )


def _load(args: Namespace) -> tuple[ExperimentConfig, SweepSpec]:
    config, spec = load_config(args.config)
    return (
        config.with_overrides(seed=args.seed, trials=args.trials, workers=args.workers),
        spec,
    )


def _run(args: Namespace) -> None:
    config, _ = _load(args)
    write_report(replicate(config, progress=args.progress), args.out)


def _sweep(args: Namespace) -> None:
    config, spec = _load(args)
    sweep(config, spec, args.out, progress=args.progress)


def _eval(args: Namespace) -> None:
    config, _ = load_config(args.config)
    evaluations, log_mse = evaluate_checkpoint(args.checkpoints, config)
    sys.stdout.write("path,vr_bound,psi_exact,squared_error\n")
    for e in evaluations:
        psi = "" if e.psi_exact is None else repr(e.psi_exact)
        error = "" if e.squared_error is None else repr(e.squared_error)
        sys.stdout.write(f"{e.path},{e.vr_bound!r},{psi},{error}\n")
    if log_mse is not None:
        sys.stdout.write(f"# logmse: {log_mse!r}\n")


def _targets(args: Namespace) -> None:
    for kind in TargetKind:
        sys.stdout.write(f"{kind.value}\t{kind.description}\n")


def main(argv: Optional[Sequence[str]] = None) -> None:
    parser = ArgumentParser(
        description="""
            Monotonic alpha-divergence minimisation for mixture models:
            replicated experiments and reports.
        """,
    )
    parser.add_argument(
        "--verbose",
        "-v",
        action="count",
        default=0,
        help="""
            Log progress (-v) or per-iteration diagnostics (-vv) to stderr.
        """,
    )
    subparsers = parser.add_subparsers(dest="command", required=True)

    run_parser = subparsers.add_parser(
        "run",
        help="""
            Run a replicated experiment.
        """,
    )
    _add_experiment_arguments(run_parser)
    run_parser.set_defaults(handler=_run)

    sweep_parser = subparsers.add_parser(
        "sweep",
        help="""
            Run an experiment for every cell of the [sweep] section.
        """,
    )
    _add_experiment_arguments(sweep_parser)
    sweep_parser.set_defaults(handler=_sweep)

    eval_parser = subparsers.add_parser(
        "eval",
        help="""
            Recompute metrics of saved final mixtures.
        """,
    )
    eval_parser.add_argument(
        "config",
        type=Path,
        help="""
            The configuration the checkpoints were produced with.
        """,
    )
    eval_parser.add_argument(
        "checkpoints",
        type=Path,
        nargs="+",
        help="""
            Saved mixture states (states/trial_<k>.json).
        """,
    )
    eval_parser.set_defaults(handler=_eval)

    targets_parser = subparsers.add_parser(
        "targets",
        help="""
            Information about the built-in targets.
        """,
    )
    targets_parser.add_argument("action", choices=["list"])
    targets_parser.set_defaults(handler=_targets)

    args = parser.parse_args(argv)

    logging.basicConfig(
        level={0: logging.WARNING, 1: logging.INFO}.get(args.verbose, logging.DEBUG),
        format="%(levelname)s:%(name)s:%(message)s",
    )

    try:
        args.handler(args)
    except ConfigError as e:
        sys.stderr.write(f"{e}\n")
        sys.exit(EXIT_CONFIG_ERROR)
    except NumericDegeneracyError as e:
        sys.stderr.write(f"{e}\n")
        sys.exit(EXIT_NUMERIC_DEGENERACY)
    except HarnessError as e:
        sys.stderr.write(f"{e}\n")
        sys.exit(1)


if __name__ == "__main__":
    main()
