"""
Click entry points. Every command maps ScenarioError to exit code 2,
ConvergenceError to 3, InvariantViolation to 4 and other package errors to 1.
"""
import functools
import logging
import sys

import click

from cuspidal import THREADS_ENV
from cuspidal.errors import ConvergenceError, CuspidalError, InvariantViolation, ScenarioError

logger = logging.getLogger(__name__)

EXIT_CODES = [(ScenarioError, 2), (ConvergenceError, 3), (InvariantViolation, 4)]


def exit_code(exc: Exception) -> int:
    for error, code in EXIT_CODES:
        if isinstance(exc, error):
            return code
    return 1


def setup_logging(verbose: bool):
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
    )


def handle_errors(command):
    """Log package errors and exit with their code instead of a traceback."""

    @functools.wraps(command)
    def wrapper(*args, **kwargs):
        try:
            return command(*args, **kwargs)
        except CuspidalError as exc:
            logger.error("%s: %s", type(exc).__name__, exc)
            click.echo(f"Error: {exc}", err=True)
            sys.exit(exit_code(exc))

    return wrapper


verbose_option = click.option("--verbose", "-v", is_flag=True, help="Debug logging.")
threads_option = click.option(
    "--threads",
    type=int,
    default=None,
    envvar=THREADS_ENV,
    help="Worker threads for point-parallel stages.",
)
out_option = click.option("--out", default=".", type=click.Path(file_okay=False), help="Report directory.")
