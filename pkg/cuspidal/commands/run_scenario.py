import click

from cuspidal.commands import handle_errors, out_option, setup_logging, threads_option, verbose_option
from cuspidal.pipeline import Pipeline
from cuspidal.utils import load_scenario


@click.command()
@click.argument("scenario")
@out_option
@threads_option
@verbose_option
@handle_errors
def run(scenario, out, threads, verbose):
    """Run every enabled stage of SCENARIO, a file or a built-in scenario name."""
    setup_logging(verbose)
    config = load_scenario(scenario)
    Pipeline(config, out, threads=threads).run()


if __name__ == "__main__":
    run()
