"""
Standalone stage commands. Each reuses the upstream reports found in --out when
the manifest there belongs to the same scenario.
"""
import os

import click

from cuspidal.commands import handle_errors, out_option, setup_logging, threads_option, verbose_option
from cuspidal.errors import ScenarioError
from cuspidal.hodge import ClassifierInput, classification_report
from cuspidal.pipeline import REPORTS, Pipeline
from cuspidal.scatter import Tolerances
from cuspidal.utils import load_scenario, matrices_from_yaml, write_json


def _pipeline(scenario, out, threads, **overrides) -> Pipeline:
    config = load_scenario(scenario).with_overrides(**overrides)
    return Pipeline(config, out, threads=threads)


@click.command()
@click.argument("scenario")
@click.option("--s-grid", default=None, help="Real sweep grid a:b:n.")
@click.option("--k", type=int, default=None, help="Incoming fiber degree.")
@out_option
@threads_option
@verbose_option
@handle_errors
def sweep(scenario, s_grid, k, out, threads, verbose):
    """Tabulate T(s) and σ_min over the sweep grid."""
    setup_logging(verbose)
    _pipeline(scenario, out, threads, k=k, s_grid=s_grid).run(["sweep"])


@click.command()
@click.argument("scenario")
@click.option("--k", type=int, default=None, help="Incoming fiber degree.")
@out_option
@threads_option
@verbose_option
@handle_errors
def scan(scenario, k, out, threads, verbose):
    """Locate poles in (d, 2d] and check the σ_min floor off the real axis."""
    setup_logging(verbose)
    _pipeline(scenario, out, threads, k=k).run(["scan"])


@click.command()
@click.argument("scenario")
@click.option("--k", type=int, default=None, help="Incoming fiber degree.")
@click.option("--contour-radius", type=float, default=None, help="Residue contour radius.")
@out_option
@threads_option
@verbose_option
@handle_errors
def residues(scenario, k, contour_radius, out, threads, verbose):
    """Residues at the poles of the scan report."""
    setup_logging(verbose)
    _pipeline(scenario, out, threads, k=k, contour_radius=contour_radius).run(["residues"])


@click.command()
@click.argument("scenario")
@click.option("--k", type=int, default=None, help="Incoming fiber degree.")
@click.option("--tau", type=float, multiple=True, help="Spectral value, repeatable.")
@click.option("--r", "radii", type=float, multiple=True, help="Cut-off height, repeatable.")
@click.option("--contour-radius", type=float, default=None, help="Derivative contour radius.")
@out_option
@threads_option
@verbose_option
@handle_errors
def ms(scenario, k, tau, radii, contour_radius, out, threads, verbose):
    """Check the truncated-norm identity on the (τ, r) grid."""
    setup_logging(verbose)
    pipeline = _pipeline(
        scenario, out, threads, k=k, tau=tau, r=radii, contour_radius=contour_radius
    )
    pipeline.run(["ms"])


@click.command()
@click.argument("scenario", required=False)
@click.option(
    "--from-matrices",
    type=click.Path(exists=True, dir_okay=False),
    default=None,
    help="Classify user-supplied residue and T₀ matrices.",
)
@out_option
@verbose_option
@handle_errors
def classify(scenario, from_matrices, out, verbose):
    """Boundary image dimensions, adapted bases and the signature check."""
    setup_logging(verbose)
    if from_matrices is not None:
        with open(from_matrices, "r") as f:
            bundle, c_tilde, t_zero, tolerances = matrices_from_yaml(f)
        try:
            tolerances = Tolerances(**{key: float(value) for key, value in tolerances.items()})
        except TypeError as exc:
            raise ScenarioError(f"Invalid tolerances: {exc}") from exc
        report = classification_report(ClassifierInput(bundle, c_tilde, t_zero, tolerances=tolerances))
        os.makedirs(out, exist_ok=True)
        write_json(os.path.join(out, REPORTS["classify"]), report)
        return

    if scenario is None:
        raise ScenarioError("No scenario or --from-matrices provided")
    _pipeline(scenario, out, 1).run(["classify"])


if __name__ == "__main__":
    sweep()
