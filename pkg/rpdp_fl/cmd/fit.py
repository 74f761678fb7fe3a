"""The rpdp_fl fit command."""

import logging

import click

from rpdp_fl.artifacts import ArtifactWriter
from rpdp_fl.cmd.options import experiment_options
from rpdp_fl.scf import fit_estimator, observation_rows

LOG = logging.getLogger(__name__)


@click.command("fit")
@experiment_options
def fit_command(config):
    """
    Fit the sampling-probability estimator and write scf_fit.json.
    """
    fit, observations = fit_estimator(
        config.mechanism, config.fit.q_grid, setting=config.fit.setting, workers=config.fit.workers
    )
    writer = ArtifactWriter(config.run.output_dir)
    writer.write_json("scf_fit.json", fit.to_dict())
    writer.write_csv("scf_observations.csv", observation_rows(observations))
    writer.write_manifest()
    click.echo(f"R^2 = {fit.r_squared:.6f}")
    return 0
