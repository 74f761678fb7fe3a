"""The rpdp_fl curves command."""

import dataclasses
import logging

import click

from rpdp_fl.accountant import centralized_rdp_curve, dp_curve, fl_rdp_curve, rdp_to_dp
from rpdp_fl.artifacts import ArtifactWriter
from rpdp_fl.cmd.options import experiment_options

LOG = logging.getLogger(__name__)

CURVES = {
    "federated": fl_rdp_curve,
    "centralized": centralized_rdp_curve,
}


def curve_rows(config):
    """Rows of rdp_curve.csv, dp_curve.csv and opt_eps_vs_q.csv for every setting, σ and q."""
    settings = ["federated", "centralized"] if config.curves.centralized else ["federated"]
    sigmas = config.curves.sigmas or (config.mechanism.sigma,)
    rdp_rows, dp_rows, opt_rows = [], [], []
    for setting in settings:
        for sigma in sigmas:
            params = dataclasses.replace(config.mechanism, sigma=sigma)
            for q in config.curves.q_values:
                curve = CURVES[setting](q, params)
                eps = dp_curve(curve, params.delta)
                best = rdp_to_dp(curve, params.delta)
                for alpha, rho, eps_alpha in zip(curve.orders, curve.values, eps):
                    rdp_rows.append((setting, sigma, q, alpha, rho))
                    dp_rows.append((setting, sigma, q, alpha, eps_alpha))
                opt_rows.append((setting, sigma, q, best.epsilon, best.alpha_star))
            LOG.debug("%s curves for sigma=%g done", setting, sigma)
    return rdp_rows, dp_rows, opt_rows


@click.command("curves")
@experiment_options
def curves_command(config):
    """
    Write RDP, DP and optimum-budget curves over curves.q_values.
    """
    rdp_rows, dp_rows, opt_rows = curve_rows(config)
    writer = ArtifactWriter(config.run.output_dir)
    writer.write_csv("rdp_curve.csv", rdp_rows)
    writer.write_csv("dp_curve.csv", dp_rows)
    writer.write_csv("opt_eps_vs_q.csv", opt_rows)
    writer.write_manifest()
    LOG.info("wrote %d optimum budgets to %s", len(opt_rows), writer.path("opt_eps_vs_q.csv"))
    return 0
