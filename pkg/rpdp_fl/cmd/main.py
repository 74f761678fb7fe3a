"""The rpdp_fl command."""

import logging
import sys

import click
import click_log

from rpdp_fl import __version__
from rpdp_fl.cmd.check import check_command
from rpdp_fl.cmd.curves import curves_command
from rpdp_fl.cmd.fit import fit_command
from rpdp_fl.cmd.run import run_command
from rpdp_fl.errors import RpdpError

LOG = logging.getLogger(__name__)
PACKAGE_LOG = logging.getLogger("rpdp_fl")
click_log.basic_config(PACKAGE_LOG)


@click.group(context_settings={"help_option_names": ["-h", "--help"]})
@click.version_option(__version__, prog_name="rpdp_fl")
@click_log.simple_verbosity_option(PACKAGE_LOG, default="INFO")
def cli():
    """
    Record-level personalized differential privacy for federated learning.

    Dump privacy curves, fit the sampling-probability estimator, and run
    rPDP-FL against its uniform baselines.
    """


cli.add_command(curves_command)
cli.add_command(fit_command)
cli.add_command(run_command)
cli.add_command(check_command)


def main(argv=None):
    """The rpdp_fl command entry point; returns the exit status."""
    if argv is None:
        argv = sys.argv[1:]

    try:
        ret = cli.main(args=argv, prog_name="rpdp_fl", standalone_mode=False)
    except click.exceptions.Exit as exc:
        return exc.exit_code
    except click.ClickException as exc:
        exc.show()
        return exc.exit_code
    except click.exceptions.Abort:
        click.echo("Aborted!", err=True)
        return 1
    except RpdpError as exc:
        LOG.error("%s", exc)
        return exc.exit_code
    return ret if isinstance(ret, int) else 0
