"""The rpdp_fl check command."""

import click

from rpdp_fl.artifacts import validate_manifest


@click.command("check")
@click.argument("directories", nargs=-1, required=True, type=click.Path(file_okay=False))
def check_command(directories):
    """
    Check that output DIRECTORIES still match their MANIFEST.sha1.
    """
    ret = 0
    for directory in directories:
        problems = validate_manifest(directory)
        if problems:
            for problem in problems:
                click.echo(problem)
            ret = 1
        else:
            click.echo(f"{directory} is good")
    return ret
