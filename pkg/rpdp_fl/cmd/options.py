"""Options shared by the experiment commands."""

import functools

import click

from rpdp_fl.configfile import load_config


def experiment_options(func):
    """Add --config, --seed, --out, --threat and --workers to a command."""

    @click.option(
        "--config",
        "config_path",
        default=None,
        help="Experiment config file, or the name of a packaged one (privacy_curves, synthetic_benchmark, ...).",
    )
    @click.option("--seed", type=click.IntRange(min=0), default=None, help="Run this seed instead of run.seeds.")
    @click.option("--out", default=None, help="Output directory; overrides run.output_dir.")
    @click.option(
        "--threat",
        type=click.Choice(["server", "client"]),
        default=None,
        help="Who the guarantee is against; overrides mechanism.threat.",
    )
    @click.option("--workers", type=click.IntRange(min=1), default=None, help="Worker threads for fitting and training.")
    @functools.wraps(func)
    def wrapper(config_path, seed, out, threat, workers, **kwargs):
        overrides = {}
        if seed is not None:
            overrides.setdefault("run", {})["seeds"] = [seed]
        if out is not None:
            overrides.setdefault("run", {})["output_dir"] = out
        if threat is not None:
            overrides["mechanism"] = {"threat": threat}
        if workers is not None:
            overrides.setdefault("run", {})["workers"] = workers
            overrides["fit"] = {"workers": workers}
        return func(load_config(config_path, overrides), **kwargs)

    return wrapper
