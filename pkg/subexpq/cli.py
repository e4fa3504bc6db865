"""Console script for subexpq."""
import click
import sys
import yaml
from loguru import logger

from . import Analyzer, __version__
from .errors import EXIT_USAGE, SubexpqError
from .modelfile import load_model
from .queues.bmapq import Regime


def CommandWithConfigFile(config_file_param_name):
    class CustomCommandClass(click.Command):
        def invoke(self, ctx):
            config_file = ctx.params[config_file_param_name]
            if config_file is not None:
                with open(config_file) as f:
                    config_data = yaml.safe_load(f) or {}
                    for param, value in ctx.params.items():
                        if value is None and param in config_data:
                            ctx.params[param] = config_data[param]

            return super(CustomCommandClass, self).invoke(ctx)

    return CustomCommandClass


class CommandGroup(click.Group):
    def resolve_command(self, ctx, args):
        try:
            return super(CommandGroup, self).resolve_command(ctx, args)
        except click.UsageError as exc:
            click.echo(ctx.get_usage(), err=True)
            click.echo(f"Error: {exc.format_message()}", err=True)
            ctx.exit(EXIT_USAGE)


def common_options(f):
    options = [
        click.argument("model_file", type=click.Path(exists=True, dir_okay=False)),
        click.option("--log_level", default=None, help="Sets the logging level"),
        click.option("--log_file", default=None, help="Sets the logging filename"),
        click.option("--log_rotation", default=None, help="Sets the logging file rotation mode"),
        click.option("--levels", type=int, default=None, help="Highest level K solved for"),
        click.option("--tol", type=float, default=None, help="Solver tolerance"),
        click.option("--out", type=click.Path(file_okay=False), default=None, help="Report directory"),
        click.option("--format", type=click.Choice(["csv", "json"]), default=None, help="Table format"),
        click.option(
            "-c",
            "--config_file",
            type=click.Path(exists=True),
            help="Loads configuration from a yaml file",
        ),
    ]
    for option in reversed(options):
        f = option(f)
    return f


def simulation_options(f):
    options = [
        click.option("--seed", type=int, default=None, help="Master seed of the random streams"),
        click.option("--events", type=int, default=None, help="Events per replication"),
        click.option("--replications", type=int, default=None, help="Independent replications"),
        click.option("--workers", type=int, default=None, help="Processes running replications"),
    ]
    for option in reversed(options):
        f = option(f)
    return f


def _config(params):
    return {
        "logger": {
            "level": params.pop("log_level", None) or "INFO",
            "filename": params.pop("log_file", None) or "subexpq.log",
            "rotation": params.pop("log_rotation", None),
        },
        "solver": {
            "levels": params.get("levels"),
            "tol": params.get("tol"),
            "seed": params.get("seed"),
            "events": params.get("events"),
            "replications": params.get("replications"),
            "workers": params.get("workers"),
            "window": params.get("window"),
            "out": params.get("out"),
            "format": params.get("format"),
        },
    }


def _run(command, params, call):
    """
    Loads the model, runs ``call(analyzer, model)`` and writes the report;
    library errors become exit statuses.
    """
    params = dict(params)
    try:
        analyzer = Analyzer(_config(params))
        model = load_model(params["model_file"])
        frame, summary = call(analyzer, model)
        analyzer.emit_report(command, frame, summary, model)
    except SubexpqError as exc:
        logger.error(f"{command} failed: {exc}")
        click.echo(f"Error: {exc}", err=True)
        return exc.exit_code
    return 0


@click.group(cls=CommandGroup)
@click.version_option(version=__version__)
def main():
    """Subexponential tail asymptotics of GI/G/1-type chains and BMAP queues."""


@main.command(cls=CommandWithConfigFile("config_file"))
@common_options
@click.option("--echo", is_flag=True, help="Prints the model file in canonical form")
def validate(echo, **params):
    """Checks the structural assumptions and the stability of a model."""

    def call(analyzer, model):
        if echo:
            click.echo(model.echo())
        return analyzer.validate(model)

    sys.exit(_run("validate", params, call))


@main.command(cls=CommandWithConfigFile("config_file"))
@common_options
def stationary(**params):
    """Stationary distribution up to level K."""
    sys.exit(_run("stationary", params, lambda analyzer, model: analyzer.stationary(model)))


@main.command(cls=CommandWithConfigFile("config_file"))
@common_options
@click.option("--window", type=int, nargs=2, default=None, help="Levels LO HI of the ratio window")
@click.option(
    "--regime",
    type=click.Choice([r.value for r in Regime]),
    default=None,
    help="Tail regime of a BMAP queue",
)
def asymptote(regime, **params):
    """True against predicted tail over a window of levels."""
    sys.exit(_run("asymptote", params, lambda analyzer, model: analyzer.asymptote(model, regime)))


@main.command(cls=CommandWithConfigFile("config_file"))
@common_options
@simulation_options
def compare(**params):
    """Matrix-analytic, truncated and simulated distributions side by side."""
    sys.exit(_run("compare", params, lambda analyzer, model: analyzer.compare(model)))


@main.command(cls=CommandWithConfigFile("config_file"))
@common_options
@simulation_options
@click.option("--event_log", is_flag=True, help="Dumps every event to events-rep<r>.log")
def simulate(event_log, **params):
    """Histograms and standard errors from replicated simulation."""
    sys.exit(_run("simulate", params, lambda analyzer, model: analyzer.simulate(model, event_log)))


if __name__ == "__main__":
    sys.exit(main())  # pragma: no cover
