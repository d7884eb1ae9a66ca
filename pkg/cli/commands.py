import logging
from pathlib import Path

import click

from cli.config import load_config
from cli.runner import run
from cli.tasks import TASK_NAMES
from core.errors import ConfigError
from settings.settings import OUT_DIR, THREADS


@click.command(name='esoafl')
@click.option('--config', 'config_path', type=click.Path(exists=True, dir_okay=False),
              default=None, help='Experiment TOML file; defaults apply when omitted.')
@click.option('--seed', type=click.IntRange(min=0), default=None,
              help='Override experiment.seed.')
@click.option('--out', 'out_dir', type=click.Path(file_okay=False), default=None,
              help='Output directory.')
@click.option('--task', type=click.Choice(TASK_NAMES), default=None,
              help='Override experiment.task.')
@click.option('--threads', type=click.IntRange(min=1), default=None,
              help='Worker threads for clients and sweep cells.')
@click.option('--dump-constellation', is_flag=True, default=False,
              help='Write received symbols of a symbol-mode train run.')
@click.pass_context
def cli(ctx, config_path, seed, out_dir, task, threads, dump_constellation):
    """Simulate, fit and optimize energy-efficient over-the-air federated learning."""
    try:
        cfg = load_config(config_path)
    except ConfigError as exc:
        raise click.UsageError(f'Invalid configuration: {exc}') from None

    cfg = cfg.with_overrides(task=task, seed=seed, out=out_dir,
                             threads=threads or cfg.experiment.threads or THREADS)
    destination = Path(cfg.experiment.out or OUT_DIR)
    try:
        status = run(cfg, destination, dump_constellation)
    except ConfigError as exc:
        raise click.UsageError(f'Invalid configuration: {exc}') from None
    logging.info(f'Finished with exit status {status}')
    ctx.exit(status)
