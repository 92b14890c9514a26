"""Command line front end.

Exit codes: 0 on success, 2 for configuration or usage problems, 3 when a
run aborts because training diverged everywhere it looked.
"""

from __future__ import annotations

import sys
from pathlib import Path

import click

from .config import load_config
from .data import dump_dataset, gen_synthetic
from .evolve import ConfigError
from .models import DivergenceError
from . import harness


def _fail(code: int, message: str):
    click.echo(message, err=True)
    sys.exit(code)


def _guarded(fn):
    try:
        return fn()
    except ConfigError as exc:
        _fail(2, f"config error: {exc}")
    except DivergenceError as exc:
        _fail(3, f"aborted: {exc}")


def _progress(label: str, every: int, quiet: bool):
    if quiet:
        return None

    def report(done: int, total: int):
        if done == total or done % every == 0:
            click.echo(f"{label}: {done}/{total}", err=True)

    return report


@click.group()
@click.version_option(package_name="trrank")
def main():
    """Tensor-ring rank search: enumerate, search, analyze, compare."""


@main.command("synthetic-data")
@click.option("--seed", type=int, default=233, show_default=True)
@click.option("--true-rank", type=int, default=4, show_default=True)
@click.option("--x-variance", type=float, default=0.05, show_default=True)
@click.option("--noise-variance", type=float, default=0.05, show_default=True)
@click.option("--out", "out_path", type=click.Path(dir_okay=False), required=True)
def synthetic_data(seed, true_rank, x_variance, noise_variance, out_path):
    """Generate the 144->144 low-rank regression dataset and save it."""

    def body():
        try:
            data = gen_synthetic(seed, true_rank, x_variance, noise_variance)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        Path(out_path).parent.mkdir(parents=True, exist_ok=True)
        dump_dataset(data, out_path)
        click.echo(
            f"wrote {out_path}: train {data.train_x.shape[0]}, "
            f"test {data.test_x.shape[0]}, true rank {true_rank}, seed {seed}"
        )

    _guarded(body)


@main.command("enumerate")
@click.option("--config", "config_path", type=click.Path(dir_okay=False), required=True)
@click.option("--out", "out_dir", type=click.Path(file_okay=False), required=True)
@click.option("--figures/--no-figures", default=True, show_default=True)
@click.option("--quiet", is_flag=True, help="Suppress progress lines.")
def enumerate_cmd(config_path, out_dir, figures, quiet):
    """Train every rank combination in the configured box."""

    def body():
        cfg = load_config(config_path)
        records = harness.cmd_enumerate(
            cfg, out_dir, figures=figures,
            progress=_progress("enumerate", 50, quiet),
        )
        ranking = harness.ranking_rows(records)
        best = ranking[0]
        click.echo(
            f"enumerated {len(records)} combinations -> {out_dir}; "
            f"best genome {tuple(best['genome'])} loss {best['loss']:.6g}"
        )

    _guarded(body)


@main.command()
@click.option("--config", "config_path", type=click.Path(dir_okay=False), required=True)
@click.option("--out", "out_dir", type=click.Path(file_okay=False), required=True)
@click.option(
    "--checkpoints", type=click.Path(file_okay=False), default=None,
    help="Checkpoint directory; turns on warm-up and weight inheritance.",
)
@click.option("--figures/--no-figures", default=True, show_default=True)
@click.option("--quiet", is_flag=True, help="Suppress progress lines.")
def search(config_path, out_dir, checkpoints, figures, quiet):
    """Run the progressive evolutionary rank search."""

    def body():
        cfg = load_config(config_path)
        result = harness.cmd_search(
            cfg, out_dir, checkpoints=checkpoints, figures=figures,
            progress=_progress("search", 20, quiet),
        )
        click.echo(
            f"search done ({len(result.records)} evaluations) -> {out_dir}; "
            f"best genome {tuple(result.best_genome)} "
            f"loss {result.best_loss:.6g} params {result.best_params}"
        )

    _guarded(body)


@main.command()
@click.option("--results", "results_path", type=click.Path(dir_okay=False), required=True)
@click.option("--top", type=int, default=100, show_default=True)
@click.option("--out", "out_dir", type=click.Path(file_okay=False), default=None,
              help="Report directory; defaults to the results file's directory.")
@click.option("--bounds", type=(int, int), default=None,
              help="Rank bounds R_MIN R_MAX; defaults to the adjacent manifest, then the observed range.")
@click.option("--figures/--no-figures", default=True, show_default=True)
def analyze(results_path, top, out_dir, bounds, figures):
    """Interest-region statistics over the best records of a run."""

    def body():
        report = harness.cmd_analyze(
            results_path, top, out_dir=out_dir, bounds=bounds, figures=figures
        )
        for el in report["per_element"]:
            flag = " (sensitive)" if el["sensitive"] else ""
            click.echo(
                f"element {el['element']}: mean {el['mean']:.3f} "
                f"delta {el['delta']:.3f} region "
                f"[{el['region'][0]:.3f}, {el['region'][1]:.3f}]{flag}"
            )
        pooled = report["pooled"]
        click.echo(
            f"pooled: mean {pooled['mean']:.3f} delta {pooled['delta']:.3f} "
            f"(uniform delta {report['uniform_delta']:.3f})"
        )

    _guarded(body)


@main.command()
@click.option("--config", "config_path", type=click.Path(dir_okay=False), required=True)
@click.option("--enum", "enum_dir", type=click.Path(file_okay=False), required=True,
              help="Directory written by a previous enumerate run.")
@click.option("--out", "out_dir", type=click.Path(file_okay=False), required=True)
@click.option("--figures/--no-figures", default=True, show_default=True)
@click.option("--quiet", is_flag=True, help="Suppress progress lines.")
def ablation(config_path, enum_dir, out_dir, figures, quiet):
    """Progressive search vs the plain GA at the same evaluation budget."""

    def body():
        cfg = load_config(config_path)
        report = harness.cmd_ablation(
            cfg, enum_dir, out_dir, figures=figures,
            progress=_progress("ablation", 20, quiet),
        )
        for row in report["checkpoints"]:
            click.echo(
                f"{row['method']:>12} gen {row['checkpoint']:>3}: "
                f"rank {row['rank']} (genome {tuple(row['genome'])})"
            )

    _guarded(body)


if __name__ == "__main__":
    main()
