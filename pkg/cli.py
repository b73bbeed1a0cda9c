"""Command-line interface for the RTE gradient experiments."""

import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, List, Optional

import typer
from loguru import logger
from rich.box import ROUNDED
from rich.console import Console
from rich.panel import Panel
from rich.progress import BarColumn, Progress, SpinnerColumn, TextColumn
from rich.table import Table

from rtegrad import __version__
from rtegrad.core.errors import ConfigurationError, RteGradError
from rtegrad.core.objectives import Objective
from rtegrad.core.settings import settings
from rtegrad.models.schemas import ExperimentConfig, load_config
from rtegrad.utils.experiment_utils import (
    build_problem,
    convergence_study,
    gd_demo,
    run_forward,
    run_gradient,
    synthetic_measurement,
)
from rtegrad.utils.io_utils import (
    ResultTable,
    density_table,
    emit_plotdata,
    file_sha256,
    read_csv,
    write_csv,
    write_manifest,
)

# Initialize Rich console for pretty output
console = Console()

# Create CLI app
app = typer.Typer(help="Monte Carlo and finite-volume gradients for the RTE")


@dataclass
class RunOptions:
    """Global options shared by every subcommand."""

    config: Optional[Path] = None
    profile: Optional[str] = None
    seed: Optional[int] = None
    seeds: Optional[List[int]] = None
    threads: int = field(default_factory=lambda: settings.threads)
    out: Optional[Path] = None
    full: bool = False


options = RunOptions()


def _parse_seeds(text: Optional[str]) -> Optional[List[int]]:
    if not text:
        return None
    try:
        return [int(part) for part in text.replace(" ", "").split(",") if part]
    except ValueError as e:
        raise ConfigurationError(f"cannot parse seed list {text!r}", key="seeds") from e


def _configure_logging(level: str, out: Optional[Path]) -> None:
    logger.remove()
    logger.add(sys.stderr, level=level)
    if out is not None:
        log_dir = out / "logs"
        log_dir.mkdir(parents=True, exist_ok=True)
        logger.add(log_dir / "run_{time}.log", rotation="10 MB", level="DEBUG")


def _fail(error: RteGradError) -> None:
    console.print(
        Panel(
            f"[bold red]Error:[/] {error}",
            title=type(error).__name__,
            border_style="red",
        )
    )
    raise typer.Exit(code=error.exit_code)


def _guarded(action: Callable[[], None]) -> None:
    try:
        action()
    except RteGradError as e:
        logger.error(str(e))
        _fail(e)


def _load() -> ExperimentConfig:
    overrides = {}
    seeds = [options.seed] if options.seed is not None else options.seeds
    if seeds:
        overrides["seeds"] = seeds
    return load_config(options.config, options.profile, overrides or None)


def _out_dir(config: ExperimentConfig) -> Path:
    return Path(options.out or settings.out_dir or config.output.dir or "results")


def _seeds_for(config: ExperimentConfig) -> List[int]:
    if options.full and options.seed is None and options.seeds is None:
        count = config.full_seed_count()
        if count:
            return list(range(1, count + 1))
    return list(config.seeds)


def _write_outputs(
    out: Path,
    stem: str,
    table: ResultTable,
    config: ExperimentConfig,
    seeds: List[int],
    **extra,
) -> List[Path]:
    """Write ``<stem>.csv`` and its manifest ``<stem>.manifest.json``."""
    return [
        write_csv(table, out / f"{stem}.csv"),
        write_manifest(out, config, seeds, extra, f"{stem}.manifest.json"),
    ]


def _summary(title: str, rows: List[tuple]) -> None:
    table = Table(
        title=title,
        box=ROUNDED,
        show_header=True,
        header_style="bold magenta",
        border_style="blue",
    )
    table.add_column("Quantity", style="cyan")
    table.add_column("Value", style="green")
    for name, value in rows:
        table.add_row(name, str(value))
    console.print(table)


def _saved(paths: List[Path]) -> None:
    console.print(
        Panel(
            "\n".join(f"[bold cyan]{p}[/]" for p in paths),
            title="Outputs written",
            border_style="green",
            expand=False,
        )
    )


@app.callback()
def main(
    config: Optional[Path] = typer.Option(None, "--config", help="TOML config file"),
    profile: Optional[str] = typer.Option(
        None, "--profile", help="Preset: inverse-1d, inverse-2d, control-1d, control-2d"
    ),
    seed: Optional[int] = typer.Option(None, "--seed", help="Single master seed"),
    seeds: Optional[str] = typer.Option(None, "--seeds", help="Comma-separated seeds"),
    threads: Optional[int] = typer.Option(None, "--threads", min=1, help="Workers"),
    out: Optional[Path] = typer.Option(None, "--out", help="Output directory"),
    log_level: Optional[str] = typer.Option(None, "--log-level", help="Log level"),
    full: bool = typer.Option(False, "--full", help="Long seed-averaged runs"),
):
    """Global options; pick a config or a profile, then a subcommand."""
    options.config = config
    options.profile = profile
    options.seed = seed
    options.threads = threads or settings.threads
    options.out = out
    options.full = full
    _configure_logging((log_level or settings.log_level).upper(), out)
    _guarded(lambda: setattr(options, "seeds", _parse_seeds(seeds)))


@app.command()
def forward():
    """Run the particle simulation and write the final density histogram."""

    def action():
        config = _load()
        problem = build_problem(config)
        seed = config.seeds[0]
        with Progress(
            SpinnerColumn(),
            TextColumn("[bold green]Simulating particles..."),
            console=console,
            transient=True,
        ) as progress:
            progress.add_task("forward", total=None)
            final, density = run_forward(problem, seed, threads=options.threads)
        out = _out_dir(config)
        table = density_table(density, config.name, final.N, seed)
        paths = _write_outputs(out, "forward", table, config, [seed], command="forward")
        mass = float(density.values.sum() * density.grid.cell_volume)
        _summary(
            f"Forward run [bold]{config.name}[/]",
            [("N", final.N), ("M", problem.M), ("seed", seed), ("mass", mass)],
        )
        _saved(paths)

    _guarded(action)


def _gradient_command(method: str) -> None:
    def action():
        config = _load()
        problem = build_problem(config)
        seeds = _seeds_for(config)
        with Progress(
            SpinnerColumn(),
            TextColumn(f"[bold green]Computing {method} gradient..."),
            BarColumn(),
            console=console,
            transient=True,
        ) as progress:
            task = progress.add_task(method, total=len(seeds) if method != "fvm" else 1)
            run = run_gradient(
                problem,
                method,
                seeds,
                threads=options.threads,
                progress=lambda _: progress.advance(task),
            )
        out = _out_dir(config)
        used = [] if method == "fvm" else seeds
        paths = _write_outputs(
            out, f"gradient_{method}", run.table, config, used, command=f"grad-{method}"
        )
        rows = [
            ("method", method),
            ("cells", problem.gradient_grid.n_cells),
            ("seeds", len(used)),
            ("max |gradient|", float(abs(run.gradient.values).max())),
        ]
        if run.objective_value is not None:
            rows.append(("J", run.objective_value))
        _summary(f"Gradient [bold]{config.name}[/]", rows)
        _saved(paths)

    _guarded(action)


@app.command("grad-otd")
def grad_otd():
    """Correlated-adjoint particle gradient."""
    _gradient_command("otd")


@app.command("grad-dto")
def grad_dto():
    """Score-function particle gradient (J2 only)."""
    _gradient_command("dto")


@app.command("grad-fvm")
def grad_fvm():
    """Finite-volume reference gradient."""
    _gradient_command("fvm")


@app.command()
def converge(
    method: Optional[str] = typer.Option(None, help="otd, dto or fvm"),
    n_values: Optional[str] = typer.Option(
        None, "--n-values", help="Comma-separated particle counts"
    ),
    scaled: bool = typer.Option(False, "--scaled", help="Scale the norm by sqrt|Q|"),
):
    """Error against the FVM gradient as a function of N, with a log-log fit."""

    def action():
        config = _load()
        problem = build_problem(config)
        explicit = options.full or options.seed is not None or options.seeds
        if explicit or not config.convergence.seeds:
            seeds = _seeds_for(config)
        else:
            seeds = list(config.convergence.seeds)
        ns = _parse_seeds(n_values)
        result = convergence_study(
            problem,
            ns,
            seeds,
            method,
            threads=options.threads,
            scaled_norm=scaled or None,
        )
        out = _out_dir(config)
        paths = _write_outputs(
            out,
            "convergence",
            result.table,
            config,
            seeds,
            command="converge",
            slope=result.slope,
            intercept=result.intercept,
            exact_match=result.exact_match,
        )
        if result.exact_match:
            rows = [("fit", "exact match (zero error at every N)")]
        else:
            rows = [("slope", result.slope), ("intercept", result.intercept)]
        _summary(f"Convergence [bold]{config.name}[/]", rows)
        _saved(paths)

    _guarded(action)


@app.command()
def optimize(
    method: Optional[str] = typer.Option(None, help="otd, dto or fvm"),
    step: Optional[float] = typer.Option(None, help="Descent step size"),
    iterations: Optional[int] = typer.Option(None, min=0, help="Iterations"),
):
    """Projected gradient descent on sigma, monitored by the FVM objective."""

    def action():
        config = _load()
        problem = build_problem(config)
        if config.optimize.sigma_true is not None:
            measurement = synthetic_measurement(problem, config.optimize.sigma_true)
            problem = problem.with_objective(Objective("J1", measurement=measurement))
        history = gd_demo(problem, step, iterations, method, threads=options.threads)
        columns = ["iteration", "objective", "sigma_min", "sigma_mean", "sigma_max"]
        rows = [
            {
                "iteration": k,
                "objective": value,
                "sigma_min": float(sigma.min()),
                "sigma_mean": float(sigma.mean()),
                "sigma_max": float(sigma.max()),
            }
            for k, (sigma, value) in enumerate(
                zip(history.sigmas, history.objective_values)
            )
        ]
        out = _out_dir(config)
        table = ResultTable(kind="optimization", columns=columns, rows=rows)
        paths = _write_outputs(
            out, "optimize", table, config, config.seeds[:1], command="optimize"
        )
        _summary(
            f"Descent [bold]{config.name}[/]",
            [
                ("iterations", len(history.sigmas) - 1),
                ("J start", history.objective_values[0]),
                ("J end", history.objective_values[-1]),
            ],
        )
        _saved(paths)

    _guarded(action)


@app.command("emit-plot")
def emit_plot(
    table_path: Path = typer.Argument(..., help="Result CSV to convert"),
    stem: Optional[str] = typer.Option(
        None, help="Output file stem (default: <table stem>_plot)"
    ),
):
    """Turn a result CSV into whitespace-separated plot data."""

    def action():
        table = read_csv(table_path)
        out = Path(options.out or table_path.parent)
        name = stem or f"{table_path.stem}_plot"
        target = (out / f"{name}.manifest.json").resolve()
        if target == table_path.with_suffix(".manifest.json").resolve():
            raise ConfigurationError(
                "plot manifest would replace the run manifest", key="stem"
            )
        paths = emit_plotdata(table, out, name)
        source = {
            "command": "emit-plot",
            "source": str(table_path),
            "source_sha256": file_sha256(table_path),
            "table_kind": table.kind,
            "files": [p.name for p in paths],
        }
        manifest = write_manifest(out, None, [], source, f"{name}.manifest.json")
        _saved(paths + [manifest])

    _guarded(action)


@app.command()
def version():
    """Show the package version."""
    console.print(f"rtegrad [bold cyan]{__version__}[/]")


if __name__ == "__main__":
    app()
