import logging
import math
import sys

import click
from rich.console import Console
from rich.logging import RichHandler
from rich.panel import Panel
from rich.progress import BarColumn, Progress, SpinnerColumn, TextColumn, TimeElapsedColumn
from rich.table import Table

from tvclt import __version__
from tvclt.errors import TvcltError
from tvclt.harness import core, report as report_io

# Initialize Rich Console
console = Console()

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_ERROR = 2

config_argument = click.argument(
    'config_path', required=False, type=click.Path(dir_okay=False), default=None)


def setup_logging(verbose):
    logger = logging.getLogger("tvclt")
    logger.handlers.clear()
    handler = RichHandler(console=console, show_path=False, rich_tracebacks=True)
    handler.setFormatter(logging.Formatter("%(message)s"))
    logger.addHandler(handler)
    logger.setLevel(logging.DEBUG if verbose else logging.WARNING)
    logger.propagate = False


def load(config_path, **overrides):
    path = config_path or core.DEFAULT_SUITE
    config = core.load_config(path)
    return config.with_overrides(**overrides)


def fmt(value, digits=4):
    if value is None:
        return "-"
    if isinstance(value, float):
        if math.isnan(value):
            return "nan"
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        return f"{value:.{digits}g}"
    return str(value)


def case_table(cases, title="Bounds"):
    table = Table(title=title)
    table.add_column("Sequence", style="cyan")
    table.add_column("n", justify="right")
    table.add_column("J max", justify="right")
    table.add_column("Feller", justify="right")
    table.add_column("M_n", justify="right")
    table.add_column("Bound", justify="right", style="magenta")
    table.add_column("d_TV", justify="right", style="green")
    table.add_column("d_K", justify="right")
    table.add_column("Ratio", justify="right")
    table.add_column("", justify="center")
    for c in cases:
        mark = "[green]ok[/green]" if c.bound_holds and c.intermediate_holds else "[bold red]FAIL[/bold red]"
        table.add_row(c.sequence, str(c.n), fmt(c.j_max), fmt(c.feller), fmt(c.m_n),
                      fmt(c.tv_bound), fmt(c.tv_actual), fmt(c.k_actual), fmt(c.slack_ratio), mark)
    return table


def identity_table(rows):
    table = Table(title="Identity checks")
    table.add_column("Check", style="cyan")
    table.add_column("Subject")
    table.add_column("Rows", justify="right")
    table.add_column("Worst gap", justify="right")
    table.add_column("", justify="center")
    grouped = {}
    for row in rows:
        grouped.setdefault((row['check'], row['subject']), []).append(row)
    for (check, subject), items in grouped.items():
        worst = max(abs(r['lhs'] - r['rhs']) for r in items)
        ok = all(r['holds'] for r in items)
        mark = "[green]ok[/green]" if ok else "[bold red]FAIL[/bold red]"
        table.add_row(check, subject, str(len(items)), fmt(worst, 3), mark)
    return table


def show_summary(run_report):
    if run_report.failures:
        for failure in run_report.failures:
            where = f"n={failure.n}" if failure.n is not None else failure.check
            console.print(f"[bold red]Case failed:[/bold red] {failure.sequence} {where}: "
                          f"{failure.error}: {failure.message}")
    for name, rates in run_report.rates.items():
        console.print(f"[dim]{name}: log-log slope d_TV {fmt(rates['tv_actual_slope'], 3)}, "
                      f"bound {fmt(rates['tv_bound_slope'], 3)}[/dim]")
    pc = run_report.perturbation
    if pc is not None:
        console.print(f"[dim]matching-normal smoothing of {pc['base']}: J = {fmt(pc['j'], 6)}, "
                      f"d_TV decay ratio {fmt(pc['decay_ratio'], 3)} "
                      f"(needs {fmt(pc['decay_floor'], 3)})[/dim]")
    if run_report.ok:
        console.print(Panel(f"[bold green]All bounds and checks hold.[/bold green]\n"
                            f"Elapsed: {run_report.elapsed:.1f}s",
                            title="Run Summary", border_style="green"))
    else:
        failed = len(run_report.failed_cases) + len(run_report.failed_checks) + len(run_report.failures)
        console.print(Panel(f"[bold red]{failed} failing case(s) or check(s).[/bold red]\n"
                            f"Elapsed: {run_report.elapsed:.1f}s",
                            title="Run Summary", border_style="red"))


@click.group(invoke_without_command=True, epilog="See docs/user-manual.md for the config format.")
@click.option('--verbose/--no-verbose', '-v', default=False, help="Enable verbose output for debugging.")
@click.pass_context
def cli(ctx, verbose):
    """
    Total-variation CLT certification (tvclt)

    Evaluates the explicit total-variation bound for normalized sums of
    independent summands, computes the true distances on grids, and checks
    the identities the bound rests on.
    """
    setup_logging(verbose)
    if ctx.invoked_subcommand is None:
        click.echo(ctx.get_help())


@cli.command()
@config_argument
@click.option('--out-dir', envvar='TVCLT_OUT_DIR', type=click.Path(file_okay=False),
              help="Directory for report files (env TVCLT_OUT_DIR).")
@click.option('--format', 'formats', multiple=True, type=click.Choice(['csv', 'json', 'svg']),
              help="Report format; repeat for several.")
@click.option('--threads', envvar='TVCLT_THREADS', type=int,
              help="Worker threads (env TVCLT_THREADS).")
@click.option('--seed', type=int, help="Seed for the randomized test functions.")
def run(config_path, out_dir, formats, threads, seed):
    """
    Run every case of a suite and write the reports.

    Without CONFIG_PATH the shipped default suite is used.
    """
    try:
        config = load(config_path, out_dir=out_dir, formats=formats, threads=threads, seed=seed)
        total = len(config.sequences) * len(config.n_values)
        with Progress(
            SpinnerColumn("dots", style="green"),
            TextColumn("[progress.description]{task.description}"),
            BarColumn(complete_style="green"),
            TextColumn("{task.completed}/{task.total}"),
            TimeElapsedColumn(),
            console=console,
            transient=True
        ) as progress:
            task_id = progress.add_task(f"[cyan]{config.name:<24}", total=total)

            def advance(name, n):
                progress.update(task_id, advance=1, description=f"[cyan]{name:<16} n={n:<5}")

            run_report = core.run(config, on_case=advance)
        written = report_io.emit(run_report, config.formats, config.out_dir, config.name)
    except TvcltError as e:
        console.print(f"[bold red]Error:[/bold red] {e}")
        sys.exit(EXIT_ERROR)

    console.print(case_table(run_report.cases))
    if run_report.identities:
        console.print(identity_table(run_report.identities))
    show_summary(run_report)
    for path in written:
        console.print(f"[dim]wrote {path}[/dim]")
    sys.exit(EXIT_OK if run_report.ok else EXIT_FAILED)


@cli.command('check-identities')
@config_argument
@click.option('--seed', type=int, help="Seed for the randomized test functions.")
def check_identities(config_path, seed):
    """Check the score, kernel, Stein and entropy identities for the suite's laws."""
    try:
        config = load(config_path, seed=seed)
        with console.status("[bold blue]Checking identities...[/bold blue]"):
            rows = core.check_identities(config)
    except TvcltError as e:
        console.print(f"[bold red]Error:[/bold red] {e}")
        sys.exit(EXIT_ERROR)
    console.print(identity_table(rows))
    failed = [r for r in rows if not r['holds']]
    for row in failed:
        console.print(f"[bold red]FAIL[/bold red] {row['check']} {row['subject']} {row['detail']}: "
                      f"{fmt(row['lhs'], 8)} vs {fmt(row['rhs'], 8)}")
    sys.exit(EXIT_FAILED if failed else EXIT_OK)


@cli.command()
@config_argument
@click.option('--n', 'n', type=click.IntRange(min=1), required=True, help="Number of summands.")
def bound(config_path, n):
    """Evaluate the bound and the actual distances at a single n."""
    try:
        config = load(config_path)
        with console.status(f"[bold blue]Evaluating n={n}...[/bold blue]"):
            rows = core.bound_table(config, n)
    except TvcltError as e:
        console.print(f"[bold red]Error:[/bold red] {e}")
        sys.exit(EXIT_ERROR)
    reports = [r for r, _ in rows]
    console.print(case_table(reports, title=f"Bounds at n={n}"))
    for r, (k_truncated, k_third) in rows:
        if not r.bound_finite:
            console.print(f"[yellow]{r.sequence}: bound is infinite ({r.reason.value})[/yellow]")
        console.print(f"[dim]{r.sequence}: shape-only Kolmogorov bounds c*M_n = {fmt(k_truncated)}, "
                      f"c*sum E|X|^3/b_n^3 = {fmt(k_third)}[/dim]")
    ok = all(r.bound_holds and r.intermediate_holds for r in reports)
    sys.exit(EXIT_OK if ok else EXIT_FAILED)


@cli.command()
def version():
    """Show the tvclt version."""
    console.print(f"tvclt {__version__}")


if __name__ == "__main__":
    try:
        cli()
    except KeyboardInterrupt:
        console.print("\n[bold red]Aborted.[/bold red]")
        sys.exit(130)
