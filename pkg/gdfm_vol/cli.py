#!/usr/bin/env python3
"""
gdfm-vol - command line interface
Fit the two-stage GDFM, emit one-step prediction intervals and VaR, backtest
coverage, compare against GARCH(1,1) and run the Monte Carlo study
"""

import contextlib
import sys
from pathlib import Path
from typing import Dict, Iterator, List, Optional, Tuple

import numpy as np
import pandas as pd
import typer
from rich import box
from rich.progress import BarColumn, MofNCompleteColumn, Progress, SpinnerColumn, TextColumn
from rich.table import Table

from .backtest import DEFAULT_DELTAS, backtest, mcnemar, report, sidak_threshold
from .config import ConfigManager
from .console import console, setup_logging
from .errors import ConfigError, GdfmError
from .forecast import (
    fit_pipeline,
    pipeline_from_dict,
    pipeline_to_dict,
    rolling_forecast,
    select_bandwidth,
    window_key,
)
from .garch import rolling_garch
from .gdfm import fit_stage
from .panel_io import OutputFormat, Panel, PipelineConfig, frame_to_text, load_panel, read_json, to_json_text, write_frame, write_json
from .simulate import run_mc
from .spectral import estimate_spectrum, sample_autocov, scree
from .volatility import DEFAULT_T_GRID, capping_diagnostic, kappa_grid_fractions

app = typer.Typer(
    rich_markup_mode="rich",
    help="Two-stage GDFM for levels and log-volatilities: prediction intervals, VaR and backtests",
    context_settings={"help_option_names": ["-h", "--help"]},
)

# ─────────────────────────────── Helper Functions ─────────────────────────── #


@contextlib.contextmanager
def fail_cleanly() -> Iterator[None]:
    """Turn library errors into a red message and exit code 1"""
    try:
        yield
    except GdfmError as e:
        console.print(f"[red]✖ {e}[/red]")
        raise typer.Exit(1) from None


def parse_window(text: str) -> Optional[int]:
    if text.strip().lower() == "all":
        return None
    try:
        value = int(text)
    except ValueError:
        raise ConfigError(f"Window must be a positive integer or 'all', got '{text}'") from None
    if value < 1:
        raise ConfigError(f"Window must be a positive integer or 'all', got '{text}'")
    return value


def parse_grid(text: str) -> List[int]:
    try:
        return [int(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise ConfigError(f"Grid must be comma-separated integers, got '{text}'") from None


def load_inputs(
    input_path: Path, config: Optional[str], overrides: Dict[str, object], config_dir: Path
) -> Tuple[Panel, PipelineConfig]:
    manager = ConfigManager(config_dir)
    cfg = manager.pipeline_config(manager.load(config), overrides)
    panel = load_panel(input_path)
    manager.validate_for_panel(cfg, panel)
    return panel, cfg


def emit_frame(frame: pd.DataFrame, output: Optional[Path], fmt: OutputFormat) -> None:
    """Write to `output` or print to stdout"""
    if output is None:
        sys.stdout.write(frame_to_text(frame, fmt))
        return
    write_frame(frame, output, fmt)
    console.print(f"[green]✓[/green] Wrote {len(frame)} rows to {output}")


def summary_table(title: str, rows: Dict[str, object]) -> Table:
    table = Table(title=title, box=box.ROUNDED)
    table.add_column("Metric", style="cyan")
    table.add_column("Value", style="green")
    for key, value in rows.items():
        table.add_row(key, f"{value:.4g}" if isinstance(value, float) else str(value))
    return table


def make_progress() -> Progress:
    return Progress(
        SpinnerColumn(),
        TextColumn("[progress.description]{task.description}"),
        BarColumn(),
        MofNCompleteColumn(),
        console=console,
        transient=True,
    )


# ─────────────────────────────── Shared Options ───────────────────────────── #

InputOption = typer.Option(..., "--input", "-i", help="Panel CSV (time down, series across)", rich_help_panel="Data")
ConfigOption = typer.Option(None, "--config", "-c", help="JSON config file or template name", rich_help_panel="Data")
ConfigDirOption = typer.Option(
    Path("configs"), "--config-dir", help="Directory of *_config.json templates", rich_help_panel="Data"
)
OutputOption = typer.Option(None, "--output", "-o", help="Output file (stdout if omitted)", rich_help_panel="Output")
FormatOption = typer.Option(OutputFormat.CSV, "--format", "-f", help="Table format", rich_help_panel="Output")
SeedOption = typer.Option(None, "--seed", help="Override the config seed", rich_help_panel="Model")


# ─────────────────────────────── CLI Entry Point ──────────────────────────── #


@app.callback()
def main(
    verbose: bool = typer.Option(False, "--verbose", "-v", help="Debug logging"),
) -> None:
    """
    gdfm-vol - conditional prediction intervals from a two-stage dynamic factor model

    Levels are decomposed into common and idiosyncratic parts; their
    innovations give a log-volatility proxy that is decomposed the same way.
    """
    setup_logging(verbose)


@app.command(name="fit")
def fit_command(
    input_path: Path = InputOption,
    config: Optional[str] = ConfigOption,
    config_dir: Path = ConfigDirOption,
    output: Optional[Path] = typer.Option(
        None, "--output", "-o", help="Fitted model JSON (stdout if omitted)", rich_help_panel="Output"
    ),
    seed: Optional[int] = SeedOption,
    q: Optional[int] = typer.Option(None, "--q", help="Level factors", rich_help_panel="Model"),
    Q: Optional[int] = typer.Option(None, "--Q", help="Volatility factors", rich_help_panel="Model"),
    kappa: Optional[float] = typer.Option(None, "--kappa", help="Capping constant κ_T", rich_help_panel="Model"),
) -> None:
    """Fit both stages on the full panel and save the fitted model"""
    with fail_cleanly():
        panel, cfg = load_inputs(input_path, config, {"seed": seed, "q": q, "Q": Q, "kappa_T": kappa}, config_dir)
        with make_progress() as progress:
            progress.add_task("Fitting levels and volatility stages...", total=None)
            fitted = fit_pipeline(panel, cfg)
        payload = {"config": cfg, "model": pipeline_to_dict(fitted)}
        if output is None:
            sys.stdout.write(to_json_text(payload))
        else:
            write_json(payload, output)
            console.print(f"[green]✓[/green] Model saved to {output}")
        console.print(
            summary_table(
                "Fit summary",
                {
                    "Series (n)": panel.n,
                    "Periods (T)": panel.T,
                    "q / Q": f"{cfg.q} / {cfg.Q}",
                    "Capped share of ŝ": fitted.proxy.capped_fraction,
                    "Shrunk VAR blocks": fitted.levels.diagnostics.get("shrunk_blocks", 0),
                    "Ridged VAR blocks": fitted.levels.diagnostics.get("ridged_blocks", 0),
                    "Mean AR order (levels)": float(np.mean(fitted.levels.diagnostics.get("ar_orders", [0]))),
                },
            )
        )


@app.command(name="forecast")
def forecast_command(
    input_path: Optional[Path] = typer.Option(
        None, "--input", "-i", help="Panel CSV to fit on (omit with --model)", rich_help_panel="Data"
    ),
    model: Optional[Path] = typer.Option(None, "--model", "-m", help="Fitted model JSON from `fit`", rich_help_panel="Data"),
    config: Optional[str] = ConfigOption,
    config_dir: Path = ConfigDirOption,
    alpha: Optional[List[float]] = typer.Option(None, "--alpha", "-a", help="Nominal level α, equal tails", rich_help_panel="Intervals"),
    window: Optional[List[str]] = typer.Option(None, "--window", "-w", help="Quantile window ℓ or 'all'", rich_help_panel="Intervals"),
    output: Optional[Path] = OutputOption,
    fmt: OutputFormat = FormatOption,
    seed: Optional[int] = SeedOption,
) -> None:
    """One-step-ahead prediction intervals and VaR for period T+1"""
    with fail_cleanly():
        if (input_path is None) == (model is None):
            raise ConfigError("Give exactly one of --input or --model")
        if model is not None:
            data = read_json(model)
            cfg = ConfigManager(config_dir).pipeline_config(data.get("config", {}), {"seed": seed})
            fitted = pipeline_from_dict(data.get("model", data))
        else:
            panel, cfg = load_inputs(input_path, config, {"seed": seed}, config_dir)
            fitted = fit_pipeline(panel, cfg)
        alphas = alpha or cfg.alphas
        windows = [parse_window(w) for w in window] if window else cfg.windows
        frames = []
        for w in windows:
            if w is not None and w > fitted.innovations.w.shape[1]:
                console.print(f"[yellow]⚠ Skipping window {w}: longer than the sample[/yellow]")
                continue
            for a in alphas:
                frame = fitted.interval(a / 2, a / 2, w).to_frame()
                frame.insert(1, "alpha", a)
                frames.append(frame)
        if not frames:
            raise ConfigError("No quantile window fits inside the sample")
        emit_frame(pd.concat(frames, ignore_index=True), output, fmt)


@app.command(name="backtest")
def backtest_command(
    input_path: Path = InputOption,
    config: Optional[str] = ConfigOption,
    config_dir: Path = ConfigDirOption,
    eval_start: int = typer.Option(..., "--eval-start", help="First evaluated period (0-based)", rich_help_panel="Evaluation"),
    alpha: Optional[List[float]] = typer.Option(None, "--alpha", "-a", help="Nominal level α", rich_help_panel="Evaluation"),
    window: Optional[List[str]] = typer.Option(None, "--window", "-w", help="Quantile window ℓ or 'all'", rich_help_panel="Evaluation"),
    refit_every: Optional[int] = typer.Option(None, "--refit-every", help="Re-estimate every k steps", rich_help_panel="Evaluation"),
    normal_approximation: bool = typer.Option(
        False, "--normal-approximation", help="Normal instead of exact binomial one-sided tests", rich_help_panel="Evaluation"
    ),
    records: Optional[Path] = typer.Option(None, "--records", help="Save per-period forecast records", rich_help_panel="Output"),
    output: Optional[Path] = OutputOption,
    fmt: OutputFormat = FormatOption,
    seed: Optional[int] = SeedOption,
) -> None:
    """Rolling one-step intervals with coverage, independence and combined LR tests"""
    with fail_cleanly():
        panel, cfg = load_inputs(input_path, config, {"seed": seed, "refit_every": refit_every}, config_dir)
        alphas = alpha or cfg.alphas
        windows = [parse_window(w) for w in window] if window else cfg.windows
        with make_progress() as progress:
            task = progress.add_task("Rolling forecasts", total=panel.T - eval_start)
            rolling = rolling_forecast(
                panel, cfg, eval_start, alphas=alphas, windows=windows, on_step=lambda: progress.advance(task)
            )
        if records is not None:
            write_frame(rolling.records, records, OutputFormat.CSV)
        results = {
            (label, a, window_key(w)): backtest(hits, DEFAULT_DELTAS, normal_approximation)
            for (label, a, w), hits in rolling.hits.items()
        }
        table = report(results)
        emit_frame(table, output, fmt)
        _print_backtest_means(table)


def _print_backtest_means(table: pd.DataFrame) -> None:
    columns = ("alpha", "window", "C", "V_plus", "V_minus", "L", "p_cc")
    summary = Table(title="Cross-sectional means", box=box.ROUNDED)
    for column in columns:
        summary.add_column(column, style="cyan" if column in ("alpha", "window") else "green")
    for _, row in table[table["series"] == "mean"].iterrows():
        summary.add_row(*[f"{row[c]:.4g}" if isinstance(row[c], float) else str(row[c]) for c in columns])
    console.print(summary)


@app.command(name="compare-garch")
def compare_garch_command(
    input_path: Path = InputOption,
    config: Optional[str] = ConfigOption,
    config_dir: Path = ConfigDirOption,
    eval_start: int = typer.Option(..., "--eval-start", help="First evaluated period (0-based)", rich_help_panel="Evaluation"),
    alpha: Optional[List[float]] = typer.Option(None, "--alpha", "-a", help="Nominal level α", rich_help_panel="Evaluation"),
    window: str = typer.Option("all", "--window", "-w", help="Quantile window ℓ or 'all'", rich_help_panel="Evaluation"),
    refit_every: Optional[int] = typer.Option(None, "--refit-every", help="Re-estimate every k steps", rich_help_panel="Evaluation"),
    delta: float = typer.Option(0.05, "--delta", help="McNemar test level δ", rich_help_panel="Evaluation"),
    output: Optional[Path] = OutputOption,
    fmt: OutputFormat = FormatOption,
    seed: Optional[int] = SeedOption,
) -> None:
    """McNemar comparison of GDFM and GARCH(1,1) interval coverage, per series"""
    with fail_cleanly():
        panel, cfg = load_inputs(input_path, config, {"seed": seed, "refit_every": refit_every}, config_dir)
        alphas = alpha or cfg.alphas
        w = parse_window(window)
        with make_progress() as progress:
            task = progress.add_task("GDFM rolling forecasts", total=panel.T - eval_start)
            gdfm = rolling_forecast(panel, cfg, eval_start, w, alphas, on_step=lambda: progress.advance(task))
            task = progress.add_task("GARCH(1,1) per series", total=panel.n)
            garch = rolling_garch(
                panel,
                eval_start,
                [w],
                alphas,
                cfg.refit_every,
                cfg.seed,
                cfg.n_jobs,
                on_series=lambda: progress.advance(task),
            )
        rows = []
        for (label, a, _), hits in gdfm.hits.items():
            result = mcnemar(hits, garch.hits[(label, a, w)], delta)
            rows.append(
                {
                    "series": label,
                    "alpha": a,
                    "window": window_key(w),
                    "n12": result.n12,
                    "n21": result.n21,
                    "p_gdfm_better": result.p_a_better,
                    "p_garch_better": result.p_b_better,
                    "winner": {"a": "gdfm", "b": "garch"}.get(result.winner, ""),
                }
            )
        frame = pd.DataFrame(rows)
        emit_frame(frame, output, fmt)
        per_test = sidak_threshold(delta, panel.n)
        console.print(
            summary_table(
                f"McNemar at δ={delta:g}",
                {
                    "GDFM better (share)": float((frame["winner"] == "gdfm").mean()),
                    "GARCH better (share)": float((frame["winner"] == "garch").mean()),
                    "Šidák per-test level": per_test,
                    "GDFM better after Šidák": int((frame["p_gdfm_better"] < per_test).sum()),
                },
            )
        )


@app.command(name="simulate")
def simulate_command(
    config: str = typer.Option("sim_q1Q1", "--config", "-c", help="Simulation config file or template name", rich_help_panel="Data"),
    config_dir: Path = ConfigDirOption,
    replications: Optional[int] = typer.Option(None, "--replications", "-M", help="Override replications", rich_help_panel="Design"),
    n: Optional[int] = typer.Option(None, "--n", help="Override cross-section size", rich_help_panel="Design"),
    T: Optional[int] = typer.Option(None, "--T", help="Override sample length", rich_help_panel="Design"),
    kappa: Optional[float] = typer.Option(None, "--kappa", help="Override κ_T", rich_help_panel="Design"),
    metric: Optional[List[str]] = typer.Option(None, "--metric", help="errors and/or coverage", rich_help_panel="Design"),
    n_jobs: Optional[int] = typer.Option(None, "--n-jobs", "-j", help="Parallel replications", rich_help_panel="Design"),
    seed: Optional[int] = typer.Option(None, "--seed", help="Master seed", rich_help_panel="Design"),
    output: Optional[Path] = typer.Option(None, "--output", "-o", help="McReport JSON (stdout if omitted)", rich_help_panel="Output"),
    records: Optional[Path] = typer.Option(None, "--records", help="Per-replication CSV", rich_help_panel="Output"),
) -> None:
    """Monte Carlo study on the simulated multiplicative factor design"""
    with fail_cleanly():
        manager = ConfigManager(config_dir)
        overrides = {"replications": replications, "n": n, "T": T, "seed": seed, "kappa_T": kappa}
        dgp, cfg, coverage, metrics = manager.simulation_config(manager.load(config), overrides)
        with make_progress() as progress:
            task = progress.add_task("Replications", total=dgp.replications)
            result = run_mc(
                dgp,
                cfg,
                metric or metrics,
                eval_points=int(coverage["eval_points"]),
                window=coverage.get("window"),
                n_jobs=n_jobs,
                on_replication=lambda _: progress.advance(task),
            )
        text = to_json_text(result.model_dump(mode="json", exclude={"replications"}))
        if output is None:
            sys.stdout.write(text)
        else:
            write_json(result.model_dump(mode="json", exclude={"replications"}), output)
            console.print(f"[green]✓[/green] Report saved to {output}")
        if records is not None:
            write_frame(result.to_frame(), records, OutputFormat.CSV)
        rows: Dict[str, object] = {"Completed": result.completed, "Failed": result.failed}
        for name in ("MSE_X", "MSE_chi", "MAD_X", "MAD_chi", "MAX_X", "MAX_chi"):
            value = getattr(result, name)
            if value is not None:
                rows[name] = value
        for item in result.coverage:
            rows[f"C(α={item.alpha:g})"] = item.C
            rows[f"V+ / V− (α={item.alpha:g})"] = f"{item.V_plus:.4f} / {item.V_minus:.4f}"
        console.print(summary_table("Monte Carlo", rows))
        if result.completed == 0:
            console.print("[red]✖ Every replication failed[/red]")
            raise typer.Exit(1)


@app.command(name="scree")
def scree_command(
    input_path: Path = InputOption,
    bandwidth: int = typer.Option(2, "--bandwidth", "-b", help="Lag-window bandwidth", rich_help_panel="Model"),
    top: int = typer.Option(10, "--top", help="Eigenvalues per frequency", rich_help_panel="Model"),
    output: Optional[Path] = OutputOption,
    fmt: OutputFormat = FormatOption,
) -> None:
    """Normalized dynamic eigenvalues per frequency, for choosing q"""
    with fail_cleanly():
        panel = load_panel(input_path)
        centered = panel.values - panel.values.mean(axis=1, keepdims=True)
        spectrum = estimate_spectrum(sample_autocov(centered, min(bandwidth, panel.T - 1)), bandwidth)
        emit_frame(scree(spectrum, top), output, fmt)


@app.command(name="capping")
def capping_command(
    input_path: Path = InputOption,
    config: Optional[str] = ConfigOption,
    config_dir: Path = ConfigDirOption,
    phi: float = typer.Option(2.0, "--phi", help="Exponent φ in κ = K/log^φ T", rich_help_panel="Diagnostic"),
    K: float = typer.Option(0.5, "--K", help="Scale K", rich_help_panel="Diagnostic"),
    eps: float = typer.Option(0.01, "--eps", help="Exponent ε", rich_help_panel="Diagnostic"),
    t_max: int = typer.Option(2000, "--t-max", help="Largest resampled length", rich_help_panel="Diagnostic"),
    output: Optional[Path] = OutputOption,
    fmt: OutputFormat = FormatOption,
    seed: Optional[int] = SeedOption,
) -> None:
    """Capped shares of |ŝ| for a κ grid and the resampled boundedness diagnostic"""
    with fail_cleanly():
        panel, cfg = load_inputs(input_path, config, {"seed": seed}, config_dir)
        rng = np.random.default_rng(cfg.seed)
        levels = fit_stage(
            panel,
            n_perm=cfg.n_perm,
            max_var_order=cfg.max_var_order,
            max_ar_order=cfg.max_ar_order,
            rng=rng,
            **cfg.stage_arguments("levels"),
        )
        s_hat = levels.common_innovations + levels.idio_residuals
        kappas = (0.0, 0.1, 0.25, 0.5)
        console.print(
            summary_table(
                "Capped share of ŝ", {f"κ={k:g}": f for k, f in zip(kappas, kappa_grid_fractions(s_hat, kappas), strict=True)}
            )
        )
        grid = [t for t in DEFAULT_T_GRID if t <= t_max]
        emit_frame(capping_diagnostic(s_hat, grid, phi=phi, K=K, eps=eps, rng=rng), output, fmt)


@app.command(name="select-bandwidth")
def select_bandwidth_command(
    input_path: Path = InputOption,
    config: Optional[str] = ConfigOption,
    config_dir: Path = ConfigDirOption,
    stage: str = typer.Option("levels", "--stage", help="levels (B_T) or volatility (M_T)", rich_help_panel="Model"),
    grid: str = typer.Option("1,2,3,4", "--grid", help="Comma-separated candidate bandwidths", rich_help_panel="Model"),
    output: Optional[Path] = OutputOption,
    fmt: OutputFormat = FormatOption,
    seed: Optional[int] = SeedOption,
) -> None:
    """In-sample one-step MSE over a bandwidth grid"""
    with fail_cleanly():
        panel, cfg = load_inputs(input_path, config, {"seed": seed}, config_dir)
        candidates = parse_grid(grid)
        too_wide = [b for b in candidates if b >= panel.T]
        if too_wide:
            raise ConfigError(f"Bandwidths {too_wide} are not smaller than T={panel.T}")
        frame = select_bandwidth(panel, candidates, cfg, stage)
        emit_frame(frame, output, fmt)
        best = frame.loc[frame["selected"], "bandwidth"].iloc[0]
        console.print(f"[green]✓[/green] Selected bandwidth for {stage}: {best}")


@app.command(name="list-configs")
def list_configs_command(config_dir: Path = ConfigDirOption) -> None:
    """Show the configuration templates in the config directory"""
    manager = ConfigManager(config_dir)
    rows = manager.describe_templates()
    if not rows:
        console.print(f"[yellow]No *_config.json templates in {config_dir}[/yellow]")
        return
    table = Table(title=f"Templates in {config_dir}", box=box.ROUNDED)
    for column in rows[0]:
        table.add_column(column, style="cyan" if column == "name" else None)
    for row in rows:
        table.add_row(*[str(v) for v in row.values()])
    console.print(table)
    sys.stdout.write("\n".join(manager.get_available_templates()) + "\n")


if __name__ == "__main__":
    app()
