"""Command-line interface for the Petri-net reasoning runtime."""

import asyncio
import json
from pathlib import Path
from typing import Any, Dict, List, Optional

import typer
from pydantic import ValidationError
from rich.console import Console
from rich.table import Table

from .attention import (
    build_mask,
    build_positions,
    export_binary,
    export_json,
    layout_from_trace,
    verify_no_leakage,
)
from .chains import ChainFormatError, curate
from .config import DEFAULT_CONFIG_FILE, RuntimeSettings, load_settings
from .engine import (
    EngineError,
    InfeasibleOrderError,
    InvalidTraceError,
    PlanParseError,
    ReasoningEngine,
    run_many,
    summarize_runs,
)
from .export import render_dag_dot, render_petri_dot
from .graph import GraphError, dag_to_petri, topological_depth
from .models import MaskMode, PlanDocument, RunMetrics, ValidationReport
from .plan_format import (
    PlanFormatError,
    parse_plan,
    parse_trace,
    plan_to_dag,
    serialize_plan,
    verify_trace_text,
)
from .producers import ProducerError, SyntheticProducer, create_producer
from .scheduler import ProducerFailureError
from .utils.logging import configure_logging
from .utils.validation import aggregate_reports, report_from_error, validate_settings

app = typer.Typer(help="Petri-net reasoning runtime: compile, validate, run and export DAG-structured traces")
console = Console(stderr=True)

EXIT_INVALID = 1
EXIT_PLAN_PARSE = 2
EXIT_PRODUCER = 3

TRACE_SUFFIXES = (".txt", ".trace")


@app.callback()
def main(
    verbose: bool = typer.Option(False, "--verbose", "-v", help="Enable debug logging on stderr"),
):
    configure_logging(verbose)


@app.command("compile")
def compile_chains(
    chains: Path = typer.Argument(..., help="Chain file with lines 'N: A->B->C'"),
    out: Optional[Path] = typer.Option(None, "--out", help="Write the plan text here"),
    dot: Optional[Path] = typer.Option(None, "--dot", help="Write the merged DAG as DOT"),
    goal: str = typer.Option("", help="Goal line for the compiled plan"),
    config: Optional[Path] = typer.Option(None, "--config", help="Runtime settings YAML"),
):
    """Compile linear reasoning chains into a plan."""
    settings = _load(config)
    text = _read(chains)

    try:
        result = curate(text, cap=settings.chain_cap, strict=settings.strict_dedup, goal=goal)
    except (ChainFormatError, GraphError) as e:
        console.print(f"❌ {getattr(e, 'code', 'Error')}: {e}", style="red")
        _emit({"ok": False, "error": report_from_error(e).to_dict()}, None)
        raise typer.Exit(EXIT_INVALID)

    plan_text = serialize_plan(result.plan) + "\n"
    if out:
        _write(out, plan_text)
        console.print(f"📁 Wrote plan with {len(result.plan.outlines)} outlines to {out}")
    if dot:
        _write(dot, render_dag_dot(result.dag))
        console.print(f"📁 Wrote DAG to {dot}")

    console.print(
        f"✅ {result.stats.chains} chains → {result.stats.nodes} nodes, "
        f"{result.stats.edges} edges, depth {result.stats.depth}"
    )
    report = {
        "ok": True,
        "stats": {
            "chains": result.stats.chains,
            "nodes": result.stats.nodes,
            "edges": result.stats.edges,
            "depth": result.stats.depth,
            "sharedNodes": result.stats.shared_nodes,
        },
        "outlines": len(result.plan.outlines),
    }
    if out is None:
        report["plan"] = plan_text
    _emit(report, None)


@app.command()
def validate(
    path: Path = typer.Argument(..., help="Trace file or directory of traces"),
    out: Optional[Path] = typer.Option(None, "--out", help="Write the JSON report here"),
    workers: Optional[int] = typer.Option(None, "--workers", help="Files checked concurrently"),
    config: Optional[Path] = typer.Option(None, "--config", help="Runtime settings YAML"),
):
    """Verify trace syntax and replay each trace through the scheduler."""
    settings = _load(config, workers=workers)
    files = _trace_files(path)
    if not files:
        console.print(f"❌ No trace files found at {path}", style="red")
        raise typer.Exit(EXIT_INVALID)

    reports = asyncio.run(_validate_files(files, settings))
    summary = aggregate_reports({_display_name(f, path): r for f, r in reports.items()})
    _show_validation_summary(summary)
    _emit(summary, out)
    if not summary["ok"]:
        raise typer.Exit(EXIT_INVALID)


@app.command()
def run(
    prompt: Path = typer.Argument(..., help="Input prompt file"),
    producer: Optional[str] = typer.Option(None, "--producer", help="scripted, synthetic or remote"),
    script: Optional[Path] = typer.Option(None, "--script", help="Script file for the scripted producer"),
    endpoint: Optional[str] = typer.Option(None, "--endpoint", help="Generation endpoint URL"),
    workers: Optional[int] = typer.Option(None, "--workers", help="Concurrent producer calls"),
    seed: Optional[int] = typer.Option(None, "--seed", help="Seed of the synthetic producer"),
    serial: bool = typer.Option(False, "--serial", help="Fire one transition per round"),
    plan: Optional[Path] = typer.Option(None, "--plan", help="Execute this plan directly instead of planning"),
    out: Optional[Path] = typer.Option(None, "--out", help="Write the JSON run report here"),
    trace_out: Optional[Path] = typer.Option(None, "--trace-out", help="Write the trace text here"),
    log: Optional[Path] = typer.Option(None, "--log", help="Write fired transitions as JSON lines"),
    dot: Optional[Path] = typer.Option(None, "--dot", help="Write the instantiated net as DOT"),
    config: Optional[Path] = typer.Option(None, "--config", help="Runtime settings YAML"),
):
    """Run two-phase inference on a prompt, or execute a given plan with --plan."""
    settings = _load(config, producer=producer, endpoint=endpoint, workers=workers, seed=seed)
    text = _read(prompt)
    given_plan = None
    if plan:
        plan_text = _read(plan)
        try:
            given_plan = parse_plan(plan_text)
        except (PlanFormatError, GraphError) as e:
            console.print(f"❌ Plan parse failure: {e}", style="red")
            _emit({"ok": False, "error": {"code": PlanParseError.code, "message": str(e), "rawText": plan_text}}, out)
            raise typer.Exit(EXIT_PLAN_PARSE)

    try:
        step_producer = create_producer(settings, script)
    except ProducerError as e:
        console.print(f"❌ {e}", style="red")
        raise typer.Exit(EXIT_INVALID)

    engine = ReasoningEngine.from_settings(settings, step_producer)
    try:
        report = asyncio.run(_run_inference(engine, text, serial, given_plan))
    except PlanParseError as e:
        console.print(f"❌ Plan parse failure: {e}", style="red")
        _emit({"ok": False, "error": {"code": e.code, "message": str(e), "rawText": e.raw_text}}, out)
        raise typer.Exit(EXIT_PLAN_PARSE)
    except (ProducerFailureError, ProducerError) as e:
        console.print(f"❌ Producer failure: {e}", style="red")
        _emit({"ok": False, "error": report_from_error(e).to_dict()}, out)
        raise typer.Exit(EXIT_PRODUCER)
    except (InvalidTraceError, PlanFormatError, EngineError) as e:
        console.print(f"❌ {e}", style="red")
        _emit({"ok": False, "error": report_from_error(e).to_dict()}, out)
        raise typer.Exit(EXIT_INVALID)

    if trace_out:
        _write(trace_out, report.trace_text)
    if log:
        _write(log, "".join(json.dumps(r.to_log_dict(), sort_keys=True) + "\n" for r in report.log))
    if dot:
        dag = plan_to_dag(report.trace.plan, single_conclusion=settings.single_conclusion)
        _write(dot, render_petri_dot(dag_to_petri(dag)))

    _show_metrics(report.metrics)
    _emit({"ok": True, **report.to_dict()}, out)


@app.command()
def mask(
    trace: Path = typer.Argument(..., help="Trace file"),
    out: Optional[Path] = typer.Option(None, "--out", help="Write the JSON export here"),
    binary: Optional[Path] = typer.Option(None, "--binary", help="Also write the little-endian int32 export"),
    mode: Optional[MaskMode] = typer.Option(None, "--mode", help="Visibility rule: layer, ancestry or causal"),
    config: Optional[Path] = typer.Option(None, "--config", help="Runtime settings YAML"),
):
    """Export the attention mask and position indices of a trace."""
    settings = _load(config, mask_mode=mode)
    try:
        doc = parse_trace(_read(trace))
    except (PlanFormatError, GraphError) as e:
        console.print(f"❌ {getattr(e, 'code', 'Error')}: {e}", style="red")
        _emit({"ok": False, "error": report_from_error(e, str(trace)).to_dict()}, out)
        raise typer.Exit(EXIT_INVALID)

    layout = layout_from_trace(doc)
    dense = build_mask(layout, settings.mask_mode)
    positions = build_positions(layout, settings.mask_mode)
    check = verify_no_leakage(layout, dense, settings.mask_mode)
    if not check.ok:
        console.print(f"❌ Mask check failed with {len(check.violations)} violations", style="red")
        _emit({"ok": False, "report": check.to_dict()}, out)
        raise typer.Exit(EXIT_INVALID)

    if binary:
        binary.parent.mkdir(parents=True, exist_ok=True)
        binary.write_bytes(export_binary(layout, dense, positions))
    console.print(f"✅ {layout.length} tokens in {len(layout.segments)} segments ({settings.mask_mode.value} mode)")
    _emit({"ok": True, "mode": settings.mask_mode.value, **export_json(layout, dense, positions)}, out)


@app.command()
def replay(
    trace: Path = typer.Argument(..., help="Trace file"),
    out: Optional[Path] = typer.Option(None, "--out", help="Write the JSON report here"),
    workers: Optional[int] = typer.Option(None, "--workers", help="Concurrent producer calls"),
    config: Optional[Path] = typer.Option(None, "--config", help="Runtime settings YAML"),
):
    """Replay a trace with its recorded texts and report cost metrics."""
    settings = _load(config, workers=workers)
    engine = ReasoningEngine.from_settings(settings)
    try:
        doc = parse_trace(_read(trace), strict=False)
        marking, metrics = asyncio.run(engine.replay_trace(doc))
    except InvalidTraceError as e:
        console.print(f"❌ {e}", style="red")
        _emit({"ok": False, "report": e.report.to_dict()}, out)
        raise typer.Exit(EXIT_INVALID)
    except (PlanFormatError, GraphError, InfeasibleOrderError) as e:
        console.print(f"❌ {getattr(e, 'code', 'Error')}: {e}", style="red")
        _emit({"ok": False, "error": report_from_error(e, str(trace)).to_dict()}, out)
        raise typer.Exit(EXIT_INVALID)

    _show_metrics(metrics)
    _emit(
        {
            "ok": True,
            "metrics": metrics.to_dict(),
            "finalMarking": {"round": marking.round, "markedPlaces": marking.marked_places()},
        },
        out,
    )


@app.command()
def dot(
    plan: Path = typer.Argument(..., help="Plan or trace file"),
    out: Optional[Path] = typer.Option(None, "--out", help="Write the DAG DOT here"),
    net: Optional[Path] = typer.Option(None, "--net", help="Write the Petri net DOT here"),
    config: Optional[Path] = typer.Option(None, "--config", help="Runtime settings YAML"),
):
    """Render a plan's DAG and Petri net as DOT."""
    settings = _load(config)
    try:
        document = parse_plan(_read(plan))
        dag = plan_to_dag(document, single_conclusion=settings.single_conclusion)
    except (PlanFormatError, GraphError) as e:
        console.print(f"❌ {getattr(e, 'code', 'Error')}: {e}", style="red")
        raise typer.Exit(EXIT_INVALID)

    petri = dag_to_petri(dag)
    if net:
        _write(net, render_petri_dot(petri))
        console.print(f"📁 Wrote net with depth {topological_depth(petri)} to {net}")
    rendered = render_dag_dot(dag)
    if out:
        _write(out, rendered)
        console.print(f"📁 Wrote DAG to {out}")
    else:
        typer.echo(rendered, nl=False)


@app.command()
def bench(
    runs: int = typer.Option(100, "--runs", min=1, help="Number of synthetic plans"),
    seed: Optional[int] = typer.Option(None, "--seed", help="Seed of the synthetic producer"),
    workers: Optional[int] = typer.Option(None, "--workers", help="Concurrent producer calls"),
    out: Optional[Path] = typer.Option(None, "--out", help="Write the JSON summary here"),
    config: Optional[Path] = typer.Option(None, "--config", help="Runtime settings YAML"),
):
    """Simulated speedup over branch-heavy synthetic plans."""
    settings = _load(config, seed=seed, workers=workers)
    producer = SyntheticProducer(
        seed=settings.seed,
        min_tokens=settings.step_tokens_min,
        max_tokens=settings.step_tokens_max,
    )
    engine = ReasoningEngine.from_settings(settings, producer)
    prompts = [f"synthetic workload {settings.seed} #{i}" for i in range(runs)]
    reports = asyncio.run(run_many(engine, prompts))
    summary = summarize_runs([r.metrics for r in reports])
    console.print(
        f"📊 {summary['runs']} runs: mean speedup {summary['meanSpeedup']:.3f}× "
        f"(min {summary['minSpeedup']:.3f}, max {summary['maxSpeedup']:.3f})"
    )
    _emit(summary, out)


def _load(config: Optional[Path], **flags: Any) -> RuntimeSettings:
    """Load settings, using configs/runtime.yaml when no file is given and it exists."""
    path = config if config is not None else (DEFAULT_CONFIG_FILE if DEFAULT_CONFIG_FILE.exists() else None)
    if config is not None and not config.exists():
        console.print(f"❌ Configuration file not found: {config}", style="red")
        raise typer.Exit(EXIT_INVALID)
    try:
        settings = load_settings(path, **flags)
    except (ValidationError, ValueError) as e:
        console.print(f"❌ Invalid configuration: {e}", style="red")
        raise typer.Exit(EXIT_INVALID)
    for issue in validate_settings(settings):
        console.print(f"⚠️  {issue}", style="yellow")
    return settings


def _read(path: Path) -> str:
    try:
        return path.read_text(encoding="utf-8")
    except OSError as e:
        console.print(f"❌ Cannot read {path}: {e}", style="red")
        raise typer.Exit(EXIT_INVALID)


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")


def _emit(data: Dict[str, Any], out: Optional[Path]) -> None:
    """JSON with sorted keys to ``out`` or stdout."""
    text = json.dumps(data, sort_keys=True, indent=2, ensure_ascii=False) + "\n"
    if out:
        _write(out, text)
    else:
        typer.echo(text, nl=False)


def _trace_files(path: Path) -> List[Path]:
    if path.is_dir():
        return sorted(p for p in path.rglob("*") if p.is_file() and p.suffix in TRACE_SUFFIXES)
    return [path] if path.is_file() else []


def _display_name(file: Path, root: Path) -> str:
    return file.relative_to(root).as_posix() if root.is_dir() else file.name


async def _run_inference(engine: ReasoningEngine, text: str, serial: bool, plan: Optional[PlanDocument] = None):
    assert engine.producer is not None
    async with engine.producer:
        if plan is not None:
            return await engine.run_plan(plan, text, serial=serial)
        return await engine.run_inference(text, serial=serial)


async def _validate_files(files: List[Path], settings: RuntimeSettings) -> Dict[Path, ValidationReport]:
    """Syntax check then replay, up to ``settings.workers`` files at a time."""
    semaphore = asyncio.Semaphore(settings.workers)
    engine = ReasoningEngine.from_settings(settings)

    async def _check(file: Path) -> ValidationReport:
        async with semaphore:
            text = file.read_text(encoding="utf-8")
            report = verify_trace_text(text, single_conclusion=settings.single_conclusion)
            if not report.ok:
                return report
            try:
                await engine.replay_trace(parse_trace(text, strict=False))
            except (EngineError, GraphError, PlanFormatError) as e:
                report.extend(report_from_error(e, "replay"))
            return report

    results = await asyncio.gather(*(_check(f) for f in files))
    return dict(zip(files, results))


def _show_validation_summary(summary: Dict[str, Any]) -> None:
    table = Table(show_header=True, header_style="bold magenta")
    table.add_column("File", style="cyan")
    table.add_column("Status")
    table.add_column("Violations", style="yellow")
    for name, report in summary["files"].items():
        codes = ", ".join(v["code"] for v in report["violations"])
        table.add_row(name, "✅" if report["ok"] else "❌", codes)
    console.print(table)
    totals = summary["summary"]
    console.print(f"Checked {totals['total']} traces: {totals['passed']} passed, {totals['failed']} failed")


def _show_metrics(metrics: RunMetrics) -> None:
    console.print(f"\n📊 Run Summary:")
    console.print(f"  Transitions: {metrics.transitions} in {metrics.rounds} rounds")
    console.print(f"  Tokens: {metrics.total_tokens} (plan {metrics.plan_tokens}, conclusion {metrics.conclusion_tokens})")
    console.print(f"  Serial cost {metrics.serial_cost} / parallel cost {metrics.parallel_cost}")
    console.print(f"  Speedup: {metrics.speedup:.3f}×")


if __name__ == "__main__":
    app()
