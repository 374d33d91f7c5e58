"""This file contains all Typer Commands."""

import typing
from dataclasses import asdict
from typing import Any, Iterable, Optional, Sequence

import click
import typer
from rich import print
from typing_extensions import Never

from . import pipeline
from .__about__ import __version__
from .analysis import format_scores, format_test, score_processes
from .core import (
    DEFAULT_FORMAT,
    DEFAULT_VERBOSITY,
    Config,
    ExitCodes,
    Format,
    Verbosity,
    danger,
    print_json,
    state,
    with_exit_code,
)
from .correlation import format_verdict_line, keylog_seen, run_src
from .dca import WeightMatrix, total_presented, weight_set, write_presented
from .logio import (
    AntigenRecord,
    Manifest,
    SignalRecord,
    merge_events,
    read_antigen_log,
    read_events,
    write_lines,
    write_log,
)
from .signals import read_trace, write_trace
from .simulator import process_names

app = typer.Typer(no_args_is_help=False)

# options shared by several commands, defined once for reuse:
T_In: typing.TypeAlias = typing.Annotated[Optional[str], typer.Option("--in", help="input file")]
T_Out: typing.TypeAlias = typing.Annotated[Optional[str], typer.Option("--out", help="output file")]
T_Scenario: typing.TypeAlias = typing.Annotated[
    Optional[str], typer.Option("--scenario", help="E1, E2.1.a, E2.1.b, E2.2.a, E2.2.b, E2.3.a, E2.3.b or E3")
]
T_Seed: typing.TypeAlias = typing.Annotated[Optional[int], typer.Option("--seed", help="first (or only) seed")]
T_Seeds: typing.TypeAlias = typing.Annotated[
    Optional[int], typer.Option("--seeds", help="number of repetitions (seed, seed + 1, ...)")
]
T_Pid: typing.TypeAlias = typing.Annotated[int, typer.Option("--pid", help="the suspect process")]
T_WeightSet: typing.TypeAlias = typing.Annotated[
    Optional[str], typer.Option("--weight-set", help="WS1 .. WS5 (overrides configured weights)")
]


def _emit(lines: Iterable[str], document: Any) -> None:
    """
    Show a result in the requested --format.
    """
    match state.output_format:
        case Format.text:
            for line in lines:
                typer.echo(line)
        case Format.json:
            print_json(document)


def _require_one(in_: Optional[str], scenario: Optional[str]) -> bool:
    """
    Exactly one input source: a file or a scenario to simulate in memory.
    """
    if (in_ is None) == (scenario is None):
        danger("give either --in or --scenario (not both)")
        return False
    return True


def _weights(config: Config, name: Optional[str]) -> WeightMatrix:
    return weight_set(name) if name else config.weight_matrix()


def _dca_manifest(config: Config, weights: WeightMatrix, **extra: Any) -> Manifest:
    return {
        **extra,
        "seed": config.seed,
        "population_size": config.population_size,
        "threshold_low": config.threshold_low,
        "threshold_high": config.threshold_high,
        "weights": weights.flat(),
        "replication": config.replication,
        "mcav_threshold": config.mcav_threshold,
        "mac_threshold": config.mac_threshold,
    }


def _fmt(value: Optional[float], digits: int = 4) -> str:
    return "N/A" if value is None else f"{value:.{digits}f}"


@app.command()
@with_exit_code()
def simulate(
    scenario: typing.Annotated[str, typer.Option("--scenario", help="scenario id")],
    out: typing.Annotated[str, typer.Option("--out", help="trace file to write")],
    seed: T_Seed = None,
    duration: typing.Annotated[Optional[int], typer.Option("--duration", help="session length in seconds")] = None,
) -> int:
    """
    Generate the raw call trace of one session.

    Args:
        scenario: which of the eight sessions
        out: where to write the trace
        seed: generator seed (default from config)
        duration: session length in seconds (default from config)
    """
    config = state.update_config(seed=seed, duration_s=duration)

    trace, manifest = pipeline.simulate(config, scenario)
    count = write_trace(out, trace, {"command": "simulate", **manifest})
    state.log(f"simulate: {count} calls of {manifest['scenario']} (seed {manifest['seed']}) -> {out}")

    _emit([f"{count} {out}"], {"out": out, "calls": count, "manifest": manifest})
    return ExitCodes.success


@app.command()
@with_exit_code()
def derive(
    in_: typing.Annotated[str, typer.Option("--in", help="trace file")],
    out: typing.Annotated[Optional[str], typer.Option("--out", help="merged signal + antigen log")] = None,
    signals: typing.Annotated[Optional[str], typer.Option("--signals", help="SigLog file")] = None,
    antigens: typing.Annotated[Optional[str], typer.Option("--antigens", help="AntigLog file")] = None,
    duration: typing.Annotated[Optional[float], typer.Option("--duration", help="seconds to cover")] = None,
) -> int:
    """
    Turn a raw trace into per-second signals and per-call antigen.

    Args:
        in_: the trace
        out: write the merged stream here
        signals: write the SigLog here
        antigens: write the AntigLog here
        duration: seconds to cover (default: the trace manifest's duration, else up to the last call)
    """
    if not (out or signals or antigens):
        danger("derive: give at least one of --out, --signals, --antigens")
        return ExitCodes.usage

    config = state.get_config()
    trace, trace_manifest = read_trace(in_)
    trace_manifest = trace_manifest or {}
    if duration is None:
        duration = trace_manifest.get("duration_s")

    sig_log, antig_log = pipeline.derive(trace, config.normalization(), duration)
    manifest: Manifest = {
        **trace_manifest,
        "command": "derive",
        "input": in_,
        "normalization": asdict(config.normalization()),
    }

    written = {}
    if signals:
        written["signals"] = write_log(signals, sig_log, manifest)
    if antigens:
        written["antigens"] = write_log(antigens, antig_log, manifest)
    if out:
        written["out"] = write_log(out, merge_events(sig_log, antig_log), manifest)
    state.log(f"derive: {len(sig_log)} signal records, {len(antig_log)} antigen records from {in_}")

    _emit([f"{len(sig_log)} {len(antig_log)}"], {"signals": len(sig_log), "antigens": len(antig_log), **written})
    return ExitCodes.success


@app.command()
@with_exit_code()
def detect_dca(
    in_: T_In = None,
    scenario: T_Scenario = None,
    seed: T_Seed = None,
    weight_set_: T_WeightSet = None,
    mcav_threshold: Optional[float] = None,
    mac_threshold: Optional[float] = None,
    out: typing.Annotated[Optional[str], typer.Option("--out", help="presented antigen dump")] = None,
    report: typing.Annotated[Optional[str], typer.Option("--report", help="per-process report file")] = None,
) -> int:
    """
    Run the dendritic cell algorithm and score every process.

    Args:
        in_: a merged signal + antigen log (from derive --out)
        scenario: or simulate this scenario in memory instead
        seed: DCA (and simulator) seed
        weight_set_: use this preset instead of the configured weights
        mcav_threshold: MCAV above this is anomalous
        mac_threshold: MAC above this is anomalous
        out: write the presented antigen here
        report: write the per-process table here
    """
    if not _require_one(in_, scenario):
        return ExitCodes.usage

    config = state.update_config(seed=seed, mcav_threshold=mcav_threshold, mac_threshold=mac_threshold)
    weights = _weights(config, weight_set_)

    if in_:
        events, source = read_events(in_)
        source = source or {}
    else:
        run = pipeline.session(config, scenario)
        events, source = run.events, run.manifest

    names = process_names(source)
    presented = pipeline.detect(events, config, weights=weights)
    scores = score_processes(presented, names, config.mcav_threshold, config.mac_threshold)
    manifest = _dca_manifest(
        config,
        weights,
        command="detect-dca",
        input=in_,
        scenario=source.get("scenario"),
        processes={str(pid): name for pid, name in names.items()},
    )
    state.log(f"detect-dca: {total_presented(presented)} presentations over {len(scores)} processes")

    lines = format_scores(scores)
    if out:
        write_presented(out, presented, manifest)
    if report:
        write_lines(report, lines, manifest)

    _emit(lines, [score.as_dict() for score in scores])
    return ExitCodes.success


@app.command()
@with_exit_code()
def detect_src(
    in_: T_In = None,
    antigens: typing.Annotated[Optional[str], typer.Option("--antigens", help="AntigLog for the keylog check")] = None,
    scenario: T_Scenario = None,
    seed: T_Seed = None,
    suspect_pid: typing.Annotated[Optional[int], typer.Option(help="only this pid's keyboard calls count")] = None,
    src_threshold: Optional[float] = None,
    out: T_Out = None,
) -> int:
    """
    Run the Spearman rank correlation detector over a whole session.

    Prints `rho13_Z rho13_NZ rho23_Z rho23_NZ keylog confidence`.

    Args:
        in_: a SigLog or a merged log
        antigens: extra AntigLog (when --in holds signals only)
        scenario: or simulate this scenario in memory instead
        seed: simulator seed
        suspect_pid: scope the keylog check to one process
        src_threshold: correlation threshold
        out: write the verdict line here
    """
    if not _require_one(in_, scenario):
        return ExitCodes.usage

    config = state.update_config(seed=seed, suspect_pid=suspect_pid, src_threshold=src_threshold)

    sig_log: list[SignalRecord]
    antig_log: list[AntigenRecord]
    if in_:
        records, source = read_events(in_)
        sig_log = [r for r in records if isinstance(r, SignalRecord)]
        antig_log = [r for r in records if isinstance(r, AntigenRecord)]
        if antigens:
            antig_log += read_antigen_log(antigens)[0]
        source = source or {}
    else:
        run = pipeline.session(config, scenario)
        sig_log, antig_log, source = run.signals, run.antigens, run.manifest

    pids = None if config.suspect_pid is None else {config.suspect_pid}
    z, nz = run_src(sig_log, keylog_seen(antig_log, pids), config.src_threshold)
    line = format_verdict_line(z, nz)

    if out:
        manifest = {
            "command": "detect-src",
            "input": in_,
            "scenario": source.get("scenario"),
            "seed": source.get("seed", config.seed),
            "src_threshold": config.src_threshold,
            "suspect_pid": config.suspect_pid,
        }
        write_lines(out, [line], manifest)

    _emit([line], {"z": pipeline.verdict_as_dict(z), "nz": pipeline.verdict_as_dict(nz), "line": line})
    return ExitCodes.success


def _sweep_lines(summary: dict[str, dict[str, Any]]) -> list[str]:
    lines = ["weight_set\tcoefficient\tn\tmean\tmedian\tq1\tq3"]
    for name, block in summary.items():
        for coefficient in ("mcav", "mac"):
            stats = block[coefficient]
            if stats is None:
                lines.append(f"{name}\t{coefficient}\t0\tN/A\tN/A\tN/A\tN/A")
                continue
            lines.append(
                "\t".join(
                    [name, coefficient, str(stats["n"])]
                    + [_fmt(stats[key]) for key in ("mean", "median", "q1", "q3")]
                )
            )
    return lines


def _test_text(test: Optional[dict[str, Any]], label: str) -> str:
    if test is None:
        return "N/A"
    return f"{label}={test['statistic']:g}, p={test['p_value']:.4g}, method={test['method']}"


@app.command()
@with_exit_code()
def sweep_weights(
    scenario: typing.Annotated[str, typer.Option("--scenario", help="scenario id")],
    seeds: T_Seeds = None,
    seed: T_Seed = None,
    pid: T_Pid = pipeline.BOT_PID,
    out: T_Out = None,
) -> int:
    """
    Score one process under all five weight sets over repeated sessions.

    Args:
        scenario: which session to repeat
        seeds: number of repetitions
        seed: first seed
        pid: the process to follow
        out: write the table here
    """
    config = state.update_config(seed=seed, repetitions=seeds)
    runs = pipeline.sessions(config, scenario)
    sweep = pipeline.sweep_weights(config, runs, pid)
    summary = sweep.summary()
    state.log(f"sweep-weights: {len(runs)} sessions of {scenario}")

    lines = _sweep_lines(summary)
    if out:
        manifest = {"command": "sweep-weights", "scenario": scenario, "seeds": sweep.seeds, "pid": pid}
        write_lines(out, lines, manifest)

    _emit(lines, {"pid": pid, "seeds": sweep.seeds, "mcav": sweep.mcav, "mac": sweep.mac, "summary": summary})
    return ExitCodes.success


@app.command()
@with_exit_code()
def compare(
    scenario: typing.Annotated[str, typer.Option("--scenario", help="scenario id")],
    seeds: T_Seeds = None,
    seed: T_Seed = None,
    pid: T_Pid = pipeline.BOT_PID,
    weight_set_: T_WeightSet = None,
    out: T_Out = None,
) -> int:
    """
    Mann-Whitney U of one process's MCAV and MAC against every other process, over repeated sessions.

    Args:
        scenario: which session to repeat
        seeds: number of repetitions
        seed: first seed
        pid: the process to compare against the rest
        weight_set_: use this preset instead of the configured weights
        out: write the table here
    """
    config = state.update_config(seed=seed, repetitions=seeds)
    weights = _weights(config, weight_set_)
    runs = pipeline.sessions(config, scenario)
    scored = [run.score(config, weights)[1] for run in runs]
    comparisons = pipeline.compare(scored, pid)

    lines = ["pid\tproc_name\tmcav\tmac"]
    lines += [
        "\t".join(
            [
                str(c.pid),
                c.proc_name,
                format_test(c.mcav) if c.mcav else "N/A",
                format_test(c.mac) if c.mac else "N/A",
            ]
        )
        for c in comparisons
    ]
    document = [
        {
            "pid": c.pid,
            "proc_name": c.proc_name,
            "mcav": format_test(c.mcav) if c.mcav else None,
            "mac": format_test(c.mac) if c.mac else None,
        }
        for c in comparisons
    ]
    if out:
        manifest = _dca_manifest(config, weights, command="compare", scenario=scenario, seeds=config.seeds(), pid=pid)
        write_lines(out, lines, manifest)

    _emit(lines, document)
    return ExitCodes.success


def render_report(document: dict[str, Any]) -> list[str]:
    """
    The text form of `pipeline.build_report`.
    """
    lines = [f"# scenario {document['scenario']}, pid {document['pid']}, seeds {document['seeds']}", ""]
    lines += ["## SRC", document["src"]["line"], ""]

    lines.append("## DCA means")
    lines.append("pid\tproc_name\truns\tantigen_count\tmcav\tmac")
    lines += [
        f"{m['pid']}\t{m['proc_name']}\t{m['runs']}\t{m['antigen_count']:.1f}\t{_fmt(m['mcav'])}\t{_fmt(m['mac'])}"
        for m in document["means"]
    ]
    lines.append("")

    lines.append("## Mann-Whitney")
    lines += [
        f"{c['pid']}\t{c['proc_name']}\tmcav: {_test_text(c['mcav'], 'U')}\tmac: {_test_text(c['mac'], 'U')}"
        for c in document["comparisons"]
    ]
    lines.append("")

    lines.append("## Weight sets")
    lines += _sweep_lines(document["sweep"])
    lines.append("")

    lines.append("## Wilcoxon")
    lines += [f"{pair}\t{_test_text(test, 'W')}" for pair, test in document["wilcoxon"].items()]
    lines.append("")

    versus = document["src_vs_dca"]
    lines.append("## SRC vs DCA")
    lines.append(f"src={versus['src']}\tdca_mcav={versus['dca_mcav'] or 'N/A'}\tdca_mac={versus['dca_mac'] or 'N/A'}")
    return lines


@app.command()
@with_exit_code()
def report(
    scenario: typing.Annotated[str, typer.Option("--scenario", help="scenario id")],
    seeds: T_Seeds = None,
    seed: T_Seed = None,
    pid: T_Pid = pipeline.BOT_PID,
    out: T_Out = None,
) -> int:
    """
    Everything at once: SRC verdict, DCA means, Mann-Whitney, weight-set sweep and Wilcoxon.

    Args:
        scenario: which session to repeat
        seeds: number of repetitions
        seed: first seed
        pid: the suspect process
        out: write the text report here as well
    """
    config = state.update_config(seed=seed, repetitions=seeds)
    document = pipeline.build_report(config, scenario, pid)
    lines = render_report(document)

    if out:
        manifest = {"command": "report", "scenario": document["scenario"], "seeds": document["seeds"], "pid": pid}
        write_lines(out, lines, manifest)

    _emit(lines, document)
    return ExitCodes.success


def version_callback() -> Never:
    """
    --version requested!
    """
    match state.output_format:
        case Format.text:
            print(f"dcabot Version: {__version__}")
        case Format.json:
            print_json({"version": __version__})
    raise typer.Exit(0)


def show_config_callback() -> Never:
    """
    --show-config requested!
    """
    match state.output_format:
        case Format.text:
            print(state)
        case Format.json:
            print_json(asdict(state))
    raise typer.Exit(0)


@app.callback(invoke_without_command=True)
def main(
    ctx: typer.Context,
    config: typing.Annotated[Optional[str], typer.Option("--config", help="key=value config file")] = None,
    verbosity: Verbosity = DEFAULT_VERBOSITY,
    output_format: typing.Annotated[Format, typer.Option("--format")] = DEFAULT_FORMAT,
    # stops the program:
    show_config: bool = False,
    version: bool = False,
) -> None:
    """
    This callback will run before every command, setting the right global flags.

    Args:
        ctx: context to determine if a subcommand is passed, etc
        config: path to a key=value config file (overrides pyproject.toml)
        verbosity: level of detail to print out (1 - 4)
        output_format: output format

        show_config: display current configuration?
        version: display current version?

    """
    try:
        state.load_config(config_file=config, verbosity=verbosity, output_format=output_format)
    except Exception as e:
        if verbosity > 3:
            raise e
        danger(f"could not load config: {e}")
        raise typer.Exit(ExitCodes.error)

    if show_config:
        show_config_callback()
    elif version:
        version_callback()
    elif not ctx.invoked_subcommand:
        typer.echo(ctx.get_help())


def run_cli(args: Sequence[str]) -> int:
    """
    Run the app in-process and return its exit code instead of exiting.
    """
    try:
        result = app(list(args), standalone_mode=False, prog_name="dcabot")
    except click.exceptions.Exit as e:
        return e.exit_code
    except click.ClickException as e:
        e.show()
        return e.exit_code
    except click.exceptions.Abort:
        return ExitCodes.error
    return result if isinstance(result, int) else ExitCodes.success


# for the `[project.scripts]` entry
if __name__ == "__main__":  # pragma: no cover
    app()
