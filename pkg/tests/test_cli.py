import json

import pytest
from typer.testing import CliRunner

from src.dcabot.__about__ import __version__
from src.dcabot.cli import app, run_cli
from src.dcabot.core import ExitCodes, reset_state
from src.dcabot.correlation import format_verdict_line, run_src
from src.dcabot.logio import MANIFEST_PREFIX, read_sig_log

from ._shared import ANTIGEN_LOG, EXAMPLES_PATH, SIG_LOG

runner = CliRunner()


@pytest.fixture(autouse=True)
def fresh_state():
    reset_state()
    yield
    reset_state()


@pytest.fixture
def short_sessions(tmp_path):
    """
    A --config file that keeps simulated sessions short.
    """
    path = tmp_path / "short.conf"
    path.write_text("duration_s = 20\npopulation-size = 30\n")
    return str(path)


def test_simulate_is_deterministic(tmp_path, short_sessions):
    first = tmp_path / "first.trace"
    second = tmp_path / "second.trace"
    for out in (first, second):
        result = runner.invoke(
            app, ["--config", short_sessions, "simulate", "--scenario", "E2.1.a", "--seed", "7", "--out", str(out)]
        )
        assert result.exit_code == 0
        assert result.stdout.strip().endswith(str(out))
    assert first.read_bytes() == second.read_bytes()
    assert first.read_text().startswith(MANIFEST_PREFIX)


def test_chained_equals_single_shot(tmp_path, short_sessions):
    trace = str(tmp_path / "session.trace")
    merged = str(tmp_path / "session.log")
    signals = str(tmp_path / "session.siglog")
    antigens = str(tmp_path / "session.antiglog")

    common = ["--config", short_sessions]
    simulated = runner.invoke(app, [*common, "simulate", "--scenario", "E2.3.b", "--seed", "3", "--out", trace])
    assert simulated.exit_code == 0
    derived = runner.invoke(
        app, [*common, "derive", "--in", trace, "--out", merged, "--signals", signals, "--antigens", antigens]
    )
    assert derived.exit_code == 0
    assert derived.stdout.split()[0] == "20"

    chained = runner.invoke(app, [*common, "detect-dca", "--in", merged, "--seed", "3"])
    single = runner.invoke(app, [*common, "detect-dca", "--scenario", "E2.3.b", "--seed", "3"])
    assert chained.exit_code == single.exit_code == 0
    assert chained.stdout == single.stdout
    assert chained.stdout.splitlines()[0].startswith("pid\tproc_name\t")
    assert "\tbot\t" in chained.stdout

    # the separate logs give the same SRC verdict as the merged one
    from_parts = runner.invoke(app, [*common, "detect-src", "--in", signals, "--antigens", antigens])
    from_merged = runner.invoke(app, [*common, "detect-src", "--in", merged])
    assert from_parts.exit_code == from_merged.exit_code == 0
    assert from_parts.stdout == from_merged.stdout


def test_detect_dca_json(tmp_path, short_sessions):
    out = tmp_path / "presented.txt"
    report = tmp_path / "scores.tsv"
    result = runner.invoke(
        app,
        [
            "--config",
            short_sessions,
            "--format",
            "json",
            "detect-dca",
            "--scenario",
            "E2.2.a",
            "--weight-set",
            "WS5",
            "--out",
            str(out),
            "--report",
            str(report),
        ],
    )
    assert result.exit_code == 0
    scores = json.loads(result.stdout)
    assert 722 in {score["pid"] for score in scores}
    assert sum(score["mac"] for score in scores) <= 1 + 1e-9
    assert all(0 <= score["mcav"] <= 1 for score in scores)

    assert out.read_text().startswith(MANIFEST_PREFIX)
    header, *rows = report.read_text().splitlines()
    assert json.loads(header.removeprefix(MANIFEST_PREFIX))["weights"][0] == 8
    assert rows[0].startswith("pid\t")
    assert len(rows) == len(scores) + 1


def test_detect_src_from_files():
    signals, _ = read_sig_log(SIG_LOG)
    z, nz = run_src(signals, keylog_seen=True)

    result = runner.invoke(app, ["detect-src", "--in", SIG_LOG, "--antigens", ANTIGEN_LOG])
    assert result.exit_code == 0
    assert result.stdout.strip() == format_verdict_line(z, nz)

    # scoped to a process without keyboard calls
    result = runner.invoke(app, ["detect-src", "--in", SIG_LOG, "--antigens", ANTIGEN_LOG, "--suspect-pid", "1001"])
    assert result.stdout.split()[4:] == ["No", "Normal"]

    result = runner.invoke(app, ["--format", "json", "detect-src", "--in", SIG_LOG, "--antigens", ANTIGEN_LOG])
    document = json.loads(result.stdout)
    assert document["nz"]["keylog_seen"] is True
    assert document["line"] == format_verdict_line(z, nz)


def test_detect_src_out(tmp_path):
    out = tmp_path / "verdict.txt"
    result = runner.invoke(app, ["detect-src", "--in", SIG_LOG, "--antigens", ANTIGEN_LOG, "--out", str(out)])
    assert result.exit_code == 0
    header, line = out.read_text().splitlines()
    assert header.startswith(MANIFEST_PREFIX)
    assert line == result.stdout.strip()


def test_repeated_runs(tmp_path, short_sessions):
    common = ["--config", short_sessions]

    out = tmp_path / "compare.tsv"
    result = runner.invoke(app, [*common, "compare", "--scenario", "E2.1.a", "--seeds", "2", "--out", str(out)])
    assert result.exit_code == 0
    lines = result.stdout.splitlines()
    assert lines[0] == "pid\tproc_name\tmcav\tmac"
    assert any(line.startswith("1001\tirc\t") for line in lines)
    header, *rows = out.read_text().splitlines()
    assert json.loads(header.removeprefix(MANIFEST_PREFIX))["seeds"] == [0, 1]
    assert rows == lines

    out = tmp_path / "sweep.tsv"
    result = runner.invoke(app, [*common, "sweep-weights", "--scenario", "E2.1.a", "--seeds", "2", "--out", str(out)])
    assert result.exit_code == 0
    lines = result.stdout.splitlines()
    assert lines[0] == "weight_set\tcoefficient\tn\tmean\tmedian\tq1\tq3"
    # five weight sets, two coefficients each
    assert len(lines) == 11
    assert out.read_text().startswith(MANIFEST_PREFIX)

    out = tmp_path / "report.txt"
    result = runner.invoke(app, [*common, "report", "--scenario", "E2.1.a", "--seeds", "2", "--out", str(out)])
    assert result.exit_code == 0
    for section in ("## SRC", "## DCA means", "## Mann-Whitney", "## Weight sets", "## Wilcoxon", "## SRC vs DCA"):
        assert section in result.stdout
    assert out.read_text().startswith(MANIFEST_PREFIX)

    result = runner.invoke(app, [*common, "--format", "json", "report", "--scenario", "E2.1.a", "--seeds", "2"])
    assert json.loads(result.stdout)["seeds"] == [0, 1]


def test_usage_errors(tmp_path):
    # exactly one input source
    result = runner.invoke(app, ["detect-dca", "--in", SIG_LOG, "--scenario", "E1"])
    assert result.exit_code == ExitCodes.usage
    assert runner.invoke(app, ["detect-src"]).exit_code == ExitCodes.usage

    # derive needs somewhere to write
    assert runner.invoke(app, ["derive", "--in", str(tmp_path / "x.trace")]).exit_code == ExitCodes.usage

    assert run_cli(["unknown"]) != 0


def test_input_errors(tmp_path):
    missing = str(tmp_path / "missing.log")
    assert runner.invoke(app, ["detect-dca", "--in", missing]).exit_code == ExitCodes.error

    bad = str(EXAMPLES_PATH / "bad_signal.siglog")
    result = runner.invoke(app, ["detect-src", "--in", bad])
    assert result.exit_code == ExitCodes.error

    assert runner.invoke(app, ["detect-dca", "--scenario", "E5"]).exit_code == ExitCodes.error


def test_bad_config_file():
    result = runner.invoke(app, ["--config", str(EXAMPLES_PATH / "missing_equals.conf"), "detect-src"])
    assert result.exit_code == ExitCodes.error
    assert run_cli(["--config", str(EXAMPLES_PATH / "wrong_type.conf"), "--version"]) == ExitCodes.error


def test_version_and_config():
    result = runner.invoke(app, ["--version"])
    assert result.exit_code == 0
    assert __version__ in result.stdout

    result = runner.invoke(app, ["--format", "json", "--version"])
    assert json.loads(result.stdout) == {"version": __version__}

    experiment = str(EXAMPLES_PATH / "experiment.conf")
    result = runner.invoke(app, ["--format", "json", "--config", experiment, "--show-config"])
    assert result.exit_code == 0
    shown = json.loads(result.stdout)
    assert shown["config"]["population_size"] == 50
    assert shown["config_file"].endswith("experiment.conf")

    assert run_cli(["--show-config"]) == 0
    assert run_cli([]) == 0


def test_unreadable_input(tmp_path):
    binary = tmp_path / "binary.log"
    binary.write_bytes(b"\xff\xfe<0000> <signal> <0> <0> <0>\n")
    result = runner.invoke(app, ["detect-dca", "--in", str(binary)])
    assert result.exit_code == ExitCodes.error
    assert "line 1: not UTF-8 text" in result.output

    broken = tmp_path / "broken.siglog"
    broken.write_text("# run-manifest: {broken\n<0000> <signal> <0> <0> <0>\n")
    result = runner.invoke(app, ["detect-src", "--in", str(broken)])
    assert result.exit_code == ExitCodes.error
    assert "broken run manifest" in result.output

    unsorted = tmp_path / "unsorted.log"
    unsorted.write_text("<0002> <signal> <0> <0> <100>\n<0001> <antigen> <722> <send()>\n")
    result = runner.invoke(app, ["detect-dca", "--in", str(unsorted)])
    assert result.exit_code == ExitCodes.error
    assert "go back in time" in result.output


def test_negative_seed_exits_with_error(tmp_path):
    result = runner.invoke(app, ["simulate", "--scenario", "E1", "--seed", "-1", "--out", str(tmp_path / "t.trace")])
    assert result.exit_code == ExitCodes.error
    assert "seed must be non-negative" in result.output
    assert not (tmp_path / "t.trace").exists()

    result = runner.invoke(app, ["detect-dca", "--in", SIG_LOG, "--seed", "-1"])
    assert result.exit_code == ExitCodes.error
