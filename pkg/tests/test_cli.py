from unittest.mock import patch

import pytest
from click.testing import CliRunner

from tvclt import __version__
from tvclt.cli.tvclt import EXIT_ERROR, EXIT_FAILED, EXIT_OK, cli
from tvclt.errors import GridTooSmall

SUITE = """\
name: small
sequences:
  - name: laplace
    profile: iid
    base: {family: laplace, params: {b: 1.0}}
n_values: [2, 4]
epsilon_grid: [0.1, 0.5]
delta_grid: [0.5, 0.1]
grid_m: 4096
formats: [csv, json]
checks: {identities: false, loo: false, cor1: true, smoothing: false, intermediate: true}
"""


@pytest.fixture
def runner():
    return CliRunner()


@pytest.fixture
def suite(tmp_path):
    path = tmp_path / "small.yml"
    path.write_text(SUITE)
    return path


def test_version(runner):
    result = runner.invoke(cli, ['version'])
    assert result.exit_code == EXIT_OK
    assert f"tvclt {__version__}" in result.output


def test_no_command_shows_help(runner):
    result = runner.invoke(cli, [])
    assert result.exit_code == 0
    assert "check-identities" in result.output


def test_run_writes_reports(runner, suite, tmp_path):
    out = tmp_path / "out"
    result = runner.invoke(cli, ['run', str(suite), '--out-dir', str(out)])
    assert result.exit_code == EXIT_OK, result.output
    assert (out / "small.csv").exists()
    assert (out / "small.json").exists()
    assert not list(out.glob("*.svg"))
    assert "All bounds and checks hold" in result.output


def test_run_output_dir_from_environment(runner, suite, tmp_path):
    out = tmp_path / "env-out"
    result = runner.invoke(cli, ['run', str(suite), '--format', 'svg'],
                           env={'TVCLT_OUT_DIR': str(out)})
    assert result.exit_code == EXIT_OK, result.output
    assert (out / "laplace_tv_decay.svg").exists()
    assert not (out / "small.csv").exists()


def test_run_rejects_bad_thread_count(runner, suite, tmp_path):
    result = runner.invoke(cli, ['run', str(suite), '--out-dir', str(tmp_path)],
                           env={'TVCLT_THREADS': '0'})
    assert result.exit_code == EXIT_ERROR
    assert "threads" in result.output


def test_run_with_invalid_config(runner, tmp_path):
    path = tmp_path / "bad.yml"
    path.write_text("sequences: []\n")
    result = runner.invoke(cli, ['run', str(path), '--out-dir', str(tmp_path)])
    assert result.exit_code == EXIT_ERROR
    assert "Error:" in result.output


def test_run_with_failing_cases(runner, suite, tmp_path):
    with patch("tvclt.harness.core.bounds.evaluate", side_effect=GridTooSmall("clipped 0.1")):
        result = runner.invoke(cli, ['run', str(suite), '--out-dir', str(tmp_path)])
    assert result.exit_code == EXIT_FAILED
    assert "Case failed" in result.output
    assert (tmp_path / "small.csv").read_text().count("\n") == 1


def test_bound_single_n(runner, suite):
    result = runner.invoke(cli, ['bound', str(suite), '--n', '4'])
    assert result.exit_code == EXIT_OK, result.output
    assert "Bounds at n=4" in result.output
    assert "Kolmogorov" in result.output


def test_bound_single_summand_is_infinite(runner, suite):
    result = runner.invoke(cli, ['bound', str(suite), '--n', '1'])
    assert result.exit_code == EXIT_OK, result.output
    assert "single_summand" in result.output


@pytest.mark.parametrize("args", [['--n', '0'], []])
def test_bound_needs_positive_n(runner, suite, args):
    result = runner.invoke(cli, ['bound', str(suite)] + args)
    assert result.exit_code == 2


def test_bound_beyond_explicit_list_is_a_config_error(runner, tmp_path):
    path = tmp_path / "pair.yml"
    path.write_text("""\
sequences:
  - name: pair
    profile: explicit
    specs:
      - {family: laplace, params: {b: 1.0}}
      - {family: logistic, params: {s: 1.0}}
n_values: [2]
grid_m: 4096
""")
    result = runner.invoke(cli, ['bound', str(path), '--n', '3'])
    assert result.exit_code == EXIT_ERROR, result.output
    assert "lists 2 summands, 3 requested" in result.output
    assert runner.invoke(cli, ['bound', str(path), '--n', '2']).exit_code == EXIT_OK


def test_check_identities(runner, suite):
    result = runner.invoke(cli, ['check-identities', str(suite), '--seed', '11'])
    assert result.exit_code == EXIT_OK, result.output
    assert "Identity checks" in result.output
    assert "FAIL" not in result.output


def test_check_identities_missing_file(runner, tmp_path):
    result = runner.invoke(cli, ['check-identities', str(tmp_path / "none.yml")])
    assert result.exit_code == EXIT_ERROR
    assert "cannot read" in result.output
