import math
from dataclasses import replace
from unittest.mock import patch

import pytest

from tvclt import dist
from tvclt.bounds import BoundReason, BoundReport
from tvclt.dist import DistributionSpec
from tvclt.errors import GridTooSmall, ParseError, ReportIOError, ValidationError
from tvclt.harness import core, report as report_io
from tvclt.harness.core import PerturbationConfig, RunReport, SchemaManager
from tvclt.sums import GridConfig

FAST_SUITE = """\
name: fast
sequences:
  - name: normal
    profile: iid
    base: {family: normal, params: {sigma: 1.0}}
  - name: logistic
    profile: cyclic
    base: {family: logistic, params: {s: 1.0}}
n_values: [2, 4]
epsilon_grid: [0.1, 0.5]
delta_grid: [0.5, 0.1]
grid_m: 4096
formats: [csv, json]
threads: 2
checks: {identities: false, loo: true, cor1: true, smoothing: true, intermediate: true}
"""


@pytest.fixture
def fast_config(tmp_path):
    path = tmp_path / "fast.yml"
    path.write_text(FAST_SUITE)
    return core.load_config(path)


@pytest.fixture(scope="module")
def fast_report(tmp_path_factory):
    path = tmp_path_factory.mktemp("suite") / "fast.yml"
    path.write_text(FAST_SUITE)
    return core.run(core.load_config(path))


def write_config(tmp_path, text, name="config.yml"):
    path = tmp_path / name
    path.write_text(text)
    return path


# --- Schema ---

def test_schema_lookup():
    schema = SchemaManager()
    assert schema.get_variable("grid_m")["default"] == 16384
    assert schema.get_variable("nope") is None


def test_schema_validation_messages():
    schema = SchemaManager()
    ok, value = schema.validate(schema.get_variable("n_values"), [2, 8, 4])
    assert not ok and "ascending" in value
    ok, value = schema.validate(schema.get_variable("formats"), ["csv", "pdf"])
    assert not ok and "one of" in value
    ok, value = schema.validate(schema.get_variable("threads"), 0)
    assert not ok and value == "Value must be >= 1"
    ok, value = schema.validate(schema.get_variable("formats"), "csv, svg")
    assert ok and value == ["csv", "svg"]
    ok, value = schema.validate(schema.get_variable("extent_sigmas"), 8)
    assert ok and value == 8.0


def test_missing_schema_file(tmp_path):
    with pytest.raises(ParseError, match="schema file not found"):
        SchemaManager(tmp_path / "missing.yml")


# --- Config loading ---

def test_minimal_config_takes_defaults(minimal_config):
    config = core.load_config(minimal_config)
    assert config.name == "tvclt"
    assert config.grid == GridConfig(m=16384, extent_sigmas=12.0)
    assert config.n_values == (2, 10)
    assert len(config.epsilon_grid) == 50
    assert config.epsilon_grid[0] == pytest.approx(1e-3)
    assert config.epsilon_grid[-1] == pytest.approx(1.0)
    assert config.delta_grid == (0.5, 0.1, 0.001, 0.0001)
    assert config.formats == ("csv", "json")
    assert config.threads == 1
    assert config.checks == core.Checks()
    assert config.perturbation is None
    rule = config.sequences[0]
    assert rule.profile == "iid"
    assert rule.build(3).specs == (DistributionSpec.laplace(1.0),) * 3


def test_grid_size_must_be_power_of_two(tmp_path, minimal_config):
    path = write_config(tmp_path, minimal_config.read_text() + "grid_m: 1000\n", "bad.yml")
    with pytest.raises(ValidationError) as exc:
        core.load_config(path)
    assert exc.value.field == "grid_m"


def test_unknown_key_reports_line(tmp_path, minimal_config):
    path = write_config(tmp_path, minimal_config.read_text() + "bogus: 1\n", "bad.yml")
    with pytest.raises(ParseError) as exc:
        core.load_config(path)
    assert exc.value.field == "bogus"
    assert exc.value.line == 6


def test_yaml_syntax_error(tmp_path):
    path = write_config(tmp_path, "name: broken\nn_values: [2, 4\nthreads: 1\n")
    with pytest.raises(ParseError) as exc:
        core.load_config(path)
    assert exc.value.line is not None


def test_unreadable_config(tmp_path):
    with pytest.raises(ParseError, match="cannot read"):
        core.load_config(tmp_path / "absent.yml")


@pytest.mark.parametrize("text,field", [
    ("sequences: []\n", "sequences"),
    ("sequences:\n  - {name: a, base: {family: laplace}}\n  - {name: a, base: {family: logistic}}\n",
     "sequences[1].name"),
    ("sequences:\n  - {name: a, profile: sorted, base: {family: laplace}}\n", "sequences[0].profile"),
    ("sequences:\n  - {name: a, base: {family: cauchy}}\n", "sequences[0].base"),
    ("sequences:\n  - {name: a, base: {family: laplace, color: red}}\n", "sequences[0].base.color"),
    ("sequences:\n  - name: a\n    profile: explicit\n    specs: [{family: laplace}]\n"
     "n_values: [2]\n", "sequences[0].specs"),
    ("sequences:\n  - {name: a, base: {family: laplace}}\nchecks: {loo: maybe}\n", "checks.loo"),
    ("sequences:\n  - {name: a, base: {family: laplace}}\ndelta_grid: [0.1, 0.5]\n", "delta_grid"),
])
def test_invalid_configs(tmp_path, text, field):
    path = write_config(tmp_path, text)
    with pytest.raises(ValidationError) as exc:
        core.load_config(path)
    assert exc.value.field == field


def test_cyclic_sigmas_and_explicit_lists(tmp_path):
    path = write_config(tmp_path, (
        "sequences:\n"
        "  - name: cyc\n"
        "    profile: cyclic\n"
        "    base: {family: laplace}\n"
        "    sigmas: [1.0, 0.5]\n"
        "  - name: mixed\n"
        "    profile: explicit\n"
        "    specs:\n"
        "      - {family: laplace}\n"
        "      - {family: logistic, scale: 2.0}\n"
        "n_values: [2]\n"
    ))
    config = core.load_config(path)
    cyc, mixed = config.sequences
    assert [s.std for s in cyc.build(3).specs] == pytest.approx([1.0, 0.5, 1.0])
    assert mixed.build(2).specs[1].scale == 2.0


def test_default_suite_round_trips_byte_for_byte(tmp_path):
    config = core.load_config(core.DEFAULT_SUITE)
    out = core.save_config(config, tmp_path / "copy.yml")
    assert out.read_bytes() == core.DEFAULT_SUITE.read_bytes()
    assert core.load_config(out) == config


def test_default_suite_contents():
    config = core.load_config(core.DEFAULT_SUITE)
    assert [r.name for r in config.sequences] == [
        "normal", "laplace", "logistic", "bimodal", "rademacher_smooth", "laplace_cyclic"]
    assert [r.profile for r in config.sequences].count("cyclic") == 1
    # the mixture is skewed, so it is not the smoothed Rademacher law in disguise
    bimodal = config.sequences[3].base
    assert dist.density(bimodal, 0.8) != pytest.approx(dist.density(bimodal, -0.8), rel=1e-3)
    assert config.n_values == (2, 4, 8, 16, 32, 64)
    assert config.perturbation == PerturbationConfig(DistributionSpec.smoothed_rademacher(0.0))


def test_with_overrides(fast_config, tmp_path):
    changed = fast_config.with_overrides(out_dir=tmp_path, formats=["svg"], threads=3, seed=7)
    assert changed.out_dir == tmp_path
    assert changed.formats == ("svg",)
    assert (changed.threads, changed.seed) == (3, 7)
    assert fast_config.with_overrides() is fast_config
    with pytest.raises(ValidationError):
        fast_config.with_overrides(threads=0)


# --- Run ---

def test_run_cases(fast_report):
    assert fast_report.ok
    assert [(c.sequence, c.n) for c in fast_report.cases] == [
        ("logistic", 2), ("logistic", 4), ("normal", 2), ("normal", 4)]
    for case in fast_report.cases:
        if case.sequence == "normal":
            assert case.tv_actual < 1e-8
        assert case.tv_actual <= case.tv_bound
        assert case.intermediate_bound is not None
    assert not fast_report.failures


def test_run_check_families(fast_report):
    assert {r['check'] for r in fast_report.identities} == {'loo_score', 'loo_fisher_chain'}
    assert all(r['holds'] for r in fast_report.identities)
    assert [(r['sequence'], r['n']) for r in fast_report.cor1] == [
        ("normal", 2), ("normal", 4), ("logistic", 2), ("logistic", 4)]
    assert all(r['holds'] for r in fast_report.cor1)
    for rows in fast_report.lindeberg.values():
        assert all(row['monotone'] for row in rows)
    assert [row["feller"] for row in fast_report.feller["normal"]] == pytest.approx([0.5, 0.25])
    assert fast_report.smoothing["normal"]["n"] == 2
    assert fast_report.smoothing["normal"]["stable"] is True
    assert math.isnan(fast_report.rates["normal"]["tv_bound_slope"])


def test_run_reports_progress(fast_config):
    seen = []
    quick = fast_config.with_overrides(threads=1)
    quick = replace(quick, checks=core.Checks(False, False, False, False, False))
    core.run(quick, on_case=lambda name, n: seen.append((name, n)))
    assert sorted(seen) == [("logistic", 2), ("logistic", 4), ("normal", 2), ("normal", 4)]


def test_case_errors_are_collected(fast_config):
    quick = replace(fast_config, checks=core.Checks(False, False, False, False, False))
    with patch("tvclt.harness.core.bounds.evaluate", side_effect=GridTooSmall("clipped")):
        result = core.run(quick)
    assert not result.ok
    assert len(result.failures) == 4
    assert result.failures[0].error == "GridTooSmall"
    assert result.cases == []


MIXED_SUITE = """\
name: mixed
sequences:
  - name: laplace
    profile: iid
    base: {family: laplace, params: {b: 1.0}}
  - name: spiky
    profile: iid
    base: {family: smoothed_rademacher, params: {delta: 0.0005}}
n_values: [2]
formats: [json]
checks: {identities: true, loo: true, cor1: false, smoothing: false, intermediate: false}
"""


def test_one_failing_sequence_does_not_abort_the_run(tmp_path):
    path = tmp_path / "mixed.yml"
    path.write_text(MIXED_SUITE)
    result = core.run(core.load_config(path))
    cases = {c.sequence: c for c in result.cases}
    assert sorted(cases) == ["laplace", "spiky"]
    assert cases["laplace"].reason is BoundReason.FINITE
    assert cases["laplace"].bound_holds
    assert cases["spiky"].reason is BoundReason.INFINITE_FISHER
    assert cases["spiky"].tv_bound == math.inf
    errors = [r for r in result.identities if "QuadratureDivergent" in r['detail']]
    assert errors and not any(r['holds'] for r in errors)
    assert any(r['check'] == 'entropy' and 'laplace' in r['subject'] for r in result.identities)
    assert not result.ok
    written = report_io.write_json(result, tmp_path / "mixed.json")
    assert report_io.load_report(written)['ok'] is False


def test_failing_check_family_is_recorded(fast_config):
    quick = replace(fast_config, checks=core.Checks(False, False, False, False, False))
    with patch("tvclt.harness.core.metrics.lindeberg_functional",
               side_effect=GridTooSmall("clipped")):
        result = core.run(quick)
    assert len(result.cases) == 4
    assert result.lindeberg == {}
    assert [(f.sequence, f.check, f.n) for f in result.failures] == [
        ("logistic", "lindeberg", None), ("normal", "lindeberg", None)]
    assert not result.ok


def test_failing_decomposition_becomes_a_failed_row(fast_config):
    quick = replace(fast_config, checks=core.Checks(False, False, True, False, False))
    with patch("tvclt.harness.core.bounds.cor1_decomposition", side_effect=ValueError("eps")):
        result = core.run(quick)
    assert len(result.cor1) == 4
    assert all(not row['holds'] and row['error'] == "ValueError: eps" for row in result.cor1)
    assert len(result.cases) == 4
    assert not result.ok


def test_bound_table_rejects_n_beyond_explicit_list(fast_config):
    pair = core.SequenceRule("pair", "explicit", specs=(DistributionSpec.laplace(1.0),) * 2)
    config = replace(fast_config, sequences=(pair,))
    assert [r.n for r, _ in core.bound_table(config, 2)] == [2]
    with pytest.raises(ValidationError, match="lists 2 summands, 3 requested"):
        core.bound_table(config, 3)


def test_violated_bound_fails_the_run():
    bad = BoundReport("seq", 4, (2.0,) * 4, 2.0, 0.25, 0.1, 0.05, 0.2, 0.1, BoundReason.FINITE)
    assert not bad.bound_holds
    report = RunReport(config={}, cases=[bad])
    assert report.failed_cases == [bad]
    assert not report.ok
    assert RunReport(config={}).ok


def test_check_identities_rows(fast_config):
    rows = core.check_identities(fast_config, include_loo=False)
    checks = {r['check'] for r in rows}
    assert {'ibp_score', 'entropy', 'kernel_identity', 'truncated_kernel',
            'chebyshev_association', 'stein_residual', 'stein_sup_f', 'stein_sup_fprime',
            'stein_sign_f0', 'increment_bound'} <= checks
    assert 'loo_score' not in checks
    assert all(r['holds'] for r in rows), [r for r in rows if not r['holds']]
    assert sum(r['check'] == 'stein_residual' for r in rows) == 20


def test_bound_table(fast_config):
    rows = core.bound_table(fast_config, 4)
    assert [r.sequence for r, _ in rows] == ["normal", "logistic"]
    report, (k_truncated, k_third) = rows[0]
    assert report.n == 4
    assert k_truncated <= k_third


def test_perturbation_demo():
    pc = PerturbationConfig(DistributionSpec.smoothed_rademacher(0.0), n_values=(4, 16),
                          t_values=(1.0,), epsilon_values=(0.1,))
    demo = core.perturbation_demo(pc, GridConfig())
    assert demo['holds']
    assert demo['j'] <= 2.0 + 1e-6
    assert demo['decay_ratio'] > 1.0
    assert all(row['gap'] < 1e-6 for row in demo['recovery'])
    assert demo['decay_floor'] == 1.0


def test_perturbation_demo_requires_decay_over_a_wide_range():
    pc = PerturbationConfig(DistributionSpec.smoothed_rademacher(0.0), n_values=(4, 64),
                            t_values=(1.0,), epsilon_values=(0.1,))
    demo = core.perturbation_demo(pc, GridConfig())
    assert demo['decay_floor'] == core.DECAY_MIN
    assert demo['decay_ratio'] >= core.DECAY_MIN
    assert demo['holds']
    flat = BoundReport("perturbation", 4, (2.0,), 2.0, 0.25, 0.1, 1.0, 0.01, 0.01,
                       BoundReason.FINITE)
    with patch("tvclt.harness.core.bounds.evaluate", return_value=flat):
        stalled = core.perturbation_demo(pc, GridConfig())
    assert stalled['decay_ratio'] == pytest.approx(1.0)
    assert not stalled['holds']


# --- Reports ---

def test_csv_header_and_rows(fast_report, tmp_path):
    path = report_io.write_csv(fast_report, tmp_path / "out.csv")
    lines = path.read_text().splitlines()
    assert lines[0] == "sequence,n,j_max,feller,m_n,tv_bound,tv_actual,k_actual,slack_ratio"
    assert len(lines) == 1 + len(fast_report.cases)
    assert lines[1].startswith("logistic,2,")


def test_empty_report_writes_header_only(tmp_path):
    path = report_io.write_csv(RunReport(config={}), tmp_path / "empty.csv")
    assert path.read_text() == ",".join(report_io.CSV_COLUMNS) + "\n"


def test_json_report(fast_report, tmp_path):
    path = report_io.write_json(fast_report, tmp_path / "out.json")
    data = report_io.load_report(path)
    assert data['ok'] is True
    assert data['config']['name'] == "fast"
    assert len(data['cases']) == 4
    assert data['cases'][0]['reason'] == "finite"
    assert 'elapsed' not in data


def test_outputs_are_deterministic(fast_config, tmp_path):
    quick = replace(fast_config, checks=core.Checks(False, False, True, False, False))
    first = report_io.emit(core.run(quick), ("csv", "json"), tmp_path / "a", "fast")
    second = report_io.emit(core.run(quick), ("csv", "json"), tmp_path / "b", "fast")
    assert [p.name for p in first] == ["fast.csv", "fast.json"]
    for a, b in zip(first, second):
        assert a.read_bytes() == b.read_bytes()


def test_svg_plots(fast_report, tmp_path):
    written = report_io.emit(fast_report, ("svg",), tmp_path, "fast")
    names = sorted(p.name for p in written)
    assert names == ["logistic_lindeberg.svg", "logistic_tv_decay.svg",
                     "normal_lindeberg.svg", "normal_tv_decay.svg"]
    assert "<svg" in (tmp_path / "normal_tv_decay.svg").read_text()


def test_emit_to_unwritable_location(fast_report, tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(ReportIOError):
        report_io.emit(fast_report, ("csv",), blocker, "fast")


def test_load_report_missing(tmp_path):
    with pytest.raises(ReportIOError):
        report_io.load_report(tmp_path / "missing.json")
