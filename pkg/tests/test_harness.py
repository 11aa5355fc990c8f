import csv
import json
import math

import pytest

from artifact import harness
from artifact.fock import CapacityError
from artifact.harness import (
    Check,
    ConfigError,
    ScenarioConfig,
    SuiteRecord,
    VerificationReport,
    emit_report,
    fit_order,
    load_report,
    max_check,
    merge_reports,
    min_check,
    order_check,
    run_suite,
    run_suites,
)

QUICK = ["matrix-elements", "powers"]


def quick_cfg(**kw):
    return ScenarioConfig(n_bins=[2, 4, 8], max_level=6, suites=QUICK, **kw)


def strip_timing(doc):
    doc = json.loads(json.dumps(doc))
    doc.pop("created")
    for s in doc["suites"]:
        s.pop("wall_time")
    return doc


def test_defaults():
    cfg = ScenarioConfig()
    assert cfg.n_bins == [2, 4, 8]
    assert cfg.level == cfg.max_level - cfg.buffer
    assert set(cfg.suites) == set(harness.SUITES)
    assert cfg.tol("exact") == 1e-12


def test_config_round_trip():
    cfg = ScenarioConfig(n_bins=[8, 2, 4], max_level=5, seed=3, tolerances={"exact": 1e-11})
    again = ScenarioConfig.from_dict(cfg.to_dict())
    assert again.to_dict() == cfg.to_dict()
    assert again.n_bins == [2, 4, 8]
    assert again.tol("exact") == 1e-11


@pytest.mark.parametrize("doc", [
    {"grid": {"n_bins": [2], "extra": 1}},
    {"colour": "blue"},
    {"grid": {"n_bins": "four"}},
    {"truncation": {"J": -1}},
    {"scenario": {"name": "nonexistent"}},
    {"suites": ["bogus"]},
    {"tolerances": {"wobble": 1.0}},
    {"truncation": {"J": 2, "buffer": 3}},
])
def test_config_rejects(doc):
    with pytest.raises(ConfigError):
        ScenarioConfig.from_dict(doc)


def test_config_from_file(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"grid": {"n_bins": [2, 4]}, "scenario": {"seed": 9}}))
    cfg = ScenarioConfig.from_file(p)
    assert cfg.seed == 9 and cfg.n_bins == [2, 4]
    p.write_text("{not json")
    with pytest.raises(ConfigError):
        ScenarioConfig.from_file(p)


def test_fit_order():
    assert fit_order([2, 4, 8], [1.0, 0.5, 0.25]) == pytest.approx(1.0)
    assert fit_order([2, 4, 8], [1.0, 0.25, 0.0625]) == pytest.approx(2.0)
    assert math.isnan(fit_order([2], [1.0]))
    assert math.isnan(fit_order([2, 4], [1.0, 0.0]))


def test_order_check_rules():
    cfg = ScenarioConfig()
    assert order_check("a", cfg, [2, 4, 8], [1.0, 0.5, 0.25]).status == "pass"
    assert order_check("a", cfg, [2, 4, 8], [1.0, 0.9, 0.8]).status == "fail"
    assert order_check("a", cfg, [2, 4], [1.0, 0.5]).status == "inconclusive"
    exact = order_check("a", cfg, [2, 4, 8], [1e-15, 3e-16, 4e-16])
    assert exact.status == "pass" and exact.convergence["exact"]


def test_max_min_checks():
    assert max_check("x", 1e-13, 1e-12).passed
    assert not max_check("x", float("nan"), 1e-12).passed
    assert min_check("r", float("inf"), 0.1).passed
    assert min_check("r", float("inf"), 0.1).to_dict()["value"] == "inf"
    assert not min_check("r", 0.01, 0.1).passed


def test_suite_status_controls():
    ok = Check("a", "pass", "max", 1.0, 0.0)
    bad = Check("b", "fail", "max", 1.0, 2.0)
    assert harness._suite_status([ok]) == "pass"
    assert harness._suite_status([ok, bad]) == "fail"
    assert harness._suite_status([ok, Check("c", "fail", "max", 1.0, 2.0, control=True)]) == "pass"
    assert harness._suite_status([ok, Check("c", "pass", "max", 1.0, 0.0, control=True)]) == "fail"


def test_run_quick_suites():
    report = run_suites(quick_cfg())
    assert [s.suite for s in report.suites] == QUICK
    assert report.status == "pass"
    assert report.exit_code == 0
    assert report.suite("powers").checks


def test_empty_suite_list():
    report = run_suites(ScenarioConfig(suites=[]))
    assert report.suites == [] and report.status == "pass"


def test_error_status(monkeypatch):
    def broken(cfg):
        raise CapacityError("too big")
    monkeypatch.setitem(harness.SUITES, "powers", broken)
    rec = run_suite("powers", quick_cfg())
    assert rec.status == "error" and "too big" in rec.error
    report = VerificationReport({}, [rec])
    assert report.exit_code == 2
    with pytest.raises(ConfigError):
        run_suite("bogus", quick_cfg())


def test_deterministic_given_seed():
    a = run_suites(quick_cfg(seed=5)).to_dict()
    b = run_suites(quick_cfg(seed=5)).to_dict()
    assert strip_timing(a) == strip_timing(b)
    assert a["seed"] == 5


def test_emit_and_load(tmp_path):
    report = run_suites(quick_cfg(seed=2))
    paths = emit_report(report, tmp_path, "both")
    assert {p.name for p in paths} == {"report.json", "report.csv"}
    loaded = load_report(tmp_path / "report.json")
    assert loaded.to_dict() == json.loads((tmp_path / "report.json").read_text())
    assert loaded.config["scenario"]["seed"] == 2
    assert loaded.config["grid"]["n_bins"] == [2, 4, 8]
    with open(tmp_path / "report.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == harness.CSV_HEADER
    n_series = sum(len(c.series) for s in report.suites for c in s.checks)
    assert len(rows) - 1 == n_series > 0
    with pytest.raises(ValueError):
        emit_report(report, tmp_path, "xml")


def test_merge():
    a = VerificationReport({"suites": ["x"]}, [SuiteRecord("x", "fail"), SuiteRecord("y", "pass")])
    b = VerificationReport({"suites": ["x"]}, [SuiteRecord("x", "pass")])
    m = merge_reports([a, b])
    assert [s.suite for s in m.suites] == ["y", "x"]
    assert m.status == "pass"
    assert m.config["suites"] == ["y", "x"]
    with pytest.raises(ValueError):
        merge_reports([])
