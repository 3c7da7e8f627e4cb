import json

import pytest
from hypothesis import given, settings, strategies as st

from portajob.exceptions import UnknownExecutorError
from portajob.harness import (
    SUITE,
    BenchmarkRecord,
    ConformanceReport,
    TestRecord,
    bench_launcher,
    bench_local,
    read_report,
    records_to_csv,
    run_conformance,
    strip_report,
    whitelist_violations,
    write_report,
)
from portajob.harness.bench import iqr, iqr_overlap, launcher_deltas, r_squared
from portajob.harness.report import minimal_whitelist
from portajob.mock import Spool


def test_mock_conformance_passes(work):
    report = run_conformance("mock", site="lab", work_directory=work)
    assert [t.name for t in report.tests] == list(SUITE)
    assert all(t.passed and t.applicable for t in report.tests), \
        [(t.name, t.output) for t in report.tests if not t.passed]
    assert report.all_passed and report.version == "0.1.0" and report.site == "lab"


def test_local_conformance_marks_inapplicable_tests(work):
    report = run_conformance("local", work_directory=work)
    na = {t.name for t in report.tests if not t.applicable}
    assert na == {"cancel-queued", "bulk-invariant"}
    assert report.all_passed, [(t.name, t.output) for t in report.tests if not t.passed]


def test_failing_scheduler_is_recorded_not_raised(work):
    Spool(work / "mock-spool").write_config(fail_submit=True)
    report = run_conformance("mock", work_directory=work)
    assert len(report.tests) == len(SUITE)
    rec = report.record("submit-complete")
    assert not rec.passed and "fail_submit" in rec.output
    assert not report.all_passed


def test_unknown_executor():
    with pytest.raises(UnknownExecutorError):
        run_conformance("nope")


def failure_report():
    return ConformanceReport(
        site="alice-cluster", executor="slurm", version="0.1.0", timestamp=1700000000.5,
        tests=[
            TestRecord("submit-complete", False, 1.25, output="permission denied /home/alice",
                       environment={"hostname": "login1.example.org", "user": "alice"}),
            TestRecord("cancel-queued", True, 0.5, applicable=False),
        ])


def test_strip_removes_free_text():
    data = strip_report(failure_report()).to_dict()
    text = json.dumps(data)
    for leak in ("alice", "/home", "permission denied", "login1"):
        assert leak not in text
    assert whitelist_violations(data, minimal_whitelist(version="0.1.0")) == []
    assert data["tests"][0] == {"name": "submit-complete", "passed": False, "applicable": True,
                                "duration_s": 1.25}


def test_strip_drops_unknown_identifiers():
    r = ConformanceReport(site="x", executor="secret-sched", version="v1-custom-build",
                          tests=[TestRecord("my-private-test", True)])
    s = strip_report(r)
    assert (s.executor, s.version, s.tests[0].name) == (None, None, None)


def test_numeric_report_is_unchanged_by_strip():
    r = ConformanceReport(site=None, executor="mock", version="0.1.0", timestamp=5.0, minimal=True,
                          tests=[TestRecord("submit-fail", True, 0.25)])
    assert strip_report(r).to_dict() == r.to_dict()


def test_whitelist_reports_paths():
    data = {"tests": [{"name": "submit-complete", "output": "boom"}]}
    assert whitelist_violations(data, ["submit-complete"]) == ["$.tests[0].output: 'boom'"]


texts = st.text(max_size=40)
records = st.builds(TestRecord, name=st.one_of(st.sampled_from(SUITE), texts), passed=st.booleans(),
                    duration_s=st.floats(0, 1e6, allow_nan=False), output=texts,
                    environment=st.dictionaries(texts, texts, max_size=3), applicable=st.booleans())
reports = st.builds(ConformanceReport, site=st.one_of(st.none(), texts),
                    executor=st.one_of(st.sampled_from(["mock", "slurm", "local"]), texts),
                    version=st.one_of(st.none(), st.sampled_from(["0.1.0", "2.3"]), texts),
                    timestamp=st.floats(0, 2e9, allow_nan=False), tests=st.lists(records, max_size=5))


@settings(max_examples=200, deadline=None)
@given(reports)
def test_strip_is_idempotent_and_whitelisted(report):
    once = strip_report(report)
    assert strip_report(once).to_dict() == once.to_dict()
    data = json.loads(once.to_json())
    assert whitelist_violations(data, minimal_whitelist(version=once.version)) == []


@settings(max_examples=100, deadline=None)
@given(reports)
def test_full_report_json_round_trip(report):
    assert ConformanceReport.from_json(report.to_json()).to_dict() == report.to_dict()


def test_write_report(tmp_path):
    paths = write_report(failure_report(), tmp_path, minimal=True)
    assert [p.name for p in paths] == ["conformance-slurm-20231114T221320.json",
                                       "conformance-slurm-20231114T221320.minimal.json"]
    assert read_report(paths[0]).to_dict() == failure_report().to_dict()
    assert read_report(paths[1]).minimal and "alice" not in paths[1].read_text()
    assert len(write_report(failure_report(), tmp_path / "full")) == 1


def test_bench_zero_jobs():
    rec = bench_local(0)
    assert rec.n_jobs == 0 and rec.per_job_s == 0.0


def test_bench_records_and_csv(work):
    recs = [bench_local(3, "direct-spawn-baseline"), bench_local(3, "library", work_directory=work)]
    recs += [bench_launcher(3, mode, work_directory=work) for mode in ("default", "minimal-wrapper", "none")]
    csv = records_to_csv(recs).splitlines()
    assert csv[0] == "scenario,n_jobs,mode,total_s,per_job_s"
    assert [line.split(",")[:3] for line in csv[1:3]] == [["local", "3", "direct-spawn-baseline"],
                                                          ["local", "3", "library"]]
    for r in recs:
        assert r.total_s > 0 and r.per_job_s == pytest.approx(r.total_s / 3)
    assert launcher_deltas(recs[2:])[("default", "none")] == pytest.approx(recs[2].per_job_s - recs[4].per_job_s)


def test_stat_helpers():
    assert r_squared([1, 2, 3], [2, 4, 6]) == pytest.approx(1.0)
    assert iqr([1, 2, 3, 4, 5]) == (2.0, 4.0)
    assert iqr_overlap([1, 2, 3], [2, 3, 4])
    assert not iqr_overlap([1, 2, 3], [2.5, 3, 4])
    assert not iqr_overlap([1, 1.1, 1.2], [5, 5.1, 5.2])


def test_record_row():
    r = BenchmarkRecord("local", 2, "library", 0.5, 0.25, [0.2, 0.3])
    assert r.row() == ("local", 2, "library", "0.500000", "0.250000")
