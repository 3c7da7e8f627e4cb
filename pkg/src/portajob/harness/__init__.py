"""Conformance suite, report files and overhead benchmarks."""

from portajob.harness.bench import (
    BenchmarkRecord,
    bench_launcher,
    bench_local,
    bench_qstat_latency,
    records_to_csv,
)
from portajob.harness.conformance import SUITE, run_conformance
from portajob.harness.report import (
    ConformanceReport,
    TestRecord,
    read_report,
    strip_report,
    whitelist_violations,
    write_report,
)

__all__ = [
    "BenchmarkRecord", "ConformanceReport", "SUITE", "TestRecord", "bench_launcher", "bench_local",
    "bench_qstat_latency", "read_report", "records_to_csv", "run_conformance", "strip_report",
    "whitelist_violations", "write_report",
]
