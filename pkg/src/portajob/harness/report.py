"""Conformance reports and their stripped "minimal" form."""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional

from packaging.version import InvalidVersion, Version

REPORT_KEYS = ("site", "executor", "version", "timestamp", "tests", "minimal")
RECORD_KEYS = ("name", "passed", "applicable", "duration_s", "output", "environment")
MINIMAL_RECORD_KEYS = ("name", "passed", "applicable", "duration_s")


@dataclass
class TestRecord:
    name: str
    passed: bool
    duration_s: float = 0.0
    output: str = ""
    environment: Dict[str, str] = field(default_factory=dict)
    # False for tests that cannot be observed on this executor
    applicable: bool = True

    __test__ = False  # keep pytest from collecting this class

    def to_dict(self, minimal: bool = False) -> dict:
        keys = MINIMAL_RECORD_KEYS if minimal else RECORD_KEYS
        return {k: getattr(self, k) for k in keys}

    @classmethod
    def from_dict(cls, d: dict) -> "TestRecord":
        return cls(name=d["name"], passed=d["passed"], duration_s=d.get("duration_s", 0.0),
                   output=d.get("output", ""), environment=dict(d.get("environment", {})),
                   applicable=d.get("applicable", True))


@dataclass
class ConformanceReport:
    site: Optional[str]
    executor: Optional[str]
    version: Optional[str]
    timestamp: float = field(default_factory=time.time)
    tests: List[TestRecord] = field(default_factory=list)
    minimal: bool = False

    @property
    def all_passed(self) -> bool:
        return all(t.passed for t in self.tests if t.applicable)

    def record(self, name: str) -> TestRecord:
        for t in self.tests:
            if t.name == name:
                return t
        raise KeyError(name)

    def to_dict(self) -> dict:
        return {
            "site": self.site,
            "executor": self.executor,
            "version": self.version,
            "timestamp": self.timestamp,
            "tests": [t.to_dict(self.minimal) for t in self.tests],
            "minimal": self.minimal,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=False) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "ConformanceReport":
        return cls(site=d["site"], executor=d["executor"], version=d["version"],
                   timestamp=d["timestamp"], tests=[TestRecord.from_dict(t) for t in d["tests"]],
                   minimal=d["minimal"])

    @classmethod
    def from_json(cls, text: str) -> "ConformanceReport":
        return cls.from_dict(json.loads(text))


def _known_executors() -> List[str]:
    from portajob.executor import default_registry
    return default_registry().names()


def _known_tests() -> List[str]:
    from portajob.harness.conformance import SUITE
    return list(SUITE)


def _clean_version(v: Optional[str]) -> Optional[str]:
    if v is None:
        return None
    try:
        return str(Version(v))
    except InvalidVersion:
        return None


def strip_report(report: ConformanceReport, known_executors: Optional[Iterable[str]] = None,
                 known_tests: Optional[Iterable[str]] = None) -> ConformanceReport:
    """Reduce ``report`` to numbers, booleans and enumerated identifiers.

    The site label, captured output and environment descriptions are dropped.
    An executor or test name survives only if it is in the known set; a
    version only if it parses as a version number.
    """
    executors = set(_known_executors() if known_executors is None else known_executors)
    tests = set(_known_tests() if known_tests is None else known_tests)
    return ConformanceReport(
        site=None,
        executor=report.executor if report.executor in executors else None,
        version=_clean_version(report.version),
        timestamp=float(report.timestamp),
        tests=[TestRecord(name=t.name if t.name in tests else None, passed=bool(t.passed),
                          duration_s=float(t.duration_s), applicable=bool(t.applicable))
               for t in report.tests],
        minimal=True,
    )


def whitelist_violations(data, allowed: Iterable[str]) -> List[str]:
    """Every string in the JSON-like ``data`` (keys excepted) not in ``allowed``.

    Returned entries are ``path: value`` so a failure points at the leak.
    """
    allowed = set(allowed)
    found: List[str] = []

    def walk(node, path):
        if isinstance(node, dict):
            for k, v in node.items():
                walk(v, f"{path}.{k}")
        elif isinstance(node, list):
            for i, v in enumerate(node):
                walk(v, f"{path}[{i}]")
        elif isinstance(node, str):
            if node not in allowed:
                found.append(f"{path}: {node!r}")
        elif node is not None and not isinstance(node, (bool, int, float)):
            found.append(f"{path}: unexpected {type(node).__name__}")

    walk(data, "$")
    return found


def minimal_whitelist(known_executors: Optional[Iterable[str]] = None,
                      known_tests: Optional[Iterable[str]] = None,
                      version: Optional[str] = None) -> List[str]:
    """String values a stripped report may contain."""
    allowed = list(_known_executors() if known_executors is None else known_executors)
    allowed += list(_known_tests() if known_tests is None else known_tests)
    if version is not None and _clean_version(version) is not None:
        allowed.append(_clean_version(version))
    return allowed


def write_report(report: ConformanceReport, out_dir, minimal: bool = False) -> List[Path]:
    """Write the full report, plus a stripped copy for upload when ``minimal``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    stamp = time.strftime("%Y%m%dT%H%M%S", time.gmtime(report.timestamp))
    base = f"conformance-{report.executor or 'unknown'}-{stamp}"
    full = out_dir / f"{base}.json"
    full.write_text(report.to_json())
    paths = [full]
    if minimal:
        small = out_dir / f"{base}.minimal.json"
        small.write_text(strip_report(report).to_json())
        paths.append(small)
    return paths


def read_report(path) -> ConformanceReport:
    return ConformanceReport.from_json(Path(path).read_text())
