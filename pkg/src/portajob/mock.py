"""A simulated batch scheduler.

The mock keeps its whole state in a spool directory guarded by one lock file,
so it needs no daemon: every command first advances the simulated scheduler
("tick") and then does its work.  It honors the same command contract as any
dialect helper::

    submit SCRIPT        prints the new native id
    status ID...         one line per id: "<id> <code> [message]"
    cancel ID            exit 0 on success

State codes are Q (queued), R (running), CD (completed, exit 0), F (failed),
CA (canceled) and U (unknown id).  Scheduler knobs live in ``mock.toml`` in
the spool; command invocation counts are kept in ``counters``.
"""

from __future__ import annotations

import argparse
import fcntl
import json
import os
import random
import shlex
import signal
import subprocess
import sys
import threading
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

SPOOL_ENV = "PORTAJOB_MOCK_SPOOL"
FINAL_CODES = ("CD", "F", "CA")
DIRECTIVE = "#MOCK"

# runs the job script and publishes its exit code atomically
_WRAPPER = '/bin/sh "$1"; rc=$?; printf "%d\\n" "$rc" > "$2.tmp" && mv "$2.tmp" "$2"'

_children: Dict[int, subprocess.Popen] = {}


class MockError(Exception):
    pass


class _SpoolLock:
    """Exclusive advisory lock on the spool's lock file; re-entrant per thread."""

    def __init__(self, path: Path):
        self.path = path
        self._local = threading.local()

    def __enter__(self):
        depth = getattr(self._local, "depth", 0)
        if depth == 0:
            fd = os.open(self.path, os.O_RDWR | os.O_CREAT, 0o644)
            fcntl.flock(fd, fcntl.LOCK_EX)
            self._local.fd = fd
        self._local.depth = depth + 1
        return self

    def __exit__(self, *exc):
        self._local.depth -= 1
        if self._local.depth == 0:
            os.close(self._local.fd)  # closing releases the lock


@dataclass
class MockConfig:
    schedule_delay: object = 0.0  # seconds, or [low, high] for a uniform draw
    status_latency: float = 0.0
    reject_queues: List[str] = field(default_factory=list)
    drop_after_done: bool = False
    fail_submit: bool = False

    def draw_delay(self) -> float:
        d = self.schedule_delay
        if isinstance(d, (list, tuple)):
            return random.uniform(float(d[0]), float(d[1]))
        return float(d)

    def to_toml(self) -> str:
        lines = []
        for key, value in asdict(self).items():
            if isinstance(value, tuple):
                value = list(value)
            lines.append(f"{key} = {json.dumps(value)}")
        return "\n".join(lines) + "\n"


def parse_directives(script_text: str) -> Dict[str, str]:
    """Options from ``#MOCK`` directive lines: ``-q X`` style and ``--key=value`` style."""
    opts: Dict[str, str] = {}
    for line in script_text.splitlines():
        if not line.startswith(DIRECTIVE + " "):
            continue
        tokens = shlex.split(line[len(DIRECTIVE):])
        i = 0
        while i < len(tokens):
            tok = tokens[i]
            if tok.startswith("--"):
                key, _, value = tok[2:].partition("=")
                opts[key] = value
            elif tok.startswith("-") and i + 1 < len(tokens):
                opts[tok[1:]] = tokens[i + 1]
                i += 1
            i += 1
    return opts


def _pid_alive(pid: int) -> bool:
    child = _children.get(pid)
    if child is not None:
        return child.poll() is None
    try:
        with open(f"/proc/{pid}/stat") as f:
            return f.read().rpartition(")")[2].split()[0] != "Z"
    except FileNotFoundError:
        return False
    except OSError:
        pass
    try:
        os.kill(pid, 0)
    except ProcessLookupError:
        return False
    except PermissionError:
        pass
    return True


class Spool:
    """The mock scheduler's persistent state and its operations."""

    def __init__(self, path, clock: Callable[[], float] = time.time):
        self.path = Path(path)
        self.path.mkdir(parents=True, exist_ok=True)
        self.clock = clock
        self._lock = _SpoolLock(self.path / "spool.lock")

    # -- files -----------------------------------------------------------

    @property
    def config_path(self) -> Path:
        return self.path / "mock.toml"

    def config(self) -> MockConfig:
        try:
            data = tomllib.loads(self.config_path.read_text())
        except FileNotFoundError:
            return MockConfig()
        return MockConfig(**data)

    def write_config(self, config: Optional[MockConfig] = None, **changes) -> MockConfig:
        with self._lock:
            config = config or self.config()
            for key, value in changes.items():
                if not hasattr(config, key):
                    raise MockError(f"unknown mock setting {key!r}")
                setattr(config, key, value)
            _atomic_write(self.config_path, config.to_toml())
        return config

    def _load(self) -> dict:
        try:
            return json.loads((self.path / "jobs.json").read_text())
        except FileNotFoundError:
            return {"next_id": 1, "jobs": {}}

    def _save(self, db: dict) -> None:
        _atomic_write(self.path / "jobs.json", json.dumps(db, indent=1, sort_keys=True))

    def counters(self) -> Dict[str, int]:
        out = {"submit": 0, "status": 0, "cancel": 0}
        try:
            text = (self.path / "counters").read_text()
        except FileNotFoundError:
            return out
        for line in text.splitlines():
            key, _, value = line.partition("=")
            if value.strip().isdigit():
                out[key.strip()] = int(value)
        return out

    def _bump(self, name: str) -> None:
        counts = self.counters()
        counts[name] = counts.get(name, 0) + 1
        _atomic_write(self.path / "counters", "".join(f"{k}={v}\n" for k, v in sorted(counts.items())))

    def job(self, native_id: str) -> Optional[dict]:
        with self._lock:
            return self._load()["jobs"].get(native_id)

    # -- scheduler -------------------------------------------------------

    def tick(self, now: Optional[float] = None) -> None:
        with self._lock:
            db = self._load()
            if self._tick(db, self.clock() if now is None else now):
                self._save(db)

    def _tick(self, db: dict, now: float) -> bool:
        changed = False
        for child in list(_children.values()):
            if child.poll() is not None:
                _children.pop(child.pid, None)
        for rec in sorted(db["jobs"].values(), key=lambda r: int(r["native_id"])):
            if rec["state"] == "Q" and now >= rec["start_time"]:
                self._start(rec, now)
                changed = True
            elif rec["state"] == "R":
                code = self._exit_code(rec)
                if code is None and not _pid_alive(rec["pid"]):
                    code = self._exit_code(rec)
                    if code is None:
                        rec.update(state="F", end_time=now, message="lost")
                        changed = True
                        continue
                if code is not None:
                    rec.update(state="CD" if code == 0 else "F", end_time=now, exit_code=code)
                    changed = True
        return changed

    def _exit_code(self, rec: dict) -> Optional[int]:
        try:
            return int((self.path / f"{rec['native_id']}.exit").read_text())
        except (FileNotFoundError, ValueError):
            return None

    def _start(self, rec: dict, now: float) -> None:
        nid = rec["native_id"]
        env = dict(os.environ, PORTAJOB_MOCK_JOBID=nid)
        try:
            with open(rec["stdout"], "ab") as out, open(rec["stderr"], "ab") as err:
                proc = subprocess.Popen(
                    ["/bin/sh", "-c", _WRAPPER, "mockjob", rec["script"], str(self.path / f"{nid}.exit")],
                    cwd=rec["cwd"], env=env, stdin=subprocess.DEVNULL, stdout=out, stderr=err,
                    start_new_session=True, close_fds=True,
                )
        except OSError as e:
            rec.update(state="F", start_time=now, end_time=now, message=f"cannot start: {e}")
            return
        _children[proc.pid] = proc
        rec.update(state="R", start_time=now, pid=proc.pid)

    # -- commands --------------------------------------------------------

    def submit(self, script, cwd: Optional[str] = None) -> str:
        script = Path(script).resolve()
        try:
            text = script.read_text()
        except OSError as e:
            raise MockError(f"cannot read script: {e}") from None
        opts = parse_directives(text)
        with self._lock:
            db = self._load()
            now = self.clock()
            self._tick(db, now)
            self._bump("submit")
            config = self.config()
            if config.fail_submit:
                self._save(db)
                raise MockError("submission disabled (fail_submit is set)")
            queue = opts.get("q")
            if queue is not None and queue in config.reject_queues:
                self._save(db)
                raise MockError(f"queue {queue!r} rejects submissions")
            delay = float(opts["delay"]) if "delay" in opts else config.draw_delay()
            nid = str(db["next_id"])
            db["next_id"] += 1
            db["jobs"][nid] = {
                "native_id": nid,
                "script": str(script),
                "cwd": cwd or os.getcwd(),
                "queue": queue,
                "stdout": opts.get("o") or str(self.path / f"{nid}.out"),
                "stderr": opts.get("e") or str(self.path / f"{nid}.err"),
                "state": "Q",
                "submit_time": now,
                "start_time": now + delay,
                "end_time": None,
                "exit_code": None,
                "message": None,
                "pid": None,
            }
            self._save(db)
        return nid

    def status(self, ids: List[str]) -> List[str]:
        if not ids:
            raise MockError("status requires at least one job id")
        latency = self.config().status_latency
        if latency > 0:
            time.sleep(latency)
        with self._lock:
            db = self._load()
            self._tick(db, self.clock())
            self._bump("status")
            self._save(db)
            drop = self.config().drop_after_done
        lines = []
        for nid in ids:
            rec = db["jobs"].get(nid)
            if rec is None:
                lines.append(f"{nid} U unknown")
                continue
            if drop and rec["state"] in FINAL_CODES:
                continue
            line = f"{nid} {rec['state']}"
            if rec["exit_code"] is not None:
                line += f" exit={rec['exit_code']}"
            elif rec["message"]:
                line += f" {rec['message']}"
            lines.append(line)
        return lines

    def cancel(self, native_id: str) -> None:
        with self._lock:
            db = self._load()
            now = self.clock()
            self._tick(db, now)
            self._bump("cancel")
            rec = db["jobs"].get(native_id)
            if rec is None:
                self._save(db)
                raise MockError(f"unknown job id {native_id}")
            if rec["state"] in FINAL_CODES:
                self._save(db)
                raise MockError(f"job {native_id} already completed")
            if rec["state"] == "R":
                try:
                    os.killpg(rec["pid"], signal.SIGTERM)
                except (ProcessLookupError, PermissionError):
                    pass
            rec.update(state="CA", end_time=now, message="canceled")
            self._save(db)

    def run(self, interval: float = 0.05, stop: Optional[Callable[[], bool]] = None) -> None:
        """Background runner: tick until ``stop()`` is true (forever by default)."""
        while not (stop and stop()):
            self.tick()
            time.sleep(interval)


def _atomic_write(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + f".{os.getpid()}.tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def default_spool() -> Path:
    env = os.environ.get(SPOOL_ENV)
    if env:
        return Path(env)
    from portajob.executor import default_work_directory
    return default_work_directory() / "mock-spool"


def command_prefix(spool) -> List[str]:
    """Argument vector that runs this module's command-line interface against ``spool``."""
    return [sys.executable, "-m", "portajob.mock", "--spool", str(spool)]


_ALIASES = {"msub": "submit", "mstat": "status", "mdel": "cancel"}


def main(argv: Optional[List[str]] = None) -> int:
    parser = argparse.ArgumentParser(prog="portajob-mock", description="Simulated batch scheduler.")
    parser.add_argument("--spool", help=f"spool directory (default: ${SPOOL_ENV})")
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("submit", aliases=["msub"], help="queue a job script")
    p.add_argument("script")
    p = sub.add_parser("status", aliases=["mstat"], help="print job states")
    p.add_argument("ids", nargs="+")
    p = sub.add_parser("cancel", aliases=["mdel"], help="cancel a job")
    p.add_argument("id")
    sub.add_parser("counters", help="print command invocation counters")
    p = sub.add_parser("config", help="show or change mock.toml settings (key=json-value)")
    p.add_argument("settings", nargs="*")
    p = sub.add_parser("run", help="tick in the foreground")
    p.add_argument("--interval", type=float, default=0.05)
    args = parser.parse_args(argv)

    spool = Spool(args.spool or default_spool())
    command = _ALIASES.get(args.command, args.command)
    try:
        if command == "submit":
            print(spool.submit(args.script))
        elif command == "status":
            for line in spool.status(args.ids):
                print(line)
        elif command == "cancel":
            spool.cancel(args.id)
        elif command == "counters":
            for key, value in sorted(spool.counters().items()):
                print(f"{key}={value}")
        elif command == "config":
            changes = {}
            for item in args.settings:
                key, sep, value = item.partition("=")
                if not sep:
                    parser.error(f"expected key=value, got {item!r}")
                changes[key] = json.loads(value)
            config = spool.write_config(**changes) if changes else spool.config()
            sys.stdout.write(config.to_toml())
        elif command == "run":
            spool.run(args.interval)
    except MockError as e:
        print(f"portajob-mock: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
