import logging
import subprocess
import threading
import time

import pytest

from helpers import sh
from portajob.batch import BatchExecutor
from portajob.batch.dialects import Command, CommandDialect, SlurmDialect
from portajob.exceptions import (
    CancelError,
    SchedulerCommandError,
    SubmitError,
    TerminalStateError,
)
from portajob.executor import ExecutorConfig
from portajob.job import Job, JobState
from portajob.local import LocalExecutor
from portajob.mock import command_prefix
from portajob.spec import JobAttributes, JobSpec

S = JobState


class FakeScheduler:
    """Scripted stand-in for a helper honoring the command contract."""

    def __init__(self):
        self.table = {}
        self.next_id = 1
        self.calls = []
        self.status_error = None
        self.cancel_error = None

    def __call__(self, command):
        argv = command.argv
        verb = argv[1]
        self.calls.append(verb)
        if verb == "submit":
            nid = str(self.next_id)
            self.next_id += 1
            self.table[nid] = "Q"
            return nid + "\n"
        if verb == "status":
            if self.status_error:
                raise SchedulerCommandError(self.status_error, argv, 1, "", self.status_error)
            return "".join(f"{i} {self.table[i]}\n" for i in argv[2:] if i in self.table)
        if verb == "cancel":
            if self.cancel_error:
                raise SchedulerCommandError(f"fake exited with 1: {self.cancel_error}", argv, 1, "",
                                            self.cancel_error)
            self.table[argv[2]] = "CA canceled"
            return ""
        raise AssertionError(argv)

    def count(self, verb):
        return self.calls.count(verb)


@pytest.fixture
def fake(work, monkeypatch):
    sched = FakeScheduler()
    ex = BatchExecutor(CommandDialect("fake", ["fake"]),
                       ExecutorConfig(work_directory=work, poll_interval=3600))
    monkeypatch.setattr(ex, "run_command", sched)
    ex.sched = sched
    yield ex
    ex.close()


def submit(ex, spec=None):
    job = Job(spec or sh("true"))
    ex.submit(job)
    return job


def test_submit_sets_native_id_and_queued(fake):
    job = submit(fake)
    assert job.native_id == "1" and job.status.state is S.QUEUED
    assert (fake.work_directory / f"{job.id}.job").exists()
    assert (fake.work_directory / f"{job.id}.launcher").exists()


def test_no_active_jobs_no_command(fake):
    assert fake.poll_cycle() == []
    assert fake.sched.count("status") == 0


def test_one_command_one_delta(fake):
    jobs = [submit(fake) for _ in range(3)]
    fake.sched.table["2"] = "R"
    deltas = fake.poll_cycle()
    assert fake.sched.count("status") == 1
    assert [(j.native_id, s.state) for j, s in deltas] == [("2", S.ACTIVE)]
    assert [j.status.state for j in jobs] == [S.QUEUED, S.ACTIVE, S.QUEUED]


def test_skipped_states_are_synthesized(fake):
    job = submit(fake)
    fake.sched.table["1"] = "CD exit=0"
    assert [s.state for _, s in fake.poll_cycle()] == [S.ACTIVE, S.COMPLETED]
    assert job.status.exit_code == 0


def test_sidecar_is_authoritative(fake):
    job = submit(fake)
    (fake.work_directory / f"{job.id}.ec").write_text("4\n")
    fake.sched.table["1"] = "CD exit=0"
    fake.poll_cycle()
    assert (job.status.state, job.status.exit_code) == (S.FAILED, 4)


def test_row_exit_code_is_the_fallback(fake):
    job = submit(fake)
    fake.sched.table["1"] = "F exit=9"
    fake.poll_cycle()
    assert (job.status.state, job.status.exit_code) == (S.FAILED, 9)


def test_scheduler_failure_without_exit_code(fake):
    job = submit(fake)
    fake.sched.table["1"] = "F node failure"
    fake.poll_cycle()
    assert (job.status.state, job.status.exit_code, job.status.message) == (S.FAILED, None, "node failure")


def test_unknown_native_id(fake):
    job = Job()
    fake.attach(job, "999")
    fake.sched.table["999"] = "U unknown"
    fake.poll_cycle()
    assert job.status.state is S.FAILED and job.status.message == "unknown to scheduler"


def test_vanished_job_resolved_by_sidecar_after_two_cycles(fake):
    job = submit(fake)
    fake.sched.table["1"] = "R"
    fake.poll_cycle()
    del fake.sched.table["1"]
    (fake.work_directory / f"{job.id}.ec").write_text("0\n")
    fake.poll_cycle()
    assert job.status.state is S.ACTIVE
    fake.poll_cycle()
    assert (job.status.state, job.status.exit_code) == (S.COMPLETED, 0)


def test_vanished_job_without_sidecar_is_lost(fake):
    job = submit(fake)
    del fake.sched.table["1"]
    fake.poll_cycle()
    fake.poll_cycle()
    assert job.status.state is S.FAILED and job.status.message == "lost by scheduler"


def test_reappearing_job_resets_missing_count(fake):
    job = submit(fake)
    del fake.sched.table["1"]
    fake.poll_cycle()
    fake.sched.table["1"] = "R"
    fake.poll_cycle()
    del fake.sched.table["1"]
    fake.poll_cycle()
    assert job.status.state is S.ACTIVE


def test_scheduler_unreachable_after_ten_failures(fake):
    jobs = [submit(fake) for _ in range(2)]
    fake.sched.status_error = "connection refused"
    for _ in range(9):
        assert fake.poll_cycle() == []
    assert all(j.status.state is S.QUEUED for j in jobs)
    fake.poll_cycle()
    assert [(j.status.state, j.status.message) for j in jobs] == [(S.FAILED, "scheduler unreachable")] * 2


def test_success_resets_failure_count(fake):
    job = submit(fake)
    fake.sched.status_error = "flaky"
    for _ in range(9):
        fake.poll_cycle()
    fake.sched.status_error = None
    fake.poll_cycle()
    fake.sched.status_error = "flaky"
    for _ in range(9):
        fake.poll_cycle()
    assert job.status.state is S.QUEUED


def test_cancel_queued(fake):
    job = submit(fake)
    fake.cancel(job)
    fake.poll_cycle()
    assert job.status.state is S.CANCELED


def test_cancel_race_is_absorbed(fake):
    job = submit(fake)
    fake.sched.table["1"] = "CD exit=0"
    fake.sched.cancel_error = "job 1 already completed"
    fake.cancel(job)
    fake.poll_cycle()
    assert job.status.state is S.COMPLETED


def test_cancel_failure_is_reported(fake):
    job = submit(fake)
    fake.sched.cancel_error = "scheduler down"
    with pytest.raises(CancelError):
        fake.cancel(job)
    assert job.status.state is S.QUEUED
    assert any("scheduler down" in d for d in fake.diagnostics)


def test_cancel_final_job(fake):
    job = submit(fake)
    fake.sched.table["1"] = "CD exit=0"
    fake.poll_cycle()
    with pytest.raises(TerminalStateError):
        fake.cancel(job)


def test_read_exit_code_malformed(fake, caplog):
    job = submit(fake)
    path = fake.work_directory / f"{job.id}.ec"
    path.write_text("banana")
    with caplog.at_level(logging.WARNING):
        assert fake.read_exit_code(job) is None
    assert "banana" in caplog.text
    path.write_text("0\n")
    assert fake.read_exit_code(job) == 0
    path.unlink()
    assert fake.read_exit_code(job) is None


def test_callbacks_are_serialized_per_job(fake):
    seen = []
    fake.set_job_status_callback(lambda j, s: seen.append((j.native_id, s.state)))
    submit(fake)
    fake.sched.table["1"] = "F exit=2"
    fake.poll_cycle()
    assert seen == [("1", S.QUEUED), ("1", S.ACTIVE), ("1", S.FAILED)]


# -- real commands -------------------------------------------------------------

def test_command_not_found(work):
    ex = BatchExecutor(CommandDialect("x", ["/no/such/helper"]), ExecutorConfig(work_directory=work))
    with pytest.raises(SchedulerCommandError, match="command not found: /no/such/helper"):
        ex.run_command(Command(["/no/such/helper", "status", "1"]))
    job = Job(sh("true"))
    with pytest.raises(SubmitError, match="command not found"):
        ex.submit(job)
    assert job.status.state is S.FAILED


def test_command_timeout(work):
    ex = BatchExecutor(CommandDialect("x", ["sleep"]), ExecutorConfig(work_directory=work, command_timeout=0.2))
    t0 = time.monotonic()
    with pytest.raises(SchedulerCommandError, match="timed out"):
        ex.run_command(Command(["sleep", "5"]))
    assert time.monotonic() - t0 < 2


def test_slurm_submit_without_sbatch(work, monkeypatch):
    monkeypatch.setenv("PATH", str(work))
    ex = BatchExecutor(SlurmDialect(), ExecutorConfig(work_directory=work))
    job = Job(JobSpec("/bin/true"))
    with pytest.raises(SubmitError, match="command not found: sbatch"):
        ex.submit(job)
    assert job.status.state is S.FAILED


# -- against the mock scheduler ---------------------------------------------------

def test_mock_submit_complete(mock_ex):
    ex = mock_ex()
    job = Job(sh("exit 0"))
    ex.submit(job)
    assert job.native_id == "1" and job.status.state is S.QUEUED
    assert job.wait(10).exit_code == 0


def test_mock_rejected_queue(mock_ex, spool):
    spool.write_config(reject_queues=["badq"])
    ex = mock_ex()
    job = Job(sh("true", attributes=JobAttributes(queue_name="badq")))
    with pytest.raises(SubmitError) as e:
        ex.submit(job)
    assert "badq" in e.value.stderr
    assert job.status.state is S.FAILED and "badq" in job.status.message


def test_mock_attach_out_of_band(mock_ex, spool, tmp_path):
    script = tmp_path / "oob.sh"
    script.write_text("sleep 0.3\n")
    nid = subprocess.run(command_prefix(spool.path) + ["msub", str(script)], capture_output=True,
                         text=True, check=True).stdout.strip()
    ex = mock_ex()
    job = Job()
    seen = []
    job.add_status_callback(lambda j, s: seen.append(s.state))
    ex.attach(job, nid)
    st = job.wait(10)
    assert st.state is S.COMPLETED
    assert seen[-1] is S.COMPLETED and S.ACTIVE in seen


def test_mock_attach_finished_and_garbage(mock_ex):
    ex = mock_ex()
    done = Job(sh("exit 0"))
    ex.submit(done)
    done.wait(10)
    other = mock_ex()
    twin = Job(id=done.id)
    other.attach(twin, done.native_id)
    assert twin.wait(10).state is S.COMPLETED
    junk = Job()
    other.attach(junk, "not-a-job")
    st = junk.wait(10)
    assert st.state is S.FAILED and st.message == "unknown to scheduler"


def test_mock_cancel_queued(mock_ex, spool):
    spool.write_config(schedule_delay=60)
    ex = mock_ex()
    job = Job(sh("true"))
    ex.submit(job)
    ex.cancel(job)
    assert job.wait(10).state is S.CANCELED


def test_mock_drop_after_done_resolved_via_sidecar(mock_ex, spool):
    spool.write_config(drop_after_done=True)
    ex = mock_ex()
    jobs = [Job(sh(f"exit {c}")) for c in (0, 3)]
    for j in jobs:
        ex.submit(j)
    assert [(s.state, s.exit_code) for s in (j.wait(10) for j in jobs)] == [(S.COMPLETED, 0), (S.FAILED, 3)]


def test_submit_does_not_wait_for_the_job(mock_ex):
    ex = mock_ex(poll_interval=5.0)
    t0 = time.monotonic()
    job = Job(sh("sleep 60"))
    ex.submit(job)
    assert time.monotonic() - t0 < ex.poll_interval
    ex.cancel(job)


def test_mock_and_local_coexist(mock_ex, local):
    ex = mock_ex()
    jobs = {"mock": [], "local": []}

    def run(name, executor):
        for i in range(5):
            j = Job(sh(f"exit {i}"))
            executor.submit(j)
            jobs[name].append(j)

    threads = [threading.Thread(target=run, args=a) for a in (("mock", ex), ("local", local))]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    for name in jobs:
        assert [j.wait(20).exit_code for j in jobs[name]] == list(range(5))
    assert {j.executor for j in jobs["mock"]} == {ex}
    assert set(ex.jobs) == set(jobs["mock"])
    assert isinstance(local, LocalExecutor) and set(local.jobs) == set(jobs["local"])
