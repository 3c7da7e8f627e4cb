import itertools
import threading
import time

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from portajob.exceptions import (
    AlreadyBoundError,
    IllegalTransitionError,
    JobTimeoutError,
    PortajobError,
    UnboundJobError,
)
from portajob.job import LEGAL_TRANSITIONS, Job, JobState, JobStatus, advance, transition

S = JobState
EDGES = {
    (S.NEW, S.QUEUED), (S.NEW, S.FAILED), (S.QUEUED, S.ACTIVE), (S.QUEUED, S.CANCELED),
    (S.QUEUED, S.FAILED), (S.ACTIVE, S.COMPLETED), (S.ACTIVE, S.FAILED), (S.ACTIVE, S.CANCELED),
}
# shortest legal path from NEW to each state
PATHS = {
    S.NEW: [], S.QUEUED: [S.QUEUED], S.ACTIVE: [S.QUEUED, S.ACTIVE],
    S.COMPLETED: [S.QUEUED, S.ACTIVE, S.COMPLETED], S.FAILED: [S.FAILED],
    S.CANCELED: [S.QUEUED, S.CANCELED],
}


def job_in(state):
    job = Job()
    for s in PATHS[state]:
        transition(job, JobStatus(s))
    return job


def bound(job=None):
    job = job or Job()
    job._bind(object())
    return job


def test_edge_list():
    assert LEGAL_TRANSITIONS == EDGES


def test_ranks():
    assert [s.rank for s in S] == [0, 1, 2, 3, 3, 3]
    assert [s for s in S if s.final] == [S.COMPLETED, S.FAILED, S.CANCELED]


@pytest.mark.parametrize("current, new", list(itertools.product(S, S)))
def test_transition_table(current, new):
    job = job_in(current)
    seen = []
    job.add_status_callback(lambda j, s: seen.append(s.state))
    if new is current:
        transition(job, JobStatus(new))
        assert job.status.state is current and seen == []
    elif (current, new) in EDGES:
        transition(job, JobStatus(new))
        assert job.status.state is new and seen == [new]
    else:
        before = job.status
        with pytest.raises(IllegalTransitionError) as e:
            transition(job, JobStatus(new))
        assert e.value.current is current and e.value.new is new
        assert current.name in str(e.value) and new.name in str(e.value)
        assert job.status is before and seen == []


def test_final_states_have_no_exits():
    for (a, b) in EDGES:
        assert not a.final


def test_advance_synthesizes_intermediate_states():
    job = Job()
    applied = advance(job, JobStatus(S.COMPLETED, exit_code=0))
    assert [s.state for s in applied] == [S.QUEUED, S.ACTIVE, S.COMPLETED]
    job = Job()
    assert [s.state for s in advance(job, JobStatus(S.FAILED, exit_code=2), ran=True)] == \
        [S.QUEUED, S.ACTIVE, S.FAILED]
    job = Job()
    assert [s.state for s in advance(job, JobStatus(S.CANCELED))] == [S.QUEUED, S.CANCELED]


def test_advance_ignores_backward_and_post_final_reports():
    job = job_in(S.ACTIVE)
    assert advance(job, JobStatus(S.QUEUED)) == []
    assert advance(job, JobStatus(S.ACTIVE)) == []
    advance(job, JobStatus(S.FAILED, exit_code=1))
    assert advance(job, JobStatus(S.COMPLETED, exit_code=0)) == []
    assert job.status.state is S.FAILED


def test_callback_errors_do_not_stop_delivery():
    job = Job()
    seen = []

    def bad(j, s):
        raise RuntimeError("boom")

    job.add_status_callback(bad)
    job.add_status_callback(lambda j, s: seen.append(s.state))
    transition(job, JobStatus(S.QUEUED))
    assert seen == [S.QUEUED]


def test_wait_requires_binding():
    with pytest.raises(UnboundJobError):
        Job().wait(0)


def test_wait_timeout_zero_on_queued_job():
    job = bound(job_in(S.QUEUED))
    with pytest.raises(JobTimeoutError):
        job.wait(timeout=0)
    assert job.status.state is S.QUEUED


def test_wait_releases_all_waiters():
    job = bound(job_in(S.ACTIVE))
    results = []
    threads = [threading.Thread(target=lambda: results.append(job.wait(5))) for _ in range(5)]
    for t in threads:
        t.start()
    time.sleep(0.05)
    transition(job, JobStatus(S.COMPLETED, exit_code=0))
    for t in threads:
        t.join(5)
    assert [r.state for r in results] == [S.COMPLETED] * 5


def test_identity_invariants():
    job = Job(id="fixed")
    assert job.id == "fixed"
    job._set_native_id("42")
    with pytest.raises(PortajobError):
        job._set_native_id("43")
    job._bind(object())
    with pytest.raises(AlreadyBoundError):
        job._bind(object())
    assert Job().id != Job().id


def test_status_str():
    assert str(JobStatus(S.FAILED, exit_code=3)) == "FAILED 3"
    assert str(JobStatus(S.QUEUED)) == "QUEUED"


updates = st.lists(st.tuples(st.sampled_from(list(S)), st.booleans(), st.booleans()), max_size=12)


@settings(max_examples=300)
@given(updates)
def test_random_updates_keep_invariants(seq):
    job = Job()
    delivered = []
    job.add_status_callback(lambda j, s: delivered.append(s))
    applied = []
    for state, use_advance, ran in seq:
        status = JobStatus(state)
        if use_advance:
            applied += advance(job, status, ran=ran)
        else:
            before = job.status
            try:
                transition(job, status)
            except IllegalTransitionError:
                assert job.status is before
                continue
            if job.status is not before:
                applied.append(status)
    ranks = [s.state.rank for s in delivered]
    assert ranks == sorted(ranks)
    assert delivered == applied  # exactly once, in order
    states = [s.state for s in delivered]
    assert len(states) == len(set(states))
    assert all(not s.final for s in states[:-1])
    for a, b in zip([S.NEW] + states, states):
        assert (a, b) in EDGES
