import heapq
from fractions import Fraction

import pytest

from batchsim.batch import BatchService, FailureReason, JobState, PoolState, TaskState
from batchsim.catalog import PricingPlan, default_catalog
from batchsim.config import JobsConfig, PoolConfig, TaskSpec
from batchsim.errors import (
    QuotaExceeded,
    RdmaRequired,
    SharedFsLowPriority,
    TaskTooWide,
    UnknownJob,
    UnknownPool,
)
from batchsim.fabric import NodeState, Priority
from batchsim.workloads import FixedDuration

from randomized import (
    check_all_invariants,
    check_quota_rejection,
    check_shared_fs_rejection,
    run_random_schedule,
)

CATALOG = default_catalog()


def make_service(**kwargs):
    svc = BatchService(CATALOG, **kwargs)
    svc.quota_set("eastus", 200, 200)
    return svc


def pool_cfg(pool_id="p", sku="NC6", ded=2, low=0, **flags):
    return PoolConfig(
        pool_id=pool_id, sku=sku, region="eastus", dedicated_count=ded,
        low_priority_count=low,
        inter_node_comm=flags.get("inter_node_comm", False),
        shared_filesystem=flags.get("shared_filesystem", False),
        image="img:1",
    )


def task(task_id, instances, seconds):
    return TaskSpec(task_id=task_id, workload=FixedDuration(float(seconds)),
                    instances=instances, procs_per_node=1, gpus_per_node=0,
                    input_dir="fileshare/in", output_dir="fileshare/out")


def jobs_cfg(pool_id, *tasks, job_id="job"):
    return JobsConfig(job_id=job_id, pool_id=pool_id, tasks=tuple(tasks))


def steady_pool(svc, cfg, plan=PricingPlan.PAYGO_DEDICATED):
    pool = svc.pool_add(cfg, plan)
    svc.advance_until_pool_settled(pool.pool_id)
    assert pool.state is PoolState.STEADY
    return pool


# ---------------------------------------------------------------------------
# pool lifecycle


def test_pool_add_reaches_steady_after_quota_raise():
    svc = BatchService(CATALOG, seed=1)
    svc.quota_set("eastus", 100, 24)
    pool = steady_pool(svc, pool_cfg(sku="NC24r", ded=2, inter_node_comm=True,
                                     shared_filesystem=True))
    assert pool.shared_fs_mounted
    assert all(n.state is NodeState.IDLE for n in pool.nodes)


def test_pool_add_quota_exceeded_under_default():
    svc = BatchService(CATALOG, seed=1)  # default 24 dedicated cores
    with pytest.raises(QuotaExceeded) as err:
        svc.pool_add(pool_cfg(sku="NC24r", ded=2))
    assert err.value.needed == 48
    assert err.value.available == 24
    assert svc.pools == {}
    assert svc.ledger.items == ()


def test_pool_add_shared_fs_low_priority():
    svc = make_service(seed=1)
    with pytest.raises(SharedFsLowPriority):
        svc.pool_add(pool_cfg(ded=1, low=1, shared_filesystem=True))


def test_pool_add_rdma_required():
    svc = make_service(seed=1)
    with pytest.raises(RdmaRequired):
        svc.pool_add(pool_cfg(sku="NC24", ded=1, inter_node_comm=True))


def test_pool_add_low_priority_comm_warning_not_rejection():
    svc = make_service(seed=1)
    pool = svc.pool_add(pool_cfg(sku="NC24r", ded=1, low=1, inter_node_comm=True))
    assert [v.rule for v in pool.warnings] == ["LowPriorityInterNodeComm"]


def test_image_pull_precedes_steady():
    svc = make_service(seed=4, image_pull_seconds=120.0)
    pool = steady_pool(svc, pool_cfg(ded=1))
    boot = pool.nodes[0].boot_latency
    assert pool.steady_at == pytest.approx(boot + 120.0)
    pulls = [r for r in svc.event_log.records if r[2].startswith("image_pull:")]
    assert len(pulls) == 1 and pulls[0][0] == pytest.approx(boot)


def test_quota_returned_after_delete():
    svc = make_service(seed=1)
    pool = steady_pool(svc, pool_cfg(ded=2))
    assert svc.available_quota("eastus").dedicated_cores == 200 - 12
    svc.pool_del(pool.pool_id)
    assert svc.available_quota("eastus").dedicated_cores == 200


def test_pool_delete_twice_unknown():
    svc = make_service(seed=1)
    pool = steady_pool(svc, pool_cfg(ded=1))
    svc.pool_del(pool.pool_id)
    with pytest.raises(UnknownPool):
        svc.pool_del(pool.pool_id)


def test_delete_steady_pool_closes_meters():
    svc = make_service(seed=2)
    pool = steady_pool(svc, pool_cfg(ded=2))
    svc.pool_del(pool.pool_id)
    vm_items = [i for i in svc.ledger.items if i.node_seconds is not None]
    assert len(vm_items) == 2
    for node, item in zip(pool.nodes, vm_items):
        assert item.node_seconds == Fraction(node.released_time) - Fraction(node.ready_time)


# ---------------------------------------------------------------------------
# jobs and gang scheduling


def test_multi_instance_task_uses_all_nodes():
    svc = make_service(seed=3)
    pool = steady_pool(svc, pool_cfg(ded=2))
    job = svc.jobs_add(jobs_cfg("p", task("t0", 2, 600)))
    tk = job.tasks[0]
    svc.clock.run(until=lambda: tk.state is TaskState.RUNNING)
    assert set(tk.assigned_nodes) == {n.node_id for n in pool.nodes}
    assert all(n.state is NodeState.RUNNING for n in pool.nodes)
    svc.advance_until_job_terminal(job.job_id)
    assert tk.state is TaskState.COMPLETED
    assert tk.end_time - tk.start_time == pytest.approx(600.0)
    for node in pool.nodes:
        assert node.busy_log == [(tk.start_time, tk.end_time, tk.run_tag)]


def test_task_too_wide():
    svc = make_service(seed=3)
    steady_pool(svc, pool_cfg(ded=2))
    with pytest.raises(TaskTooWide):
        svc.jobs_add(jobs_cfg("p", task("t0", 3, 60)))


def test_unknown_pool_for_jobs():
    svc = make_service(seed=3)
    with pytest.raises(UnknownPool):
        svc.jobs_add(jobs_cfg("nope", task("t0", 1, 60)))


def test_sequential_gang_tasks_serialize():
    svc = make_service(seed=5)
    steady_pool(svc, pool_cfg(ded=2))
    job = svc.jobs_add(jobs_cfg("p", task("a", 2, 300), task("b", 2, 400)))
    first, second = job.tasks
    svc.clock.run(until=lambda: first.state is TaskState.RUNNING)
    assert second.state is TaskState.PENDING
    svc.advance_until_job_terminal(job.job_id)
    assert second.start_time == first.end_time
    assert job.state is JobState.COMPLETED


def test_fifo_makespan_matches_list_schedule_oracle():
    durations = [100.0, 200.0, 50.0, 75.0, 125.0]
    svc = make_service(seed=6)
    pool = steady_pool(svc, pool_cfg(ded=2))
    job = svc.jobs_add(jobs_cfg("p", *(task(f"t{i}", 1, d)
                                       for i, d in enumerate(durations))))
    svc.advance_until_job_terminal(job.job_id)
    # independent oracle: FIFO list scheduling onto the earliest-free node
    free = [0.0] * 2
    ends = []
    for d in durations:
        start = heapq.heappop(free)
        ends.append(start + d)
        heapq.heappush(free, ends[-1])
    expected_makespan = max(ends)
    t0 = pool.steady_at
    makespan = max(t.end_time for t in job.tasks) - t0
    assert makespan == pytest.approx(expected_makespan)
    assert [t.start_time for t in job.tasks] == sorted(t.start_time for t in job.tasks)


def test_preemption_fails_whole_gang_task():
    # all-low-priority pool with an aggressive preemption clock: the first
    # preemption lands mid-task and must take the whole gang down
    svc = BatchService(CATALOG, seed=8, preemption_rate=5.0)
    svc.quota_set("eastus", 200, 200)
    pool = steady_pool(svc, pool_cfg(ded=0, low=2))
    job = svc.jobs_add(jobs_cfg("p", task("t0", 2, 200_000)))
    tk = job.tasks[0]
    svc.advance_until_job_terminal(job.job_id)
    assert tk.state is TaskState.FAILED
    assert tk.failure_reason is FailureReason.NODE_PREEMPTED
    preempted = [n for n in pool.nodes if n.state is NodeState.PREEMPTED]
    assert preempted
    assert min(n.released_time for n in preempted) == tk.end_time
    assert tk.start_time < tk.end_time < tk.start_time + 200_000
    survivors = [n for n in pool.nodes if n.state is NodeState.IDLE]
    for node in survivors:
        assert node.busy_log[-1][1] == tk.end_time


def test_dedicated_nodes_never_preempted():
    svc = BatchService(CATALOG, seed=9, preemption_rate=50.0)
    svc.quota_set("eastus", 200, 200)
    pool = steady_pool(svc, pool_cfg(ded=1, low=1))
    svc.run_to_quiescence()
    dedicated = [n for n in pool.nodes if n.priority is Priority.DEDICATED]
    low = [n for n in pool.nodes if n.priority is Priority.LOW_PRIORITY]
    assert all(n.state is NodeState.IDLE for n in dedicated)
    assert all(n.state is NodeState.PREEMPTED for n in low)


def test_task_retry_after_preemption():
    svc = BatchService(CATALOG, seed=8, preemption_rate=5.0, task_retries=5)
    svc.quota_set("eastus", 200, 200)
    steady_pool(svc, pool_cfg(ded=1, low=1))
    job = svc.jobs_add(jobs_cfg("p", task("t0", 1, 3600)))
    svc.run_to_quiescence()
    tk = job.tasks[0]
    assert tk.state is TaskState.COMPLETED  # retried onto the dedicated node


def test_pool_delete_fails_running_task():
    svc = make_service(seed=10)
    pool = steady_pool(svc, pool_cfg(ded=2))
    job = svc.jobs_add(jobs_cfg("p", task("t0", 2, 5000)))
    tk = job.tasks[0]
    svc.clock.run(until=lambda: tk.state is TaskState.RUNNING)
    svc.pool_del(pool.pool_id)
    assert tk.state is TaskState.FAILED
    assert tk.failure_reason is FailureReason.POOL_DELETED
    assert job.state is JobState.COMPLETED  # every task terminal
    assert all(n.released_time == svc.clock.now for n in pool.nodes)


def test_jobs_del_fails_pending_and_running():
    svc = make_service(seed=11)
    steady_pool(svc, pool_cfg(ded=1))
    job = svc.jobs_add(jobs_cfg("p", task("a", 1, 1000), task("b", 1, 1000)))
    svc.clock.run(until=lambda: job.tasks[0].state is TaskState.RUNNING)
    svc.jobs_del(job.job_id)
    assert job.state is JobState.DELETED
    assert job.tasks[0].failure_reason is FailureReason.JOB_DELETED
    assert job.tasks[1].failure_reason is FailureReason.JOB_DELETED
    with pytest.raises(UnknownJob):
        svc.jobs_del(job.job_id)


def test_jobs_add_on_deleted_pool():
    svc = make_service(seed=12)
    pool = steady_pool(svc, pool_cfg(ded=1))
    svc.pool_del(pool.pool_id)
    with pytest.raises(UnknownPool):
        svc.jobs_add(jobs_cfg("p", task("t0", 1, 60)))


def test_task_outputs_land_in_share():
    svc = make_service(seed=13)
    svc.storage.share_create("fileshare", 1)
    steady_pool(svc, pool_cfg(ded=1))
    job = svc.jobs_add(jobs_cfg("p", task("t0", 1, 60)))
    svc.advance_until_job_terminal(job.job_id)
    assert "out/run.log" in svc.storage.shares["fileshare"].entries


def test_status_snapshot():
    svc = make_service(seed=14)
    pool = steady_pool(svc, pool_cfg(ded=1))
    job = svc.jobs_add(jobs_cfg("p", task("t0", 1, 60)))
    svc.advance_until_job_terminal(job.job_id)
    doc = svc.status()
    assert doc["pools"][0]["state"] == "Steady"
    assert doc["jobs"][0]["tasks"][0]["state"] == "Completed"
    assert doc["quotas"]["eastus"]["dedicated_used"] == 6
    svc.pool_del(pool.pool_id)
    assert svc.status()["pools"][0]["state"] == "Deleted"


# ---------------------------------------------------------------------------
# randomized schedules (small sample here; the acceptance suite runs 1000)


@pytest.mark.parametrize("seed", range(0, 60))
def test_randomized_schedule_invariants(seed):
    svc, pool = run_random_schedule(seed)
    check_all_invariants(svc, pool)


def test_quota_and_shared_fs_rejections():
    check_quota_rejection(0)
    check_shared_fs_rejection(0)


def test_event_log_deterministic_for_same_seed():
    a, _ = run_random_schedule(17)
    b, _ = run_random_schedule(17)
    assert a.event_log.lines() == b.event_log.lines()


def test_allocation_unavailable_is_atomic():
    from batchsim.errors import AllocationUnavailable
    from batchsim.fabric import ScarcityWindow

    svc = BatchService(CATALOG, seed=1, scarcity_windows=(ScarcityWindow(0.0, 1e6),))
    svc.quota_set("eastus", 200, 200)
    with pytest.raises(AllocationUnavailable):
        svc.pool_add(pool_cfg(ded=1, low=1))
    assert svc.pools == {}
    assert svc.available_quota("eastus").dedicated_cores == 200
    assert svc.clock.pending() == 0
