from pathlib import Path

import pytest
import yaml

from batchsim.catalog import default_catalog
from batchsim.config import (
    PoolConfig,
    bundle_documents,
    parse_config_dir,
    serialize_config_dir,
    validate_pool,
)
from batchsim.errors import CrossRefError, MissingDocument, SchemaError
from batchsim.workloads import FixedDuration

REPO_ROOT = Path(__file__).resolve().parent.parent
EXAMPLE_DIR = REPO_ROOT / "configs" / "snake2d2k35"

CATALOG = default_catalog()


def _write_example(tmp_path, mutate=None):
    """Copy the shipped example, optionally mutating one document."""
    docs = {}
    for name in ("workspace.yaml", "credentials.yaml", "pool.yaml", "jobs.yaml"):
        with open(EXAMPLE_DIR / name) as fh:
            docs[name] = yaml.safe_load(fh)
    if mutate:
        mutate(docs)
    for name, doc in docs.items():
        with open(tmp_path / name, "w") as fh:
            yaml.safe_dump(doc, fh, sort_keys=False)
    return tmp_path


def test_shipped_example_parses():
    bundle = parse_config_dir(EXAMPLE_DIR, CATALOG)
    assert bundle.pool.sku == "NC24r"
    assert bundle.pool.dedicated_count == 2
    assert bundle.pool.inter_node_comm and bundle.pool.shared_filesystem
    assert bundle.jobs.tasks[0].instances == 2
    assert bundle.jobs.tasks[0].workload == FixedDuration(25200.0)
    assert bundle.workspace.region == "eastus"


def test_every_shipped_config_dir_parses():
    dirs = [p for p in (REPO_ROOT / "configs").iterdir() if p.is_dir()]
    assert dirs
    for directory in dirs:
        parse_config_dir(directory, CATALOG)


def test_missing_document(tmp_path):
    _write_example(tmp_path)
    (tmp_path / "pool.yaml").unlink()
    with pytest.raises(MissingDocument):
        parse_config_dir(tmp_path, CATALOG)


def test_missing_sku_key(tmp_path):
    def drop_sku(docs):
        del docs["pool.yaml"]["pool"]["sku"]

    _write_example(tmp_path, drop_sku)
    with pytest.raises(SchemaError) as err:
        parse_config_dir(tmp_path, CATALOG)
    assert "sku" in str(err.value)


def test_rdma_cross_ref(tmp_path):
    def swap_sku(docs):
        docs["pool.yaml"]["pool"]["sku"] = "NC24"  # no RDMA interface

    _write_example(tmp_path, swap_sku)
    with pytest.raises(CrossRefError) as err:
        parse_config_dir(tmp_path, CATALOG)
    assert "RDMA" in str(err.value)


def test_unknown_region(tmp_path):
    def bad_region(docs):
        docs["pool.yaml"]["pool"]["region"] = "nowhere"

    _write_example(tmp_path, bad_region)
    with pytest.raises(CrossRefError):
        parse_config_dir(tmp_path, CATALOG)


def test_task_geometry_cross_refs(tmp_path):
    def too_many_gpus(docs):
        docs["jobs.yaml"]["job"]["tasks"][0]["gpus_per_node"] = 5

    _write_example(tmp_path, too_many_gpus)
    with pytest.raises(CrossRefError) as err:
        parse_config_dir(tmp_path, CATALOG)
    assert "GPU" in str(err.value)


def test_too_many_procs(tmp_path):
    def too_many(docs):
        docs["jobs.yaml"]["job"]["tasks"][0]["procs_per_node"] = 25

    _write_example(tmp_path, too_many)
    with pytest.raises(CrossRefError):
        parse_config_dir(tmp_path, CATALOG)


def test_job_pool_mismatch(tmp_path):
    def rename(docs):
        docs["jobs.yaml"]["job"]["pool"] = "other-pool"

    _write_example(tmp_path, rename)
    with pytest.raises(CrossRefError):
        parse_config_dir(tmp_path, CATALOG)


def test_duplicate_task_ids(tmp_path):
    def duplicate(docs):
        tasks = docs["jobs.yaml"]["job"]["tasks"]
        tasks.append(dict(tasks[0]))

    _write_example(tmp_path, duplicate)
    with pytest.raises(SchemaError):
        parse_config_dir(tmp_path, CATALOG)


def test_zero_nodes_rejected(tmp_path):
    def zero(docs):
        docs["pool.yaml"]["pool"]["vm_count"] = {"dedicated": 0, "low_priority": 0}

    _write_example(tmp_path, zero)
    with pytest.raises(SchemaError):
        parse_config_dir(tmp_path, CATALOG)


def test_round_trip_identity(tmp_path):
    bundle = parse_config_dir(EXAMPLE_DIR, CATALOG)
    out = tmp_path / "copy"
    serialize_config_dir(bundle, out)
    again = parse_config_dir(out, CATALOG)
    assert again == bundle
    assert bundle_documents(again) == bundle_documents(bundle)


def test_credentials_never_echoed():
    bundle = parse_config_dir(EXAMPLE_DIR, CATALOG)
    text = repr(bundle.credentials)
    assert "storagekey" not in text
    assert "batchkey" not in text
    assert "***" in text


def _pool(ded=1, low=0, sku="NC6", inter_node=False, shared_fs=False):
    return PoolConfig(
        pool_id="p", sku=sku, region="eastus", dedicated_count=ded,
        low_priority_count=low, inter_node_comm=inter_node,
        shared_filesystem=shared_fs, image="img:1",
    )


def _quotas():
    return {"eastus": CATALOG.default_quota("eastus")}


def test_validate_pool_quota_exceeded():
    violations = validate_pool(_pool(ded=2, sku="NC24r", inter_node=True), CATALOG, _quotas())
    rules = {v.rule: v for v in violations}
    assert rules["QuotaExceeded"].details == {
        "needed": 48, "available": 24, "kind": "dedicated",
    }
    assert rules["QuotaExceeded"].severity == "error"


def test_validate_pool_shared_fs_low_priority():
    violations = validate_pool(_pool(ded=1, low=1, shared_fs=True), CATALOG, _quotas())
    assert any(v.rule == "SharedFsLowPriority" and v.severity == "error"
               for v in violations)


def test_validate_pool_ok():
    assert validate_pool(_pool(), CATALOG, _quotas()) == []


def test_validate_pool_low_priority_comm_is_warning():
    violations = validate_pool(_pool(low=1, sku="NC24r", inter_node=True), CATALOG, _quotas())
    warn = [v for v in violations if v.rule == "LowPriorityInterNodeComm"]
    assert warn and warn[0].severity == "warning"


def test_validate_pool_rdma_rule():
    violations = validate_pool(_pool(sku="NC6", inter_node=True), CATALOG, _quotas())
    assert any(v.rule == "RdmaRequired" for v in violations)


def test_pool_config_invariants():
    with pytest.raises(ValueError):
        _pool(ded=0, low=0)
    with pytest.raises(ValueError):
        PoolConfig("p", "NC6", "eastus", -1, 1, False, False, "img")
