"""Command-line surface of the simulator.

One command per process invocation; persistent state lives under
.batchsim/ in the working directory (or the directory given with -C).
Exit codes: 0 success, 2 validation error (state unchanged), 3 simulation
error, 64 usage error.
"""

from __future__ import annotations

import argparse
import io
import json
import os
import shutil
import sys
import tarfile
import tempfile
from pathlib import Path

import yaml

from . import billing, scenarios, state as statemod
from .catalog import Catalog, PricingPlan, default_catalog
from .config import ConfigBundle, parse_config_dir, serialize_config_dir
from .errors import (
    CorruptArchive,
    NoCompletedRun,
    SimulationError,
    ValidationError,
)
from .fabric import INTERCONNECTS
from .state import STATE_DIR, ServiceOptions, WorkspaceStore, sha256_file

CONFIGDIR_ENV = "BATCHSIM_CONFIGDIR"
DIGEST_ALGORITHM = "sha256"
OUTPUT_ARTIFACTS = ("events.log", "ledger.tsv")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> _Parser:
    parser = _Parser(prog="batchsim", description=__doc__)
    parser.add_argument("-C", dest="root", default=".", metavar="DIR",
                        help="workspace directory (default: current directory)")
    top = parser.add_subparsers(dest="group", required=True)

    ws = top.add_parser("workspace").add_subparsers(dest="cmd", required=True)
    init = ws.add_parser("init", help="create a workspace from a config directory")
    init.add_argument("--configdir")
    init.add_argument("--seed", type=int, default=0)
    init.add_argument("--catalog", help="catalog override document (YAML)")
    init.add_argument("--interconnect", choices=sorted(INTERCONNECTS), default="azure")
    init.add_argument("--preemption-rate", type=float, default=0.05,
                      help="low-priority preemptions per node-hour")
    init.add_argument("--image-pull-seconds", type=float, default=120.0)
    init.add_argument("--task-retries", type=int, default=0,
                      help="automatic retries after preemption (default 0)")
    init.add_argument("--scarcity", nargs=2, type=float, action="append", default=[],
                      metavar=("START", "END"),
                      help="window of low-priority allocation failure (seconds)")

    storage = top.add_parser("storage").add_subparsers(dest="cmd", required=True)
    account = storage.add_parser("account").add_subparsers(dest="sub", required=True)
    account.add_parser("create", help="create the storage account recorded at init")

    share = top.add_parser("share").add_subparsers(dest="cmd", required=True)
    sc = share.add_parser("create", help="create a fileshare")
    sc.add_argument("--name", required=True)
    sc.add_argument("--quota", required=True, type=int, metavar="GIB")

    quota = top.add_parser("quota").add_subparsers(dest="cmd", required=True)
    qs = quota.add_parser("set", help="set per-region core quotas")
    qs.add_argument("--region", required=True)
    qs.add_argument("--dedicated", required=True, type=int)
    qs.add_argument("--low-priority", type=int, default=None)

    pool = top.add_parser("pool").add_subparsers(dest="cmd", required=True)
    pa = pool.add_parser("add", help="create the pool defined in pool.yaml")
    pa.add_argument("--configdir")
    pa.add_argument("--plan", choices=[p.value for p in PricingPlan],
                    default=PricingPlan.PAYGO_DEDICATED.value)
    pd = pool.add_parser("del", help="delete a pool")
    pd.add_argument("--configdir")
    pd.add_argument("--pool", help="explicit pool id (default: pool.yaml)")

    data = top.add_parser("data").add_subparsers(dest="cmd", required=True)
    di = data.add_parser("ingress", help="upload task input files to the share")
    di.add_argument("--configdir")
    group = di.add_mutually_exclusive_group(required=True)
    group.add_argument("--source", help="local directory to upload")
    group.add_argument("--manifest", help="size manifest (JSON or YAML)")
    dd = data.add_parser("download", help="download a share directory")
    dd.add_argument("--source", required=True, metavar="SHARE/DIR")
    dd.add_argument("--dest", required=True)

    jobs = top.add_parser("jobs").add_subparsers(dest="cmd", required=True)
    ja = jobs.add_parser("add", help="submit the job defined in jobs.yaml and run it")
    ja.add_argument("--configdir")
    jd = jobs.add_parser("del", help="delete a job")
    jd.add_argument("--configdir")
    jd.add_argument("--job", help="explicit job id (default: jobs.yaml)")

    top.add_parser("status", help="print service state as JSON")

    ledger = top.add_parser("ledger").add_subparsers(dest="cmd", required=True)
    lr = ledger.add_parser("report", help="cost by service category")
    lr.add_argument("--export", help="write the full ledger as TSV")

    scen = top.add_parser("scenario").add_subparsers(dest="cmd", required=True)
    scen.add_parser("list", help="list built-in scenarios")
    sr = scen.add_parser("run", help="run a built-in scenario end to end")
    sr.add_argument("name")
    sr.add_argument("--seed", type=int, default=0)
    sr.add_argument("--no-quota-raise", action="store_true",
                    help="keep the default core quota (the pool will be rejected)")
    sr.add_argument("--download-dir", default=None)

    repro = top.add_parser("repro").add_subparsers(dest="cmd", required=True)
    rp = repro.add_parser("pack", help="pack configs, seed, transcript, output digests")
    rp.add_argument("--out", default=None)
    rv = repro.add_parser("verify", help="re-run a package and compare digests")
    rv.add_argument("archive")

    return parser


# ---------------------------------------------------------------------------
# shared helpers


class Cli:
    def __init__(self, root: Path, out, err):
        self.root = root
        self.store = WorkspaceStore(root)
        self.out = out
        self.err = err

    def say(self, text: str):
        print(text, file=self.out)

    # -- state plumbing ---------------------------------------------------

    def require_state(self) -> dict:
        if not self.store.exists():
            raise ValidationError(
                f"no workspace in {self.root}: run `batchsim workspace init` first"
            )
        return self.store.load()

    def catalog_from_state(self, state: dict) -> Catalog:
        doc = state.get("catalog_doc")
        return Catalog.from_document(doc) if doc else default_catalog()

    def service_from_state(self, state: dict):
        options = ServiceOptions.from_doc(state["options"])
        return statemod.service_from_doc(state["service"], options,
                                         self.catalog_from_state(state))

    def commit(self, state: dict, svc, recorded_argv=None):
        state["service"] = statemod.service_to_doc(svc)
        if recorded_argv is not None:
            state["transcript"].append(list(recorded_argv))
        if any(t.terminal for t in svc.all_tasks()):
            state["has_completed_run"] = True
        self.store.append_events(svc.event_log.lines())
        self.store.write_ledger(billing.export_tsv(svc.ledger))
        self.store.save(state)

    # -- config plumbing ----------------------------------------------------

    def resolve_configdir(self, arg) -> Path:
        value = arg or os.environ.get(CONFIGDIR_ENV)
        if not value:
            raise ValidationError(
                f"no configuration directory: pass --configdir or set {CONFIGDIR_ENV}"
            )
        path = Path(value)
        return path if path.is_absolute() else self.root / path

    def load_bundle(self, configdir_arg, catalog: Catalog) -> ConfigBundle:
        bundle = parse_config_dir(self.resolve_configdir(configdir_arg), catalog)
        serialize_config_dir(bundle, self.store.configs_dir)
        return bundle


def _relpath(path: Path, root: Path) -> Path:
    return path if path.is_absolute() else root / path


# ---------------------------------------------------------------------------
# command handlers


def cmd_workspace_init(cli: Cli, args) -> int:
    if cli.store.exists():
        raise ValidationError(f"workspace already initialized in {cli.root}")
    catalog_doc = None
    recorded = ["workspace", "init", "--seed", str(args.seed)]
    if args.catalog:
        catalog_path = _relpath(Path(args.catalog),
                                cli.resolve_configdir(args.configdir))
        with open(catalog_path) as fh:
            catalog_doc = yaml.safe_load(fh)
        recorded += ["--catalog", "catalog.yaml"]
    catalog = Catalog.from_document(catalog_doc) if catalog_doc else default_catalog()
    bundle = parse_config_dir(cli.resolve_configdir(args.configdir), catalog)
    options = ServiceOptions(
        seed=args.seed,
        interconnect=args.interconnect,
        preemption_rate=args.preemption_rate,
        image_pull_seconds=args.image_pull_seconds,
        task_retries=args.task_retries,
        scarcity_windows=tuple((a, b) for a, b in args.scarcity),
    )
    for flag, value, default in (
        ("--interconnect", args.interconnect, "azure"),
        ("--preemption-rate", args.preemption_rate, 0.05),
        ("--image-pull-seconds", args.image_pull_seconds, 120.0),
        ("--task-retries", args.task_retries, 0),
    ):
        if value != default:
            recorded += [flag, str(value)]
    for a, b in args.scarcity:
        recorded += ["--scarcity", str(a), str(b)]
    svc = statemod.build_service(options, catalog)
    serialize_config_dir(bundle, cli.store.configs_dir)
    if catalog_doc:
        with open(cli.store.configs_dir / "catalog.yaml", "w") as fh:
            yaml.safe_dump(catalog_doc, fh, sort_keys=False)
    state = {
        "version": statemod.STATE_VERSION,
        "options": options.to_doc(),
        "catalog_doc": catalog_doc,
        "workspace": statemod.workspace_to_doc(bundle.workspace),
        "credentials_digest": {
            "storage_key": statemod.sha256_text(bundle.credentials.storage_key),
            "batch_key": statemod.sha256_text(bundle.credentials.batch_key),
        },
        "storage_account_created": False,
        "service": statemod.service_to_doc(svc),
        "transcript": [recorded],
        "ingress_seq": 0,
        "has_completed_run": False,
    }
    cli.store.save(state)
    ws = bundle.workspace
    cli.say(f"workspace initialized: subscription={ws.subscription} "
            f"resource_group={ws.resource_group} region={ws.region} seed={args.seed}")
    return 0


def cmd_storage_account_create(cli: Cli, args) -> int:
    state = cli.require_state()
    svc = cli.service_from_state(state)
    account = state["workspace"]["storage_account"]
    if state["storage_account_created"]:
        raise ValidationError(f"storage account already created: {account}")
    state["storage_account_created"] = True
    svc.event_log.append(svc.clock.now, f"storage/{account}", "created")
    cli.commit(state, svc, ["storage", "account", "create"])
    cli.say(f"storage account created: {account}")
    return 0


def cmd_share_create(cli: Cli, args) -> int:
    state = cli.require_state()
    if not state["storage_account_created"]:
        raise ValidationError("no storage account: run `batchsim storage account create`")
    svc = cli.service_from_state(state)
    svc.storage.share_create(args.name, args.quota)
    svc.event_log.append(svc.clock.now, f"share/{args.name}", f"create:quota={args.quota}GiB")
    cli.commit(state, svc, ["share", "create", "--name", args.name,
                            "--quota", str(args.quota)])
    cli.say(f"share created: {args.name} ({args.quota} GiB)")
    return 0


def cmd_quota_set(cli: Cli, args) -> int:
    state = cli.require_state()
    svc = cli.service_from_state(state)
    current = svc.quotas.get(args.region)
    low = args.low_priority
    if low is None:
        low = current.low_priority_cores if current else 0
    svc.quota_set(args.region, args.dedicated, low)
    recorded = ["quota", "set", "--region", args.region, "--dedicated", str(args.dedicated),
                "--low-priority", str(low)]
    cli.commit(state, svc, recorded)
    cli.say(f"quota set: {args.region} dedicated={args.dedicated} low_priority={low}")
    return 0


def cmd_pool_add(cli: Cli, args) -> int:
    state = cli.require_state()
    svc = cli.service_from_state(state)
    bundle = cli.load_bundle(args.configdir, svc.catalog)
    plan = PricingPlan(args.plan)
    pool = svc.pool_add(bundle.pool, plan)
    svc.advance_until_pool_settled(pool.pool_id)
    recorded = ["pool", "add"]
    if args.plan != PricingPlan.PAYGO_DEDICATED.value:
        recorded += ["--plan", args.plan]
    cli.commit(state, svc, recorded)
    for warning in pool.warnings:
        cli.say(f"warning: {warning.rule}: {warning.message}")
    cli.say(f"pool {pool.pool_id}: {pool.state.value} "
            f"({bundle.pool.dedicated_count} dedicated, "
            f"{bundle.pool.low_priority_count} low-priority {bundle.pool.sku})")
    return 0


def cmd_pool_del(cli: Cli, args) -> int:
    state = cli.require_state()
    svc = cli.service_from_state(state)
    if args.pool:
        pool_id = args.pool
        recorded = ["pool", "del", "--pool", pool_id]
    else:
        bundle = cli.load_bundle(args.configdir, svc.catalog)
        pool_id = bundle.pool.pool_id
        recorded = ["pool", "del"]
    svc.pool_del(pool_id)
    cli.commit(state, svc, recorded)
    cli.say(f"pool deleted: {pool_id}")
    return 0


def _load_manifest(path: Path) -> list[tuple[str, int]]:
    with open(path) as fh:
        doc = yaml.safe_load(fh)
    entries = doc["entries"] if isinstance(doc, dict) else doc
    manifest = []
    for item in entries:
        if isinstance(item, dict):
            manifest.append((str(item["path"]), int(item["bytes"])))
        else:
            path_, size = item
            manifest.append((str(path_), int(size)))
    return manifest


def _scan_source(source: Path) -> list[tuple[str, int]]:
    if not source.is_dir():
        raise ValidationError(f"ingress source is not a directory: {source}")
    rows = []
    for file in sorted(p for p in source.rglob("*") if p.is_file()):
        rows.append((file.relative_to(source).as_posix(), file.stat().st_size))
    return rows


def cmd_data_ingress(cli: Cli, args) -> int:
    state = cli.require_state()
    svc = cli.service_from_state(state)
    bundle = cli.load_bundle(args.configdir, svc.catalog)
    if args.source:
        manifest = _scan_source(_relpath(Path(args.source), cli.root))
    else:
        manifest = _load_manifest(_relpath(Path(args.manifest), cli.root))
    targets = []
    for task in bundle.jobs.tasks:
        share, _, directory = task.input_dir.partition("/")
        if not directory:
            raise ValidationError(
                f"task {task.task_id!r} input_dir must look like <share>/<directory>"
            )
        if (share, directory) not in targets:
            targets.append((share, directory))
    total = 0
    for share, directory in targets:
        record = svc.storage.ingress(share, directory, manifest, svc.clock.now)
        if record is not None:
            svc.event_log.append(svc.clock.now, f"share/{share}", f"ingress:{record.bytes}")
            total += record.bytes
    seq = state["ingress_seq"] + 1
    state["ingress_seq"] = seq
    cli.store.ingress_dir.mkdir(parents=True, exist_ok=True)
    manifest_rel = f"{STATE_DIR}/ingress/{seq:04d}.json"
    with open(cli.root / manifest_rel, "w") as fh:
        json.dump({"entries": [list(row) for row in manifest]}, fh, indent=1)
        fh.write("\n")
    cli.commit(state, svc, ["data", "ingress", "--manifest", manifest_rel])
    cli.say(f"ingress complete: {len(manifest)} files, {total} bytes into "
            + ", ".join(f"{s}/{d}" for s, d in targets))
    return 0


def cmd_data_download(cli: Cli, args) -> int:
    state = cli.require_state()
    svc = cli.service_from_state(state)
    share, _, directory = args.source.partition("/")
    if not directory:
        raise ValidationError("--source must look like <share>/<directory>")
    dest = _relpath(Path(args.dest), cli.root)
    record = svc.storage.download_batch(share, directory, dest, svc.clock.now)
    count = 0
    if record is not None:
        svc.ledger.add_egress(record.bytes, f"download {share}/{directory}",
                              (svc.clock.now, svc.clock.now))
        svc.event_log.append(svc.clock.now, f"share/{share}", f"egress:{record.bytes}")
        count = len(svc.storage.entries_under(share, directory))
    cli.commit(state, svc, ["data", "download", "--source", args.source,
                            "--dest", args.dest])
    cli.say(f"downloaded {count} files "
            f"({record.bytes if record else 0} bytes) to {dest}")
    return 0


def cmd_jobs_add(cli: Cli, args) -> int:
    state = cli.require_state()
    svc = cli.service_from_state(state)
    bundle = cli.load_bundle(args.configdir, svc.catalog)
    job = svc.jobs_add(bundle.jobs)
    svc.advance_until_job_terminal(job.job_id)
    cli.commit(state, svc, ["jobs", "add"])
    for task in job.tasks:
        suffix = f" ({task.failure_reason.value})" if task.failure_reason else ""
        cli.say(f"task {task.spec.task_id}: {task.state.value}{suffix}")
    cli.say(f"job {job.job_id}: {job.state.value}")
    return 0


def cmd_jobs_del(cli: Cli, args) -> int:
    state = cli.require_state()
    svc = cli.service_from_state(state)
    if args.job:
        job_id = args.job
        recorded = ["jobs", "del", "--job", job_id]
    else:
        bundle = cli.load_bundle(args.configdir, svc.catalog)
        job_id = bundle.jobs.job_id
        recorded = ["jobs", "del"]
    svc.jobs_del(job_id)
    cli.commit(state, svc, recorded)
    cli.say(f"job deleted: {job_id}")
    return 0


def cmd_status(cli: Cli, args) -> int:
    state = cli.require_state()
    svc = cli.service_from_state(state)
    doc = svc.status()
    doc["shares"] = [
        {"name": s.name, "quota_gib": s.quota_gib, "used_bytes": s.used_bytes,
         "entries": len(s.entries)}
        for s in svc.storage.shares.values()
    ]
    cli.say(json.dumps(doc, indent=2, sort_keys=True))
    return 0


def cmd_ledger_report(cli: Cli, args) -> int:
    state = cli.require_state()
    svc = cli.service_from_state(state)
    rows = billing.report(svc.ledger)
    cli.say(billing.render_report(rows).rstrip("\n"))
    total = svc.ledger.total()
    cli.say(f"total\t{billing.usd_str(total, 2)}")
    if args.export:
        out = _relpath(Path(args.export), cli.root)
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(billing.export_tsv(svc.ledger))
        cli.say(f"ledger exported to {out}")
    return 0


def cmd_scenario_list(cli: Cli, args) -> int:
    for sc in scenarios.builtin_scenarios():
        cli.say(f"{sc.name}\t{sc.pool.dedicated_count} x {sc.pool.sku}\t"
                f"{sc.expected_wall_hours} h\t{sc.plan.value}")
    return 0


def cmd_scenario_run(cli: Cli, args) -> int:
    scenario = _scenario_or_error(args.name)
    download_dir = _relpath(Path(args.download_dir or "output"), cli.root)
    options = ServiceOptions(seed=args.seed)
    svc = statemod.build_service(options)
    run = scenarios.run_scenario(scenario, args.seed, raise_quota=not args.no_quota_raise,
                                 download_to=download_dir, service=svc)
    bundle = scenario.bundle()
    if cli.store.configs_dir.exists():
        shutil.rmtree(cli.store.configs_dir)
    serialize_config_dir(bundle, cli.store.configs_dir)
    cli.store.reset_run_outputs()
    recorded = ["scenario", "run", scenario.name, "--seed", str(args.seed)]
    state = {
        "version": statemod.STATE_VERSION,
        "options": options.to_doc(),
        "catalog_doc": None,
        "workspace": statemod.workspace_to_doc(bundle.workspace),
        "credentials_digest": {
            "storage_key": statemod.sha256_text(bundle.credentials.storage_key),
            "batch_key": statemod.sha256_text(bundle.credentials.batch_key),
        },
        "storage_account_created": True,
        "service": statemod.service_to_doc(svc),
        "transcript": [recorded],
        "ingress_seq": 0,
        "has_completed_run": True,
    }
    cli.store.append_events(svc.event_log.lines())
    cli.store.write_ledger(billing.export_tsv(svc.ledger))
    cli.store.save(state)
    for task_id, task_state in run.task_states().items():
        cli.say(f"task {task_id}: {task_state}")
    cli.say(f"vm cost: {billing.usd_str(run.vm_cost, 4)} USD")
    cli.say(f"total cost: {billing.usd_str(run.total_cost, 4)} USD")
    cli.say(f"event log: {cli.store.events_path}")
    return 0


def _scenario_or_error(name: str) -> scenarios.Scenario:
    try:
        return scenarios.scenario_by_name(name)
    except KeyError as exc:
        raise ValidationError(str(exc)) from None


# ---------------------------------------------------------------------------
# reproducibility packages


def cmd_repro_pack(cli: Cli, args) -> int:
    state = cli.require_state()
    if not state.get("has_completed_run"):
        raise NoCompletedRun("no completed run to pack: run a job or scenario first")
    out = _relpath(Path(args.out or "repro-package.tar.gz"), cli.root)
    config_digests = {
        p.name: sha256_file(p) for p in sorted(cli.store.configs_dir.glob("*.yaml"))
    }
    output_digests = {}
    for name in OUTPUT_ARTIFACTS:
        path = cli.store.dir / name
        if path.exists():
            output_digests[name] = sha256_file(path)
    manifest = {
        "digest_algorithm": DIGEST_ALGORITHM,
        "seed": state["options"]["seed"],
        "transcript": state["transcript"],
        "config_digests": config_digests,
        "output_digests": output_digests,
    }
    out.parent.mkdir(parents=True, exist_ok=True)
    with tarfile.open(out, "w:gz") as tar:
        info = tarfile.TarInfo("manifest.json")
        payload = json.dumps(manifest, indent=1, sort_keys=True).encode() + b"\n"
        info.size = len(payload)
        tar.addfile(info, io.BytesIO(payload))
        for p in sorted(cli.store.configs_dir.glob("*.yaml")):
            tar.add(p, arcname=f"configs/{p.name}")
        if cli.store.ingress_dir.is_dir():
            for p in sorted(cli.store.ingress_dir.glob("*.json")):
                tar.add(p, arcname=f"ingress/{p.name}")
        for name in output_digests:
            tar.add(cli.store.dir / name, arcname=f"outputs/{name}")
    cli.say(f"packed {out} ({len(config_digests)} config digests, "
            f"{len(output_digests)} output digests, seed {manifest['seed']})")
    return 0


def _safe_extract(tar: tarfile.TarFile, dest: Path):
    for member in tar.getmembers():
        target = dest / member.name
        if not str(target.resolve()).startswith(str(dest.resolve())):
            raise CorruptArchive(f"archive member escapes extraction root: {member.name}")
    try:
        tar.extractall(dest, filter="data")
    except TypeError:  # Python without the filter argument
        tar.extractall(dest)


def cmd_repro_verify(cli: Cli, args) -> int:
    archive = _relpath(Path(args.archive), cli.root)
    if not archive.is_file():
        raise CorruptArchive(f"no such archive: {archive}")
    with tempfile.TemporaryDirectory(prefix="batchsim-verify-") as tmp:
        tmpdir = Path(tmp)
        extracted = tmpdir / "archive"
        extracted.mkdir()
        try:
            with tarfile.open(archive, "r:gz") as tar:
                _safe_extract(tar, extracted)
            with open(extracted / "manifest.json") as fh:
                manifest = json.load(fh)
            transcript = manifest["transcript"]
            expected = manifest["output_digests"]
        except (tarfile.TarError, OSError, json.JSONDecodeError, KeyError, EOFError) as exc:
            raise CorruptArchive(f"not a readable package: {exc}") from None
        workdir = tmpdir / "replay"
        workdir.mkdir()
        ingress_src = extracted / "ingress"
        if ingress_src.is_dir():
            shutil.copytree(ingress_src, workdir / STATE_DIR / "ingress")
        configdir = extracted / "configs"
        for argv in transcript:
            replay_argv = _rewrite_for_replay(list(argv), workdir, configdir)
            code = run_command(replay_argv, out=io.StringIO(), err=io.StringIO())
            if code != 0:
                cli.say(f"FAIL: replayed command exited {code}: {' '.join(argv)}")
                return 3
        replay_store = WorkspaceStore(workdir)
        for name in OUTPUT_ARTIFACTS:
            if name not in expected:
                continue
            path = replay_store.dir / name
            actual = sha256_file(path) if path.exists() else "<missing>"
            if actual != expected[name]:
                cli.say(f"FAIL: first divergence at {name}: expected {expected[name]}, "
                        f"got {actual}")
                return 3
        cli.say(f"PASS: {len(expected)} artifacts reproduced "
                f"({DIGEST_ALGORITHM}, seed {manifest['seed']})")
    return 0


_CONFIGDIR_COMMANDS = {("workspace", "init"), ("pool", "add"), ("pool", "del"),
                       ("data", "ingress"), ("jobs", "add"), ("jobs", "del")}


def _rewrite_for_replay(argv: list[str], workdir: Path, configdir: Path) -> list[str]:
    out = ["-C", str(workdir)] + argv
    if tuple(argv[:2]) in _CONFIGDIR_COMMANDS:
        out += ["--configdir", str(configdir)]
    if "--dest" in out:
        i = out.index("--dest")
        if i + 1 < len(out) and os.path.isabs(out[i + 1]):
            out[i + 1] = "replay-download"
    return out


# ---------------------------------------------------------------------------
# dispatch


_HANDLERS = {
    ("workspace", "init", None): cmd_workspace_init,
    ("storage", "account", "create"): cmd_storage_account_create,
    ("share", "create", None): cmd_share_create,
    ("quota", "set", None): cmd_quota_set,
    ("pool", "add", None): cmd_pool_add,
    ("pool", "del", None): cmd_pool_del,
    ("data", "ingress", None): cmd_data_ingress,
    ("data", "download", None): cmd_data_download,
    ("jobs", "add", None): cmd_jobs_add,
    ("jobs", "del", None): cmd_jobs_del,
    ("status", None, None): cmd_status,
    ("ledger", "report", None): cmd_ledger_report,
    ("scenario", "list", None): cmd_scenario_list,
    ("scenario", "run", None): cmd_scenario_run,
    ("repro", "pack", None): cmd_repro_pack,
    ("repro", "verify", None): cmd_repro_verify,
}


def run_command(argv, out=None, err=None) -> int:
    """Execute one CLI command; returns the process exit code."""
    out = out if out is not None else sys.stdout
    err = err if err is not None else sys.stderr
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"usage error: {exc}", file=err)
        return 64
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    key = (getattr(args, "group", None), getattr(args, "cmd", None),
           getattr(args, "sub", None))
    handler = _HANDLERS.get(key)
    if handler is None:
        print(f"usage error: unknown command {key}", file=err)
        return 64
    cli = Cli(Path(args.root), out, err)
    try:
        return handler(cli, args)
    except ValidationError as exc:
        print(f"error: {exc}", file=err)
        return 2
    except SimulationError as exc:
        print(f"simulation error: {exc}", file=err)
        return 3


def main(argv=None) -> int:
    return run_command(sys.argv[1:] if argv is None else argv)


if __name__ == "__main__":
    sys.exit(main())
