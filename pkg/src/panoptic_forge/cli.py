"""Operator command line.

Subcommands cover the full engine lifecycle: register images, annotate,
re-match, clean, sample and serve verification, drive the improvement
loop, and report statistics. Failures exit nonzero with a machine-readable
JSON object on stderr; partial annotation failures additionally carry a
per-image manifest.
"""

from __future__ import annotations

import json
import sys
from dataclasses import replace
from pathlib import Path

import click

from .analytics import (AnalyticsError, corpus_stats, eval_zero_shot,
                        histogram_csv, stats_table)
from .config import ConfigError, load_config
from .datastore import Datastore, DatastoreError, corpus_hash
from .gateway import (AnnotatorGateway, GatewayError, build_mock_gateway,
                      standard_descriptors)
from .geometry import BoundingBox
from .loop import (LoopError, corrections_finetune, identity_finetune,
                   make_scripted_verifier, run_loop)
from .matching import MatchError, TagMatcher, clean_dataset
from .pipeline import AnnotationPipeline, PipelineConfig
from .verification import TaskStore, VerificationError
from .wire import AnnotatorRequest, WireError

_OPERATOR_ERRORS = (AnalyticsError, ConfigError, DatastoreError, GatewayError,
                    LoopError, MatchError, VerificationError, WireError,
                    OSError, ValueError)

IMAGE_EXTENSIONS = {".jpg", ".jpeg", ".png", ".bmp", ".gif", ".webp"}


def _fail(kind: str, message: str, extra: dict | None = None) -> None:
    payload = {"error": {"type": kind, "message": message}}
    if extra:
        payload.update(extra)
    click.echo(json.dumps(payload, sort_keys=True), err=True)
    sys.exit(1)


def _emit(payload: dict) -> None:
    click.echo(json.dumps(payload, indent=2, sort_keys=True))


def _datastore(cfg: dict) -> Datastore:
    return Datastore(cfg["datastore"], shard_count=cfg["shard_count"])


def _load_bias(cfg: dict) -> dict | None:
    if not cfg.get("bias_file"):
        return None
    return json.loads(Path(cfg["bias_file"]).read_text(encoding="utf-8"))


def _gateway(cfg: dict) -> AnnotatorGateway:
    endpoint = cfg["annotator_endpoint"]
    if endpoint.startswith("mock://"):
        return build_mock_gateway(seed=cfg["seed"], bias=_load_bias(cfg))
    gateway = AnnotatorGateway()
    for desc in standard_descriptors(endpoint):
        gateway.register(desc)
    return gateway


def _matcher(gateway: AnnotatorGateway, cfg: dict) -> TagMatcher:
    return TagMatcher(gateway, gamma=cfg["gamma"], top_k=cfg["top_k"])


def _manifest_path(cfg: dict) -> Path:
    return Path(cfg["datastore"]) / "images.json"


def _read_manifest(cfg: dict) -> list:
    path = _manifest_path(cfg)
    if not path.exists():
        return []
    return json.loads(path.read_text(encoding="utf-8")).get("images", [])


def _pipeline_config(cfg: dict) -> PipelineConfig:
    return PipelineConfig(t_iou=cfg["t_iou"], gamma=cfg["gamma"],
                          top_k=cfg["top_k"], crop_padding=cfg["crop_padding"])


def _verify_state_path(cfg: dict) -> Path:
    return Path(cfg["datastore"]) / "verify_tasks.json"


def _parse_addr(addr: str) -> tuple:
    host, _, port = addr.rpartition(":")
    if not host or not port.isdigit():
        raise ConfigError(f"--addr must be host:port, got {addr!r}")
    return host, int(port)


@click.group()
@click.option("--config", "-c", "config_path", default=None,
              help="Path to JSON config (or set PANOPTIC_FORGE_CONFIG).")
@click.pass_context
def main(ctx: click.Context, config_path) -> None:
    """Region annotation engine: annotate, verify, iterate."""
    try:
        ctx.obj = load_config(config_path)
    except ConfigError as exc:
        _fail("ConfigError", str(exc))


@main.command()
@click.argument("source", type=click.Path(exists=True))
@click.pass_obj
def ingest(cfg: dict, source: str) -> None:
    """Register images from a directory (or a newline-delimited list file)."""
    try:
        src = Path(source)
        if src.is_dir():
            refs = sorted(str(p.relative_to(src))
                          for p in src.rglob("*")
                          if p.suffix.lower() in IMAGE_EXTENSIONS)
        else:
            refs = [line.strip() for line in
                    src.read_text(encoding="utf-8").splitlines()
                    if line.strip()]
        if not refs:
            _fail("IngestError", f"no images found under {source}")
        existing = _read_manifest(cfg)
        merged = sorted(set(existing) | set(refs))
        path = _manifest_path(cfg)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps({"images": merged}, indent=2),
                        encoding="utf-8")
        _emit({"registered": len(refs), "total": len(merged)})
    except _OPERATOR_ERRORS as exc:
        _fail(type(exc).__name__, str(exc))


@main.command()
@click.option("--jobs", type=int, default=None, help="Parallel image workers.")
@click.pass_obj
def annotate(cfg: dict, jobs) -> None:
    """Localize, tag, match, and describe every registered image."""
    try:
        refs = _read_manifest(cfg)
        if not refs:
            _fail("AnnotateError", "no images registered; run ingest first")
        ds = _datastore(cfg)
        verified = {r.region_id
                    for r in ds.scan(verification_state="verified")}
        gateway = _gateway(cfg)
        pipeline = AnnotationPipeline(gateway, _pipeline_config(cfg))
        check = (lambda rid: rid in verified) if verified else None
        results, failures = pipeline.annotate(
            refs, jobs=jobs or cfg["jobs"], skip_region_check=check)
        total = 0
        for ann in results:
            if ann.regions:
                total += ds.append_regions(ann.regions)
        summary = {
            "images": len(results),
            "regions": total,
            "corpus_hash": corpus_hash(ds.scan()),
        }
        if failures:
            click.echo(json.dumps({
                "error": {"type": "PartialFailure",
                          "message": f"{len(failures)} image(s) failed"},
                "failures": failures}, sort_keys=True), err=True)
            sys.exit(1)
        _emit(summary)
    except _OPERATOR_ERRORS as exc:
        _fail(type(exc).__name__, str(exc))


@main.command()
@click.pass_obj
def match(cfg: dict) -> None:
    """Re-score candidate tags for all unverified regions."""
    try:
        ds = _datastore(cfg)
        regions = [r for r in ds.scan()
                   if r.verification.state != "verified"]
        if not regions:
            _fail("MatchError", "nothing to match: corpus empty or all verified")
        matcher = _matcher(_gateway(cfg), cfg)
        matched, failures = matcher.match_corpus(regions)
        previous = {r.region_id: r.generation for r in regions}
        bumped = [replace(m, generation=previous[m.region_id] + 1)
                  for m in matched]
        ds.append_regions(bumped)
        summary = {"matched": len(bumped),
                   "corpus_hash": corpus_hash(ds.scan())}
        if failures:
            click.echo(json.dumps({
                "error": {"type": "PartialFailure",
                          "message": f"{len(failures)} region(s) failed"},
                "failures": {r.region_id: reason for r, reason in failures}},
                sort_keys=True), err=True)
            sys.exit(1)
        _emit(summary)
    except _OPERATOR_ERRORS as exc:
        _fail(type(exc).__name__, str(exc))


@main.command()
@click.option("--keep", type=int, default=None,
              help="Survivors per image and scale bucket.")
@click.option("--snapshot-name", default="cleaned", show_default=True)
@click.pass_obj
def clean(cfg: dict, keep, snapshot_name: str) -> None:
    """Keep the best regions per image/bucket and re-rank with masks."""
    try:
        ds = _datastore(cfg)
        regions = ds.scan()
        if not regions:
            _fail("CleanError", "corpus is empty")
        matcher = _matcher(_gateway(cfg), cfg)
        survivors = clean_dataset(regions, matcher,
                                  keep=keep or cfg["clean_keep"])
        previous = {r.region_id: r.generation for r in regions}
        updated = [replace(s, generation=previous[s.region_id] + 1)
                   for s in survivors]
        ds.append_regions(updated)
        manifest = ds.snapshot(snapshot_name, iteration=0,
                               matcher_descriptor={"source": "clean"},
                               regions=updated)
        _emit({"kept": len(updated), "dropped": len(regions) - len(updated),
               "snapshot": snapshot_name,
               "corpus_hash": manifest["corpus_hash"]})
    except _OPERATOR_ERRORS as exc:
        _fail(type(exc).__name__, str(exc))


@main.command("sample-verify")
@click.option("--budget", type=int, default=None,
              help="Regions to queue for human verification.")
@click.option("--round", "round_id", type=int, default=0, show_default=True)
@click.pass_obj
def sample_verify(cfg: dict, budget, round_id: int) -> None:
    """Queue verification tasks, rarest concepts first."""
    try:
        ds = _datastore(cfg)
        store = TaskStore(ds, lease_ttl=cfg["lease_ttl"],
                          package_size=cfg["package_size"], seed=cfg["seed"])
        state_path = _verify_state_path(cfg)
        store.load(state_path)
        created = store.sample_for_verification(
            budget or cfg["verify_budget"], round_id=round_id)
        store.save(state_path)
        _emit({"sampled_tasks": len(created),
               "tag_filter": sum(1 for t in created if t.kind == "tag_filter"),
               "vqa_check": sum(1 for t in created if t.kind == "vqa_check"),
               "state": str(state_path)})
    except _OPERATOR_ERRORS as exc:
        _fail(type(exc).__name__, str(exc))


@main.command("serve-verify")
@click.option("--addr", default="127.0.0.1:8081", show_default=True)
@click.pass_obj
def serve_verify(cfg: dict, addr: str) -> None:
    """Serve the verification HTTP API for workbench clients."""
    try:
        import uvicorn

        from .verify_api import make_app
        host, port = _parse_addr(addr)
        ds = _datastore(cfg)
        store = TaskStore(ds, lease_ttl=cfg["lease_ttl"],
                          package_size=cfg["package_size"], seed=cfg["seed"])
        state_path = _verify_state_path(cfg)
        store.load(state_path)
        app = make_app(store, worker_tokens=cfg["worker_tokens"],
                       expert_tokens=cfg["expert_tokens"])

        @app.middleware("http")
        async def persist_after_writes(request, call_next):
            response = await call_next(request)
            if request.method == "POST" and response.status_code < 500:
                store.save(state_path)
            return response

        uvicorn.run(app, host=host, port=port, log_level="warning")
    except _OPERATOR_ERRORS as exc:
        _fail(type(exc).__name__, str(exc))


@main.command("serve-mocks")
@click.option("--seed", type=int, default=None, help="Scene synthesis seed.")
@click.option("--addr", default="127.0.0.1:8099", show_default=True)
@click.pass_obj
def serve_mocks(cfg: dict, seed, addr: str) -> None:
    """Serve the synthetic annotators over HTTP."""
    try:
        import uvicorn

        from .mock_server import make_mock_app
        host, port = _parse_addr(addr)
        app = make_mock_app(seed=seed if seed is not None else cfg["seed"],
                            bias=_load_bias(cfg))
        uvicorn.run(app, host=host, port=port, log_level="warning")
    except _OPERATOR_ERRORS as exc:
        _fail(type(exc).__name__, str(exc))


@main.command()
@click.option("--iterations", type=int, required=True)
@click.option("--workdir", default="forge-loop", show_default=True)
@click.option("--budget", type=int, default=0, show_default=True,
              help="Verification regions per round (0 skips verification).")
@click.option("--truth", type=click.Path(exists=True), default=None,
              help="JSON region_id->label map driving the scripted verifier.")
@click.pass_obj
def loop(cfg: dict, iterations: int, workdir: str, budget: int, truth) -> None:
    """Run annotate / verify / re-annotate iterations."""
    try:
        refs = _read_manifest(cfg)
        if not refs:
            _fail("LoopError", "no images registered; run ingest first")
        verifier = None
        finetune = identity_finetune
        if truth:
            table = json.loads(Path(truth).read_text(encoding="utf-8"))
            verifier = make_scripted_verifier(table)
            finetune = corrections_finetune
        artifacts = run_loop(
            workdir, refs, iterations,
            config=_pipeline_config(cfg),
            initial_model={"seed": cfg["seed"], "bias": _load_bias(cfg) or {}},
            verifier=verifier, verify_budget=budget,
            finetune_hook=finetune, jobs=cfg["jobs"])
        _emit({"snapshots": artifacts.snapshots,
               "model_refs": len(artifacts.model_refs),
               "rounds": artifacts.rounds,
               "workdir": workdir})
    except _OPERATOR_ERRORS as exc:
        _fail(type(exc).__name__, str(exc))


@main.command()
@click.option("--snapshot", "snapshot_name", default=None,
              help="Report over a named snapshot instead of the live corpus.")
@click.option("--format", "fmt", type=click.Choice(["json", "table", "csv"]),
              default="json", show_default=True)
@click.option("--out", type=click.Path(), default=None)
@click.pass_obj
def stats(cfg: dict, snapshot_name, fmt: str, out) -> None:
    """Corpus statistics report."""
    try:
        ds = _datastore(cfg)
        if snapshot_name:
            _, regions = ds.load_snapshot(snapshot_name)
        else:
            regions = ds.scan()
        report = corpus_stats(regions)
        if fmt == "json":
            text = json.dumps(report, indent=2, sort_keys=True) + "\n"
        elif fmt == "table":
            text = stats_table(report)
        else:
            text = histogram_csv(report)
        if out:
            Path(out).write_text(text, encoding="utf-8")
            _emit({"written": out})
        else:
            click.echo(text, nl=False)
    except _OPERATOR_ERRORS as exc:
        _fail(type(exc).__name__, str(exc))


@main.command("eval")
@click.option("--gt", "gt_path", type=click.Path(exists=True), required=True,
              help="JSON file: {classes: [...], regions: [{image_ref, bbox, label}]}")
@click.pass_obj
def eval_cmd(cfg: dict, gt_path: str) -> None:
    """Zero-shot region recognition over ground-truth boxes."""
    try:
        data = json.loads(Path(gt_path).read_text(encoding="utf-8"))
        classes = data["classes"]
        triples = [(r["image_ref"], BoundingBox.from_list(r["bbox"]), r["label"])
                   for r in data["regions"]]
        gateway = _gateway(cfg)

        def score_fn(image_ref, bbox, names):
            req = AnnotatorRequest(role="region_text_matcher",
                                   image_ref=image_ref,
                                   bbox=bbox.as_list(),
                                   candidates=list(names))
            return gateway.call("region_text_matcher", req).scores

        _emit(eval_zero_shot(triples, classes, score_fn))
    except KeyError as exc:
        _fail("EvalError", f"ground-truth file missing field {exc}")
    except _OPERATOR_ERRORS as exc:
        _fail(type(exc).__name__, str(exc))


if __name__ == "__main__":
    main()
