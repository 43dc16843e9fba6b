"""The annotate / verify / re-annotate iteration driver.

One iteration: snapshot the corpus, hand it to the train or fine-tune
hook (which returns the model reference used for the next pass), run a
scripted or live verification round, then re-annotate everything except
human-verified regions, which are carried forward untouched.

Every stage ends with a durable artifact (snapshot or state-file entry),
so a crash between stages resumes exactly where it left off and
reproduces the same corpus bytes.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Dict, List, Mapping, Optional, Sequence

from .datastore import Datastore
from .gateway import build_mock_gateway
from .pipeline import AnnotationPipeline, PipelineConfig
from .records import Region, contains_phrase
from .verification import TaskStore, VerificationTask


class LoopError(Exception):
    pass


@dataclass
class HookContext:
    iteration: int
    snapshot: str
    datastore: Datastore
    model_ref: dict
    verified_regions: List[Region] = field(default_factory=list)


def identity_train(ctx: HookContext) -> dict:
    return dict(ctx.model_ref)


def identity_finetune(ctx: HookContext) -> dict:
    return dict(ctx.model_ref)


def corrections_finetune(ctx: HookContext) -> dict:
    """Reference fine-tune hook for the mock matcher.

    Human-rejected (region, tag) pairs are removed from the matcher's
    score-override table, so the next annotation pass no longer repeats
    the mistake even on regions it re-scores from scratch.
    """
    from .mocks import region_key
    bias = dict(ctx.model_ref.get("bias") or {})
    for region in ctx.verified_regions:
        key = region_key(region.image_id, region.bbox)
        for text in region.verification.rejected:
            bias.pop(f"{key}::{text}", None)
    out = dict(ctx.model_ref)
    out["bias"] = bias
    return out


def make_scripted_verifier(truth: Mapping[str, str]) -> Callable[[VerificationTask], dict]:
    """Headless annotator for CI: keeps candidates naming the true object,
    rejects the rest, and waves all QA pairs through.
    """
    def answer(task: VerificationTask) -> dict:
        if task.kind == "tag_filter":
            expected = truth.get(task.region_id)
            cands = task.payload["candidates"]
            if expected is None:
                return {"selected": list(cands)}
            keep = [c for c in cands if contains_phrase(c, expected)]
            return {"selected": keep}
        if task.payload.get("stage") == 2:
            return {"correction": "corrected by scripted verifier"}
        return {"outcome": "correct"}
    return answer


def run_verification_round(store: TaskStore, budget: int, round_id: int,
                           verifier: Callable[[VerificationTask], dict],
                           worker_id: str = "scripted-annotator",
                           expert_id: str = "scripted-expert") -> dict:
    """Sample, drain, and expert-review one headless verification round."""
    sampled = store.sample_for_verification(budget, round_id=round_id)
    submitted = 0
    while True:
        task = store.lease(worker_id)
        if task is None:
            break
        store.submit(task.task_id, worker_id, verifier(task))
        submitted += 1
    reviewed = []
    for pkg in list(store.open_packages()):
        result = store.review_package(pkg.package_id, expert_id,
                                      [True] * len(pkg.task_ids))
        reviewed.append((result.package_id, result.state))
    return {"sampled_tasks": len(sampled), "submitted": submitted,
            "packages": reviewed, "metrics": store.metrics()}


def default_gateway_factory(model_ref: dict):
    return build_mock_gateway(seed=model_ref.get("seed", 0),
                              bias=model_ref.get("bias") or None)


@dataclass
class LoopArtifacts:
    snapshots: List[str]
    model_refs: List[dict]
    rounds: List[dict]
    datastore: Datastore


class LoopRunner:
    """Drives n data-engine iterations over one datastore."""

    def __init__(self, workdir, image_refs: Sequence[str],
                 config: Optional[PipelineConfig] = None,
                 gateway_factory: Optional[Callable[[dict], object]] = None,
                 train_hook: Callable[[HookContext], dict] = identity_train,
                 finetune_hook: Callable[[HookContext], dict] = identity_finetune,
                 verifier: Optional[Callable[[VerificationTask], dict]] = None,
                 verify_budget: int = 0, include_vqa: bool = True,
                 initial_model: Optional[dict] = None, jobs: int = 1,
                 on_stage: Optional[Callable[[str], None]] = None):
        self.workdir = Path(workdir)
        self.workdir.mkdir(parents=True, exist_ok=True)
        self.image_refs = list(image_refs)
        self.config = config or PipelineConfig()
        self.gateway_factory = gateway_factory or default_gateway_factory
        self.train_hook = train_hook
        self.finetune_hook = finetune_hook
        self.verifier = verifier
        self.verify_budget = verify_budget
        self.include_vqa = include_vqa
        self.initial_model = dict(initial_model or {"seed": 0, "bias": {}})
        self.jobs = jobs
        self.on_stage = on_stage
        self.datastore = Datastore(self.workdir / "datastore")
        self.state_path = self.workdir / "loop_state.json"
        self.state = self._load_state()

    # -- durable state -----------------------------------------------------

    def _load_state(self) -> dict:
        if self.state_path.exists():
            return json.loads(self.state_path.read_text(encoding="utf-8"))
        return {"stages": [], "model_refs": [], "rounds": [],
                "sampled_pairs": []}

    def _save_state(self) -> None:
        tmp = self.state_path.with_suffix(".tmp")
        tmp.write_text(json.dumps(self.state, indent=2, sort_keys=True),
                       encoding="utf-8")
        os.replace(tmp, self.state_path)

    def _done(self, stage: str) -> bool:
        return stage in self.state["stages"]

    def _finish(self, stage: str) -> None:
        self.state["stages"].append(stage)
        self._save_state()
        if self.on_stage is not None:
            self.on_stage(stage)

    # -- stages -----------------------------------------------------------

    def _current_model(self) -> dict:
        refs = self.state["model_refs"]
        return dict(refs[-1]) if refs else dict(self.initial_model)

    def _verified_ids(self) -> set:
        return {r.region_id
                for r in self.datastore.scan(verification_state="verified")}

    def _annotate_pass(self, snapshot_name: str, iteration: int,
                       model_ref: dict) -> None:
        verified = self._verified_ids()
        gateway = self.gateway_factory(model_ref)
        cfg = replace(self.config, generation=iteration)
        pipeline = AnnotationPipeline(gateway, cfg)
        check = (lambda rid: rid in verified) if verified else None
        results, failures = pipeline.annotate(self.image_refs, jobs=self.jobs,
                                              skip_region_check=check)
        if failures:
            raise LoopError(f"annotation pass {snapshot_name} failed for "
                            f"{sorted(failures)}: halting at last snapshot")
        for ann in results:
            if ann.regions:
                self.datastore.append_regions(ann.regions)
        self.datastore.snapshot(snapshot_name, iteration=iteration,
                                matcher_descriptor=model_ref)

    def _verify_pass(self, iteration: int) -> None:
        name = f"A{iteration}-verified"
        round_info: dict = {"iteration": iteration, "skipped": True}
        if self.verify_budget > 0:
            if self.verifier is None:
                raise LoopError("verify_budget set but no verifier supplied")
            store = TaskStore(self.datastore, include_vqa=self.include_vqa,
                              seed=self.initial_model.get("seed", 0))
            store.import_state({"sampled_pairs": self.state["sampled_pairs"]})
            round_info = run_verification_round(
                store, self.verify_budget, iteration, self.verifier)
            round_info["iteration"] = iteration
            self.state["sampled_pairs"] = store.export_state()["sampled_pairs"]
        self.state["rounds"].append(
            {k: v for k, v in round_info.items() if k != "metrics"})
        self.datastore.snapshot(name, iteration=iteration,
                                matcher_descriptor=self._current_model(),
                                metrics=round_info.get("metrics"))

    def run(self, iterations: int) -> LoopArtifacts:
        if iterations < 1:
            raise LoopError("iterations must be >= 1")
        if not self._done("A0"):
            self._annotate_pass("A0", 0, self.initial_model)
            self._finish("A0")
        if not self._done("train"):
            ctx = HookContext(iteration=0, snapshot="A0",
                              datastore=self.datastore,
                              model_ref=dict(self.initial_model))
            self.state["model_refs"].append(self.train_hook(ctx))
            self._finish("train")
        for i in range(iterations):
            verify_stage = f"verify-{i}"
            if not self._done(verify_stage):
                self._verify_pass(i)
                self._finish(verify_stage)
            finetune_stage = f"finetune-{i}"
            if not self._done(finetune_stage):
                verified = self.datastore.scan(verification_state="verified")
                ctx = HookContext(iteration=i, snapshot=f"A{i}-verified",
                                  datastore=self.datastore,
                                  model_ref=self._current_model(),
                                  verified_regions=verified)
                self.state["model_refs"].append(self.finetune_hook(ctx))
                self._finish(finetune_stage)
            annotate_stage = f"A{i + 1}"
            if not self._done(annotate_stage):
                self._annotate_pass(annotate_stage, i + 1, self._current_model())
                self._finish(annotate_stage)
        names = ["A0"] + [n for i in range(iterations)
                          for n in (f"A{i}-verified", f"A{i + 1}")]
        return LoopArtifacts(snapshots=names,
                             model_refs=[dict(m) for m in self.state["model_refs"]],
                             rounds=list(self.state["rounds"]),
                             datastore=self.datastore)


def run_loop(workdir, image_refs: Sequence[str], iterations: int,
             **kwargs) -> LoopArtifacts:
    return LoopRunner(workdir, image_refs, **kwargs).run(iterations)
