"""Human verification workflow: sampling, task leasing, review packages.

Tasks move through a fixed lifecycle: pending → leased → submitted →
reviewed, with two loops back: an expired lease returns the task to
pending, and a failed expert review requeues every task in the package
(requeued → leased, but never to the worker whose package failed).
Submitting applies the human verdict to the region record immediately, so
a crashed review session can never lose accepted work.
"""

from __future__ import annotations

import json
import math
import os
import random
import threading
import time
from copy import deepcopy
from pathlib import Path
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Set, Tuple

from .datastore import Datastore
from .records import (QAPair, Region, UNANSWERABLE_ANSWER,
                      WRONG_SEMANTIC_ANSWER, VerificationState, stable_digest)

TASK_KINDS = ("tag_filter", "vqa_check")
TASK_STATES = ("pending", "leased", "submitted", "reviewed", "requeued")
VQA_OUTCOMES = ("correct", "wrong_answer", "unanswerable", "wrong_semantic")

ALLOWED_TRANSITIONS = frozenset({
    ("pending", "leased"),
    ("leased", "pending"),      # lease expiry
    ("leased", "submitted"),
    ("submitted", "reviewed"),  # package passed
    ("submitted", "requeued"),  # package failed
    ("requeued", "leased"),
})

SAMPLE_MIN = 6
SAMPLE_MAX = 90
PASS_THRESHOLD = 0.95
DEFAULT_PACKAGE_SIZE = 100
DEFAULT_LEASE_TTL = 900.0


class VerificationError(Exception):
    pass


class TransitionError(VerificationError):
    """Attempted move outside the lifecycle DAG."""


class LeaseError(VerificationError):
    """Lease missing, expired, or held by another worker."""


class ResultError(VerificationError):
    """Submitted result does not fit the task's schema."""


def sample_size(count: int, rank: int, total_concepts: int) -> int:
    """Regions to sample for a concept at frequency rank `rank` (0 = rarest).

    Interpolates between 6 at the rare end and 90 at the frequent end on a
    log-rank curve, so mid-tail concepts lean toward the small end the way
    the corpus distribution does. Never more than the concept has.
    """
    if total_concepts <= 1:
        g = 1.0
    else:
        f = rank / (total_concepts - 1)
        g = math.log(1.0 + f * (total_concepts - 1)) / math.log(total_concepts)
    want = round(SAMPLE_MIN + (SAMPLE_MAX - SAMPLE_MIN) * g)
    return min(count, want)


@dataclass
class VerificationTask:
    task_id: str
    kind: str
    region_id: str
    payload: dict
    concept: Optional[str] = None
    state: str = "pending"
    created_seq: int = 0
    lease_worker: Optional[str] = None
    lease_expiry: Optional[float] = None
    result: Optional[dict] = None
    submitted_by: Optional[str] = None
    package_id: Optional[str] = None
    excluded_workers: Set[str] = field(default_factory=set)

    def to_payload(self) -> dict:
        lease = None
        if self.state == "leased":
            lease = {"worker_id": self.lease_worker, "expires_at": self.lease_expiry}
        return {
            "task_id": self.task_id,
            "kind": self.kind,
            "region_id": self.region_id,
            "payload": self.payload,
            "state": self.state,
            "lease": lease,
            "result": self.result,
            "package_id": self.package_id,
        }


@dataclass
class ReviewPackage:
    package_id: str
    task_ids: List[str] = field(default_factory=list)
    state: str = "open"  # open | passed | failed
    expert_id: Optional[str] = None
    accuracy: Optional[float] = None

    def to_payload(self) -> dict:
        return {
            "package_id": self.package_id,
            "task_ids": list(self.task_ids),
            "state": self.state,
            "expert_id": self.expert_id,
            "accuracy": self.accuracy,
        }


class TaskStore:
    """In-memory task state over a datastore of region records."""

    def __init__(self, datastore: Optional[Datastore] = None,
                 lease_ttl: float = DEFAULT_LEASE_TTL,
                 package_size: int = DEFAULT_PACKAGE_SIZE,
                 include_vqa: bool = True,
                 seed: int = 0, now_fn=time.time):
        self.datastore = datastore
        self.lease_ttl = lease_ttl
        self.package_size = package_size
        self.include_vqa = include_vqa
        self.seed = seed
        self.now_fn = now_fn
        self.tasks: Dict[str, VerificationTask] = {}
        self.packages: Dict[str, ReviewPackage] = {}
        self.sampled_pairs: Set[Tuple[str, str]] = set()
        self.transition_log: List[Tuple[str, str, str]] = []
        self._seq = 0
        self._package_seq = 0
        self._lock = threading.Lock()

    def __deepcopy__(self, memo):
        clone = TaskStore(datastore=self.datastore, lease_ttl=self.lease_ttl,
                          package_size=self.package_size,
                          include_vqa=self.include_vqa, seed=self.seed,
                          now_fn=self.now_fn)
        clone.tasks = deepcopy(self.tasks, memo)
        clone.packages = deepcopy(self.packages, memo)
        clone.sampled_pairs = set(self.sampled_pairs)
        clone.transition_log = list(self.transition_log)
        clone._seq = self._seq
        clone._package_seq = self._package_seq
        return clone

    # -- lifecycle core ---------------------------------------------------

    def _transition(self, task: VerificationTask, to_state: str) -> None:
        edge = (task.state, to_state)
        if edge not in ALLOWED_TRANSITIONS:
            raise TransitionError(
                f"task {task.task_id}: {task.state} -> {to_state} not allowed")
        self.transition_log.append((task.task_id, task.state, to_state))
        task.state = to_state

    def _reap_expired(self) -> None:
        now = self.now_fn()
        for task in self.tasks.values():
            if task.state == "leased" and task.lease_expiry is not None \
                    and task.lease_expiry <= now:
                self._transition(task, "pending")
                task.lease_worker = None
                task.lease_expiry = None

    def state_counts(self) -> Dict[str, int]:
        with self._lock:
            counts = {s: 0 for s in TASK_STATES}
            for t in self.tasks.values():
                counts[t.state] += 1
            return counts

    # -- task creation ---------------------------------------------------

    def _new_task(self, kind: str, region: Region, payload: dict,
                  concept: Optional[str]) -> VerificationTask:
        self._seq += 1
        task = VerificationTask(
            task_id=f"t-{self._seq:06d}", kind=kind, region_id=region.region_id,
            payload=payload, concept=concept, created_seq=self._seq)
        self.tasks[task.task_id] = task
        return task

    def _tasks_for_region(self, region: Region, concept: str) -> List[VerificationTask]:
        created = [self._new_task("tag_filter", region, {
            "candidates": [t.text for t in region.matched_tags],
            "image_ref": region.image_id,
            "bbox": region.bbox.as_list(),
        }, concept)]
        if self.include_vqa:
            for i, qa in enumerate(region.qa_pairs):
                created.append(self._new_task("vqa_check", region, {
                    "q": qa.question, "a": qa.answer,
                    "image_ref": region.image_id,
                    "bbox": region.bbox.as_list(),
                    "stage": 1, "qa_index": i,
                }, concept))
        return created

    def sample_for_verification(self, budget: int,
                                round_id: int = 0) -> List[VerificationTask]:
        """Create tasks for up to `budget` regions, rarest concepts first.

        A region already verified, or already drawn for the same concept in
        an earlier round, is not eligible again.
        """
        if self.datastore is None:
            raise VerificationError("sampling requires a datastore")
        if budget <= 0:
            raise VerificationError("budget must be positive")
        index = self.datastore.concept_index()
        if len(index) == 0:
            return []
        regions = {r.region_id: r for r in self.datastore.scan()}
        ranked = index.by_rarity()
        total = len(ranked)
        created: List[VerificationTask] = []
        with self._lock:
            remaining = budget
            for rank, (concept, count) in enumerate(ranked):
                if remaining <= 0:
                    break
                eligible = [rid for rid in index.postings[concept]
                            if (concept, rid) not in self.sampled_pairs
                            and regions[rid].verification.state != "verified"]
                if not eligible:
                    continue
                n = min(sample_size(count, rank, total), len(eligible), remaining)
                if n <= 0:
                    continue
                rng = random.Random(int(stable_digest(
                    self.seed, "sample", round_id, concept)[:16], 16))
                chosen = rng.sample(sorted(eligible), n)
                for rid in chosen:
                    self.sampled_pairs.add((concept, rid))
                    created.extend(self._tasks_for_region(regions[rid], concept))
                remaining -= n
        return created

    # -- leasing ---------------------------------------------------------

    def lease(self, worker_id: str, kind: Optional[str] = None) -> Optional[VerificationTask]:
        """FIFO lease of the oldest available task this worker may touch."""
        with self._lock:
            self._reap_expired()
            candidates = [t for t in self.tasks.values()
                          if t.state in ("pending", "requeued")
                          and worker_id not in t.excluded_workers
                          and (kind is None or t.kind == kind)]
            if not candidates:
                return None
            task = min(candidates, key=lambda t: t.created_seq)
            self._transition(task, "leased")
            task.lease_worker = worker_id
            task.lease_expiry = self.now_fn() + self.lease_ttl
            return task

    def get_task(self, task_id: str) -> VerificationTask:
        with self._lock:
            try:
                return self.tasks[task_id]
            except KeyError:
                raise VerificationError(f"no task {task_id!r}") from None

    # -- submission ---------------------------------------------------------

    def submit(self, task_id: str, worker_id: str, result: dict) -> VerificationTask:
        with self._lock:
            task = self.tasks.get(task_id)
            if task is None:
                raise VerificationError(f"no task {task_id!r}")
            self._reap_expired()
            if task.state != "leased":
                raise LeaseError(f"task {task_id} is {task.state}, not leased")
            if task.lease_worker != worker_id:
                raise LeaseError(f"task {task_id} leased by {task.lease_worker!r}, "
                                 f"not {worker_id!r}")
            self._validate_result(task, result)
            self._transition(task, "submitted")
            task.result = dict(result)
            task.submitted_by = worker_id
            task.lease_worker = None
            task.lease_expiry = None
            self._assign_package(task)
            # May spawn a stage-2 correction task; it enters the queue pending.
            self._apply_result(task)
            return task

    def _validate_result(self, task: VerificationTask, result: dict) -> None:
        if not isinstance(result, dict):
            raise ResultError("result must be an object")
        if task.kind == "tag_filter":
            selected = result.get("selected")
            if not isinstance(selected, list):
                raise ResultError("tag_filter result needs a 'selected' list")
            shown = set(task.payload["candidates"])
            bad = [s for s in selected if s not in shown]
            if bad:
                raise ResultError(f"selected tags not shown: {bad}")
            return
        if task.payload.get("stage") == 2:
            correction = result.get("correction")
            if not isinstance(correction, str) or not correction.strip():
                raise ResultError("correction stage needs non-empty 'correction'")
            return
        outcome = result.get("outcome")
        if outcome not in VQA_OUTCOMES:
            raise ResultError(f"vqa outcome must be one of {VQA_OUTCOMES}")
        if outcome != "wrong_answer" and result.get("correction"):
            raise ResultError("correction text only accompanies wrong_answer")

    def _assign_package(self, task: VerificationTask) -> None:
        open_pkg = None
        for pkg in self.packages.values():
            if pkg.state == "open" and len(pkg.task_ids) < self.package_size:
                open_pkg = pkg
                break
        if open_pkg is None:
            self._package_seq += 1
            open_pkg = ReviewPackage(package_id=f"pkg-{self._package_seq:04d}")
            self.packages[open_pkg.package_id] = open_pkg
        open_pkg.task_ids.append(task.task_id)
        task.package_id = open_pkg.package_id

    # -- applying results to region records -------------------------------

    def _apply_result(self, task: VerificationTask) -> List[VerificationTask]:
        spawned: List[VerificationTask] = []
        if self.datastore is None:
            return spawned
        region = self.datastore.get_region(task.region_id)
        if region is None:
            raise VerificationError(f"region {task.region_id} not in datastore")

        if task.kind == "tag_filter":
            selected = list(task.result["selected"])
            shown = list(task.payload["candidates"])
            rejected = [c for c in shown if c not in selected]
            updated = replace(
                region,
                candidate_tags=tuple(t for t in region.candidate_tags
                                     if t.text not in rejected),
                matched_tags=tuple(t for t in region.matched_tags
                                   if t.text not in rejected),
                verification=VerificationState(
                    state="verified", confirmed=tuple(selected),
                    rejected=tuple(rejected), worker_id=task.submitted_by,
                    round=None),
                generation=region.generation + 1)
            self.datastore.append_regions([updated])
            return spawned

        qa_index = task.payload["qa_index"]
        if qa_index >= len(region.qa_pairs):
            raise VerificationError(f"region {task.region_id} lost qa {qa_index}")
        qa = region.qa_pairs[qa_index]
        if task.payload.get("stage") == 2:
            new_qa = QAPair(question=qa.question,
                            answer=task.result["correction"],
                            status="human_corrected")
        else:
            outcome = task.result["outcome"]
            if outcome == "correct":
                new_qa = replace(qa, status="correct")
            elif outcome == "wrong_answer":
                new_qa = replace(qa, status="wrong_answer")
                correction = self._new_task("vqa_check", region, {
                    "q": qa.question, "a": qa.answer,
                    "image_ref": region.image_id,
                    "bbox": region.bbox.as_list(),
                    "stage": 2, "qa_index": qa_index,
                }, task.concept)
                spawned.append(correction)
            elif outcome == "unanswerable":
                new_qa = QAPair(question=qa.question, answer=UNANSWERABLE_ANSWER,
                                status="unanswerable")
            else:
                new_qa = QAPair(question=qa.question, answer=WRONG_SEMANTIC_ANSWER,
                                status="wrong_semantic")
        pairs = list(region.qa_pairs)
        pairs[qa_index] = new_qa
        updated = replace(region, qa_pairs=tuple(pairs),
                          generation=region.generation + 1)
        self.datastore.append_regions([updated])
        return spawned

    # -- review ---------------------------------------------------------

    def open_packages(self) -> List[ReviewPackage]:
        with self._lock:
            return [p for p in self.packages.values() if p.state == "open"]

    def get_package(self, package_id: str) -> ReviewPackage:
        with self._lock:
            try:
                return self.packages[package_id]
            except KeyError:
                raise VerificationError(f"no package {package_id!r}") from None

    def review_package(self, package_id: str, expert_id: str,
                       verdicts: Sequence[bool]) -> ReviewPackage:
        """Apply the 95% rule. Failure requeues every member task away
        from its original annotator; their region edits stand until the
        re-verification overwrites them.
        """
        with self._lock:
            pkg = self.packages.get(package_id)
            if pkg is None:
                raise VerificationError(f"no package {package_id!r}")
            if pkg.state != "open":
                raise VerificationError(f"package {package_id} already {pkg.state}")
            if len(verdicts) != len(pkg.task_ids):
                raise ResultError(
                    f"{len(pkg.task_ids)} tasks but {len(verdicts)} verdicts")
            members = [self.tasks[tid] for tid in pkg.task_ids]
            not_submitted = [t.task_id for t in members if t.state != "submitted"]
            if not_submitted:
                raise VerificationError(
                    f"package {package_id} has unsubmitted tasks: {not_submitted}")
            pkg.expert_id = expert_id
            pkg.accuracy = sum(bool(v) for v in verdicts) / len(verdicts)
            if pkg.accuracy >= PASS_THRESHOLD:
                pkg.state = "passed"
                for t in members:
                    self._transition(t, "reviewed")
            else:
                pkg.state = "failed"
                for t in members:
                    self._transition(t, "requeued")
                    if t.submitted_by:
                        t.excluded_workers.add(t.submitted_by)
                    t.result = None
                    t.package_id = None
            return pkg

    # -- metrics ---------------------------------------------------------

    def metrics(self) -> dict:
        with self._lock:
            done = [t for t in self.tasks.values()
                    if t.result is not None and t.state in ("submitted", "reviewed")]
            counts = {s: 0 for s in TASK_STATES}
            for t in self.tasks.values():
                counts[t.state] += 1
            if not done:
                return {"empty": True, "states": counts}
            tag_tasks = [t for t in done if t.kind == "tag_filter"]
            top1_hits = 0
            shown = 0
            confirmed = 0
            for t in tag_tasks:
                cands = t.payload["candidates"]
                sel = set(t.result["selected"])
                if cands and cands[0] in sel:
                    top1_hits += 1
                shown += len(cands)
                confirmed += len(sel)
            vqa_tasks = [t for t in done
                         if t.kind == "vqa_check" and t.payload.get("stage") != 2]
            outcome_counts = {o: 0 for o in VQA_OUTCOMES}
            for t in vqa_tasks:
                outcome_counts[t.result["outcome"]] += 1
            out = {
                "empty": False,
                "states": counts,
                "tag_filter_tasks": len(tag_tasks),
                "vqa_tasks": len(vqa_tasks),
                "top1_accuracy": (top1_hits / len(tag_tasks)) if tag_tasks else None,
                "tag_accuracy": (confirmed / shown) if shown else None,
                "vqa_outcome_fractions": {
                    o: (outcome_counts[o] / len(vqa_tasks)) if vqa_tasks else None
                    for o in VQA_OUTCOMES},
                "vqa_outcome_counts": outcome_counts,
            }
            return out

    # -- persistence across loop rounds ------------------------------------

    def export_state(self) -> dict:
        with self._lock:
            return {"sampled_pairs": sorted(list(p) for p in self.sampled_pairs)}

    def import_state(self, state: dict) -> None:
        with self._lock:
            for concept, rid in state.get("sampled_pairs", ()):
                self.sampled_pairs.add((concept, rid))

    # -- full persistence (shared between CLI invocations) ------------------

    def export_full(self) -> dict:
        with self._lock:
            tasks = []
            for t in sorted(self.tasks.values(), key=lambda t: t.created_seq):
                tasks.append({
                    "task_id": t.task_id, "kind": t.kind,
                    "region_id": t.region_id, "payload": t.payload,
                    "concept": t.concept, "state": t.state,
                    "created_seq": t.created_seq,
                    "lease_worker": t.lease_worker,
                    "lease_expiry": t.lease_expiry,
                    "result": t.result, "submitted_by": t.submitted_by,
                    "package_id": t.package_id,
                    "excluded_workers": sorted(t.excluded_workers),
                })
            packages = [p.to_payload()
                        for p in sorted(self.packages.values(),
                                        key=lambda p: p.package_id)]
            return {
                "tasks": tasks,
                "packages": packages,
                "sampled_pairs": sorted(list(p) for p in self.sampled_pairs),
                "seq": self._seq,
                "package_seq": self._package_seq,
            }

    def import_full(self, state: dict) -> None:
        with self._lock:
            for td in state.get("tasks", ()):
                task = VerificationTask(
                    task_id=td["task_id"], kind=td["kind"],
                    region_id=td["region_id"], payload=td["payload"],
                    concept=td.get("concept"), state=td["state"],
                    created_seq=td["created_seq"],
                    lease_worker=td.get("lease_worker"),
                    lease_expiry=td.get("lease_expiry"),
                    result=td.get("result"),
                    submitted_by=td.get("submitted_by"),
                    package_id=td.get("package_id"),
                    excluded_workers=set(td.get("excluded_workers", ())))
                self.tasks[task.task_id] = task
            for pd in state.get("packages", ()):
                self.packages[pd["package_id"]] = ReviewPackage(
                    package_id=pd["package_id"],
                    task_ids=list(pd["task_ids"]), state=pd["state"],
                    expert_id=pd.get("expert_id"),
                    accuracy=pd.get("accuracy"))
            for concept, rid in state.get("sampled_pairs", ()):
                self.sampled_pairs.add((concept, rid))
            self._seq = max(self._seq, state.get("seq", 0))
            self._package_seq = max(self._package_seq,
                                    state.get("package_seq", 0))

    def save(self, path) -> None:
        target = Path(path)
        tmp = target.with_suffix(target.suffix + ".tmp")
        tmp.write_text(json.dumps(self.export_full(), indent=2,
                                  sort_keys=True), encoding="utf-8")
        os.replace(tmp, target)

    def load(self, path) -> bool:
        target = Path(path)
        if not target.exists():
            return False
        self.import_full(json.loads(target.read_text(encoding="utf-8")))
        return True
