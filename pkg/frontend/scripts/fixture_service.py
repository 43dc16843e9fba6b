"""Run a throwaway verification service for the web console's tests.

Builds a small synthetic corpus in a datastore, creates verification
tasks for every region, and serves the HTTP API on the requested port.
The `review` scenario also pre-submits every task so the review board
has full packages to work with.

Usage:
    python3 scripts/fixture_service.py --scenario e2e --port 8141 \
        [--datastore DIR] [--worker-token TOK=ID] [--expert-token TOK=ID]
"""

import argparse
import tempfile

import uvicorn

from panoptic_forge.datastore import Datastore
from panoptic_forge.records import BoundingBox, QAPair, Region, SemanticTag
from panoptic_forge.verification import TaskStore
from panoptic_forge.verify_api import make_app

NOUNS = (
    "anvil", "bobbin", "crate", "dowel", "easel", "flask", "gasket",
    "hinge", "ingot", "jug", "kiln", "lathe", "mallet", "nozzle",
    "oarlock", "pulley", "quill", "rivet", "spool", "trowel",
)


def build_region(image_id: str, index: int, concept: str,
                 extra_tags: int, n_qa: int) -> Region:
    x1 = 8.0 + 12.0 * (index % 20)
    y1 = 8.0 + 12.0 * ((index // 20) % 20)
    box = BoundingBox(x1, y1, x1 + 48.0, y1 + 36.0)
    texts = [concept] + [
        f"{concept} {suffix}" for suffix in
        ("close up", "in shadow", "pair", "detail")
    ][:extra_tags]
    tags = tuple(
        SemanticTag(text=t,
                    source="closed_set_detector" if j == 0 else "imaginator",
                    align_score=round(0.9 - 0.1 * j, 2))
        for j, t in enumerate(texts))
    qa = tuple(
        QAPair(question=f"What is next to the {concept}? ({k})",
               answer=f"A wall is next to the {concept}.")
        for k in range(n_qa))
    return Region.create(
        image_id=image_id, bbox=box, proposal_source="closed_set_a",
        candidate_tags=tags, matched_tags=tags, qa_pairs=qa,
        caption=f"a {concept} against a plain wall")


def build_corpus(scenario: str, root: str) -> Datastore:
    ds = Datastore(root)
    regions = []
    if scenario == "workbench":
        for i, concept in enumerate(("anchor bolt", "brass kettle", "canvas tarp")):
            regions.append(build_region(f"img-{i:03d}", i, concept,
                                         extra_tags=4, n_qa=1))
    elif scenario == "review":
        # 84 regions with 3 QA pairs plus one with none: 337 tasks, which
        # packs into three full packages of 100 and a partial one of 37.
        for i in range(84):
            concept = f"{NOUNS[i % len(NOUNS)]} {i:02d}"
            regions.append(build_region(f"img-{i:03d}", i, concept,
                                         extra_tags=2, n_qa=3))
        regions.append(build_region("img-084", 84, "zinc washer 84",
                                     extra_tags=2, n_qa=0))
    elif scenario == "e2e":
        for i, concept in enumerate(("apple crate", "bent fork",
                                     "cedar post", "dune grass")):
            regions.append(build_region(f"img-{i:03d}", i, concept,
                                         extra_tags=2, n_qa=2))
    else:
        raise SystemExit(f"unknown scenario {scenario!r}")
    ds.append_regions(regions)
    return ds


def drain_all(store: TaskStore) -> int:
    """Submit every task with a plausible default so packages fill up."""
    done = 0
    while True:
        task = store.lease("seed-worker")
        if task is None:
            return done
        if task.kind == "tag_filter":
            result = {"selected": list(task.payload["candidates"])}
        else:
            result = {"outcome": "correct"}
        store.submit(task.task_id, "seed-worker", result)
        done += 1


def parse_tokens(pairs):
    out = {}
    for pair in pairs:
        token, _, principal = pair.partition("=")
        if not token or not principal:
            raise SystemExit(f"token must look like TOK=ID, got {pair!r}")
        out[token] = principal
    return out


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--scenario", required=True,
                        choices=("workbench", "review", "e2e"))
    parser.add_argument("--port", type=int, required=True)
    parser.add_argument("--datastore",
                        help="datastore directory (default: a fresh tempdir)")
    parser.add_argument("--worker-token", action="append", default=[],
                        metavar="TOK=ID")
    parser.add_argument("--expert-token", action="append", default=[],
                        metavar="TOK=ID")
    args = parser.parse_args()

    root = args.datastore or tempfile.mkdtemp(prefix="verify-ui-fixture-")
    ds = build_corpus(args.scenario, root)
    store = TaskStore(datastore=ds, package_size=100, include_vqa=True, seed=0)
    n_regions = len(ds.scan())
    store.sample_for_verification(budget=n_regions, round_id=0)
    if args.scenario == "review":
        drain_all(store)

    app = make_app(store,
                   worker_tokens=parse_tokens(args.worker_token) or None,
                   expert_tokens=parse_tokens(args.expert_token) or None)
    uvicorn.run(app, host="127.0.0.1", port=args.port, log_level="warning")


if __name__ == "__main__":
    main()
