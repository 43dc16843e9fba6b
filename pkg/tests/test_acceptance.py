"""Acceptance gate: one test per shipped guarantee, runnable on mocks only.

Each test here re-checks a headline behavior end to end at its stated
tolerance, independently of the per-module suites: merging against a
brute-force reference, IoU against a pixel-count oracle, bucket and
sampling rules against formula oracles, the verification lifecycle by
exhaustive exploration, loop improvement on a poisoned corpus, whole-run
determinism, the evaluation harness, the stats report, and crash safety.
"""

import copy
import json
import random
import shutil
import time
from collections import deque

import pytest
from click.testing import CliRunner

from panoptic_forge.analytics import (average_precision, corpus_stats,
                                      eval_zero_shot)
from panoptic_forge.cli import main as forge_cli
from panoptic_forge.datastore import Datastore, shard_for
from panoptic_forge.geometry import (SCALE_BOUNDS, SCALE_BUCKETS, BoundingBox,
                                     iou, scale_bucket)
from panoptic_forge.loop import (corrections_finetune, make_scripted_verifier,
                                 run_loop)
from panoptic_forge.matching import select_survivors, top1_score
from panoptic_forge.merging import merge_proposal_rounds
from panoptic_forge.verification import (TASK_STATES, VerificationError,
                                         sample_size)

from conftest import random_box, refs_totalling, top1_accuracy
from oracles import (ap_reference, bucket_reference, iou_pixels,
                     merge_reference, sample_size_reference, stats_reference)
from test_datastore import corpus as datastore_corpus
from test_matching import _scored_region
from test_merging import _as_plain, _random_batch
from test_verification import (_apply_op, _check_invariants, _legal_ops,
                               _signature, build_corpus, drain_and_submit)


def test_merging_matches_brute_force_reference():
    rng = random.Random(424)
    sources = ["class_agnostic", "closed_set_a", "closed_set_b", "grounding"]
    started = time.monotonic()
    for case in range(1000):
        t_iou = rng.choice([0.3, 0.5, 0.7])
        rounds = [_random_batch(rng, f"acc-{case}", rng.randint(0, 6), s)
                  for s in sources]
        got = merge_proposal_rounds(rounds, t_iou=t_iou)
        expected = []
        for batch in rounds:
            expected = merge_reference(expected, _as_plain(batch), t_iou)
        assert _as_plain(got) == expected
        fed = {(t.text, t.source) for b in rounds for r in b
               for t in r.candidate_tags}
        kept = {(t.text, t.source) for r in got for t in r.candidate_tags}
        assert fed == kept
    assert time.monotonic() - started < 10.0


def test_iou_agrees_with_pixel_count_oracle():
    rng = random.Random(425)
    for _ in range(1000):
        a, b = random_box(rng), random_box(rng)
        assert abs(iou(a, b) - iou_pixels(a.as_list(), b.as_list())) <= 1e-6


def test_scale_buckets_open_at_their_boundaries_and_partition():
    def box_of(area):
        side = area ** 0.5
        return BoundingBox(0.0, 0.0, side, side)

    for area, expected in [(20.0 ** 2, "small"), (40.0 ** 2, "medium"),
                           (100.0 ** 2, "large"), (200.0 ** 2, "xlarge"),
                           (500.0 ** 2, "huge")]:
        assert scale_bucket(box_of(area)) == expected

    rng = random.Random(426)
    for _ in range(1000):
        b = box_of(rng.uniform(0.5, 700.0 ** 2))
        name = scale_bucket(b)
        assert name in SCALE_BUCKETS
        assert name == bucket_reference(b.area)
        lo, hi = next((lo, hi) for n, lo, hi in SCALE_BOUNDS if n == name)
        assert lo <= b.area < hi


def test_cleaning_keeps_exactly_the_top_hundred_and_is_monotone():
    regions = [_scored_region("acc-img", i, round(0.001 + i * 0.006, 6))
               for i in range(150)]
    out = select_survivors(regions, keep=100)
    ranked = sorted(regions, key=lambda r: -top1_score(r))
    assert {r.region_id for r in out} == {r.region_id for r in ranked[:100]}
    assert len(out) == 100

    kept_sets = [{r.region_id for r in select_survivors(regions, keep=k)}
                 for k in (10, 50, 100, 500)]
    for smaller, larger in zip(kept_sets, kept_sets[1:]):
        assert smaller <= larger
    assert kept_sets[-1] == {r.region_id for r in regions}


def test_verification_sampling_endpoints_and_curve():
    assert sample_size(10 ** 6, 0, 50) == 6
    assert sample_size(10 ** 6, 49, 50) == 90
    rng = random.Random(427)
    for _ in range(100):
        total = rng.randint(1, 5000)
        rank = rng.randint(0, total - 1)
        count = max(1, int(1000 / (rank + 1)))
        assert sample_size(count, rank, total) == \
            sample_size_reference(count, rank, total)


def test_task_lifecycle_holds_under_exhaustive_exploration(tmp_path):
    _, store, _ = build_corpus(tmp_path / "model", {"a": 1}, qa_counts=[2],
                               package_size=2)
    created = store.sample_for_verification(budget=1)
    n_tasks = len(created)
    assert n_tasks <= 4
    store.datastore = None

    seen = {_signature(store)}
    queue = deque([store])
    explored = 0
    while queue:
        current = queue.popleft()
        explored += 1
        assert explored < 60000
        for op in _legal_ops(current):
            clone = copy.deepcopy(current)
            try:
                _apply_op(clone, op)
            except VerificationError:
                continue
            _check_invariants(clone, n_tasks)
            sig = _signature(clone)
            if sig not in seen:
                seen.add(sig)
                queue.append(clone)
    assert explored == len(seen) > 100
    assert {t[1] for sig in seen for t in sig[0]} == set(TASK_STATES)

    # review threshold boundaries over a full hundred-task package
    for confirmations, expected in [(94, "failed"), (95, "passed"),
                                    (96, "passed")]:
        _, store, _ = build_corpus(tmp_path / f"pkg{confirmations}",
                                   {"a": 25}, package_size=100)
        store.sample_for_verification(budget=25)
        assert len(drain_and_submit(store, "w1")) == 100
        verdicts = [True] * confirmations + [False] * (100 - confirmations)
        assert store.review_package("pkg-0001", "expert-1",
                                    verdicts).state == expected


def test_two_verified_iterations_repair_the_poisoned_corpus(tmp_path,
                                                            planted_loop):
    started = time.monotonic()
    arts = run_loop(tmp_path, planted_loop["refs"], 2,
                    initial_model={"seed": planted_loop["seed"],
                                   "bias": dict(planted_loop["bias"])},
                    verifier=make_scripted_verifier(planted_loop["truth"]),
                    finetune_hook=corrections_finetune, verify_budget=10)
    accs = {}
    for name in ("A0", "A1", "A2"):
        _, regions = arts.datastore.load_snapshot(name)
        accs[name] = top1_accuracy(regions, planted_loop["truth"])
    assert abs(accs["A0"] - 0.90) < 1e-9
    assert abs(accs["A1"] - 0.95) < 1e-9
    assert abs(accs["A2"] - 1.00) < 1e-9
    assert time.monotonic() - started < 60.0


def test_full_run_is_deterministic_under_a_fixed_seed(tmp_path):
    runner = CliRunner()
    refs = refs_totalling(40, 7, prefix="det")
    outcomes = []
    for name in ("first", "second"):
        d = tmp_path / name
        d.mkdir()
        cfg = d / "forge.json"
        cfg.write_text(json.dumps({"datastore": str(d / "store"),
                                   "seed": 7}), encoding="utf-8")
        listing = d / "refs.txt"
        listing.write_text("\n".join(refs), encoding="utf-8")

        def run(*args):
            res = runner.invoke(forge_cli, ["-c", str(cfg), *args])
            assert res.exit_code == 0, res.output + res.stderr
            return res.output

        run("ingest", str(listing))
        outcomes.append({
            "annotate": json.loads(run("annotate"))["corpus_hash"],
            "match": json.loads(run("match"))["corpus_hash"],
            "clean": json.loads(run("clean"))["corpus_hash"],
            "stats": run("stats"),
        })
    assert outcomes[0] == outcomes[1]


def test_zero_shot_harness_scores_oracle_chance_and_reference():
    classes = ("bench", "bird", "boat", "book", "bus",
               "car", "cup", "dog", "kite", "person")
    rng = random.Random(428)
    spans = ((5, 31), (33, 95), (97, 300))
    regions = []
    for i in range(2000):
        lo, hi = spans[i % 3]
        side = rng.randint(lo, hi)
        regions.append((f"zs-{i:04d}", BoundingBox(0, 0, side, side),
                        rng.choice(classes)))
    labels = {ref: label for ref, _, label in regions}

    def oracle(image_ref, bbox, names):
        return [1.0 if n == labels[image_ref] else 0.0 for n in names]

    assert eval_zero_shot(regions, classes, oracle)["mAP"] == 1.0

    def noise(image_ref, bbox, names):
        return [rng.random() for _ in names]

    res = eval_zero_shot(regions, classes, noise)
    assert abs(res["top1_acc"] - 0.10) <= 0.10

    fixture_rng = random.Random(20)
    scored = [(round(fixture_rng.random(), 2), fixture_rng.random() < 0.4)
              for _ in range(20)]
    while not any(pos for _, pos in scored):
        scored[fixture_rng.randrange(20)] = (fixture_rng.random(), True)
    assert abs(average_precision(scored) - ap_reference(scored)) < 1e-9


def test_stats_report_equals_brute_force_recount(demo_regions, demo_records):
    live = json.loads(json.dumps(corpus_stats(demo_regions)))
    oracle = json.loads(json.dumps(stats_reference(demo_records)))
    assert live == oracle

    for key in ("buckets", "proposal_sources"):
        assert abs(sum(row["proportion"]
                       for row in live[key].values()) - 1.0) < 1e-9
    assert abs(sum(live["semantic_sources_overall"].values()) - 1.0) < 1e-9
    for row in live["semantic_sources_by_bucket"].values():
        assert abs(sum(row.values()) - 1.0) < 1e-9


def test_crash_mid_append_loses_at_most_the_in_flight_record(tmp_path):
    base = tmp_path / "base"
    store = Datastore(base / "ds")
    store.append_regions(datastore_corpus(30))
    acknowledged = {r.region_id for r in store.scan()}

    extra = datastore_corpus(1, seed=99)[0]
    path = store._shard_path(shard_for(extra.image_id, store.shard_count))
    before = path.stat().st_size if path.exists() else 0
    store.append_regions([extra])
    written = path.stat().st_size - before
    assert written > 2

    for cut in (1, written // 2, written - 1):
        work = tmp_path / f"cut-{cut}"
        shutil.copytree(base, work)
        torn = work / "ds" / path.relative_to(base / "ds")
        with open(torn, "r+b") as f:
            f.truncate(before + cut)
        recovered = Datastore(work / "ds")
        assert {r.region_id for r in recovered.scan()} == acknowledged
        # the store stays writable after recovery
        recovered.append_regions([extra])
        assert {r.region_id for r in recovered.scan()} \
            == acknowledged | {extra.region_id}
