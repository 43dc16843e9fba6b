"""Append-only sharded JSONL persistence with snapshots.

Records route to shards by image hash, so one image's history stays in one
file. Appends are fsynced before acknowledgment; a torn final line (the
only damage a crash mid-append can cause) is truncated away on open.
Re-annotation appends a new generation of a region rather than editing;
readers resolve "latest wins" by (generation, file order). Compaction and
snapshots write fresh trees and swap a pointer, never editing in place.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Dict, Iterable, Iterator, List, Optional, Tuple

from .geometry import scale_bucket
from .records import Region, RecordError, canonical_record_json

log = logging.getLogger(__name__)

DEFAULT_SHARD_COUNT = 16


class DatastoreError(Exception):
    pass


def shard_for(image_id: str, shard_count: int) -> int:
    digest = hashlib.sha256(image_id.encode("utf-8")).hexdigest()
    return int(digest[:8], 16) % shard_count


def corpus_hash(regions: Iterable[Region]) -> str:
    """Content hash over canonical records in canonical order.

    The generation counter is write bookkeeping, not corpus content: a
    re-annotation pass that reproduces identical annotations must hash
    identical, so it is stripped before hashing.
    """
    def content(r: Region) -> dict:
        rec = r.to_record()
        rec.pop("generation", None)
        return rec
    lines = sorted(canonical_record_json(content(r)) for r in regions)
    h = hashlib.sha256()
    for line in lines:
        h.update(line.encode("utf-8"))
        h.update(b"\n")
    return h.hexdigest()


@dataclass
class ConceptIndex:
    """Concept (top-1 matched text) → postings of region ids."""

    postings: Dict[str, List[str]]

    @property
    def concepts(self) -> List[str]:
        return sorted(self.postings)

    def count(self, text: str) -> int:
        return len(self.postings.get(text, ()))

    def ordered(self) -> List[Tuple[str, int]]:
        """(text, count) by count descending, text ascending."""
        return sorted(((t, len(p)) for t, p in self.postings.items()),
                      key=lambda item: (-item[1], item[0]))

    def by_rarity(self) -> List[Tuple[str, int]]:
        return sorted(((t, len(p)) for t, p in self.postings.items()),
                      key=lambda item: (item[1], item[0]))

    def __len__(self) -> int:
        return len(self.postings)


def build_concept_index(regions: Iterable[Region]) -> ConceptIndex:
    postings: Dict[str, List[str]] = {}
    for r in regions:
        if not r.matched_tags:
            continue
        postings.setdefault(r.matched_tags[0].text, []).append(r.region_id)
    for ids in postings.values():
        ids.sort()
    return ConceptIndex(postings=postings)


class Datastore:
    def __init__(self, root, shard_count: int = DEFAULT_SHARD_COUNT):
        self.root = Path(root)
        self.shard_count = shard_count
        self._locks = [threading.Lock() for _ in range(shard_count)]
        self._meta_lock = threading.Lock()
        self.root.mkdir(parents=True, exist_ok=True)
        (self.root / "snapshots").mkdir(exist_ok=True)
        self._init_generation_dir()
        self._recover()

    # -- layout ----------------------------------------------------------

    def _init_generation_dir(self) -> None:
        current = self.root / "CURRENT"
        if not current.exists():
            gen_dir = self.root / "gen-000"
            gen_dir.mkdir(exist_ok=True)
            self._write_pointer(current, "gen-000")

    def _write_pointer(self, path: Path, value: str) -> None:
        tmp = path.with_suffix(".tmp")
        tmp.write_text(value, encoding="utf-8")
        os.replace(tmp, path)

    @property
    def _gen_dir(self) -> Path:
        name = (self.root / "CURRENT").read_text(encoding="utf-8").strip()
        return self.root / name

    def _shard_path(self, shard_id: int) -> Path:
        return self._gen_dir / f"shard-{shard_id:02d}.jsonl"

    # -- recovery ----------------------------------------------------------

    def _recover(self) -> None:
        for shard_id in range(self.shard_count):
            path = self._shard_path(shard_id)
            if not path.exists():
                continue
            data = path.read_bytes()
            if not data:
                continue
            cut = len(data)
            if not data.endswith(b"\n"):
                cut = data.rfind(b"\n") + 1
            else:
                last = data.rstrip(b"\n").rfind(b"\n") + 1
                try:
                    json.loads(data[last:].decode("utf-8"))
                except (ValueError, UnicodeDecodeError):
                    cut = last
            if cut != len(data):
                log.warning("truncating torn record in %s (%d bytes dropped)",
                            path.name, len(data) - cut)
                with open(path, "r+b") as f:
                    f.truncate(cut)

    # -- writes ----------------------------------------------------------

    def append_regions(self, regions: Iterable[Region]) -> int:
        """Durable append; returns the number of records written."""
        by_shard: Dict[int, List[Region]] = {}
        for r in regions:
            by_shard.setdefault(shard_for(r.image_id, self.shard_count), []).append(r)
        written = 0
        for shard_id in sorted(by_shard):
            lines = []
            for r in by_shard[shard_id]:
                lines.append(canonical_record_json(r.to_record()))
            payload = ("\n".join(lines) + "\n").encode("utf-8")
            with self._locks[shard_id]:
                path = self._shard_path(shard_id)
                with open(path, "ab") as f:
                    f.write(payload)
                    f.flush()
                    os.fsync(f.fileno())
            written += len(lines)
        return written

    # -- reads ----------------------------------------------------------

    def _iter_records(self) -> Iterator[dict]:
        gen = self._gen_dir
        for shard_id in range(self.shard_count):
            path = gen / f"shard-{shard_id:02d}.jsonl"
            if not path.exists():
                continue
            with open(path, "r", encoding="utf-8") as f:
                for n, line in enumerate(f, start=1):
                    line = line.strip()
                    if not line:
                        continue
                    try:
                        yield json.loads(line)
                    except ValueError as exc:
                        raise DatastoreError(
                            f"corrupt record {path.name}:{n}: {exc}") from exc

    def _latest(self) -> Dict[str, Region]:
        latest: Dict[str, Region] = {}
        for raw in self._iter_records():
            try:
                region = Region.from_record(raw)
            except RecordError as exc:
                raise DatastoreError(str(exc)) from exc
            prev = latest.get(region.region_id)
            if prev is None or region.generation >= prev.generation:
                latest[region.region_id] = region
        return latest

    def get_region(self, region_id: str) -> Optional[Region]:
        return self._latest().get(region_id)

    def scan(self, image_id: Optional[str] = None, bucket: Optional[str] = None,
             tag: Optional[str] = None,
             verification_state: Optional[str] = None) -> List[Region]:
        """Latest generation of every region, filtered, in stable order."""
        out = []
        for region in self._latest().values():
            if image_id is not None and region.image_id != image_id:
                continue
            if bucket is not None and scale_bucket(region.bbox) != bucket:
                continue
            if tag is not None:
                if not region.matched_tags or region.matched_tags[0].text != tag:
                    continue
            if verification_state is not None and \
                    region.verification.state != verification_state:
                continue
            out.append(region)
        out.sort(key=lambda r: (r.image_id, r.region_id))
        return out

    def image_ids(self) -> List[str]:
        return sorted({r.image_id for r in self._latest().values()})

    def concept_index(self) -> ConceptIndex:
        return build_concept_index(self.scan())

    # -- compaction ----------------------------------------------------------

    def compact(self) -> str:
        """Rewrite latest records into a fresh generation directory."""
        with self._meta_lock:
            current = self._gen_dir.name
            next_id = int(current.split("-")[1]) + 1
            new_name = f"gen-{next_id:03d}"
            new_dir = self.root / (new_name + ".building")
            new_dir.mkdir()
            regions = sorted(self._latest().values(),
                             key=lambda r: (r.image_id, r.region_id))
            by_shard: Dict[int, List[str]] = {}
            for r in regions:
                shard = shard_for(r.image_id, self.shard_count)
                by_shard.setdefault(shard, []).append(
                    canonical_record_json(r.to_record()))
            for shard_id, lines in by_shard.items():
                path = new_dir / f"shard-{shard_id:02d}.jsonl"
                with open(path, "w", encoding="utf-8") as f:
                    f.write("\n".join(lines) + "\n")
                    f.flush()
                    os.fsync(f.fileno())
            os.replace(new_dir, self.root / new_name)
            self._write_pointer(self.root / "CURRENT", new_name)
            return new_name

    # -- snapshots ----------------------------------------------------------

    def snapshot(self, name: str, iteration: int, matcher_descriptor: dict,
                 metrics: Optional[dict] = None,
                 regions: Optional[Iterable[Region]] = None) -> dict:
        """Immutable, content-addressed copy of the corpus.

        By default the full latest-generation view; pass `regions` to
        snapshot a derived subset (a cleaned corpus, for instance).
        """
        snap_dir = self.root / "snapshots" / name
        if snap_dir.exists():
            raise DatastoreError(f"snapshot {name!r} already exists")
        pool = self._latest().values() if regions is None else regions
        regions = sorted(pool, key=lambda r: (r.image_id, r.region_id))
        manifest = {
            "iteration": iteration,
            "corpus_hash": corpus_hash(regions),
            "matcher_descriptor": matcher_descriptor,
            "metrics": metrics if metrics is not None else {},
        }
        tmp = snap_dir.with_name(name + ".building")
        tmp.mkdir(parents=True)
        with open(tmp / "records.jsonl", "w", encoding="utf-8") as f:
            for r in regions:
                f.write(canonical_record_json(r.to_record()) + "\n")
            f.flush()
            os.fsync(f.fileno())
        (tmp / "manifest.json").write_text(
            json.dumps(manifest, indent=2, sort_keys=True), encoding="utf-8")
        os.replace(tmp, snap_dir)
        return manifest

    def snapshot_exists(self, name: str) -> bool:
        return (self.root / "snapshots" / name / "manifest.json").exists()

    def load_snapshot(self, name: str) -> Tuple[dict, List[Region]]:
        snap_dir = self.root / "snapshots" / name
        if not (snap_dir / "manifest.json").exists():
            raise DatastoreError(f"no snapshot named {name!r}")
        manifest = json.loads((snap_dir / "manifest.json").read_text(encoding="utf-8"))
        regions = []
        with open(snap_dir / "records.jsonl", "r", encoding="utf-8") as f:
            for line in f:
                line = line.strip()
                if line:
                    regions.append(Region.from_record(json.loads(line)))
        return manifest, regions

    def snapshots(self) -> List[str]:
        base = self.root / "snapshots"
        return sorted(p.name for p in base.iterdir()
                      if (p / "manifest.json").exists())
