"""JSONL annotation records: loading, normalization, augmentation output, subsampling.

Input line schema::

    {"record_id": "s1", "image_ref": "screens/s1.png",
     "screen_width": 1080, "screen_height": 1920,          # only for pixel boxes
     "elements": [{"element_type": "button", "bbox": [x0, y0, x1, y1],
                   "description": "Scan", "epsilon": 0.01}]}   # epsilon optional

Augmented output adds ``replica_idx``; replica 0 is the original record.
"""
from __future__ import annotations

import hashlib
import json
import logging
import math
import os
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .geometry import BBox, InvalidBoxError, RawBBox, validate
from .payoff import format_coord
from .sampler import AugmentationConfig, SamplingError, replicate

logger = logging.getLogger(__name__)

# pixel slack tolerated when normalizing boxes that touch the screen border
_PIXEL_TOLERANCE = 1.0


class DatasetError(ValueError):
    def __init__(self, message: str, *, line: int | None = None, record_id: str | None = None):
        where = []
        if line is not None:
            where.append(f"line {line}")
        if record_id is not None:
            where.append(f"record {record_id!r}")
        super().__init__(f"{', '.join(where)}: {message}" if where else message)
        self.line = line
        self.record_id = record_id


@dataclass(frozen=True)
class UIElement:
    element_type: str
    bbox: BBox
    description: str = ""
    epsilon: float | None = None

    def __post_init__(self):
        if not self.element_type:
            raise ValueError("element_type must be non-empty")

    def to_json(self, decimals: int | None = None) -> dict:
        coords = list(self.bbox)
        if decimals is not None:
            coords = [float(format(c, f".{decimals}f")) for c in coords]
        d = {"element_type": self.element_type, "bbox": coords, "description": self.description}
        if self.epsilon is not None:
            d["epsilon"] = self.epsilon
        return d


@dataclass(frozen=True)
class AnnotationRecord:
    record_id: str
    elements: tuple = ()
    image_ref: str = ""
    screen_width: int | None = None
    screen_height: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "elements", tuple(self.elements))

    def to_json(self) -> dict:
        d = {"record_id": self.record_id, "image_ref": self.image_ref}
        if self.screen_width is not None:
            d["screen_width"] = self.screen_width
            d["screen_height"] = self.screen_height
        d["elements"] = [e.to_json() for e in self.elements]
        return d


@dataclass
class AugmentedManifest:
    config: AugmentationConfig
    source_digest: str
    replica_counts: list[int]
    output_path: str
    output_digest: str = ""
    skipped: list[str] = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "config": self.config.to_dict(),
            "source_digest": self.source_digest,
            "replica_counts": self.replica_counts,
            "output_path": self.output_path,
            "output_digest": self.output_digest,
            "skipped": self.skipped,
        }


def dumps(obj) -> str:
    return json.dumps(obj, ensure_ascii=False, separators=(", ", ": "))


def digest_bytes(data: bytes) -> str:
    return "sha256:" + hashlib.sha256(data).hexdigest()


def digest_file(path) -> str:
    return digest_bytes(Path(path).read_bytes())


def atomic_write_text(path, text: str) -> None:
    """Write via a temporary file and rename, so readers never see partial output."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _parse_element(obj: dict, record_id: str, line: int) -> UIElement:
    try:
        coords = obj["bbox"]
        if len(coords) != 4:
            raise DatasetError("bbox must have four coordinates", line=line, record_id=record_id)
        eps = obj.get("epsilon")
        return UIElement(
            element_type=str(obj["element_type"]),
            bbox=RawBBox(*(float(c) for c in coords)),
            description=str(obj.get("description", "")),
            epsilon=None if eps is None else float(eps),
        )
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, DatasetError):
            raise
        raise DatasetError(f"bad element: {exc}", line=line, record_id=record_id) from exc


def parse_record(obj: dict, line: int | None = None) -> AnnotationRecord:
    if not isinstance(obj, dict) or "record_id" not in obj:
        raise DatasetError("missing record_id", line=line)
    rid = str(obj["record_id"])
    elements = obj.get("elements", [])
    if not isinstance(elements, list):
        raise DatasetError("elements must be a list", line=line, record_id=rid)
    raw = AnnotationRecord(
        record_id=rid,
        image_ref=str(obj.get("image_ref", "")),
        screen_width=obj.get("screen_width"),
        screen_height=obj.get("screen_height"),
        elements=[_parse_element(e, rid, line) for e in elements],
    )
    try:
        return normalize_record(raw)
    except DatasetError as exc:
        if exc.line is None and line is not None:
            raise DatasetError(str(exc), line=line) from exc
        raise


def load_records(path) -> list[AnnotationRecord]:
    """Parse and validate a JSONL annotation file; boxes come back normalized."""
    records = []
    seen = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, text in enumerate(fh, 1):
            if not text.strip():
                continue
            try:
                obj = json.loads(text)
            except json.JSONDecodeError as exc:
                raise DatasetError(f"malformed JSON ({exc.msg})", line=lineno) from exc
            rec = parse_record(obj, lineno)
            if rec.record_id in seen:
                raise DatasetError("duplicate record_id", line=lineno, record_id=rec.record_id)
            seen.add(rec.record_id)
            records.append(rec)
    return records


def dump_records(records: Iterable[AnnotationRecord]) -> str:
    return "".join(dumps(r.to_json()) + "\n" for r in records)


def write_records(records: Iterable[AnnotationRecord], path) -> None:
    atomic_write_text(path, dump_records(records))


def normalize_record(r: AnnotationRecord) -> AnnotationRecord:
    """Map pixel boxes into [0, 1] by the screen size; normalized records pass through.

    Screen dimensions are dropped from the result since they only describe
    unnormalized input.
    """
    coords = [list(e.bbox) for e in r.elements]
    pixel = any(c > 1.0 for box in coords for c in box)
    if pixel:
        w, h = r.screen_width, r.screen_height
        if not w or not h or w <= 0 or h <= 0:
            raise DatasetError("pixel coordinates without screen dimensions", record_id=r.record_id)
        for box in coords:
            x0, y0, x1, y1 = box
            if (min(x0, y0, x1, y1) < -_PIXEL_TOLERANCE
                    or max(x0, x1) > w + _PIXEL_TOLERANCE or max(y0, y1) > h + _PIXEL_TOLERANCE):
                raise DatasetError(f"box {box} outside a {w}x{h} screen", record_id=r.record_id)
        coords = [[x0 / w, y0 / h, x1 / w, y1 / h] for x0, y0, x1, y1 in coords]
    elements = []
    for e, box in zip(r.elements, coords):
        if not (box[0] < box[2] and box[1] < box[3]):
            raise DatasetError(f"inverted or empty box {box}", record_id=r.record_id)
        if not pixel and (min(box) < 0.0 or max(box) > 1.0):
            raise DatasetError(f"box {box} outside the unit square", record_id=r.record_id)
        try:
            bbox = validate(box)
        except InvalidBoxError as exc:
            raise DatasetError(str(exc), record_id=r.record_id) from exc
        elements.append(replace(e, bbox=bbox))
    if not pixel and r.screen_width is None and all(isinstance(e.bbox, BBox) for e in r.elements):
        return r
    return replace(r, elements=elements, screen_width=None, screen_height=None)


def augmented_line(rec: AnnotationRecord, replica_idx: int, elements: Sequence[UIElement]) -> str:
    obj = {"record_id": rec.record_id, "replica_idx": replica_idx, "image_ref": rec.image_ref}
    # the original is re-serialized verbatim; sampled boxes use 2-decimal coordinates
    obj["elements"] = [e.to_json(None if replica_idx == 0 else 2) for e in elements]
    return dumps(obj)


def _round_box(e: UIElement) -> UIElement:
    """Round to 2 decimals, widening by 0.01 if rounding collapsed an edge."""
    c = [round(v, 2) for v in e.bbox]
    for lo, hi in ((0, 2), (1, 3)):
        if c[hi] <= c[lo]:
            if c[hi] + 0.01 <= 1.0:
                c[hi] = round(c[hi] + 0.01, 2)
            else:
                c[lo] = round(c[lo] - 0.01, 2)
    return replace(e, bbox=BBox(*c))


def _replicate_one(args):
    elems, cfg, ri = args
    try:
        return replicate(elems, cfg, ri), None
    except SamplingError as exc:
        return None, str(exc)


def augment_records(records: Sequence[AnnotationRecord], cfg: AugmentationConfig,
                    *, skip_bad: bool = False, workers: int = 1):
    """Yield ``(record, replica_idx, elements)`` in input order.

    Every element draws from its own derived stream, so ``workers > 1``
    (one process per record batch) yields the same output.
    """
    jobs = [(rec.elements, cfg, ri) for ri, rec in enumerate(records)]
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            results = list(pool.map(_replicate_one, jobs, chunksize=max(1, len(jobs) // (4 * workers))))
    else:
        results = map(_replicate_one, jobs)
    for rec, (reps, err) in zip(records, results):
        if err is not None:
            if not skip_bad:
                raise DatasetError(f"sampling failed: {err}", record_id=rec.record_id)
            logger.warning("skipping record %s: %s", rec.record_id, err)
            continue
        for r, elems in enumerate(reps):
            yield rec, r, elems if r == 0 else [_round_box(e) for e in elems]


def write_augmented(records: Sequence[AnnotationRecord], cfg: AugmentationConfig, out_path,
                    *, source_digest: str | None = None, skip_bad: bool = False,
                    workers: int = 1) -> AugmentedManifest:
    """Write ``k_replicas`` lines per record plus ``<out_path>.manifest.json``."""
    lines = []
    counts: dict[str, int] = {}
    for rec, r, elems in augment_records(records, cfg, skip_bad=skip_bad, workers=workers):
        lines.append(augmented_line(rec, r, elems) + "\n")
        counts[rec.record_id] = counts.get(rec.record_id, 0) + 1
    text = "".join(lines)
    if source_digest is None:
        source_digest = digest_bytes(dump_records(records).encode("utf-8"))
    manifest = AugmentedManifest(
        config=cfg,
        source_digest=source_digest,
        replica_counts=[counts.get(r.record_id, 0) for r in records],
        output_path=str(out_path),
        output_digest=digest_bytes(text.encode("utf-8")),
        skipped=[r.record_id for r in records if r.record_id not in counts],
    )
    atomic_write_text(out_path, text)
    atomic_write_text(manifest_path(out_path), json.dumps(manifest.to_json(), indent=2) + "\n")
    return manifest


def manifest_path(out_path) -> Path:
    p = Path(out_path)
    return p.with_name(p.name + ".manifest.json")


def subsample(records: Sequence, fraction: float, seed: int = 0) -> list:
    """Deterministic subset of ``ceil(fraction * n)`` records, in original order."""
    if not 0.0 < fraction <= 1.0:
        raise ValueError(f"fraction must lie in (0, 1], got {fraction}")
    n = len(records)
    # round away float noise such as 0.1 * 15743 = 1574.3000000000002 before ceil
    m = min(n, math.ceil(round(fraction * n, 9)))
    if m == n:
        return list(records)
    rng = np.random.default_rng(seed)
    keep = np.sort(rng.choice(n, size=m, replace=False))
    return [records[i] for i in keep]
