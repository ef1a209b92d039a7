"""IoU-threshold precision/recall/F1 and click accuracy.

A prediction matches a ground-truth element when their IoU is at least the
threshold (ties count) and, unless ``geometry_only``, their element types
agree. Matching is one-to-one and greedy by descending IoU, ties broken by
lower prediction index and then lower ground-truth index.
"""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .geometry import BBox, Point, center, contains, iou

DEFAULT_THRESHOLDS = (0.1, 0.3, 0.5, 0.7)


def match_elements(preds: Sequence, gts: Sequence, threshold: float,
                   *, geometry_only: bool = False) -> set[tuple[int, int]]:
    if not 0.0 <= threshold <= 1.0:
        raise ValueError(f"threshold must lie in [0, 1], got {threshold}")
    cands = []
    for i, p in enumerate(preds):
        for j, g in enumerate(gts):
            if not geometry_only and p.element_type != g.element_type:
                continue
            v = iou(p.bbox, g.bbox)
            if v >= threshold:
                cands.append((-v, i, j))
    cands.sort()
    used_p, used_g = set(), set()
    matched = set()
    for _, i, j in cands:
        if i in used_p or j in used_g:
            continue
        used_p.add(i)
        used_g.add(j)
        matched.add((i, j))
    return matched


def prf_from_counts(matched: int, n_pred: int, n_gt: int) -> tuple[float, float, float]:
    p = matched / n_pred if n_pred else 0.0
    r = matched / n_gt if n_gt else 0.0
    f = 2 * p * r / (p + r) if p + r > 0 else 0.0
    return p, r, f


def prf(preds, gts, threshold: float, *, geometry_only: bool = False) -> tuple[float, float, float]:
    m = len(match_elements(preds, gts, threshold, geometry_only=geometry_only))
    return prf_from_counts(m, len(preds), len(gts))


def click_accuracy(clicks: Iterable[tuple[Point, BBox]]) -> float:
    clicks = list(clicks)
    if not clicks:
        return 0.0
    return sum(contains(box, pt) for pt, box in clicks) / len(clicks)


@dataclass
class ThresholdEntry:
    threshold: float
    precision: float
    recall: float
    f1: float
    matched: int
    n_pred: int
    n_gt: int
    macro_precision: float = 0.0
    macro_recall: float = 0.0
    macro_f1: float = 0.0


@dataclass
class EvalReport:
    mode: str
    entries: list[ThresholdEntry] = field(default_factory=list)
    click_accuracy: float | None = None
    n_records: int = 0
    flagged: list[str] = field(default_factory=list)
    dataset_digest: str = ""
    per_record: list[dict] = field(default_factory=list)
    unexpected: list[str] = field(default_factory=list)

    @property
    def aligned(self) -> bool:
        """True when predictions and ground truth cover the same record ids."""
        return not self.flagged and not self.unexpected

    def entry(self, threshold: float) -> ThresholdEntry:
        for e in self.entries:
            if abs(e.threshold - threshold) < 1e-12:
                return e
        raise KeyError(threshold)

    def to_json(self) -> dict:
        d = {"mode": self.mode, "n_records": self.n_records,
             "dataset_digest": self.dataset_digest, "flagged": self.flagged,
             "unexpected": self.unexpected}
        if self.mode == "click":
            d["click_accuracy"] = self.click_accuracy
        else:
            d["entries"] = [vars(e) for e in self.entries]
            if self.click_accuracy is not None:
                d["click_accuracy"] = self.click_accuracy
        return d

    def table(self) -> str:
        """Tab-separated summary in the layout of a threshold-by-P/R/F table."""
        if self.mode == "click":
            return f"metric\tvalue\nclick_accuracy\t{self.click_accuracy:.4f}\n"
        rows = ["threshold\tP\tR\tF\tmatched\tn_pred\tn_gt"]
        for e in self.entries:
            rows.append(f"{e.threshold:g}\t{e.precision:.4f}\t{e.recall:.4f}\t{e.f1:.4f}"
                        f"\t{e.matched}\t{e.n_pred}\t{e.n_gt}")
        return "\n".join(rows) + "\n"

    def per_record_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["record_id", "threshold", "matched", "n_pred", "n_gt", "precision", "recall", "f1"])
        for row in self.per_record:
            w.writerow([row["record_id"], row["threshold"], row["matched"], row["n_pred"], row["n_gt"],
                        f"{row['precision']:.6f}", f"{row['recall']:.6f}", f"{row['f1']:.6f}"])
        return buf.getvalue()


def evaluate_records(preds: dict, gts: Sequence, thresholds=DEFAULT_THRESHOLDS,
                     *, geometry_only: bool = False) -> EvalReport:
    """Micro- and macro-averaged P/R/F over records.

    ``preds`` maps record_id to a predicted element list; ``gts`` is a sequence
    of records with ``record_id`` and ``elements``. Missing predictions count
    as empty and are flagged.
    """
    report = EvalReport(mode="elements", n_records=len(gts))
    report.flagged = [g.record_id for g in gts if g.record_id not in preds]
    for t in thresholds:
        matched = n_pred = n_gt = 0
        macro = [0.0, 0.0, 0.0]
        for g in gts:
            p = preds.get(g.record_id, [])
            m = len(match_elements(p, g.elements, t, geometry_only=geometry_only))
            matched += m
            n_pred += len(p)
            n_gt += len(g.elements)
            rp, rr, rf = prf_from_counts(m, len(p), len(g.elements))
            macro = [macro[0] + rp, macro[1] + rr, macro[2] + rf]
            report.per_record.append({"record_id": g.record_id, "threshold": t, "matched": m,
                                      "n_pred": len(p), "n_gt": len(g.elements),
                                      "precision": rp, "recall": rr, "f1": rf})
        p, r, f = prf_from_counts(matched, n_pred, n_gt)
        k = max(1, len(gts))
        report.entries.append(ThresholdEntry(t, p, r, f, matched, n_pred, n_gt,
                                             macro[0] / k, macro[1] / k, macro[2] / k))
    return report


def box_click_pairs(preds: dict, gts: Sequence) -> tuple[list[tuple[Point, BBox]], list[str]]:
    """Pair each ground-truth element with the center of the same-position prediction."""
    pairs, flagged = [], []
    for g in gts:
        p = preds.get(g.record_id)
        if p is None:
            flagged.append(g.record_id)
        for j, ge in enumerate(g.elements):
            if p is not None and j < len(p):
                pairs.append((_click_point(p[j]), ge.bbox))
            else:
                pairs.append((None, ge.bbox))
    return pairs, flagged


def _click_point(pred) -> Point:
    if isinstance(pred, Point):
        return pred
    return center(pred.bbox if hasattr(pred, "bbox") else pred)


def _click_accuracy_with_misses(pairs) -> float:
    if not pairs:
        return 0.0
    return sum(pt is not None and contains(box, pt) for pt, box in pairs) / len(pairs)


def evaluate(pred_file, gt_file, thresholds=DEFAULT_THRESHOLDS, *, mode: str = "elements",
             geometry_only: bool = False) -> EvalReport:
    """Score a prediction JSONL against a ground-truth JSONL keyed by record_id.

    In ``click`` mode a prediction line may carry ``click_point: [x, y]`` (one
    click per record, scored against the first ground-truth element) or
    ``elements`` whose box centers are clicked position by position.
    """
    from .dataset import DatasetError, digest_file, load_records, parse_record

    gts = load_records(gt_file)
    preds, clicks = {}, {}
    with open(pred_file, encoding="utf-8") as fh:
        for lineno, text in enumerate(fh, 1):
            if not text.strip():
                continue
            try:
                obj = json.loads(text)
            except json.JSONDecodeError as exc:
                raise DatasetError(f"malformed JSON ({exc.msg})", line=lineno) from exc
            rid = str(obj.get("record_id"))
            if "click_point" in obj:
                x, y = obj["click_point"]
                clicks[rid] = Point(float(x), float(y))
            else:
                preds[rid] = list(parse_record(obj, lineno).elements)
    if mode == "click":
        pairs, flagged = [], []
        for g in gts:
            if g.record_id in clicks:
                pairs.append((clicks[g.record_id], g.elements[0].bbox))
            elif g.record_id in preds:
                sub, _ = box_click_pairs({g.record_id: preds[g.record_id]}, [g])
                pairs.extend(sub)
            else:
                flagged.append(g.record_id)
                pairs.extend((None, e.bbox) for e in g.elements)
        report = EvalReport(mode="click", n_records=len(gts), flagged=flagged,
                            click_accuracy=_click_accuracy_with_misses(pairs))
    else:
        report = evaluate_records(preds, gts, thresholds, geometry_only=geometry_only)
    gt_ids = {g.record_id for g in gts}
    report.unexpected = sorted((set(preds) | set(clicks)) - gt_ids)
    report.dataset_digest = digest_file(gt_file)
    return report
