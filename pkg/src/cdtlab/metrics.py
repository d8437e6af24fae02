"""Item-wise recommendation metrics, length-stratified reporting, and the
architecture ablation suite.

Recommended and factual medication sets are factorized into individual
medications; per-medication true/false positives and negatives accumulate
into a confusion table from which Recall, FPR, and the Youden index
(Recall − FPR) are computed.  Metrics with a zero denominator are reported
as null, never zero.  Reports stratify by input admission length: cold
start (length 1), all lengths ≥ 2 pooled, and a long-history bucket at
the cohort's own top-15% length percentile.
"""
from __future__ import annotations

import csv
import hashlib
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .model import CdtModel

LONG_BUCKET_PERCENTILE = 85.0


@dataclass
class ItemConfusion:
    """Per-medication confusion counts over factorized set predictions."""
    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0

    def add(self, predicted, factual, catalog):
        """Factorize one (predicted set, factual set) pair over the
        medication catalog and accumulate."""
        for med in catalog:
            in_pred = med in predicted
            in_fact = med in factual
            if in_pred and in_fact:
                self.tp += 1
            elif in_pred:
                self.fp += 1
            elif in_fact:
                self.fn += 1
            else:
                self.tn += 1

    def merge(self, other):
        self.tp += other.tp
        self.fp += other.fp
        self.tn += other.tn
        self.fn += other.fn

    @property
    def total(self):
        return self.tp + self.fp + self.tn + self.fn


def recall_fpr(conf):
    """(recall, fpr); a zero denominator yields None for that metric."""
    recall = conf.tp / (conf.tp + conf.fn) if conf.tp + conf.fn else None
    fpr = conf.fp / (conf.fp + conf.tn) if conf.fp + conf.tn else None
    return recall, fpr


def youden(recall, fpr):
    """Recall − FPR; None when either input is undefined."""
    if recall is None or fpr is None:
        return None
    return recall - fpr


def medication_catalog(schema):
    """Sorted union of medication names across the set vocabulary."""
    names = set()
    for key in schema.med_vocab:
        names.update(key)
    return sorted(names)


# ---------------------------------------------------------------------------
# prediction collection


@dataclass
class PredictionRow:
    patient_id: str
    input_length: int           # admissions visible to the prediction
    predicted: frozenset
    factual: frozenset


def collect_predictions(model, prepared, schema):
    """One PredictionRow per admission of each prepared subsequence.

    The prediction for admission t sees admissions 1..t (states of t
    included), so its input length is t.  Works for the goal-prompted
    recommender and the behavior-cloning baseline alike; the reserved
    fallback class is excluded from every argmax."""
    from .model import group_by_admission_count
    rows = []
    batch_size = (model._infer_batch_size()
                  if hasattr(model, "_infer_batch_size")
                  else model.config.batch_size)
    for batch in group_by_admission_count(prepared, batch_size):
        if isinstance(model, CdtModel):
            logits = model.batch_logits(batch)[0].data
        else:
            logits = model.logits(batch).data
        masked = logits.copy()
        masked[..., schema.unk_class] = -np.inf
        classes = masked.argmax(axis=-1)                    # [B,T]
        for row, p in enumerate(batch):
            for t in range(p.n_admissions):
                rows.append(PredictionRow(
                    patient_id=p.patient_id,
                    input_length=t + 1,
                    predicted=schema.med_set_for_class(int(classes[row, t])),
                    factual=schema.med_set_for_class(int(p.med_ids[t])),
                ))
    return rows


# ---------------------------------------------------------------------------
# stratified report


def long_bucket_threshold(lengths, percentile=LONG_BUCKET_PERCENTILE):
    """Smallest input length at or above the cohort's top-(100−p)% mark."""
    if not lengths:
        return None
    return int(np.ceil(np.percentile(np.asarray(lengths), percentile)))


def _metrics_dict(conf):
    recall, fpr = recall_fpr(conf)
    return {
        "n": conf.total,
        "recall": recall,
        "fpr": fpr,
        "youden": youden(recall, fpr),
    }


def stratified_report(rows, schema, percentile=LONG_BUCKET_PERCENTILE):
    """Bucketed and per-length item-wise metrics for a prediction set.

    Buckets: "1" (cold start), "2+" (all longer inputs pooled), and
    ">=L" where L is the top-15% input-length percentile."""
    catalog = medication_catalog(schema)
    per_length = {}
    for row in rows:
        conf = per_length.setdefault(row.input_length, ItemConfusion())
        conf.add(row.predicted, row.factual, catalog)
    threshold = long_bucket_threshold(
        [row.input_length for row in rows], percentile)

    def pooled(lo):
        conf = ItemConfusion()
        for length, c in per_length.items():
            if length >= lo:
                conf.merge(c)
        return conf

    cold = per_length.get(1, ItemConfusion())
    buckets = {
        "1": _metrics_dict(cold),
        "2+": _metrics_dict(pooled(2)),
    }
    if threshold is not None:
        buckets[f">={threshold}"] = _metrics_dict(pooled(threshold))
    return {
        "buckets": buckets,
        "long_threshold": threshold,
        "per_length": [
            {"input_length": length, **_metrics_dict(conf)}
            for length, conf in sorted(per_length.items())
        ],
    }


def write_length_metrics_csv(reports, path):
    """CSV of per-length metrics for one or more named reports
    (`reports` maps model name -> stratified_report output)."""
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["model", "input_length", "n", "recall", "fpr", "youden"])
        for name, report in reports.items():
            for entry in report["per_length"]:
                writer.writerow([
                    name, entry["input_length"], entry["n"],
                    _fmt(entry["recall"]), _fmt(entry["fpr"]),
                    _fmt(entry["youden"]),
                ])


def _fmt(value):
    return "" if value is None else f"{value:.6f}"


def write_predictions_csv(rows, path):
    """One CSV row per prediction; medication sets are ';'-joined names."""
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["patient_id", "input_length", "predicted", "factual"])
        for row in rows:
            writer.writerow([row.patient_id, row.input_length,
                             ";".join(sorted(row.predicted)),
                             ";".join(sorted(row.factual))])


def read_predictions_csv(path):
    rows = []
    with open(path, newline="", encoding="utf-8") as f:
        for rec in csv.DictReader(f):
            rows.append(PredictionRow(
                patient_id=rec["patient_id"],
                input_length=int(rec["input_length"]),
                predicted=frozenset(x for x in rec["predicted"].split(";") if x),
                factual=frozenset(x for x in rec["factual"].split(";") if x),
            ))
    return rows


# ---------------------------------------------------------------------------
# ablation suite


ABLATION_VARIANTS = (
    ("full", {"column_embedding": True, "admission_mask": True}),
    ("no_column_embedding", {"column_embedding": False, "admission_mask": True}),
    ("no_admission_mask", {"column_embedding": True, "admission_mask": False}),
    ("no_both", {"column_embedding": False, "admission_mask": False}),
)


def split_fingerprint(prepared, seed):
    """Hash of the exact training material (sequence identities and goals)
    plus the seed — equal across variants by construction, asserted."""
    h = hashlib.sha256()
    h.update(str(seed).encode())
    for p in prepared:
        h.update(f"{p.patient_id}:{p.goal_bin}:{p.n_admissions};".encode())
    return h.hexdigest()


def ablation_suite(schema, base_config, train_prepared, valid_prepared,
                   test_prepared, verbose=False):
    """Train the four mask/embedding variants on identical data and seeds
    and report per-bucket Youden deltas against the full model.

    A variant whose training aborts on non-finite numerics is marked
    failed; the suite continues."""
    results = []
    fingerprints = set()
    full_buckets = None
    for name, flags in ABLATION_VARIANTS:
        cfg = type(base_config).from_dict({**base_config.to_dict(), **flags})
        fingerprints.add(split_fingerprint(train_prepared, cfg.seed))
        entry = {"variant": name, **flags, "failed": False, "buckets": None,
                 "deltas": None}
        try:
            model = CdtModel(schema, cfg)
            model.train(train_prepared, valid_prepared, verbose=verbose)
            rows = collect_predictions(model, test_prepared, schema)
            entry["buckets"] = {
                k: v["youden"]
                for k, v in stratified_report(rows, schema)["buckets"].items()
            }
        except ad.NumericsError as exc:
            entry["failed"] = True
            entry["error"] = str(exc)
        if name == "full":
            full_buckets = entry["buckets"]
        if entry["buckets"] is not None and full_buckets is not None:
            entry["deltas"] = {
                k: (entry["buckets"][k] - full_buckets[k]
                    if entry["buckets"][k] is not None
                    and full_buckets.get(k) is not None else None)
                for k in entry["buckets"]
            }
        results.append(entry)
    if len(fingerprints) != 1:
        raise RuntimeError("ablation variants saw different training data")
    return results


def write_ablation_csv(results, path):
    buckets = sorted({k for r in results if r["buckets"] for k in r["buckets"]})
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["variant", "column_embedding", "admission_mask",
                         "failed"]
                        + [f"youden[{b}]" for b in buckets]
                        + [f"delta[{b}]" for b in buckets])
        for r in results:
            row = [r["variant"], r["column_embedding"], r["admission_mask"],
                   r["failed"]]
            for b in buckets:
                row.append(_fmt((r["buckets"] or {}).get(b)))
            for b in buckets:
                row.append(_fmt((r["deltas"] or {}).get(b)))
            writer.writerow(row)
