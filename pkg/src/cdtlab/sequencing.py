"""Goal-conditioned sequencing: slice patient records at future-minimum
outcomes, prepend each minimum as the subsequence goal, and expand
subsequences into per-admission training pairs.

The outcome attached to admission t is the next-admission A1c
(`a1c_next`), i.e. the value observed after admission t.  The recursive
rule: among admissions in the working span whose outcome is observed,
take the earliest one attaining the minimum outcome, emit the span up to
and including it with that outcome as the goal, and recurse on the rest.
Admissions after the last observed outcome are dropped.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass

GOAL_MIN, GOAL_MAX = 4.0, 18.0
N_GOAL_BINS = 140


class GoalRangeError(ValueError):
    pass


@dataclass
class GoalConditionedSubsequence:
    goal: float                  # outcome value prepended as the goal
    goal_bin: int
    admissions: list             # contiguous slice of synth.Admission
    patient_id: str
    start_offset: int            # 0-based offset of the slice in the source record


@dataclass
class TrainingPair:
    goal: float
    goal_bin: int
    history: list                # admissions 1..t-1, in full
    current: object              # admission t (states; meds are the target)
    target_meds: frozenset
    admission_index: int         # t, 1-based within the subsequence
    patient_id: str


def discretize_goal(a1c):
    """Map an A1c percentage to its 0.1-wide bin index (0..139)."""
    if not (GOAL_MIN <= a1c < GOAL_MAX):
        raise GoalRangeError(f"A1c {a1c} outside [{GOAL_MIN}, {GOAL_MAX})")
    # values are recorded on a 0.1 grid; the epsilon absorbs float representation error
    return int(math.floor((a1c - GOAL_MIN) * 10.0 + 1e-6))


def bin_midpoint(bin_index):
    if not 0 <= bin_index < N_GOAL_BINS:
        raise GoalRangeError(f"bin index {bin_index} outside 0..{N_GOAL_BINS - 1}")
    return GOAL_MIN + 0.1 * bin_index + 0.05


def goal_condition_split(patient):
    """Slice one patient record into goal-conditioned subsequences."""
    admissions = patient.admissions
    out = []
    start = 0
    n = len(admissions)
    while start < n:
        best_idx = None
        best_val = None
        for i in range(start, n):
            y = admissions[i].a1c_next
            if y is None:
                continue
            if best_val is None or y < best_val:  # strict: earliest minimum wins ties
                best_val = y
                best_idx = i
        if best_idx is None:
            break  # no observed outcome left; remaining admissions are dropped
        out.append(GoalConditionedSubsequence(
            goal=best_val,
            goal_bin=discretize_goal(best_val),
            admissions=list(admissions[start:best_idx + 1]),
            patient_id=patient.pid,
            start_offset=start,
        ))
        start = best_idx + 1
    return out


def build_training_pairs(sub):
    """Expand a subsequence with T admissions into its T training pairs."""
    pairs = []
    for t in range(len(sub.admissions)):
        pairs.append(TrainingPair(
            goal=sub.goal,
            goal_bin=sub.goal_bin,
            history=list(sub.admissions[:t]),
            current=sub.admissions[t],
            target_meds=sub.admissions[t].meds,
            admission_index=t + 1,
            patient_id=sub.patient_id,
        ))
    return pairs


def split_cohort_subsequences(cohort):
    out = []
    for patient in cohort:
        out.extend(goal_condition_split(patient))
    return out


def export_subsequences(subsequences, path):
    """JSONL mirror of the dataset format, one subsequence per line."""
    with open(path, "w", encoding="utf-8") as f:
        for sub in subsequences:
            rec = {
                "patient_id": sub.patient_id,
                "goal": sub.goal,
                "goal_bin": sub.goal_bin,
                "start_offset": sub.start_offset,
                "admissions": [
                    {"labs": a.labs, "meds": sorted(a.meds), "a1c_next": a.a1c_next}
                    for a in sub.admissions
                ],
            }
            f.write(json.dumps(rec, sort_keys=True))
            f.write("\n")
