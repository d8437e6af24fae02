"""Tabular column embedding and token-sequence assembly.

Each clinical state cell becomes one token: the concatenation of a
column-identifier vector (width d_col) and a value vector (width d_val).
Categorical baselines index a class table; continuous labs project the
column-normalized scalar through a per-column direction + bias; an
unmeasured lab substitutes that column's trainable missing vector.
Medication sets, goal bins, and admission ordinals each have their own
full-width tables.  Admission embeddings are added to every token of the
admission; there is no per-token positional embedding.

Token order per subsequence: [goal] s_1^1..s_1^K a_1 ... s_T^1..s_T^K —
the final admission contributes states only (its medication set is the
prediction target).
"""
from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .synth import A1C_LAB

UNK_SET = "<UNK-SET>"
N_GOAL_BINS = 140


class SchemaError(ValueError):
    pass


@dataclass
class ColumnSpec:
    name: str
    kind: str                   # "categorical" | "continuous"
    n_classes: int = 0
    mean: float = 0.0
    std: float = 1.0
    is_lab: bool = False


@dataclass
class Schema:
    columns: list               # ordered ColumnSpec, baselines then labs
    med_vocab: dict             # tuple(sorted names) -> class id; UNK last
    n_goal_bins: int = N_GOAL_BINS
    unknown_set_count: int = 0  # running tally of fallback-class hits

    @property
    def n_columns(self):
        return len(self.columns)

    @property
    def lab_columns(self):
        return [c for c in self.columns if c.is_lab]

    @property
    def baseline_columns(self):
        return [c for c in self.columns if not c.is_lab]

    @property
    def n_med_classes(self):
        return len(self.med_vocab) + 1  # + reserved <UNK-SET>

    @property
    def unk_class(self):
        return len(self.med_vocab)

    def med_class(self, meds):
        key = tuple(sorted(meds))
        cls = self.med_vocab.get(key)
        if cls is None:
            self.unknown_set_count += 1
            return self.unk_class
        return cls

    def med_set_for_class(self, cls):
        if cls == self.unk_class:
            return frozenset()
        return frozenset(self._classes()[cls])

    def _classes(self):
        if not hasattr(self, "_by_id"):
            self._by_id = {v: k for k, v in self.med_vocab.items()}
        return self._by_id

    def to_dict(self):
        return {
            "columns": [vars(c) for c in self.columns],
            "med_vocab": [list(k) for k, _ in sorted(self.med_vocab.items(),
                                                     key=lambda kv: kv[1])],
            "n_goal_bins": self.n_goal_bins,
        }

    def save(self, path):
        with open(path, "w", encoding="utf-8") as f:
            json.dump(self.to_dict(), f, indent=2)

    @classmethod
    def from_dict(cls, d):
        columns = [ColumnSpec(**c) for c in d["columns"]]
        vocab = {tuple(names): i for i, names in enumerate(d["med_vocab"])}
        return cls(columns=columns, med_vocab=vocab, n_goal_bins=d["n_goal_bins"])

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as f:
            return cls.from_dict(json.load(f))


def fit_schema(train_patients, config):
    """Derive normalization stats and the medication-set vocabulary from the
    training split only."""
    if not train_patients:
        raise SchemaError("cannot fit a schema on an empty training split")
    columns = []
    for spec in config.baselines:
        columns.append(ColumnSpec(spec.name, "categorical", n_classes=spec.n_classes))
    for lab in config.labs:
        values = [
            adm.labs[lab.name]
            for p in train_patients for adm in p.admissions
            if adm.labs.get(lab.name) is not None
        ]
        if values:
            arr = np.asarray(values, dtype=np.float64)
            mean = float(arr.mean())
            std = float(arr.std())
            if std == 0.0:
                std = 1.0
        else:
            warnings.warn(f"lab column {lab.name!r} fully missing in training; "
                          "using mean 0, std 1")
            mean, std = 0.0, 1.0
        columns.append(ColumnSpec(lab.name, "continuous", mean=mean, std=std, is_lab=True))
    sets = sorted({tuple(sorted(adm.meds)) for p in train_patients for adm in p.admissions},
                  key=lambda k: (len(k), k))
    vocab = {key: i for i, key in enumerate(sets)}
    return Schema(columns=columns, med_vocab=vocab)


# ---------------------------------------------------------------------------
# trainable tables


def make_tables(schema, d_col, d_val, rng, max_admissions=64, column_embedding=True):
    """Allocate the embedding parameter dict.  With column_embedding=False
    (the w/o-CE ablation) a single shared value pathway of full model width
    replaces the per-column identifier + value split."""
    width = d_col + d_val
    labs = schema.lab_columns
    bases = schema.baseline_columns
    params = {}
    if column_embedding:
        params["emb/col_id"] = ad.parameter((schema.n_columns, d_col), rng)
        params["emb/base_values"] = ad.parameter(
            (sum(c.n_classes for c in bases), d_val), rng)
        params["emb/lab_dir"] = ad.parameter((len(labs), d_val), rng)
        params["emb/lab_bias"] = ad.parameter((len(labs), d_val), rng)
        params["emb/miss"] = ad.parameter((len(labs), d_val), rng)
    else:
        params["emb/base_values_shared"] = ad.parameter(
            (max(c.n_classes for c in bases), width), rng)
        params["emb/lab_dir_shared"] = ad.parameter((1, width), rng)
        params["emb/lab_bias_shared"] = ad.parameter((1, width), rng)
        params["emb/miss_shared"] = ad.parameter((1, width), rng)
    params["emb/med_set"] = ad.parameter((schema.n_med_classes, width), rng)
    # Goal-bin rows are initialized on a smooth ramp along one random
    # direction (scaled by the bin's standardized midpoint) plus noise.
    # Individual rows stay independently trainable, but neighboring bins
    # start similar and rarely-prompted bins inherit the trend from the
    # ramp rather than pure noise — without this, prompt sweeps across
    # sparsely observed goal bins read as noise.
    goal = ad.parameter((schema.n_goal_bins, width), rng)
    direction = rng.normal(0.0, 0.05, size=width)
    midpoints = (np.arange(schema.n_goal_bins) - schema.n_goal_bins / 2.0) \
        / (schema.n_goal_bins / 2.0)
    goal.data += (midpoints[:, None] * direction[None, :]).astype(goal.data.dtype)
    params["emb/goal"] = goal
    params["emb/admission"] = ad.parameter((max_admissions + 1, width), rng)
    return params


def base_class_offsets(schema):
    offs = []
    total = 0
    for c in schema.baseline_columns:
        offs.append(total)
        total += c.n_classes
    return np.asarray(offs, dtype=np.int64)


# ---------------------------------------------------------------------------
# numeric preparation (schema applied, no parameters involved)


@dataclass
class PreparedSequence:
    patient_id: str
    n_admissions: int
    base_ids: np.ndarray        # [J] class indices
    lab_values: np.ndarray      # [T, G] normalized, 0 where missing
    lab_missing: np.ndarray     # [T, G] 1.0 where missing
    med_ids: np.ndarray         # [T] medication-set classes (targets)
    outcomes: np.ndarray = None  # [T] next-admission A1c, NaN where unobserved
    goal_bin: int | None = None
    goal: float | None = None
    source: object = None       # originating subsequence, for reporting


def prepare_sequence(admissions, baseline, schema, patient_id="",
                     goal_bin=None, goal=None, source=None):
    bases = schema.baseline_columns
    labs = schema.lab_columns
    base_ids = np.empty(len(bases), dtype=np.int64)
    for j, col in enumerate(bases):
        if col.name not in baseline or baseline[col.name] is None:
            raise SchemaError(f"baseline column {col.name!r} missing a value "
                              "(missingness applies to lab columns only)")
        v = int(baseline[col.name])
        if not 0 <= v < col.n_classes:
            raise SchemaError(f"baseline column {col.name!r} value {v} outside "
                              f"0..{col.n_classes - 1}")
        base_ids[j] = v
    T = len(admissions)
    lab_values = np.zeros((T, len(labs)), dtype=np.float64)
    lab_missing = np.zeros((T, len(labs)), dtype=np.float64)
    med_ids = np.empty(T, dtype=np.int64)
    outcomes = np.full(T, np.nan)
    for t, adm in enumerate(admissions):
        for g, col in enumerate(labs):
            v = adm.labs.get(col.name)
            if v is None:
                lab_missing[t, g] = 1.0
            else:
                lab_values[t, g] = (v - col.mean) / col.std
        med_ids[t] = schema.med_class(adm.meds)
        if getattr(adm, "a1c_next", None) is not None:
            outcomes[t] = adm.a1c_next
    return PreparedSequence(
        patient_id=patient_id, n_admissions=T, base_ids=base_ids,
        lab_values=lab_values, lab_missing=lab_missing, med_ids=med_ids,
        outcomes=outcomes, goal_bin=goal_bin, goal=goal, source=source,
    )


def prepare_subsequence(sub, baseline_by_pid, schema):
    return prepare_sequence(
        sub.admissions, baseline_by_pid[sub.patient_id], schema,
        patient_id=sub.patient_id, goal_bin=sub.goal_bin, goal=sub.goal, source=sub,
    )


# ---------------------------------------------------------------------------
# token layout


KIND_GOAL, KIND_STATE, KIND_MED = 0, 1, 2


@dataclass
class TokenLayout:
    n_admissions: int
    n_columns: int
    include_goal: bool
    kinds: np.ndarray           # [N] token kind
    adm: np.ndarray             # [N] admission ordinal (goal -> 0)
    col: np.ndarray             # [N] column index for state tokens, -1 otherwise
    state_last: np.ndarray      # [T] position of the last state token per admission

    @property
    def n_tokens(self):
        return len(self.kinds)


def token_layout(n_admissions, n_columns, include_goal=True):
    kinds, adm, col = [], [], []
    if include_goal:
        kinds.append(KIND_GOAL)
        adm.append(0)
        col.append(-1)
    state_last = []
    for t in range(1, n_admissions + 1):
        for k in range(n_columns):
            kinds.append(KIND_STATE)
            adm.append(t)
            col.append(k)
        state_last.append(len(kinds) - 1)
        if t < n_admissions:
            kinds.append(KIND_MED)
            adm.append(t)
            col.append(-1)
    return TokenLayout(
        n_admissions=n_admissions, n_columns=n_columns, include_goal=include_goal,
        kinds=np.asarray(kinds), adm=np.asarray(adm), col=np.asarray(col),
        state_last=np.asarray(state_last),
    )


def token_labels(layout, schema):
    """Human-readable token names for attention exports."""
    labels = []
    for kind, t, k in zip(layout.kinds, layout.adm, layout.col):
        if kind == KIND_GOAL:
            labels.append("goal")
        elif kind == KIND_MED:
            labels.append(f"adm{t}:meds")
        else:
            labels.append(f"adm{t}:{schema.columns[k].name}")
    return labels


# ---------------------------------------------------------------------------
# encoding


def encode_state_token(schema, tables, column_index, value):
    """Embed one clinical state cell; `value=None` selects the [MISS] vector.

    The result excludes the admission-ordinal embedding, which is added
    per token during sequence assembly."""
    col = schema.columns[column_index]
    J = len(schema.baseline_columns)
    if col.kind == "categorical":
        if value is None:
            raise SchemaError(f"baseline column {col.name!r} missing a value "
                              "(missingness applies to lab columns only)")
        v = int(value)
        if not 0 <= v < col.n_classes:
            raise SchemaError(f"baseline column {col.name!r} value {v} outside "
                              f"0..{col.n_classes - 1}")
        val_vec = tables["emb/base_values"].data[base_class_offsets(schema)[column_index] + v]
    else:
        g = column_index - J
        if value is None:
            val_vec = tables["emb/miss"].data[g]
        else:
            z = (float(value) - col.mean) / col.std
            z = np.asarray(z, dtype=tables["emb/lab_dir"].data.dtype)
            val_vec = z * tables["emb/lab_dir"].data[g] + tables["emb/lab_bias"].data[g]
    return ad.Tensor(np.concatenate([tables["emb/col_id"].data[column_index], val_vec]))


def encode_batch(prepared, schema, tables, include_goal=True, goal_bins=None,
                 column_embedding=True):
    """Embed a batch of prepared sequences sharing one admission count.

    Returns a Tensor of shape [B, n_tokens, width].  `goal_bins` overrides
    each sequence's own goal bin (used by goal prompting)."""
    T = prepared[0].n_admissions
    if any(p.n_admissions != T for p in prepared):
        raise SchemaError("encode_batch requires a uniform admission count")
    B = len(prepared)
    K = schema.n_columns
    J = len(schema.baseline_columns)
    layout = token_layout(T, K, include_goal=include_goal)

    lab_vals = np.stack([p.lab_values for p in prepared])      # [B,T,G]
    lab_miss = np.stack([p.lab_missing for p in prepared])     # [B,T,G]
    base_ids = np.stack([p.base_ids for p in prepared])        # [B,J]

    if column_embedding:
        offsets = base_class_offsets(schema)
        base_idx = np.broadcast_to((base_ids + offsets)[:, None, :], (B, T, J))
        base_part = ad.gather(tables["emb/base_values"], base_idx)      # [B,T,J,dv]
        vals = ad.Tensor(lab_vals[..., None])
        miss = ad.Tensor(lab_miss[..., None])
        keep = ad.Tensor(1.0 - lab_miss[..., None])
        lab_part = ad.add(ad.mul(vals, tables["emb/lab_dir"]), tables["emb/lab_bias"])
        lab_part = ad.add(ad.mul(lab_part, keep), ad.mul(tables["emb/miss"], miss))
        values = ad.concat([base_part, lab_part], axis=2)               # [B,T,K,dv]
        d_col = tables["emb/col_id"].shape[1]
        col_idx = np.broadcast_to(np.arange(K)[None, None, :], (B, T, K))
        ids = ad.gather(tables["emb/col_id"], col_idx)                  # [B,T,K,dc]
        states = ad.concat([ids, values], axis=-1)                      # [B,T,K,width]
    else:
        base_idx = np.broadcast_to(base_ids[:, None, :], (B, T, J))
        base_part = ad.gather(tables["emb/base_values_shared"], base_idx)
        vals = ad.Tensor(lab_vals[..., None])
        miss = ad.Tensor(lab_miss[..., None])
        keep = ad.Tensor(1.0 - lab_miss[..., None])
        lab_part = ad.add(ad.mul(vals, tables["emb/lab_dir_shared"]),
                          tables["emb/lab_bias_shared"])
        lab_part = ad.add(ad.mul(lab_part, keep),
                          ad.mul(tables["emb/miss_shared"], miss))
        states = ad.concat([base_part, lab_part], axis=2)               # [B,T,K,width]

    width = states.shape[-1]
    blocks = [ad.reshape(states, (B, T * K, width))]
    n_block = T * K
    if T > 1:
        med_idx = np.stack([p.med_ids[:T - 1] for p in prepared])       # [B,T-1]
        blocks.append(ad.gather(tables["emb/med_set"], med_idx))
        n_block += T - 1
    if include_goal:
        if goal_bins is None:
            goal_bins = np.asarray([p.goal_bin for p in prepared])
        else:
            goal_bins = np.broadcast_to(np.asarray(goal_bins), (B,))
        blocks.insert(0, ad.gather(tables["emb/goal"], goal_bins[:, None]))
        n_block += 1
    block = ad.concat(blocks, axis=1)

    # permute block order [goal? states meds] into token order
    perm = np.empty(layout.n_tokens, dtype=np.int64)
    goal_off = 1 if include_goal else 0
    state_rows = iter(range(goal_off, goal_off + T * K))
    med_rows = iter(range(goal_off + T * K, n_block))
    for pos, kind in enumerate(layout.kinds):
        if kind == KIND_GOAL:
            perm[pos] = 0
        elif kind == KIND_STATE:
            perm[pos] = next(state_rows)
        else:
            perm[pos] = next(med_rows)
    tokens = ad.gather_axis1(block, perm)

    n_adm_rows = tables["emb/admission"].shape[0]
    if layout.adm.max() >= n_adm_rows:
        raise SchemaError(
            f"admission ordinal {int(layout.adm.max())} exceeds the embedding "
            f"table capacity {n_adm_rows - 1}")
    adm_emb = ad.gather(tables["emb/admission"], layout.adm)            # [N,width]
    return ad.add(tokens, adm_emb)


def assemble_token_sequence(pair, baseline_by_pid, schema, tables,
                            context_limit=None, column_embedding=True):
    """Embed one training pair (history + current states, goal prepended).

    Returns (tokens Tensor [1, N, width], layout)."""
    admissions = list(pair.history) + [pair.current]
    layout = token_layout(len(admissions), schema.n_columns, include_goal=True)
    if context_limit is not None and layout.n_tokens > context_limit:
        raise SchemaError(
            f"token count {layout.n_tokens} exceeds context limit {context_limit}")
    seq = prepare_sequence(admissions, baseline_by_pid[pair.patient_id], schema,
                           patient_id=pair.patient_id,
                           goal_bin=pair.goal_bin, goal=pair.goal)
    tokens = encode_batch([seq], schema, tables, include_goal=True,
                          column_embedding=column_embedding)
    return tokens, layout
