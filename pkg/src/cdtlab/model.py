"""Admission-wise masked transformer for goal-prompted medication
recommendation.

The model reads a token sequence [goal] s_1^1..s_1^K a_1 ... s_T^1..s_T^K
and predicts the medication-set class of every admission from that
admission's last state token.  Attention is admission-wise: a state token
may attend bidirectionally to every state token of its own admission and
to everything earlier, but never to its own admission's medication token;
goal and medication tokens attend causally.  Queries and keys are
L2-normalized per head with a learnable per-head scale.
"""
from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import embedding as emb
from .checkpoint import load_checkpoint, save_checkpoint
from .embedding import KIND_STATE, token_labels, token_layout

MASK_BIAS = -1e30
INFERENCE_BATCH = 32


@dataclass
class CdtConfig:
    n_layers: int = 4
    n_heads: int = 2
    d_col: int = 16
    d_val: int = 112
    mlp_ratio: int = 4
    dropout: float = 0.1
    lr: float = 1e-4
    warmup_steps: int = 1000
    clip_norm: float = 0.25
    weight_decay: float = 1e-4
    batch_size: int = 128
    max_epochs: int = 40
    patience: int = 3
    max_admissions: int = 64
    seed: int = 0
    column_embedding: bool = True   # False = shared value pathway ablation
    admission_mask: bool = True     # False = plain causal ablation

    @property
    def width(self):
        return self.d_col + self.d_val

    def validate(self):
        if self.width % self.n_heads != 0:
            raise ad.ShapeError(
                f"model width {self.width} not divisible by {self.n_heads} heads")

    def to_dict(self):
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


# ---------------------------------------------------------------------------
# attention masks


def build_admission_mask(layout):
    """Additive attention-bias matrix [N, N]: 0 where attention is allowed,
    MASK_BIAS where it is blocked.

    A state token of admission t sees every token up to and including the
    last state token of admission t; goal and medication tokens see only
    positions up to themselves."""
    n = layout.n_tokens
    pos = np.arange(n)
    limit = np.where(
        layout.kinds == KIND_STATE,
        layout.state_last[layout.adm - 1],  # adm is 1-based for state tokens
        pos,
    )
    allowed = pos[None, :] <= limit[:, None]
    return np.where(allowed, 0.0, MASK_BIAS).astype(np.float32)


def build_causal_mask(n_tokens):
    """Plain lower-triangular bias matrix (ablation variant)."""
    pos = np.arange(n_tokens)
    allowed = pos[None, :] <= pos[:, None]
    return np.where(allowed, 0.0, MASK_BIAS).astype(np.float32)


# ---------------------------------------------------------------------------
# transformer forward


def _split_heads(x, n_heads):
    b, n, d = x.shape
    hd = d // n_heads
    return ad.transpose(ad.reshape(x, (b, n, n_heads, hd)), (0, 2, 1, 3))


def _merge_heads(x):
    b, h, n, hd = x.shape
    return ad.reshape(ad.transpose(x, (0, 2, 1, 3)), (b, n, h * hd))


def attention_with_qknorm(x, params, prefix, n_heads, mask, dropout_p=0.0,
                          rng=None, capture=None):
    """Multi-head attention with per-head L2-normalized queries and keys.

    `mask` is an additive [N, N] bias; `capture`, if a list, receives the
    [B, H, N, N] attention weights of this layer."""
    q = _split_heads(ad.matmul(x, params[f"{prefix}/wq"]), n_heads)
    k = _split_heads(ad.matmul(x, params[f"{prefix}/wk"]), n_heads)
    v = _split_heads(ad.matmul(x, params[f"{prefix}/wv"]), n_heads)
    q = ad.mul(ad.l2_normalize(q), params[f"{prefix}/qk_scale"])
    k = ad.l2_normalize(k)
    scores = ad.matmul(q, ad.transpose(k, (0, 1, 3, 2)))        # [B,H,N,N]
    scores = ad.add(scores, ad.Tensor(mask[None, None]))
    weights = ad.softmax(scores)
    if capture is not None:
        capture.append(weights.data.copy())
    if dropout_p > 0.0:
        weights = ad.dropout(weights, dropout_p, rng)
    out = _merge_heads(ad.matmul(weights, v))
    return ad.matmul(out, params[f"{prefix}/wo"])


def transformer_states(params, tokens, layout, config, train=False, rng=None,
                       capture=None):
    """Run the backbone and return the final-norm representation at each
    admission's last state token: Tensor [B, T, width]."""
    if config.admission_mask:
        mask = build_admission_mask(layout)
    else:
        mask = build_causal_mask(layout.n_tokens)
    p = config.dropout if train else 0.0
    x = tokens
    if p > 0.0:
        x = ad.dropout(x, p, rng)
    for layer in range(config.n_layers):
        pre = f"l{layer}"
        h = ad.layer_norm(x, params[f"{pre}/ln1_g"], params[f"{pre}/ln1_b"])
        a = attention_with_qknorm(h, params, pre, config.n_heads, mask,
                                  dropout_p=p, rng=rng, capture=capture)
        if p > 0.0:
            a = ad.dropout(a, p, rng)
        x = ad.add(x, a)
        h = ad.layer_norm(x, params[f"{pre}/ln2_g"], params[f"{pre}/ln2_b"])
        m = ad.add(ad.matmul(h, params[f"{pre}/w1"]), params[f"{pre}/b1"])
        m = ad.add(ad.matmul(ad.relu(m), params[f"{pre}/w2"]), params[f"{pre}/b2"])
        if p > 0.0:
            m = ad.dropout(m, p, rng)
        x = ad.add(x, m)
    x = ad.layer_norm(x, params["final/ln_g"], params["final/ln_b"])
    return ad.gather_axis1(x, layout.state_last)                # [B,T,width]


def transformer_forward(params, tokens, layout, config, train=False, rng=None,
                        capture=None):
    """Backbone plus the medication head: Tensor [B, T, n_med_classes]."""
    reads = transformer_states(params, tokens, layout, config, train=train,
                               rng=rng, capture=capture)
    return ad.add(ad.matmul(reads, params["head/w"]), params["head/b"])


# ---------------------------------------------------------------------------
# batching


def group_by_admission_count(prepared, batch_size):
    """Chunk prepared sequences into batches sharing one admission count, so
    every batch has a single token layout and mask (no padding needed)."""
    by_t = {}
    for p in prepared:
        by_t.setdefault(p.n_admissions, []).append(p)
    batches = []
    for t in sorted(by_t):
        group = by_t[t]
        for i in range(0, len(group), batch_size):
            batches.append(group[i:i + batch_size])
    return batches


# ---------------------------------------------------------------------------
# parameter construction


def init_backbone_params(schema, config, rng):
    """Embedding tables plus the transformer stack and final norm (no head)."""
    d = config.width
    params = emb.make_tables(
        schema, config.d_col, config.d_val, rng,
        max_admissions=config.max_admissions,
        column_embedding=config.column_embedding,
    )
    hd = d // config.n_heads
    for layer in range(config.n_layers):
        pre = f"l{layer}"
        for name in ("wq", "wk", "wv", "wo"):
            params[f"{pre}/{name}"] = ad.parameter((d, d), rng)
        scale = ad.parameter((config.n_heads, 1, 1), rng)
        scale.data[:] = math.sqrt(hd)
        params[f"{pre}/qk_scale"] = scale
        params[f"{pre}/ln1_g"] = _ones(d)
        params[f"{pre}/ln1_b"] = _zeros(d)
        params[f"{pre}/ln2_g"] = _ones(d)
        params[f"{pre}/ln2_b"] = _zeros(d)
        params[f"{pre}/w1"] = ad.parameter((d, config.mlp_ratio * d), rng)
        params[f"{pre}/b1"] = _zeros(config.mlp_ratio * d)
        params[f"{pre}/w2"] = ad.parameter((config.mlp_ratio * d, d), rng)
        params[f"{pre}/b2"] = _zeros(d)
    params["final/ln_g"] = _ones(d)
    params["final/ln_b"] = _zeros(d)
    return params


# ---------------------------------------------------------------------------
# the model


class CdtModel:
    """Bundles schema, embedding tables, transformer parameters, and the
    training/recommendation procedures."""

    def __init__(self, schema, config=None, params=None):
        self.schema = schema
        self.config = config or CdtConfig()
        self.config.validate()
        rng = np.random.default_rng(self.config.seed)
        self.params = params if params is not None else self._init_params(rng)

    # -- parameters --------------------------------------------------------

    def _init_params(self, rng):
        params = init_backbone_params(self.schema, self.config, rng)
        d = self.config.width
        params["head/w"] = ad.parameter((d, self.schema.n_med_classes), rng)
        params["head/b"] = _zeros(self.schema.n_med_classes)
        return params

    @property
    def n_parameters(self):
        return sum(t.data.size for t in self.params.values())

    # -- forward / loss ----------------------------------------------------

    def batch_logits(self, batch, train=False, rng=None, goal_bins=None,
                     capture=None):
        layout = token_layout(batch[0].n_admissions, self.schema.n_columns)
        tokens = emb.encode_batch(
            batch, self.schema, self.params, goal_bins=goal_bins,
            column_embedding=self.config.column_embedding,
        )
        if train and self.config.dropout > 0.0:
            logits = transformer_forward(self.params, tokens, layout,
                                         self.config, train=True, rng=rng,
                                         capture=capture)
        else:
            logits = transformer_forward(self.params, tokens, layout,
                                         self.config, capture=capture)
        return logits, layout

    def batch_loss(self, batch, train=False, rng=None):
        logits, _ = self.batch_logits(batch, train=train, rng=rng)
        targets = np.stack([p.med_ids for p in batch])          # [B,T]
        return ad.cross_entropy(logits, targets)

    def _infer_batch_size(self):
        # attention scratch grows with batch x n_tokens^2; keep forward-only
        # sweeps small so long-sequence batches fit in memory
        return max(1, min(self.config.batch_size, INFERENCE_BATCH))

    def mean_loss(self, prepared):
        """Per-admission mean cross-entropy over a split, without dropout."""
        total, count = 0.0, 0
        for batch in group_by_admission_count(prepared, self._infer_batch_size()):
            n = len(batch) * batch[0].n_admissions
            total += self.batch_loss(batch).item() * n
            count += n
        return total / max(count, 1)

    # -- training ----------------------------------------------------------

    def train(self, train_prepared, valid_prepared, log_path=None,
              checkpoint_dir=None, verbose=False):
        """AdamW with linear warmup, global-norm clipping, and early stopping
        on validation loss.  Returns the training log (list of epoch dicts);
        the model is left holding the best-validation parameters."""
        cfg = self.config
        rng = np.random.default_rng(cfg.seed + 1)
        opt = ad.AdamW(self.params, lr=cfg.lr, weight_decay=cfg.weight_decay,
                       clip_norm=cfg.clip_norm, warmup_steps=cfg.warmup_steps)
        best_loss = math.inf
        best_params = None
        bad_epochs = 0
        log = []
        for epoch in range(1, cfg.max_epochs + 1):
            t0 = time.time()
            order = rng.permutation(len(train_prepared))
            shuffled = [train_prepared[i] for i in order]
            batches = group_by_admission_count(shuffled, cfg.batch_size)
            batch_order = rng.permutation(len(batches))
            total, count, norms = 0.0, 0, []
            for bi in batch_order:
                batch = batches[bi]
                opt.zero_grad()
                loss = self.batch_loss(batch, train=True, rng=rng)
                ad.backward(loss)
                norms.append(opt.step())
                n = len(batch) * batch[0].n_admissions
                total += loss.item() * n
                count += n
            train_loss = total / max(count, 1)
            valid_loss = self.mean_loss(valid_prepared)
            entry = {
                "epoch": epoch,
                "train_loss": train_loss,
                "valid_loss": valid_loss,
                "lr": opt.effective_lr(opt.step_count),
                "grad_norm_mean": float(np.mean(norms)) if norms else 0.0,
                "seconds": round(time.time() - t0, 2),
            }
            log.append(entry)
            if verbose:
                print(f"epoch {epoch}: train {train_loss:.4f} "
                      f"valid {valid_loss:.4f} ({entry['seconds']}s)")
            if valid_loss < best_loss - 1e-6:
                best_loss = valid_loss
                best_params = {k: v.data.copy() for k, v in self.params.items()}
                bad_epochs = 0
                if checkpoint_dir is not None:
                    self.save(checkpoint_dir)
            else:
                bad_epochs += 1
                if bad_epochs >= cfg.patience:
                    break
        if best_params is not None:
            for k, v in self.params.items():
                v.data = best_params[k]
            if checkpoint_dir is not None:
                self.save(checkpoint_dir)
        if log_path is not None:
            with open(log_path, "w", encoding="utf-8") as f:
                json.dump(log, f, indent=2)
        return log

    # -- persistence -------------------------------------------------------

    def save(self, dirpath):
        import pathlib
        path = pathlib.Path(dirpath)
        path.mkdir(parents=True, exist_ok=True)
        save_checkpoint(self.params, path)
        self.schema.save(path / "schema.json")
        with open(path / "config.json", "w", encoding="utf-8") as f:
            json.dump(self.config.to_dict(), f, indent=2)

    @classmethod
    def load(cls, dirpath):
        import pathlib
        path = pathlib.Path(dirpath)
        schema = emb.Schema.load(path / "schema.json")
        with open(path / "config.json", encoding="utf-8") as f:
            config = CdtConfig.from_dict(json.load(f))
        model = cls(schema, config)
        weights = load_checkpoint(path)
        for name, tensor in model.params.items():
            tensor.data = weights[name].reshape(tensor.data.shape)
        return model

    # -- inference ---------------------------------------------------------

    def predict_class(self, prepared):
        """Most likely non-fallback medication-set class for each sequence's
        final admission, under the sequence's own goal."""
        out = {}
        for batch in group_by_admission_count(prepared, self._infer_batch_size()):
            logits, _ = self.batch_logits(batch)
            probs = _softmax_np(logits.data[:, -1, :])
            probs[:, self.schema.unk_class] = -1.0  # reserved class never recommended
            for p, row in zip(batch, probs):
                out[id(p)] = int(row.argmax())
        return [out[id(p)] for p in prepared]

    def recommend(self, prepared_one, goal_bins):
        """Sweep candidate goal bins for one sequence and return the best
        (goal_bin, class) with per-bin detail, maximizing class probability.

        The reserved fallback class is excluded from the argmax; its
        probability mass is reported per bin."""
        goal_bins = list(goal_bins)
        if not goal_bins:
            raise ad.ShapeError("recommend: at least one goal bin required")
        chunk_size = self._infer_batch_size()
        rows = []
        for i in range(0, len(goal_bins), chunk_size):
            chunk = goal_bins[i:i + chunk_size]
            logits, _ = self.batch_logits([prepared_one] * len(chunk),
                                          goal_bins=np.asarray(chunk))
            rows.append(_softmax_np(logits.data[:, -1, :]))
        probs = np.concatenate(rows, axis=0)                    # [n_bins, d_a]
        per_bin = []
        best = None
        for b, row in zip(goal_bins, probs):
            masked = row.copy()
            masked[self.schema.unk_class] = -1.0
            cls = int(masked.argmax())
            entry = {
                "goal_bin": int(b),
                "class": cls,
                "probability": float(row[cls]),
                "medications": sorted(self.schema.med_set_for_class(cls)),
                "fallback_mass": float(row[self.schema.unk_class]),
            }
            per_bin.append(entry)
            if best is None or entry["probability"] > best["probability"]:
                best = entry
        return best, per_bin

    def capture_attention(self, prepared_one):
        """Forward one sequence and return every layer's attention weights
        with human-readable token labels."""
        capture = []
        _, layout = self.batch_logits([prepared_one], capture=capture)
        return {
            "patient_id": prepared_one.patient_id,
            "n_admissions": prepared_one.n_admissions,
            "token_labels": token_labels(layout, self.schema),
            "layers": [w[0].tolist() for w in capture],         # [H,N,N] each
        }

    def admission_embeddings(self, prepared):
        """Final-layer representation at each admission's last state token.

        Returns (array [n_rows, width], rows) where each row is
        (patient_id, admission_index, goal_bin, med_class)."""
        vecs, rows = [], []
        for batch in group_by_admission_count(prepared, self._infer_batch_size()):
            layout = token_layout(batch[0].n_admissions, self.schema.n_columns)
            tokens = emb.encode_batch(
                batch, self.schema, self.params,
                column_embedding=self.config.column_embedding)
            reads = self._readout(tokens, layout)
            for i, p in enumerate(batch):
                for t in range(p.n_admissions):
                    vecs.append(reads[i, t])
                    rows.append((p.patient_id, t + 1, p.goal_bin,
                                 int(p.med_ids[t])))
        return np.asarray(vecs), rows

    def _readout(self, tokens, layout):
        return transformer_states(self.params, tokens, layout, self.config).data

    def export_admission_embeddings(self, prepared, path):
        vecs, rows = self.admission_embeddings(prepared)
        with open(path, "w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f)
            writer.writerow(["patient_id", "admission_index", "goal_bin",
                             "med_class"] + [f"d{i}" for i in range(vecs.shape[1])])
            for (pid, t, gb, cls), vec in zip(rows, vecs):
                writer.writerow([pid, t, gb, cls] + [f"{v:.6g}" for v in vec])


def _softmax_np(x):
    x = x.astype(np.float64)
    x = x - x.max(axis=-1, keepdims=True)
    e = np.exp(x)
    return e / e.sum(axis=-1, keepdims=True)


def _ones(n):
    t = ad.Tensor(np.ones(n), requires_grad=True)
    return t


def _zeros(n):
    t = ad.Tensor(np.zeros(n), requires_grad=True)
    return t
