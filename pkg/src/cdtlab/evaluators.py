"""Counterfactual outcome evaluators and the behavior-cloning baseline.

Three evaluator candidates estimate next-admission A1c from a balanced
history representation Phi and a candidate medication set:

* CRN-E — LSTM backbone, gradient-reversal balancing;
* T-GRL — transformer backbone (the recommender's stack without the goal
  token), gradient-reversal balancing;
* T-DC  — transformer backbone, domain-confusion balancing with
  alternating head/backbone updates.

Each has an outcome head G_Y(Phi, a_t) and a prescription classifier
G_A(Phi).  Balancing drives Phi to be uninformative about the factual
prescription while remaining predictive of the outcome.  The candidate
with the lowest factual test MSE is selected for effect estimation.

The behavior-cloning (BC) baseline is an LSTM prescription imitator with
no goal input, used as the non-goal-conditioned recommendation reference.
"""
from __future__ import annotations

import json
import math
import pathlib
import time
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import embedding as emb
from .checkpoint import load_checkpoint, save_checkpoint
from .model import CdtConfig, group_by_admission_count, init_backbone_params, \
    transformer_states
from .sequencing import N_GOAL_BINS
from .synth import A1C_LAB, counterfactual_next_a1c

NORMAL_BIN_LO, NORMAL_BIN_HI = 0, 16   # A1c in [4.0, 5.6]
REGIMES = ("BC", "NormalA1c", "LowerA1c", "HigherA1c")


class EvaluatorError(ValueError):
    pass


@dataclass
class EvaluatorConfig:
    name: str = "crn-e"
    backbone: str = "recurrent"         # "recurrent" | "transformer"
    method: str = "grl"                 # "grl" | "dc"
    alpha: float = 0.2
    lam: float = 10.0
    n_layers: int = 4
    n_heads: int = 1
    d_col: int = 0                      # transformer backbones only
    d_val: int = 128
    n_med_layers: int = 2               # depth of the G_Y / G_A heads
    d_med: int = 32
    lr: float = 1e-4
    warmup_steps: int = 500
    clip_norm: float = 1.0
    weight_decay: float = 0.01
    batch_size: int = 64
    max_epochs: int = 30
    patience: int = 5
    max_admissions: int = 64
    seed: int = 0

    @property
    def width(self):
        """Width of the balanced representation Phi."""
        return self.d_col + self.d_val

    def validate(self):
        if self.backbone not in ("recurrent", "transformer"):
            raise EvaluatorError(f"unknown backbone {self.backbone!r}")
        if self.method not in ("grl", "dc"):
            raise EvaluatorError(f"unknown balancing method {self.method!r}")
        if self.alpha < 0:
            raise EvaluatorError("alpha must be >= 0")
        if self.method == "grl" and not self.lam > 0:
            raise EvaluatorError("lambda must be > 0 for gradient reversal")
        if self.n_layers < 1:
            raise EvaluatorError("backbone depth must be >= 1")
        if self.n_med_layers < 1:
            raise EvaluatorError("head depth must be >= 1")

    def to_dict(self):
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def crn_e_config(**overrides):
    return EvaluatorConfig(**{**dict(
        name="crn-e", backbone="recurrent", method="grl", alpha=0.2, lam=10.0,
        n_layers=4, d_col=0, d_val=128, n_med_layers=2,
        clip_norm=1.0, weight_decay=0.01, batch_size=64,
    ), **overrides})


def t_grl_config(**overrides):
    return EvaluatorConfig(**{**dict(
        name="t-grl", backbone="transformer", method="grl", alpha=0.05, lam=10.0,
        n_layers=3, n_heads=1, d_col=64, d_val=64, n_med_layers=1,
        clip_norm=1.0, weight_decay=1e-4, batch_size=128,
    ), **overrides})


def t_dc_config(**overrides):
    return EvaluatorConfig(**{**dict(
        name="t-dc", backbone="transformer", method="dc", alpha=0.1, lam=10.0,
        n_layers=4, n_heads=4, d_col=32, d_val=96, n_med_layers=3,
        clip_norm=0.5, weight_decay=1e-3, batch_size=128,
    ), **overrides})


DEFAULT_CANDIDATES = (crn_e_config, t_grl_config, t_dc_config)


# ---------------------------------------------------------------------------
# recurrent per-admission encoder (shared by CRN-E and BC)


def init_recurrent_encoder(schema, width, n_layers, rng):
    """Value-embedding summary encoder plus a stacked-LSTM parameter set.
    The extra medication-input row (index n_med_classes) marks sequence
    start, where no previous prescription exists."""
    bases = schema.baseline_columns
    labs = schema.lab_columns
    params = {
        "enc/base_values": ad.parameter((sum(c.n_classes for c in bases), width), rng),
        "enc/lab_dir": ad.parameter((len(labs), width), rng),
        "enc/lab_bias": ad.parameter((len(labs), width), rng),
        "enc/miss": ad.parameter((len(labs), width), rng),
        "enc/med_in": ad.parameter((schema.n_med_classes + 1, width), rng),
        "enc/ln_g": ad.Tensor(np.ones(width), requires_grad=True),
        "enc/ln_b": ad.Tensor(np.zeros(width), requires_grad=True),
    }
    for layer in range(n_layers):
        params[f"lstm{layer}/w_x"] = ad.parameter((width, 4 * width), rng)
        params[f"lstm{layer}/w_h"] = ad.parameter((width, 4 * width), rng)
        params[f"lstm{layer}/b"] = ad.Tensor(np.zeros(4 * width), requires_grad=True)
    return params


def recurrent_states(params, schema, batch, n_layers, width):
    """Per-admission representation from a stacked LSTM: the input at step t
    is the mean state-cell embedding of admission t plus the embedding of
    the previous admission's medication set."""
    from .embedding import base_class_offsets
    B = len(batch)
    T = batch[0].n_admissions
    lab_vals = np.stack([p.lab_values for p in batch])[..., None]   # [B,T,G,1]
    lab_miss = np.stack([p.lab_missing for p in batch])[..., None]
    base_ids = np.stack([p.base_ids for p in batch])                # [B,J]
    offsets = base_class_offsets(schema)
    base_part = ad.gather(params["enc/base_values"], base_ids + offsets)  # [B,J,W]
    base_sum = ad.sum_(base_part, axis=1)                                 # [B,W]
    lab_cells = ad.add(ad.mul(ad.Tensor(lab_vals), params["enc/lab_dir"]),
                       params["enc/lab_bias"])
    lab_cells = ad.add(ad.mul(lab_cells, ad.Tensor(1.0 - lab_miss)),
                       ad.mul(params["enc/miss"], ad.Tensor(lab_miss)))
    lab_sum = ad.sum_(lab_cells, axis=2)                                  # [B,T,W]
    summary = ad.add(lab_sum, ad.reshape(base_sum, (B, 1, width)))

    start = schema.n_med_classes
    prev_ids = np.full((B, T), start, dtype=np.int64)
    meds = np.stack([p.med_ids for p in batch])
    prev_ids[:, 1:] = meds[:, :-1]
    x = ad.add(summary, ad.gather(params["enc/med_in"], prev_ids))        # [B,T,W]
    # normalize the cell-sum scale so the LSTM sees O(1) inputs
    x = ad.layer_norm(x, params["enc/ln_g"], params["enc/ln_b"])

    for layer in range(n_layers):
        h = ad.Tensor(np.zeros((B, width)))
        c = ad.Tensor(np.zeros((B, width)))
        outs = []
        for t in range(T):
            x_t = ad.reshape(ad.gather_axis1(x, np.asarray([t])), (B, width))
            h, c = ad.lstm_cell(x_t, h, c, params[f"lstm{layer}/w_x"],
                                params[f"lstm{layer}/w_h"], params[f"lstm{layer}/b"])
            outs.append(h)
        x = ad.stack(outs, axis=1)                                        # [B,T,W]
    return x


def _mlp(params, prefix, x, n_layers):
    for layer in range(n_layers):
        x = ad.add(ad.matmul(x, params[f"{prefix}/w{layer}"]),
                   params[f"{prefix}/b{layer}"])
        if layer < n_layers - 1:
            x = ad.relu(x)
    return x


def _init_mlp(params, prefix, dims, rng):
    for layer, (n_in, n_out) in enumerate(zip(dims[:-1], dims[1:])):
        params[f"{prefix}/w{layer}"] = ad.parameter((n_in, n_out), rng)
        params[f"{prefix}/b{layer}"] = ad.Tensor(np.zeros(n_out), requires_grad=True)


# ---------------------------------------------------------------------------
# evaluator


class Evaluator:
    """One evaluator candidate: backbone Phi, outcome head G_Y(Phi, a_t),
    prescription classifier G_A(Phi), and the configured balancing method."""

    def __init__(self, schema, config=None, params=None):
        self.schema = schema
        self.config = config or crn_e_config()
        self.config.validate()
        a1c = next((c for c in schema.lab_columns if c.name == A1C_LAB), None)
        self.y_mean = a1c.mean if a1c else 0.0
        self.y_std = a1c.std if a1c else 1.0
        rng = np.random.default_rng(self.config.seed)
        self.params = params if params is not None else self._init_params(rng)

    def _init_params(self, rng):
        cfg = self.config
        w = cfg.width
        if cfg.backbone == "recurrent":
            params = init_recurrent_encoder(self.schema, w, cfg.n_layers, rng)
        else:
            params = init_backbone_params(self.schema, self._backbone_config(), rng)
            params.pop("emb/goal")      # goal conditioning is the recommender's job
        d_a = self.schema.n_med_classes
        hidden = [w] * (cfg.n_med_layers - 1)
        _init_mlp(params, "gy", [w + cfg.d_med] + hidden + [1], rng)
        _init_mlp(params, "ga", [w] + hidden + [d_a], rng)
        params["gy/med_emb"] = ad.parameter((d_a, cfg.d_med), rng)
        return params

    def _backbone_config(self):
        cfg = self.config
        return CdtConfig(
            n_layers=cfg.n_layers, n_heads=cfg.n_heads, d_col=cfg.d_col,
            d_val=cfg.d_val, dropout=0.0, max_admissions=cfg.max_admissions,
            seed=cfg.seed,
        )

    def _infer_batch_size(self):
        # forward-only sweeps on long sequences are memory-bound; cap them
        from .model import INFERENCE_BATCH
        return max(1, min(self.config.batch_size, INFERENCE_BATCH))

    def _head_param_names(self):
        return [k for k in self.params if k.startswith(("gy/", "ga/"))]

    def backbone_param_names(self):
        return [k for k in self.params if not k.startswith(("gy/", "ga/"))]

    # -- forward -----------------------------------------------------------

    def phi(self, batch):
        """Balanced representation, one row per admission: [B, T, width]."""
        cfg = self.config
        if cfg.backbone == "recurrent":
            return recurrent_states(self.params, self.schema, batch,
                                    cfg.n_layers, cfg.width)
        layout = emb.token_layout(batch[0].n_admissions, self.schema.n_columns,
                                  include_goal=False)
        tokens = emb.encode_batch(batch, self.schema, self.params,
                                  include_goal=False)
        return transformer_states(self.params, tokens, layout,
                                  self._backbone_config())

    def forward(self, batch, med_ids=None):
        """(predicted next A1c [B, T], prescription logits [B, T, d_a]) for a
        uniform-admission-count batch; `med_ids` overrides the candidate
        medication classes fed to G_Y (default: factual)."""
        phi = self.phi(batch)
        y = self._outcome(phi, batch, med_ids)
        logits = _mlp(self.params, "ga", phi, self.config.n_med_layers)
        return y, logits

    def _outcome(self, phi, batch, med_ids=None):
        if med_ids is None:
            med_ids = np.stack([p.med_ids for p in batch])
        else:
            med_ids = np.asarray(med_ids)
            if med_ids.size and med_ids.max() >= self.schema.n_med_classes:
                raise EvaluatorError(
                    f"medication class {int(med_ids.max())} outside vocabulary")
        med_vec = ad.gather(self.params["gy/med_emb"], med_ids)
        out = _mlp(self.params, "gy", ad.concat([phi, med_vec], axis=-1),
                   self.config.n_med_layers)
        b, t = med_ids.shape
        out = ad.reshape(out, (b, t))
        return ad.add(ad.scale(out, self.y_std), ad.Tensor(np.full((b, t), self.y_mean)))

    # -- losses ------------------------------------------------------------

    def losses(self, batch, balanced=True):
        """(L_y, L_a, n_observed) over admissions with an observed next A1c.

        With `balanced` and the gradient-reversal method, L_a is computed
        through the reversal layer so one backward pass trains the domain
        classifier while pushing the backbone the opposite way."""
        cfg = self.config
        phi = self.phi(batch)
        targets = np.stack([p.outcomes for p in batch])             # [B,T]
        obs = np.flatnonzero(np.isfinite(targets).ravel())
        if obs.size == 0:
            raise EvaluatorError("batch has no admission with an observed next A1c")
        b, t = targets.shape

        y = self._outcome(phi, batch)
        y_sel = ad.gather(ad.reshape(y, (b * t,)), obs)
        loss_y = ad.squared_error(y_sel, ad.Tensor(targets.ravel()[obs]))

        phi_a = phi
        if balanced and cfg.method == "grl":
            phi_a = ad.gradient_reversal(phi, cfg.lam)
        logits = _mlp(self.params, "ga", phi_a, cfg.n_med_layers)
        meds = np.stack([p.med_ids for p in batch]).ravel()[obs]
        logits_sel = ad.gather(ad.reshape(logits, (b * t, self.schema.n_med_classes)), obs)
        loss_a = ad.cross_entropy(logits_sel, meds)
        return loss_y, loss_a, int(obs.size)

    def confusion_losses(self, batch):
        """Domain-confusion pair: (L_y + alpha * L_conf, L_a with the backbone
        detached), per the alternating scheme."""
        cfg = self.config
        if self.schema.n_med_classes < 2:
            raise EvaluatorError("domain confusion undefined for fewer than 2 classes")
        phi = self.phi(batch)
        targets = np.stack([p.outcomes for p in batch])
        obs = np.flatnonzero(np.isfinite(targets).ravel())
        if obs.size == 0:
            raise EvaluatorError("batch has no admission with an observed next A1c")
        b, t = targets.shape

        y = self._outcome(phi, batch)
        y_sel = ad.gather(ad.reshape(y, (b * t,)), obs)
        loss_y = ad.squared_error(y_sel, ad.Tensor(targets.ravel()[obs]))
        logits = _mlp(self.params, "ga", phi, cfg.n_med_layers)
        logits_sel = ad.gather(ad.reshape(logits, (b * t, self.schema.n_med_classes)), obs)
        loss_conf = ad.uniform_cross_entropy(logits_sel)
        step_a = ad.add(loss_y, ad.scale(loss_conf, cfg.alpha))

        frozen = _mlp(self.params, "ga", ad.detach(phi), cfg.n_med_layers)
        frozen_sel = ad.gather(ad.reshape(frozen, (b * t, self.schema.n_med_classes)), obs)
        meds = np.stack([p.med_ids for p in batch]).ravel()[obs]
        step_b = ad.cross_entropy(frozen_sel, meds)
        return step_a, step_b

    # -- training ----------------------------------------------------------

    def train(self, train_prepared, valid_prepared, verbose=False):
        """Early-stopped training on admissions with observed next A1c;
        validation criterion is factual MSE.  Returns the epoch log."""
        cfg = self.config
        rng = np.random.default_rng(cfg.seed + 1)
        usable = [p for p in train_prepared if np.isfinite(p.outcomes).any()]
        if not usable:
            raise EvaluatorError("no training sequence has an observed next A1c")
        if cfg.method == "dc":
            opt_r = ad.AdamW({k: self.params[k]
                              for k in self.backbone_param_names()
                              + [k for k in self.params if k.startswith("gy/")]},
                             lr=cfg.lr, weight_decay=cfg.weight_decay,
                             clip_norm=cfg.clip_norm, warmup_steps=cfg.warmup_steps)
            opt_a = ad.AdamW({k: self.params[k]
                              for k in self.params if k.startswith("ga/")},
                             lr=cfg.lr, weight_decay=cfg.weight_decay,
                             clip_norm=cfg.clip_norm, warmup_steps=cfg.warmup_steps)
            opts = (opt_r, opt_a)
        else:
            opt = ad.AdamW(self.params, lr=cfg.lr, weight_decay=cfg.weight_decay,
                           clip_norm=cfg.clip_norm, warmup_steps=cfg.warmup_steps)
            opts = (opt,)
        best = math.inf
        best_params = None
        bad = 0
        log = []
        for epoch in range(1, cfg.max_epochs + 1):
            t0 = time.time()
            order = rng.permutation(len(usable))
            batches = group_by_admission_count([usable[i] for i in order],
                                               cfg.batch_size)
            for bi in rng.permutation(len(batches)):
                batch = batches[bi]
                if cfg.method == "dc":
                    self._dc_step(batch, opt_r, opt_a)
                else:
                    self._grl_step(batch, opts[0])
            valid_mse = self.factual_mse(valid_prepared)
            train_mse = self.factual_mse(usable)
            log.append({"epoch": epoch, "train_mse": train_mse,
                        "valid_mse": valid_mse,
                        "seconds": round(time.time() - t0, 2)})
            if verbose:
                print(f"[{cfg.name}] epoch {epoch}: train {train_mse:.4f} "
                      f"valid {valid_mse:.4f}")
            if valid_mse < best - 1e-6:
                best = valid_mse
                best_params = {k: v.data.copy() for k, v in self.params.items()}
                bad = 0
            else:
                bad += 1
                if bad >= cfg.patience:
                    break
        if best_params is not None:
            for k, v in self.params.items():
                v.data = best_params[k]
        return log

    def _grl_step(self, batch, opt):
        opt.zero_grad()
        loss_y, loss_a, _ = self.losses(batch)
        total = ad.add(loss_y, ad.scale(loss_a, self.config.alpha))
        ad.backward(total)
        opt.step()

    def _dc_step(self, batch, opt_r, opt_a):
        step_a, _ = self.confusion_losses(batch)
        opt_r.zero_grad()
        opt_a.zero_grad()
        ad.backward(step_a)
        opt_r.step()
        _, step_b = self.confusion_losses(batch)
        opt_a.zero_grad()
        ad.backward(step_b)
        opt_a.step()

    # -- inference ---------------------------------------------------------

    def factual_mse(self, prepared):
        """Mean squared error on observed next A1c under factual meds."""
        se, n = 0.0, 0
        for batch in group_by_admission_count(prepared, self._infer_batch_size()):
            y, _ = self.forward(batch)
            targets = np.stack([p.outcomes for p in batch])
            obs = np.isfinite(targets)
            se += float(((y.data - targets)[obs] ** 2).sum())
            n += int(obs.sum())
        return se / max(n, 1)

    def prescription_accuracy(self, prepared):
        """G_A accuracy on observed-outcome admissions (balancing probe)."""
        hit, n = 0, 0
        for batch in group_by_admission_count(prepared, self._infer_batch_size()):
            _, logits = self.forward(batch)
            targets = np.stack([p.outcomes for p in batch])
            meds = np.stack([p.med_ids for p in batch])
            obs = np.isfinite(targets)
            pred = logits.data.argmax(axis=-1)
            hit += int((pred[obs] == meds[obs]).sum())
            n += int(obs.sum())
        return hit / max(n, 1)

    def predict_final_a1c(self, prepared, med_classes):
        """Estimated next A1c of each sequence's final admission, with the
        final-admission medication class overridden per sequence."""
        med_classes = np.asarray(med_classes)
        if len(med_classes) != len(prepared):
            raise EvaluatorError("one medication class required per sequence")
        out = np.empty(len(prepared))
        index = {id(p): i for i, p in enumerate(prepared)}
        for batch in group_by_admission_count(prepared, self._infer_batch_size()):
            meds = np.stack([p.med_ids for p in batch]).copy()
            for row, p in enumerate(batch):
                meds[row, -1] = med_classes[index[id(p)]]
            y, _ = self.forward(batch, med_ids=meds)
            for row, p in enumerate(batch):
                out[index[id(p)]] = float(y.data[row, -1])
        return out

    # -- persistence -------------------------------------------------------

    def save(self, dirpath):
        path = pathlib.Path(dirpath)
        path.mkdir(parents=True, exist_ok=True)
        save_checkpoint(self.params, path)
        self.schema.save(path / "schema.json")
        with open(path / "config.json", "w", encoding="utf-8") as f:
            json.dump(self.config.to_dict(), f, indent=2)

    @classmethod
    def load(cls, dirpath):
        path = pathlib.Path(dirpath)
        schema = emb.Schema.load(path / "schema.json")
        with open(path / "config.json", encoding="utf-8") as f:
            config = EvaluatorConfig.from_dict(json.load(f))
        ev = cls(schema, config)
        weights = load_checkpoint(path)
        for name, tensor in ev.params.items():
            tensor.data = weights[name].reshape(tensor.data.shape)
        return ev


# ---------------------------------------------------------------------------
# behavior cloning baseline


@dataclass
class BcConfig:
    n_layers: int = 3
    width: int = 128
    lr: float = 1e-4
    clip_norm: float = 0.25
    weight_decay: float = 0.0
    warmup_steps: int = 0
    batch_size: int = 64
    max_epochs: int = 30
    patience: int = 5
    seed: int = 0

    def to_dict(self):
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


class BcModel:
    """LSTM prescription imitator: predicts each admission's medication-set
    class from the states so far.  Has no goal input of any kind."""

    def __init__(self, schema, config=None, params=None):
        self.schema = schema
        self.config = config or BcConfig()
        rng = np.random.default_rng(self.config.seed)
        if params is not None:
            self.params = params
        else:
            self.params = init_recurrent_encoder(
                schema, self.config.width, self.config.n_layers, rng)
            self.params["head/w"] = ad.parameter(
                (self.config.width, schema.n_med_classes), rng)
            self.params["head/b"] = ad.Tensor(
                np.zeros(schema.n_med_classes), requires_grad=True)

    def logits(self, batch):
        states = recurrent_states(self.params, self.schema, batch,
                                  self.config.n_layers, self.config.width)
        return ad.add(ad.matmul(states, self.params["head/w"]),
                      self.params["head/b"])

    def batch_loss(self, batch):
        targets = np.stack([p.med_ids for p in batch])
        return ad.cross_entropy(self.logits(batch), targets)

    def mean_loss(self, prepared):
        total, count = 0.0, 0
        for batch in group_by_admission_count(prepared, self.config.batch_size):
            n = len(batch) * batch[0].n_admissions
            total += self.batch_loss(batch).item() * n
            count += n
        return total / max(count, 1)

    def train(self, train_prepared, valid_prepared, verbose=False):
        cfg = self.config
        rng = np.random.default_rng(cfg.seed + 1)
        opt = ad.AdamW(self.params, lr=cfg.lr, weight_decay=cfg.weight_decay,
                       clip_norm=cfg.clip_norm, warmup_steps=cfg.warmup_steps)
        best = math.inf
        best_params = None
        bad = 0
        log = []
        for epoch in range(1, cfg.max_epochs + 1):
            order = rng.permutation(len(train_prepared))
            batches = group_by_admission_count(
                [train_prepared[i] for i in order], cfg.batch_size)
            for bi in rng.permutation(len(batches)):
                opt.zero_grad()
                loss = self.batch_loss(batches[bi])
                ad.backward(loss)
                opt.step()
            valid_loss = self.mean_loss(valid_prepared)
            log.append({"epoch": epoch, "valid_loss": valid_loss})
            if verbose:
                print(f"[bc] epoch {epoch}: valid {valid_loss:.4f}")
            if valid_loss < best - 1e-6:
                best = valid_loss
                best_params = {k: v.data.copy() for k, v in self.params.items()}
                bad = 0
            else:
                bad += 1
                if bad >= cfg.patience:
                    break
        if best_params is not None:
            for k, v in self.params.items():
                v.data = best_params[k]
        return log

    def _infer_batch_size(self):
        from .model import INFERENCE_BATCH
        return max(1, min(self.config.batch_size, INFERENCE_BATCH))

    def predict_class(self, prepared):
        """Most likely non-fallback class for each sequence's final admission."""
        out = np.empty(len(prepared), dtype=np.int64)
        index = {id(p): i for i, p in enumerate(prepared)}
        for batch in group_by_admission_count(prepared, self._infer_batch_size()):
            logits = self.logits(batch).data[:, -1, :].copy()
            logits[:, self.schema.unk_class] = -np.inf
            for row, p in enumerate(batch):
                out[index[id(p)]] = int(logits[row].argmax())
        return out

    def save(self, dirpath):
        path = pathlib.Path(dirpath)
        path.mkdir(parents=True, exist_ok=True)
        save_checkpoint(self.params, path)
        self.schema.save(path / "schema.json")
        with open(path / "config.json", "w", encoding="utf-8") as f:
            json.dump(self.config.to_dict(), f, indent=2)

    @classmethod
    def load(cls, dirpath):
        path = pathlib.Path(dirpath)
        schema = emb.Schema.load(path / "schema.json")
        with open(path / "config.json", encoding="utf-8") as f:
            config = BcConfig.from_dict(json.load(f))
        model = cls(schema, config)
        weights = load_checkpoint(path)
        for name, tensor in model.params.items():
            tensor.data = weights[name].reshape(tensor.data.shape)
        return model


# ---------------------------------------------------------------------------
# selection and effect estimation


def select_evaluator(candidates, test_prepared):
    """Pick the candidate with the lowest factual test MSE.

    `candidates` is an ordered list of (name, Evaluator); ties keep the
    earliest.  Returns (name, evaluator, table) where the table has one row
    per candidate plus a variance reference row."""
    targets = np.concatenate([p.outcomes[np.isfinite(p.outcomes)]
                              for p in test_prepared])
    table = [{"model": "predict-mean-reference",
              "mse": float(targets.var()) if targets.size else None}]
    best_name, best_ev, best_mse = None, None, math.inf
    for name, ev in candidates:
        mse = ev.factual_mse(test_prepared)
        table.append({"model": name, "mse": mse})
        if mse < best_mse:
            best_name, best_ev, best_mse = name, ev, mse
    return best_name, best_ev, table


def regime_goal_bins(regime, own_bin):
    """Candidate goal bins for one subsequence under a prompt regime, or
    None when the regime is empty for that subsequence."""
    if regime == "NormalA1c":
        return range(NORMAL_BIN_LO, NORMAL_BIN_HI + 1)
    if regime == "LowerA1c":
        return range(0, own_bin) if own_bin > 0 else None
    if regime == "HigherA1c":
        return range(own_bin + 1, N_GOAL_BINS) if own_bin < N_GOAL_BINS - 1 else None
    raise EvaluatorError(f"unknown prompt regime {regime!r}")


@dataclass
class EffectReport:
    rows: list            # dicts: one per (subsequence, regime)
    summary: dict         # regime -> aggregate statistics
    skipped: dict         # regime -> count of subsequences with empty range

    def to_csv(self, path):
        import csv
        fields = ["patient_id", "start_offset", "n_admissions", "regime",
                  "goal_bin", "recommended_class", "factual_class",
                  "estimated_factual", "estimated_recommended", "difference",
                  "oracle_difference"]
        with open(path, "w", newline="", encoding="utf-8") as f:
            writer = csv.DictWriter(f, fieldnames=fields)
            writer.writeheader()
            writer.writerows(self.rows)

    def to_json(self, path):
        with open(path, "w", encoding="utf-8") as f:
            json.dump({"summary": self.summary, "skipped": self.skipped},
                      f, indent=2)


def estimate_effects(cdt_model, bc_model, evaluator, prepared, truth=None,
                     dynamics=None, regimes=REGIMES):
    """Per-subsequence treatment-effect estimates on the test split.

    For each prepared subsequence and regime, the recommended set is the BC
    argmax or the goal-prompted recommender's best (bin, class); the
    evaluator then estimates next A1c under the factual and recommended
    sets.  difference = recommended − factual estimate.  When `truth` and
    `dynamics` are given, the noise-free simulator provides the oracle
    difference for the same substitution."""
    rows = []
    skipped = {r: 0 for r in regimes}
    queries = {r: [] for r in regimes}          # (prepared, rec_class, goal_bin)
    bc_classes = bc_model.predict_class(prepared) if "BC" in regimes else None
    for i, p in enumerate(prepared):
        for regime in regimes:
            if regime == "BC":
                queries[regime].append((p, int(bc_classes[i]), None))
                continue
            bins = regime_goal_bins(regime, p.goal_bin)
            if bins is None:
                skipped[regime] += 1
                continue
            best, _ = cdt_model.recommend(p, bins)
            queries[regime].append((p, best["class"], best["goal_bin"]))

    for regime in regimes:
        items = queries[regime]
        if not items:
            continue
        seqs = [p for p, _, _ in items]
        rec = [c for _, c, _ in items]
        fact = [int(p.med_ids[-1]) for p in seqs]
        est_fact = evaluator.predict_final_a1c(seqs, fact)
        est_rec = evaluator.predict_final_a1c(seqs, rec)
        for (p, rec_cls, bin_), ef, er in zip(items, est_fact, est_rec):
            row = {
                "patient_id": p.patient_id,
                "start_offset": p.source.start_offset if p.source else None,
                "n_admissions": p.n_admissions,
                "regime": regime,
                "goal_bin": bin_,
                "recommended_class": rec_cls,
                "factual_class": int(p.med_ids[-1]),
                "estimated_factual": float(ef),
                "estimated_recommended": float(er),
                "difference": float(er - ef),
                "oracle_difference": _oracle_difference(
                    p, rec_cls, evaluator.schema, truth, dynamics),
            }
            rows.append(row)

    summary = {}
    for regime in regimes:
        diffs = [r["difference"] for r in rows if r["regime"] == regime]
        oracle = [r["oracle_difference"] for r in rows
                  if r["regime"] == regime and r["oracle_difference"] is not None]
        summary[regime] = {
            "n": len(diffs),
            "mean_difference": float(np.mean(diffs)) if diffs else None,
            "oracle_mean_difference": float(np.mean(oracle)) if oracle else None,
            "skipped": skipped[regime],
        }
    return EffectReport(rows=rows, summary=summary, skipped=skipped)


def _oracle_difference(p, rec_cls, schema, truth, dynamics):
    if truth is None or dynamics is None or p.source is None:
        return None
    patient = truth.get(p.patient_id)
    if patient is None:
        return None
    t_abs = p.source.start_offset + p.n_admissions - 1
    a1c = patient.true_a1c[t_abs]
    r = patient.responsiveness
    fact_set = schema.med_set_for_class(int(p.med_ids[-1]))
    rec_set = schema.med_set_for_class(rec_cls)
    return (counterfactual_next_a1c(dynamics, a1c, r, rec_set)
            - counterfactual_next_a1c(dynamics, a1c, r, fact_set))
