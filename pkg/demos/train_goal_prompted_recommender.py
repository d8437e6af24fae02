"""
Training the goal-prompted recommender
======================================

Trains a small admission-wise masked transformer on a synthetic cohort and
uses it three ways: next-admission medication-set recommendation under a
goal prompt, attention inspection, and admission-embedding export.

Runs in a couple of minutes at this scale; the full-scale configuration
lives in `cdtlab.pipeline.PipelineConfig`.
"""
import tempfile
from pathlib import Path

from cdtlab.embedding import fit_schema, prepare_subsequence
from cdtlab.model import CdtConfig, CdtModel
from cdtlab.sequencing import bin_midpoint, split_cohort_subsequences
from cdtlab.synth import CohortConfig, generate_cohort, split_dataset

#%%
# Data: generate, split patient-wise, slice into goal-conditioned
# subsequences, then fit the schema (lab normalization statistics and the
# medication-set vocabulary) on the training split only.

cohort = generate_cohort(CohortConfig(n_patients=80, seed=11))
train_p, valid_p, test_p = split_dataset(cohort, seed=11)
schema = fit_schema(train_p, CohortConfig(n_patients=80, seed=11))
print(f"schema: {schema.n_columns} columns, "
      f"{schema.n_med_classes} medication-set classes")

baselines = {p.pid: p.baseline for p in cohort}


def prepare(patients):
    return [prepare_subsequence(s, baselines, schema)
            for s in split_cohort_subsequences(patients)]


train = prepare(train_p)
valid = prepare(valid_p)
test = prepare(test_p)
print(f"{len(train)} train / {len(valid)} valid / {len(test)} test slices")

#%%
# A deliberately small model: the architecture is the real one (column
# embeddings for missing-aware tabular states, admission-wise attention
# mask, QK normalization), just narrow and shallow.

config = CdtConfig(n_layers=2, n_heads=2, d_col=4, d_val=28, dropout=0.1,
                   batch_size=16, lr=1e-3, warmup_steps=20, max_epochs=6,
                   patience=2, seed=11)
model = CdtModel(schema, config)
print(f"{model.n_parameters:,} parameters")
model.train(train, valid, verbose=True)

#%%
# Recommendation.  Sweep the goal bins of the "normal A1c" band and keep
# the (bin, medication set) with the highest class probability.  The
# reserved fallback class is never recommended; its mass is reported.

seq = test[0]
best, per_bin = model.recommend(seq, range(0, 17))   # A1c in [4.0, 5.7)
print(f"patient {seq.patient_id}, {seq.n_admissions} admissions")
print(f"  best goal bin {best['goal_bin']} "
      f"(A1c ~{bin_midpoint(best['goal_bin']):.2f}): "
      f"{best['medications']} p={best['probability']:.3f} "
      f"fallback_mass={best['fallback_mass']:.4f}")

#%%
# Attention.  Every layer's weights come back with readable token labels
# (goal token, per-column state tokens, medication tokens), so one can see
# which labs and prior prescriptions the readout attends to.

att = model.capture_attention(seq)
print(f"{len(att['layers'])} layers, "
      f"{len(att['token_labels'])} tokens: "
      f"{att['token_labels'][:3]} ... {att['token_labels'][-2:]}")

#%%
# Embedding export.  The final-layer representation at each admission's
# last state token summarizes the history up to that admission; the CSV is
# the input for downstream visualization.

with tempfile.TemporaryDirectory() as d:
    out = Path(d) / "embeddings.csv"
    model.export_admission_embeddings(test[:10], out)
    lines = out.read_text().splitlines()
    print(f"{len(lines) - 1} embedding rows, header: "
          f"{','.join(lines[0].split(',')[:6])},...")

#%%
# Checkpoints round-trip bit-exactly (weights are stored as raw float32
# with a content hash), so a reloaded model scores identically.

with tempfile.TemporaryDirectory() as d:
    model.save(d)
    reloaded = CdtModel.load(d)
    print("loss before/after reload:",
          f"{model.mean_loss(valid):.6f} / {reloaded.mean_loss(valid):.6f}")
