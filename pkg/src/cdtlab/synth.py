"""Synthetic diabetes cohort with known counterfactual dynamics.

The generator produces admission sequences shaped like a real extraction
(14 categorical baseline columns, 18 continuous lab columns with
column-specific missing rates, 12 prescribable medications) on top of a
closed-form outcome model:

    a1c[t+1] = clamp(a1c[t] + drift - r_i * sum(effect[d] for d in meds[t]) + eps[t])

rounded to the 0.1 grid.  The prescription policy is severity-driven
(probability of each medication rises with current A1c and with the
relevant comorbidity flag) and persistent across admissions, which
creates time-dependent confounding.  Lab missingness is informative:
sicker admissions are measured more often.

The hidden trajectory (true A1c, responsiveness, noise draws) is the
counterfactual oracle.  It is exported only to a sidecar file and never
reaches the training JSONL.
"""
from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field

import numpy as np

A1C_LAB = "hemoglobin_a1c"
A1C_MIN, A1C_MAX = 4.0, 17.9


class ConfigError(ValueError):
    pass


class DatasetError(ValueError):
    pass


def round_a1c(x):
    """Snap an A1c value to the 0.1 recording grid."""
    return round(float(x), 1)


@dataclass(frozen=True)
class BaselineSpec:
    name: str
    n_classes: int
    prevalence: float = 0.0  # Bernoulli p for binary flags; ignored otherwise


@dataclass(frozen=True)
class LabSpec:
    name: str
    missing_prob: float
    slope: float  # affine link to hidden A1c
    intercept: float
    noise_sd: float


@dataclass(frozen=True)
class MedicationSpec:
    name: str
    effect: float          # % A1c lowered per admission, scaled by responsiveness
    base_logit: float      # policy intercept at the reference A1c
    a1c_slope: float       # policy logit per % A1c above the reference
    comorbidity: str | None = None
    comorbidity_logit: float = 0.0


DEFAULT_BASELINES = [
    BaselineSpec("sex", 2, 0.5),
    BaselineSpec("age", 121),  # years, sampled 30..90
    BaselineSpec("ischemic_heart_disease", 2, 0.15),
    BaselineSpec("congestive_heart_failure", 2, 0.08),
    BaselineSpec("arrhythmia", 2, 0.07),
    BaselineSpec("ischemic_stroke", 2, 0.06),
    BaselineSpec("hemorrhagic_stroke", 2, 0.02),
    BaselineSpec("dm_retinopathy", 2, 0.12),
    BaselineSpec("kidney_transplant", 2, 0.01),
    BaselineSpec("hemodialysis", 2, 0.03),
    BaselineSpec("peritoneal_dialysis", 2, 0.01),
    BaselineSpec("hypertension", 2, 0.85),
    BaselineSpec("dyslipidemia", 2, 0.80),
    BaselineSpec("dm_neuropathy", 2, 0.10),
]

DEFAULT_LABS = [
    LabSpec("glucose", 0.0270, 28.7, -46.7, 12.0),
    LabSpec(A1C_LAB, 0.3730, 1.0, 0.0, 0.0),
    LabSpec("cholesterol", 0.0722, 5.0, 150.0, 20.0),
    LabSpec("hdl_cholesterol", 0.0735, -2.0, 70.0, 8.0),
    LabSpec("ldl_cholesterol", 0.9959, 4.0, 80.0, 15.0),
    LabSpec("triglyceride", 0.0715, 12.0, 60.0, 30.0),
    LabSpec("ast", 0.2018, 1.5, 20.0, 6.0),
    LabSpec("alt", 0.2018, 1.8, 22.0, 7.0),
    LabSpec("albumin", 0.2283, -0.05, 4.8, 0.3),
    LabSpec("microalbumin", 0.7071, 6.0, 5.0, 10.0),
    LabSpec("microalbumin_urine_csf", 1.0, 6.0, 5.0, 10.0),
    LabSpec("microalbumin_creatinine_ratio", 0.7071, 5.0, 3.0, 8.0),
    LabSpec("microalbumin_ria", 0.9926, 6.0, 4.0, 9.0),
    LabSpec("bun", 0.2192, 0.8, 12.0, 3.0),
    LabSpec("creatinine_serum", 0.2163, 0.04, 0.8, 0.2),
    LabSpec("creatinine_urine", 0.7071, -2.0, 100.0, 20.0),
    LabSpec("creatinine_bf_urine", 0.9869, -2.0, 95.0, 20.0),
    LabSpec("bilirubin", 0.2094, 0.01, 0.7, 0.2),
]

DEFAULT_MEDICATIONS = [
    MedicationSpec("metformin", 0.50, -0.5, 0.8),
    MedicationSpec("sulfonylurea", 0.35, -2.4, 0.6),
    MedicationSpec("thiazolidinedione", 0.25, -3.8, 0.3),
    MedicationSpec("dpp4_inhibitor", 0.30, -1.2, 0.5),
    MedicationSpec("insulin", 0.90, -3.0, 1.2),
    MedicationSpec("sglt2_inhibitor", 0.35, -3.4, 0.4),
    MedicationSpec("glinide", 0.20, -3.2, 0.3),
    MedicationSpec("alpha_glucosidase_inhibitor", 0.15, -4.4, 0.3),
    MedicationSpec("glp1_receptor_agonist", 0.45, -1.4, 0.5),
    MedicationSpec("hypertension_medication", 0.0, -4.5, 0.0, "hypertension", 9.0),
    MedicationSpec("hyperlipidemia_medication", 0.0, -4.5, 0.0, "dyslipidemia", 9.0),
    MedicationSpec("dm_neuropathy_medication", 0.0, -4.5, 0.0, "dm_neuropathy", 9.0),
]


@dataclass
class DynamicsParams:
    drift: float = 0.75
    noise_sd: float = 0.15
    responsiveness_sigma: float = 0.3  # lognormal sigma around 1
    clamp_low: float = A1C_MIN
    clamp_high: float = A1C_MAX
    effects: dict = field(
        default_factory=lambda: {m.name: m.effect for m in DEFAULT_MEDICATIONS}
    )


@dataclass
class PolicyParams:
    a1c_reference: float = 7.5
    persistence_logit: float = 2.0
    # hidden prescriber aggressiveness: a per-patient logit shift shared by
    # all medications.  It is not recorded anywhere in the exported data, so
    # first-admission prescriptions are genuinely uncertain, while prior
    # prescriptions reveal it — and the achieved outcome minimum correlates
    # with it, which is what makes goal prompting steerable.
    style_sd: float = 1.5
    # per-admission logit shock shared by all medications: escalation and
    # de-escalation move the whole regimen together, so prescriptions form
    # a near-nested intensity ladder ordered by the per-medication base
    # logits (stepwise therapy) instead of independent coin flips.
    shock_sd: float = 0.65
    # steepness of the logistic link.  >1 sharpens each medication's
    # threshold on the shared intensity score; the probability still rises
    # monotonically with A1c and comorbidity burden.
    sharpness: float = 2.5
    # hidden per-patient prescribing pathway: prescribers differ in WHICH
    # second-line agent family they reach for, not just how many agents.
    # Each patient is assigned one family; its members get +pathway_delta
    # on the logit and the other families get -pathway_delta.  Like style
    # the pathway is hidden from the exported data, so a cold start cannot
    # know the patient's agent mix while any prior admission reveals it.
    # Keeping the choice discrete keeps the observed medication-set
    # vocabulary compact (rung x pathway), unlike independent per-agent
    # noise which would make most regimens unique to one patient.
    pathways: tuple = (
        ("metformin", "sulfonylurea", "thiazolidinedione"),
        ("dpp4_inhibitor", "sglt2_inhibitor"),
        ("glp1_receptor_agonist", "glinide", "alpha_glucosidase_inhibitor"),
    )
    pathway_delta: float = 3.0


@dataclass
class CohortConfig:
    n_patients: int = 500
    min_admissions: int = 2
    max_admissions: int = 14
    mean_admissions: float = 8.0
    baselines: list = field(default_factory=lambda: list(DEFAULT_BASELINES))
    labs: list = field(default_factory=lambda: list(DEFAULT_LABS))
    medications: list = field(default_factory=lambda: list(DEFAULT_MEDICATIONS))
    dynamics: DynamicsParams = field(default_factory=DynamicsParams)
    policy: PolicyParams = field(default_factory=PolicyParams)
    init_a1c_mean: float = 8.6
    init_a1c_sd: float = 1.5
    severity_gain: float = 0.05   # missingness drops as A1c rises above the reference
    severity_reference: float = 7.3
    seed: int = 0

    def validate(self):
        if self.n_patients <= 0:
            raise ConfigError("n_patients must be positive")
        if not self.baselines or not self.labs or not self.medications:
            raise ConfigError("baseline, lab, and medication lists must be non-empty")
        if not (self.min_admissions <= self.mean_admissions <= self.max_admissions):
            raise ConfigError(
                f"mean admissions {self.mean_admissions} outside "
                f"[{self.min_admissions}, {self.max_admissions}]"
            )
        for lab in self.labs:
            if not 0.0 <= lab.missing_prob <= 1.0:
                raise ConfigError(f"lab {lab.name!r} missing_prob outside [0, 1]")
        for med in self.medications:
            if med.effect < 0:
                raise ConfigError(f"medication {med.name!r} effect must be >= 0")
        names = [m.name for m in self.medications]
        if len(set(names)) != len(names):
            raise ConfigError("duplicate medication names")

    def to_dict(self):
        return dataclasses.asdict(self)

    def save(self, path):
        self.validate()
        with open(path, "w", encoding="utf-8") as f:
            json.dump(self.to_dict(), f, indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["baselines"] = [BaselineSpec(**b) for b in d["baselines"]]
        d["labs"] = [LabSpec(**l) for l in d["labs"]]
        d["medications"] = [MedicationSpec(**m) for m in d["medications"]]
        d["dynamics"] = DynamicsParams(**d["dynamics"])
        d["policy"] = PolicyParams(**d["policy"])
        return cls(**d)

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as f:
            return cls.from_dict(json.load(f))


@dataclass
class Admission:
    labs: dict           # lab name -> float or None
    meds: frozenset      # medication names
    a1c_next: float | None


@dataclass
class PatientTruth:
    responsiveness: float
    true_a1c: list       # hidden A1c per admission, on the 0.1 grid
    noise: list          # eps used for transition t -> t+1 (length T-1)


@dataclass
class PatientSequence:
    pid: str
    baseline: dict       # column name -> class index
    admissions: list
    truth: PatientTruth | None = None


def _sigmoid(x):
    return 1.0 / (1.0 + math.exp(-x))


def step_a1c(dynamics, a1c, responsiveness, meds, eps=0.0):
    """One application of the outcome dynamics, on the recording grid."""
    total = 0.0
    for m in meds:
        if m not in dynamics.effects:
            raise DatasetError(f"unknown medication {m!r}")
        total += dynamics.effects[m]
    nxt = a1c + dynamics.drift - responsiveness * total + eps
    return round_a1c(min(max(nxt, dynamics.clamp_low), dynamics.clamp_high))


def counterfactual_next_a1c(dynamics, a1c, responsiveness, meds):
    """Noise-free next A1c under an arbitrary medication set: the oracle."""
    return step_a1c(dynamics, a1c, responsiveness, meds, eps=0.0)


def generate_cohort(config: CohortConfig):
    """Deterministically simulate the configured cohort (seed-fixed)."""
    config.validate()
    rng = np.random.default_rng(config.seed)
    cohort = []
    for i in range(config.n_patients):
        cohort.append(_generate_patient(config, rng, f"p{i:05d}"))
    return cohort


def _generate_patient(config, rng, pid):
    dyn, pol = config.dynamics, config.policy
    baseline = {}
    for spec in config.baselines:
        if spec.name == "age":
            baseline[spec.name] = int(rng.integers(30, 91))
        elif spec.n_classes == 2:
            baseline[spec.name] = int(rng.random() < spec.prevalence)
        else:
            baseline[spec.name] = int(rng.integers(0, spec.n_classes))
    n_adm = int(rng.integers(config.min_admissions, config.max_admissions + 1))
    responsiveness = float(np.exp(rng.normal(0.0, dyn.responsiveness_sigma)))
    style = float(rng.normal(0.0, pol.style_sd))
    pathway = pol.pathways[int(rng.integers(0, len(pol.pathways)))] \
        if pol.pathways else ()
    pathway_members = frozenset(pathway)
    pathway_pool = frozenset(name for group in pol.pathways for name in group)
    preference = {
        name: (pol.pathway_delta if name in pathway_members
               else -pol.pathway_delta)
        for name in pathway_pool
    }

    a1c = round_a1c(min(max(rng.normal(config.init_a1c_mean, config.init_a1c_sd),
                            dyn.clamp_low), dyn.clamp_high))
    trajectory = [a1c]
    med_history = []
    noise = []
    prev = frozenset()
    for t in range(n_adm):
        meds = set()
        shock = float(rng.normal(0.0, pol.shock_sd))
        for med in config.medications:
            logit = (med.base_logit + style + shock
                     + preference.get(med.name, 0.0)
                     + med.a1c_slope * (a1c - pol.a1c_reference))
            if med.comorbidity is not None and baseline.get(med.comorbidity, 0):
                logit += med.comorbidity_logit
            if med.name in prev:
                logit += pol.persistence_logit
            if rng.random() < _sigmoid(pol.sharpness * logit):
                meds.add(med.name)
        meds = frozenset(meds)
        med_history.append(meds)
        prev = meds
        if t < n_adm - 1:
            eps = float(rng.normal(0.0, dyn.noise_sd))
            noise.append(eps)
            a1c = step_a1c(dyn, a1c, responsiveness, meds, eps)
            trajectory.append(a1c)

    # informative missingness: factor < 1 (measured more often) when sicker
    observed = []
    for t in range(n_adm):
        sev = 1.0 - config.severity_gain * (trajectory[t] - config.severity_reference)
        sev = min(max(sev, 0.5), 1.5)
        row = {}
        for lab in config.labs:
            if lab.missing_prob >= 1.0:
                p_miss = 1.0  # never-measured labs stay missing at any severity
            else:
                p_miss = min(max(lab.missing_prob * sev, 0.0), 1.0)
            row[lab.name] = rng.random() >= p_miss
        observed.append(row)

    admissions = []
    for t in range(n_adm):
        labs = {}
        for lab in config.labs:
            if not observed[t][lab.name]:
                labs[lab.name] = None
            elif lab.name == A1C_LAB:
                labs[lab.name] = trajectory[t]
            else:
                value = lab.slope * trajectory[t] + lab.intercept
                if lab.noise_sd > 0:
                    value += rng.normal(0.0, lab.noise_sd)
                labs[lab.name] = round(float(value), 2)
        if t < n_adm - 1 and observed[t + 1][A1C_LAB]:
            a1c_next = trajectory[t + 1]
        else:
            a1c_next = None
        admissions.append(Admission(labs=labs, meds=med_history[t], a1c_next=a1c_next))

    truth = PatientTruth(responsiveness=responsiveness, true_a1c=trajectory, noise=noise)
    return PatientSequence(pid=pid, baseline=baseline, admissions=admissions, truth=truth)


# ---------------------------------------------------------------------------
# persistence

def _patient_record(patient):
    return {
        "id": patient.pid,
        "baseline": {k: int(v) for k, v in patient.baseline.items()},
        "admissions": [
            {
                "labs": adm.labs,
                "meds": sorted(adm.meds),
                "a1c_next": adm.a1c_next,
            }
            for adm in patient.admissions
        ],
    }


def export_dataset(cohort, path):
    """Write one patient per JSON line; oracle fields are stripped."""
    with open(path, "w", encoding="utf-8") as f:
        for patient in cohort:
            f.write(json.dumps(_patient_record(patient), sort_keys=True))
            f.write("\n")


def export_truth(cohort, path):
    """Sidecar with hidden states; keep it away from any training input."""
    with open(path, "w", encoding="utf-8") as f:
        for patient in cohort:
            rec = {
                "id": patient.pid,
                "responsiveness": patient.truth.responsiveness,
                "true_a1c": patient.truth.true_a1c,
                "noise": patient.truth.noise,
            }
            f.write(json.dumps(rec, sort_keys=True))
            f.write("\n")


def import_truth(path):
    out = {}
    with open(path, encoding="utf-8") as f:
        for line in f:
            rec = json.loads(line)
            out[rec["id"]] = PatientTruth(
                responsiveness=rec["responsiveness"],
                true_a1c=rec["true_a1c"],
                noise=rec["noise"],
            )
    return out


def import_dataset(path, config: CohortConfig | None = None):
    """Read a JSONL dataset; validates the closed-world schema."""
    config = config or CohortConfig()
    lab_names = {l.name for l in config.labs}
    baseline_names = {b.name for b in config.baselines}
    med_names = {m.name for m in config.medications}
    cohort = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as e:
                raise DatasetError(f"line {lineno}: malformed JSON ({e})")
            try:
                baseline = rec["baseline"]
                admissions_raw = rec["admissions"]
                pid = rec["id"]
            except (KeyError, TypeError):
                raise DatasetError(f"line {lineno}: missing required fields")
            for col in baseline:
                if col not in baseline_names:
                    raise DatasetError(f"line {lineno}: unknown baseline column {col!r}")
            admissions = []
            for adm in admissions_raw:
                for col in adm["labs"]:
                    if col not in lab_names:
                        raise DatasetError(f"line {lineno}: unknown lab column {col!r}")
                for med in adm["meds"]:
                    if med not in med_names:
                        raise DatasetError(f"line {lineno}: unknown medication {med!r}")
                admissions.append(Admission(
                    labs=dict(adm["labs"]),
                    meds=frozenset(adm["meds"]),
                    a1c_next=adm["a1c_next"],
                ))
            cohort.append(PatientSequence(pid=pid, baseline=dict(baseline),
                                          admissions=admissions, truth=None))
    return cohort


def split_dataset(cohort, seed):
    """8:1:1 split by patient; remainder after flooring goes to train."""
    n = len(cohort)
    if n < 10:
        raise DatasetError(f"need at least 10 patients to split, got {n}")
    order = np.random.default_rng(seed).permutation(n)
    n_train = n * 8 // 10
    rem = n - n_train
    n_valid = rem // 2
    n_test = rem // 2
    n_train = n - n_valid - n_test
    train = [cohort[i] for i in order[:n_train]]
    valid = [cohort[i] for i in order[n_train:n_train + n_valid]]
    test = [cohort[i] for i in order[n_train + n_valid:]]
    return train, valid, test
