"""HTTP inference service for interactive goal-prompted recommendation.

Routes live under /v1/.  A request supplies either a patient id from the
mounted demo cohort or an inline history in the dataset format, plus a
goal prompt — a free A1c range or a named regime (normal / lower /
higher).  The response carries ranked medication sets, the evaluator's
factual and recommended next-A1c estimates, and optional attention maps.
The model registry (recommender, schema, selected evaluator, cohort) is
immutable once loaded; a reload swaps it atomically.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
import pathlib

import numpy as np
from fastapi import Body, FastAPI, HTTPException
from fastapi.middleware.cors import CORSMiddleware

from . import embedding as emb
from .checkpoint import checkpoint_hash
from .evaluators import NORMAL_BIN_HI, NORMAL_BIN_LO, Evaluator
from .model import CdtModel
from .sequencing import GOAL_MAX, GOAL_MIN, N_GOAL_BINS, discretize_goal
from .synth import A1C_LAB, Admission, import_dataset

PAGE_SIZE = 50
DEFAULT_TOP_N = 3
NAMED_REGIMES = ("normal", "lower", "higher")


class RegistryState:
    """One immutable snapshot of everything the endpoints read."""

    def __init__(self, schema, cdt_model, evaluator, evaluator_name, cohort,
                 hashes):
        self.schema = schema
        self.cdt_model = cdt_model
        self.evaluator = evaluator
        self.evaluator_name = evaluator_name
        self.cohort = {p.pid: p for p in cohort}
        self.order = [p.pid for p in cohort]
        self.hashes = hashes


class ModelRegistry:
    """Holds the current RegistryState; swapped atomically on reload."""

    def __init__(self):
        self._state = None

    @property
    def state(self):
        return self._state

    @property
    def loaded(self):
        return self._state is not None

    def load(self, run_dir, cohort_path):
        """Mount a pipeline run directory plus a dataset JSONL file."""
        run_dir = pathlib.Path(run_dir)
        schema = emb.Schema.load(run_dir / "schema.json")
        cdt_model = CdtModel.load(run_dir / "cdt")
        with open(run_dir / "selection.json", encoding="utf-8") as f:
            name = json.load(f)["selected"]
        evaluator = Evaluator.load(run_dir / f"evaluator-{name}")
        cohort = import_dataset(cohort_path)
        hashes = {
            "cdt_checkpoint": checkpoint_hash(run_dir / "cdt"),
            "evaluator_checkpoint": checkpoint_hash(
                run_dir / f"evaluator-{name}"),
            "schema": _file_hash(run_dir / "schema.json"),
        }
        self._state = RegistryState(schema, cdt_model, evaluator, name,
                                    cohort, hashes)

    def load_objects(self, schema, cdt_model, evaluator, evaluator_name,
                     cohort):
        """Mount already-constructed models (in-process use and tests)."""
        hashes = {
            "cdt_checkpoint": _params_hash(cdt_model.params),
            "evaluator_checkpoint": _params_hash(evaluator.params),
            "schema": hashlib.sha256(
                json.dumps(schema.to_dict(), sort_keys=True).encode()
            ).hexdigest(),
        }
        self._state = RegistryState(schema, cdt_model, evaluator,
                                    evaluator_name, cohort, hashes)


def _file_hash(path):
    return hashlib.sha256(pathlib.Path(path).read_bytes()).hexdigest()


def _params_hash(params):
    h = hashlib.sha256()
    for name in sorted(params):
        h.update(name.encode())
        h.update(np.ascontiguousarray(params[name].data, dtype="<f4").tobytes())
    return h.hexdigest()


def _a1c(x):
    return round(float(x), 1)


def create_app(registry=None):
    registry = registry or ModelRegistry()
    app = FastAPI(title="goal-prompted recommendation service")
    app.state.registry = registry
    app.add_middleware(
        CORSMiddleware, allow_origins=["*"], allow_methods=["*"],
        allow_headers=["*"])

    def require_state():
        if not registry.loaded:
            raise HTTPException(503, "model registry not loaded")
        return registry.state

    @app.get("/v1/health")
    def health():
        return {"status": "ok" if registry.loaded else "degraded",
                "loaded": registry.loaded}

    @app.get("/v1/model")
    def model_info():
        if not registry.loaded:
            return {"loaded": False}
        st = registry.state
        return {
            "loaded": True,
            "hashes": st.hashes,
            "evaluator": st.evaluator_name,
            "cdt_config": st.cdt_model.config.to_dict(),
            "evaluator_config": st.evaluator.config.to_dict(),
            "n_patients": len(st.order),
        }

    @app.get("/v1/patients")
    def patients(page: int = 0, page_size: int = PAGE_SIZE):
        st = require_state()
        if page < 0 or not 1 <= page_size <= 500:
            raise HTTPException(400, "invalid pagination")
        ids = st.order[page * page_size:(page + 1) * page_size]
        return {
            "total": len(st.order),
            "page": page,
            "page_size": page_size,
            "patients": [
                {"id": pid,
                 "n_admissions": len(st.cohort[pid].admissions)}
                for pid in ids
            ],
        }

    @app.get("/v1/patients/{pid}")
    def patient(pid: str):
        st = require_state()
        p = st.cohort.get(pid)
        if p is None:
            raise HTTPException(404, f"unknown patient id {pid!r}")
        return {
            "id": p.pid,
            "baseline": p.baseline,
            "admissions": [
                {"labs": {k: (None if v is None else _a1c(v))
                          for k, v in adm.labs.items()},
                 "meds": sorted(adm.meds),
                 "a1c_next": None if adm.a1c_next is None
                 else _a1c(adm.a1c_next)}
                for adm in p.admissions
            ],
        }

    @app.post("/v1/recommend")
    def recommend(body: dict = Body(...)):
        st = require_state()
        admissions, baseline, pid = _resolve_history(st, body)
        prepared = _prepare(st, admissions, baseline, pid)
        bins = _resolve_bins(st, body, prepared)
        options = body.get("options") or {}
        top_n = options.get("top_n", DEFAULT_TOP_N)
        if not (isinstance(top_n, int) and top_n >= 1):
            raise HTTPException(400, "options.top_n must be a positive integer")

        best, per_bin = st.cdt_model.recommend(prepared, bins)
        ranked = _rank_sets(per_bin, top_n)
        factual_class = int(prepared.med_ids[-1])
        est_fact, est_rec = st.evaluator.predict_final_a1c(
            [prepared, prepared], [factual_class, best["class"]])
        response = {
            "patient_id": pid,
            "goal_bins_evaluated": [int(b) for b in bins],
            "recommended": best,
            "ranked_sets": ranked,
            "factual_medications": sorted(
                st.schema.med_set_for_class(factual_class)),
            "estimated_factual_a1c": _a1c(est_fact),
            "estimated_recommended_a1c": _a1c(est_rec),
            "difference": round(float(est_rec) - float(est_fact), 6),
            "model": st.hashes,
        }
        if options.get("include_attention"):
            prompted = dataclasses.replace(prepared,
                                           goal_bin=best["goal_bin"])
            capture = st.cdt_model.capture_attention(prompted)
            layers = capture["layers"]
            if not options.get("all_layers"):
                layers = layers[-1:]
            response["attention"] = {
                "token_labels": capture["token_labels"],
                "layers": layers,
            }
        return response

    return app


def _resolve_history(st, body):
    pid = body.get("patient_id")
    history = body.get("history")
    if (pid is None) == (history is None):
        raise HTTPException(
            400, "exactly one of patient_id and history is required")
    if pid is not None:
        p = st.cohort.get(pid)
        if p is None:
            raise HTTPException(404, f"unknown patient id {pid!r}")
        return p.admissions, p.baseline, pid
    try:
        admissions = [
            Admission(labs=dict(adm.get("labs") or {}),
                      meds=frozenset(adm.get("meds") or ()),
                      a1c_next=adm.get("a1c_next"))
            for adm in history["admissions"]
        ]
        baseline = dict(history["baseline"])
    except (KeyError, TypeError, AttributeError):
        raise HTTPException(400, "history needs baseline and admissions")
    if not admissions:
        raise HTTPException(400, "history needs at least one admission")
    return admissions, baseline, None


def _prepare(st, admissions, baseline, pid):
    try:
        return emb.prepare_sequence(admissions, baseline, st.schema,
                                    patient_id=pid or "inline")
    except emb.SchemaError as exc:
        raise HTTPException(422, str(exc))


def _latest_a1c_bin(st, prepared):
    """Goal bin of the most recent observed A1c lab, or None."""
    cols = [c.name for c in st.schema.lab_columns]
    if A1C_LAB not in cols:
        return None
    g = cols.index(A1C_LAB)
    col = st.schema.lab_columns[g]
    for t in range(prepared.n_admissions - 1, -1, -1):
        if not prepared.lab_missing[t, g]:
            value = prepared.lab_values[t, g] * col.std + col.mean
            return discretize_goal(round(value, 1))
    return None


def _resolve_bins(st, body, prepared):
    regime = body.get("regime")
    rng = body.get("range")
    if (regime is None) == (rng is None):
        raise HTTPException(400, "exactly one of regime and range is required")
    if regime is not None:
        if regime not in NAMED_REGIMES:
            raise HTTPException(
                400, f"regime must be one of {', '.join(NAMED_REGIMES)}")
        if regime == "normal":
            return range(NORMAL_BIN_LO, NORMAL_BIN_HI + 1)
        own = _latest_a1c_bin(st, prepared)
        if own is None:
            raise HTTPException(
                400, f"{regime!r} needs an observed {A1C_LAB} value "
                     "in the history")
        bins = (range(0, own) if regime == "lower"
                else range(own + 1, N_GOAL_BINS))
        if len(bins) == 0:
            raise HTTPException(400, f"regime {regime!r} is empty for this "
                                     "history's latest A1c")
        return bins
    try:
        lo, hi = float(rng[0]), float(rng[1])
    except (TypeError, ValueError, IndexError):
        raise HTTPException(400, "range must be [a1c_lo, a1c_hi]")
    if not (GOAL_MIN <= lo <= hi < GOAL_MAX):
        raise HTTPException(
            400, f"range must satisfy {GOAL_MIN} <= lo <= hi < {GOAL_MAX}")
    return range(discretize_goal(lo), discretize_goal(hi) + 1)


def _rank_sets(per_bin, top_n):
    """Best probability per distinct medication set, descending."""
    best = {}
    for entry in per_bin:
        key = tuple(entry["medications"])
        if key not in best or entry["probability"] > best[key]["probability"]:
            best[key] = entry
    ranked = sorted(best.values(), key=lambda e: -e["probability"])
    return ranked[:top_n]
