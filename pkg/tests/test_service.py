import json

import pytest
from fastapi.testclient import TestClient

from cdtlab import pipeline as pl
from cdtlab import service as sv
from cdtlab.checkpoint import checkpoint_hash
from cdtlab.synth import A1C_LAB, export_dataset, generate_cohort

from test_pipeline import tiny_config

pytestmark = pytest.mark.filterwarnings("ignore::UserWarning")


@pytest.fixture(scope="module")
def mounted(tmp_path_factory):
    out = tmp_path_factory.mktemp("svc")
    cfg = tiny_config(run_effects=False, run_ablations=False)
    pl.run_full_pipeline(cfg, out_dir=out / "run")
    cohort = generate_cohort(cfg.cohort_config())
    export_dataset(cohort, out / "cohort.jsonl")
    registry = sv.ModelRegistry()
    registry.load(out / "run", out / "cohort.jsonl")
    client = TestClient(sv.create_app(registry))
    return client, registry, out, cohort


@pytest.fixture()
def client(mounted):
    return mounted[0]


def first_record(mounted):
    path = mounted[2] / "cohort.jsonl"
    return json.loads(path.read_text().splitlines()[0])


class TestStatus:
    def test_degraded_before_load(self):
        bare = TestClient(sv.create_app())
        r = bare.get("/v1/health")
        assert r.status_code == 200
        assert r.json() == {"status": "degraded", "loaded": False}
        assert bare.get("/v1/model").json() == {"loaded": False}
        assert bare.get("/v1/patients").status_code == 503
        assert bare.post("/v1/recommend", json={}).status_code == 503

    def test_ok_after_load(self, client):
        assert client.get("/v1/health").json()["status"] == "ok"

    def test_model_hashes_match_checkpoints(self, mounted):
        client, _, out, _ = mounted
        info = client.get("/v1/model").json()
        assert info["loaded"] is True
        assert info["hashes"]["cdt_checkpoint"] == checkpoint_hash(
            out / "run" / "cdt")
        name = info["evaluator"]
        assert info["hashes"]["evaluator_checkpoint"] == checkpoint_hash(
            out / "run" / f"evaluator-{name}")


class TestPatients:
    def test_total_and_default_page_size(self, mounted):
        client, _, _, cohort = mounted
        body = client.get("/v1/patients").json()
        assert body["total"] == len(cohort)
        assert body["page_size"] == 50
        assert len(body["patients"]) == min(50, len(cohort))

    def test_pagination(self, client):
        a = client.get("/v1/patients", params={"page_size": 5}).json()
        b = client.get("/v1/patients", params={"page": 1, "page_size": 5}).json()
        ids_a = {p["id"] for p in a["patients"]}
        ids_b = {p["id"] for p in b["patients"]}
        assert ids_a and ids_b and not ids_a & ids_b

    def test_detail_and_gap_markers(self, mounted):
        client, _, _, cohort = mounted
        pid = cohort[0].pid
        body = client.get(f"/v1/patients/{pid}").json()
        assert body["id"] == pid
        assert len(body["admissions"]) == len(cohort[0].admissions)
        labs = [v for adm in body["admissions"] for v in adm["labs"].values()]
        assert None in labs  # missing labs stay explicit nulls

    def test_oracle_fields_absent(self, mounted):
        client, _, _, cohort = mounted
        text = client.get(f"/v1/patients/{cohort[0].pid}").text
        for leak in ["responsiveness", "true_a1c", "noise"]:
            assert leak not in text

    def test_unknown_patient_404(self, client):
        assert client.get("/v1/patients/nope").status_code == 404


class TestRecommend:
    def _pid(self, mounted):
        return mounted[3][0].pid

    def test_normal_regime_bins(self, mounted):
        client = mounted[0]
        r = client.post("/v1/recommend", json={
            "patient_id": self._pid(mounted), "regime": "normal"})
        assert r.status_code == 200
        body = r.json()
        assert body["goal_bins_evaluated"] == list(range(17))
        assert body["recommended"]["goal_bin"] in range(17)
        assert abs(body["difference"]
                   - (body["estimated_recommended_a1c"]
                      - body["estimated_factual_a1c"])) <= 0.11

    def test_free_range_bins(self, mounted):
        client = mounted[0]
        body = client.post("/v1/recommend", json={
            "patient_id": self._pid(mounted), "range": [5.0, 5.5]}).json()
        assert body["goal_bins_evaluated"] == list(range(10, 16))

    def test_top_n_and_descending_probability(self, mounted):
        client = mounted[0]
        one = client.post("/v1/recommend", json={
            "patient_id": self._pid(mounted), "regime": "normal",
            "options": {"top_n": 1}}).json()
        assert len(one["ranked_sets"]) == 1
        many = client.post("/v1/recommend", json={
            "patient_id": self._pid(mounted), "regime": "normal",
            "options": {"top_n": 10}}).json()
        probs = [e["probability"] for e in many["ranked_sets"]]
        assert probs == sorted(probs, reverse=True)

    def test_deterministic(self, mounted):
        client = mounted[0]
        req = {"patient_id": self._pid(mounted), "regime": "normal"}
        assert (client.post("/v1/recommend", json=req).text
                == client.post("/v1/recommend", json=req).text)

    def test_inline_history(self, mounted):
        client = mounted[0]
        rec = first_record(mounted)
        body = client.post("/v1/recommend", json={
            "history": {"baseline": rec["baseline"],
                        "admissions": rec["admissions"]},
            "regime": "normal"}).json()
        assert body["patient_id"] is None
        assert body["ranked_sets"]

    def test_lower_regime_uses_latest_a1c(self, mounted):
        client = mounted[0]
        rec = first_record(mounted)
        adm = rec["admissions"][0]
        adm["labs"][A1C_LAB] = 9.0
        body = client.post("/v1/recommend", json={
            "history": {"baseline": rec["baseline"], "admissions": [adm]},
            "regime": "lower"}).json()
        assert body["goal_bins_evaluated"] == list(range(50))

    def test_lower_regime_empty_at_floor(self, mounted):
        client = mounted[0]
        rec = first_record(mounted)
        adm = rec["admissions"][0]
        adm["labs"][A1C_LAB] = 4.0
        r = client.post("/v1/recommend", json={
            "history": {"baseline": rec["baseline"], "admissions": [adm]},
            "regime": "lower"})
        assert r.status_code == 400

    def test_attention_gated_and_truncated(self, mounted):
        client = mounted[0]
        req = {"patient_id": self._pid(mounted), "regime": "normal"}
        plain = client.post("/v1/recommend", json=req).json()
        assert "attention" not in plain
        withatt = client.post("/v1/recommend", json={
            **req, "options": {"include_attention": True}}).json()
        att = withatt["attention"]
        assert len(att["layers"]) == 1  # one layer unless all requested
        n = len(att["token_labels"])
        head = att["layers"][0][0]
        assert len(head) == n and len(head[0]) == n

    def test_a1c_one_decimal(self, mounted):
        client = mounted[0]
        body = client.post("/v1/recommend", json={
            "patient_id": self._pid(mounted), "regime": "normal"}).json()
        for key in ["estimated_factual_a1c", "estimated_recommended_a1c"]:
            assert round(body[key], 1) == body[key]


class TestRecommendErrors:
    def test_both_and_neither_source(self, mounted):
        client = mounted[0]
        pid = mounted[3][0].pid
        rec = first_record(mounted)
        both = client.post("/v1/recommend", json={
            "patient_id": pid,
            "history": {"baseline": rec["baseline"],
                        "admissions": rec["admissions"]},
            "regime": "normal"})
        neither = client.post("/v1/recommend", json={"regime": "normal"})
        assert both.status_code == 400 and neither.status_code == 400

    def test_unknown_patient(self, client):
        r = client.post("/v1/recommend",
                        json={"patient_id": "zzz", "regime": "normal"})
        assert r.status_code == 404

    def test_bad_ranges(self, mounted):
        client = mounted[0]
        pid = mounted[3][0].pid
        for rng in [[3.0, 5.0], [6.0, 5.0], [5.0, 18.0], "x", [5.0]]:
            r = client.post("/v1/recommend",
                            json={"patient_id": pid, "range": rng})
            assert r.status_code == 400, rng

    def test_unknown_regime_and_both_prompts(self, mounted):
        client = mounted[0]
        pid = mounted[3][0].pid
        assert client.post("/v1/recommend", json={
            "patient_id": pid, "regime": "sideways"}).status_code == 400
        assert client.post("/v1/recommend", json={
            "patient_id": pid, "regime": "normal",
            "range": [5.0, 5.5]}).status_code == 400

    def test_history_schema_violation_422(self, mounted):
        client = mounted[0]
        rec = first_record(mounted)
        baseline = dict(rec["baseline"])
        baseline.pop("sex")  # baseline columns may not be missing
        r = client.post("/v1/recommend", json={
            "history": {"baseline": baseline,
                        "admissions": rec["admissions"]},
            "regime": "normal"})
        assert r.status_code == 422
