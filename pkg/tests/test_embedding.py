import numpy as np
import pytest

from cdtlab import embedding as emb
from cdtlab.sequencing import build_training_pairs, split_cohort_subsequences
from cdtlab.synth import A1C_LAB, Admission, CohortConfig, PatientSequence, generate_cohort


@pytest.fixture(scope="module")
def cohort():
    return generate_cohort(CohortConfig(n_patients=120, seed=17))


@pytest.fixture(scope="module")
def schema(cohort):
    return emb.fit_schema(cohort, CohortConfig())


@pytest.fixture(scope="module")
def tables(schema):
    return emb.make_tables(schema, d_col=4, d_val=6, rng=np.random.default_rng(0))


def baseline_map(cohort):
    return {p.pid: p.baseline for p in cohort}


class TestFitSchema:
    def test_two_value_column_stats(self):
        cfg = CohortConfig()
        patients = []
        for i, v in enumerate((6.0, 8.0)):
            labs = {c.name: None for c in cfg.labs}
            labs[A1C_LAB] = v
            patients.append(PatientSequence(
                pid=f"p{i}", baseline={b.name: 0 for b in cfg.baselines},
                admissions=[Admission(labs=labs, meds=frozenset(), a1c_next=None)],
            ))
        schema = emb.fit_schema(patients, cfg)
        col = next(c for c in schema.columns if c.name == A1C_LAB)
        assert col.mean == pytest.approx(7.0)
        assert col.std == pytest.approx(1.0)

    def test_vocab_size_two_sets(self):
        cfg = CohortConfig()
        labs = {c.name: None for c in cfg.labs}
        adm = lambda meds: Admission(labs=dict(labs), meds=frozenset(meds), a1c_next=None)
        p = PatientSequence(pid="p0", baseline={b.name: 0 for b in cfg.baselines},
                            admissions=[adm([]), adm(["metformin"])])
        schema = emb.fit_schema([p], cfg)
        assert len(schema.med_vocab) == 2
        assert schema.n_med_classes == 3  # + <UNK-SET>

    def test_fully_missing_column_warns(self, cohort):
        with pytest.warns(UserWarning, match="microalbumin_urine_csf"):
            schema = emb.fit_schema(cohort, CohortConfig())
        col = next(c for c in schema.columns if c.name == "microalbumin_urine_csf")
        assert (col.mean, col.std) == (0.0, 1.0)

    def test_vocab_matches_independent_count(self, cohort, schema):
        # independent set-count pass over the same training admissions
        distinct = {tuple(sorted(a.meds)) for p in cohort for a in p.admissions}
        assert len(schema.med_vocab) == len(distinct)

    def test_normalization_of_training_split(self, cohort, schema):
        # re-encoding the training split: observed values mean ~0, std ~1
        for col in schema.lab_columns:
            vals = [(a.labs[col.name] - col.mean) / col.std
                    for p in cohort for a in p.admissions
                    if a.labs[col.name] is not None]
            if len(vals) < 2:
                continue
            arr = np.asarray(vals, dtype=np.float64)
            assert abs(arr.mean()) < 1e-6
            assert abs(arr.std() - 1.0) < 1e-6

    def test_unknown_set_counted(self, schema):
        before = schema.unknown_set_count
        cls = schema.med_class(frozenset({"metformin", "glinide", "insulin",
                                          "sulfonylurea", "thiazolidinedione"}))
        if cls == schema.unk_class:
            assert schema.unknown_set_count == before + 1

    def test_schema_round_trip(self, schema, tmp_path):
        schema.save(tmp_path / "schema.json")
        loaded = emb.Schema.load(tmp_path / "schema.json")
        assert loaded.med_vocab == schema.med_vocab
        assert [vars(c) for c in loaded.columns] == [vars(c) for c in schema.columns]


class TestEncodeStateToken:
    def test_missing_lab_uses_miss_vector(self, schema, tables):
        k = next(i for i, c in enumerate(schema.columns) if c.name == A1C_LAB)
        g = [c.name for c in schema.lab_columns].index(A1C_LAB)
        out = emb.encode_state_token(schema, tables, k, None)
        d_col = tables["emb/col_id"].shape[1]
        np.testing.assert_allclose(out.data[:d_col], tables["emb/col_id"].data[k])
        np.testing.assert_allclose(out.data[d_col:], tables["emb/miss"].data[g])

    def test_mean_value_zeroes_direction(self, schema, tables):
        k = next(i for i, c in enumerate(schema.columns) if c.name == "glucose")
        g = [c.name for c in schema.lab_columns].index("glucose")
        col = schema.columns[k]
        out = emb.encode_state_token(schema, tables, k, col.mean)
        d_col = tables["emb/col_id"].shape[1]
        # normalized scalar 0 leaves only the per-column bias in the value part
        np.testing.assert_allclose(out.data[d_col:], tables["emb/lab_bias"].data[g],
                                   atol=1e-6)

    def test_distinct_columns_distinct_outputs(self, schema, tables):
        a = emb.encode_state_token(schema, tables, 0, 1)
        b = emb.encode_state_token(schema, tables, 2, 1)
        assert not np.allclose(a.data, b.data)

    def test_missing_baseline_rejected(self, schema, tables):
        with pytest.raises(emb.SchemaError, match="lab columns only"):
            emb.encode_state_token(schema, tables, 0, None)

    def test_categorical_injective_at_init(self, schema, tables):
        seen = {}
        for k, col in enumerate(schema.columns):
            if col.kind != "categorical":
                continue
            for cls in range(min(col.n_classes, 4)):
                v = tuple(np.round(emb.encode_state_token(schema, tables, k, cls).data, 6))
                assert v not in seen, f"collision {col.name}:{cls} vs {seen.get(v)}"
                seen[v] = (col.name, cls)


class TestTokenLayout:
    def test_cold_start_count(self):
        layout = emb.token_layout(1, 32)
        assert layout.n_tokens == 33

    def test_three_admissions_count(self):
        layout = emb.token_layout(3, 32)
        assert layout.n_tokens == 99  # 1 + 2*(32+1) + 32

    def test_admission_indices(self):
        layout = emb.token_layout(2, 3)
        assert layout.adm[0] == 0  # goal
        assert list(layout.adm[1:4]) == [1, 1, 1]
        assert layout.adm[4] == 1  # med token of admission 1
        assert list(layout.adm[5:8]) == [2, 2, 2]

    def test_state_last_positions(self):
        layout = emb.token_layout(2, 3)
        assert list(layout.state_last) == [3, 7]


class TestAssemble:
    def test_shapes_and_goal_token(self, cohort, schema, tables):
        subs = split_cohort_subsequences(cohort)
        sub = next(s for s in subs if len(s.admissions) >= 2)
        pair = build_training_pairs(sub)[-1]
        tokens, layout = emb.assemble_token_sequence(
            pair, baseline_map(cohort), schema, tables)
        assert tokens.shape == (1, layout.n_tokens, 10)

    def test_context_limit_enforced(self, cohort, schema, tables):
        subs = split_cohort_subsequences(cohort)
        sub = next(s for s in subs if len(s.admissions) >= 2)
        pair = build_training_pairs(sub)[-1]
        with pytest.raises(emb.SchemaError, match="context limit"):
            emb.assemble_token_sequence(pair, baseline_map(cohort), schema, tables,
                                        context_limit=10)

    def test_swapping_admissions_moves_content_not_layout(self, cohort, schema, tables):
        subs = split_cohort_subsequences(cohort)
        sub = next(s for s in subs if len(s.admissions) >= 3)
        base = baseline_map(cohort)
        prepared = emb.prepare_subsequence(sub, base, schema)
        out1 = emb.encode_batch([prepared], schema, tables)
        import copy
        swapped = copy.deepcopy(prepared)
        swapped.lab_values[[0, 1]] = swapped.lab_values[[1, 0]]
        swapped.lab_missing[[0, 1]] = swapped.lab_missing[[1, 0]]
        out2 = emb.encode_batch([swapped], schema, tables)
        layout = emb.token_layout(prepared.n_admissions, schema.n_columns)
        K = schema.n_columns
        adm_tab = tables["emb/admission"].data
        # content moved with the swap, modulo the admission-index embedding
        a1 = out1.data[0, 1:1 + K] - adm_tab[1]
        b2 = out2.data[0, 2 + K:2 + 2 * K] - adm_tab[2]
        np.testing.assert_allclose(a1, b2, atol=1e-6)

    def test_batched_equals_single(self, cohort, schema, tables):
        subs = [s for s in split_cohort_subsequences(cohort) if len(s.admissions) == 2][:4]
        base = baseline_map(cohort)
        prepared = [emb.prepare_subsequence(s, base, schema) for s in subs]
        batch = emb.encode_batch(prepared, schema, tables)
        for i, p in enumerate(prepared):
            single = emb.encode_batch([p], schema, tables)
            np.testing.assert_allclose(batch.data[i], single.data[0], atol=1e-6)

    def test_no_column_embedding_pathway(self, cohort, schema):
        tables = emb.make_tables(schema, d_col=4, d_val=6,
                                 rng=np.random.default_rng(1), column_embedding=False)
        subs = split_cohort_subsequences(cohort)
        base = baseline_map(cohort)
        prepared = [emb.prepare_subsequence(subs[0], base, schema)]
        out = emb.encode_batch(prepared, schema, tables, column_embedding=False)
        assert out.shape[-1] == 10
