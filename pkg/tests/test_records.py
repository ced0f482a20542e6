import pytest

from attlab.errors import SchemaError
from attlab.records import (
    CohortLabel,
    Period,
    Treatment,
    format_dose,
    read_cohort_csv,
    validate,
    write_cohort_csv,
)

from conftest import cohort_of, make_record


class TestValidate:
    def test_pre_record_with_proton_plan_is_flagged(self):
        bad = make_record(rid="pre-7", proton=(30.0, 28.0, 22.0, 25.0))
        violations = validate(cohort_of([make_record(rid="pre-1"), bad]))
        assert len(violations) == 1
        assert violations[0].record_id == "pre-7"
        assert violations[0].field == "proton_doses"

    def test_empty_cohort(self):
        violations = validate(cohort_of([]))
        assert len(violations) == 1
        assert "empty" in violations[0].rule

    def test_well_formed_cohort_is_clean(self):
        records = [make_record(rid=f"pre-{i}", dysphagia=i % 2, outcome=i % 2) for i in range(3)]
        assert validate(cohort_of(records)) == []

    def test_target_requires_post_and_proton(self):
        bad = make_record(rid="x-1", treatment=Treatment.TARGET)
        violations = validate(cohort_of([bad]))
        fields = {v.field for v in violations}
        assert "treatment" in fields  # target in a pre cohort
        assert "proton_doses" in fields

    def test_dose_bounds(self):
        bad = make_record(rid="d-1", photon=(90.0, 50.0, 40.0, -1.0))
        violations = validate(cohort_of([bad]))
        assert {v.field for v in violations} == {"photon_doses.dose_sup_pcm", "photon_doses.dose_oral_cavity"}

    def test_outcome_matches_latent_potential_outcome(self):
        from attlab.records import PotentialOutcomes

        bad = make_record(rid="l-1", outcome=1, latent=PotentialOutcomes(y0=0, y1=1, p0=0.2, p1=0.1))
        violations = validate(cohort_of([bad]))
        assert any(v.field == "outcome" for v in violations)

    def test_idempotent_and_order_insensitive(self):
        records = [
            make_record(rid="a", photon=(90.0, 50.0, 40.0, 42.0)),
            make_record(rid="b"),
            make_record(rid="c", outcome=2),
        ]
        cohort = cohort_of(records)
        first = validate(cohort)
        second = validate(cohort)
        assert first == second
        shuffled = cohort_of([records[2], records[0], records[1]])
        assert sorted(str(v) for v in validate(shuffled)) == sorted(str(v) for v in first)


class TestCsvRoundTrip:
    def test_generated_world_round_trips_byte_exact(self, tmp_path, small_world):
        for cohort, label in ((small_world.pre, CohortLabel.PRE_INTRODUCTION),
                              (small_world.post, CohortLabel.POST_INTRODUCTION)):
            p1 = tmp_path / "a.csv"
            p2 = tmp_path / "b.csv"
            write_cohort_csv(cohort, p1)
            reread = read_cohort_csv(p1, label)
            write_cohort_csv(reread, p2)
            assert p1.read_bytes() == p2.read_bytes()

    def test_parse_preserves_period_and_treatment(self, tmp_path, small_world):
        path = tmp_path / "post.csv"
        write_cohort_csv(small_world.post, path)
        cohort = read_cohort_csv(path, CohortLabel.POST_INTRODUCTION)
        assert all(r.period is Period.POST for r in cohort.records)
        n_target = sum(1 for r in cohort.records if r.treatment is Treatment.TARGET)
        assert n_target == len(small_world.post.treated())

    def test_bad_header_raises(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("id,period\n", encoding="utf-8")
        with pytest.raises(SchemaError):
            read_cohort_csv(path, CohortLabel.PRE_INTRODUCTION)

    def test_parse_collects_all_violations(self, tmp_path, small_world):
        path = tmp_path / "pre.csv"
        write_cohort_csv(small_world.pre, path)
        lines = path.read_text(encoding="utf-8").splitlines()
        lines[1] = lines[1].replace("pre,0", "pre,7", 1)  # bad treatment
        parts = lines[2].split(",")
        parts[5] = "not-a-dose"
        lines[2] = ",".join(parts)
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        with pytest.raises(SchemaError) as err:
            read_cohort_csv(path, CohortLabel.PRE_INTRODUCTION)
        assert len(err.value.violations) == 2

    def test_partial_proton_columns_rejected(self, tmp_path, small_world):
        path = tmp_path / "post.csv"
        write_cohort_csv(small_world.post, path)
        lines = path.read_text(encoding="utf-8").splitlines()
        parts = lines[1].split(",")
        parts[9] = ""  # blank one proton column only
        lines[1] = ",".join(parts)
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        with pytest.raises(SchemaError) as err:
            read_cohort_csv(path, CohortLabel.POST_INTRODUCTION)
        assert any("proton" in str(v) for v in err.value.violations)


class TestDoseText:
    @pytest.mark.parametrize(
        "value,expected",
        [(55.1234, "55.1234"), (55.1, "55.1"), (55.0, "55"), (0.0, "0"), (7.00006, "7.0001")],
    )
    def test_canonical_dose_text(self, value, expected):
        assert format_dose(value) == expected


def test_cohort_records_are_immutable(small_world):
    record = small_world.pre.records[0]
    with pytest.raises(Exception):
        record.outcome = 1
    assert isinstance(small_world.pre.records, tuple)
