import json
from importlib import resources

import pytest

from attlab.cli import main
from attlab.records import CohortLabel, read_cohort_csv


def run_cli(*argv):
    return main(list(argv))


def read_files(out_dir, names):
    return {name: (out_dir / name).read_bytes() for name in names}


@pytest.fixture(scope="module")
def generated(tmp_path_factory):
    out = tmp_path_factory.mktemp("world")
    code = run_cli(
        "generate", "--seed", "42", "--n-pre", "400", "--n-post", "200", "--out", str(out)
    )
    assert code == 0
    return out


class TestGenerate:
    def test_rerun_is_byte_identical(self, tmp_path):
        args = ("generate", "--seed", "7", "--n-pre", "80", "--n-post", "50")
        out1, out2 = tmp_path / "a", tmp_path / "b"
        assert run_cli(*args, "--out", str(out1)) == 0
        assert run_cli(*args, "--out", str(out2)) == 0
        names = ("pre.csv", "post.csv", "truth.json")
        assert read_files(out1, names) == read_files(out2, names)

    def test_zero_n_pre_exits_2_naming_the_field(self, tmp_path, capsys):
        code = run_cli("generate", "--seed", "1", "--n-pre", "0", "--out", str(tmp_path))
        assert code == 2
        assert "n_pre" in capsys.readouterr().err

    def test_default_sizes_give_case_study_like_split(self, tmp_path):
        assert run_cli("generate", "--seed", "42", "--out", str(tmp_path)) == 0
        post = read_cohort_csv(tmp_path / "post.csv", CohortLabel.POST_INTRODUCTION)
        n_treated = len(post.treated())
        assert len(post) == 300
        assert 93 - 15 <= n_treated <= 93 + 15

    def test_seed_is_mandatory(self, tmp_path, capsys):
        code = run_cli("generate", "--out", str(tmp_path))
        assert code == 2
        assert "--seed" in capsys.readouterr().err


class TestFit:
    def test_writes_loadable_model(self, generated, tmp_path):
        code = run_cli("fit", "--pre", str(generated / "pre.csv"), "--out", str(tmp_path))
        assert code == 0
        from attlab.glm import ModelFit

        fit = ModelFit.load(tmp_path / "model.json")
        assert fit.converged
        assert fit.n_obs == 400

    def test_missing_input_exits_2(self, tmp_path, capsys):
        code = run_cli("fit", "--pre", str(tmp_path / "nope.csv"), "--out", str(tmp_path))
        assert code == 2


@pytest.fixture(scope="module")
def report(generated, tmp_path_factory):
    out = tmp_path_factory.mktemp("report")
    code = run_cli(
        "estimate",
        "--pre", str(generated / "pre.csv"),
        "--post", str(generated / "post.csv"),
        "--seed", "9",
        "--replicates", "200",
        "--scale", "rd",
        "--scale", "rr",
        "--out", str(out),
    )
    assert code == 0
    return out, json.loads((out / "report.json").read_text(encoding="utf-8"))


class TestEstimate:
    def test_report_contains_both_scales(self, report):
        _, payload = report
        assert set(payload["estimates"]) == {"rd", "rr"}
        rd = payload["estimates"]["rd"]
        assert rd["ci_low"] <= rd["point"] <= rd["ci_high"]

    def test_report_validates_against_published_schema(self, report):
        import jsonschema

        _, payload = report
        schema = json.loads(
            resources.files("attlab").joinpath("report_schema.json").read_text(encoding="utf-8")
        )
        jsonschema.validate(payload, schema)

    def test_rd_point_consistent_with_means(self, report):
        _, payload = report
        rd = payload["estimates"]["rd"]
        assert rd["point"] == pytest.approx(rd["mean_observed"] - rd["mean_predicted"], abs=1e-12)

    def test_diagnostics_block_present(self, report):
        _, payload = report
        assert payload["diagnostics"]["positivity"]["verdict"] in (
            "no_flags",
            "stochastic_concern",
            "structural_violation",
        )
        assert payload["diagnostics"]["negative_control"] is not None
        assert payload["diagnostics"]["dose_transport"] is not None

    def test_rerun_is_byte_identical(self, generated, tmp_path):
        args = (
            "estimate",
            "--pre", str(generated / "pre.csv"),
            "--post", str(generated / "post.csv"),
            "--seed", "9", "--replicates", "200",
        )
        out1, out2 = tmp_path / "r1", tmp_path / "r2"
        assert run_cli(*args, "--out", str(out1)) == 0
        assert run_cli(*args, "--out", str(out2)) == 0
        assert (out1 / "report.json").read_bytes() == (out2 / "report.json").read_bytes()

    def test_no_treated_patients_exits_3(self, generated, tmp_path, capsys):
        post_text = (generated / "post.csv").read_text(encoding="utf-8").splitlines()
        header, rows = post_text[0], post_text[1:]
        neutered = [header] + [r.replace(",post,1,", ",post,0,", 1) for r in rows]
        post_path = tmp_path / "post_none_treated.csv"
        post_path.write_text("\n".join(neutered) + "\n", encoding="utf-8")
        code = run_cli(
            "estimate",
            "--pre", str(generated / "pre.csv"),
            "--post", str(post_path),
            "--seed", "3",
            "--replicates", "150",
            "--out", str(tmp_path),
        )
        assert code == 3
        assert "no treated patients" in capsys.readouterr().err

    def test_schema_violations_exit_2(self, generated, tmp_path, capsys):
        broken = tmp_path / "broken.csv"
        text = (generated / "pre.csv").read_text(encoding="utf-8").splitlines()
        text[1] = text[1].replace(",pre,", ",noperiod,", 1)
        broken.write_text("\n".join(text) + "\n", encoding="utf-8")
        code = run_cli(
            "estimate",
            "--pre", str(broken),
            "--post", str(generated / "post.csv"),
            "--seed", "3",
            "--out", str(tmp_path),
        )
        assert code == 2
        assert "violation" in capsys.readouterr().err


class TestDiagnose:
    def test_writes_reports_and_curves(self, generated, tmp_path):
        code = run_cli(
            "diagnose",
            "--pre", str(generated / "pre.csv"),
            "--post", str(generated / "post.csv"),
            "--seed", "5",
            "--replicates", "150",
            "--out", str(tmp_path),
        )
        assert code == 0
        payload = json.loads((tmp_path / "diagnostics.json").read_text(encoding="utf-8"))
        assert payload["command"] == "diagnose"
        assert (tmp_path / "negative_control_curve.csv").is_file()
        assert (tmp_path / "dose_transport_curve.csv").is_file()


class TestSensitivity:
    def test_compares_named_variants(self, generated, tmp_path):
        code = run_cli(
            "sensitivity",
            "--pre", str(generated / "pre.csv"),
            "--post", str(generated / "post.csv"),
            "--seed", "5",
            "--replicates", "150",
            "--variant", "linear",
            "--variant", "quadratic",
            "--out", str(tmp_path),
        )
        assert code == 0
        payload = json.loads((tmp_path / "sensitivity.json").read_text(encoding="utf-8"))
        labels = [row["label"] for row in payload["result"]["rows"]]
        assert labels == ["linear", "quadratic"]
        assert payload["result"]["max_spread"] >= 0.0

    def test_duplicate_variants_rejected(self, generated, tmp_path, capsys):
        code = run_cli(
            "sensitivity",
            "--pre", str(generated / "pre.csv"),
            "--post", str(generated / "post.csv"),
            "--seed", "5",
            "--variant", "linear",
            "--variant", "linear",
            "--out", str(tmp_path),
        )
        assert code == 2


class TestSimulate:
    def test_rerun_is_byte_identical(self, tmp_path):
        args = ("simulate", "--scenario", "baseline", "--replicates", "6", "--seed", "7")
        out1, out2 = tmp_path / "s1", tmp_path / "s2"
        assert run_cli(*args, "--out", str(out1)) == 0
        assert run_cli(*args, "--out", str(out2)) == 0
        names = ("bias_report.json", "bias_report.csv")
        assert read_files(out1, names) == read_files(out2, names)

    def test_all_scenarios_give_five_rows(self, tmp_path):
        code = run_cli(
            "simulate", "--scenario", "all", "--replicates", "4", "--seed", "3",
            "--threads", "2", "--out", str(tmp_path),
        )
        assert code == 0
        lines = (tmp_path / "bias_report.csv").read_text(encoding="utf-8").splitlines()
        assert len(lines) == 6  # header + 5 scenarios

    def test_unknown_scenario_exits_2_listing_names(self, tmp_path, capsys):
        with pytest.raises(SystemExit) as exc:
            run_cli("simulate", "--scenario", "bogus", "--seed", "1", "--out", str(tmp_path))
        assert exc.value.code == 2
        assert "baseline" in capsys.readouterr().err

    def test_threads_do_not_change_output(self, tmp_path):
        base = ("simulate", "--scenario", "misspecification", "--replicates", "6", "--seed", "2")
        out1, out2 = tmp_path / "t1", tmp_path / "t8"
        assert run_cli(*base, "--threads", "1", "--out", str(out1)) == 0
        assert run_cli(*base, "--threads", "8", "--out", str(out2)) == 0
        names = ("bias_report.json", "bias_report.csv")
        assert read_files(out1, names) == read_files(out2, names)


class TestConfigFile:
    def test_config_file_supplies_flags_and_cli_overrides(self, tmp_path):
        config = tmp_path / "run.json"
        config.write_text(json.dumps({"seed": 11, "n_pre": 60, "n_post": 40}), encoding="utf-8")
        out1 = tmp_path / "c1"
        assert run_cli("generate", "--config", str(config), "--out", str(out1)) == 0
        pre = read_cohort_csv(out1 / "pre.csv", CohortLabel.PRE_INTRODUCTION)
        assert len(pre) == 60

        out2 = tmp_path / "c2"
        assert run_cli("generate", "--config", str(config), "--n-pre", "30", "--out", str(out2)) == 0
        pre2 = read_cohort_csv(out2 / "pre.csv", CohortLabel.PRE_INTRODUCTION)
        assert len(pre2) == 30

    def test_unknown_config_key_rejected(self, tmp_path, capsys):
        config = tmp_path / "bad.json"
        config.write_text(json.dumps({"seed": 1, "bogus_key": 2}), encoding="utf-8")
        code = run_cli("generate", "--config", str(config), "--out", str(tmp_path))
        assert code == 2
        assert "bogus_key" in capsys.readouterr().err

    def test_mistyped_config_value_rejected(self, tmp_path, capsys):
        config = tmp_path / "typed.json"
        config.write_text(json.dumps({"seed": "forty-two"}), encoding="utf-8")
        code = run_cli("generate", "--config", str(config), "--out", str(tmp_path))
        assert code == 2
        assert "seed" in capsys.readouterr().err


@pytest.mark.slow
def test_estimate_ci_covers_generated_truth_across_seeds(tmp_path):
    # End-to-end file contract: the report's own 95% interval contains the
    # truth.json value in at least 93 of 100 seeded pipeline runs.
    covered = 0
    for seed in range(100):
        out = tmp_path / f"w{seed}"
        assert run_cli("generate", "--seed", str(seed), "--out", str(out), "--quiet") == 0
        assert run_cli(
            "estimate",
            "--pre", str(out / "pre.csv"),
            "--post", str(out / "post.csv"),
            "--seed", str(seed + 1000),
            "--replicates", "500",
            "--out", str(out),
            "--quiet",
        ) == 0
        truth = json.loads((out / "truth.json").read_text(encoding="utf-8"))["true_att"]["rd"]
        rd = json.loads((out / "report.json").read_text(encoding="utf-8"))["estimates"]["rd"]
        covered += rd["ci_low"] <= truth <= rd["ci_high"]
    assert covered >= 93


def test_quiet_flag_suppresses_stdout(tmp_path, capsys):
    assert run_cli("generate", "--seed", "3", "--n-pre", "40", "--n-post", "30",
                   "--out", str(tmp_path), "--quiet") == 0
    assert capsys.readouterr().out == ""


def test_stdout_carries_only_the_summary(generated, tmp_path, capsys):
    code = run_cli(
        "estimate",
        "--pre", str(generated / "pre.csv"),
        "--post", str(generated / "post.csv"),
        "--seed", "4", "--replicates", "150",
        "--out", str(tmp_path),
    )
    assert code == 0
    out = capsys.readouterr().out
    assert "ATT (rd)" in out
    assert "{" not in out  # no raw JSON on stdout
