import json
import math

import pytest
from pydantic import ValidationError

from incidencelab.experiment import (
    ExperimentConfig,
    build_configuration,
    canonical_json,
    compare_run,
    run_experiment,
    verify_run,
    write_run,
)


def _config(**overrides) -> ExperimentConfig:
    doc = {
        "name": "unit",
        "generator": {"kind": "nice_random", "delta_k": 8, "s": 0.5, "t": 0.8, "seed": 0},
        "stages": [{"stage": "count", "check_brute": True}],
    }
    doc.update(overrides)
    return ExperimentConfig.model_validate(doc)


# ---------------------------------------------------------------------------
# canonical serialization
# ---------------------------------------------------------------------------


class TestCanonicalJson:
    def test_sorted_keys_and_trailing_newline(self):
        text = canonical_json({"b": 1, "a": 2})
        assert text.endswith("\n")
        assert text.index('"a"') < text.index('"b"')

    def test_non_finite_floats_become_strings(self):
        # plain json.dumps would emit Infinity/NaN, which not every parser accepts
        doc = json.loads(canonical_json({"x": math.inf, "y": math.nan, "z": 1.5}))
        assert doc["x"] == "inf"
        assert doc["y"] == "nan"
        assert doc["z"] == 1.5

    def test_sanitizer_recurses(self):
        doc = json.loads(canonical_json({"rows": [{"slack": -math.inf}]}))
        assert doc["rows"][0]["slack"] == "-inf"

    def test_tuples_serialize_as_lists(self):
        assert json.loads(canonical_json({"t": (1, 2)}))["t"] == [1, 2]


# ---------------------------------------------------------------------------
# config validation
# ---------------------------------------------------------------------------


class TestConfigValidation:
    def test_round_trips(self):
        cfg = _config()
        again = ExperimentConfig.model_validate_json(canonical_json(cfg.model_dump()))
        assert again == cfg

    def test_extra_keys_rejected(self):
        with pytest.raises(ValidationError, match="extra_forbidden|Extra inputs"):
            _config(typo="oops")

    def test_extra_keys_rejected_inside_generator(self):
        with pytest.raises(ValidationError):
            _config(
                generator={"kind": "cantor1d", "s": 0.5, "delta_k": 8, "blocksz": 2}
            )

    def test_unknown_generator_kind_rejected(self):
        with pytest.raises(ValidationError, match="union_tag_invalid|does not match"):
            _config(generator={"kind": "mystery", "delta_k": 8})

    def test_unknown_stage_rejected(self):
        with pytest.raises(ValidationError):
            _config(stages=[{"stage": "frobnicate"}])

    def test_at_least_one_stage(self):
        with pytest.raises(ValidationError):
            _config(stages=[])

    def test_sha256_ignores_input_key_order(self):
        a = _config()
        b = ExperimentConfig.model_validate(
            {
                "stages": [{"check_brute": True, "stage": "count"}],
                "generator": {
                    "seed": 0,
                    "t": 0.8,
                    "s": 0.5,
                    "delta_k": 8,
                    "kind": "nice_random",
                },
                "name": "unit",
            }
        )
        assert a.sha256() == b.sha256()

    def test_sha256_sensitive_to_values(self):
        assert _config().sha256() != _config(name="other").sha256()


# ---------------------------------------------------------------------------
# building configurations from generator specs
# ---------------------------------------------------------------------------


class TestBuildConfiguration:
    def test_set_only_generators_have_no_fans(self):
        cfg = build_configuration(
            _config(generator={"kind": "cantor1d", "s": 0.5, "delta_k": 8, "seed": 1}).generator
        )
        assert cfg.points and not cfg.all_tubes

    def test_fan_generators_carry_niceness(self):
        cfg = build_configuration(_config().generator)
        assert cfg.nice is not None
        assert cfg.all_tubes

    @pytest.mark.parametrize(
        "generator",
        [
            {"kind": "cantor_target", "s": 0.5, "t": 1.0, "delta_k": 8, "seed": 0},
            {"kind": "furstenberg", "s": 0.5, "t": 1.0, "delta_k": 8, "seed": 0},
            {"kind": "regular", "delta_k": 8, "s": 0.5, "t": 1.0, "seed": 0},
            {"kind": "two_regime", "delta_k": 8, "s": 0.5, "t1": 1.6, "t2": 0.4, "seed": 0},
            {"kind": "product_structure", "delta_k": 8, "s": 0.5, "t": 1.0, "seed": 0},
            {
                "kind": "exceptional_projection",
                "s": 0.75,
                "t": 1.0,
                "alpha": 0.4,
                "delta_k": 8,
                "seed": 0,
            },
        ],
    )
    def test_every_kind_builds(self, generator):
        cfg = build_configuration(_config(generator=generator).generator)
        assert cfg.points


# ---------------------------------------------------------------------------
# running experiments
# ---------------------------------------------------------------------------


class TestRunExperiment:
    def test_green_run(self):
        manifest, files = run_experiment(_config())
        assert manifest.passed
        assert [r.stage for r in manifest.stages] == ["count"]
        assert manifest.stages[0].summary["geometric"] == manifest.stages[0].summary["brute"]
        assert set(files) == {"config.json", "count.json", "manifest.json"}

    def test_failing_stage_fails_run(self):
        cfg = _config(
            generator={"kind": "cantor1d", "s": 0.5, "delta_k": 8, "seed": 1},
            stages=[{"stage": "dimension", "target": 0.95, "tol": 0.01}],
        )
        manifest, _ = run_experiment(cfg)
        assert not manifest.passed
        assert manifest.stages[0].summary["pass"] is False

    def test_raising_stage_recorded_not_raised(self):
        # refine_cover needs fan metadata; a bare point set has none
        cfg = _config(
            generator={"kind": "cantor1d", "s": 0.5, "delta_k": 8, "seed": 1},
            stages=[{"stage": "refine_cover", "coarse_k": 4}, {"stage": "dimension", "target": 0.5}],
        )
        manifest, files = run_experiment(cfg)
        assert not manifest.passed
        first = manifest.stages[0]
        assert first.passed is False
        assert "error" in first.summary and "niceness" in first.summary["error"]
        assert first.files == []
        # the run keeps going: the later stage still produced a verdict
        assert manifest.stages[1].summary["pass"] is True
        assert "dimension.json" in files

    def test_duplicate_stages_get_prefixed_files(self):
        cfg = _config(
            stages=[
                {"stage": "count"},
                {"stage": "count", "check_brute": True},
                {"stage": "count"},
            ]
        )
        manifest, files = run_experiment(cfg)
        assert "count.json" in files
        assert "count_1/count.json" in files
        assert "count_2/count.json" in files
        assert manifest.stages[1].files == ["count_1/count.json"]

    def test_manifest_hashes_cover_every_file(self):
        import hashlib

        manifest, files = run_experiment(_config())
        for name, digest in manifest.files.items():
            assert hashlib.sha256(files[name].encode()).hexdigest() == digest
        # manifest.json itself is written after hashing, so it is the one file
        # present on disk but absent from the hash table
        assert set(files) - set(manifest.files) == {"manifest.json"}

    def test_config_json_round_trips_through_run(self):
        config = _config()
        _, files = run_experiment(config)
        assert ExperimentConfig.model_validate_json(files["config.json"]) == config

    def test_reruns_are_byte_identical(self):
        _, first = run_experiment(_config())
        _, second = run_experiment(_config())
        assert first == second


# ---------------------------------------------------------------------------
# stage coverage through the runner
# ---------------------------------------------------------------------------


class TestStages:
    def test_niceness_spread_and_bounds(self):
        cfg = _config(
            stages=[
                {"stage": "niceness"},
                {"stage": "spread", "s": 0.5, "c": 8.0},
                {"stage": "tube_count"},
                {"stage": "incidence_bound"},
            ]
        )
        manifest, files = run_experiment(cfg)
        assert manifest.passed
        assert json.loads(files["spread.json"])["pass"] is True
        assert "lhs" in json.loads(files["tube_count.json"])

    def test_decompose_writes_ladder_and_branching(self):
        cfg = _config(
            generator={
                "kind": "two_regime",
                "delta_k": 10,
                "s": 0.3,
                "t1": 2.0,
                "t2": 0.4,
                "seed": 5,
            },
            stages=[{"stage": "decompose", "eps": 0.1, "good_threshold": 1.0}],
        )
        manifest, files = run_experiment(cfg)
        assert manifest.passed
        doc = json.loads(files["decompose.json"])
        assert doc["covered"] == 10 and doc["greedy_gap"] == 0
        ladder = json.loads(files["ladder.json"])
        assert ladder["classes"] == ["G", "N"]
        assert files["branching.csv"].startswith("level,count,value\n")
        assert json.loads(files["multiscale_bound.json"])["pass"] is True

    def test_dichotomy_and_extract(self):
        cfg = _config(
            generator={"kind": "regular", "delta_k": 10, "s": 0.5, "t": 1.0, "seed": 0},
            stages=[{"stage": "dichotomy"}, {"stage": "extract"}],
        )
        manifest, files = run_experiment(cfg)
        doc = json.loads(files["dichotomy.json"])
        assert doc["fine_branch"] or doc["coarse_branch"]
        assert "extract_ledger.csv" in files

    def test_survey_spread_set_has_no_exceptional_directions(self):
        cfg = _config(
            generator={"kind": "cantor_target", "s": 0.5, "t": 1.0, "delta_k": 8, "seed": 0},
            stages=[{"stage": "survey", "s": 0.5}],
        )
        manifest, files = run_experiment(cfg)
        assert manifest.passed
        assert json.loads(files["survey.json"])["n_exceptional"] == 0

    def test_survey_line_set_has_exceptional_directions(self):
        # a set living on the x-axis projects to a point near the vertical family
        cfg = _config(
            generator={"kind": "cantor1d", "s": 0.5, "delta_k": 8, "seed": 3},
            stages=[{"stage": "survey", "s": 0.5, "expect_none": False}],
        )
        manifest, files = run_experiment(cfg)
        assert manifest.passed
        assert json.loads(files["survey.json"])["n_exceptional"] > 0

    def test_two_scale_stage(self):
        cfg = _config(
            generator={"kind": "nice_random", "delta_k": 10, "s": 0.5, "t": 0.8, "seed": 0},
            stages=[{"stage": "two_scale", "coarse_k": 5}],
        )
        manifest, files = run_experiment(cfg)
        assert manifest.passed
        assert json.loads(files["two_scale.json"])["clauses"]


# ---------------------------------------------------------------------------
# writing and verifying run directories
# ---------------------------------------------------------------------------


class TestWriteVerify:
    def test_round_trip(self, tmp_path):
        _, files = run_experiment(_config())
        write_run(tmp_path / "r", files)
        report = verify_run(tmp_path / "r")
        assert report["match"], report

    def test_nested_stage_files_land_in_subdirs(self, tmp_path):
        cfg = _config(stages=[{"stage": "count"}, {"stage": "count"}])
        _, files = run_experiment(cfg)
        write_run(tmp_path / "r", files)
        assert (tmp_path / "r" / "count_1" / "count.json").is_file()
        assert verify_run(tmp_path / "r")["match"]

    def test_tampering_is_detected(self, tmp_path):
        _, files = run_experiment(_config())
        write_run(tmp_path / "r", files)
        target = tmp_path / "r" / "count.json"
        target.write_text(target.read_text().replace(" ", "  ", 1))
        report = verify_run(tmp_path / "r")
        assert not report["match"]
        assert report["differing"] == ["count.json"]

    def test_missing_and_extra_files_are_detected(self, tmp_path):
        _, files = run_experiment(_config())
        write_run(tmp_path / "r", files)
        (tmp_path / "r" / "count.json").unlink()
        (tmp_path / "r" / "stray.txt").write_text("x")
        report = compare_run(tmp_path / "r", files)
        assert report["missing"] == ["count.json"]
        assert report["extra"] == ["stray.txt"]
