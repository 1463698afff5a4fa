import csv
import json
import math

import pytest

from errors import ConfigError
from harness.experiments import firewall_check, gradient_check, micro_setup, run_ablation, sweep
from harness.reports import FULL_ROW, ResultsReportGenerator, SweepPoint, VariantResult, generate_sweep_summary
from harness.trainer import train


def test_micro_setup_has_the_expected_shapes():
    model, batch = micro_setup()
    assert batch.token_ids.shape == (4, 3) and batch.patches.shape == (4, 4, 4)
    assert model.head.num_classes == 3 and len(model.blocks) == 2


def test_micro_gradients_match_finite_differences_on_sampled_coordinates():
    report = gradient_check(seed=0, max_coords_per_tensor=3)
    assert report.passed(1e-4), f"{report.worst_parameter}: {report.max_relative_error:.3e}"


def test_micro_gradients_on_late_fusion_path():
    report = gradient_check(seed=1, max_coords_per_tensor=3, overrides={"ablation.no_jfm": True})
    assert report.passed(1e-4)


@pytest.mark.slow
def test_micro_gradients_match_finite_differences_on_every_coordinate():
    report = gradient_check(seed=0)
    assert report.passed(1e-4), f"{report.worst_parameter}: {report.max_relative_error:.3e}"


def test_sweep_records_failed_points_as_nan(test_config, synthetic_manifest, tmp_path):
    cfg = test_config.with_overrides({"train.epochs": 1})
    points = sweep(cfg, synthetic_manifest, tmp_path / "sweep", param="joint_length", grid=[1, -1])
    assert not math.isnan(points[0].weighted_f1) and math.isnan(points[1].weighted_f1)
    with open(tmp_path / "sweep" / "sweep.csv", newline="") as handle:
        rows = list(csv.reader(handle))
    assert len(rows) == 3 and rows[2][3] == "nan" and "ConfigError" in rows[2][4]


def test_sweep_without_grid_for_unknown_param_is_config_error(test_config, synthetic_manifest, tmp_path):
    with pytest.raises(ConfigError, match="no default grid"):
        sweep(test_config, synthetic_manifest, tmp_path, param="optim.lr")


def test_ablation_writes_report_and_keeps_the_firewall(test_config, synthetic_manifest, tmp_path):
    cfg = test_config.with_overrides({"train.epochs": 1})
    outcome = run_ablation(cfg, synthetic_manifest, tmp_path / "ablation", seeds=(0,))
    assert outcome.firewall.firewall_holds()
    assert {r.name for r in outcome.results} == {FULL_ROW, "w/o JFM", "w/o v_j", "w/o ICL", "Concatenate"}
    summary = json.loads((tmp_path / "ablation" / "ablation.json").read_text(encoding="utf-8"))
    assert summary["firewall"]["text_from_audio"] == 0.0
    assert "| w/o v_j |" in outcome.report_path.read_text(encoding="utf-8")


def test_firewall_check_needs_a_two_modality_fusion_run(test_config, synthetic_manifest, run_dir):
    cfg = test_config.with_overrides({"train.epochs": 1, "ablation.modality": "text"})
    result = train(cfg, synthetic_manifest, run_dir)
    with pytest.raises(ConfigError):
        firewall_check(result.checkpoint, synthetic_manifest)


def variant(name, accuracy, weighted_f1):
    return VariantResult(name=name, overrides={}, seeds=[0], accuracies=[accuracy], weighted_f1s=[weighted_f1])


def test_ablation_table_lists_signed_deltas():
    generator = ResultsReportGenerator([variant(FULL_ROW, 0.8, 0.75), variant("w/o JFM", 0.7, 0.65)])
    table = generator.generate_ablation_table()
    assert "| JFM (full) | 80.00 | 75.00 |  |  |" in table
    assert "| w/o JFM | 70.00 | 65.00 | -10.00 | -10.00 |" in table


def test_fusion_table_puts_full_model_last():
    generator = ResultsReportGenerator([variant(FULL_ROW, 0.8, 0.75), variant("Concatenate", 0.82, 0.7)])
    lines = generator.generate_fusion_table().splitlines()
    assert lines[-2].startswith("| Concatenate |") and lines[-1].startswith("| JFM (full) |")


def test_report_skips_missing_tables():
    report = ResultsReportGenerator([variant(FULL_ROW, 0.8, 0.75)]).generate_report(["**Seeds:** 0"])
    assert "Modalities" not in report and "• **Seeds:** 0" in report


def test_median_over_seeds():
    result = VariantResult(name="x", overrides={}, accuracies=[0.5, 0.9, 0.6], weighted_f1s=[0.1, 0.3, 0.2])
    assert result.accuracy == pytest.approx(0.6) and result.weighted_f1 == pytest.approx(0.2)


def test_sweep_summary_names_best_point():
    points = [SweepPoint("fusion.blocks", 1, 0.5, 0.4), SweepPoint("fusion.blocks", 2, 0.6, 0.55),
              SweepPoint("fusion.blocks", 3, error="boom")]
    assert "**Best W-F1:** 55.00 at fusion.blocks=2" in generate_sweep_summary(points)
