"""
@file experiments.py
@brief Ablation runs, hyperparameter sweeps and the micro-config gradient check
"""

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from config.settings import RunConfig, dict_to_run_config
from errors import ConfigError, HarnessAssertionError
from fusion import CrossModalSensitivity, cross_modal_sensitivity
from harness.data import EmotionBatch, collate, read_manifest
from harness.model import EmotionModel
from harness.reports import (FULL_ROW, ResultsReportGenerator, SweepPoint, VariantResult, generate_sweep_summary,
                             write_ablation_csv, write_sweep_csv)
from harness.trainer import load_run, run_features, train
from numerics.gradcheck import GradCheckReport, check_gradients
from numerics.rng import make_rng
from text_frontend import CLS_ID
from utilities import atomic_write_json

ABLATION_BASE = {
    "ablation.no_jfm": False,
    "ablation.no_joint": False,
    "ablation.no_icl": False,
    "ablation.fusion_mode": "jfm",
    "ablation.modality": "text_audio",
}
ABLATION_VARIANTS: Tuple[Tuple[str, Dict[str, Any]], ...] = (
    (FULL_ROW, {}),
    ("w/o JFM", {"ablation.no_jfm": True}),
    ("w/o v_j", {"ablation.no_joint": True}),
    ("w/o ICL", {"ablation.no_icl": True}),
    ("Concatenate", {"ablation.fusion_mode": "concat"}),
)
MODALITY_VARIANTS: Tuple[Tuple[str, Dict[str, Any]], ...] = (
    ("T", {"ablation.modality": "text"}),
    ("A", {"ablation.modality": "audio"}),
)
# The full model should not lose to these on held-out W-F1.
DIRECTION_GATE = ("w/o JFM", "Concatenate")
SWEEP_PARAMS = {"blocks": "fusion.blocks", "joint_length": "fusion.joint_length"}
FIREWALL_SAMPLES = 8


def _slug(name: str) -> str:
    return "".join(ch if ch.isalnum() else "_" for ch in name.lower()).strip("_")


def firewall_check(checkpoint: Union[str, Path], manifest: Union[str, Path], seed: int = 0,
                   samples: int = FIREWALL_SAMPLES) -> CrossModalSensitivity:
    """Cross-modal sensitivity of a trained JFM model on the first ``samples`` manifest records."""
    cfg, vocab, model = load_run(checkpoint)
    if model.path != "jfm" or cfg.ablation.modality != "text_audio":
        raise ConfigError("the firewall check needs a two-modality JFM checkpoint")
    manifest = Path(manifest)
    records = read_manifest(manifest, cfg.data.classes)[:samples]
    batch = collate(run_features(cfg, vocab, records, manifest.parent))
    f_t, f_m = model.fusion_inputs(batch)
    return cross_modal_sensitivity(f_t, f_m, model.blocks, model.cls_audio, seed=seed, text_mask=batch.text_mask,
                                   audio_mask=batch.audio_mask, routing=cfg.fusion.routing)


@dataclass
class AblationOutcome:
    results: List[VariantResult]
    firewall: CrossModalSensitivity
    direction_gate_passed: bool
    report_path: Path

    def result(self, name: str) -> VariantResult:
        return next(r for r in self.results if r.name == name)


def run_ablation(cfg: RunConfig, manifest: Union[str, Path], out_dir: Union[str, Path],
                 seeds: Sequence[int] = (0,), include_modalities: bool = False) -> AblationOutcome:
    """
    @brief Train every ablation variant for each seed and tabulate medians
    @details The w/o v_j run must show zero cross-modal sensitivity; a
    violation raises HarnessAssertionError. The direction gate (full model
    at least as good as late fusion and concatenation) is advisory only.
    """
    if not seeds:
        raise ConfigError("run_ablation needs at least one seed")
    out_dir = Path(out_dir)
    variants = ABLATION_VARIANTS + (MODALITY_VARIANTS if include_modalities else ())
    results = [VariantResult(name=name, overrides=overrides) for name, overrides in variants]
    firewall: Optional[CrossModalSensitivity] = None

    for seed in seeds:
        for result in results:
            overrides = {**ABLATION_BASE, **result.overrides}
            overrides["train.seed"] = seed
            variant_cfg = cfg.with_overrides(overrides)
            run_dir = out_dir / f"seed{seed}" / _slug(result.name)
            logging.info(f"Ablation run '{result.name}' seed {seed} -> {run_dir}")
            outcome = train(variant_cfg, manifest, run_dir)
            held_out = outcome.held_out
            result.seeds.append(seed)
            result.accuracies.append(held_out.accuracy)
            result.weighted_f1s.append(held_out.weighted_f1)

            if result.name == "w/o v_j":
                sensitivity = firewall_check(outcome.checkpoint, manifest, seed=seed)
                logging.info(f"Firewall check seed {seed}: text<-audio {sensitivity.text_from_audio:.3e}, "
                             f"audio<-text {sensitivity.audio_from_text:.3e}")
                if not sensitivity.firewall_holds():
                    raise HarnessAssertionError(f"joint length 0 leaked information across modalities: "
                                                f"{sensitivity}")
                firewall = sensitivity

    full = next(r for r in results if r.name == FULL_ROW)
    gate = all(full.weighted_f1 >= r.weighted_f1 for r in results if r.name in DIRECTION_GATE)
    notes = [f"**Seeds:** {', '.join(str(s) for s in seeds)}",
             f"**Firewall (w/o v_j):** max cross-modal change {max(firewall.text_from_audio, firewall.audio_from_text):.3e}",
             f"**Direction gate (advisory):** {'PASSED' if gate else 'NOT MET'}"]
    if not gate:
        logging.warning("Full model fell below late fusion or concatenation on held-out W-F1 (advisory)")

    report = ResultsReportGenerator(results).generate_report(notes)
    report_path = out_dir / "ablation.md"
    report_path.write_text(report, encoding="utf-8")
    write_ablation_csv(out_dir / "ablation.csv", results)
    atomic_write_json(out_dir / "ablation.json", {
        "seeds": list(seeds),
        "variants": [r.to_dict(full) for r in results],
        "firewall": {"text_from_audio": firewall.text_from_audio, "audio_from_text": firewall.audio_from_text},
        "direction_gate_passed": gate,
    })
    logging.info(f"Ablation report written to {report_path}")
    return AblationOutcome(results=results, firewall=firewall, direction_gate_passed=gate, report_path=report_path)


def _sweep_point(config_dict: Dict[str, Any], key: str, value: Any, manifest: str, run_dir: str) -> SweepPoint:
    """Train and score one grid point; failures come back as NaN rows."""
    try:
        point_cfg = dict_to_run_config(config_dict).with_overrides({key: value})
        held_out = train(point_cfg, manifest, run_dir).held_out
        return SweepPoint(param=key, value=value, accuracy=held_out.accuracy, weighted_f1=held_out.weighted_f1)
    except Exception as e:
        logging.warning(f"Sweep point {key}={value} failed: {e}")
        return SweepPoint(param=key, value=value, error=f"{type(e).__name__}: {e}")


def sweep(cfg: RunConfig, manifest: Union[str, Path], out_dir: Union[str, Path], param: str = "blocks",
          grid: Optional[Sequence[Any]] = None, workers: int = 1) -> List[SweepPoint]:
    """
    @brief One train + evaluate per grid value with the shared seed
    @param param ``blocks``, ``joint_length`` or any dotted config key
    @param grid values to try; defaults to the configured sweep grid
    @param workers number of worker processes (1 runs in-process)
    """
    key = SWEEP_PARAMS.get(param, param)
    if grid is None:
        if key == "fusion.blocks":
            grid = cfg.sweep.blocks_grid
        elif key == "fusion.joint_length":
            grid = cfg.sweep.joint_grid
        else:
            raise ConfigError(f"no default grid for '{param}'; pass one explicitly")
    grid = list(grid)
    if not grid:
        raise ConfigError("sweep grid is empty")
    out_dir = Path(out_dir)
    config_dict = cfg.to_dict()
    jobs = [(config_dict, key, value, str(manifest), str(out_dir / f"{_slug(key)}_{value}")) for value in grid]

    if workers <= 1:
        points = [_sweep_point(*job) for job in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(_sweep_point, *job) for job in jobs]
            points = []
            for job, future in zip(jobs, futures):
                try:
                    points.append(future.result())
                except Exception as e:
                    logging.warning(f"Sweep worker for {key}={job[2]} failed: {e}")
                    points.append(SweepPoint(param=key, value=job[2], error=f"{type(e).__name__}: {e}"))

    write_sweep_csv(out_dir / "sweep.csv", points)
    (out_dir / "sweep.md").write_text(generate_sweep_summary(points), encoding="utf-8")
    failed = sum(1 for p in points if math.isnan(p.weighted_f1))
    logging.info(f"Sweep over {key}: {len(points) - failed}/{len(points)} points finished")
    return points


MICRO_CONFIG = {
    "model.model_dim": 8,
    "model.heads": 2,
    "model.ff_multiplier": 2,
    "model.init_std": 0.3,
    "text.extractor_layers": 1,
    "text.extractor_heads": 2,
    "text.max_tokens": 3,
    "audio.patch_time": 2,
    "audio.patch_freq": 2,
    "fusion.blocks": 2,
    "fusion.joint_length": 2,
    "data.classes": ["c0", "c1", "c2"],
    "train.batch_size": 4,
}
MICRO_LABELS = (0, 0, 1, 2)
MICRO_VOCAB = 10


def micro_setup(seed: int = 0, overrides: Optional[Mapping[str, Any]] = None) -> Tuple[EmotionModel, EmotionBatch]:
    """
    @brief Tiny model plus one K=4 batch (3 text tokens, 4 audio patches, C=3)
    @details Weights use std 0.3 so layer-norm inputs vary at O(1), well above
    the finite-difference step.
    """
    cfg = RunConfig().with_overrides({**MICRO_CONFIG, "train.seed": seed, **(overrides or {})})
    rng = make_rng(seed, "micro", "batch")
    count, tokens, patches = len(MICRO_LABELS), 3, 4
    token_ids = rng.integers(3, MICRO_VOCAB, size=(count, tokens))
    token_ids[:, 0] = CLS_ID
    patch_dim = cfg.audio.patch_time * cfg.audio.patch_freq
    batch = EmotionBatch(ids=[f"micro{i}" for i in range(count)], labels=np.asarray(MICRO_LABELS),
                         patches=rng.standard_normal((count, patches, patch_dim)),
                         audio_mask=np.ones((count, patches), dtype=bool),
                         text_mask=np.ones((count, tokens), dtype=bool), token_ids=token_ids)
    model = EmotionModel(cfg, len(cfg.data.classes), vocab_size=MICRO_VOCAB)
    return model, batch


def gradient_check(seed: int = 0, max_coords_per_tensor: Optional[int] = None,
                   overrides: Optional[Mapping[str, Any]] = None) -> GradCheckReport:
    """Finite-difference check of total loss (classification + contrastive) on the micro-config."""
    model, batch = micro_setup(seed, overrides)
    params = model.named_parameters()
    report = check_gradients(lambda: model.loss(batch)[0], params, max_coords_per_tensor=max_coords_per_tensor,
                             seed=seed)
    logging.info(f"Gradient check over {len(params)} tensors / {report.coordinates_checked} coordinates: "
                 f"max relative error {report.max_relative_error:.3e} ({report.worst_parameter})")
    return report


def write_gradcheck_json(path: Union[str, Path], report: GradCheckReport) -> Path:
    return atomic_write_json(path, {"max_relative_error": report.max_relative_error,
                                    "worst_parameter": report.worst_parameter,
                                    "coordinates_checked": report.coordinates_checked,
                                    "per_parameter": report.per_parameter})
