"""
@file trainer.py
@brief Mini-batch training loop and checkpoint evaluation
@details A run directory receives:

- ``training.log``  timestamp-free log (config echo, per-epoch metrics)
- ``checkpoint.jferc``  final parameters
- ``vocab.tsv``  vocabulary built from the training split (token runs only)
- ``run_config.json``  the validated configuration
- ``metrics.json`` / ``confusion.csv``  held-out evaluation
"""

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Union

import numpy as np

from config.settings import RunConfig, dict_to_run_config
from errors import ConfigError, NonFiniteError, TrainingDivergedError
from harness.data import EmotionBatch, UtteranceFeatures, iterate_batches, read_manifest, split_records
from harness.metrics import MetricsReport, compute_metrics, write_confusion_csv
from harness.model import EmotionModel, build_features, describe
from numerics.adam import AdamState, adam_step
from numerics.checkpoint import load_checkpoint, save_checkpoint
from numerics.rng import make_rng
from numerics.tensor import zero_grads
from objectives import LossDiagnostics
from text_frontend import Vocab, build_vocab, load_precomputed_embeddings, load_vocab, save_vocab
from utilities import LossTrendMonitor, atomic_write_json, run_log

CHECKPOINT_NAME = "checkpoint.jferc"
VOCAB_NAME = "vocab.tsv"
RUN_CONFIG_NAME = "run_config.json"
METRICS_NAME = "metrics.json"
CONFUSION_NAME = "confusion.csv"
NORMALIZED_CONFUSION_NAME = "confusion_normalized.csv"
LOG_NAME = "training.log"


@dataclass
class TrainingResult:
    run_dir: Path
    checkpoint: Path
    epochs_run: int
    final_train: MetricsReport
    validation: Optional[MetricsReport]
    test: Optional[MetricsReport]
    history: List[Dict[str, Any]] = field(default_factory=list)
    loss_trend_flags: List[List[int]] = field(default_factory=list)

    @property
    def held_out(self) -> MetricsReport:
        """Test report, falling back to validation then train for tiny datasets."""
        return self.test or self.validation or self.final_train


def predict(model: EmotionModel, features: Sequence[UtteranceFeatures], batch_size: int) -> np.ndarray:
    predictions = [model.forward(batch).predictions() for _, batch in iterate_batches(features, batch_size)]
    return np.concatenate(predictions) if predictions else np.zeros(0, dtype=np.int64)


def evaluate_features(model: EmotionModel, features: Sequence[UtteranceFeatures], classes: Sequence[str],
                      batch_size: int) -> Optional[MetricsReport]:
    if not features:
        return None
    labels = np.asarray([f.label for f in features])
    return compute_metrics(labels, predict(model, features, batch_size), classes)


def _dump_divergence(run_dir: Path, batch_id: str, batch: EmotionBatch, model: EmotionModel) -> Path:
    arrays = {f"input__{name}": value for name, value in batch.as_arrays().items()}
    for name, tensor in model.named_parameters().items():
        arrays[f"param__{name}"] = tensor.data
        arrays[f"grad__{name}"] = tensor.grad
    path = run_dir / f"diverged-{batch_id}.npz"
    np.savez(path, **arrays)
    return path


def _precomputed_embeddings(cfg: RunConfig) -> Optional[Dict[str, np.ndarray]]:
    if not cfg.text.embeddings:
        return None
    source_dim = cfg.text.source_dim if cfg.text.use_adapter else cfg.model.model_dim
    return load_precomputed_embeddings(cfg.text.embeddings, source_dim=source_dim)


def run_features(cfg: RunConfig, vocab: Optional[Vocab], records, manifest_dir: Path) -> List[UtteranceFeatures]:
    """Frontend features for ``records`` as a trained run sees them."""
    return build_features(records, cfg, {name: i for i, name in enumerate(cfg.data.classes)}, manifest_dir,
                          vocab=vocab, embeddings=_precomputed_embeddings(cfg))


def _load_text_side(cfg: RunConfig, train_records):
    """(vocab, embeddings): exactly one is set."""
    if cfg.text.embeddings:
        return None, _precomputed_embeddings(cfg)
    texts = [record.text for record in train_records if record.text is not None]
    if len(texts) != len(train_records):
        raise ConfigError("manifest references precomputed embeddings; set text.embeddings")
    return build_vocab(texts), None


def _epoch_line(entry: Dict[str, Any]) -> str:
    line = (f"epoch {entry['epoch']:3d} loss {entry['loss']:.6f} "
            f"train acc {entry['train_accuracy']:.4f} w-f1 {entry['train_weighted_f1']:.4f}")
    if "val_accuracy" in entry:
        line += f" | val acc {entry['val_accuracy']:.4f} w-f1 {entry['val_weighted_f1']:.4f}"
    return line


def train(cfg: RunConfig, manifest: Union[str, Path], run_dir: Union[str, Path]) -> TrainingResult:
    """
    @brief Train one model and write its run directory
    @details Per batch: frontends -> fusion path -> classify -> total loss ->
    backward -> Adam. Batches are reshuffled each epoch from the run seed.
    @throws TrainingDivergedError when a loss or gradient turns non-finite
    """
    cfg.validate()
    manifest = Path(manifest)
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)

    with run_log(run_dir / LOG_NAME):
        logging.info(f"config {json.dumps(cfg.to_dict(), sort_keys=True)}")
        for key in cfg.decision_defaults_in_use():
            logging.info(f"decision default in use: {key}")

        classes = list(cfg.data.classes)
        class_index = {name: i for i, name in enumerate(classes)}
        records = read_manifest(manifest, classes)
        train_records, val_records, test_records = split_records(records, cfg.data.split, cfg.train.seed)
        if not train_records:
            raise ConfigError(f"training split of {manifest} is empty")
        logging.info(f"split {len(train_records)}/{len(val_records)}/{len(test_records)} train/val/test")

        vocab, embeddings = _load_text_side(cfg, train_records)

        def features_of(part):
            return build_features(part, cfg, class_index, manifest.parent, vocab=vocab, embeddings=embeddings)

        train_features = features_of(train_records)
        val_features = features_of(val_records)
        test_features = features_of(test_records)

        model = EmotionModel(cfg, len(classes), vocab_size=len(vocab) if vocab is not None else None,
                             precomputed=embeddings is not None)
        logging.info(describe(model))
        params = model.named_parameters()
        optimizer = AdamState(lr=cfg.optim.lr, beta1=cfg.optim.beta1, beta2=cfg.optim.beta2, eps=cfg.optim.eps)
        monitor = LossTrendMonitor(window=cfg.train.loss_window, warmup=cfg.train.loss_warmup,
                                   smoothing=cfg.train.loss_smoothing)
        diagnostics = LossDiagnostics()
        batch_size = cfg.train.batch_size
        history: List[Dict[str, Any]] = []
        train_report = None
        val_report = None

        for epoch in range(cfg.train.epochs):
            order = make_rng(cfg.train.seed, "shuffle", epoch).permutation(len(train_features))
            losses = []
            for batch_index, batch in iterate_batches(train_features, batch_size, order):
                batch_id = f"epoch{epoch}-batch{batch_index}"
                zero_grads(params.values())
                try:
                    loss, _ = model.loss(batch, diagnostics)
                    loss.backward()
                    adam_step(params, optimizer)
                except NonFiniteError as exc:
                    dump = _dump_divergence(run_dir, batch_id, batch, model)
                    logging.error(f"Training diverged in {batch_id}: {exc}")
                    raise TrainingDivergedError(batch_id, str(dump), exc) from exc
                losses.append(loss.item())

            entry: Dict[str, Any] = {"epoch": epoch, "loss": float(np.mean(losses))}
            train_report = evaluate_features(model, train_features, classes, batch_size)
            entry.update(train_accuracy=train_report.accuracy, train_weighted_f1=train_report.weighted_f1)
            val_report = evaluate_features(model, val_features, classes, batch_size)
            if val_report is not None:
                entry.update(val_accuracy=val_report.accuracy, val_weighted_f1=val_report.weighted_f1)
            history.append(entry)
            logging.info(_epoch_line(entry))
            monitor.update(entry["loss"])

            target = cfg.train.stop_at_train_accuracy
            if target is not None and train_report.accuracy >= target:
                logging.info(f"Train accuracy {train_report.accuracy:.4f} reached {target}; stopping")
                break

        checkpoint = save_checkpoint(run_dir / CHECKPOINT_NAME, model.state_dict())
        if vocab is not None:
            save_vocab(vocab, run_dir / VOCAB_NAME)
        atomic_write_json(run_dir / RUN_CONFIG_NAME, cfg.to_dict())

        test_report = evaluate_features(model, test_features, classes, batch_size)
        result = TrainingResult(run_dir=run_dir, checkpoint=checkpoint, epochs_run=len(history),
                                final_train=train_report, validation=val_report, test=test_report,
                                history=history, loss_trend_flags=[list(span) for span in monitor.flagged])
        held_out = result.held_out
        atomic_write_json(run_dir / METRICS_NAME, {
            "epochs_run": result.epochs_run,
            "final_loss": history[-1]["loss"],
            "train": train_report.to_dict(),
            "validation": val_report.to_dict() if val_report else None,
            "test": test_report.to_dict() if test_report else None,
            "history": history,
            "loss_trend_flags": result.loss_trend_flags,
            "diagnostics": {"clamped_probabilities": diagnostics.clamped_probabilities,
                            "batches_without_positives": diagnostics.batches_without_positives},
        })
        write_confusion_csv(run_dir / CONFUSION_NAME, held_out)
        write_confusion_csv(run_dir / NORMALIZED_CONFUSION_NAME, held_out, normalized=True)
        logging.info(f"held-out acc {held_out.accuracy:.4f} w-f1 {held_out.weighted_f1:.4f}")
    return result


def load_run(checkpoint: Union[str, Path]):
    """(cfg, vocab, model) restored from a run directory's checkpoint."""
    checkpoint = Path(checkpoint)
    run_dir = checkpoint.parent
    config_path = run_dir / RUN_CONFIG_NAME
    if not config_path.exists():
        raise FileNotFoundError(f"{RUN_CONFIG_NAME} not found next to {checkpoint}")
    with open(config_path, "r", encoding="utf-8") as f:
        cfg = dict_to_run_config(json.load(f)).validate()
    vocab: Optional[Vocab] = load_vocab(run_dir / VOCAB_NAME) if (run_dir / VOCAB_NAME).exists() else None
    model = EmotionModel(cfg, len(cfg.data.classes), vocab_size=len(vocab) if vocab is not None else None,
                         precomputed=bool(cfg.text.embeddings))
    model.load_state_dict(load_checkpoint(checkpoint))
    return cfg, vocab, model


def evaluate(checkpoint: Union[str, Path], manifest: Union[str, Path],
             out_dir: Optional[Union[str, Path]] = None) -> MetricsReport:
    """
    @brief Score a saved model on every record of ``manifest``
    @details Writes metrics.json, confusion.csv and the row-normalized
    confusion matrix into ``out_dir`` when given.
    @throws ConfigError for a label outside the checkpoint's class set
    """
    cfg, vocab, model = load_run(checkpoint)
    manifest = Path(manifest)
    classes = list(cfg.data.classes)
    features = run_features(cfg, vocab, read_manifest(manifest, classes), manifest.parent)
    report = evaluate_features(model, features, classes, cfg.train.batch_size)
    if report is None:
        raise ConfigError(f"{manifest} holds no records to evaluate")
    logging.info(f"Evaluated {report.total} utterances: acc {report.accuracy:.4f} w-f1 {report.weighted_f1:.4f}")
    if out_dir is not None:
        out_dir = Path(out_dir)
        atomic_write_json(out_dir / METRICS_NAME, report.to_dict())
        write_confusion_csv(out_dir / CONFUSION_NAME, report)
        write_confusion_csv(out_dir / NORMALIZED_CONFUSION_NAME, report, normalized=True)
    return report
