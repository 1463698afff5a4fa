"""
@file synth.py
@brief Deterministic synthetic emotion dataset (audio + text)
@details Every class owns a generative signature in both modalities:

- audio: a carrier tone at a class frequency, amplitude-modulated at a class
  rate, mixed with AM noise and white noise;
- text: words drawn mostly from a class vocabulary, partly from a shared pool
  of confusable words, occasionally from another class.

Both modalities sometimes borrow another class's signature, so neither alone
separates the classes perfectly.
"""

import logging
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

import numpy as np

from audio_frontend import Waveform, write_wav
from errors import ConfigError
from harness.data import UtteranceRecord, write_manifest
from numerics.rng import make_rng

CLASS_WORDS: Dict[str, List[str]] = {
    "neutral": ["okay", "fine", "today", "schedule", "report", "meeting", "noted", "usual", "plain", "regular"],
    "happy": ["great", "wonderful", "love", "glad", "amazing", "fun", "smile", "yay", "fantastic", "thanks"],
    "sad": ["sorry", "miss", "lonely", "tired", "lost", "cry", "gloomy", "hurt", "alone", "empty"],
    "angry": ["hate", "stop", "unfair", "furious", "never", "annoying", "ridiculous", "enough", "rude", "mad"],
}
SHARED_WORDS = ["i", "you", "we", "it", "really", "just", "so", "this", "that", "well", "know", "think", "!", "?",
                "."]
CLASS_WORD_SHARE = 0.55
SHARED_WORD_SHARE = 0.30
BORROW_PROBABILITY = 0.2


def class_words(label: str) -> List[str]:
    return CLASS_WORDS.get(label, [f"{label}{k}" for k in range(10)])


def class_signature(index: int) -> Dict[str, float]:
    """Carrier frequency, AM rate and noise mix of class ``index``."""
    return {"tone_hz": 180.0 + 110.0 * index, "am_hz": 3.0 + 2.5 * index, "noise_mix": 0.15 + 0.1 * (index % 3)}


def sample_labels(n: int, class_weights: Sequence[float], rng: np.random.Generator) -> np.ndarray:
    """
    @brief Label indices: one of every class, the remaining n - C multinomial
    @return shuffled int array of length n
    """
    weights = np.asarray(class_weights, dtype=np.float64)
    if weights.ndim != 1 or weights.size < 2:
        raise ConfigError(f"class_weights must list at least two classes, got {class_weights}")
    if (weights < 0).any() or abs(weights.sum() - 1.0) > 1e-9:
        raise ConfigError(f"class_weights must be non-negative and sum to 1, got {list(weights)}")
    if n < weights.size:
        raise ConfigError(f"n={n} is smaller than the class count {weights.size}")
    counts = 1 + rng.multinomial(n - weights.size, weights)
    labels = np.repeat(np.arange(weights.size), counts)
    return labels[rng.permutation(n)]


def render_audio(spec: Dict, sample_rate: int) -> np.ndarray:
    """
    Regenerate a waveform from its inline description.

    ``spec`` keys: seed, seconds, tone_hz, am_hz, noise_mix.
    """
    rng = make_rng(int(spec["seed"]), "audio")
    length = max(1, int(round(float(spec["seconds"]) * sample_rate)))
    t = np.arange(length) / sample_rate
    envelope = 0.5 * (1.0 + np.sin(2.0 * np.pi * float(spec["am_hz"]) * t + rng.uniform(0, 2 * np.pi)))
    carrier = np.sin(2.0 * np.pi * float(spec["tone_hz"]) * t + rng.uniform(0, 2 * np.pi))
    mix = float(spec["noise_mix"])
    signal = (1.0 - mix) * envelope * carrier + mix * envelope * rng.standard_normal(length) * 0.5
    signal += 0.02 * rng.standard_normal(length)
    peak = np.max(np.abs(signal))
    return 0.8 * signal / peak if peak > 0 else signal


def _utterance_text(label_index: int, classes: Sequence[str], rng: np.random.Generator) -> str:
    words = []
    for _ in range(int(rng.integers(4, 10))):
        draw = rng.random()
        if draw < CLASS_WORD_SHARE:
            pool = class_words(classes[label_index])
        elif draw < CLASS_WORD_SHARE + SHARED_WORD_SHARE:
            pool = SHARED_WORDS
        else:
            other = int(rng.integers(len(classes)))
            pool = class_words(classes[other])
        words.append(pool[int(rng.integers(len(pool)))])
    return " ".join(words)


def synth_dataset(n: int, class_weights: Sequence[float], seed: int, out_dir: Union[str, Path],
                  classes: Sequence[str], sample_rate: int = 16000, min_seconds: float = 0.2,
                  max_seconds: float = 0.45, write_audio: bool = True) -> Path:
    """
    @brief Generate ``n`` labelled utterances and their manifest
    @param write_audio write PCM-16 WAV files; otherwise records carry the inline synth description
    @return path of ``manifest.jsonl`` inside ``out_dir``
    """
    if len(class_weights) != len(classes):
        raise ConfigError(f"{len(class_weights)} class weights for {len(classes)} classes")
    if not 0 < min_seconds <= max_seconds:
        raise ConfigError(f"need 0 < min_seconds <= max_seconds, got {min_seconds}, {max_seconds}")
    out_dir = Path(out_dir)
    labels = sample_labels(n, class_weights, make_rng(seed, "synth", "labels"))
    records = []
    for index, label_index in enumerate(labels):
        rng = make_rng(seed, "synth", "utterance", index)
        source_class = int(label_index)
        if rng.random() < BORROW_PROBABILITY:
            source_class = int(rng.integers(len(classes)))
        spec = dict(class_signature(source_class), seed=int(rng.integers(2 ** 31)),
                    seconds=round(float(rng.uniform(min_seconds, max_seconds)), 4))
        spec["tone_hz"] = round(spec["tone_hz"] * float(rng.uniform(0.95, 1.05)), 3)
        utterance_id = f"utt{index:05d}"
        text = _utterance_text(int(label_index), classes, rng)
        speaker = f"spk{int(rng.integers(8))}"
        if write_audio:
            relative = f"wav/{utterance_id}.wav"
            write_wav(out_dir / relative, Waveform(render_audio(spec, sample_rate), sample_rate))
            record = UtteranceRecord(id=utterance_id, label=classes[label_index], text=text, audio=relative,
                                     speaker=speaker)
        else:
            record = UtteranceRecord(id=utterance_id, label=classes[label_index], text=text, synth=spec,
                                     speaker=speaker)
        records.append(record)
    manifest = write_manifest(out_dir / "manifest.jsonl", records)
    counts = np.bincount(labels, minlength=len(classes))
    logging.info(f"Synthesized {n} utterances into {out_dir}: "
                 + ", ".join(f"{name}={count}" for name, count in zip(classes, counts)))
    return manifest


def synth_from_config(cfg, out_dir: Union[str, Path], write_audio: bool = True, n: Optional[int] = None) -> Path:
    return synth_dataset(n or cfg.synth.n, cfg.synth.class_weights, cfg.synth.seed, out_dir, cfg.data.classes,
                         sample_rate=cfg.audio.sample_rate, min_seconds=cfg.synth.min_seconds,
                         max_seconds=cfg.synth.max_seconds, write_audio=write_audio)
