"""
@file audio_frontend.py
@brief Waveform -> log-mel spectrogram -> patch tokens
@details The pipeline is STFT magnitude (periodic Hann window, one-sided
spectrum), an HTK-style triangular mel filterbank, ``log1p`` compression and
finally non-overlapping time x frequency patches projected to ``model_dim``.
"""

import logging
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Dict, Optional, Union

import numpy as np
import soundfile as sf
from numpy.lib.stride_tricks import sliding_window_view
from scipy.signal import get_window

from errors import ConfigError, ContractViolation, FormatError, SignalTooShortError
from numerics import functional as F
from numerics.rng import gaussian
from numerics.tensor import Tensor, parameter
from numerics.transformer import DEFAULT_INIT_STD

DEFAULT_SAMPLE_RATE = 16000
DEFAULT_FRAME_LEN = 400
DEFAULT_HOP = 160
DEFAULT_FFT_SIZE = 512
DEFAULT_N_MELS = 80
SUPPORTED_SUBTYPES = ("PCM_16", "FLOAT")


@dataclass
class Waveform:
    """Mono samples in [-1, 1] at ``sample_rate`` Hz."""
    samples: np.ndarray
    sample_rate: int = DEFAULT_SAMPLE_RATE

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1 or self.samples.size == 0:
            raise ContractViolation(f"waveform must be a non-empty 1-D array, got shape {self.samples.shape}")
        if self.sample_rate <= 0:
            raise ContractViolation(f"sample_rate must be positive, got {self.sample_rate}")
        if not np.isfinite(self.samples).all():
            raise ContractViolation("waveform holds non-finite samples")
        peak = float(np.max(np.abs(self.samples)))
        if peak > 1.0:
            raise ContractViolation(f"waveform samples must lie in [-1, 1], peak is {peak:.6f}")

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate


@dataclass
class MelSpectrogram:
    frames: np.ndarray  # [T, M]
    frame_len: int
    hop: int

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def n_mels(self) -> int:
        return self.frames.shape[1]


@dataclass
class PatchProjection:
    """Trainable linear map from flattened patches to ``model_dim``."""
    weight: Tensor
    bias: Tensor
    patch_time: int
    patch_freq: int

    @classmethod
    def init(cls, patch_time: int, patch_freq: int, model_dim: int, rng: np.random.Generator,
             init_std: float = DEFAULT_INIT_STD) -> "PatchProjection":
        if patch_time < 1 or patch_freq < 1:
            raise ContractViolation(f"patch sizes must be >= 1, got {patch_time}x{patch_freq}")
        return cls(weight=parameter(gaussian(rng, (patch_time * patch_freq, model_dim), init_std)),
                   bias=parameter(np.zeros(model_dim)), patch_time=patch_time, patch_freq=patch_freq)

    @property
    def model_dim(self) -> int:
        return self.weight.shape[1]

    def named_parameters(self, prefix: str) -> Dict[str, Tensor]:
        return {f"{prefix}.weight": self.weight, f"{prefix}.bias": self.bias}

    def __call__(self, patches) -> Tensor:
        return F.linear(patches, self.weight, self.bias)


@dataclass
class PatchEmbedding:
    tokens: Tensor  # [P, d], houses F_m
    patch_time: int
    patch_freq: int

    @property
    def n_tokens(self) -> int:
        return self.tokens.shape[0]


def to_mono(frames: np.ndarray, source: str = "<array>") -> np.ndarray:
    """Average channels of a [n, channels] array, warning when more than one."""
    frames = np.asarray(frames, dtype=np.float64)
    if frames.ndim == 1:
        return frames
    if frames.shape[1] > 1:
        logging.warning(f"{source}: {frames.shape[1]}-channel audio averaged to mono")
    return frames.mean(axis=1)


def load_wav(path: Union[str, Path], expected_sample_rate: Optional[int] = None) -> Waveform:
    """
    Read a PCM-16 or 32-bit float WAV file as a mono Waveform.

    :param path: file to read
    :param expected_sample_rate: when given, a different file rate is a ConfigError
    :raises FormatError: unreadable file or an encoding other than PCM_16 / FLOAT
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"audio file not found at {path}")
    try:
        info = sf.info(str(path))
        if info.format != "WAV":
            raise FormatError(f"{path}: container '{info.format}' is not RIFF/WAV")
        if info.subtype not in SUPPORTED_SUBTYPES:
            raise FormatError(f"{path}: 'fmt ' chunk declares {info.subtype_info or info.subtype}; "
                              f"only {' and '.join(SUPPORTED_SUBTYPES)} are supported")
        data, sample_rate = sf.read(str(path), dtype="float64", always_2d=True)
    except RuntimeError as exc:  # soundfile.LibsndfileError
        raise FormatError(f"{path}: cannot decode audio ({exc})") from exc
    if expected_sample_rate is not None and sample_rate != expected_sample_rate:
        raise ConfigError(f"{path}: sample rate {sample_rate} Hz, configured {expected_sample_rate} Hz "
                          f"(resampling is not supported)")
    return Waveform(np.clip(to_mono(data, str(path)), -1.0, 1.0), int(sample_rate))


def write_wav(path: Union[str, Path], waveform: Waveform, subtype: str = "PCM_16") -> Path:
    if subtype not in SUPPORTED_SUBTYPES:
        raise ContractViolation(f"write_wav: subtype must be one of {SUPPORTED_SUBTYPES}, got {subtype}")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    sf.write(str(path), waveform.samples, waveform.sample_rate, subtype=subtype, format="WAV")
    return path


def stft_magnitude(waveform: Union[Waveform, np.ndarray], frame_len: int = DEFAULT_FRAME_LEN,
                   hop: int = DEFAULT_HOP, fft_size: int = DEFAULT_FFT_SIZE) -> np.ndarray:
    """
    @brief Magnitude of the one-sided STFT with a periodic Hann window
    @return array [T, fft_size // 2 + 1] with T = 1 + (len - frame_len) // hop
    """
    samples = waveform.samples if isinstance(waveform, Waveform) else np.asarray(waveform, dtype=np.float64)
    if frame_len < 1 or frame_len > fft_size:
        raise ContractViolation(f"stft: frame_len {frame_len} must lie in [1, fft_size={fft_size}]")
    if hop < 1:
        raise ContractViolation(f"stft: hop must be >= 1, got {hop}")
    if samples.size < frame_len:
        raise SignalTooShortError(f"signal too short: {samples.size} samples < one frame of {frame_len}")
    frames = sliding_window_view(samples, frame_len)[::hop]
    window = get_window("hann", frame_len, fftbins=True)
    return np.abs(np.fft.rfft(frames * window, n=fft_size, axis=-1))


def hz_to_mel(freq):
    return 2595.0 * np.log10(1.0 + np.asarray(freq, dtype=np.float64) / 700.0)


def mel_to_hz(mel):
    return 700.0 * (10.0 ** (np.asarray(mel, dtype=np.float64) / 2595.0) - 1.0)


@lru_cache(maxsize=16)
def _cached_filterbank(n_mels: int, fft_size: int, sample_rate: int, f_min: float, f_max: float) -> np.ndarray:
    bin_freqs = np.fft.rfftfreq(fft_size, d=1.0 / sample_rate)
    edges = mel_to_hz(np.linspace(hz_to_mel(f_min), hz_to_mel(f_max), n_mels + 2))
    lower, center, upper = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (bin_freqs[None, :] - lower) / (center - lower)
    falling = (upper - bin_freqs[None, :]) / (upper - center)
    bank = np.maximum(0.0, np.minimum(rising, falling))
    empty = np.flatnonzero(bank.max(axis=1) <= 0.0)
    if empty.size:
        raise ContractViolation(f"mel_filterbank: {n_mels} filters exceed the resolution of {fft_size // 2 + 1} "
                                f"FFT bins ({empty.size} filters, first #{empty[0]}, cover no bin)")
    bank.setflags(write=False)
    return bank


def mel_filterbank(n_mels: int = DEFAULT_N_MELS, fft_size: int = DEFAULT_FFT_SIZE,
                   sample_rate: int = DEFAULT_SAMPLE_RATE, f_min: float = 0.0,
                   f_max: Optional[float] = None) -> np.ndarray:
    """
    Triangular filters with centres equally spaced on mel(f) = 2595 log10(1 + f/700).

    :return: array [n_mels, fft_size // 2 + 1]; each row has one contiguous support
    """
    f_max = sample_rate / 2.0 if f_max is None else float(f_max)
    if n_mels < 1:
        raise ContractViolation(f"mel_filterbank: n_mels must be >= 1, got {n_mels}")
    if not 0.0 <= f_min < f_max <= sample_rate / 2.0:
        raise ContractViolation(f"mel_filterbank: need 0 <= f_min < f_max <= {sample_rate / 2.0}, "
                                f"got f_min={f_min}, f_max={f_max}")
    return _cached_filterbank(int(n_mels), int(fft_size), int(sample_rate), float(f_min), f_max)


def mel_spectrogram(waveform: Waveform, n_mels: int = DEFAULT_N_MELS, frame_len: int = DEFAULT_FRAME_LEN,
                    hop: int = DEFAULT_HOP, fft_size: int = DEFAULT_FFT_SIZE, f_min: float = 0.0,
                    f_max: Optional[float] = None) -> MelSpectrogram:
    """log1p(filterbank . |STFT|) per frame."""
    magnitude = stft_magnitude(waveform, frame_len=frame_len, hop=hop, fft_size=fft_size)
    bank = mel_filterbank(n_mels, fft_size, waveform.sample_rate, f_min, f_max)
    return MelSpectrogram(frames=np.log1p(magnitude @ bank.T), frame_len=frame_len, hop=hop)


def mel_from_config(waveform: Waveform, audio_cfg) -> MelSpectrogram:
    """mel_spectrogram with parameters taken from an AudioConfig."""
    if waveform.sample_rate != audio_cfg.sample_rate:
        raise ConfigError(f"waveform sample rate {waveform.sample_rate} Hz != configured {audio_cfg.sample_rate} Hz")
    return mel_spectrogram(waveform, n_mels=audio_cfg.n_mels, frame_len=audio_cfg.frame_len, hop=audio_cfg.hop,
                           fft_size=audio_cfg.fft_size, f_min=audio_cfg.f_min, f_max=audio_cfg.f_max)


def patch_count(n_frames: int, n_mels: int, patch_time: int, patch_freq: int) -> int:
    return -(-n_frames // patch_time) * -(-n_mels // patch_freq)


def patchify(frames: np.ndarray, patch_time: int, patch_freq: int) -> np.ndarray:
    """
    Zero-pad a [T, M] grid to whole patches and flatten each patch row-major.

    Patches are ordered time-major (all frequency strips of the first time
    block, then the next block).

    :return: array [P, patch_time * patch_freq]
    """
    if patch_time < 1 or patch_freq < 1:
        raise ContractViolation(f"patch sizes must be >= 1, got {patch_time}x{patch_freq}")
    n_frames, n_mels = frames.shape
    time_blocks, freq_blocks = -(-n_frames // patch_time), -(-n_mels // patch_freq)
    padded = np.zeros((time_blocks * patch_time, freq_blocks * patch_freq), dtype=np.float64)
    padded[:n_frames, :n_mels] = frames
    patches = padded.reshape(time_blocks, patch_time, freq_blocks, patch_freq).transpose(0, 2, 1, 3)
    return patches.reshape(time_blocks * freq_blocks, patch_time * patch_freq)


def patchify_and_project(mel: MelSpectrogram, projection: PatchProjection,
                         model_dim: Optional[int] = None) -> PatchEmbedding:
    """
    @brief Split a spectrogram into patches and embed them linearly (F_m)
    @param model_dim expected fusion width; a projection of another width is a ConfigError
    """
    if model_dim is not None and projection.model_dim != model_dim:
        raise ConfigError(f"patch projection emits d={projection.model_dim}, fusion expects d={model_dim}")
    patches = patchify(mel.frames, projection.patch_time, projection.patch_freq)
    return PatchEmbedding(tokens=projection(Tensor(patches)), patch_time=projection.patch_time,
                          patch_freq=projection.patch_freq)
