"""Audio ingestion and feature extraction.

Covers WAV reading (RIFF PCM16 / IEEE float32), the standard preprocessing
chain (mono, 16 kHz, peak-normalized), 128-band log-mel spectrograms, and
the NLF1 container for per-frame feature matrices (also the carrier for
precomputed 512-dim encoder features).
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import BinaryIO, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

TARGET_RATE = 16000
PEAK_TARGET = 0.99

NLF1_MAGIC = b"NLF1"
NLF1_VERSION = 1


class UnsupportedFormat(ValueError):
    """WAV encoding outside RIFF PCM16 / IEEE float32 mono-or-stereo."""


class CorruptHeader(ValueError):
    """RIFF structure is malformed or truncated."""


class EmptyAudio(ValueError):
    """No samples to process."""


class AudioTooShort(ValueError):
    """Fewer samples than one analysis window."""


class BadMagic(ValueError):
    """Feature file does not start with the NLF1 magic."""


class VersionUnsupported(ValueError):
    """Feature file version not understood."""


class TruncatedFile(ValueError):
    """Feature file shorter than its header promises."""


@dataclass
class Waveform:
    """Mono audio samples in [-1, 1] at a given sample rate."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float32)
        if self.samples.ndim != 1:
            raise ValueError("Waveform holds mono (1-D) samples")
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be positive")

    @property
    def duration_s(self) -> float:
        return len(self.samples) / self.sample_rate


@dataclass
class FeatureSequence:
    """T x D matrix of per-frame features with timing metadata.

    frame_period_ms is the hop between frames; receptive_field_ms is the
    span of raw audio each frame summarizes. Encoder features use D=512,
    10 ms period and a 30 ms receptive field; mel frames use D=128, 10 ms
    and 25 ms.
    """

    frames: np.ndarray
    frame_period_ms: float
    receptive_field_ms: float

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float32)
        if self.frames.ndim != 2 or self.frames.shape[0] < 1 or self.frames.shape[1] < 1:
            raise ValueError("frames must be a T x D matrix with T, D >= 1")
        # timing metadata is stored as f32 on disk; quantize up front so
        # write/read round trips are bit-exact for every instance
        self.frame_period_ms = float(np.float32(self.frame_period_ms))
        self.receptive_field_ms = float(np.float32(self.receptive_field_ms))
        if self.frame_period_ms <= 0:
            raise ValueError("frame_period_ms must be positive")
        if self.receptive_field_ms < self.frame_period_ms:
            raise ValueError("receptive_field_ms must be >= frame_period_ms")

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def dim(self) -> int:
        return self.frames.shape[1]


# ---------------------------------------------------------------------------
# WAV reading/writing


def _read_exact(buf: BinaryIO, n: int) -> bytes:
    data = buf.read(n)
    if len(data) != n:
        raise CorruptHeader(f"expected {n} bytes, got {len(data)}")
    return data


def load_wav(source: Union[str, Path, bytes, bytearray], mixdown: bool = True) -> Waveform:
    """Read a RIFF/WAVE file (PCM 16-bit or IEEE float 32-bit, 1-2 channels).

    Samples are scaled to [-1, 1]; the original sample rate is preserved.
    Stereo input is averaged to mono when `mixdown` is true, rejected
    otherwise. OS-level failures surface as OSError.
    """
    if isinstance(source, (bytes, bytearray)):
        buf: BinaryIO = io.BytesIO(bytes(source))
    else:
        buf = open(source, "rb")
    try:
        header = _read_exact(buf, 12)
        if header[:4] != b"RIFF" or header[8:12] != b"WAVE":
            raise CorruptHeader("not a RIFF/WAVE file")

        fmt = None
        data = None
        while data is None:
            chunk_header = buf.read(8)
            if len(chunk_header) == 0:
                break
            if len(chunk_header) != 8:
                raise CorruptHeader("truncated chunk header")
            chunk_id, size = chunk_header[:4], struct.unpack("<I", chunk_header[4:])[0]
            if chunk_id == b"fmt ":
                fmt = _read_exact(buf, size)
            elif chunk_id == b"data":
                data = _read_exact(buf, size)
            else:
                buf.seek(size + (size % 2), io.SEEK_CUR)

        if fmt is None or len(fmt) < 16:
            raise CorruptHeader("missing fmt chunk")
        if data is None:
            raise CorruptHeader("missing data chunk")

        audio_format, channels, rate, _, block_align, bits = struct.unpack(
            "<HHIIHH", fmt[:16]
        )
        if channels not in (1, 2):
            raise UnsupportedFormat(f"{channels} channels not supported")
        if (audio_format, bits) == (1, 16):
            raw = np.frombuffer(data[: len(data) - len(data) % block_align], dtype="<i2")
            samples = raw.astype(np.float32) / 32768.0
        elif (audio_format, bits) == (3, 32):
            raw = np.frombuffer(data[: len(data) - len(data) % block_align], dtype="<f4")
            samples = np.clip(raw.astype(np.float32), -1.0, 1.0)
        else:
            raise UnsupportedFormat(
                f"format tag {audio_format} with {bits} bits not supported"
            )

        if channels == 2:
            if not mixdown:
                raise UnsupportedFormat("stereo input and mixdown disabled")
            samples = samples.reshape(-1, 2).mean(axis=1, dtype=np.float64)
            samples = samples.astype(np.float32)
        return Waveform(samples, rate)
    finally:
        buf.close()


def write_wav(w: Waveform, path: Union[str, Path]) -> None:
    """Write a mono PCM16 WAV file (utility for fixtures and demos)."""
    pcm = np.clip(np.round(w.samples.astype(np.float64) * 32768.0), -32768, 32767)
    data = pcm.astype("<i2").tobytes()
    with open(path, "wb") as f:
        f.write(b"RIFF" + struct.pack("<I", 36 + len(data)) + b"WAVE")
        f.write(b"fmt " + struct.pack("<IHHIIHH", 16, 1, 1, w.sample_rate,
                                      w.sample_rate * 2, 2, 16))
        f.write(b"data" + struct.pack("<I", len(data)) + data)


# ---------------------------------------------------------------------------
# Preprocessing


def preprocess(w: Waveform) -> Waveform:
    """Return a mono 16 kHz waveform peak-normalized to 0.99.

    Resampling is linear interpolation. Digital silence passes through
    untouched; the whole chain is idempotent bit-for-bit.
    """
    if len(w.samples) == 0:
        raise EmptyAudio("waveform has no samples")

    samples = w.samples.astype(np.float64)
    if w.sample_rate != TARGET_RATE:
        n_out = int(round(len(samples) * TARGET_RATE / w.sample_rate))
        if n_out < 1:
            raise EmptyAudio("resampled output would be empty")
        positions = np.arange(n_out) * (w.sample_rate / TARGET_RATE)
        samples = np.interp(positions, np.arange(len(samples)), samples)

    peak = np.abs(samples).max()
    if peak > 0.0:
        samples = samples * (PEAK_TARGET / peak)
    return Waveform(samples.astype(np.float32), TARGET_RATE)


# ---------------------------------------------------------------------------
# Mel spectrograms


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(n_mels: int, fft_size: int, sample_rate: int,
                   fmin: float = 0.0, fmax: float = 8000.0) -> np.ndarray:
    """Triangular area-normalized mel filters evaluated at FFT bin centers."""
    n_bins = fft_size // 2 + 1
    bin_hz = np.arange(n_bins) * (sample_rate / fft_size)
    hz_pts = mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2))

    bank = np.zeros((n_mels, n_bins))
    for i in range(n_mels):
        left, center, right = hz_pts[i], hz_pts[i + 1], hz_pts[i + 2]
        rising = (bin_hz - left) / (center - left)
        falling = (right - bin_hz) / (right - center)
        tri = np.maximum(0.0, np.minimum(rising, falling))
        bank[i] = tri * (2.0 / (right - left))  # area normalization
    return bank


def mel_center_frequencies(n_mels: int = 128, fmin: float = 0.0,
                           fmax: float = 8000.0) -> np.ndarray:
    """Center frequency (Hz) of each mel filter."""
    return mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2))[1:-1]


def mel_spectrogram(w: Waveform, n_mels: int = 128, win_ms: float = 25.0,
                    hop_ms: float = 10.0, fft_size: int = 512) -> FeatureSequence:
    """Log power mel spectrogram of a 16 kHz mono waveform.

    Frames are log(1e-10 + melbank @ |STFT|^2) with a Hann window;
    T = floor((N - win) / hop) + 1.
    """
    if w.sample_rate != TARGET_RATE:
        raise ValueError(f"mel_spectrogram expects {TARGET_RATE} Hz input")
    win = int(round(win_ms * w.sample_rate / 1000.0))
    hop = int(round(hop_ms * w.sample_rate / 1000.0))
    samples = w.samples.astype(np.float64)
    if len(samples) < win:
        raise AudioTooShort(f"need at least {win} samples, got {len(samples)}")

    frames = sliding_window_view(samples, win)[::hop]
    window = np.hanning(win)
    spectra = np.abs(np.fft.rfft(frames * window, n=fft_size, axis=1)) ** 2
    bank = mel_filterbank(n_mels, fft_size, w.sample_rate)
    mel = np.log(1e-10 + spectra @ bank.T)
    return FeatureSequence(mel.astype(np.float32), hop_ms, win_ms)


# ---------------------------------------------------------------------------
# NLF1 feature files


def write_features(fs: FeatureSequence, path: Union[str, Path]) -> None:
    """Write a FeatureSequence as an NLF1 file (bit-exact round trip)."""
    t, d = fs.frames.shape
    header = NLF1_MAGIC + struct.pack(
        "<IIIff", NLF1_VERSION, t, d, fs.frame_period_ms, fs.receptive_field_ms
    )
    with open(path, "wb") as f:
        f.write(header)
        f.write(np.ascontiguousarray(fs.frames, dtype="<f4").tobytes())


def read_features(source: Union[str, Path, bytes, bytearray]) -> FeatureSequence:
    """Read an NLF1 file written by write_features."""
    if isinstance(source, (bytes, bytearray)):
        blob = bytes(source)
    else:
        with open(source, "rb") as f:
            blob = f.read()

    if len(blob) < 4 or blob[:4] != NLF1_MAGIC:
        raise BadMagic("not an NLF1 feature file")
    if len(blob) < 24:
        raise TruncatedFile("header incomplete")
    version, t, d, period, field = struct.unpack("<IIIff", blob[4:24])
    if version != NLF1_VERSION:
        raise VersionUnsupported(f"version {version} not supported")
    expected = 24 + t * d * 4
    if len(blob) < expected:
        raise TruncatedFile(f"expected {expected} bytes, got {len(blob)}")
    frames = np.frombuffer(blob[24:expected], dtype="<f4").reshape(t, d)
    return FeatureSequence(frames.copy(), float(period), float(field))
