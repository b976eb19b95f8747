"""Mel-frequency cepstral feature extraction from 16-bit PCM audio.

The chain: frame the signal into 512-sample blocks with 50% overlap,
taper each frame with a generalized Hamming window
w(n) = phi - (1 - phi) * cos(2*pi*n/(N-1)), take the magnitude spectrum
(bins 0..N/2), integrate it through a bank of triangular filters placed
uniformly on the mel scale mel(f) = 2595 * log10(1 + f/700), floor the
energies at 1e-10, take logs, and apply a DCT-II keeping coefficients
1..D (the energy coefficient 0 is excluded).

Signals must already be at the configured sample rate; nothing here
resamples.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, FormatError

ENERGY_FLOOR = 1e-10


class UnsupportedWavError(FormatError):
    """WAV input that is not 16-bit mono PCM at the expected layout."""


@dataclass(frozen=True, eq=False)
class PcmSignal:
    """Mono 16-bit PCM samples at a given rate."""

    rate: int
    samples: np.ndarray

    def __post_init__(self):
        if self.rate < 1:
            raise ValueError("sample rate must be positive")
        arr = np.asarray(self.samples)
        if arr.ndim != 1:
            raise ValueError("samples must be a 1-D array")
        arr = np.ascontiguousarray(arr, dtype=np.int16)
        arr.setflags(write=False)
        object.__setattr__(self, "samples", arr)

    @property
    def duration(self) -> float:
        return self.samples.size / self.rate


def load_wav(data: bytes) -> PcmSignal:
    """Parse a RIFF/WAVE byte string into a PcmSignal.

    Walks the chunk list, requires a PCM fmt chunk (format tag 1) with
    one channel and 16 bits per sample, and reads the data chunk.
    Anything else raises UnsupportedWavError; structural problems raise
    FormatError.
    """
    if len(data) < 12 or data[:4] != b"RIFF" or data[8:12] != b"WAVE":
        raise FormatError("not a RIFF/WAVE stream")
    pos = 12
    fmt = None
    raw = None
    while pos + 8 <= len(data):
        chunk_id = data[pos : pos + 4]
        (chunk_size,) = struct.unpack_from("<I", data, pos + 4)
        body = data[pos + 8 : pos + 8 + chunk_size]
        if chunk_id == b"fmt ":
            if chunk_size < 16 or len(body) < 16:
                raise FormatError("fmt chunk too small")
            fmt = struct.unpack_from("<HHIIHH", body, 0)
        elif chunk_id == b"data":
            if len(body) < chunk_size:
                raise FormatError("truncated data chunk")
            raw = body
        pos += 8 + chunk_size + (chunk_size & 1)
    if fmt is None or raw is None:
        raise FormatError("missing fmt or data chunk")
    audio_format, channels, rate, _byte_rate, _block_align, bits = fmt
    if audio_format != 1:
        raise UnsupportedWavError(f"unsupported format tag {audio_format} (PCM only)")
    if channels != 1:
        raise UnsupportedWavError(f"unsupported channel count {channels} (mono only)")
    if bits != 16:
        raise UnsupportedWavError(f"unsupported bit depth {bits} (16-bit only)")
    samples = np.frombuffer(raw[: len(raw) - (len(raw) % 2)], dtype="<i2")
    return PcmSignal(rate=rate, samples=samples.astype(np.int16))


def write_wav(signal: PcmSignal) -> bytes:
    """Serialize to a canonical 44-byte-header RIFF/WAVE PCM stream."""
    raw = signal.samples.astype("<i2").tobytes()
    byte_rate = signal.rate * 2
    header = b"RIFF" + struct.pack("<I", 36 + len(raw)) + b"WAVE"
    header += b"fmt " + struct.pack("<IHHIIHH", 16, 1, 1, signal.rate, byte_rate, 2, 16)
    header += b"data" + struct.pack("<I", len(raw))
    return header + raw


def load_wav_file(path) -> PcmSignal:
    with open(path, "rb") as fh:
        return load_wav(fh.read())


def save_wav_file(signal: PcmSignal, path) -> None:
    with open(path, "wb") as fh:
        fh.write(write_wav(signal))


def pre_emphasize(samples: np.ndarray, coefficient: float) -> np.ndarray:
    """First-order high-pass x[n] - k*x[n-1]; x[-1] is taken as 0."""
    x = np.asarray(samples, dtype=np.float64)
    out = x.copy()
    out[1:] -= coefficient * x[:-1]
    return out


def frame_block(signal: PcmSignal, frame_length: int = 512, overlap: float = 0.5,
                preemphasis: float = 0.0) -> np.ndarray:
    """Slice the signal into overlapping frames.

    The hop is frame_length * (1 - overlap) samples; a signal of L
    samples yields 1 + floor((L - N) / hop) frames (zero when L < N).
    Returns an (n_frames, frame_length) float64 array.
    """
    if frame_length < 2:
        raise ConfigurationError("frame length must be >= 2")
    if not 0.0 <= overlap < 1.0:
        raise ConfigurationError("overlap must lie in [0, 1)")
    hop = int(round(frame_length * (1.0 - overlap)))
    if hop < 1:
        raise ConfigurationError("overlap leaves an empty hop")
    x = signal.samples.astype(np.float64)
    if preemphasis:
        x = pre_emphasize(x, preemphasis)
    n = x.size
    if n < frame_length:
        return np.zeros((0, frame_length))
    count = 1 + (n - frame_length) // hop
    frames = np.empty((count, frame_length))
    for i in range(count):
        frames[i] = x[i * hop : i * hop + frame_length]
    return frames


@dataclass(frozen=True, eq=False)
class WindowSpec:
    """Generalized Hamming window: w(n) = phi - (1-phi)*cos(2*pi*n/(N-1)).

    phi = 0.54 is the Hamming window, phi = 0.5 the Hanning window.
    """

    length: int
    phi: float
    coefficients: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.coefficients, dtype=np.float64)
        arr.setflags(write=False)
        object.__setattr__(self, "coefficients", arr)


def make_window(length: int, phi: float = 0.54) -> WindowSpec:
    if length < 2:
        raise ConfigurationError("window length must be >= 2")
    if not 0.0 < phi <= 1.0:
        raise ConfigurationError("phi must lie in (0, 1]")
    n = np.arange(length, dtype=np.float64)
    coeffs = phi - (1.0 - phi) * np.cos(2.0 * np.pi * n / (length - 1))
    return WindowSpec(length=length, phi=phi, coefficients=coeffs)


def apply_window(frames: np.ndarray, window: WindowSpec) -> np.ndarray:
    frames = np.asarray(frames, dtype=np.float64)
    if frames.shape[-1] != window.length:
        raise ValueError("frame length does not match the window")
    return frames * window.coefficients


def magnitude_spectrum(frames: np.ndarray) -> np.ndarray:
    """|DFT| of each frame, bins 0..N/2. N must be a power of two."""
    frames = np.asarray(frames, dtype=np.float64)
    n = frames.shape[-1]
    if n < 2 or n & (n - 1):
        raise ConfigurationError(f"frame length {n} is not a power of two")
    return np.abs(np.fft.rfft(frames, axis=-1))


def mel(hz):
    """Mel scale: 2595 * log10(1 + f/700)."""
    return 2595.0 * np.log10(1.0 + np.asarray(hz, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (np.power(10.0, np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


@dataclass(frozen=True, eq=False)
class MelFilterbank:
    """Triangular filters over magnitude-spectrum bins.

    ``responses`` is (filter_count, fft_size//2 + 1); every filter is
    non-negative and unimodal, and center frequencies (in Hz) increase
    strictly.
    """

    filter_count: int
    fft_size: int
    rate: int
    responses: np.ndarray
    centers_hz: np.ndarray

    def __post_init__(self):
        for name in ("responses", "centers_hz"):
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)


def build_filterbank(filter_count: int = 26, fft_size: int = 512, rate: int = 16000) -> MelFilterbank:
    """Place filter_count triangles uniformly on the mel axis over [0, rate/2].

    The filter break frequencies are filter_count + 2 equally spaced mel
    points mapped back to Hz and rounded to spectrum bins; triangle i
    rises over (b[i-1], b[i]) and falls over (b[i], b[i+1]).
    """
    if filter_count < 1:
        raise ConfigurationError("filter count must be >= 1")
    if fft_size < 2 or fft_size & (fft_size - 1):
        raise ConfigurationError("fft size must be a power of two")
    n_bins = fft_size // 2 + 1
    mel_breaks = np.linspace(0.0, float(mel(rate / 2.0)), filter_count + 2)
    hz_breaks = mel_to_hz(mel_breaks)
    bins = np.floor(hz_breaks / rate * fft_size + 0.5).astype(int)
    bins = np.clip(bins, 0, n_bins - 1)

    responses = np.zeros((filter_count, n_bins))
    for i in range(1, filter_count + 1):
        lo, mid, hi = bins[i - 1], bins[i], bins[i + 1]
        for j in range(lo, mid):
            responses[i - 1, j] = (j - lo) / (mid - lo)
        if mid < hi:
            for j in range(mid, hi + 1):
                responses[i - 1, j] = (hi - j) / (hi - mid)
        else:
            responses[i - 1, mid] = 1.0
    return MelFilterbank(
        filter_count=filter_count, fft_size=fft_size, rate=rate,
        responses=responses, centers_hz=hz_breaks[1:-1],
    )


def apply_filterbank(spectrum: np.ndarray, bank: MelFilterbank) -> np.ndarray:
    """Log filter energies: log(max(sum_j S(j) * psi_i(j), 1e-10))."""
    spectrum = np.asarray(spectrum, dtype=np.float64)
    if spectrum.shape[-1] != bank.responses.shape[1]:
        raise ValueError("spectrum bin count does not match the filterbank")
    energies = spectrum @ bank.responses.T
    return np.log(np.maximum(energies, ENERGY_FLOOR))


def cepstral_transform(log_energies: np.ndarray, coeff_count: int = 12) -> np.ndarray:
    """DCT-II of the log energies, keeping coefficients 1..coeff_count.

    c(n) = sum_{i=1..M} logY(i) * cos(n * (i - 0.5) * pi / M). The
    constant coefficient c(0) is dropped, so a constant energy vector
    transforms to all zeros.
    """
    log_energies = np.asarray(log_energies, dtype=np.float64)
    m = log_energies.shape[-1]
    if not 1 <= coeff_count <= m:
        raise ConfigurationError("coefficient count must lie in 1..filter_count")
    i = np.arange(1, m + 1, dtype=np.float64)
    n = np.arange(1, coeff_count + 1, dtype=np.float64)
    basis = np.cos(np.outer(n, (i - 0.5) * np.pi / m))
    return log_energies @ basis.T


@dataclass(frozen=True)
class MfccParams:
    rate: int = 16000
    frame_length: int = 512
    overlap: float = 0.5
    window_phi: float = 0.54
    filter_count: int = 26
    coeff_count: int = 12
    preemphasis: float = 0.0


@dataclass(frozen=True, eq=False)
class MfccSequence:
    """Per-frame cepstral vectors plus the parameters that produced them."""

    vectors: np.ndarray
    params: MfccParams

    def __post_init__(self):
        arr = np.asarray(self.vectors, dtype=np.float64)
        if arr.ndim != 2:
            raise ValueError("MFCC vectors must form a 2-D array")
        arr.setflags(write=False)
        object.__setattr__(self, "vectors", arr)

    @property
    def frame_count(self) -> int:
        return self.vectors.shape[0]


def extract_mfcc(signal: PcmSignal, params: MfccParams = MfccParams()) -> MfccSequence:
    """Full feature chain for one utterance.

    The signal's rate must equal params.rate; mismatches are a
    configuration error rather than an implicit resample.
    """
    if signal.rate != params.rate:
        raise ConfigurationError(
            f"signal rate {signal.rate} does not match configured rate {params.rate}"
        )
    frames = frame_block(signal, params.frame_length, params.overlap, params.preemphasis)
    if frames.shape[0] == 0:
        return MfccSequence(vectors=np.zeros((0, params.coeff_count)), params=params)
    window = make_window(params.frame_length, params.window_phi)
    spectra = magnitude_spectrum(apply_window(frames, window))
    bank = build_filterbank(params.filter_count, params.frame_length, params.rate)
    log_energies = apply_filterbank(spectra, bank)
    vectors = cepstral_transform(log_energies, params.coeff_count)
    return MfccSequence(vectors=vectors, params=params)


def dump_mfcc(seq: MfccSequence) -> str:
    """One line per frame, comma-separated full-precision decimals."""
    lines = [",".join(repr(float(v)) for v in row) for row in seq.vectors]
    return "\n".join(lines) + ("\n" if lines else "")


def parse_mfcc_dump(text: str) -> np.ndarray:
    rows = []
    width = None
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            row = [float(v) for v in line.split(",")]
        except ValueError:
            raise FormatError(f"bad float on line {lineno}") from None
        if width is None:
            width = len(row)
        elif len(row) != width:
            raise FormatError(f"ragged row on line {lineno}")
        rows.append(row)
    return np.asarray(rows, dtype=np.float64) if rows else np.zeros((0, 0))
