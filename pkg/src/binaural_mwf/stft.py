"""Short-time analysis and weighted overlap-add (WOLA) synthesis.

Multichannel time-domain audio is chopped into tapered frames, zero-padded
to the FFT size and transformed to a one-sided spectrum.  Synthesis applies
the synthesis taper to each inverse-transformed frame, overlap-adds, and
normalises by the accumulated analysis*synthesis window so the round trip
is exact wherever the overlap-add sum is nonzero.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import InvalidInputError

WINDOW_FAMILIES = ("sqrt_hann", "rect")

# Relative deviation allowed for the constant-overlap-add check.
_COLA_TOL = 1e-10


def window_pair(name, length):
    """Return (analysis, synthesis) tapers for the given family.

    ``sqrt_hann`` is the square root of the periodic Hann window on both
    sides, which overlap-adds to a constant at any hop dividing the length.
    """
    if name == "sqrt_hann":
        w = np.sqrt(0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(length) / length))
        return w, w.copy()
    if name == "rect":
        w = np.ones(length)
        return w, w.copy()
    raise InvalidInputError(f"unknown window family: {name!r}")


@dataclass(frozen=True)
class StftConfig:
    """Frame/transform geometry of the processing chain."""

    fft_size: int = 256
    window_len: int = 128
    hop: int = 64
    sample_rate: float = 16000.0
    window: str = "sqrt_hann"

    def __post_init__(self):
        if self.fft_size < 1 or self.window_len < 1 or self.hop < 1:
            raise InvalidInputError("fft_size, window_len and hop must be positive")
        if self.window_len % self.hop != 0:
            raise InvalidInputError("hop must divide window_len")
        if self.window_len > self.fft_size:
            raise InvalidInputError("window_len must not exceed fft_size")
        if self.sample_rate <= 0:
            raise InvalidInputError("sample_rate must be positive")
        wa, ws = window_pair(self.window, self.window_len)
        # COLA: the product window summed over hop-shifted copies must be a
        # constant, otherwise WOLA reconstruction is not shift invariant.
        folds = (wa * ws).reshape(-1, self.hop).sum(axis=0)
        mean = folds.mean()
        if mean <= 0 or np.max(np.abs(folds - mean)) > _COLA_TOL * mean:
            raise InvalidInputError(
                f"window {self.window!r} fails constant overlap-add at hop {self.hop}"
            )

    @property
    def bin_count(self):
        return self.fft_size // 2 + 1

    @property
    def freqs(self):
        """Center frequency in Hz of each one-sided bin."""
        return np.fft.rfftfreq(self.fft_size, 1.0 / self.sample_rate)

    def frame_count(self, n_samples):
        if n_samples < self.window_len:
            raise InvalidInputError("signal shorter than the analysis window")
        return (n_samples - self.window_len) // self.hop + 1


@dataclass
class SpectralTensor:
    """One-sided STFT coefficients indexed (channel, frame, bin)."""

    data: np.ndarray
    config: StftConfig

    def __post_init__(self):
        self.data = np.asarray(self.data)
        if self.data.ndim != 3:
            raise InvalidInputError("spectral data must be (channel, frame, bin)")
        if self.data.shape[2] != self.config.bin_count:
            raise InvalidInputError(
                f"bin count {self.data.shape[2]} does not match "
                f"fft_size {self.config.fft_size}"
            )

    @property
    def channel_count(self):
        return self.data.shape[0]

    @property
    def frame_count(self):
        return self.data.shape[1]

    @property
    def bin_count(self):
        return self.data.shape[2]

    @property
    def freqs(self):
        return self.config.freqs

    def copy(self):
        return SpectralTensor(self.data.copy(), self.config)


def _as_channel_matrix(audio):
    """Coerce input to a float (channels, samples) matrix."""
    if isinstance(audio, (list, tuple)):
        lengths = {np.asarray(ch).shape for ch in audio}
        if len(audio) == 0:
            raise InvalidInputError("empty input")
        if len(lengths) > 1:
            raise InvalidInputError("channels have mismatched lengths")
    x = np.asarray(audio, dtype=float)
    if x.size == 0:
        raise InvalidInputError("empty input")
    if x.ndim == 1:
        x = x[np.newaxis, :]
    if x.ndim != 2:
        raise InvalidInputError("audio must be 1-D or (channels, samples)")
    return x


def analyze(audio, cfg: StftConfig) -> SpectralTensor:
    """Transform multichannel audio to the per-bin spectral domain.

    Frame ``t`` covers samples ``[t*hop, t*hop + window_len)``; each frame is
    tapered, zero-padded to ``fft_size`` and transformed with a real FFT.
    """
    x = _as_channel_matrix(audio)
    n = x.shape[1]
    n_frames = cfg.frame_count(n)
    wa, _ = window_pair(cfg.window, cfg.window_len)
    frames = sliding_window_view(x, cfg.window_len, axis=1)[:, :: cfg.hop, :]
    frames = frames[:, :n_frames, :]
    data = np.fft.rfft(frames * wa, n=cfg.fft_size, axis=2)
    return SpectralTensor(data, cfg)


def synthesize(spec: SpectralTensor) -> np.ndarray:
    """Weighted overlap-add reconstruction to (channels, samples).

    Output length is ``(frames - 1) * hop + window_len``.  Samples whose
    overlap-add window sum is (numerically) zero are left at zero; the
    round-trip identity holds everywhere else, in particular on all interior
    samples at least one window length away from either edge.
    """
    cfg = spec.config
    if spec.frame_count == 0:
        raise InvalidInputError("tensor has no frames")
    wa, ws = window_pair(cfg.window, cfg.window_len)
    frames_t = np.fft.irfft(spec.data, n=cfg.fft_size, axis=2)[..., : cfg.window_len]
    frames_t = frames_t * ws
    n_ch, n_frames, _ = frames_t.shape
    out_len = (n_frames - 1) * cfg.hop + cfg.window_len
    out = np.zeros((n_ch, out_len))
    norm = np.zeros(out_len)
    prod = wa * ws
    for t in range(n_frames):
        start = t * cfg.hop
        out[:, start : start + cfg.window_len] += frames_t[:, t, :]
        norm[start : start + cfg.window_len] += prod
    covered = norm > 1e-12 * max(norm.max(), 1.0)
    out[:, covered] /= norm[covered]
    out[:, ~covered] = 0.0
    return out
