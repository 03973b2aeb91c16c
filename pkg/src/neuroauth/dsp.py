"""Butterworth bandpass filtering and sliding-window segmentation."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import signal

from .errors import ConfigError, NeuroAuthError
from .ingest import SessionRecord


class UnstableFilterError(NeuroAuthError):
    pass


@dataclass(frozen=True)
class BandpassSpec:
    """Bandpass design parameters.

    ``order`` is the order of the analog lowpass prototype; the resulting
    bandpass has ``2 * order`` poles realised as ``order`` biquads.
    """

    low_cut_hz: float = 0.2
    high_cut_hz: float = 45.0
    order: int = 4
    sample_rate_hz: float = 500.0

    def __post_init__(self):
        if not isinstance(self.order, (int, np.integer)) or self.order < 2 or self.order % 2:
            raise ConfigError(f"order must be a positive even integer, got {self.order!r}")
        if not 0 < self.low_cut_hz < self.high_cut_hz < self.sample_rate_hz / 2:
            raise ConfigError(
                "cutoff out of range: need 0 < low_cut_hz < high_cut_hz < sample_rate_hz/2 "
                f"(got {self.low_cut_hz}, {self.high_cut_hz}, fs={self.sample_rate_hz})"
            )


@dataclass(frozen=True, eq=False)
class FilterRealization:
    """Cascade of biquads; each row of ``sections`` is ``[b0, b1, b2, 1, a1, a2]``."""

    sections: np.ndarray
    sample_rate_hz: float

    def __post_init__(self):
        sos = np.array(self.sections, dtype=np.float64)
        if sos.ndim != 2 or sos.shape[1] != 6:
            raise ConfigError("sections must have shape (n, 6)")
        if not np.all(sos[:, 3] == 1.0):
            raise ConfigError("denominators must be monic")
        for row in sos:
            if np.any(np.abs(np.roots(row[3:])) >= 1.0):
                raise UnstableFilterError("section has a pole on or outside the unit circle")
        sos.flags.writeable = False
        object.__setattr__(self, "sections", sos)

    def initial_state(self) -> np.ndarray:
        return np.zeros((self.sections.shape[0], 2))

    def frequency_response(self, freqs_hz) -> np.ndarray:
        """Complex response at the given frequencies, evaluated from the coefficients."""
        w = 2 * np.pi * np.atleast_1d(np.asarray(freqs_hz, dtype=np.float64)) / self.sample_rate_hz
        zinv = np.exp(-1j * w)
        h = np.ones_like(zinv)
        for b0, b1, b2, a0, a1, a2 in self.sections:
            h *= (b0 + b1 * zinv + b2 * zinv**2) / (a0 + a1 * zinv + a2 * zinv**2)
        return h

    def magnitude_db(self, freqs_hz) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return 20 * np.log10(np.abs(self.frequency_response(freqs_hz)))


def design_bandpass(spec: BandpassSpec) -> FilterRealization:
    """Butterworth bandpass via the bilinear transform with pre-warped band edges."""
    fs = spec.sample_rate_hz
    n = spec.order
    fs2 = 2.0 * fs
    lo = fs2 * math.tan(math.pi * spec.low_cut_hz / fs)
    hi = fs2 * math.tan(math.pi * spec.high_cut_hz / fs)
    bw = hi - lo
    w0_sq = lo * hi

    proto = np.exp(1j * np.pi * (2 * np.arange(1, n + 1) + n - 1) / (2 * n))
    half = proto * bw / 2
    root = np.sqrt(half**2 - w0_sq)
    s_poles = np.concatenate([half + root, half - root])
    z_poles = (fs2 + s_poles) / (fs2 - s_poles)
    # n zeros at s=0 map to z=1, n zeros at infinity map to z=-1.
    gain = bw**n * np.real(fs2**n / np.prod(fs2 - s_poles))

    upper = z_poles[z_poles.imag > 0]
    if upper.size != n:
        raise UnstableFilterError("unexpected real poles in bandpass design")
    upper = upper[np.argsort(np.abs(upper))]
    section_gain = abs(gain) ** (1.0 / n)
    sections = np.empty((n, 6))
    for k, p in enumerate(upper):
        g = section_gain if k else math.copysign(section_gain, gain)
        sections[k] = [g, 0.0, -g, 1.0, -2.0 * p.real, abs(p) ** 2]
    return FilterRealization(sections, fs)


def apply_filter(filt: FilterRealization, record: SessionRecord) -> SessionRecord:
    """Causal single pass over every channel, starting from zero state."""
    if record.sample_rate_hz != filt.sample_rate_hz:
        raise ConfigError(
            f"filter designed for {filt.sample_rate_hz} Hz, record is {record.sample_rate_hz} Hz"
        )
    out = signal.sosfilt(np.array(filt.sections), record.samples, axis=0)
    if not np.all(np.isfinite(out)):
        raise UnstableFilterError(
            f"non-finite filter output for user {record.user_id}, session {record.session_id}"
        )
    return record.with_samples(out)


@dataclass(frozen=True)
class WindowSpec:
    window_len_samples: int = 125
    hop_samples: int = 63

    def __post_init__(self):
        if self.window_len_samples < 1 or self.hop_samples < 1:
            raise ConfigError("window length and hop must be positive")
        if self.hop_samples > self.window_len_samples:
            raise ConfigError("hop_samples must not exceed window_len_samples")

    @classmethod
    def from_ms(cls, window_ms: float, sample_rate_hz: float, hop_samples: int | None = None,
                overlap: float = 0.5) -> "WindowSpec":
        length = int(round(window_ms * sample_rate_hz / 1000.0))
        if hop_samples is None:
            hop_samples = int(math.ceil(length * (1.0 - overlap)))
        return cls(length, hop_samples)


def count_windows(n_samples: int, window_len: int, hop: int) -> int:
    if n_samples < window_len:
        return 0
    return (n_samples - window_len) // hop + 1


@dataclass(frozen=True, eq=False)
class WindowedSession:
    user_id: int
    session_id: int
    windows: np.ndarray  # (n_windows, window_len, channels)
    starts: np.ndarray
    channels: tuple[str, ...]

    def __len__(self):
        return self.windows.shape[0]


def segment_windows(record: SessionRecord, spec: WindowSpec) -> WindowedSession:
    """Windows start at 0, hop, 2*hop, ... and never run past the end of the session."""
    x = record.samples
    n = count_windows(x.shape[0], spec.window_len_samples, spec.hop_samples)
    starts = np.arange(n, dtype=np.int64) * spec.hop_samples
    if n == 0:
        windows = np.empty((0, spec.window_len_samples, x.shape[1]))
    else:
        view = sliding_window_view(x, spec.window_len_samples, axis=0)
        windows = view[starts].transpose(0, 2, 1)
    return WindowedSession(record.user_id, record.session_id, windows, starts,
                           record.channels.labels)
