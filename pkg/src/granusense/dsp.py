"""Exponential smoothing and FFT fundamental-frequency estimation."""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import signal


class NoSpectralPeak(ValueError):
    pass


class CSVParseError(ValueError):
    def __init__(self, path, line, message):
        super().__init__(f"{path}:{line}: {message}")
        self.path = path
        self.line = line


@dataclass
class TimeSeries:
    sample_rate: float
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.sample_rate <= 0:
            raise ValueError(f"sample_rate must be > 0, got {self.sample_rate}")
        if self.values.ndim != 1 or len(self.values) < 1:
            raise ValueError("a time series needs at least one sample")

    def __len__(self):
        return len(self.values)

    @property
    def times(self) -> np.ndarray:
        return np.arange(len(self.values)) / self.sample_rate


def exp_filter(x: TimeSeries, alpha: float) -> TimeSeries:
    """Causal single-pass exponential smoothing seeded with the first sample.

    y[0] = x[0]; y[t] = alpha * x[t] + (1 - alpha) * y[t-1]
    """
    if not 0 < alpha <= 1:
        raise ValueError(f"alpha must lie in (0, 1], got {alpha}")
    v = x.values
    zi = np.array([(1.0 - alpha) * v[0]])
    y, _ = signal.lfilter([alpha], [1.0, -(1.0 - alpha)], v, zi=zi)
    return TimeSeries(x.sample_rate, y)


def magnitude_spectrum(values, sample_rate: float):
    """Hann-windowed one-sided magnitude spectrum of the mean-removed signal.

    Returns (frequencies, magnitudes).
    """
    v = np.asarray(values, dtype=float)
    v = v - v.mean()
    window = np.hanning(len(v)) if len(v) > 2 else np.ones(len(v))
    mags = np.abs(np.fft.rfft(v * window))
    freqs = np.fft.rfftfreq(len(v), d=1.0 / sample_rate)
    return freqs, mags


def parseval_error(values) -> float:
    """Relative mismatch between time- and frequency-domain energy of the FFT."""
    v = np.asarray(values, dtype=float)
    power = np.abs(np.fft.rfft(v)) ** 2
    # one-sided bins stand in for their negative-frequency mirrors
    weights = np.full(len(power), 2.0)
    weights[0] = 1.0
    if len(v) % 2 == 0:
        weights[-1] = 1.0
    time_energy = np.sum(v * v)
    freq_energy = np.sum(weights * power) / len(v)
    if time_energy == 0:
        return float(freq_energy)
    return float(abs(time_energy - freq_energy) / time_energy)


def _spectral_peak(x: TimeSeries):
    """(refined bin position, magnitude of the peak bin) of the strongest non-DC line."""
    if len(x) < 2:
        raise ValueError("need at least two samples")
    _, mags = magnitude_spectrum(x.values, x.sample_rate)
    mags[0] = 0.0
    peak = int(np.argmax(mags))
    if mags[peak] <= 1e-12 * max(1.0, np.abs(x.values).max()) * len(x):
        raise NoSpectralPeak("no spectral peak: signal has no non-DC content")
    offset = 0.0
    if 0 < peak < len(mags) - 1 and mags[peak - 1] > 0 and mags[peak + 1] > 0:
        a, b, c = np.log(mags[peak - 1: peak + 2])
        denom = a - 2 * b + c
        if denom < 0:
            offset = 0.5 * (a - c) / denom
    return peak + offset, float(mags[peak])


def fundamental_frequency(x: TimeSeries) -> float:
    """Frequency of the strongest non-DC spectral line, in Hz.

    The peak bin of the Hann-windowed spectrum is refined by fitting a
    parabola through the log magnitudes of the peak and its two neighbours.
    The mean is removed first so a gravity offset cannot leak into the
    lowest bins.
    """
    position, _ = _spectral_peak(x)
    f = position * x.sample_rate / len(x)
    return float(min(max(f, 0.0), x.sample_rate / 2))


def _hann_gain(delta: float) -> float:
    # main-lobe response of the Hann window, normalised to 1 at delta = 0
    if abs(abs(delta) - 1.0) < 1e-9:
        return 0.5
    return float(np.sinc(delta) / (1.0 - delta * delta))


def tone_amplitude(x: TimeSeries) -> float:
    """Amplitude of the dominant sinusoid.

    The peak-bin magnitude is divided by the window's coherent gain and by
    the Hann main-lobe loss at the interpolated offset of the true tone.
    """
    position, height = _spectral_peak(x)
    n = len(x)
    if n <= 2:
        return float(2.0 * height / n)
    delta = position - round(position)
    return float(2.0 * height / (np.hanning(n).sum() * _hann_gain(delta)))


def mean_fundamental(trials) -> float:
    trials = list(trials)
    if not trials:
        raise ValueError("need at least one trial")
    return float(np.mean([fundamental_frequency(t) for t in trials]))


def write_series_csv(path, x: TimeSeries, digits: int | None = None):
    """Write ``t,value`` rows; ``digits`` rounds to that many significant digits."""
    def fmt(v):
        return repr(float(v)) if digits is None else f"{v:.{digits}g}"

    lines = [f"# sample_rate_hz: {float(x.sample_rate)!r}", "t,value"]
    lines += [f"{fmt(t)},{fmt(v)}" for t, v in zip(x.times, x.values)]
    Path(path).write_text("\n".join(lines) + "\n")


def read_series_csv(path) -> TimeSeries:
    """Parse a ``t,value`` CSV with an optional ``# sample_rate_hz:`` comment.

    Without the comment the rate is inferred from the median time step.
    """
    rate = None
    times, values = [], []
    header_seen = False
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#"):
                key, _, val = line[1:].partition(":")
                if key.strip() == "sample_rate_hz":
                    try:
                        rate = float(val)
                    except ValueError:
                        raise CSVParseError(path, lineno, f"bad sample rate {val.strip()!r}") from None
                continue
            if not header_seen:
                if [c.strip() for c in line.split(",")] != ["t", "value"]:
                    raise CSVParseError(path, lineno, f"expected header 't,value', got {line!r}")
                header_seen = True
                continue
            parts = line.split(",")
            if len(parts) != 2:
                raise CSVParseError(path, lineno, f"expected 2 fields, got {len(parts)}")
            try:
                t, v = float(parts[0]), float(parts[1])
            except ValueError:
                raise CSVParseError(path, lineno, f"non-numeric field in {line!r}") from None
            if not (math.isfinite(t) and math.isfinite(v)):
                raise CSVParseError(path, lineno, "non-finite value")
            times.append(t)
            values.append(v)
    if not values:
        raise CSVParseError(path, 0, "no samples")
    if rate is None:
        if len(times) < 2:
            raise CSVParseError(path, 0, "cannot infer sample rate from a single sample")
        step = float(np.median(np.diff(times)))
        if step <= 0:
            raise CSVParseError(path, 0, "time column is not increasing")
        rate = 1.0 / step
    return TimeSeries(rate, np.asarray(values))
