"""Time-domain side of the pipeline.

Pulse synthesis, the exponentially windowed transform pair that turns a
damped frequency sweep into a causal time trace, Hilbert envelopes, and the
correlation-based arrival-time estimate used to initialize reconstructions.
"""

import numpy as np
from dataclasses import dataclass, field

from .dual import Dual, is_dual, value
from .errors import AliasedPulse, OverflowGuard, NoDistinctMaximum

__all__ = [
    "TimeGrid", "TimeSignal", "EnvelopeSignal", "ComplexFrequencyGrid",
    "EwmSpectrum", "excitation_pulse", "ewm_forward", "ewm_inverse",
    "envelope", "time_of_flight", "add_noise",
    "RELEVANCE_THRESHOLD", "ENVELOPE_GUARD",
]

RELEVANCE_THRESHOLD = 1e-3

# below this fraction of the envelope peak the magnitude derivative is
# numerically meaningless (|.| is not smooth at zero), so tangents are zeroed
ENVELOPE_GUARD = 1e-12

# largest window exponent before the inverse window amplifies tail noise
# beyond any useful dynamic range (e^40 ~ 2e17, the double-precision span)
MAX_WINDOW_EXPONENT = 40.0


@dataclass(frozen=True)
class TimeGrid:
    """Uniform sampling grid, fixed length, power-of-two size."""

    dt: float = 1e-6
    n: int = 4096

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.n < 2 or (self.n & (self.n - 1)) != 0:
            raise ValueError("sample count must be a power of two")

    @property
    def times(self):
        return np.arange(self.n) * self.dt

    @property
    def span(self) -> float:
        return (self.n - 1) * self.dt

    @property
    def omega_step(self) -> float:
        return 2.0 * np.pi / (self.n * self.dt)

    @property
    def nyquist(self) -> float:
        return 0.5 / self.dt

    @property
    def default_eta(self) -> float:
        return 0.5 * self.omega_step


@dataclass
class TimeSignal:
    """Real samples on a TimeGrid; samples may carry Dual tangents."""

    grid: TimeGrid
    samples: object

    def __post_init__(self):
        v = value(self.samples)
        if v.shape != (self.grid.n,):
            raise ValueError("sample count does not match the grid")
        if not np.all(np.isfinite(v)):
            raise ValueError("signal contains non-finite samples")

    @property
    def peak(self) -> float:
        return float(np.abs(value(self.samples)).max())


class EnvelopeSignal(TimeSignal):
    """A nonnegative magnitude trace (same layout as TimeSignal)."""


@dataclass(frozen=True)
class ComplexFrequencyGrid:
    """The damped frequencies omega_n = n*omega_step - i*eta, n = 0..N/2.

    relevant marks the bins whose excitation content is worth solving for;
    everything else is treated as zero downstream.
    """

    grid: TimeGrid
    eta: float
    relevant: np.ndarray

    @property
    def n_bins(self) -> int:
        return self.grid.n // 2 + 1

    @property
    def omegas(self):
        return np.arange(self.n_bins) * self.grid.omega_step - 1j * self.eta

    @property
    def relevant_omegas(self):
        return self.omegas[self.relevant]


@dataclass
class EwmSpectrum:
    """Windowed-transform coefficients on a ComplexFrequencyGrid."""

    freq: ComplexFrequencyGrid
    coeffs: object


def excitation_pulse(grid: TimeGrid, f_c: float = 200e3,
                     t_c: float = None) -> TimeSignal:
    """Sine carrier under a Gaussian bell: sin(2 pi f_c t) exp(-(t-t_c)^2 f_c^2 / 2)."""
    if t_c is None:
        t_c = 5.0 / f_c
    if f_c >= 0.5 * grid.nyquist:
        raise AliasedPulse(
            f"carrier {f_c:.3g} Hz too close to the Nyquist rate "
            f"{grid.nyquist:.3g} Hz")
    if not 0.0 <= t_c <= grid.span:
        raise ValueError("pulse center lies outside the time grid")
    t = grid.times
    x = np.sin(2 * np.pi * f_c * t) * np.exp(-((t - t_c) ** 2) * f_c**2 / 2.0)
    return TimeSignal(grid, x)


def _rfft(x):
    if is_dual(x):
        return Dual(np.fft.rfft(x.val), np.fft.rfft(x.tan, axis=-1))
    return np.fft.rfft(x)


def _irfft(c, n):
    if is_dual(c):
        return Dual(np.fft.irfft(c.val, n), np.fft.irfft(c.tan, n, axis=-1))
    return np.fft.irfft(c, n)


def _fft(x):
    if is_dual(x):
        return Dual(np.fft.fft(x.val), np.fft.fft(x.tan, axis=-1))
    return np.fft.fft(x)


def ewm_forward(signal: TimeSignal, eta: float = None,
                threshold: float = RELEVANCE_THRESHOLD) -> EwmSpectrum:
    """Damp the signal with exp(-eta t), transform, flag the relevant bins."""
    grid = signal.grid
    if eta is None:
        eta = grid.default_eta
    windowed = signal.samples * np.exp(-eta * grid.times)
    coeffs = _rfft(windowed)
    mag = np.abs(value(coeffs))
    peak = mag.max()
    relevant = mag >= threshold * peak if peak > 0 else np.zeros_like(mag, bool)
    return EwmSpectrum(ComplexFrequencyGrid(grid, eta, relevant), coeffs)


def ewm_inverse(spectrum: EwmSpectrum) -> TimeSignal:
    """Inverse transform, then undo the damping window.

    Bins outside the relevant set are zeroed; the caller only ever has to
    supply coefficients where the mask is true.
    """
    freq = spectrum.freq
    grid = freq.grid
    if freq.eta * grid.span > MAX_WINDOW_EXPONENT:
        raise OverflowGuard(
            f"window exponent eta*t_max = {freq.eta * grid.span:.1f} "
            f"exceeds {MAX_WINDOW_EXPONENT:.0f}; shrink eta or the grid")
    coeffs = spectrum.coeffs * np.where(freq.relevant, 1.0, 0.0)
    x = _irfft(coeffs, grid.n) * np.exp(freq.eta * grid.times)
    return TimeSignal(grid, x)


def envelope(signal: TimeSignal) -> EnvelopeSignal:
    """Magnitude of the analytic signal (frequency-domain Hilbert pair).

    Where the magnitude vanishes the derivative of |.| is undefined; tangents
    are zeroed below ENVELOPE_GUARD times the peak.
    """
    n = signal.grid.n
    h = np.zeros(n)
    h[0] = 1.0
    h[1:n // 2] = 2.0
    h[n // 2] = 1.0
    analytic = _ifft(_fft(signal.samples) * h)
    av = value(analytic)
    env = np.abs(av)
    if not is_dual(analytic):
        return EnvelopeSignal(signal.grid, env)
    guard = env > ENVELOPE_GUARD * max(env.max(), 1e-300)
    safe = np.where(guard, env, 1.0)
    tan = (av.real * analytic.tan.real + av.imag * analytic.tan.imag) / safe
    tan = np.where(guard, tan, 0.0)
    return EnvelopeSignal(signal.grid, Dual(env, tan))


def _ifft(c):
    if is_dual(c):
        return Dual(np.fft.ifft(c.val), np.fft.ifft(c.tan, axis=-1))
    return np.fft.ifft(c)


def time_of_flight(signal: TimeSignal, t_ex: float) -> float:
    """Delay between the excitation part (t < t_ex) and the later reflections.

    The two parts are cross-correlated over nonnegative lags, the envelope of
    the correlation is scanned for its peak, and the peak lag is returned.
    Not differentiable by design; it only seeds the reconstruction.
    """
    x = value(signal.samples)
    t = signal.grid.times
    head = np.where(t < t_ex, x, 0.0)
    tail = np.where(t >= t_ex, x, 0.0)
    n = signal.grid.n
    # zero-padded linear correlation, nonnegative lags only
    ch = np.fft.rfft(head, 2 * n)
    ct = np.fft.rfft(tail, 2 * n)
    corr = np.fft.irfft(np.conj(ch) * ct, 2 * n)[:n]
    r = value(envelope(TimeSignal(signal.grid, corr)).samples)
    peak = r.max()
    if peak <= 0.0 or peak < 3.0 * np.median(r):
        raise NoDistinctMaximum(
            "correlation envelope has no dominant peak; reflection absent "
            "or buried")
    return float(np.argmax(r) * signal.grid.dt)


def add_noise(signal: TimeSignal, level: float, seed: int,
              t_ex: float = None) -> TimeSignal:
    """Add white Gaussian noise scaled to the excitation peak.

    The reference amplitude is the largest magnitude before t_ex (the whole
    trace when t_ex is None).  Deterministic for a fixed seed.
    """
    if level < 0:
        raise ValueError("noise level must be nonnegative")
    x = value(signal.samples)
    if t_ex is None:
        ref = np.abs(x).max()
    else:
        ref = np.abs(np.where(signal.grid.times < t_ex, x, 0.0)).max()
    if level == 0:
        return TimeSignal(signal.grid, signal.samples)
    rng = np.random.default_rng(seed)
    noise = rng.normal(0.0, level * ref, signal.grid.n)
    return TimeSignal(signal.grid, signal.samples + noise)
