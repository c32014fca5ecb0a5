"""Pulse, windowed transform pair, envelope, and timing tests."""

import numpy as np
import pytest

from guwinv.dual import Dual, value
from guwinv.signal import (TimeGrid, TimeSignal, EnvelopeSignal,
                           excitation_pulse, ewm_forward, ewm_inverse,
                           envelope, time_of_flight, add_noise)
from guwinv.errors import AliasedPulse, OverflowGuard, NoDistinctMaximum

GRID = TimeGrid()           # 1 us, 4096 samples
F_C = 200e3
T_C = 5.0 / F_C


def test_grid_validation():
    with pytest.raises(ValueError):
        TimeGrid(dt=-1e-6)
    with pytest.raises(ValueError):
        TimeGrid(n=1000)    # not a power of two
    assert GRID.nyquist == pytest.approx(500e3)
    assert GRID.default_eta == pytest.approx(0.5 * 2 * np.pi / (4096 * 1e-6))


def test_signal_validation():
    with pytest.raises(ValueError):
        TimeSignal(GRID, np.zeros(7))
    bad = np.zeros(GRID.n)
    bad[3] = np.nan
    with pytest.raises(ValueError):
        TimeSignal(GRID, bad)


def test_pulse_zero_at_center():
    x = excitation_pulse(GRID).samples
    i_c = int(round(T_C / GRID.dt))
    assert abs(x[i_c]) < 1e-12


def test_pulse_quarter_period_value():
    # a quarter carrier period after the center the bell gives exp(-1/32)
    grid = TimeGrid(dt=0.25e-6)
    x = excitation_pulse(grid).samples
    i = int(round((T_C + 1.0 / (4 * F_C)) / grid.dt))
    assert x[i] == pytest.approx(np.exp(-1.0 / 32.0), rel=1e-12)


def test_pulse_spectrum_peaks_at_carrier():
    x = excitation_pulse(GRID).samples
    mag = np.abs(np.fft.rfft(x))
    f_peak = np.argmax(mag) / (GRID.n * GRID.dt)
    assert abs(f_peak - F_C) <= 0.05 * F_C


def test_pulse_aliasing_guard():
    with pytest.raises(AliasedPulse):
        excitation_pulse(GRID, f_c=250e3)
    with pytest.raises(ValueError):
        excitation_pulse(GRID, t_c=5.0)    # outside the grid span


def test_forward_zero_signal():
    spec = ewm_forward(TimeSignal(GRID, np.zeros(GRID.n)))
    assert np.all(value(spec.coeffs) == 0)
    assert not spec.freq.relevant.any()


def test_forward_pure_tone_no_window():
    m = 100
    tone = np.sin(2 * np.pi * m * np.arange(GRID.n) / GRID.n)
    spec = ewm_forward(TimeSignal(GRID, tone), eta=0.0)
    assert np.flatnonzero(spec.freq.relevant).tolist() == [m]


def test_forward_relevant_band_contiguous():
    spec = ewm_forward(excitation_pulse(GRID))
    idx = np.flatnonzero(spec.freq.relevant)
    assert np.all(np.diff(idx) == 1)
    assert idx[0] <= round(F_C * GRID.n * GRID.dt) <= idx[-1]


def test_round_trip_full_mask():
    rng = np.random.default_rng(7)
    c = np.zeros(GRID.n // 2 + 1, complex)
    c[5:400] = rng.normal(size=395) + 1j * rng.normal(size=395)
    x = np.fft.irfft(c, GRID.n)
    sig = TimeSignal(GRID, x)
    back = ewm_inverse(ewm_forward(sig, threshold=0.0))
    assert np.abs(back.samples - x).max() < 1e-10 * np.abs(x).max()


def test_round_trip_truncated_band():
    sig = excitation_pulse(GRID)
    back = ewm_inverse(ewm_forward(sig))     # default 1e-3 relevance cut
    assert np.abs(back.samples - sig.samples).max() < 1e-2 * sig.peak


def test_zero_eta_is_plain_fft_pair():
    sig = excitation_pulse(GRID)
    spec = ewm_forward(sig, eta=0.0, threshold=0.0)
    assert np.allclose(value(spec.coeffs), np.fft.rfft(sig.samples))
    back = ewm_inverse(spec)
    assert np.abs(back.samples - sig.samples).max() < 1e-12


def test_inverse_overflow_guard():
    sig = excitation_pulse(GRID)
    spec = ewm_forward(sig, eta=1e4)
    with pytest.raises(OverflowGuard):
        ewm_inverse(spec)


def test_envelope_of_tone():
    amp = 2.5
    tone = amp * np.sin(2 * np.pi * 50e3 * GRID.times)
    env = envelope(TimeSignal(GRID, tone)).samples
    inner = slice(GRID.n // 20, -GRID.n // 20)
    assert np.all(np.abs(env[inner] - amp) < 0.02 * amp)
    assert env.min() >= 0


def test_envelope_sign_invariance():
    x = excitation_pulse(GRID).samples
    e1 = envelope(TimeSignal(GRID, x)).samples
    e2 = envelope(TimeSignal(GRID, -x)).samples
    assert np.allclose(e1, e2)


def test_envelope_recovers_gaussian_bell():
    sig = excitation_pulse(GRID)
    env = envelope(sig).samples
    bell = np.exp(-((GRID.times - T_C) ** 2) * F_C**2 / 2.0)
    core = bell > 0.05
    assert np.all(np.abs(env[core] - bell[core]) < 0.02)


def test_envelope_type():
    assert isinstance(envelope(excitation_pulse(GRID)), EnvelopeSignal)


def test_envelope_tangent_matches_fd():
    x = excitation_pulse(GRID).samples
    rng = np.random.default_rng(3)
    y = rng.normal(size=GRID.n) * 0.05
    env = envelope(TimeSignal(GRID, Dual(x, y[None, :]))).samples
    h = 1e-7
    fd = (value(envelope(TimeSignal(GRID, x + h * y)).samples)
          - value(envelope(TimeSignal(GRID, x - h * y)).samples)) / (2 * h)
    mask = env.val > 1e-6 * env.val.max()
    num = np.abs(env.tan[0][mask] - fd[mask]).max()
    assert num < 1e-5 * np.abs(fd).max()


def test_envelope_tangent_guarded_at_zero():
    env = envelope(TimeSignal(GRID, Dual(np.zeros(GRID.n),
                                         np.ones((1, GRID.n)))))
    assert np.all(env.samples.tan == 0)


T_EX = T_C + 4.0 / F_C


def two_pulse_signal(delay, ratio=0.3):
    base = excitation_pulse(GRID).samples
    shift = int(round(delay / GRID.dt))
    echo = np.roll(base, shift) * ratio
    echo[:shift] = 0.0
    return TimeSignal(GRID, base + echo)


def test_time_of_flight_two_pulses():
    delay = 600e-6
    t = time_of_flight(two_pulse_signal(delay), T_EX)
    assert abs(t - delay) <= 2 * GRID.dt


def test_time_of_flight_needs_reflection():
    x = np.where(GRID.times < T_EX, excitation_pulse(GRID).samples, 0.0)
    with pytest.raises(NoDistinctMaximum):
        time_of_flight(TimeSignal(GRID, x), T_EX)


def test_time_of_flight_shift_covariance():
    delay = 600e-6
    sig = two_pulse_signal(delay)
    t0 = time_of_flight(sig, T_EX)
    s = 12
    shifted = np.roll(sig.samples, s)
    shifted[:s] = 0.0
    t1 = time_of_flight(TimeSignal(GRID, shifted), T_EX + s * GRID.dt)
    assert abs(t1 - t0) <= 2 * GRID.dt


def test_noise_zero_level_identity():
    sig = excitation_pulse(GRID)
    out = add_noise(sig, 0.0, seed=1)
    assert np.array_equal(out.samples, sig.samples)


def test_noise_scale_and_determinism():
    big = TimeGrid(dt=1e-6, n=2**20)
    x = np.zeros(big.n)
    x[0] = 2.0                       # excitation peak 2.0 before t_ex
    sig = TimeSignal(big, x)
    level = 0.03
    out = add_noise(sig, level, seed=42, t_ex=10e-6)
    noise = out.samples - x
    assert abs(noise.std() - level * 2.0) < 0.01 * level * 2.0
    assert abs(noise.mean()) < 3 * level * 2.0 / np.sqrt(big.n)
    again = add_noise(sig, level, seed=42, t_ex=10e-6)
    assert np.array_equal(out.samples, again.samples)
    other = add_noise(sig, level, seed=43, t_ex=10e-6)
    assert not np.array_equal(out.samples, other.samples)
