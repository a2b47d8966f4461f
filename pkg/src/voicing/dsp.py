"""Core DSP primitives: windows, transforms, correlation, all-pole filtering."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.signal import lfilter


class UnstableFilterError(ValueError):
    """All-pole coefficient set has poles on or outside the unit circle."""


@dataclass
class AudioBuffer:
    """Mono sampled signal plus sample rate and source bit-depth metadata.

    Samples are float64, nominally in [-1, 1].
    """

    samples: np.ndarray
    sample_rate: int
    source_bit_depth: int = 16

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise ValueError("AudioBuffer expects a 1-D sample array")
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be positive")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("samples must be finite (no NaN/Inf)")

    def __len__(self):
        return self.samples.size

    @property
    def duration(self) -> float:
        """Length in seconds."""
        return self.samples.size / self.sample_rate


def make_sqrt_shifted_hanning(n: int) -> np.ndarray:
    """Square root of a half-sample-shifted Hanning window.

    w[i] = sin(pi * (i + 0.5) / n).  Power-complementary at 50% overlap:
    w[i]**2 + w[i + n//2]**2 == 1, which makes windowed overlap-add with
    hop n/2 an identity when the window is applied at analysis and again
    at synthesis.

    Args:
        n: window length in samples, even, >= 4.
    """
    if n % 2 != 0 or n < 4:
        raise ValueError(f"window length must be even and >= 4, got {n}")
    return np.sin(np.pi * (np.arange(n) + 0.5) / n)


def dft(x: np.ndarray) -> np.ndarray:
    """Plain DFT, X[k] = sum_n x[n] exp(-2j pi k n / P).

    Accepts any length; FFT-based (O(P log P) even for prime P).
    """
    x = np.asarray(x, dtype=np.float64)
    if x.size < 1:
        raise ValueError("dft input must be non-empty")
    return np.fft.fft(x)


def odft(x: np.ndarray) -> np.ndarray:
    """Odd-frequency DFT: bins at half-integer frequencies (k + 0.5).

    X[k] = sum_n x[n] exp(-2j pi (k + 0.5) n / N).  For real input,
    X[N-1-k] = conj(X[k]): the lower half of the spectrum carries all
    information and no bin is self-conjugate.
    """
    x = np.asarray(x, dtype=np.float64)
    n = x.size
    if n < 2 or n % 2 != 0:
        raise ValueError(f"odft length must be even and >= 2, got {n}")
    pre = np.exp(-1j * np.pi * np.arange(n) / n)
    return np.fft.fft(x * pre)


def inverse_odft(spectrum: np.ndarray) -> np.ndarray:
    """Inverse of :func:`odft`.  Returns a complex array; real inputs to
    the forward transform reconstruct with negligible imaginary part."""
    spectrum = np.asarray(spectrum, dtype=np.complex128)
    n = spectrum.size
    if n < 2 or n % 2 != 0:
        raise ValueError(f"inverse_odft length must be even and >= 2, got {n}")
    post = np.exp(1j * np.pi * np.arange(n) / n)
    return np.fft.ifft(spectrum) * post


def _sine_ratio(theta: np.ndarray, count: int) -> np.ndarray:
    """sin(count * theta) / sin(theta), with the analytic limit
    count * (-1)**(m * (count - 1)) substituted where theta -> m * pi."""
    theta = np.atleast_1d(np.asarray(theta, dtype=np.float64))
    m = np.round(theta / np.pi)
    singular = np.abs(theta - m * np.pi) < 1e-9
    out = np.empty_like(theta)
    safe = ~singular
    out[safe] = np.sin(count * theta[safe]) / np.sin(theta[safe])
    sign = np.where((m[singular].astype(np.int64) * (count - 1)) % 2 == 0, 1.0, -1.0)
    out[singular] = count * sign
    return out


def closed_form_sine_dft(amplitude: float, harmonic: int, phase: float, period: int) -> np.ndarray:
    """Closed-form P-point DFT of one sampled harmonic sinusoid.

    The time signal is A * sin((harmonic + 1) * (2 pi / P) * n + phase) for
    n = 0..P-1.  Each bin is the sum of two Dirichlet-kernel terms (the
    positive- and negative-frequency images); the removable singularities
    at k = harmonic + 1 and k = P - harmonic - 1 are handled by exact
    limit substitution, so the result matches the numeric DFT to rounding
    precision.

    Args:
        amplitude: linear amplitude A.
        harmonic: harmonic index (0 means the fundamental, bin 1).
        phase: starting phase in radians.
        period: transform length P in samples, >= 2.
    """
    p = int(period)
    ell1 = int(harmonic) + 1
    if p < 2:
        raise ValueError(f"period must be >= 2, got {period}")
    if harmonic < 0 or ell1 >= p:
        raise ValueError(f"harmonic {harmonic} out of range for period {period}")

    k = np.arange(p)
    diff = ell1 - k
    summ = ell1 + k
    alpha = np.pi * diff / p
    beta = np.pi * summ / p
    theta = phase - np.pi / 2 + np.pi * (1.0 - 1.0 / p) * diff
    gamma = -phase + np.pi / 2 - np.pi * (1.0 - 1.0 / p) * summ

    # Singular bins are known exactly from the integer indices.
    ratio_a = np.empty(p)
    ratio_b = np.empty(p)
    sing_a = diff == 0
    sing_b = summ == p
    ratio_a[~sing_a] = np.sin(alpha[~sing_a] * p) / np.sin(alpha[~sing_a])
    ratio_a[sing_a] = p
    ratio_b[~sing_b] = np.sin(beta[~sing_b] * p) / np.sin(beta[~sing_b])
    ratio_b[sing_b] = p if (p - 1) % 2 == 0 else -p

    half = amplitude / 2.0
    return half * ratio_a * np.exp(1j * theta) + half * ratio_b * np.exp(1j * gamma)


def sine_window_spectrum(n: int, nu) -> np.ndarray:
    """Discrete-time Fourier transform of the length-n sine window.

    W(nu) = sum_i sin(pi (i + 0.5) / n) * exp(-1j nu i), evaluated in
    closed form from two geometric sums.  `nu` is in radians per sample;
    scalar or array.
    """
    nu = np.atleast_1d(np.asarray(nu, dtype=np.float64))

    def geom(theta):
        # sum_{i=0}^{n-1} exp(1j * theta * i)
        return np.exp(1j * theta * (n - 1) / 2.0) * _sine_ratio(theta / 2.0, n)

    w0 = np.pi / n
    out = (np.exp(1j * w0 / 2.0) * geom(w0 - nu) - np.exp(-1j * w0 / 2.0) * geom(-w0 - nu)) / 2j
    return out


def cross_correlate(template, signal, shifts, normalized: bool = False) -> np.ndarray:
    """Sliding dot product of `template` against `signal`.

    r[S] = sum_n template[n] * signal[n + S] for each S in `shifts`.
    With `normalized=True` each value is divided by the product of the
    template norm and the norm of the shifted signal window (cosine
    similarity), useful where the amplitude varies along the signal.

    Raises ValueError when any shifted window falls outside the signal.
    """
    template = np.asarray(template, dtype=np.float64)
    signal = np.asarray(signal, dtype=np.float64)
    shifts = np.asarray(list(shifts) if not isinstance(shifts, np.ndarray) else shifts, dtype=np.int64)
    t = template.size
    if t < 2:
        raise ValueError("template must have at least 2 samples")
    if shifts.size == 0:
        return np.zeros(0)
    lo, hi = int(shifts.min()), int(shifts.max())
    if lo < 0 or hi + t > signal.size:
        raise ValueError(
            f"shift range [{lo}, {hi}] places windows outside the signal "
            f"(signal length {signal.size}, template length {t})"
        )
    contiguous = shifts.size == hi - lo + 1 and np.all(np.diff(shifts) == 1)
    if contiguous:
        r = np.correlate(signal[lo : hi + t], template, mode="valid")
    else:
        r = np.array([np.dot(template, signal[s : s + t]) for s in shifts])
    if normalized:
        tn = np.linalg.norm(template)
        sq = np.concatenate([[0.0], np.cumsum(signal**2)])
        if contiguous:
            win = np.sqrt(sq[lo + t : hi + t + 1] - sq[lo : hi + 1])
        else:
            win = np.sqrt(sq[shifts + t] - sq[shifts])
        denom = tn * win
        r = np.where(denom > 0, r / np.where(denom > 0, denom, 1.0), 0.0)
    return r


def pole_radii(coefficients) -> np.ndarray:
    """Pole magnitudes of the all-pole filter 1 / (1 + sum a_i z^-i)."""
    a = np.asarray(coefficients, dtype=np.float64)
    if a.size == 0:
        return np.zeros(0)
    return np.abs(np.roots(np.concatenate([[1.0], a])))


def stabilize_all_pole(coefficients, max_radius: float = 0.995) -> np.ndarray:
    """Shrink any pole with radius above `max_radius` onto that radius.

    Returns the (possibly unchanged) coefficient array a_1..a_p of the
    monic denominator.
    """
    a = np.asarray(coefficients, dtype=np.float64)
    if a.size == 0:
        return a.copy()
    roots = np.roots(np.concatenate([[1.0], a]))
    mags = np.abs(roots)
    if np.all(mags <= max_radius):
        return a.copy()
    scaled = np.where(mags > max_radius, roots * (max_radius / np.where(mags > 0, mags, 1.0)), roots)
    poly = np.poly(scaled)
    return np.real(poly[1:])


def all_pole_filter(excitation, lpc_coeffs, gain: float = 1.0) -> np.ndarray:
    """Filter `excitation` through y[n] = gain*x[n] - sum_i a_i y[n-i].

    Zero initial state.  The coefficient set must describe a stable
    filter (all poles strictly inside the unit circle); otherwise
    UnstableFilterError is raised.
    """
    x = np.asarray(excitation, dtype=np.float64)
    a = np.asarray(lpc_coeffs, dtype=np.float64)
    if a.size:
        radii = pole_radii(a)
        if radii.size and radii.max() >= 1.0:
            raise UnstableFilterError(
                f"unstable all-pole filter: max pole radius {radii.max():.6f} >= 1"
            )
    return lfilter([float(gain)], np.concatenate([[1.0], a]), x)
