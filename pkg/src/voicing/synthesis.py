"""Synthetic-voicing engines.

Three engines consume the same per-frame parameter stream:

* ``synth_fre`` -- frequency-domain: per frame, each harmonic is written
  into 9 ODFT bins through the analysis window's frequency response, the
  frame is inverted, windowed, and overlap-added at 50%.
* ``synth_tim`` -- combined domain: pitch periods are synthesized one at
  a time by additive synthesis and concatenated at cumulative offsets
  with a short circular-extension crossfade.
* ``synth_glo`` -- physiological: each period is a Liljencrants-Fant
  glottal-flow-derivative pulse filtered by a per-period all-pole vocal
  tract model (tilt-compensated), truncated at three periods and
  overlap-added.  No explicit harmonic phase model is consumed.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from .analysis import (
    FrameParams,
    LpcModel,
    analyze_frames,
    fit_lpc_envelope,
    harmonic_amplitudes,
    interpolate_params,
)
from .dsp import (
    AudioBuffer,
    UnstableFilterError,
    all_pole_filter,
    dft,
    inverse_odft,
    make_sqrt_shifted_hanning,
    sine_window_spectrum,
    stabilize_all_pole,
)
from .segmentation import harmonic_count

TWO_PI = 2.0 * np.pi


@dataclass(frozen=True)
class LfParams:
    """Liljencrants-Fant shape constants for one glottal pulse.

    open_quotient: open-phase fraction of the period (te/T0).
    asymmetry: position of the flow peak within the open phase (tp/te).
    return_quotient: exponential return-phase time constant over T0.
    """

    open_quotient: float = 0.6
    asymmetry: float = 2.0 / 3.0
    return_quotient: float = 0.02

    def validate(self):
        if not 0.0 < self.open_quotient < 1.0:
            raise ValueError(f"open_quotient {self.open_quotient} outside (0, 1)")
        if not 0.5 < self.asymmetry < 1.0:
            raise ValueError(f"asymmetry {self.asymmetry} outside (0.5, 1)")
        if not 1e-6 <= self.return_quotient < 1.0 - self.open_quotient:
            raise ValueError(
                f"return_quotient {self.return_quotient} outside [1e-6, 1 - open_quotient)"
            )


@dataclass
class GlottalPulse:
    """One glottal-flow-derivative period, peak-normalized and DC-free."""

    period: int
    samples: np.ndarray
    shape_params: LfParams


@dataclass
class SynthesisPlan:
    """Frame parameters plus framing geometry for the synthesis engines."""

    frames: list[FrameParams]
    sample_rate: int
    frame_len: int = 1024
    hop: int | None = None
    total_length: int | None = None
    phi0_start: float = 0.0

    def __post_init__(self):
        if self.hop is None:
            self.hop = self.frame_len // 2
        if not self.frames:
            raise ValueError("plan needs at least one frame")
        if self.total_length is None:
            last = max(fp.frame_index for fp in self.frames)
            self.total_length = last * self.hop + self.frame_len

    def voiced_frames(self) -> list[FrameParams]:
        return [fp for fp in self.frames if fp.voiced]


# ---------------------------------------------------------------------------
# Parameter interpolation along the sample axis
# ---------------------------------------------------------------------------

class _ParamTrack:
    """Interpolates frame parameters at arbitrary sample positions.

    Frame m's parameters are anchored at its center (m*hop + N/2); between
    anchors the engines see linearly interpolated values, clamped at the
    ends, mirroring how parameters are updated at frame boundaries.
    """

    def __init__(self, plan: SynthesisPlan):
        voiced = plan.voiced_frames()
        if not voiced:
            raise ValueError("plan has no voiced frames")
        self.frames = voiced
        self.anchors = np.array(
            [fp.frame_index * plan.hop + plan.frame_len // 2 for fp in voiced], dtype=np.int64
        )

    def at(self, position: float):
        a = self.anchors
        if position <= a[0] or a.size == 1:
            fp = self.frames[0]
            return fp.omega0, harmonic_amplitudes(fp), fp.nrd.copy()
        if position >= a[-1]:
            fp = self.frames[-1]
            return fp.omega0, harmonic_amplitudes(fp), fp.nrd.copy()
        j = int(np.searchsorted(a, position, side="right")) - 1
        t = (position - a[j]) / (a[j + 1] - a[j])
        return interpolate_params(self.frames[j], self.frames[j + 1], t)


# ---------------------------------------------------------------------------
# FRE: frequency-domain overlap-add synthesis
# ---------------------------------------------------------------------------

def _inject_harmonic(spectrum, c, omega, n, half_width):
    """Add one harmonic's windowed images into the lower-half ODFT bins."""
    half = n // 2
    k_center = int(round(omega * n / TWO_PI - 0.5))
    lo = max(0, k_center - half_width)
    hi = min(half - 1, k_center + half_width)
    if hi < lo:
        return
    k = np.arange(lo, hi + 1)
    nu = TWO_PI * (k + 0.5) / n
    spectrum[k] += c * sine_window_spectrum(n, nu - omega) + np.conj(c) * sine_window_spectrum(
        n, nu + omega
    )


def synth_fre(plan: SynthesisPlan, *, bins_per_harmonic: int = 9) -> AudioBuffer:
    """Frequency-domain synthesis: harmonic bin injection, inverse ODFT,
    windowing, and 50%-overlap-add.

    Each voiced frame contributes ``bins_per_harmonic`` complex ODFT bins
    per harmonic, built from the analysis window's frequency response
    (magnitude and phase), the harmonic amplitudes implied by a0 and the
    envelope, and phases reassembled from phi0 and the NRD model.  Frames
    with a measured phi0 use it; otherwise phi0 is propagated by
    integrating omega0 across the hops.
    """
    n = plan.frame_len
    hop = plan.hop
    w = make_sqrt_shifted_hanning(n)
    half_width = bins_per_harmonic // 2
    voiced = plan.voiced_frames()
    if not voiced:
        raise ValueError("plan has no voiced frames")
    span = max(fp.frame_index for fp in plan.frames) * hop + n
    out = np.zeros(max(span, plan.total_length))

    prev_phi0 = None
    prev_omega = None
    prev_index = None
    for fp in voiced:
        if fp.phi0 is not None:
            phi0 = float(fp.phi0)
        elif prev_phi0 is None:
            phi0 = plan.phi0_start
        else:
            gap = (fp.frame_index - prev_index) * hop
            phi0 = prev_phi0 + 0.5 * (prev_omega + fp.omega0) * gap
        prev_phi0, prev_omega, prev_index = phi0, fp.omega0, fp.frame_index

        amps = harmonic_amplitudes(fp)
        count = min(amps.size, int(np.floor(0.999 * np.pi / fp.omega0)))
        if n < 3 * count:
            raise ValueError(
                f"frame {fp.frame_index}: {count} harmonics need a frame of at least "
                f"{3 * count} samples (got {n})"
            )
        ell1 = np.arange(1, count + 1)
        omega_l = ell1 * fp.omega0
        phases = TWO_PI * fp.nrd[:count] + ell1 * phi0
        c = 0.5 * amps[:count] * np.exp(1j * (phases - np.pi / 2))

        spec = np.zeros(n, dtype=np.complex128)
        for i in range(count):
            _inject_harmonic(spec, c[i], omega_l[i], n, half_width)
        spec[n // 2 :] = np.conj(spec[: n // 2][::-1])
        frame = inverse_odft(spec).real
        off = fp.frame_index * hop
        out[off : off + n] += w * frame

    return AudioBuffer(_fit_length(out, plan.total_length), plan.sample_rate)


def _fit_length(x: np.ndarray, length: int) -> np.ndarray:
    if x.size >= length:
        return x[:length].copy()
    return np.concatenate([x, np.zeros(length - x.size)])


# ---------------------------------------------------------------------------
# TIM: per-period additive synthesis with crossfaded concatenation
# ---------------------------------------------------------------------------

def _period_wave(period, amps, nrd):
    """One pitch period by additive synthesis: full-cycle harmonics, DC-free."""
    count = min(len(amps), harmonic_count(period))
    omega0 = TWO_PI / period
    n_idx = np.arange(period)
    args = np.outer(n_idx, np.arange(1, count + 1) * omega0) + TWO_PI * np.asarray(nrd[:count])
    return np.sin(args) @ np.asarray(amps[:count])


def synth_tim(plan: SynthesisPlan, *, extension: int = 4) -> AudioBuffer:
    """Combined frequency/time-domain synthesis.

    Periods are generated one at a time (length P = round(2 pi / omega0)
    from parameters interpolated at the period's own position), placed at
    cumulative offsets, and joined by circularly extending both sides of
    each junction by `extension` samples and crossfading with a
    piecewise-linear ramp over the overlap.
    """
    track = _ParamTrack(plan)
    total = plan.total_length
    ext = int(extension)
    ramp = (np.arange(1, 2 * ext + 1)) / (2 * ext + 1.0)

    position = 0
    periods = []
    while position < total:
        omega0, amps, nrd = track.at(position)
        if not omega0 > 0:
            raise ValueError(f"non-positive interpolated omega0 at sample {position}")
        period = int(round(TWO_PI / omega0))
        if period < 5:
            raise ValueError(f"interpolated period {period} too short at sample {position}")
        periods.append((position, _period_wave(period, amps, nrd)))
        position += period

    last_start, last_wave = periods[-1]
    out = np.zeros(last_start + last_wave.size + ext + 1)
    for i, (start, x_p) in enumerate(periods):
        p = x_p.size
        if i > 0:
            # fade-in over [start - ext, start + ext): circular pre-extension
            # then the first core samples
            seg = np.concatenate([x_p[p - ext :], x_p[:ext]])
            out[start - ext : start + ext] += ramp * seg
            core_lo = ext
        else:
            core_lo = 0
        if i + 1 < len(periods):
            seg = np.concatenate([x_p[p - ext :], x_p[:ext]])
            out[start + p - ext : start + p + ext] += (1.0 - ramp) * seg
            core_hi = p - ext
        else:
            core_hi = p
        out[start + core_lo : start + core_hi] += x_p[core_lo:core_hi]

    return AudioBuffer(_fit_length(out, total), plan.sample_rate)


# ---------------------------------------------------------------------------
# GLO: glottal-pulse excitation filtered per period
# ---------------------------------------------------------------------------

_LF_CACHE: dict[tuple, tuple[float, float, float]] = {}


def _lf_constants(shape: LfParams):
    """Solve the pulse constants: growth rate, return rate, and onset gain."""
    key = (shape.open_quotient, shape.asymmetry, shape.return_quotient)
    if key in _LF_CACHE:
        return _LF_CACHE[key]
    te = shape.open_quotient
    tp = shape.asymmetry * te
    ta = shape.return_quotient
    td = 1.0 - te
    omega_g = np.pi / tp
    sin_e = np.sin(omega_g * te)
    cos_e = np.cos(omega_g * te)

    # return-phase rate: eps * ta = 1 - exp(-eps * td), positive root
    def f_eps(eps):
        return eps * ta - 1.0 + np.exp(-eps * td)

    eps = brentq(f_eps, 1e-9, 2.0 / ta + 1.0 / td, xtol=1e-14, rtol=1e-15)

    area_return = -(1.0 / (eps * ta)) * ((1.0 - np.exp(-eps * td)) / eps - td * np.exp(-eps * td))

    # growth rate from the zero-net-flow condition over the whole period
    def net_area(alpha):
        e0 = -1.0 / (np.exp(alpha * te) * sin_e)
        open_part = e0 * (
            (np.exp(alpha * te) * (alpha * sin_e - omega_g * cos_e) + omega_g)
            / (alpha**2 + omega_g**2)
        )
        return open_part + area_return

    lo, hi = -1.0, 1.0
    for _ in range(80):
        if net_area(lo) * net_area(hi) <= 0:
            break
        lo *= 2.0
        hi *= 2.0
    else:
        raise ValueError(f"no flow balance for shape {shape}")
    alpha = brentq(net_area, lo, hi, xtol=1e-12, rtol=1e-15)
    e0 = -1.0 / (np.exp(alpha * te) * sin_e)
    _LF_CACHE[key] = (alpha, eps, e0)
    return alpha, eps, e0


def synth_glottal_pulse(period: int, shape_params: LfParams | None = None) -> GlottalPulse:
    """One Liljencrants-Fant glottal-flow-derivative period of exactly
    `period` samples, peak-normalized (most negative sample = -1) and
    DC-free.  The waveform shape depends only on the shape parameters,
    not the period: pulses of different lengths are time-scaled copies.
    """
    shape = shape_params or LfParams()
    shape.validate()
    p = int(period)
    if p < 16:
        raise ValueError(f"period must be at least 16 samples, got {p}")
    alpha, eps, e0 = _lf_constants(shape)
    te = shape.open_quotient
    tp = shape.asymmetry * te
    ta = shape.return_quotient
    omega_g = np.pi / tp

    t = np.arange(p) / p
    g = np.empty(p)
    open_phase = t < te
    g[open_phase] = e0 * np.exp(alpha * t[open_phase]) * np.sin(omega_g * t[open_phase])
    tr = t[~open_phase] - te
    g[~open_phase] = -(1.0 / (eps * ta)) * (np.exp(-eps * tr) - np.exp(-eps * (1.0 - te)))

    g -= g.mean()
    peak = np.abs(g.min())
    if peak > 0:
        g /= peak
    return GlottalPulse(period=p, samples=g, shape_params=shape)


def _rendered_line_magnitudes(pulse_samples, model, period, count, tail_periods=3):
    """Line magnitudes actually produced by the per-period render path:
    pulse through the filter, truncated at tail_periods * P, overlap-added
    at period offsets (equivalently: folded into one period)."""
    tail = tail_periods * period
    excitation = np.concatenate([pulse_samples, np.zeros(tail - period)])
    filtered = all_pole_filter(excitation, model.coefficients, model.gain)
    folded = filtered.reshape(tail_periods, period).sum(axis=0)
    return 2.0 * np.abs(dft(folded)[1 : 1 + count]) / period


def _tilt_compensated_model(
    amps,
    pulse_samples,
    period,
    omega0,
    order,
    *,
    focus_norm_freq=0.4,
    warm_start=None,
    tail_periods=3,
):
    """Per-period vocal tract model: target envelope divided by the
    pulse's own line magnitudes, refit as an all-pole model.

    The inverse-source division leaves a target with more spectral
    structure than a plain vowel envelope, so the refit runs in the
    thorough mode of the envelope fitter, with full weight on the band
    below `focus_norm_freq` (fraction of Nyquist, ~4.4 kHz at 22050 Hz).
    The fit target is then corrected a few times against the line
    magnitudes the truncated-tail render path actually produces, which
    absorbs both residual fit error and truncation ringing (truncating a
    resonance's tail perturbs the line right on the resonance by far more
    than the tail's energy suggests).
    """
    count = min(len(amps), harmonic_count(period))
    target = np.asarray(amps[:count], dtype=np.float64)
    spec = dft(pulse_samples)
    pulse_mags = 2.0 * np.abs(spec[1 : 1 + count]) / period
    pulse_mags = np.maximum(pulse_mags, pulse_mags.max() * 1e-3)
    compensated = target / pulse_mags
    if order == 0:
        level = np.exp(np.mean(np.log(np.maximum(compensated, 1e-300))))
        return LpcModel(0, np.zeros(0), float(max(level, 1e-300)))
    nyquist_fraction = 2.0 * np.arange(1, count + 1) / period
    weights = np.where(nyquist_fraction <= focus_norm_freq, 1.0, 0.3)
    tiny = target.max() * 1e-8

    model = fit_lpc_envelope(
        compensated,
        omega0,
        order,
        thorough=warm_start is None,
        line_weights=weights,
        warm_start=warm_start,
        max_pole_radius=0.99,
    )
    fit_target = compensated.copy()
    for _ in range(3):
        rendered = _rendered_line_magnitudes(pulse_samples, model, period, count, tail_periods)
        ratio = np.clip(target / np.maximum(rendered, tiny), 10 ** (-12 / 20), 10 ** (12 / 20))
        focus = weights > 0.5
        if np.max(np.abs(20 * np.log10(ratio[focus]))) < 0.2:
            break
        fit_target = fit_target * ratio
        model = fit_lpc_envelope(
            fit_target,
            omega0,
            order,
            line_weights=weights,
            warm_start=model.coefficients,
            max_pole_radius=0.99,
        )
    return model


def synth_glo(
    plan: SynthesisPlan,
    shape_params: LfParams | None = None,
    *,
    lpc_order: int = 18,
    order_headroom: int = 8,
    tilt_compensation: bool = True,
    tail_periods: int = 3,
) -> AudioBuffer:
    """Physiologically inspired synthesis.

    Per period: synthesize an LF glottal pulse of the local period
    length, filter it through a dedicated all-pole vocal tract model fit
    to the interpolated target envelope (divided by the pulse's own
    spectral tilt when `tilt_compensation` is on), keep `tail_periods`
    periods of the filter output, and overlap-add at the cumulative
    period offsets.  Harmonic phase structure comes entirely from the
    pulse and filter, never from an NRD model.

    The per-period model runs `order_headroom` orders above `lpc_order`:
    dividing by the pulse spectrum adds structure that a plain
    vowel-envelope order cannot carry.
    """
    shape = shape_params or LfParams()
    track = _ParamTrack(plan)
    total = plan.total_length
    out = np.zeros(total + (tail_periods + 1) * int(np.ceil(TWO_PI / min(f.omega0 for f in plan.voiced_frames()))))

    pulse_cache: dict[int, GlottalPulse] = {}
    model_cache: dict[bytes, LpcModel] = {}
    prev_model: LpcModel | None = None
    position = 0
    while position < total:
        omega0, amps, _ = track.at(position)
        if not omega0 > 0:
            raise ValueError(f"non-positive interpolated omega0 at sample {position}")
        period = int(round(TWO_PI / omega0))
        if period < 16:
            raise ValueError(f"interpolated period {period} too short for a glottal pulse")
        if period not in pulse_cache:
            pulse_cache[period] = synth_glottal_pulse(period, shape)
        pulse = pulse_cache[period]
        key = np.asarray(amps).tobytes() + period.to_bytes(4, "little")
        model = model_cache.get(key)
        if model is None:
            if tilt_compensation:
                refit_order = 0 if lpc_order == 0 else min(
                    lpc_order + order_headroom, harmonic_count(period) - 2
                )
                warm = (
                    prev_model.coefficients
                    if prev_model is not None and prev_model.order == refit_order
                    else None
                )
                model = _tilt_compensated_model(
                    amps,
                    pulse.samples,
                    period,
                    TWO_PI / period,
                    refit_order,
                    warm_start=warm,
                    tail_periods=tail_periods,
                )
            elif lpc_order == 0:
                count = min(len(amps), harmonic_count(period))
                level = np.exp(np.mean(np.log(np.maximum(amps[:count], 1e-300))))
                model = LpcModel(0, np.zeros(0), float(max(level, 1e-300)))
            else:
                count = min(len(amps), harmonic_count(period))
                model = fit_lpc_envelope(amps[:count], TWO_PI / period, lpc_order)
            model_cache[key] = model
        prev_model = model

        tail = tail_periods * period
        excitation = np.concatenate([pulse.samples, np.zeros(tail - period)])
        try:
            filtered = all_pole_filter(excitation, model.coefficients, model.gain)
        except UnstableFilterError:
            warnings.warn(
                f"unstable vocal tract model at sample {position}; clamping pole radius to 0.995",
                RuntimeWarning,
            )
            coeffs = stabilize_all_pole(model.coefficients, 0.995)
            filtered = all_pole_filter(excitation, coeffs, model.gain)
        out[position : position + tail] += filtered
        position += period

    return AudioBuffer(_fit_length(out, total), plan.sample_rate)


# ---------------------------------------------------------------------------
# Objective comparison
# ---------------------------------------------------------------------------

def _aligned_correlation(a: np.ndarray, b: np.ndarray, max_lag: int):
    """Best normalized correlation of b against a over lags within
    +-max_lag.  Returns (correlation, lag)."""
    seg = min(a.size, b.size) - 2 * max_lag
    if seg <= 16:
        return 0.0, 0
    ref = a[max_lag : max_lag + seg]
    ref_norm = np.linalg.norm(ref)
    best = (-np.inf, 0)
    for lag in range(-max_lag, max_lag + 1):
        win = b[max_lag + lag : max_lag + lag + seg]
        denom = ref_norm * np.linalg.norm(win)
        if denom <= 0:
            continue
        corr = float(np.dot(ref, win) / denom)
        if corr > best[0]:
            best = (corr, lag)
    return best


def compare_engines(
    audio_a: AudioBuffer,
    audio_b: AudioBuffer,
    plan: SynthesisPlan | None = None,
    *,
    frame_len: int = 1024,
    magnitude_limit_hz: float = 4000.0,
) -> dict:
    """Objective comparison report between two rendered signals.

    Reports the RMS difference of the frame-based f0 contours, the mean
    and max per-harmonic magnitude difference (dB, up to
    `magnitude_limit_hz`), and the best shift-aligned waveform
    correlation over sub-period lags.  With a plan, each signal's contour
    is also scored against the commanded one.  If either signal has no
    analyzable voiced frames the report carries diagnostics instead of
    metrics.
    """
    frames_a = analyze_frames(audio_a, frame_len)
    frames_b = analyze_frames(audio_b, frame_len)
    voiced_a = {f.frame_index: f for f in frames_a if f.voiced}
    voiced_b = {f.frame_index: f for f in frames_b if f.voiced}
    report: dict = {
        "voiced_frames_a": len(voiced_a),
        "voiced_frames_b": len(voiced_b),
        "f0_rms_diff_hz": None,
        "magnitude_diff_db_mean": None,
        "magnitude_diff_db_max": None,
        "waveform_correlation": None,
        "waveform_lag_samples": None,
    }
    common = sorted(set(voiced_a) & set(voiced_b))
    if not common:
        report["diagnostic"] = "no common voiced frames"
        return report

    rate = audio_a.sample_rate
    f0a = np.array([voiced_a[i].omega0 for i in common]) * rate / TWO_PI
    f0b = np.array([voiced_b[i].omega0 for i in common]) * rate / TWO_PI
    report["f0_rms_diff_hz"] = float(np.sqrt(np.mean((f0a - f0b) ** 2)))

    diffs = []
    for i in common:
        fa, fb = voiced_a[i], voiced_b[i]
        count = min(fa.magnitudes.size, fb.magnitudes.size)
        freqs = (np.arange(1, count + 1)) * fa.omega0 * rate / TWO_PI
        keep = freqs <= magnitude_limit_hz
        with np.errstate(divide="ignore", invalid="ignore"):
            d = 20.0 * np.log10(fa.magnitudes[:count][keep] / fb.magnitudes[:count][keep])
        diffs.append(d[np.isfinite(d)])
    if diffs:
        alldiff = np.abs(np.concatenate(diffs))
        if alldiff.size:
            report["magnitude_diff_db_mean"] = float(np.mean(alldiff))
            report["magnitude_diff_db_max"] = float(np.max(alldiff))

    f0_mean = float(np.mean(f0a))
    max_lag = int(round(rate / max(f0_mean, 1.0))) + 1
    corr, lag = _aligned_correlation(audio_a.samples, audio_b.samples, max_lag)
    report["waveform_correlation"] = corr
    report["waveform_lag_samples"] = lag

    if plan is not None:
        anchors = {
            fp.frame_index: fp.omega0 * plan.sample_rate / TWO_PI for fp in plan.voiced_frames()
        }
        for name, measured in (("a", voiced_a), ("b", voiced_b)):
            shared = sorted(set(anchors) & set(measured))
            if shared:
                err = [anchors[i] - measured[i].omega0 * rate / TWO_PI for i in shared]
                report[f"command_f0_rms_hz_{name}"] = float(np.sqrt(np.mean(np.square(err))))
    return report
