"""Phase-based segmentation of voiced speech into consecutive pitch periods.

The tracker alternates correlation-based period refinement with a phase
criterion that pins each period onset where the fundamental's DFT phase
crosses -pi/2, yielding an exact partition of a voiced region and a
per-period harmonic phase/magnitude record.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .analysis import nrd_from_phases
from .dsp import AudioBuffer, cross_correlate, dft

log = logging.getLogger(__name__)


class SegmentationLost(RuntimeError):
    """Periodicity could not be followed (aperiodic or silent region)."""


@dataclass
class SeedRegion:
    """Approximate bounds of the left-most pitch period to track from."""

    start_sample: int
    end_sample: int

    def __post_init__(self):
        if self.start_sample < 0 or self.end_sample <= self.start_sample:
            raise ValueError("seed must satisfy 0 <= start < end")
        if self.end_sample - self.start_sample < 5:
            raise ValueError("seed period must span at least 5 samples")

    @property
    def period(self) -> int:
        return self.end_sample - self.start_sample


@dataclass
class PitchPeriod:
    """One segmented pitch period and its harmonic parameters."""

    start_sample: int
    length: int
    phases: np.ndarray
    nrd: np.ndarray
    magnitudes: np.ndarray
    sample_rate: int

    @property
    def f0(self) -> float:
        return self.sample_rate / self.length


@dataclass
class PeriodTrack:
    """Contiguous pitch periods: each period starts where the previous ends."""

    periods: list[PitchPeriod] = field(default_factory=list)
    sample_rate: int = 0
    lost: bool = False

    def __len__(self):
        return len(self.periods)

    @property
    def period_lengths(self) -> np.ndarray:
        return np.array([p.length for p in self.periods], dtype=np.int64)

    @property
    def f0_contour(self) -> np.ndarray:
        return np.array([p.f0 for p in self.periods])


def harmonic_count(period: int) -> int:
    """Number of usable harmonics for a P-sample period.

    The highest usable DFT bin is P/2 - 1 for even P and (P-1)/2 for odd
    P (conjugate symmetry claims the rest); harmonics are l = 0..L-1.
    """
    p = int(period)
    if p < 5:
        raise ValueError(f"period must be at least 5 samples, got {p}")
    return p // 2 - 1 if p % 2 == 0 else (p - 1) // 2


def _local_maxima(values: np.ndarray) -> list[int]:
    """Strict local maxima; a flat plateau counts once at its midpoint."""
    out = []
    n = values.size
    i = 1
    while i < n - 1:
        if values[i] > values[i - 1]:
            j = i
            while j + 1 < n and values[j + 1] == values[i]:
                j += 1
            if j < n - 1 and values[j + 1] < values[i]:
                out.append((i + j) // 2)
            i = j + 1
        else:
            i += 1
    return out


def refine_period(
    signal: AudioBuffer,
    period_start: int,
    period: int,
    *,
    lost_threshold: float = 0.3,
) -> int:
    """Update a period estimate from the two largest correlation maxima.

    The current period template is correlated against shifts S covering
    [0, 2P] (extended by half a period so a maximum sitting near S = 2P
    is still detectable as a local maximum); with maxima expected near
    S ~ P and S ~ 2P, the refined period is the distance between the two
    largest credible local maxima (or the location of the single one, if
    only one exists).  Maxima whose normalized correlation falls below
    half of the best one are not period candidates.

    Raises SegmentationLost when no local maximum exists or the best
    normalized correlation falls below `lost_threshold`, and ValueError
    when the signal cannot cover the search window.
    """
    x = signal.samples
    p = int(period)
    start = int(period_start)
    if p < 5:
        raise ValueError(f"period must be at least 5 samples, got {p}")
    if start < 0 or start + 2 * p > x.size:
        raise ValueError("window [period_start, period_start + 2P] exceeds the signal")
    s_max = min(2 * p + p // 2 + 2, x.size - start - p)
    template = x[start : start + p]
    shifts = range(0, s_max + 1)
    r = cross_correlate(template, x[start:], shifts)
    maxima = _local_maxima(r)
    if not maxima:
        raise SegmentationLost(f"no correlation maximum at sample {start}")
    r_norm = cross_correlate(template, x[start:], maxima, normalized=True)
    best = float(np.max(r_norm))
    if best < lost_threshold:
        raise SegmentationLost(
            f"best normalized correlation {best:.3f} below {lost_threshold} at sample {start}"
        )
    credible = [m for m, v in zip(maxima, r_norm) if v >= max(lost_threshold, 0.5 * best)]
    top = sorted(sorted(credible, key=lambda s: r[s], reverse=True)[:2])
    if len(top) == 2:
        s1, s2 = top
        updated = int(round(s2 - s1))
        if abs((s2 - s1) - s1) > max(2, 0.05 * max(s2 - s1, 1)):
            log.info(
                "correlation maxima at S=%d and S=%d imply inconsistent periods "
                "(S2-S1=%d vs S1=%d); using S2-S1",
                s1, s2, s2 - s1, s1,
            )
    else:
        updated = int(top[0])
    if updated < 5:
        raise SegmentationLost(f"refined period collapsed to {updated} samples")
    return updated


def _phase_residuals(x: np.ndarray, starts: np.ndarray, period: int) -> np.ndarray:
    """|angle(X[1]) + pi/2| of the P-point DFT at each candidate start."""
    idx = starts[:, None] + np.arange(period)[None, :]
    segments = x[idx]
    kernel = np.exp(-2j * np.pi * np.arange(period) / period)
    bin1 = segments @ kernel
    err = np.angle(bin1) + np.pi / 2
    return np.abs((err + np.pi) % (2 * np.pi) - np.pi)


def align_onset(
    signal: AudioBuffer,
    period_start: int,
    period: int,
    *,
    search: tuple[int, int] | None = None,
):
    """Shift a period start onto the fundamental's onset.

    Searches S in [-P//2, P//2] (or the explicit `search` bounds) for the
    shift whose P-point DFT satisfies angle(X[1]) ~ -pi/2; ties break
    toward the smallest |S|.  Returns (shift, aligned_start).
    """
    x = signal.samples
    p = int(period)
    start = int(period_start)
    if p < 5:
        raise ValueError(f"period must be at least 5 samples, got {p}")
    lo, hi = (-(p // 2), p // 2) if search is None else search
    if start + lo < 0 or start + hi + p > x.size:
        raise ValueError("onset search window exceeds the signal")
    shifts = np.arange(lo, hi + 1)
    residual = _phase_residuals(x, start + shifts, p)
    pick = np.lexsort((np.abs(shifts), residual))[0]
    s = int(shifts[pick])
    return s, start + s


def extract_period_params(signal: AudioBuffer, start: int, period: int) -> PitchPeriod:
    """Harmonic phases, magnitudes, and NRD of one aligned pitch period.

    phi_l = angle(X[1+l]) + pi/2 and A_l = 2|X[1+l]|/P from the P-point
    DFT of the period; the NRD vector subtracts the residual fundamental
    phase, so a sub-sample onset offset does not tilt the result.
    """
    x = signal.samples
    p = int(period)
    start = int(start)
    count = harmonic_count(p)
    if start < 0 or start + p > x.size:
        raise ValueError("period window exceeds the signal")
    spec = dft(x[start : start + p])
    bins = spec[1 : 1 + count]
    phases = np.angle(bins) + np.pi / 2
    magnitudes = 2.0 * np.abs(bins) / p
    nrd = nrd_from_phases(phases)
    # harmonics at the numerical floor carry no phase information
    if magnitudes.size:
        nrd[magnitudes < 1e-9 * magnitudes.max()] = 0.0
    return PitchPeriod(
        start_sample=start,
        length=p,
        phases=phases,
        nrd=nrd,
        magnitudes=magnitudes,
        sample_rate=signal.sample_rate,
    )


def auto_seed(signal: AudioBuffer, *, fmin: float = 60.0, fmax: float = 500.0) -> SeedRegion:
    """Convenience seed from the strongest autocorrelation lag in the
    first 100 ms.  Manual seeds are preferred for precision work."""
    x = signal.samples
    rate = signal.sample_rate
    lag_min = max(5, int(rate / fmax))
    lag_max = min(int(rate / fmin), x.size // 3)
    window = x[: min(x.size, int(0.1 * rate) + 2 * lag_max)]
    if lag_max <= lag_min or window.size < 3 * lag_min:
        raise SegmentationLost("signal too short for automatic seeding")
    seg = window[: window.size - lag_max]
    r = np.array([np.dot(seg, window[lag : lag + seg.size]) for lag in range(lag_min, lag_max + 1)])
    e0 = np.dot(seg, seg)
    if e0 <= 0 or np.max(r) < 0.3 * e0:
        raise SegmentationLost("no periodicity found for automatic seeding")
    lag = lag_min + int(np.argmax(r))
    return SeedRegion(start_sample=lag, end_sample=2 * lag)


def segment_track(
    signal: AudioBuffer,
    seed: SeedRegion,
    *,
    max_periods: int | None = None,
    lost_threshold: float = 0.3,
) -> PeriodTrack:
    """Partition a voiced region into consecutive pitch periods.

    Starting from the seed, each iteration refines the period length by
    correlation, aligns the onset by the fundamental-phase criterion, and
    advances by one period.  Every emitted period runs exactly from its
    aligned onset to the next one, so the track is contiguous by
    construction.  When periodicity is lost, the track collected so far
    is returned with its `lost` flag set.
    """
    x = signal.samples
    track = PeriodTrack(sample_rate=signal.sample_rate)
    if seed.end_sample > x.size:
        raise ValueError("seed region exceeds the signal")
    est = seed.period
    cursor = seed.start_sample
    prev_onset = None

    while True:
        if max_periods is not None and len(track.periods) >= max_periods:
            break
        try:
            est = refine_period(signal, cursor, est, lost_threshold=lost_threshold)
        except SegmentationLost:
            track.lost = True
            break
        except ValueError:
            break  # ran out of signal
        lo = max(-(est // 2), -cursor)
        hi = min(est // 2, x.size - cursor - est)
        if hi < lo:
            break
        _, onset = align_onset(signal, cursor, est, search=(lo, hi))
        if prev_onset is not None:
            emitted = onset - prev_onset
            if emitted < 5 or abs(emitted - est) > max(2, 0.2 * est):
                track.lost = True
                break
            track.periods.append(extract_period_params(signal, prev_onset, emitted))
        prev_onset = onset
        cursor = onset + est

    if not track.lost and prev_onset is not None and prev_onset + est <= x.size:
        track.periods.append(extract_period_params(signal, prev_onset, est))
    return track
