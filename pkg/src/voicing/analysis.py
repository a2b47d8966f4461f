"""Frame-based harmonic analysis: NRD phase algebra, pitch estimation,
LPC magnitude envelopes, and the ODFT parametric front-end."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_toeplitz

from .dsp import (
    AudioBuffer,
    UnstableFilterError,
    make_sqrt_shifted_hanning,
    odft,
    pole_radii,
    sine_window_spectrum,
    stabilize_all_pole,
)

TWO_PI = 2.0 * np.pi
_POLE_RMAX = 0.998  # default cap on fitted pole radii


# ---------------------------------------------------------------------------
# NRD algebra
# ---------------------------------------------------------------------------

def wrap_cycles(values):
    """Wrap values (in cycles) to [0, 1)."""
    v = np.asarray(values, dtype=np.float64)
    return v - np.floor(v)


def vertical_unwrap(values) -> np.ndarray:
    """Remove integer-cycle jumps along the harmonic-index axis.

    Successive differences are adjusted by integers so that
    |out[l+1] - out[l]| <= 0.5; out[0] equals values[0].
    """
    v = np.asarray(values, dtype=np.float64)
    if v.size <= 1:
        return v.copy()
    d = np.diff(v)
    d -= np.round(d)
    return np.concatenate([[v[0]], v[0] + np.cumsum(d)])


def nrd_from_phases(phases) -> np.ndarray:
    """Normalized relative delay of each harmonic, in cycles.

    nrd[l] = ((phases[l] - (l+1) * phases[0]) / 2pi) mod 1, with nrd[0]
    identically zero, then vertically unwrapped.  The result is invariant
    to any time shift of the underlying harmonic signal.
    """
    phi = np.asarray(phases, dtype=np.float64)
    if phi.size == 0:
        return np.zeros(0)
    v = wrap_cycles((phi - (np.arange(phi.size) + 1) * phi[0]) / TWO_PI)
    v[0] = 0.0
    return vertical_unwrap(v)


def average_nrd(track) -> np.ndarray:
    """Circular-aware per-harmonic mean of the NRD vectors in a period track.

    Accepts a PeriodTrack or any iterable of NRD vectors; vectors may have
    different lengths (each harmonic averages over the periods that carry
    it).  The result is wrapped to [0, 1) for reporting.
    """
    if hasattr(track, "periods"):
        vectors = [p.nrd for p in track.periods]
    else:
        vectors = [np.asarray(v, dtype=np.float64) for v in track]
    if not vectors:
        raise ValueError("cannot average an empty track")
    width = max(v.size for v in vectors)
    out = np.zeros(width)
    for ell in range(width):
        vals = np.array([v[ell] for v in vectors if v.size > ell])
        z = np.mean(np.exp(2j * np.pi * vals))
        out[ell] = wrap_cycles(np.angle(z) / TWO_PI)
    out[0] = 0.0
    return out


# ---------------------------------------------------------------------------
# LPC magnitude model
# ---------------------------------------------------------------------------

@dataclass
class LpcModel:
    """All-pole spectral magnitude model |H(w)| = gain / |1 + sum a_i e^-jwi|."""

    order: int
    coefficients: np.ndarray
    gain: float

    def __post_init__(self):
        self.coefficients = np.asarray(self.coefficients, dtype=np.float64)
        if self.coefficients.size != self.order:
            raise ValueError("coefficient count must equal the model order")
        if not self.gain > 0:
            raise ValueError("gain must be positive")
        radii = pole_radii(self.coefficients)
        if radii.size and radii.max() >= 1.0:
            raise UnstableFilterError(
                f"LpcModel poles must lie strictly inside the unit circle "
                f"(max radius {radii.max():.6f})"
            )

    def frequency_response(self, omega) -> np.ndarray:
        """Complex response at angular frequencies `omega` (rad/sample)."""
        w = np.atleast_1d(np.asarray(omega, dtype=np.float64))
        denom = np.ones_like(w, dtype=np.complex128)
        for i, a in enumerate(self.coefficients, start=1):
            denom += a * np.exp(-1j * w * i)
        return self.gain / denom

    def magnitude(self, omega) -> np.ndarray:
        return np.abs(self.frequency_response(omega))


def fit_lpc_envelope(
    magnitudes,
    omega0: float,
    order: int,
    *,
    floor_db: float = -60.0,
    grid_size: int = 2048,
    thorough: bool = False,
    line_weights=None,
    warm_start=None,
    max_pole_radius: float = _POLE_RMAX,
) -> LpcModel:
    """Fit an all-pole magnitude model to a harmonic line spectrum.

    The line spectrum (amplitudes at (l+1)*omega0) is resampled onto a
    dense log-magnitude grid over [0, pi], an autocorrelation-method LPC
    fit is computed from the gridded power spectrum, and the grid is then
    iteratively corrected by the residual at the harmonic frequencies so
    that the model matches the lines closely even at low f0.

    Args:
        magnitudes: linear amplitude per harmonic, index l = 0..L-1.
        omega0: fundamental angular frequency, rad/sample.
        order: all-pole model order p (L >= p/2 recommended).
        floor_db: modeling floor relative to the strongest harmonic; lines
            below it are raised onto it before fitting.  Measured spectra
            carry an acoustic noise floor anyway, and an explicit floor
            keeps the fit from burning its orders on data 80 dB down.
        thorough: add randomized restarts to the refinement stage; slower
            but much less likely to settle in a poor pole configuration on
            oddly shaped targets.
        line_weights: optional per-harmonic importance multipliers for the
            refinement stage (e.g. to de-emphasize bands the caller does
            not care about).
        warm_start: coefficient array of a previously fitted model for a
            nearly identical target; used as the only starting point,
            which is both faster and steadier across a slowly evolving
            parameter track.
        max_pole_radius: hard cap on fitted pole radii.  Callers that
            truncate the filter's response (finite tails) should lower it
            so the ringing dies out inside their window.
    """
    mags = np.asarray(magnitudes, dtype=np.float64)
    if mags.size == 0 or not np.any(mags > 0):
        raise ValueError("cannot fit an envelope to all-zero magnitudes")
    if order < 1:
        raise ValueError("order must be >= 1")
    if not 0 < omega0 < np.pi:
        raise ValueError("omega0 must lie in (0, pi)")
    omega_l = (np.arange(mags.size) + 1) * omega0
    keep = omega_l < np.pi
    omega_l, mags = omega_l[keep], mags[keep]
    if line_weights is not None:
        line_weights = np.asarray(line_weights, dtype=np.float64)[: mags.size]

    floor = mags.max() * 10.0 ** (floor_db / 20.0)
    log_target = np.log(np.maximum(mags, floor))
    active = mags > floor  # lines raised onto the floor are not measurements
    if not np.any(active):
        active = np.ones_like(log_target, dtype=bool)
    grid = np.arange(grid_size + 1) * np.pi / grid_size
    log_s = np.interp(grid, omega_l, log_target)

    # stage 1: autocorrelation-method fit of the resampled line spectrum
    # (skipped when a warm start is supplied)
    if warm_start is not None and np.asarray(warm_start).size == order:
        coeffs = np.asarray(warm_start, dtype=np.float64)
        restarts, budget = 0, 300
    else:
        power = np.exp(2.0 * log_s)
        r = np.fft.irfft(power, 2 * grid_size)[: order + 1]
        coeffs = -_solve_yule_walker(r, order)
        restarts = 5 if thorough else 0
        budget = 1500 if thorough else 400

    # stage 2: pole-domain refinement of the dB error at the lines (the
    # autocorrelation norm tolerates large relative errors in spectral
    # valleys; this stage does not)
    weights = np.where(active, 1.0, 0.25)
    if line_weights is not None:
        padded = np.full(weights.size, line_weights[-1] if line_weights.size else 1.0)
        padded[: line_weights.size] = line_weights[: weights.size]
        weights = weights * padded
    coeffs, gain = _refine_pole_fit(
        coeffs,
        omega_l,
        log_target,
        weights,
        restarts=restarts,
        max_nfev=budget,
        rmax=max_pole_radius,
    )
    # degree-p coefficient round-trips can nudge recomputed radii past the
    # cap; re-clamp so the constructed model always validates
    radii = pole_radii(coeffs)
    if radii.size and radii.max() > max_pole_radius:
        coeffs = stabilize_all_pole(coeffs, max_pole_radius)
    return LpcModel(order=order, coefficients=coeffs, gain=gain)


def _poles_to_params(roots, order, rmax):
    """Pack pole locations into the (logit radius, angle) vector used by
    the refinement stage: order//2 conjugate pairs plus an optional real
    pole.  Leftover real roots are approximated by near-real pairs."""
    npairs = order // 2
    nreal = order % 2
    upper = sorted(
        [r for r in roots if np.imag(r) > 1e-9], key=lambda r: -np.abs(r)
    )
    reals = sorted([np.real(r) for r in roots if abs(np.imag(r)) <= 1e-9], key=lambda v: -abs(v))
    pairs = list(upper)
    while len(pairs) < npairs and len(reals) >= 2:
        r1, r2 = reals.pop(0), reals.pop(0)
        mag = np.sqrt(max(abs(r1) * abs(r2), 1e-6))
        pairs.append(mag * np.exp(1j * 0.02))
    while len(pairs) < npairs:
        pairs.append(0.3 * np.exp(1j * (0.3 + 0.5 * len(pairs))))
    pairs = pairs[:npairs]
    params = []
    for p in pairs:
        radius = np.clip(np.abs(p) / rmax, 1e-3, 1.0 - 1e-6)
        params.append(np.log(radius / (1.0 - radius)))
        params.append(np.abs(np.angle(p)))
    if nreal:
        q = reals[0] if reals else 0.3
        params.append(np.arctanh(np.clip(q / rmax, -1 + 1e-6, 1 - 1e-6)))
    params.append(0.0)  # log gain, set properly by the caller
    return np.asarray(params, dtype=np.float64)


def _params_to_poles(params, order, rmax):
    npairs = order // 2
    nreal = order % 2
    with np.errstate(over="ignore"):
        radius = rmax / (1.0 + np.exp(-params[0 : 2 * npairs : 2]))
    upper = radius * np.exp(1j * params[1 : 2 * npairs : 2])
    poles = np.empty(order, dtype=np.complex128)
    poles[0 : 2 * npairs : 2] = upper
    poles[1 : 2 * npairs : 2] = np.conj(upper)
    if nreal:
        poles[-1] = rmax * np.tanh(params[2 * npairs])
    return poles


def _refine_pole_fit(
    init_coeffs, omega_l, log_target, weights, *, restarts=0, max_nfev=None, rmax=_POLE_RMAX
):
    """Weighted least-squares fit of the log magnitude at the harmonic
    lines, parameterized by pole radii (through a sigmoid, so stability is
    structural) and angles.  Returns (coefficients, gain)."""
    from scipy.optimize import least_squares

    order = init_coeffs.size
    npairs = order // 2
    nreal = order % 2
    sw = np.sqrt(weights)
    expw = np.exp(-1j * omega_l)

    def log_den(params):
        poles = _params_to_poles(params, order, rmax)
        factors = 1.0 - poles[None, :] * expw[:, None]
        den = np.prod(factors, axis=1)
        return np.log(np.maximum(np.abs(den), 1e-300)), poles, factors

    def residual(params):
        ld, _, _ = log_den(params)
        return sw * (params[-1] - ld - log_target)

    def jacobian(params):
        poles = _params_to_poles(params, order, rmax)
        factors = 1.0 - poles[None, :] * expw[:, None]
        f_all = -expw[:, None] / factors  # d log(1 - p e^-jw) / dp
        jac = np.zeros((omega_l.size, params.size))
        if npairs:
            upper = poles[0 : 2 * npairs : 2]
            sig = np.abs(upper) / rmax
            f_up = f_all[:, 0 : 2 * npairs : 2]
            f_dn = f_all[:, 1 : 2 * npairs : 2]
            dp_du = upper * (1.0 - sig)
            jac[:, 0 : 2 * npairs : 2] = -np.real(
                f_up * dp_du[None, :] + f_dn * np.conj(dp_du)[None, :]
            )
            jac[:, 1 : 2 * npairs : 2] = -np.real(
                f_up * (1j * upper)[None, :] + f_dn * (-1j * np.conj(upper))[None, :]
            )
        if nreal:
            v = params[2 * npairs]
            dq_dv = rmax * (1.0 - np.tanh(v) ** 2)
            jac[:, 2 * npairs] = -np.real(f_all[:, -1] * dq_dv)
        jac[:, -1] = 1.0
        return jac * sw[:, None]

    def optimal_gain(params):
        ld, _, _ = log_den(params)
        return float(np.sum(weights * (log_target + ld)) / np.sum(weights))

    inits = []
    roots = np.roots(np.concatenate([[1.0], init_coeffs])) if order else np.zeros(0)
    start = _poles_to_params(roots, order, rmax)
    start[-1] = optimal_gain(start)
    inits.append(start)
    for seed in range(restarts):
        rng = np.random.default_rng(1000 + seed)
        cand = np.zeros(2 * npairs + nreal + 1)
        radii = rng.uniform(0.4, 0.95, npairs)
        cand[0 : 2 * npairs : 2] = np.log(radii / (1 - radii))
        cand[1 : 2 * npairs : 2] = np.sort(rng.uniform(0.03, np.pi * 0.9, npairs))
        if nreal:
            cand[2 * npairs] = rng.uniform(-1.0, 1.0)
        cand[-1] = optimal_gain(cand)
        inits.append(cand)

    n_params = 2 * npairs + nreal + 1
    method = "lm" if omega_l.size >= n_params else "trf"
    best = None
    for x0 in inits:
        if not np.all(np.isfinite(residual(x0))):
            continue
        sol = least_squares(
            residual,
            x0,
            jac=jacobian,
            method=method,
            x_scale="jac",
            ftol=1e-13,
            xtol=1e-13,
            gtol=1e-13,
            max_nfev=max_nfev or 400,
        )
        cost = float(sol.cost)
        # prefer earlier (deterministic) inits unless a restart clearly wins
        if best is None or cost < 0.98 * best[0]:
            best = (cost, sol.x)
    if best is None:
        return init_coeffs.copy(), float(np.exp(np.sum(weights * log_target) / np.sum(weights)))
    _, params = best
    poles = _params_to_poles(params, order, rmax)
    coeffs = np.real(np.poly(poles))[1:] if order else np.zeros(0)
    gain = float(np.exp(params[-1]))
    return coeffs, gain


def _solve_yule_walker(r, order):
    """Solve the normal equations from an autocorrelation sequence.

    No diagonal loading by default: loading acts like an additive white
    floor and wrecks the fit in deep spectral valleys.  Microscopic
    loading is applied only if the plain solve comes back non-finite.
    """
    load = 0.0
    for _ in range(6):
        r0 = r.copy()
        r0[0] *= 1.0 + load
        try:
            phi = solve_toeplitz((r0[:order], r0[:order]), r0[1 : order + 1])
        except np.linalg.LinAlgError:
            phi = None
        if phi is not None and np.all(np.isfinite(phi)):
            return phi
        load = 1e-12 if load == 0.0 else load * 100.0
    raise ValueError("autocorrelation system could not be solved")


def _response_magnitude(coeffs, gain, omega):
    denom = np.ones_like(omega, dtype=np.complex128)
    for i, a in enumerate(coeffs, start=1):
        denom += a * np.exp(-1j * omega * i)
    return gain / np.abs(denom)


# ---------------------------------------------------------------------------
# Frame parameters
# ---------------------------------------------------------------------------

@dataclass
class FrameParams:
    """Per-frame parametric record: f0, fundamental magnitude/phase,
    shift-invariant harmonic phase model (NRD), and magnitude envelope."""

    frame_index: int
    voiced: bool
    omega0: float = 0.0
    a0: float = 0.0
    phi0: float | None = None
    nrd: np.ndarray = field(default_factory=lambda: np.zeros(0))
    magnitudes: np.ndarray = field(default_factory=lambda: np.zeros(0))
    envelope: LpcModel | None = None
    harmonic_snr_db: np.ndarray | None = None

    def __post_init__(self):
        self.nrd = np.asarray(self.nrd, dtype=np.float64)
        self.magnitudes = np.asarray(self.magnitudes, dtype=np.float64)
        if self.voiced:
            if not 0 < self.omega0 < np.pi:
                raise ValueError("voiced frame needs 0 < omega0 < pi")
            if self.nrd.size and self.nrd.size * self.omega0 >= np.pi:
                raise ValueError("harmonics must stay below Nyquist (L * omega0 < pi)")


def harmonic_amplitudes(params: FrameParams, count: int | None = None) -> np.ndarray:
    """Harmonic amplitudes A_l implied by a frame's a0 and envelope.

    The envelope is evaluated at (l+1)*omega0 and scaled so the
    fundamental comes out at exactly a0.  Falls back to the measured
    magnitudes when no envelope is present.
    """
    n = int(count) if count is not None else params.nrd.size or params.magnitudes.size
    if n <= 0:
        return np.zeros(0)
    if params.envelope is None:
        out = np.zeros(n)
        take = min(n, params.magnitudes.size)
        out[:take] = params.magnitudes[:take]
        return out
    omega_l = (np.arange(n) + 1) * params.omega0
    mags = params.envelope.magnitude(np.minimum(omega_l, np.pi * 0.9999))
    ref = params.envelope.magnitude(np.array([params.omega0]))[0]
    scale = params.a0 / ref if ref > 0 else 0.0
    out = mags * scale
    out[omega_l >= np.pi] = 0.0
    return out


def interpolate_params(left: FrameParams, right: FrameParams, t: float):
    """Linear parameter interpolation between two voiced frames.

    Interpolates omega0 linearly, harmonic magnitudes in the log domain
    (derived from each side's envelope at matched harmonic indices), and
    unwrapped NRD values linearly.  When harmonic counts differ the common
    prefix is interpolated and the longer side's tail is carried over.

    Returns (omega0, amplitudes, nrd).
    """
    if not (left.voiced and right.voiced):
        raise ValueError("both frames must be voiced")
    t = float(t)
    la, ra = harmonic_amplitudes(left), harmonic_amplitudes(right)
    if t <= 0.0:
        return left.omega0, la, left.nrd.copy()
    if t >= 1.0:
        return right.omega0, ra, right.nrd.copy()
    if (
        left.omega0 == right.omega0
        and np.array_equal(la, ra)
        and np.array_equal(left.nrd, right.nrd)
    ):
        # identical sides: return them bit-exactly (lerp would wobble in
        # the last ulp as t varies, defeating downstream caches)
        return left.omega0, la, left.nrd.copy()
    omega0 = (1.0 - t) * left.omega0 + t * right.omega0
    c = min(la.size, ra.size)
    n = max(la.size, ra.size)
    amps = np.zeros(n)
    tiny = 1e-300
    amps[:c] = np.exp((1.0 - t) * np.log(np.maximum(la[:c], tiny)) + t * np.log(np.maximum(ra[:c], tiny)))
    longer_a = la if la.size >= ra.size else ra
    amps[c:] = longer_a[c:]
    nrd = np.zeros(n)
    cn = min(left.nrd.size, right.nrd.size)
    nrd[:cn] = (1.0 - t) * left.nrd[:cn] + t * right.nrd[:cn]
    longer_n = left.nrd if left.nrd.size >= right.nrd.size else right.nrd
    nrd[cn : longer_n.size] = longer_n[cn:]
    return omega0, amps, nrd


# ---------------------------------------------------------------------------
# Pitch estimation
# ---------------------------------------------------------------------------

_PEAK_TABLES: dict[int, tuple[np.ndarray, np.ndarray, np.ndarray]] = {}


def _window_peak_table(n: int):
    """Mainlobe tables for window-matched fractional peak interpolation."""
    if n not in _PEAK_TABLES:
        d = np.linspace(0.0, 0.5, 513)
        g = np.abs(sine_window_spectrum(n, TWO_PI * d / n))
        g_far = np.abs(sine_window_spectrum(n, TWO_PI * (1.0 - d) / n))
        rho = g_far / g
        _PEAK_TABLES[n] = (rho, d, g / g[0])
    return _PEAK_TABLES[n]


def _refine_peak(mags: np.ndarray, k: int, n: int, bin_hz: float):
    """Window-matched fractional-bin refinement of a spectral peak.

    Returns (frequency_hz, line_amplitude_in_peak_bin_units)."""
    rho_tab, d_tab, g_tab = _window_peak_table(n)
    if 0 < k < mags.size - 1:
        side = 1 if mags[k + 1] >= mags[k - 1] else -1
    elif k == 0:
        side = 1
    else:
        side = -1
    rho = mags[k + side] / mags[k] if mags[k] > 0 else 0.0
    rho = min(max(rho, rho_tab[0]), rho_tab[-1])
    d = float(np.interp(rho, rho_tab, d_tab))
    amp_scale = float(np.interp(d, d_tab, g_tab))
    freq = (k + 0.5 + side * d) * bin_hz
    amp = mags[k] / max(amp_scale, 1e-12)
    return freq, amp


def estimate_pitch_frame(
    spectrum,
    sample_rate: float,
    *,
    fmin: float = 60.0,
    fmax: float = 500.0,
    voicing_threshold: float = 0.35,
) -> float | None:
    """Fundamental frequency of one analysis frame, or None when unvoiced.

    Works on the ODFT of a frame windowed with the square-root shifted
    Hanning window.  Spectral peaks are refined with window-matched
    interpolation, candidate fundamentals (peak frequencies divided by
    small integers) are scored by how much refined-peak amplitude they
    explain (penalizing predicted-but-missing harmonics), and the winner
    is polished by a least-squares fit over its matched harmonics.
    """
    spec = np.asarray(spectrum, dtype=np.complex128)
    n = spec.size
    half = n // 2
    mags = np.abs(spec[:half])
    total_energy = float(np.sum(mags**2))
    if total_energy <= 0.0:
        return None
    bin_hz = sample_rate / n

    interior = np.flatnonzero((mags[1:-1] > mags[:-2]) & (mags[1:-1] >= mags[2:])) + 1
    thresh = max(mags.max() * 1e-3, float(np.median(mags)) * 6.0)
    peaks = interior[mags[interior] > thresh]
    if peaks.size == 0:
        return None
    order = np.argsort(mags[peaks])[::-1][:16]
    peaks = peaks[order]
    refined = [_refine_peak(mags, int(k), n, bin_hz) for k in peaks]
    pfreq = np.array([f for f, _ in refined])
    pamp = np.array([a for _, a in refined])

    candidates = []
    for f in pfreq:
        for h in range(1, 13):
            c = f / h
            if fmin <= c <= fmax:
                candidates.append(c)
    if not candidates:
        return None
    candidates = sorted(candidates)
    deduped = [candidates[0]]
    for c in candidates[1:]:
        if c > deduped[-1] * 1.005:
            deduped.append(c)

    f_cap = min(5000.0, 0.45 * sample_rate, float(pfreq.max()) * 1.3 + bin_hz)
    best = None
    for cand in deduped:
        h_max = max(1, int(f_cap / cand))
        matched = []
        hit_h = []
        used = set()
        for h in range(1, h_max + 1):
            target = h * cand
            tol = max(0.12 * cand, bin_hz)
            dist = np.abs(pfreq - target)
            j = int(np.argmin(dist))
            if dist[j] <= tol and j not in used:
                used.add(j)
                matched.append((h, pfreq[j], pamp[j]))
                hit_h.append(h)
        if not matched:
            continue
        misses = sum(1 for h in range(1, max(hit_h) + 1) if h not in hit_h)
        score = sum(a for _, _, a in matched) * (len(matched) / (len(matched) + misses))
        if best is None or score > best[0]:
            best = (score, cand, matched)
    if best is None:
        return None

    _, cand, matched = best
    hs = np.array([h for h, _, _ in matched], dtype=np.float64)
    fs_ = np.array([f for _, f, _ in matched])
    ws = np.array([a for _, _, a in matched])
    f0 = float(np.sum(ws * hs * fs_) / np.sum(ws * hs**2))

    matched_energy = 0.0
    for _, f, _ in matched:
        k = int(round(f / bin_hz - 0.5))
        lo, hi = max(0, k - 2), min(half, k + 3)
        matched_energy += float(np.sum(mags[lo:hi] ** 2))
    if matched_energy < voicing_threshold * total_energy:
        return None
    if not fmin * 0.5 <= f0 <= fmax * 1.5:
        return None
    return f0


# ---------------------------------------------------------------------------
# Frame-based parametric analysis
# ---------------------------------------------------------------------------

def _solve_harmonics(spectrum, omega0, count, n, n_iter=5):
    """Joint estimate of the complex harmonic amplitudes from peak bins.

    Models each measured peak bin as the sum of every harmonic's windowed
    positive- and negative-frequency images and relaxes the resulting
    linear system (fixed-point iteration).  Returns C with
    A_l = 2|C_l| and phi_l = angle(C_l) + pi/2.
    """
    half = n // 2
    ell1 = np.arange(1, count + 1)
    omega_l = ell1 * omega0
    k_star = np.clip(np.round(omega_l * n / TWO_PI - 0.5).astype(int), 0, half - 1)
    nu = TWO_PI * (k_star + 0.5) / n
    y = spectrum[k_star]

    # wp[i, j]: response of harmonic i's +frequency image at harmonic j's bin
    wp = sine_window_spectrum(n, (nu[None, :] - omega_l[:, None]).ravel()).reshape(count, count)
    wm = sine_window_spectrum(n, (nu[None, :] + omega_l[:, None]).ravel()).reshape(count, count)
    dp = np.diag(wp).copy()
    dm = np.diag(wm).copy()

    def solve_own(resid, w1, w2):
        m11 = np.real(w1 + w2)
        m12 = -np.imag(w1 - w2)
        m21 = np.imag(w1 + w2)
        m22 = np.real(w1 - w2)
        det = m11 * m22 - m12 * m21
        det = np.where(np.abs(det) < 1e-300, 1e-300, det)
        a = (np.real(resid) * m22 - np.imag(resid) * m12) / det
        b = (m11 * np.imag(resid) - m21 * np.real(resid)) / det
        return a + 1j * b

    c = solve_own(y, dp, dm)
    for _ in range(n_iter):
        interference = c @ wp + np.conj(c) @ wm - (c * dp + np.conj(c) * dm)
        c = solve_own(y - interference, dp, dm)
    return c, k_star


def _estimate_noise_floor(mags, k_star, half):
    mask = np.ones(half, dtype=bool)
    for k in k_star:
        lo, hi = max(0, k - 2), min(half, k + 3)
        mask[lo:hi] = False
    rest = mags[mask]
    if rest.size == 0:
        return 0.0
    return float(np.median(rest))


def analyze_frames(
    signal: AudioBuffer,
    frame_len: int = 1024,
    *,
    hop: int | None = None,
    lpc_order: int = 18,
    fmin: float = 60.0,
    fmax: float = 500.0,
) -> list[FrameParams]:
    """Frame-based ODFT parametric analysis.

    Splits the signal into `frame_len`-sample frames at 50% overlap,
    windows each with the square-root shifted Hanning window, and for
    every voiced frame estimates f0, per-harmonic magnitudes and phases
    (refined jointly across harmonics and, for the fundamental frequency,
    across neighboring frames via phase differences), the NRD vector, and
    an LPC magnitude envelope.  Unvoiced frames are flagged and carry no
    parameters.
    """
    n = int(frame_len)
    hop = n // 2 if hop is None else int(hop)
    x = signal.samples
    if x.size < n:
        raise ValueError(f"signal shorter than one frame ({x.size} < {n})")
    w = make_sqrt_shifted_hanning(n)
    half = n // 2
    rate = signal.sample_rate

    offsets = list(range(0, x.size - n + 1, hop))
    spectra = []
    coarse_f0 = []
    for off in offsets:
        spec = odft(x[off : off + n] * w)
        spectra.append(spec)
        coarse_f0.append(estimate_pitch_frame(spec, rate, fmin=fmin, fmax=fmax))

    def harmonic_count_for(omega0):
        count = int(np.floor(0.98 * np.pi / omega0))
        return max(1, min(count, n // 3))

    omega = [TWO_PI * f0 / rate if f0 else 0.0 for f0 in coarse_f0]
    cs: list[np.ndarray | None] = []
    bins: list[np.ndarray | None] = []
    for m, spec in enumerate(spectra):
        if omega[m] <= 0.0:
            cs.append(None)
            bins.append(None)
            continue
        count = harmonic_count_for(omega[m])
        c, k_star = _solve_harmonics(spec, omega[m], count, n)
        cs.append(c)
        bins.append(k_star)

    # Cross-frame refinement of omega0 from harmonic phase advances.
    refined = list(omega)
    pair_est: dict[int, float] = {}
    for m in range(len(offsets) - 1):
        if cs[m] is None or cs[m + 1] is None:
            continue
        if abs(omega[m + 1] - omega[m]) > 0.03 * omega[m]:
            continue
        count = min(cs[m].size, cs[m + 1].size)
        q = np.abs(cs[m][:count]) * np.abs(cs[m + 1][:count])
        strong = q > 0.0003 * q.max()
        if strong.sum() < 1:
            continue
        ell1 = np.arange(1, count + 1)[strong]
        qs = q[strong]
        w_mid = 0.5 * (omega[m] + omega[m + 1]) * ell1
        dphi = np.angle(cs[m + 1][:count][strong]) - np.angle(cs[m][:count][strong])
        k = np.round((w_mid * hop - dphi) / TWO_PI)
        w_hat = (dphi + TWO_PI * k) / hop
        est = float(np.sum(qs * ell1 * w_hat) / np.sum(qs * ell1**2))
        resid = w_hat - ell1 * est
        spread = np.sqrt(np.sum(qs * resid**2) / np.sum(qs))
        if est > 0 and spread < 0.02 * est and abs(est - omega[m]) < 0.02 * omega[m]:
            pair_est[m] = est
    for m in range(len(offsets)):
        parts = [pair_est[j] for j in (m - 1, m) if j in pair_est]
        if parts:
            refined[m] = float(np.mean(parts))

    frames = []
    for m, off in enumerate(offsets):
        if omega[m] <= 0.0:
            frames.append(FrameParams(frame_index=m, voiced=False))
            continue
        w0 = refined[m]
        count = harmonic_count_for(w0)
        c, k_star = _solve_harmonics(spectra[m], w0, count, n)
        amps = 2.0 * np.abs(c)
        phases = np.angle(c) + np.pi / 2
        mags_abs = np.abs(spectra[m][:half])
        floor = _estimate_noise_floor(mags_abs, k_star, half)
        with np.errstate(divide="ignore"):
            snr_db = 20.0 * np.log10(np.abs(spectra[m][k_star]) / floor) if floor > 0 else np.full(count, np.inf)
        # trailing harmonics at or under the frame's noise floor are not
        # measurements; keep the contiguous run up to the last solid one
        solid = np.flatnonzero(snr_db > 12.0)
        if solid.size == 0:
            frames.append(FrameParams(frame_index=m, voiced=False))
            continue
        count = int(solid[-1]) + 1
        amps, phases, snr_db, k_star = amps[:count], phases[:count], snr_db[:count], k_star[:count]
        try:
            envelope = fit_lpc_envelope(amps, w0, lpc_order)
        except ValueError:
            frames.append(FrameParams(frame_index=m, voiced=False))
            continue
        frames.append(
            FrameParams(
                frame_index=m,
                voiced=True,
                omega0=w0,
                a0=float(amps[0]),
                phi0=float(phases[0]),
                nrd=nrd_from_phases(phases),
                magnitudes=amps,
                envelope=envelope,
                harmonic_snr_db=np.asarray(snr_db, dtype=np.float64),
            )
        )
    return frames
