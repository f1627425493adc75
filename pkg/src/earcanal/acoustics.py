"""Impulse-response measurement chain and acoustic similarity.

A maximum length sequence (MLS) excites the acoustic plant; the plant's
impulse response is recovered by synchronous averaging of the repeated
periods followed by circular cross-correlation.  The recovered response
is then reduced to a comparable feature: leading dead time is trimmed,
the minimum-phase equivalent is taken (a canal response is minimum phase,
and this removes residual alignment differences between takes), the band
of interest is isolated with a Butterworth bandpass, and the result is
truncated to a common length and scaled to unit power.  Features are
compared with cosine similarity.

Stage order for :class:`ImpulseResponse` values is raw, trimmed,
min_phase, bandpassed, normalized; each operation only accepts input
from an earlier stage, so a pipeline cannot run backwards by accident.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.signal import butter, fftconvolve, lfilter, max_len_seq

SAMPLE_RATE = 44100

STAGES = ("raw", "trimmed", "min_phase", "bandpassed", "normalized")
_STAGE_ORDER = {s: i for i, s in enumerate(STAGES)}

MIN_PHASE_FLOOR = 1e-10


@dataclass(frozen=True)
class ExcitationSignal:
    """Maximum length sequence mapped to +-1, of length 2**order - 1.

    Circular autocorrelation is two-valued: ``length`` at lag 0 and -1 at
    every other lag, which is what makes circular cross-correlation an
    exact deconvolver.
    """

    samples: np.ndarray
    order: int
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self) -> None:
        s = np.ascontiguousarray(self.samples, dtype=np.float64)
        if s.ndim != 1:
            raise ValueError("excitation samples must be a 1D sequence")
        if s.shape[0] != 2**self.order - 1:
            raise ValueError(
                f"length {s.shape[0]} does not equal 2**{self.order} - 1"
            )
        if not np.all(np.abs(s) == 1.0):
            raise ValueError("excitation samples must all be +1 or -1")
        s.flags.writeable = False
        object.__setattr__(self, "samples", s)

    @property
    def length(self) -> int:
        return self.samples.shape[0]


@dataclass(frozen=True)
class ImpulseResponse:
    """Real impulse response at a known processing stage."""

    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE
    stage: str = "raw"

    def __post_init__(self) -> None:
        s = np.ascontiguousarray(self.samples, dtype=np.float64)
        if s.ndim != 1 or s.shape[0] < 1:
            raise ValueError("impulse response must be a nonempty 1D sequence")
        if not np.isfinite(s).all():
            raise ValueError("impulse response contains non-finite samples")
        if self.stage not in _STAGE_ORDER:
            raise ValueError(f"unknown stage {self.stage!r}, expected one of {STAGES}")
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be positive")
        s.flags.writeable = False
        object.__setattr__(self, "samples", s)

    def __len__(self) -> int:
        return self.samples.shape[0]


@dataclass(frozen=True)
class AcousticFeature:
    """Unit-power response feature ready for similarity comparison."""

    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE
    subject_id: str | None = None
    take_index: int | None = None

    def __post_init__(self) -> None:
        s = np.ascontiguousarray(self.samples, dtype=np.float64)
        if s.ndim != 1 or s.shape[0] < 1:
            raise ValueError("feature must be a nonempty 1D sequence")
        power = float(np.sum(s * s))
        if abs(power - 1.0) > 1e-9:
            raise ValueError(f"feature power must be 1, got {power!r}")
        s.flags.writeable = False
        object.__setattr__(self, "samples", s)

    def __len__(self) -> int:
        return self.samples.shape[0]


def _require_stage_before(ir: ImpulseResponse, new_stage: str) -> None:
    if _STAGE_ORDER[ir.stage] >= _STAGE_ORDER[new_stage]:
        raise ValueError(
            f"cannot move a {ir.stage!r} response to earlier-or-same stage {new_stage!r}"
        )


def generate_mls(order: int, sample_rate: int = SAMPLE_RATE) -> ExcitationSignal:
    """Maximum length sequence from a linear-feedback shift register.

    ``order`` is the register length m; the sequence has period 2**m - 1.
    Orders 2 through 24 have known primitive feedback taps.  The register
    starts from the all-ones state, so the sequence for a given order is
    a fixed, reproducible signal.
    """
    if not (2 <= int(order) <= 24):
        raise ValueError(f"order must be between 2 and 24, got {order}")
    bits, _state = max_len_seq(int(order))
    return ExcitationSignal(bits.astype(np.float64) * 2.0 - 1.0, int(order), sample_rate)


def simulate_measurement(
    excitation: ExcitationSignal,
    plant,
    repeats: int = 5,
    noise_rms: float = 0.0,
    rng=None,
) -> np.ndarray:
    """Play ``repeats + 1`` excitation periods through a linear plant.

    The plant starts from rest, so the first emitted period carries its
    charge-up transient; every later period equals the circular
    convolution of one excitation period with the plant, which is what
    the recovery step relies on after discarding the first period.
    Additive white Gaussian noise of the given RMS models the microphone
    chain.
    """
    h = plant.samples if isinstance(plant, ImpulseResponse) else np.asarray(plant, dtype=np.float64)
    length = excitation.length
    if h.ndim != 1 or h.shape[0] < 1:
        raise ValueError("plant must be a nonempty 1D impulse response")
    if h.shape[0] > length:
        raise ValueError(
            f"plant ({h.shape[0]} taps) must not exceed one excitation period ({length})"
        )
    if repeats < 1:
        raise ValueError(f"repeats must be at least 1, got {repeats}")
    x = np.tile(excitation.samples, repeats + 1)
    y = fftconvolve(x, h)[: x.shape[0]]
    if noise_rms < 0:
        raise ValueError("noise_rms must be nonnegative")
    if noise_rms > 0:
        if rng is None:
            raise ValueError("noise_rms > 0 requires an rng seed or Generator")
        gen = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
        y = y + gen.normal(0.0, noise_rms, size=y.shape)
    return y


def recover_impulse_response(
    recorded: np.ndarray,
    excitation: ExcitationSignal,
    repeats: int = 5,
) -> ImpulseResponse:
    """Recover the plant impulse response from a repeated-MLS recording.

    The first period is discarded as warm-up; the remaining ``repeats``
    periods are averaged sample-wise (synchronous addition, suppressing
    uncorrelated noise by 1/sqrt(repeats)); circular cross-correlation
    with the excitation then inverts the convolution.  Because the MLS
    autocorrelation's off-peak value is -1 rather than 0, the correlation
    scaled by 1/(length+1) recovers every tap offset by -sum(h)/(length+1);
    the offset is removed exactly by adding the sum of the biased estimate
    (the bias makes that sum equal sum(h)/(length+1)).
    """
    rec = np.asarray(recorded, dtype=np.float64)
    length = excitation.length
    if repeats < 1:
        raise ValueError(f"repeats must be at least 1, got {repeats}")
    need = (repeats + 1) * length
    if rec.ndim != 1 or rec.shape[0] < need:
        raise ValueError(
            f"recording holds {rec.shape[0]} samples, need at least {need} "
            f"({repeats + 1} periods of {length})"
        )
    avg = rec[length:need].reshape(repeats, length).mean(axis=0)
    spec = np.fft.rfft(avg) * np.conj(np.fft.rfft(excitation.samples))
    corr = np.fft.irfft(spec, n=length) / (length + 1)
    h = corr + corr.sum()
    return ImpulseResponse(h, excitation.sample_rate, "raw")


def trim_pre_rise(ir: ImpulseResponse, threshold_fraction: float = 0.05) -> ImpulseResponse:
    """Drop everything before the response rises above a peak fraction.

    The cut lands at the first sample whose magnitude reaches
    ``threshold_fraction`` of the peak magnitude, so takes with different
    acoustic/latency delays align to a common start.
    """
    _require_stage_before(ir, "trimmed")
    if not (0.0 < threshold_fraction < 1.0):
        raise ValueError(f"threshold_fraction must be in (0, 1), got {threshold_fraction}")
    mags = np.abs(ir.samples)
    peak = mags.max()
    if peak == 0.0:
        raise ValueError("cannot trim an all-zero response")
    start = int(np.argmax(mags >= threshold_fraction * peak))
    return ImpulseResponse(ir.samples[start:], ir.sample_rate, "trimmed")


def _next_pow2(n: int) -> int:
    return 1 << max(0, int(n - 1).bit_length())


def minimum_phase(ir: ImpulseResponse, n_fft: int | None = None) -> ImpulseResponse:
    """Minimum-phase sequence with the same magnitude spectrum.

    The log magnitude and the phase of a minimum-phase system form a
    Hilbert-transform pair; folding the real cepstrum onto its causal
    half realizes that relation without an explicit Hilbert kernel.
    Magnitude bins below ``MIN_PHASE_FLOOR`` of the peak are clamped
    before the log, the standard safeguard against true spectral nulls.

    ``n_fft`` controls cepstral aliasing and defaults to 8x the input
    length rounded up to a power of two (at least 4096); the output keeps
    the full n_fft length so its magnitude spectrum can be compared
    bin-for-bin against the padded input.
    """
    _require_stage_before(ir, "min_phase")
    n = len(ir)
    if n_fft is None:
        n_fft = max(4096, _next_pow2(8 * n))
    elif n_fft < n:
        raise ValueError(f"n_fft {n_fft} is shorter than the response ({n} samples)")
    mag = np.abs(np.fft.fft(ir.samples, n_fft))
    peak = mag.max()
    if peak == 0.0:
        raise ValueError("cannot take the minimum phase of a zero-energy response")
    cep = np.fft.ifft(np.log(np.maximum(mag, MIN_PHASE_FLOOR * peak))).real
    fold = np.zeros(n_fft)
    fold[0] = cep[0]
    fold[1 : (n_fft + 1) // 2] = 2.0 * cep[1 : (n_fft + 1) // 2]
    if n_fft % 2 == 0:
        fold[n_fft // 2] = cep[n_fft // 2]
    out = np.fft.ifft(np.exp(np.fft.fft(fold))).real
    return ImpulseResponse(out, ir.sample_rate, "min_phase")


def applied_band(sample_rate: int, low_hz: float, high_hz: float) -> tuple:
    """Resolve requested band edges against the Nyquist limit.

    Returns ``(low, high, clamped)``.  A high edge in the top 1% below
    Nyquist is clamped to 0.99*Nyquist, where the bilinear design is
    still well conditioned; an edge at or beyond Nyquist is an error
    rather than a clamp.
    """
    nyq = sample_rate / 2.0
    if low_hz <= 0:
        raise ValueError(f"low edge must be positive, got {low_hz}")
    if high_hz >= nyq:
        raise ValueError(f"high edge {high_hz} Hz is at or beyond Nyquist ({nyq} Hz)")
    high = min(high_hz, 0.99 * nyq)
    if low_hz >= high:
        raise ValueError(f"band edges out of order: ({low_hz}, {high_hz}) at fs {sample_rate}")
    return float(low_hz), float(high), high != high_hz


def butterworth_bandpass(
    ir: ImpulseResponse,
    low_hz: float = 100.0,
    high_hz: float = 22000.0,
    filter_order: int = 4,
) -> ImpulseResponse:
    """Forward-only digital Butterworth bandpass.

    ``filter_order`` is the total bandpass order (poles), so it must be
    even; the -3 dB points land on the requested edges because the
    bilinear transform pre-warps the design frequencies.
    """
    _require_stage_before(ir, "bandpassed")
    if filter_order < 2 or filter_order % 2 != 0:
        raise ValueError(f"filter_order must be a positive even integer, got {filter_order}")
    low, high, _clamped = applied_band(ir.sample_rate, low_hz, high_hz)
    b, a = butter(filter_order // 2, [low, high], btype="bandpass", fs=ir.sample_rate)
    return ImpulseResponse(lfilter(b, a, ir.samples), ir.sample_rate, "bandpassed")


def normalize_power(
    ir: ImpulseResponse,
    subject_id: str | None = None,
    take_index: int | None = None,
) -> AcousticFeature:
    """Scale so the total signal power sums to exactly 1."""
    _require_stage_before(ir, "normalized")
    power = float(np.sum(ir.samples * ir.samples))
    if power == 0.0:
        raise ValueError("cannot normalize a zero-energy response")
    return AcousticFeature(ir.samples / np.sqrt(power), ir.sample_rate, subject_id, take_index)


def response_feature(
    ir: ImpulseResponse,
    trim_threshold: float = 0.05,
    low_hz: float = 100.0,
    high_hz: float = 22000.0,
    filter_order: int = 4,
    feature_length: int = 2048,
    n_fft: int | None = None,
    subject_id: str | None = None,
    take_index: int | None = None,
) -> AcousticFeature:
    """Full feature chain: trim, minimum phase, bandpass, fixed length,
    unit power.

    Truncation to ``feature_length`` (zero-padding if shorter) happens
    before normalization so the finished feature has unit power over a
    time axis shared by every take.
    """
    if feature_length < 1:
        raise ValueError(f"feature_length must be positive, got {feature_length}")
    out = trim_pre_rise(ir, trim_threshold)
    out = minimum_phase(out, n_fft)
    out = butterworth_bandpass(out, low_hz, high_hz, filter_order)
    x = out.samples[:feature_length]
    if x.shape[0] < feature_length:
        x = np.concatenate([x, np.zeros(feature_length - x.shape[0])])
    return normalize_power(
        ImpulseResponse(x, out.sample_rate, "bandpassed"), subject_id, take_index
    )


def _feature_samples(f) -> np.ndarray:
    if isinstance(f, AcousticFeature):
        return f.samples
    if isinstance(f, ImpulseResponse):
        return f.samples
    return np.asarray(f, dtype=np.float64)


def acoustic_similarity(f_a, f_b, mode: str = "vector") -> float:
    """Cosine similarity between two features, truncated to the shorter.

    ``vector`` mode is the time-aligned cosine of the two sequences.
    ``per_sample`` mode averages the per-sample sign agreement
    ``f_a[n]*f_b[n] / (|f_a[n]|*|f_b[n]|)``, skipping indices where
    either sample is exactly zero; it is the scalar reading of the same
    ratio and is kept for sensitivity experiments.
    """
    a = _feature_samples(f_a)
    b = _feature_samples(f_b)
    n = min(a.shape[0], b.shape[0])
    if n < 1:
        raise ValueError("features must be nonempty")
    a = a[:n]
    b = b[:n]
    if mode == "vector":
        na = float(np.linalg.norm(a))
        nb = float(np.linalg.norm(b))
        if na == 0.0 or nb == 0.0:
            raise ValueError("vector-mode similarity is undefined for a zero-norm operand")
        return float(np.dot(a, b) / (na * nb))
    if mode == "per_sample":
        keep = (a != 0.0) & (b != 0.0)
        if not keep.any():
            raise ValueError("per-sample similarity is undefined when every index has a zero")
        return float(np.mean(np.sign(a[keep]) * np.sign(b[keep])))
    raise ValueError(f"unknown similarity mode {mode!r}")


def acoustic_similarity_matrix(features, mode: str = "vector"):
    """Inter-subject similarity from repeated takes.

    ``features`` is an iterable of ``(subject_id, take_index, feature)``.
    For every unordered subject pair the similarity is computed over all
    cross-subject take pairs; the cell holds their mean, with the
    population standard deviation carried alongside.
    """
    from earcanal.analysis import SimilarityMatrix

    by_subject: dict = {}
    for sid, _take, feat in features:
        by_subject.setdefault(sid, []).append(feat)
    ids = list(by_subject)
    if len(ids) < 2:
        raise ValueError("need at least 2 subjects for a similarity matrix")
    m = len(ids)
    values = np.full((m, m), np.nan)
    stds = np.full((m, m), np.nan)
    for i in range(m):
        for j in range(i + 1, m):
            sims = np.array([
                acoustic_similarity(fa, fb, mode)
                for fa in by_subject[ids[i]]
                for fb in by_subject[ids[j]]
            ])
            values[i, j] = values[j, i] = float(sims.mean())
            stds[i, j] = stds[j, i] = float(sims.std())
    return SimilarityMatrix(tuple(ids), values, kind="acoustic", stds=stds)
