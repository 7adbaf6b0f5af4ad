"""Preprocessing: common-average reference, high-gamma envelope, epoching."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import EpochBoundsError, InvalidInputError

HIGH_GAMMA_BAND = (70.0, 150.0)
PRE_ONSET_S = 0.25
EPOCH_S = 0.75
BASELINE_EPS = 1e-8


class SignalKind(str, enum.Enum):
    RAW = "raw"
    HIGH_GAMMA = "high_gamma"


@dataclass(frozen=True, eq=False)
class TrialEpoch:
    electrode: int
    trial_id: int
    samples: np.ndarray


def epoch_geometry(sample_rate: float) -> tuple[int, int]:
    """Return (pre-onset sample count, epoch length M)."""
    return math.ceil(PRE_ONSET_S * sample_rate), int(round(EPOCH_S * sample_rate))


def common_average_reference(samples) -> np.ndarray:
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise InvalidInputError(f"CAR needs a [L>=2 x T] matrix, got shape {x.shape}")
    return x - x.mean(axis=0, keepdims=True)


def high_gamma_envelope(samples, sample_rate: float, band=HIGH_GAMMA_BAND) -> np.ndarray:
    """Analytic amplitude of the band-limited signal, per row.

    The band-pass is a brick wall in the frequency domain: every positive
    frequency bin inside ``band`` is kept (doubled), everything else including
    the negative half is zeroed, so the inverse FFT is directly the analytic
    signal of the band-passed channel.
    """
    lo, hi = band
    if not sample_rate > 2 * hi:
        raise InvalidInputError(
            f"sample_rate {sample_rate} Hz leaves the {hi:g} Hz band edge at or above Nyquist"
        )
    x = np.atleast_2d(np.asarray(samples, dtype=np.float64))
    n = x.shape[-1]
    freqs = np.fft.fftfreq(n, d=1.0 / sample_rate)
    gain = np.where((freqs >= lo) & (freqs <= hi), 2.0, 0.0)
    analytic = np.fft.ifft(np.fft.fft(x, axis=-1) * gain, axis=-1)
    env = np.abs(analytic)
    return env if np.ndim(samples) == 2 else env[0]


def epoch_and_normalize(
    channel,
    onsets: Sequence[int],
    sample_rate: float,
    trial_ids: Sequence[int] | None = None,
    electrode: int = 0,
) -> list[TrialEpoch]:
    """Cut onset-locked windows and express them relative to the baseline mean.

    Each epoch spans 250 ms before to 500 ms after onset; values become
    ``(x - mu) / (|mu| + 1e-8)`` with ``mu`` the pre-onset mean.
    """
    x = np.asarray(channel, dtype=np.float64)
    if trial_ids is None:
        trial_ids = list(range(len(onsets)))
    windows = epoch_matrix(x[None, :], onsets, sample_rate, trial_ids)[:, 0, :]
    return [TrialEpoch(electrode, int(t), w) for t, w in zip(trial_ids, windows)]


def epoch_matrix(samples: np.ndarray, onsets, sample_rate: float, trial_ids=None) -> np.ndarray:
    """Vectorised epoching of all rows: returns [n_trials x L x M]."""
    x = np.asarray(samples, dtype=np.float64)
    n_pre, m = epoch_geometry(sample_rate)
    onsets = np.asarray(onsets, dtype=int)
    if trial_ids is None:
        trial_ids = list(range(len(onsets)))
    starts = onsets - n_pre
    bad = [int(t) for t, s in zip(trial_ids, starts) if s < 0 or s + m > x.shape[-1]]
    if bad:
        raise EpochBoundsError(bad)
    idx = starts[:, None] + np.arange(m)[None, :]
    ep = np.transpose(x[:, idx], (1, 0, 2))  # [n, L, M]
    base = ep[:, :, :n_pre].mean(axis=-1, keepdims=True)
    return (ep - base) / (np.abs(base) + BASELINE_EPS)


def preprocess_recording(samples: np.ndarray, onsets, sample_rate: float, kind=SignalKind.HIGH_GAMMA, trial_ids=None):
    """CAR -> optional high-gamma envelope -> epoch/normalize; returns [n x L x M]."""
    x = common_average_reference(samples)
    if SignalKind(kind) is SignalKind.HIGH_GAMMA:
        x = high_gamma_envelope(x, sample_rate)
    return epoch_matrix(x, onsets, sample_rate, trial_ids)
