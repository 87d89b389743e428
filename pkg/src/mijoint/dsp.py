"""Bandpass filtering, protocol-timed epoching and per-epoch 0-1 scaling."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy import signal

from .errors import IntegrityError, ParameterError
from .ingest import FS, MIN_SAMPLES, RawTrial

EPOCH_LEN = 500


class EpochClass(str, Enum):
    BACKGROUND = "Background"
    TRANSITIONAL = "Transitional"
    PURE = "PureImagery"


# start sample of each 2 s window: 0-2 s, 3-5 s, 4-6 s at 250 Hz
WINDOW_START = {
    EpochClass.BACKGROUND: 0,
    EpochClass.TRANSITIONAL: 750,
    EpochClass.PURE: 1000,
}


@dataclass(frozen=True, eq=False)
class Epoch:
    samples: np.ndarray = field(repr=False)  # (500, 3): time x channel
    label: EpochClass
    subject_id: int
    trial_id: int
    session: int = 0

    def __post_init__(self):
        if self.samples.shape != (EPOCH_LEN, 3):
            raise IntegrityError(f"epoch must be {EPOCH_LEN}x3, got {self.samples.shape}")

    @property
    def trial_key(self) -> tuple[int, int, int]:
        return (self.subject_id, self.session, self.trial_id)


@dataclass(frozen=True)
class BandpassSpec:
    low_hz: float = 7.0
    high_hz: float = 30.0
    order: int = 4
    fs: float = FS

    def validate(self) -> None:
        if not 0 < self.low_hz < self.high_hz < self.fs / 2:
            raise ParameterError(
                f"need 0 < low_hz < high_hz < fs/2, got {self.low_hz}, {self.high_hz}, fs={self.fs}"
            )
        if self.order < 1:
            raise ParameterError(f"filter order must be >= 1, got {self.order}")

    def sos(self) -> np.ndarray:
        self.validate()
        return signal.butter(
            self.order, [self.low_hz, self.high_hz], btype="bandpass", fs=self.fs, output="sos"
        )


def filtfilt(x: np.ndarray, spec: BandpassSpec, axis: int = -1) -> np.ndarray:
    """Zero-phase Butterworth bandpass along ``axis``.

    The bandpass transfer function has order ``2 * spec.order``; the signal is
    mirror-padded by three times that many samples at each end.
    """
    sos = spec.sos()
    padlen = 3 * 2 * spec.order
    return signal.sosfiltfilt(sos, x, axis=axis, padtype="even", padlen=padlen)


def bandpass_filtfilt(trial: RawTrial, spec: BandpassSpec = BandpassSpec()) -> RawTrial:
    return trial.with_samples(filtfilt(trial.samples, spec, axis=1))


def extract_epochs(trial: RawTrial) -> list[Epoch]:
    """Cut background, transitional and pure-imagery windows (unscaled)."""
    if trial.n_samples < MIN_SAMPLES:
        raise IntegrityError(
            f"trial {trial.trial_id} has {trial.n_samples} samples, needs {MIN_SAMPLES}"
        )
    out = []
    for label, start in WINDOW_START.items():
        out.append(
            Epoch(
                samples=np.ascontiguousarray(trial.samples[:, start : start + EPOCH_LEN].T),
                label=label,
                subject_id=trial.subject_id,
                trial_id=trial.trial_id,
                session=trial.session,
            )
        )
    return out


def minmax01(x: np.ndarray, axis: int = 0) -> np.ndarray:
    """Min-max scale along ``axis``; constant slices map to 0.5."""
    x = np.asarray(x, dtype=np.float64)
    lo = x.min(axis=axis, keepdims=True)
    span = x.max(axis=axis, keepdims=True) - lo
    flat = span == 0
    out = (x - lo) / np.where(flat, 1.0, span)
    return np.where(flat, 0.5, out)


def standardize01(epoch: Epoch) -> Epoch:
    return Epoch(
        samples=minmax01(epoch.samples, axis=0),
        label=epoch.label,
        subject_id=epoch.subject_id,
        trial_id=epoch.trial_id,
        session=epoch.session,
    )


def preprocess(trials, spec: BandpassSpec = BandpassSpec()) -> dict[EpochClass, list[Epoch]]:
    """Filter each trial, cut its three windows and scale them; pooled by class."""
    pools: dict[EpochClass, list[Epoch]] = {c: [] for c in EpochClass}
    for trial in trials:
        for ep in extract_epochs(bandpass_filtfilt(trial, spec)):
            pools[ep.label].append(standardize01(ep))
    return pools
