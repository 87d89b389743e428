"""Trial loading, artifact rejection and the synthetic ERD/ERS generator."""

from __future__ import annotations

import io
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import pandas as pd

from .errors import FormatError, IntegrityError, ParameterError

FS = 250
CHANNELS = ("C3", "Cz", "C4")
MIN_SAMPLES = 1500  # 6 s, the end of the pure-imagery window
SYNTH_SAMPLES = 2250  # 9 s
HEADER = ("subject", "session", "trial", "cue", "artifact", "sample", "c3", "cz", "c4")

# beta rhythm amplitude relative to mu
BETA_RATIO = 0.5


@dataclass(frozen=True, eq=False)
class RawTrial:
    """One continuous recording of a protocol trial, channels (C3, Cz, C4) x time."""

    subject_id: int
    session: int
    trial_id: int
    cue: str  # "Left" or "Right"
    artifact: bool
    samples: np.ndarray = field(repr=False)

    def __post_init__(self):
        x = np.array(self.samples, dtype=np.float64)
        if x.ndim != 2 or x.shape[0] != len(CHANNELS):
            raise IntegrityError(
                f"trial {self.trial_id}: expected {len(CHANNELS)} channels, got shape {x.shape}"
            )
        if x.shape[1] < MIN_SAMPLES:
            raise IntegrityError(
                f"trial {self.trial_id} (subject {self.subject_id}) has {x.shape[1]} samples,"
                f" needs at least {MIN_SAMPLES}"
            )
        if self.cue not in ("Left", "Right"):
            raise IntegrityError(f"trial {self.trial_id}: unknown cue {self.cue!r}")
        x.flags.writeable = False
        object.__setattr__(self, "samples", x)

    @property
    def n_samples(self) -> int:
        return self.samples.shape[1]

    @property
    def key(self) -> tuple[int, int, int]:
        return (self.subject_id, self.session, self.trial_id)

    def with_samples(self, samples: np.ndarray) -> "RawTrial":
        return replace(self, samples=samples)


@dataclass(frozen=True)
class SynthParams:
    """Knobs of the synthetic surrogate.

    ``mu_amp`` and ``noise_amp`` set the signal-to-noise ratio; ``amp_jitter``
    is the log-normal spread of the per-trial rhythm amplitude, which is what
    keeps single-trial classification away from ceiling. ``noise_coupling``
    is the fraction of background-noise variance common to all electrodes
    (volume conduction); per-channel rescaling preserves the resulting
    inter-channel correlation, so spatial filters have something to find.
    ``onset_jitter`` is the spread (seconds, uniform from 0) of the per-trial
    delay before the mu descent begins; 0 gives the fixed 3-4 s ramp.
    """

    n_subjects: int = 9
    trials_per_subject: int = 280
    mu_freq: float = 10.0
    beta_freq: float = 20.0
    mu_amp: float = 1.0
    erd_depth: float = 0.6
    noise_exponent: float = 1.0
    rng_seed: int = 0
    noise_amp: float = 1.5
    amp_jitter: float = 0.1
    noise_coupling: float = 0.5
    artifact_rate: float = 0.0
    onset_jitter: float = 0.0

    def validate(self) -> None:
        if self.n_subjects < 1 or self.trials_per_subject < 1:
            raise ParameterError("n_subjects and trials_per_subject must be positive")
        if not 0.0 <= self.erd_depth <= 1.0:
            raise ParameterError(f"erd_depth must lie in [0, 1], got {self.erd_depth}")
        for name in ("mu_freq", "beta_freq"):
            f = getattr(self, name)
            if not 7.0 <= f <= 30.0:
                raise ParameterError(f"{name}={f} Hz is outside the 7-30 Hz passband")
        if self.mu_amp < 0 or self.noise_amp < 0 or self.amp_jitter < 0:
            raise ParameterError("amplitudes and jitter must be non-negative")
        if not 0.0 <= self.noise_coupling <= 1.0:
            raise ParameterError("noise_coupling must lie in [0, 1]")
        if not 0.0 <= self.artifact_rate <= 1.0:
            raise ParameterError("artifact_rate must lie in [0, 1]")
        if not 0.0 <= self.onset_jitter <= 2.0:
            raise ParameterError("onset_jitter must lie in [0, 2] s")
        if not 0 <= self.rng_seed < 2**64:
            raise ParameterError("rng_seed must be an unsigned 64-bit integer")


def reject_artifacts(trials: Iterable[RawTrial]) -> list[RawTrial]:
    return [t for t in trials if not t.artifact]


def pink_noise(rng: np.random.Generator, n: int, exponent: float) -> np.ndarray:
    """Unit-RMS noise with power spectral density proportional to 1/f**exponent."""
    spectrum = np.fft.rfft(rng.standard_normal(n))
    freqs = np.fft.rfftfreq(n)
    gain = np.zeros_like(freqs)
    gain[1:] = freqs[1:] ** (-exponent / 2.0)
    x = np.fft.irfft(spectrum * gain, n)
    x -= x.mean()
    rms = np.sqrt(np.mean(x**2))
    return x / rms if rms > 0 else x


def erd_envelope(n: int, depth: float, fs: int = FS, onset: float = 0.0) -> np.ndarray:
    """Mu amplitude profile of the contralateral channel.

    Full amplitude until 3 s, linear descent to ``1 - depth`` at 4 s, flat
    through 6 s, linear recovery over 6-7 s. ``onset`` delays the descent
    by that many seconds; the recovery stays at 6 s.
    """
    if not 0.0 <= onset <= 2.0:
        raise ParameterError(f"onset delay must lie in [0, 2] s, got {onset}")
    t = np.arange(n) / fs
    floor = 1.0 - depth
    return np.interp(t, [0.0, 3.0 + onset, 4.0 + onset, 6.0, 7.0], [1.0, 1.0, floor, floor, 1.0])


def _synth_trial(rng: np.random.Generator, p: SynthParams, cue: str) -> np.ndarray:
    n = SYNTH_SAMPLES
    t = np.arange(n) / FS
    contra = 0 if cue == "Right" else 2
    # imagery starts after a per-trial latency; zero spread draws nothing
    onset = rng.uniform(0.0, p.onset_jitter) if p.onset_jitter > 0 else 0.0
    envelope = erd_envelope(n, p.erd_depth, onset=onset)
    common = pink_noise(rng, n, p.noise_exponent)
    shared, own = np.sqrt(p.noise_coupling), np.sqrt(1.0 - p.noise_coupling)
    # one rhythm generator per trial, seen by every electrode
    mu_phase, beta_phase = rng.uniform(0.0, 2 * np.pi, size=2)
    x = np.empty((len(CHANNELS), n))
    for ch in range(len(CHANNELS)):
        jitter = np.exp(p.amp_jitter * rng.standard_normal(2))
        mu = p.mu_amp * jitter[0] * np.sin(2 * np.pi * p.mu_freq * t + mu_phase)
        beta = BETA_RATIO * p.mu_amp * jitter[1] * np.sin(2 * np.pi * p.beta_freq * t + beta_phase)
        if ch == contra:
            mu = mu * envelope
        noise = shared * common + own * pink_noise(rng, n, p.noise_exponent)
        x[ch] = p.noise_amp * noise + mu + beta
    return x


def generate_synthetic(params: SynthParams) -> list[RawTrial]:
    params.validate()
    rng = np.random.default_rng(params.rng_seed)
    n = params.trials_per_subject
    trials = []
    for subject in range(1, params.n_subjects + 1):
        for i in range(n):
            cue = "Left" if i % 2 == 0 else "Right"
            samples = _synth_trial(rng, params, cue)
            artifact = bool(rng.random() < params.artifact_rate)
            trials.append(
                RawTrial(
                    subject_id=subject,
                    session=1 + (5 * i) // n,
                    trial_id=i,
                    cue=cue,
                    artifact=artifact,
                    samples=samples,
                )
            )
    return trials


def write_dataset(trials: Sequence[RawTrial], path: str | Path, fs: int = FS) -> None:
    """Write trials in the long CSV container (17 significant digits, bit-exact)."""
    frames = []
    for tr in trials:
        n = tr.n_samples
        frames.append(
            pd.DataFrame(
                {
                    "subject": np.full(n, tr.subject_id),
                    "session": np.full(n, tr.session),
                    "trial": np.full(n, tr.trial_id),
                    "cue": tr.cue[0],
                    "artifact": np.full(n, int(tr.artifact)),
                    "sample": np.arange(n),
                    "c3": tr.samples[0],
                    "cz": tr.samples[1],
                    "c4": tr.samples[2],
                }
            )
        )
    df = pd.concat(frames, ignore_index=True) if frames else pd.DataFrame(columns=list(HEADER))
    buf = io.StringIO()
    buf.write(f"# fs={fs}\n")
    df.to_csv(buf, index=False, float_format="%.17g", lineterminator="\n")
    Path(path).write_text(buf.getvalue(), encoding="utf-8", newline="")


def _read_fs(first_line: str) -> int:
    line = first_line.strip()
    if not line.startswith("#") or "fs=" not in line:
        raise FormatError("first line must be the metadata comment '# fs=250'")
    try:
        fs = int(line.split("fs=", 1)[1].strip())
    except ValueError as exc:
        raise FormatError(f"cannot parse sampling rate from {line!r}") from exc
    if fs != FS:
        raise FormatError(f"sampling rate must be {FS} Hz, file declares {fs}")
    return fs


def load_dataset(path: str | Path) -> tuple[list[RawTrial], int]:
    """Read the CSV container. Returns the trials sorted by (subject, session, trial) and fs."""
    path = Path(path)
    with path.open("r", encoding="utf-8") as fh:
        fs = _read_fs(fh.readline())
        header = fh.readline().rstrip("\n").split(",")
    for i, expected in enumerate(HEADER):
        got = header[i] if i < len(header) else "<missing>"
        if got != expected:
            raise FormatError(f"header column {i} is {got!r}, expected {expected!r}")
    if len(header) != len(HEADER):
        raise FormatError(f"unexpected extra column {header[len(HEADER)]!r}")

    try:
        df = pd.read_csv(
            path,
            skiprows=1,
            dtype={"cue": str},
            float_precision="round_trip",
            keep_default_na=False,
        )
    except ValueError as exc:
        raise FormatError(str(exc)) from exc
    for col in ("subject", "session", "trial", "artifact", "sample"):
        if not pd.api.types.is_integer_dtype(df[col]):
            raise FormatError(f"column {col!r} must hold integers")
    for col in ("c3", "cz", "c4"):
        if not pd.api.types.is_float_dtype(df[col]) and not pd.api.types.is_integer_dtype(df[col]):
            raise FormatError(f"column {col!r} must hold numbers")
    bad_cue = ~df["cue"].isin(["L", "R"])
    if bad_cue.any():
        raise FormatError(f"column 'cue' has invalid value {df['cue'][bad_cue].iloc[0]!r}")
    if not df["artifact"].isin([0, 1]).all():
        raise FormatError("column 'artifact' must be 0 or 1")

    trials = []
    for (subject, session, trial), g in df.groupby(["subject", "session", "trial"], sort=True):
        idx = g["sample"].to_numpy()
        if not np.array_equal(idx, np.arange(len(idx))):
            raise IntegrityError(
                f"trial {trial} (subject {subject}, session {session}): sample indices"
                " are not contiguous and increasing from 0"
            )
        if g["cue"].nunique() != 1 or g["artifact"].nunique() != 1:
            raise IntegrityError(f"trial {trial}: cue/artifact flags vary within the trial")
        samples = g[["c3", "cz", "c4"]].to_numpy(dtype=np.float64).T
        if len(idx) < MIN_SAMPLES:
            raise IntegrityError(
                f"trial {trial} (subject {subject}) has {len(idx)} samples, needs {MIN_SAMPLES}"
            )
        trials.append(
            RawTrial(
                subject_id=int(subject),
                session=int(session),
                trial_id=int(trial),
                cue="Left" if g["cue"].iloc[0] == "L" else "Right",
                artifact=bool(g["artifact"].iloc[0]),
                samples=samples,
            )
        )
    return trials, fs
