"""Run configuration: a flat ``key = value`` file and seed derivation.

Example::

    # dataset: a CSV container path, or "synth" to generate in memory
    dataset = synth
    synth.n_subjects = 9
    synth.trials_per_subject = 280
    synth.erd_depth = 0.6
    bandpass.low_hz = 7.0
    tasks = 1,2,3,4,5
    classifiers = CNN-FC,CSP-SVM
    seed = 42

Blank lines and ``#`` comments are ignored. Unknown keys are errors.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .dsp import BandpassSpec
from .errors import ConfigError
from .ingest import SynthParams

CLASSIFIER_TAGS = ("CNN-FC", "CSP-SVM")


def derive_seed(master: int, purpose: str) -> int:
    """Stable 64-bit sub-seed for one purpose string."""
    h = hashlib.blake2b(f"{master}:{purpose}".encode("utf-8"), digest_size=8)
    return int.from_bytes(h.digest(), "little")


@dataclass(frozen=True)
class TrainingParams:
    batch_size: int = 64
    max_epochs: int = 100
    patience: int = 10
    svm_c: float = 1.0


@dataclass(frozen=True)
class RunConfig:
    dataset: str = "synth"
    synth: SynthParams = field(default_factory=SynthParams)
    bandpass: BandpassSpec = field(default_factory=BandpassSpec)
    tasks: tuple[int, ...] = (1, 2, 3, 4, 5)
    classifiers: tuple[str, ...] = CLASSIFIER_TAGS
    training: TrainingParams = field(default_factory=TrainingParams)
    seed: int = 0
    out: str = "results"
    run_id: str = ""
    group_by_trial: bool = True
    reject_artifacts: bool = True
    permute_labels: bool = False
    jobs: int = 1

    @property
    def resolved_run_id(self) -> str:
        return self.run_id or f"seed-{self.seed}"

    def synth_params(self) -> SynthParams:
        """Synthetic-data parameters with the generator seed derived from ``seed``."""
        return replace(self.synth, rng_seed=derive_seed(self.seed, "synth"))

    def seeds(self) -> dict[str, int]:
        """Every sub-seed the run draws, keyed by purpose."""
        out = {"synth": derive_seed(self.seed, "synth")}
        for task in self.tasks:
            # one seed per task: both classifiers see the same examples and folds
            out[f"task{task}"] = derive_seed(self.seed, f"task{task}")
        return out

    def validate(self) -> None:
        if not self.tasks or any(t not in range(1, 6) for t in self.tasks):
            raise ConfigError(f"tasks must be a non-empty subset of 1..5, got {self.tasks}")
        if not self.classifiers or any(c not in CLASSIFIER_TAGS for c in self.classifiers):
            raise ConfigError(f"classifiers must be a subset of {CLASSIFIER_TAGS}")
        if len(set(self.tasks)) != len(self.tasks) or len(set(self.classifiers)) != len(self.classifiers):
            raise ConfigError("tasks and classifiers must not repeat")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        t = self.training
        if t.batch_size < 1 or t.max_epochs < 1 or t.patience < 0 or t.svm_c <= 0:
            raise ConfigError("invalid training parameters")
        if self.jobs < 1:
            raise ConfigError("jobs must be >= 1")
        try:
            self.bandpass.validate()
            if self.dataset == "synth":
                self.synth.validate()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc


def _parse_bool(text: str) -> bool:
    low = text.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _convert(kind, text: str):
    if kind is bool or kind == "bool":
        return _parse_bool(text)
    if kind is int or kind == "int":
        return int(text)
    if kind is float or kind == "float":
        return float(text)
    return text


_SECTIONS = {"synth": SynthParams, "bandpass": BandpassSpec, "training": TrainingParams}
_TOP_SCALARS = {
    "dataset": str, "seed": int, "out": str, "run_id": str,
    "group_by_trial": bool, "reject_artifacts": bool, "permute_labels": bool, "jobs": int,
}


def _field_types(cls) -> dict[str, str]:
    return {f.name: f.type for f in fields(cls)}


def parse_config(text: str) -> RunConfig:
    top: dict = {}
    sections: dict[str, dict] = {name: {} for name in _SECTIONS}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        try:
            if "." in key:
                section, name = key.split(".", 1)
                if section not in _SECTIONS:
                    raise ConfigError(f"line {lineno}: unknown key {key!r}")
                types = _field_types(_SECTIONS[section])
                types.pop("rng_seed", None)  # derived from the master seed
                if name not in types:
                    raise ConfigError(f"line {lineno}: unknown key {key!r}")
                sections[section][name] = _convert(types[name], value)
            elif key == "tasks":
                top["tasks"] = tuple(int(v) for v in value.split(",") if v.strip())
            elif key == "classifiers":
                top["classifiers"] = tuple(v.strip() for v in value.split(",") if v.strip())
            elif key in _TOP_SCALARS:
                top[key] = _convert(_TOP_SCALARS[key], value)
            else:
                raise ConfigError(f"line {lineno}: unknown key {key!r}")
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: bad value for {key!r}: {exc}") from exc
    cfg = RunConfig(
        synth=SynthParams(**sections["synth"]),
        bandpass=BandpassSpec(**sections["bandpass"]),
        training=TrainingParams(**sections["training"]),
        **top,
    )
    return cfg


def load_config(path: str | Path) -> RunConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text)


def _fmt(v, kind=None) -> str:
    if kind in (float, "float"):
        v = float(v)
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ",".join(str(x) for x in v)
    return repr(v) if isinstance(v, float) else str(v)


def dump_config(cfg: RunConfig) -> str:
    """Serialize every resolved field; ``parse_config`` reads it back unchanged."""
    lines = []
    for f in fields(RunConfig):
        value = getattr(cfg, f.name)
        if f.name in _SECTIONS:
            for sub in fields(value):
                if sub.name == "rng_seed":
                    continue
                lines.append(f"{f.name}.{sub.name} = {_fmt(getattr(value, sub.name), sub.type)}")
        else:
            lines.append(f"{f.name} = {_fmt(value)}")
    return "\n".join(lines) + "\n"


def with_overrides(cfg: RunConfig, **changes) -> RunConfig:
    return replace(cfg, **{k: v for k, v in changes.items() if v is not None})
