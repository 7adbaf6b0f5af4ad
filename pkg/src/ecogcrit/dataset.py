"""On-disk dataset format, loading/validation and ESM label derivation.

Layout of a dataset directory::

    manifest.json
    <subject>/<task>.f32            row-major little-endian float32, [L x T]
    <subject>/<task>.events.csv     trial_id,task,word,onset_sample
    <subject>/esm.csv               electrode_a,electrode_b,outcome

``manifest.json`` holds the sample rate, task list, optional region names and
one entry per subject with its electrode table and file paths (relative to
the dataset root).
"""

from __future__ import annotations

import csv
import enum
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from .errors import DatasetLoadError, FormatError, ValidationError

TASKS = ("AR", "AN", "SC", "WR", "PN")
N_REGIONS = 26
FORMAT_VERSION = 1

EVENTS_HEADER = ["trial_id", "task", "word", "onset_sample"]
ESM_HEADER = ["electrode_a", "electrode_b", "outcome"]


class Outcome(str, enum.Enum):
    ARREST = "arrest"
    NO_ARREST = "no_arrest"


class Label(str, enum.Enum):
    CRITICAL = "critical"
    NON_CRITICAL = "non_critical"
    UNTESTED = "untested"


@dataclass(frozen=True)
class Electrode:
    id: int
    subject: str
    region_index: int
    valid: bool = True

    def __post_init__(self):
        if not 0 <= self.region_index < N_REGIONS:
            raise ValidationError(
                f"electrode {self.subject}:{self.id} region_index {self.region_index} "
                f"outside [0, {N_REGIONS - 1}]"
            )


@dataclass(frozen=True)
class EsmEvent:
    a: int
    b: int
    outcome: Outcome

    def __post_init__(self):
        if self.a == self.b:
            raise ValidationError(f"ESM pair must reference two distinct electrodes, got ({self.a}, {self.b})")


@dataclass(frozen=True)
class Trial:
    trial_id: int
    task: str
    word: str
    onset_sample: int


@dataclass(frozen=True, eq=False)
class Recording:
    subject: str
    task: str
    samples: np.ndarray  # [L x T] float32, rows follow the subject's electrode table
    sample_rate: float

    def __post_init__(self):
        if self.samples.ndim != 2 or self.samples.shape[0] < 2 or self.samples.shape[1] < 1:
            raise ValidationError(
                f"recording {self.subject}/{self.task} must be [L>=2 x T>0], got {self.samples.shape}"
            )
        if not self.sample_rate > 0:
            raise ValidationError(f"sample_rate must be positive, got {self.sample_rate}")
        if not np.all(np.isfinite(self.samples)):
            raise ValidationError(f"recording {self.subject}/{self.task} contains non-finite values")


@dataclass(frozen=True, eq=False)
class Subject:
    id: str
    electrodes: tuple[Electrode, ...]
    recordings: Mapping[str, Recording]
    events: Mapping[str, tuple[Trial, ...]]
    esm: tuple[EsmEvent, ...]

    @property
    def valid_electrodes(self) -> tuple[Electrode, ...]:
        return tuple(e for e in self.electrodes if e.valid)

    def valid_rows(self) -> np.ndarray:
        """Row indices (into recordings) of artifact-free electrodes."""
        return np.array([i for i, e in enumerate(self.electrodes) if e.valid], dtype=int)

    def labels(self) -> dict[int, Label]:
        """Labels for valid electrodes; invalid electrodes are dropped."""
        full = derive_labels(self.esm, self.electrodes)
        return {e.id: full[e.id] for e in self.valid_electrodes}

    @property
    def trials(self) -> list[Trial]:
        out = []
        for task in self.events:
            out.extend(self.events[task])
        return out


@dataclass(frozen=True, eq=False)
class Dataset:
    sample_rate: float
    tasks: tuple[str, ...]
    subjects: tuple[Subject, ...]
    region_names: tuple[str, ...] | None = None
    root: Path | None = field(default=None, compare=False)

    def subject(self, subject_id: str) -> Subject:
        for s in self.subjects:
            if s.id == subject_id:
                return s
        raise ValidationError(f"unknown subject {subject_id!r}")

    @property
    def n_electrode_trials(self) -> int:
        """Number of (valid electrode, trial) pairs."""
        return sum(len(s.valid_electrodes) * len(s.trials) for s in self.subjects)


def derive_labels(esm_events: Iterable[EsmEvent], electrodes: Iterable[Electrode]) -> dict[int, Label]:
    """Map each electrode id to its ESM-derived label.

    Any electrode that appears in at least one arrest pair is critical, one
    that appears only in no-arrest pairs is non-critical, and one that never
    appears is untested. The result does not depend on event order.
    """
    ids = [e.id for e in electrodes]
    known = set(ids)
    arrest: set[int] = set()
    tested: set[int] = set()
    for ev in esm_events:
        for member in (ev.a, ev.b):
            if member not in known:
                raise ValidationError(f"ESM pair ({ev.a}, {ev.b}) references unknown electrode {member}")
        tested.update((ev.a, ev.b))
        if Outcome(ev.outcome) is Outcome.ARREST:
            arrest.update((ev.a, ev.b))
    labels = {}
    for i in ids:
        if i in arrest:
            labels[i] = Label.CRITICAL
        elif i in tested:
            labels[i] = Label.NON_CRITICAL
        else:
            labels[i] = Label.UNTESTED
    return labels


# ---------------------------------------------------------------- loading


def _read_json(path: Path) -> dict:
    if not path.is_file():
        raise DatasetLoadError(path)
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid JSON ({exc})") from exc


def _read_csv(path: Path, header: list[str]) -> list[dict[str, str]]:
    if not path.is_file():
        raise DatasetLoadError(path)
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != header:
            raise FormatError(f"{path}: expected header {','.join(header)}, got {reader.fieldnames}")
        return list(reader)


def _read_f32(path: Path, shape: tuple[int, int]) -> np.ndarray:
    if not path.is_file():
        raise DatasetLoadError(path)
    data = np.fromfile(path, dtype="<f4")
    expected = shape[0] * shape[1]
    if data.size != expected:
        raise FormatError(
            f"{path}: declared shape {shape[0]}x{shape[1]} needs {expected} floats, file holds {data.size}"
        )
    return data.reshape(shape).astype(np.float32, copy=False)


def _parse_int(value: str, what: str, path: Path) -> int:
    try:
        return int(value)
    except (TypeError, ValueError) as exc:
        raise FormatError(f"{path}: {what} is not an integer: {value!r}") from exc


def _check_events(trials: list[Trial], task: str, n_samples: int, fs: float, path: Path) -> None:
    pre = math.ceil(0.25 * fs)
    post = math.ceil(0.5 * fs)
    bad = [t.trial_id for t in trials if t.onset_sample - pre < 0 or t.onset_sample + post > n_samples]
    if bad:
        raise ValidationError(f"{path}: epoch window does not fit the recording for trial(s) {bad}")
    for t in trials:
        if t.task != task:
            raise ValidationError(f"{path}: trial {t.trial_id} declares task {t.task!r}, file is for {task!r}")


def _load_subject(root: Path, entry: dict, fs: float, tasks: tuple[str, ...]) -> Subject:
    try:
        sid = str(entry["id"])
        electrode_rows = entry["electrodes"]
        recordings_meta = entry["recordings"]
    except KeyError as exc:
        raise ValidationError(f"manifest subject entry missing key {exc}") from exc
    if not sid:
        raise ValidationError("subject id must be non-empty")

    electrodes = tuple(
        Electrode(int(row["id"]), sid, int(row["region_index"]), bool(row.get("valid", True)))
        for row in electrode_rows
    )
    ids = [e.id for e in electrodes]
    if len(set(ids)) != len(ids):
        raise ValidationError(f"subject {sid}: duplicate electrode ids")

    recordings: dict[str, Recording] = {}
    events: dict[str, tuple[Trial, ...]] = {}
    seen_trials: set[int] = set()
    for task, meta in recordings_meta.items():
        if task not in tasks:
            raise ValidationError(f"subject {sid}: recording for undeclared task {task!r}")
        shape = tuple(int(x) for x in meta["shape"])
        if len(shape) != 2 or shape[0] != len(electrodes):
            raise FormatError(
                f"subject {sid}/{task}: declared shape {shape} does not match {len(electrodes)} electrodes"
            )
        samples = _read_f32(root / meta["path"], shape)
        recordings[task] = Recording(sid, task, samples, fs)

        ev_path = root / meta["events"]
        rows = _read_csv(ev_path, EVENTS_HEADER)
        trials = tuple(
            Trial(
                _parse_int(r["trial_id"], "trial_id", ev_path),
                r["task"],
                r["word"],
                _parse_int(r["onset_sample"], "onset_sample", ev_path),
            )
            for r in rows
        )
        _check_events(list(trials), task, shape[1], fs, ev_path)
        for t in trials:
            if t.trial_id in seen_trials:
                raise ValidationError(f"subject {sid}: duplicate trial_id {t.trial_id}")
            seen_trials.add(t.trial_id)
        events[task] = trials

    esm: tuple[EsmEvent, ...] = ()
    if entry.get("esm"):
        esm_path = root / entry["esm"]
        rows = _read_csv(esm_path, ESM_HEADER)
        try:
            esm = tuple(
                EsmEvent(
                    _parse_int(r["electrode_a"], "electrode_a", esm_path),
                    _parse_int(r["electrode_b"], "electrode_b", esm_path),
                    Outcome(r["outcome"]),
                )
                for r in rows
            )
        except ValueError as exc:
            if isinstance(exc, ValidationError):
                raise
            raise ValidationError(f"{esm_path}: {exc}") from exc
    subject = Subject(sid, electrodes, recordings, events, esm)
    derive_labels(esm, electrodes)  # validates pair references
    return subject


def load_dataset(root) -> Dataset:
    """Load and validate a dataset directory."""
    root = Path(root)
    manifest = _read_json(root / "manifest.json")
    try:
        fs = float(manifest["sample_rate"])
        tasks = tuple(manifest["tasks"])
        subject_entries = manifest["subjects"]
    except KeyError as exc:
        raise ValidationError(f"manifest missing key {exc}") from exc
    if not fs > 0:
        raise ValidationError(f"sample_rate must be positive, got {fs}")
    unknown = [t for t in tasks if t not in TASKS]
    if unknown:
        raise ValidationError(f"unknown task(s) {unknown}; allowed {list(TASKS)}")

    subjects = tuple(_load_subject(root, entry, fs, tasks) for entry in subject_entries)
    ids = [s.id for s in subjects]
    if len(set(ids)) != len(ids):
        raise ValidationError("duplicate subject ids in manifest")
    names = manifest.get("region_names")
    if names is not None and len(names) != N_REGIONS:
        raise ValidationError(f"region_names must list {N_REGIONS} names")
    return Dataset(fs, tasks, subjects, tuple(names) if names else None, root)


# ---------------------------------------------------------------- writing


def write_dataset(dataset: Dataset, root) -> Path:
    """Write ``dataset`` in the directory format read by :func:`load_dataset`."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    entries = []
    for s in dataset.subjects:
        sub_dir = root / s.id
        sub_dir.mkdir(exist_ok=True)
        rec_meta = {}
        for task, rec in s.recordings.items():
            sig_rel = f"{s.id}/{task}.f32"
            ev_rel = f"{s.id}/{task}.events.csv"
            np.ascontiguousarray(rec.samples, dtype="<f4").tofile(root / sig_rel)
            with (root / ev_rel).open("w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(EVENTS_HEADER)
                for t in s.events.get(task, ()):
                    w.writerow([t.trial_id, t.task, t.word, t.onset_sample])
            rec_meta[task] = {"path": sig_rel, "events": ev_rel, "shape": list(rec.samples.shape)}
        esm_rel = f"{s.id}/esm.csv"
        with (root / esm_rel).open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(ESM_HEADER)
            for ev in s.esm:
                w.writerow([ev.a, ev.b, Outcome(ev.outcome).value])
        entries.append(
            {
                "id": s.id,
                "electrodes": [
                    {"id": e.id, "region_index": e.region_index, "valid": e.valid} for e in s.electrodes
                ],
                "recordings": rec_meta,
                "esm": esm_rel,
            }
        )
    manifest = {
        "format_version": FORMAT_VERSION,
        "sample_rate": dataset.sample_rate,
        "tasks": list(dataset.tasks),
        "subjects": entries,
    }
    if dataset.region_names:
        manifest["region_names"] = list(dataset.region_names)
    (root / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return root
