"""Synthetic datasets with planted critical electrodes.

Critical electrodes get a high-gamma burst after each onset (on a random
subset of trials), part of which is a latent source shared by all critical
electrodes of the subject, and draw their region from a small set of
"language" regions with a probability that grows with the effect size. A
fraction of critical electrodes is "silent" (no functional signature), so
that region and connectivity carry complementary information. Everything
else is 1/f background noise, except a few task-responsive non-critical
"decoy" electrodes that carry a weaker, independent burst on every trial.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .dataset import (
    N_REGIONS,
    TASKS,
    Dataset,
    Electrode,
    EsmEvent,
    Outcome,
    Recording,
    Subject,
    Trial,
    write_dataset,
)
from .errors import ConfigurationError

# repetitions of each word per task (AN and SC once, the rest twice)
TASK_REPEATS = {"AR": 2, "AN": 1, "SC": 1, "WR": 2, "PN": 2}
LANGUAGE_REGIONS = (3, 7, 11, 14, 17, 20, 22, 24)


@dataclass(frozen=True)
class SynthConfig:
    n_subjects: int = 16
    electrodes_per_subject: int = 64
    critical_fraction: float = 0.17
    n_words: int = 50  # 50 words -> 400 trials per subject
    sample_rate: float = 512.0
    effect_size: float = 5.0
    noise_std: float = 1.0
    seed: int = 0
    tasks: tuple[str, ...] = TASKS
    untested_fraction: float = 0.1
    invalid_per_subject: int = 1
    language_regions: tuple[int, ...] = LANGUAGE_REGIONS
    engage_prob: float = 0.9
    silent_fraction: float = 0.2
    shared_weight: float = 0.6
    decoy_fraction: float = 0.15
    decoy_gain: float = 0.5
    region_signal: bool = True
    connectivity_signal: bool = True
    trial_spacing_s: float = 1.5
    burst_center_s: float = 0.15
    burst_width_s: float = 0.08

    def __post_init__(self):
        if not 0.0 < self.critical_fraction < 1.0:
            raise ConfigurationError("critical_fraction must lie in (0, 1)")
        if self.effect_size < 0:
            raise ConfigurationError("effect_size must be >= 0")
        if self.noise_std <= 0:
            raise ConfigurationError("noise_std must be > 0")
        if self.n_subjects < 1 or self.electrodes_per_subject < 4 or self.n_words < 1:
            raise ConfigurationError("need >= 1 subject, >= 4 electrodes and >= 1 word")
        unknown = [t for t in self.tasks if t not in TASKS]
        if unknown:
            raise ConfigurationError(f"unknown tasks {unknown}")
        if any(not 0 <= r < N_REGIONS for r in self.language_regions):
            raise ConfigurationError("language_regions must be valid region indices")
        if self.trial_spacing_s < 0.75:
            raise ConfigurationError("trial_spacing_s shorter than one epoch: windows would not fit")
        if self.burst_center_s + 4 * self.burst_width_s >= self.trial_spacing_s:
            raise ConfigurationError("burst does not fit between consecutive onsets")
        for name in ("engage_prob", "shared_weight", "silent_fraction", "decoy_fraction", "untested_fraction"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ConfigurationError(f"{name} must lie in [0, 1]")
        object.__setattr__(self, "tasks", tuple(self.tasks))
        object.__setattr__(self, "language_regions", tuple(int(r) for r in self.language_regions))

    @classmethod
    def from_dict(cls, d: dict) -> "SynthConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigurationError(f"unknown synth config keys {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["tasks"] = list(self.tasks)
        d["language_regions"] = list(self.language_regions)
        return d

    @property
    def language_prob(self) -> float:
        """Probability that a critical electrode sits in a language region."""
        if not self.region_signal:
            return 0.0
        return 1.0 - math.exp(-self.effect_size / self.noise_std)

    @property
    def trials_per_subject(self) -> int:
        return self.n_words * sum(TASK_REPEATS[t] for t in self.tasks)


def pink_noise(rng: np.random.Generator, shape, sample_rate: float) -> np.ndarray:
    """Gaussian noise with power spectrum ~ 1/f, unit variance per row."""
    n = shape[-1]
    white = rng.standard_normal(shape)
    spec = np.fft.rfft(white, axis=-1)
    f = np.fft.rfftfreq(n, d=1.0 / sample_rate)
    scale = np.zeros_like(f)
    scale[1:] = 1.0 / np.sqrt(f[1:])
    x = np.fft.irfft(spec * scale, n=n, axis=-1)
    x -= x.mean(axis=-1, keepdims=True)
    return x / x.std(axis=-1, keepdims=True)


def band_noise(rng: np.random.Generator, n_rows: int, n: int, sample_rate: float, band=(70.0, 150.0)) -> np.ndarray:
    """Unit-variance noise restricted to ``band``."""
    white = rng.standard_normal((n_rows, n))
    spec = np.fft.rfft(white, axis=-1)
    f = np.fft.rfftfreq(n, d=1.0 / sample_rate)
    spec[:, (f < band[0]) | (f > band[1])] = 0.0
    x = np.fft.irfft(spec, n=n, axis=-1)
    return x / x.std(axis=-1, keepdims=True)


def _pairs(ids: list[int]) -> list[tuple[int, int]]:
    if len(ids) < 2:
        return []
    out = [(ids[k], ids[k + 1]) for k in range(0, len(ids) - 1, 2)]
    if len(ids) % 2:
        out.append((ids[-1], ids[0]))
    return out


def _subject(cfg: SynthConfig, index: int) -> tuple[Subject, dict[int, str]]:
    rng = np.random.default_rng([cfg.seed, index])
    sid = f"S{index + 1:02d}"
    L = cfg.electrodes_per_subject
    fs = cfg.sample_rate

    order = rng.permutation(L)
    invalid = set(order[: cfg.invalid_per_subject].tolist())
    valid_ids = [int(i) for i in order[cfg.invalid_per_subject :]]
    n_untested = int(round(cfg.untested_fraction * len(valid_ids)))
    untested = valid_ids[:n_untested]
    tested = valid_ids[n_untested:]
    n_crit = max(2, int(round(cfg.critical_fraction * len(tested))))
    if n_crit >= len(tested):
        raise ConfigurationError(f"subject {sid}: not enough tested electrodes for {n_crit} criticals")
    critical = sorted(tested[:n_crit])
    non_critical = sorted(tested[n_crit:])
    n_decoy = int(round(cfg.decoy_fraction * len(non_critical)))
    decoys = set(rng.permutation(non_critical)[:n_decoy].tolist())
    crit_set = set(critical)
    n_silent = int(round(cfg.silent_fraction * n_crit))
    responsive = sorted(rng.permutation(critical)[n_silent:].tolist())

    regions = np.empty(L, dtype=int)
    p_lang = cfg.language_prob
    for e in range(L):
        if e in crit_set and rng.random() < p_lang:
            regions[e] = rng.choice(cfg.language_regions)
        else:
            regions[e] = rng.integers(N_REGIONS)
    electrodes = tuple(Electrode(e, sid, int(regions[e]), e not in invalid) for e in range(L))

    esm = [EsmEvent(a, b, Outcome.ARREST) for a, b in _pairs([int(i) for i in rng.permutation(critical)])]
    esm += [EsmEvent(a, b, Outcome.NO_ARREST) for a, b in _pairs([int(i) for i in rng.permutation(non_critical)])]
    # a few mixed no-arrest pairs; arrest elsewhere keeps the critical member critical
    for a, b in zip(critical[:2], non_critical[:2]):
        esm.append(EsmEvent(int(a), int(b), Outcome.NO_ARREST))
    esm = [esm[i] for i in rng.permutation(len(esm))]

    spacing = int(round(cfg.trial_spacing_s * fs))
    n_pre = math.ceil(0.25 * fs)
    center = int(round(cfg.burst_center_s * fs))
    half = int(math.ceil(4 * cfg.burst_width_s * fs))
    t_rel = np.arange(-half, half + 1)
    window = np.exp(-0.5 * (t_rel / (cfg.burst_width_s * fs)) ** 2)
    burst_len = t_rel.size

    recordings, events = {}, {}
    trial_id = 0
    crit_rows = np.array(responsive, dtype=int)
    decoy_rows = np.array(sorted(decoys), dtype=int)
    for task in cfg.tasks:
        n_trials = cfg.n_words * TASK_REPEATS[task]
        T = (n_trials + 1) * spacing + n_pre
        onsets = (np.arange(1, n_trials + 1) * spacing).astype(int)
        x = pink_noise(rng, (L, T), fs) * cfg.noise_std
        if invalid:
            bad = np.array(sorted(invalid))
            tt = np.arange(T) / fs
            x[bad] += 20.0 * cfg.noise_std * np.sin(2 * np.pi * 60.0 * tt)
        trials = []
        for k, onset in enumerate(onsets):
            word = f"w{k % cfg.n_words:02d}"
            trials.append(Trial(trial_id, task, word, int(onset)))
            trial_id += 1
            if cfg.effect_size == 0:
                continue
            sl = slice(onset + center - half, onset + center + half + 1)
            if crit_rows.size:
                engaged = crit_rows[rng.random(crit_rows.size) < cfg.engage_prob]
                shared = band_noise(rng, 1, burst_len, fs)[0]
                own = band_noise(rng, crit_rows.size, burst_len, fs)
                if engaged.size:
                    sel = np.isin(crit_rows, engaged)
                    w = cfg.shared_weight if cfg.connectivity_signal else 0.0
                    src = math.sqrt(w) * shared[None, :] + math.sqrt(1.0 - w) * own[sel]
                    x[engaged, sl] += cfg.effect_size * src * window
            if decoy_rows.size:
                own = band_noise(rng, decoy_rows.size, burst_len, fs)
                x[decoy_rows, sl] += cfg.decoy_gain * cfg.effect_size * own * window
        recordings[task] = Recording(sid, task, x.astype(np.float32), fs)
        events[task] = tuple(trials)
    untested_set = set(untested)
    planted = {}
    for e in valid_ids:
        planted[e] = "untested" if e in untested_set else ("critical" if e in crit_set else "non_critical")
    return Subject(sid, electrodes, recordings, events, tuple(esm)), planted


def build_dataset(cfg: SynthConfig, threads: int = 1) -> tuple[Dataset, dict[str, dict[int, str]]]:
    """In-memory dataset plus the planted label of every valid electrode.

    Subjects draw from independent seeded streams, so ``threads`` never
    changes the output.
    """
    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        made = list(pool.map(lambda i: _subject(cfg, i), range(cfg.n_subjects)))
    subjects, planted = [], {}
    for s, p in made:
        subjects.append(s)
        planted[s.id] = p
    names = tuple(f"region_{r:02d}" for r in range(N_REGIONS))
    return Dataset(cfg.sample_rate, tuple(cfg.tasks), tuple(subjects), names), planted


def generate_dataset(cfg: SynthConfig, out_dir, threads: int = 1) -> Path:
    """Write a synthetic dataset directory; also records the generator config."""
    ds, planted = build_dataset(cfg, threads)
    out = write_dataset(ds, out_dir)
    meta = {
        "generator": cfg.to_dict(),
        "planted_labels": {s: {str(e): lab for e, lab in sorted(p.items())} for s, p in planted.items()},
    }
    (Path(out) / "synth.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return out
