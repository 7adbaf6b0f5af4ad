import json

import numpy as np
import pytest

from ecogcrit.dataset import load_dataset
from ecogcrit.errors import ConfigurationError
from ecogcrit.synthgen import LANGUAGE_REGIONS, SynthConfig, build_dataset, generate_dataset

SMALL = dict(n_subjects=2, electrodes_per_subject=16, n_words=2, seed=3)


def _files(root):
    return {p.relative_to(root): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def test_deterministic_bytes(tmp_path):
    a = generate_dataset(SynthConfig(**SMALL), tmp_path / "a")
    b = generate_dataset(SynthConfig(**SMALL), tmp_path / "b", threads=2)
    assert _files(a) == _files(b)


def test_seed_changes_output(tmp_path):
    a = generate_dataset(SynthConfig(**SMALL), tmp_path / "a")
    b = generate_dataset(SynthConfig(**{**SMALL, "seed": 4}), tmp_path / "b")
    assert _files(a)[a.joinpath("S01/AR.f32").relative_to(a)] != _files(b)[b.joinpath("S01/AR.f32").relative_to(b)]


@pytest.mark.parametrize("effect", [0.0, 2.0])
def test_loads_and_labels_match_planted(tmp_path, effect):
    root = generate_dataset(SynthConfig(**{**SMALL, "effect_size": effect}), tmp_path / "ds")
    ds = load_dataset(root)
    planted = json.loads((root / "synth.json").read_text())["planted_labels"]
    for s in ds.subjects:
        derived = {str(e): lab.value for e, lab in s.labels().items()}
        assert derived == planted[s.id]
    assert ds.subjects[0].recordings["AR"].samples.shape[0] == 16


def test_trial_layout_matches_task_repeats():
    cfg = SynthConfig(**SMALL)
    ds, _ = build_dataset(cfg)
    s = ds.subjects[0]
    assert sum(len(t) for t in s.events.values()) == cfg.trials_per_subject == 16
    assert SynthConfig(n_words=50).trials_per_subject == 400


def test_critical_prevalence_and_regions():
    cfg = SynthConfig(n_subjects=4, electrodes_per_subject=64, n_words=1, effect_size=5.0)
    ds, planted = build_dataset(cfg)
    labs = [lab for p in planted.values() for lab in p.values() if lab != "untested"]
    frac = np.mean([lab == "critical" for lab in labs])
    assert 0.1 < frac < 0.3
    regions = {(s.id, e.id): e.region_index for s in ds.subjects for e in s.electrodes}
    crit = [regions[(sid, e)] for sid, p in planted.items() for e, lab in p.items() if lab == "critical"]
    assert np.mean([r in LANGUAGE_REGIONS for r in crit]) > 0.9


def test_burst_is_in_high_gamma_band():
    cfg = SynthConfig(n_subjects=1, electrodes_per_subject=16, n_words=4, effect_size=5.0, silent_fraction=0.0, seed=1)
    ds, planted = build_dataset(cfg)
    s = ds.subjects[0]
    rec = s.recordings["AR"].samples.astype(float)
    crit = [e for e, lab in planted[s.id].items() if lab == "critical"]
    calm = [e for e, lab in planted[s.id].items() if lab == "non_critical"]
    f = np.fft.rfftfreq(rec.shape[1], 1 / cfg.sample_rate)
    band = (f >= 70) & (f <= 150)

    def band_power(rows):
        spec = np.abs(np.fft.rfft(rec[rows], axis=1)) ** 2
        return spec[:, band].sum(axis=1).mean()

    assert band_power(crit) > 2 * band_power(calm)


def test_invalid_configs():
    with pytest.raises(ConfigurationError):
        SynthConfig(critical_fraction=1.0)
    with pytest.raises(ConfigurationError):
        SynthConfig(effect_size=-1)
    with pytest.raises(ConfigurationError):
        SynthConfig(trial_spacing_s=0.5)
    with pytest.raises(ConfigurationError):
        SynthConfig.from_dict({"n_subject": 3})
