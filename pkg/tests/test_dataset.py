import itertools
import json

import numpy as np
import pytest

from ecogcrit.dataset import (
    Electrode,
    EsmEvent,
    Label,
    Outcome,
    derive_labels,
    load_dataset,
    write_dataset,
)
from ecogcrit.errors import DatasetLoadError, FormatError, ValidationError

from conftest import make_minimal_dataset

ELECTRODES = [Electrode(i, "S", 0) for i in (1, 2, 3)]


def test_single_arrest_pair_marks_both_critical():
    labels = derive_labels([EsmEvent(1, 2, Outcome.ARREST)], ELECTRODES)
    assert labels == {1: Label.CRITICAL, 2: Label.CRITICAL, 3: Label.UNTESTED}


def test_no_arrest_pair_marks_non_critical():
    labels = derive_labels([EsmEvent(1, 2, Outcome.NO_ARREST)], ELECTRODES)
    assert labels == {1: Label.NON_CRITICAL, 2: Label.NON_CRITICAL, 3: Label.UNTESTED}


def test_arrest_dominates_in_any_order():
    events = [EsmEvent(1, 2, Outcome.ARREST), EsmEvent(2, 3, Outcome.NO_ARREST)]
    results = [derive_labels(list(p), ELECTRODES) for p in itertools.permutations(events)]
    for labels in results:
        assert labels == {1: Label.CRITICAL, 2: Label.CRITICAL, 3: Label.NON_CRITICAL}


def test_unknown_pair_member_rejected():
    with pytest.raises(ValidationError):
        derive_labels([EsmEvent(1, 9, Outcome.ARREST)], ELECTRODES)


def test_pair_members_must_differ():
    with pytest.raises(ValidationError):
        EsmEvent(2, 2, Outcome.ARREST)


def test_labels_permutation_invariant_and_complete(rng):
    electrodes = [Electrode(i, "S", 0) for i in range(12)]
    events = []
    for _ in range(15):
        a, b = rng.choice(12, size=2, replace=False)
        events.append(EsmEvent(int(a), int(b), Outcome.ARREST if rng.random() < 0.3 else Outcome.NO_ARREST))
    ref = derive_labels(events, electrodes)
    assert len(ref) == len(electrodes)
    for _ in range(10):
        perm = [events[i] for i in rng.permutation(len(events))]
        assert derive_labels(perm, electrodes) == ref


def test_region_out_of_range():
    with pytest.raises(ValidationError):
        Electrode(0, "S", 26)


def _same(a, b):
    assert a.sample_rate == b.sample_rate and a.tasks == b.tasks
    assert len(a.subjects) == len(b.subjects)
    for sa, sb in zip(a.subjects, b.subjects):
        assert sa.id == sb.id
        assert sa.electrodes == sb.electrodes
        assert sa.esm == sb.esm
        assert dict(sa.events) == dict(sb.events)
        for task in sa.recordings:
            np.testing.assert_array_equal(sa.recordings[task].samples, sb.recordings[task].samples)


def test_minimal_round_trip(tmp_path, minimal_dataset):
    write_dataset(minimal_dataset, tmp_path / "ds")
    loaded = load_dataset(tmp_path / "ds")
    assert loaded.n_electrode_trials == 8
    _same(minimal_dataset, loaded)
    # write -> load -> write is byte-stable
    write_dataset(loaded, tmp_path / "ds2")
    for name in ("manifest.json", "P01/AR.f32", "P01/AR.events.csv", "P01/esm.csv"):
        assert (tmp_path / "ds" / name).read_bytes() == (tmp_path / "ds2" / name).read_bytes()


def test_labels_drop_invalid(tmp_path):
    ds = make_minimal_dataset()
    s = ds.subjects[0]
    assert s.labels() == {0: Label.CRITICAL, 1: Label.CRITICAL, 2: Label.NON_CRITICAL, 3: Label.UNTESTED}


def test_truncated_binary_is_format_error(tmp_path):
    root = write_dataset(make_minimal_dataset(), tmp_path / "ds")
    f = root / "P01" / "AR.f32"
    data = np.fromfile(f, dtype="<f4")
    data[:-1].tofile(f)
    with pytest.raises(FormatError):
        load_dataset(root)


def test_declared_shape_mismatch(tmp_path):
    root = write_dataset(make_minimal_dataset(), tmp_path / "ds")
    m = json.loads((root / "manifest.json").read_text())
    m["subjects"][0]["recordings"]["AR"]["shape"] = [4, 999]
    (root / "manifest.json").write_text(json.dumps(m))
    with pytest.raises(FormatError):
        load_dataset(root)


def test_missing_file_names_path(tmp_path):
    root = write_dataset(make_minimal_dataset(), tmp_path / "ds")
    (root / "P01" / "AR.events.csv").unlink()
    with pytest.raises(DatasetLoadError, match="AR.events.csv"):
        load_dataset(root)


def test_missing_manifest(tmp_path):
    with pytest.raises(DatasetLoadError, match="manifest.json"):
        load_dataset(tmp_path)


def test_events_task_mismatch(tmp_path):
    root = write_dataset(make_minimal_dataset(), tmp_path / "ds")
    p = root / "P01" / "AR.events.csv"
    p.write_text(p.read_text().replace(",AR,", ",PN,"))
    with pytest.raises(ValidationError):
        load_dataset(root)


def test_esm_references_unknown_electrode(tmp_path):
    root = write_dataset(make_minimal_dataset(), tmp_path / "ds")
    (root / "P01" / "esm.csv").write_text("electrode_a,electrode_b,outcome\n0,17,arrest\n")
    with pytest.raises(ValidationError):
        load_dataset(root)


def test_region_index_validated_on_load(tmp_path):
    root = write_dataset(make_minimal_dataset(), tmp_path / "ds")
    m = json.loads((root / "manifest.json").read_text())
    m["subjects"][0]["electrodes"][0]["region_index"] = 30
    (root / "manifest.json").write_text(json.dumps(m))
    with pytest.raises(ValidationError):
        load_dataset(root)


def test_epoch_must_fit(tmp_path):
    root = write_dataset(make_minimal_dataset(), tmp_path / "ds")
    p = root / "P01" / "AR.events.csv"
    p.write_text("trial_id,task,word,onset_sample\n0,AR,w0,100\n")
    with pytest.raises(ValidationError):
        load_dataset(root)
